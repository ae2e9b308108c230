use std::sync::Arc;

use certun_core::data::{random_partition, synth_blobs, DataView, Dataset};
use certun_core::experiment::{load_mnist_subset, DeskExperiment, ExperimentError};
use certun_core::method::Method;
use certun_core::nn::{load_checkpoint, NetworkSpec};
use certun_core::unlearn::{dp_sgd_group_train, Evaluator};

use crate::config::{DataSource, Model, RunConfig};
use crate::error::{CliError, Result};

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.source {
        DataSource::Mnist { .. } => {
            let dir = cfg.mnist_dir().expect("mnist source has a directory");
            Ok(load_mnist_subset(dir)?)
        }
        DataSource::Blobs {
            n,
            dim,
            classes,
            spread,
            seed,
        } => synth_blobs(*n, *dim, *classes, *spread, *seed)
            .map_err(|e| CliError::Config(e.to_string())),
    }
}

pub fn network(cfg: &RunConfig, data: &Dataset) -> Result<NetworkSpec> {
    Ok(match cfg.train.model {
        Model::MnistTiny => NetworkSpec::mnist_tiny(data.num_classes()),
        Model::CifarTiny => NetworkSpec::cifar_tiny(data.num_classes()),
        Model::Mlp { hidden } => {
            NetworkSpec::mlp(data.feature_shape().to_vec(), hidden, data.num_classes())
                .map_err(|e| CliError::Config(e.to_string()))?
        }
    })
}

/// The trained model to unlearn from: loaded from the configured
/// checkpoint, trained with group-DP SGD when `method` is the group-DP
/// baseline, or pretrained normally.
pub fn prepare(cfg: &RunConfig, data: &Dataset, method: Method) -> Result<DeskExperiment> {
    let options = cfg.desk_options();
    if let Some(path) = &cfg.train.checkpoint {
        let (spec, params) = load_checkpoint(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok(DeskExperiment::with_pretrained(
            data, spec, params, options,
        )?);
    }
    let spec = network(cfg, data)?;
    if method != Method::DpSgdGroup {
        return Ok(DeskExperiment::prepare_with_spec(data, spec, options)?);
    }
    if options.test_size == 0 || options.test_size >= data.len() {
        return Err(CliError::Config(format!(
            "test size {} out of {} examples",
            options.test_size,
            data.len()
        )));
    }
    let (train_idx, test_idx) = random_partition(data.len(), options.test_size, options.seed);
    let train_data = Arc::new(
        data.subset(&train_idx, "train")
            .map_err(ExperimentError::from)?,
    );
    let eval = Evaluator::new(spec.clone()).with_test(data.gather(&test_idx));
    let u = &cfg.unlearn;
    let (params, _) = dp_sgd_group_train(
        &spec,
        &DataView::whole(train_data),
        &cfg.dp_train(),
        u.group_size,
        u.clip_norm,
        &cfg.budget()?,
        Some(&eval),
    )
    .map_err(ExperimentError::from)?;
    Ok(DeskExperiment::with_pretrained(
        data, spec, params, options,
    )?)
}

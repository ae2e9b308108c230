//! Run configuration: flat `key = value` files with `[data]`, `[train]`,
//! `[unlearn]` and `[finetune]` sections.
//!
//! Every key has a default matching the desk MNIST experiment. Keys a method
//! does not use are ignored, so one file can serve a sweep over several
//! methods. [`RunConfig::effective`] writes back the fully resolved
//! configuration, calibrated noise included, so that re-running it
//! reproduces the run exactly.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use certun_core::accountant::{
    calibrate_model_clipping, calibrate_output_perturbation, group_dp_sigma, ClipRadii,
    PrivacyBudget, UnlearnSchedule,
};
use certun_core::experiment::{
    default_mnist_dir, desk_gradient_clipping_plan, DeskOptions, GradientClippingPlan,
};
use certun_core::method::Method;
use certun_core::nn::{LrSchedule, TrainConfig};
use certun_core::unlearn::{NoisyAccounting, PipelineConfig};

use crate::error::{CliError, Result};

const SECTIONS: [&str; 4] = ["data", "train", "unlearn", "finetune"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// IDX files `images-idx3-ubyte.gz` / `labels-idx1-ubyte.gz` in `dir`;
    /// the bundled 5,000-example MNIST subset when `dir` is unset.
    Mnist { dir: Option<PathBuf> },
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub test_size: usize,
    pub forget_fraction: f64,
    /// Seed of the test/train partition, the forget split and pretraining.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    MnistTiny,
    CifarTiny,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub model: Model,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    /// Start from this checkpoint instead of pretraining.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientPlan {
    /// Per-budget plan tuned for the desk MNIST experiment.
    Desk,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnSection {
    pub method: Method,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub accounting: NoisyAccounting,
    pub plan: GradientPlan,
    pub steps: Option<usize>,
    pub gamma: f64,
    pub lambda: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Per-step noise; calibrated when unset.
    pub sigma: Option<f64>,
    /// Initial noise; calibrated for output perturbation, 0 for model
    /// clipping when unset.
    pub sigma0: Option<f64>,
    pub group_size: u64,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSection {
    pub budget_epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub train: TrainSection,
    pub unlearn: UnlearnSection,
    pub finetune: FinetuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = DeskOptions::default();
        Self {
            data: DataSection {
                source: DataSource::Mnist { dir: None },
                test_size: desk.test_size,
                forget_fraction: desk.forget_fraction,
                seed: desk.seed,
            },
            train: TrainSection {
                model: Model::MnistTiny,
                epochs: desk.pretrain_epochs,
                batch_size: desk.batch_size,
                peak_lr: desk.peak_lr,
                weight_decay: desk.weight_decay,
                checkpoint: None,
            },
            unlearn: UnlearnSection {
                method: Method::GradientClipping,
                epsilon: 1.0,
                delta: 1e-5,
                seed: 0,
                accounting: NoisyAccounting::default(),
                plan: GradientPlan::Desk,
                steps: None,
                gamma: 1e-4,
                lambda: 0.0,
                c0: 0.01,
                c1: 0.0,
                c2: 0.0,
                sigma: None,
                sigma0: None,
                group_size: 1,
                clip_norm: 1.0,
            },
            finetune: FinetuneSection {
                budget_epochs: 5,
                batch_size: desk.batch_size,
                peak_lr: desk.peak_lr,
                weight_decay: desk.weight_decay,
            },
        }
    }
}

/// Keys of one section, consumed as they are read so leftovers can be
/// reported.
struct Section<'a> {
    name: &'a str,
    keys: BTreeMap<String, String>,
}

impl Section<'_> {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.keys.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("[{}] {key} = {v}: {e}", self.name))),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<()> {
        match self.keys.keys().next() {
            None => Ok(()),
            Some(k) => Err(CliError::Config(format!(
                "unknown key `{k}` in [{}]",
                self.name
            ))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(CliError::Config("keys must appear inside a section".into()));
                }
                continue;
            };
            if !SECTIONS.contains(&name) {
                return Err(CliError::Config(format!("unknown section [{name}]")));
            }
            let entry = sections.entry(name.to_string()).or_default();
            for (k, v) in props.iter() {
                if entry.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(CliError::Config(format!("duplicate key `{k}` in [{name}]")));
                }
            }
        }
        let mut section = |name: &'static str| Section {
            name,
            keys: sections.remove(name).unwrap_or_default(),
        };
        let d = Self::default();

        let mut s = section("data");
        let source = match s.get("source", "mnist".to_string())?.as_str() {
            "mnist" => DataSource::Mnist {
                dir: s.take("dir")?,
            },
            "blobs" => DataSource::Blobs {
                n: s.get("n", 1000)?,
                dim: s.get("dim", 20)?,
                classes: s.get("classes", 4)?,
                spread: s.get("spread", 0.3)?,
                seed: s.get("blob_seed", 0)?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "[data] source = {other}: expected mnist or blobs"
                )))
            }
        };
        let default_test = match source {
            DataSource::Blobs { n, .. } => n / 5,
            DataSource::Mnist { .. } => d.data.test_size,
        };
        let data = DataSection {
            source,
            test_size: s.get("test_size", default_test)?,
            forget_fraction: s.get("forget_fraction", d.data.forget_fraction)?,
            seed: s.get("seed", d.data.seed)?,
        };
        s.finish()?;

        let mut s = section("train");
        let model = match s.get("model", "mnist_tiny".to_string())?.as_str() {
            "mnist_tiny" => Model::MnistTiny,
            "cifar_tiny" => Model::CifarTiny,
            "mlp" => Model::Mlp {
                hidden: s.get("hidden", 16)?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "[train] model = {other}: expected mnist_tiny, cifar_tiny or mlp"
                )))
            }
        };
        let train = TrainSection {
            model,
            epochs: s.get("epochs", d.train.epochs)?,
            batch_size: s.get("batch_size", d.train.batch_size)?,
            peak_lr: s.get("peak_lr", d.train.peak_lr)?,
            weight_decay: s.get("weight_decay", d.train.weight_decay)?,
            checkpoint: s.take("checkpoint")?,
        };
        s.finish()?;

        let mut s = section("unlearn");
        let u = &d.unlearn;
        let method: Method = s
            .get("method", u.method.as_str().to_string())?
            .parse()
            .map_err(|e| {
                CliError::Config(format!("[unlearn] {e}; expected one of {}", method_list()))
            })?;
        let accounting = s.get("accounting", u.accounting.as_str().to_string())?;
        let accounting = NoisyAccounting::parse(&accounting).ok_or_else(|| {
            CliError::Config(format!(
                "[unlearn] accounting = {accounting}: expected round_up_epochs or steps"
            ))
        })?;
        let plan = match s.get("plan", "desk".to_string())?.as_str() {
            "desk" => GradientPlan::Desk,
            "explicit" => GradientPlan::Explicit,
            other => {
                return Err(CliError::Config(format!(
                    "[unlearn] plan = {other}: expected desk or explicit"
                )))
            }
        };
        let unlearn = UnlearnSection {
            method,
            epsilon: s.get("epsilon", u.epsilon)?,
            delta: s.get("delta", u.delta)?,
            seed: s.get("seed", u.seed)?,
            accounting,
            plan,
            steps: s.take("steps")?,
            gamma: s.get("gamma", u.gamma)?,
            lambda: s.get("lambda", u.lambda)?,
            c0: s.get("c0", u.c0)?,
            c1: s.get("c1", u.c1)?,
            c2: s.get("c2", u.c2)?,
            sigma: s.take("sigma")?,
            sigma0: s.take("sigma0")?,
            group_size: s.get("group_size", u.group_size)?,
            clip_norm: s.get("clip_norm", u.clip_norm)?,
        };
        s.finish()?;

        let mut s = section("finetune");
        let f = &d.finetune;
        let finetune = FinetuneSection {
            budget_epochs: s.get("budget_epochs", f.budget_epochs)?,
            batch_size: s.get("batch_size", f.batch_size)?,
            peak_lr: s.get("peak_lr", f.peak_lr)?,
            weight_decay: s.get("weight_decay", f.weight_decay)?,
        };
        s.finish()?;

        Ok(Self {
            data,
            train,
            unlearn,
            finetune,
        })
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        Ok(PrivacyBudget::new(
            self.unlearn.epsilon,
            self.unlearn.delta,
        )?)
    }

    pub fn desk_options(&self) -> DeskOptions {
        DeskOptions {
            test_size: self.data.test_size,
            forget_fraction: self.data.forget_fraction,
            pretrain_epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            peak_lr: self.train.peak_lr,
            weight_decay: self.train.weight_decay,
            seed: self.data.seed,
        }
    }

    pub fn mnist_dir(&self) -> Option<PathBuf> {
        match &self.data.source {
            DataSource::Mnist { dir } => Some(dir.clone().unwrap_or_else(default_mnist_dir)),
            DataSource::Blobs { .. } => None,
        }
    }

    /// The unlearning schedule for `method`, with any missing noise level
    /// calibrated, plus the section with those values filled in.
    pub fn resolve(&self, method: Method, budget_epochs: usize) -> Result<Resolved> {
        let budget = self.budget()?;
        let mut u = self.unlearn.clone();
        u.method = method;
        let need_steps = |steps: Option<usize>| {
            steps.ok_or_else(|| {
                CliError::Config(format!("[unlearn] steps is required for {method}"))
            })
        };
        let schedule = match method {
            Method::OutputPerturbation => {
                let sigma0 = match u.sigma0 {
                    Some(s) => s,
                    None => calibrate_output_perturbation(&budget, u.c0)?,
                };
                u.sigma0 = Some(sigma0);
                Some(UnlearnSchedule {
                    gammas: vec![],
                    sigmas: vec![],
                    sigma0,
                    lambda: 0.0,
                    radii: ClipRadii::new(u.c0, 0.0, 0.0)?,
                })
            }
            Method::GradientClipping => {
                if u.plan == GradientPlan::Desk {
                    let p = desk_gradient_clipping_plan(budget_epochs);
                    (u.steps, u.gamma, u.lambda, u.c0, u.c1) =
                        (Some(p.steps), p.gamma, p.lambda, p.c0, p.c1);
                    u.plan = GradientPlan::Explicit;
                }
                let steps = need_steps(u.steps)?;
                let sigma = match u.sigma {
                    Some(s) => s,
                    None => {
                        let plan = GradientClippingPlan {
                            steps,
                            gamma: u.gamma,
                            lambda: u.lambda,
                            c0: u.c0,
                            c1: u.c1,
                        };
                        plan.schedule(&budget)?.sigmas[0]
                    }
                };
                u.sigma = Some(sigma);
                Some(UnlearnSchedule::constant(
                    steps,
                    u.gamma,
                    sigma,
                    u.lambda,
                    ClipRadii::gradient(u.c0, u.c1)?,
                )?)
            }
            Method::ModelClipping => {
                let steps = need_steps(u.steps)?;
                let sigma0 = u.sigma0.unwrap_or(0.0);
                let sigma = match u.sigma {
                    Some(s) => s,
                    None => {
                        calibrate_model_clipping(&budget, steps as u64, u.c0, u.c2, sigma0)?.sigma
                    }
                };
                (u.sigma, u.sigma0) = (Some(sigma), Some(sigma0));
                Some(UnlearnSchedule::new(
                    vec![u.gamma; steps],
                    vec![sigma; steps],
                    sigma0,
                    u.lambda,
                    ClipRadii::model(u.c0, u.c2)?,
                )?)
            }
            Method::DpSgdGroup => {
                u.sigma = Some(group_dp_sigma(&budget, u.group_size, u.clip_norm)?);
                None
            }
            Method::Retrain | Method::FinetuneOnly => None,
        };
        Ok(Resolved {
            unlearn: u,
            schedule,
        })
    }

    /// Pipeline configuration for `method` at `budget_epochs`, with the
    /// pipeline seed `seed`.
    pub fn pipeline(
        &self,
        resolved: &Resolved,
        budget_epochs: usize,
        seed: u64,
    ) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            method: resolved.unlearn.method,
            budget: self.budget()?,
            schedule: resolved.schedule.clone(),
            train: self.finetune_train(budget_epochs, seed),
            compute_budget_epochs: budget_epochs,
            seed,
            accounting: self.unlearn.accounting,
        })
    }

    pub fn finetune_train(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.finetune.batch_size,
            epochs,
            lr_schedule: LrSchedule::OneCycle {
                peak: self.finetune.peak_lr,
            },
            weight_decay: self.finetune.weight_decay,
            seed,
        }
    }

    /// DP-SGD training on the whole training set, used in place of
    /// pretraining for the group-DP baseline.
    pub fn dp_train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            lr_schedule: LrSchedule::OneCycle {
                peak: self.train.peak_lr,
            },
            weight_decay: self.train.weight_decay,
            seed: self.data.seed,
        }
    }

    /// The configuration with `resolved` filled in, as `key = value` text.
    /// Only keys the method reads are written.
    pub fn effective(&self, resolved: &Resolved) -> String {
        let mut ini = Ini::new();
        let put = |ini: &mut Ini, section: &str, key: &str, value: String| {
            ini.with_section(Some(section)).set(key, value);
        };

        match &self.data.source {
            DataSource::Mnist { dir } => {
                put(&mut ini, "data", "source", "mnist".into());
                if let Some(dir) = dir {
                    put(&mut ini, "data", "dir", dir.display().to_string());
                }
            }
            DataSource::Blobs {
                n,
                dim,
                classes,
                spread,
                seed,
            } => {
                put(&mut ini, "data", "source", "blobs".into());
                put(&mut ini, "data", "n", n.to_string());
                put(&mut ini, "data", "dim", dim.to_string());
                put(&mut ini, "data", "classes", classes.to_string());
                put(&mut ini, "data", "spread", spread.to_string());
                put(&mut ini, "data", "blob_seed", seed.to_string());
            }
        }
        put(
            &mut ini,
            "data",
            "test_size",
            self.data.test_size.to_string(),
        );
        put(
            &mut ini,
            "data",
            "forget_fraction",
            self.data.forget_fraction.to_string(),
        );
        put(&mut ini, "data", "seed", self.data.seed.to_string());

        let t = &self.train;
        match t.model {
            Model::MnistTiny => put(&mut ini, "train", "model", "mnist_tiny".into()),
            Model::CifarTiny => put(&mut ini, "train", "model", "cifar_tiny".into()),
            Model::Mlp { hidden } => {
                put(&mut ini, "train", "model", "mlp".into());
                put(&mut ini, "train", "hidden", hidden.to_string());
            }
        }
        put(&mut ini, "train", "epochs", t.epochs.to_string());
        put(&mut ini, "train", "batch_size", t.batch_size.to_string());
        put(&mut ini, "train", "peak_lr", t.peak_lr.to_string());
        put(
            &mut ini,
            "train",
            "weight_decay",
            t.weight_decay.to_string(),
        );
        if let Some(c) = &t.checkpoint {
            put(&mut ini, "train", "checkpoint", c.display().to_string());
        }

        let u = &resolved.unlearn;
        put(&mut ini, "unlearn", "method", u.method.as_str().into());
        put(&mut ini, "unlearn", "epsilon", u.epsilon.to_string());
        put(&mut ini, "unlearn", "delta", u.delta.to_string());
        put(&mut ini, "unlearn", "seed", u.seed.to_string());
        put(
            &mut ini,
            "unlearn",
            "accounting",
            u.accounting.as_str().into(),
        );
        let mut keys: Vec<(&str, String)> = Vec::new();
        match u.method {
            Method::OutputPerturbation => {
                keys.push(("c0", u.c0.to_string()));
                keys.extend(u.sigma0.map(|s| ("sigma0", s.to_string())));
            }
            Method::GradientClipping => {
                keys.push(("plan", "explicit".into()));
                keys.extend(u.steps.map(|s| ("steps", s.to_string())));
                keys.push(("gamma", u.gamma.to_string()));
                keys.push(("lambda", u.lambda.to_string()));
                keys.push(("c0", u.c0.to_string()));
                keys.push(("c1", u.c1.to_string()));
                keys.extend(u.sigma.map(|s| ("sigma", s.to_string())));
            }
            Method::ModelClipping => {
                keys.extend(u.steps.map(|s| ("steps", s.to_string())));
                keys.push(("gamma", u.gamma.to_string()));
                keys.push(("lambda", u.lambda.to_string()));
                keys.push(("c0", u.c0.to_string()));
                keys.push(("c2", u.c2.to_string()));
                keys.extend(u.sigma.map(|s| ("sigma", s.to_string())));
                keys.extend(u.sigma0.map(|s| ("sigma0", s.to_string())));
            }
            Method::DpSgdGroup => {
                keys.push(("group_size", u.group_size.to_string()));
                keys.push(("clip_norm", u.clip_norm.to_string()));
            }
            Method::Retrain | Method::FinetuneOnly => {}
        }
        for (k, v) in keys {
            put(&mut ini, "unlearn", k, v);
        }

        let f = &self.finetune;
        put(
            &mut ini,
            "finetune",
            "budget_epochs",
            f.budget_epochs.to_string(),
        );
        put(&mut ini, "finetune", "batch_size", f.batch_size.to_string());
        put(&mut ini, "finetune", "peak_lr", f.peak_lr.to_string());
        put(
            &mut ini,
            "finetune",
            "weight_decay",
            f.weight_decay.to_string(),
        );

        let mut out = Vec::new();
        ini.write_to(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ini output is UTF-8")
    }
}

/// A method's unlearning schedule with its noise resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub unlearn: UnlearnSection,
    pub schedule: Option<UnlearnSchedule>,
}

impl Resolved {
    /// The per-step noise, or σ₀ for output perturbation.
    pub fn sigma(&self) -> Option<f64> {
        match self.unlearn.method {
            Method::OutputPerturbation => self.unlearn.sigma0,
            _ => self.unlearn.sigma,
        }
    }
}

pub fn method_list() -> String {
    Method::ALL
        .iter()
        .map(|m| m.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(matches!(
            RunConfig::parse("[train]\nepochz = 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[model]\nx = 1\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("seed = 1\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[train]\nepochs = many\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[unlearn]\nmethod = magic\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn parses_blob_setup() {
        let cfg = RunConfig::parse(
            "[data]\nsource = blobs\nn = 300\ndim = 8\n[train]\nmodel = mlp\nhidden = 6\n[unlearn]\nmethod = retrain\n",
        )
        .unwrap();
        assert_eq!(
            cfg.data.source,
            DataSource::Blobs {
                n: 300,
                dim: 8,
                classes: 4,
                spread: 0.3,
                seed: 0
            }
        );
        assert_eq!(cfg.data.test_size, 60);
        assert_eq!(cfg.train.model, Model::Mlp { hidden: 6 });
        assert_eq!(cfg.unlearn.method, Method::Retrain);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::parse(
            "[data]\nsource = blobs\nn = 300\n[train]\nmodel = mlp\n[unlearn]\nmethod = gradient_clipping\n",
        )
        .unwrap();
        for method in Method::ALL {
            let mut cfg = cfg.clone();
            cfg.unlearn.steps = Some(3);
            cfg.unlearn.c2 = 0.5;
            cfg.unlearn.c1 = 1.0;
            let r = cfg.resolve(method, 4).unwrap();
            let text = cfg.effective(&r);
            let back = RunConfig::parse(&text).unwrap();
            let again = back.resolve(method, 4).unwrap();
            assert_eq!(again.schedule, r.schedule, "{method}");
            assert_eq!(again.sigma(), r.sigma(), "{method}");
            assert_eq!(back.effective(&again), text);
        }
    }

    #[test]
    fn desk_plan_is_made_explicit() {
        let cfg = RunConfig::default();
        let r = cfg.resolve(Method::GradientClipping, 6).unwrap();
        assert_eq!(r.unlearn.plan, GradientPlan::Explicit);
        assert_eq!(r.unlearn.steps, Some(6));
        assert_eq!(r.schedule.unwrap().steps(), 6);
        assert!(r.unlearn.sigma.unwrap() > 0.0);
    }

    #[test]
    fn model_clipping_needs_steps() {
        let cfg = RunConfig::default();
        assert!(matches!(
            cfg.resolve(Method::ModelClipping, 3),
            Err(CliError::Config(_))
        ));
    }
}

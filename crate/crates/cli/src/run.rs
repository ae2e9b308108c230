use std::path::PathBuf;

use clap::Args;

use certun_core::nn::save_checkpoint;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{fmt_opt, out_dir, trace_csv, write_file};
use crate::setup::{load_data, prepare};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Configuration file with [data], [train], [unlearn] and [finetune] sections.
    pub config: PathBuf,

    /// Output directory (default: $CERTUN_OUT_DIR, else ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also save the unlearned model as a checkpoint.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

/// Writes `trace.csv` and `effective.ini` to the output directory and prints
/// a one-line summary.
pub fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let method = cfg.unlearn.method;
    let budget_epochs = cfg.finetune.budget_epochs;
    let resolved = cfg.resolve(method, budget_epochs)?;
    let pipeline = cfg.pipeline(&resolved, budget_epochs, cfg.unlearn.seed)?;

    let data = load_data(&cfg)?;
    let exp = prepare(&cfg, &data, method)?;
    let (model, trace) = exp.run_with_model(&pipeline)?;
    if exp.forget_reads() != 0 {
        return Err(CliError::Failed(format!(
            "{} forget-set reads during unlearning",
            exp.forget_reads()
        )));
    }

    let dir = out_dir(args.out);
    write_file(&dir.join("trace.csv"), &trace_csv(&trace))?;
    write_file(&dir.join("effective.ini"), &cfg.effective(&resolved))?;
    if let Some(path) = &args.save_model {
        save_checkpoint(path, &exp.spec, &model)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    }

    let certified = match trace.certified {
        Some(t) => format!("(ε={}, δ={})", t.epsilon, t.delta),
        None => "none".into(),
    };
    println!(
        "{method}: final test accuracy {}, pretrained {}, certified {certified}, noisy steps {}, sigma {}; wrote {}",
        fmt_opt(trace.final_test_accuracy()),
        fmt_opt(Some(exp.pretrained_test_accuracy())),
        trace.noisy_steps(),
        fmt_opt(resolved.sigma()),
        dir.display()
    );
    Ok(())
}

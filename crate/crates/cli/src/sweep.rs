use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;

use certun_core::experiment::DeskExperiment;
use certun_core::method::Method;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{
    csv_text, fmt_float, fmt_opt, out_dir, write_file, RECORDS_VERSION, TARGETS_VERSION,
};
use crate::setup::{load_data, prepare};

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base configuration; defaults to the desk MNIST experiment.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "retrain,gradient_clipping"
    )]
    pub methods: Vec<Method>,

    /// Compute budgets in epochs.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub budgets: Vec<usize>,

    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,

    /// Test accuracies for the epochs-to-target table.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5")]
    pub targets: Vec<f64>,

    /// Output directory (default: $CERTUN_OUT_DIR, else ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Leave wall_seconds empty so reruns are byte-identical.
    #[arg(long)]
    pub omit_wall_time: bool,

    /// Worker threads (default: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

pub const RECORD_COLUMNS: [&str; 10] = [
    "method",
    "epsilon",
    "delta",
    "compute_budget_epochs",
    "seed",
    "unlearn_steps",
    "sigma",
    "test_accuracy",
    "wall_seconds",
    "status",
];

/// One grid point of a sweep. `status` is `ok` or the error that stopped
/// the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub compute_budget_epochs: usize,
    pub seed: u64,
    pub unlearn_steps: Option<usize>,
    pub sigma: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_seconds: Option<f64>,
    pub status: String,
}

impl ExperimentRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.method.as_str().into(),
            fmt_opt(self.epsilon),
            fmt_opt(self.delta),
            self.compute_budget_epochs.to_string(),
            self.seed.to_string(),
            self.unlearn_steps
                .map(|s| s.to_string())
                .unwrap_or_default(),
            fmt_opt(self.sigma),
            fmt_opt(self.test_accuracy),
            fmt_opt(self.wall_seconds),
            self.status.clone(),
        ]
    }
}

fn run_point(
    cfg: &RunConfig,
    exp: &DeskExperiment,
    method: Method,
    budget: usize,
    seed: u64,
) -> ExperimentRecord {
    let mut rec = ExperimentRecord {
        method,
        epsilon: None,
        delta: None,
        compute_budget_epochs: budget,
        seed,
        unlearn_steps: None,
        sigma: None,
        test_accuracy: None,
        wall_seconds: None,
        status: "ok".into(),
    };
    let start = Instant::now();
    let outcome = cfg.resolve(method, budget).and_then(|r| {
        rec.sigma = r.sigma();
        let pipeline = cfg.pipeline(&r, budget, seed)?;
        Ok(exp.run(&pipeline)?)
    });
    rec.wall_seconds = Some(start.elapsed().as_secs_f64());
    match outcome {
        Ok(trace) => {
            rec.epsilon = trace.certified.map(|t| t.epsilon);
            rec.delta = trace.certified.map(|t| t.delta);
            rec.unlearn_steps = Some(trace.noisy_steps());
            rec.test_accuracy = trace.final_test_accuracy();
        }
        Err(e) => rec.status = format!("failed: {e}"),
    }
    rec
}

/// Runs every (method, budget, seed) point. Records come back sorted by
/// method name, budget and seed regardless of scheduling.
pub fn sweep(
    cfg: &RunConfig,
    methods: &[Method],
    budgets: &[usize],
    seeds: &[u64],
    threads: Option<usize>,
) -> Result<(Vec<ExperimentRecord>, u64)> {
    if methods.is_empty() || budgets.is_empty() || seeds.is_empty() {
        return Err(CliError::Config(
            "methods, budgets and seeds must be nonempty".into(),
        ));
    }
    let data = load_data(cfg)?;
    let mut experiments: BTreeMap<bool, Arc<DeskExperiment>> = BTreeMap::new();
    for &m in methods {
        let dp = m == Method::DpSgdGroup;
        if let std::collections::btree_map::Entry::Vacant(e) = experiments.entry(dp) {
            e.insert(Arc::new(prepare(cfg, &data, m)?));
        }
    }
    let grid: Vec<(Method, usize, u64)> = methods
        .iter()
        .flat_map(|&m| {
            budgets
                .iter()
                .flat_map(move |&b| seeds.iter().map(move |&s| (m, b, s)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut records: Vec<ExperimentRecord> = pool.install(|| {
        grid.par_iter()
            .map(|&(m, b, s)| run_point(cfg, &experiments[&(m == Method::DpSgdGroup)], m, b, s))
            .collect()
    });
    records.sort_by(|a, b| {
        (a.method.as_str(), a.compute_budget_epochs, a.seed).cmp(&(
            b.method.as_str(),
            b.compute_budget_epochs,
            b.seed,
        ))
    });
    let forget_reads = experiments.values().map(|e| e.forget_reads()).sum();
    Ok((records, forget_reads))
}

/// Mean test accuracy over the successful runs of each (method, budget).
pub fn mean_accuracy(records: &[ExperimentRecord]) -> BTreeMap<(Method, usize), (f64, usize)> {
    let mut sums: BTreeMap<(Method, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        if let (true, Some(acc)) = (r.ok(), r.test_accuracy) {
            let e = sums.entry((r.method, r.compute_budget_epochs)).or_default();
            e.0 += acc;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, (s / n as f64, n)))
        .collect()
}

/// Smallest budget whose mean accuracy reaches `target`, per method.
pub fn epochs_to_target(
    means: &BTreeMap<(Method, usize), (f64, usize)>,
    method: Method,
    target: f64,
) -> Option<usize> {
    means
        .iter()
        .filter(|((m, _), (acc, _))| *m == method && *acc >= target)
        .map(|((_, b), _)| *b)
        .min()
}

pub struct TargetRow {
    pub target: f64,
    pub method: Method,
    pub epochs: Option<usize>,
    /// `1 − epochs / retrain epochs`.
    pub saving_vs_retrain: Option<f64>,
}

pub fn target_table(
    records: &[ExperimentRecord],
    methods: &[Method],
    targets: &[f64],
) -> Vec<TargetRow> {
    let means = mean_accuracy(records);
    let mut rows = Vec::new();
    for &target in targets {
        let retrain = epochs_to_target(&means, Method::Retrain, target);
        for &method in methods {
            let epochs = epochs_to_target(&means, method, target);
            let saving = match (epochs, retrain) {
                (Some(e), Some(r)) => Some(1.0 - e as f64 / r as f64),
                _ => None,
            };
            rows.push(TargetRow {
                target,
                method,
                epochs,
                saving_vs_retrain: saving,
            });
        }
    }
    rows
}

pub fn records_csv(records: &[ExperimentRecord], omit_wall_time: bool) -> String {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if omit_wall_time {
                r.wall_seconds = None;
            }
            r.row()
        })
        .collect();
    csv_text(RECORDS_VERSION, &RECORD_COLUMNS, &rows)
}

pub fn targets_csv(rows: &[TargetRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_float(r.target),
                r.method.as_str().into(),
                r.epochs.map(|e| e.to_string()).unwrap_or_default(),
                fmt_opt(r.saving_vs_retrain),
            ]
        })
        .collect();
    csv_text(
        TARGETS_VERSION,
        &["target_accuracy", "method", "epochs", "saving_vs_retrain"],
        &rows,
    )
}

/// Target accuracy down the side, one column per method; cells read
/// `epochs (saving%)`, `-` when the target was not reached.
pub fn targets_report(rows: &[TargetRow], methods: &[Method]) -> String {
    let mut out = format!("{:<8}", "target");
    for m in methods {
        out += &format!(" {:>22}", m.as_str());
    }
    out.push('\n');
    for chunk in rows.chunks(methods.len()) {
        out += &format!("{:<8}", fmt_float(chunk[0].target));
        for r in chunk {
            let cell = match (r.epochs, r.saving_vs_retrain) {
                (None, _) => "-".to_string(),
                (Some(e), Some(s)) if r.method != Method::Retrain => {
                    format!("{e} ({:.0}%)", 100.0 * s)
                }
                (Some(e), _) => e.to_string(),
            };
            out += &format!(" {cell:>22}");
        }
        out.push('\n');
    }
    out
}

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (records, forget_reads) = sweep(
        &cfg,
        &args.methods,
        &args.budgets,
        &args.seeds,
        args.threads,
    )?;
    let targets = target_table(&records, &args.methods, &args.targets);

    let dir = out_dir(args.out);
    write_file(
        &dir.join("records.csv"),
        &records_csv(&records, args.omit_wall_time),
    )?;
    write_file(&dir.join("epochs_to_target.csv"), &targets_csv(&targets))?;
    print!("{}", targets_report(&targets, &args.methods));

    let failed = records.iter().filter(|r| !r.ok()).count();
    println!(
        "{} runs, {failed} failed, {forget_reads} forget-set reads; wrote {}",
        records.len(),
        dir.display()
    );
    if forget_reads != 0 {
        return Err(CliError::Failed(format!(
            "{forget_reads} forget-set reads during the sweep"
        )));
    }
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} runs failed; see the status column",
            records.len()
        )));
    }
    Ok(())
}

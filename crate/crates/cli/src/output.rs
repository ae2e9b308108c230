//! CSV output: versioned header line, fixed column order, floats with 9
//! significant digits and empty fields for missing values.

use std::io::Write;
use std::path::{Path, PathBuf};

use certun_core::unlearn::RunTrace;

use crate::error::{CliError, Result};

pub const OUT_DIR_ENV: &str = "CERTUN_OUT_DIR";
pub const TRACE_VERSION: &str = "# certun-trace v1";
pub const RECORDS_VERSION: &str = "# certun-records v1";
pub const TARGETS_VERSION: &str = "# certun-epochs-to-target v1";

pub const TRACE_COLUMNS: [&str; 11] = [
    "record",
    "step",
    "epoch",
    "phase",
    "lr",
    "noise_std",
    "loss",
    "pre_noise_norm",
    "retain_accuracy",
    "test_accuracy",
    "mean_loss",
];

/// `--out` if given, else `$CERTUN_OUT_DIR`, else `./out`.
pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// `x` rounded to 9 significant digits, printed in the shortest form that
/// reads back as the rounded value.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-4..1e15).contains(&a) {
        rounded.to_string()
    } else {
        format!("{rounded:e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// CSV text with the version line first.
pub fn csv_text(version: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut buf = Vec::new();
    writeln!(buf, "{version}").expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).expect("writing to memory");
        for r in rows {
            w.write_record(r).expect("writing to memory");
        }
        w.flush().expect("writing to memory");
    }
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

/// One row per step, then one per epoch. Epoch rows carry the phase of the
/// epoch's last step.
pub fn trace_rows(trace: &RunTrace) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(trace.steps.len() + trace.epochs.len());
    for s in &trace.steps {
        rows.push(vec![
            "step".into(),
            s.step.to_string(),
            String::new(),
            s.phase.as_str().into(),
            fmt_float(s.lr),
            fmt_float(s.noise_std),
            fmt_float(s.loss),
            fmt_opt(s.pre_noise_norm),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    for e in &trace.epochs {
        let phase = match e.steps_run {
            0 => "",
            n => trace.steps[n - 1].phase.as_str(),
        };
        rows.push(vec![
            "epoch".into(),
            String::new(),
            e.epoch.to_string(),
            phase.into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt_opt(e.retain_accuracy),
            fmt_opt(e.test_accuracy),
            fmt_opt(e.mean_loss),
        ]);
    }
    rows
}

pub fn trace_csv(trace: &RunTrace) -> String {
    csv_text(TRACE_VERSION, &TRACE_COLUMNS, &trace_rows(trace))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use certun_core::method::Method;
    use certun_core::unlearn::{EpochRecord, Phase, StepRecord};

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.123_456_789_123), "0.123456789");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(-2.5), "-2.5");
        assert_eq!(fmt_float(123_456_789_987.0), "123456790000");
        assert_eq!(fmt_float(1.234_567_891e-7), "1.23456789e-7");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn trace_layout() {
        let mut t = RunTrace::new(Method::GradientClipping);
        for (i, phase) in [Phase::Noisy, Phase::Clean, Phase::Clean, Phase::Clean]
            .into_iter()
            .enumerate()
        {
            t.steps.push(StepRecord {
                step: i,
                phase,
                lr: 0.1,
                noise_std: if phase == Phase::Noisy { 0.5 } else { 0.0 },
                loss: 1.0 / (i + 1) as f64,
                pre_noise_norm: (phase == Phase::Noisy).then_some(0.01),
            });
        }
        for epoch in 1..=2 {
            t.epochs.push(EpochRecord {
                epoch,
                steps_run: 2 * epoch,
                retain_accuracy: None,
                test_accuracy: Some(0.5),
                mean_loss: Some(0.7),
            });
        }
        let text = trace_csv(&t);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_VERSION);
        assert_eq!(lines[1], TRACE_COLUMNS.join(","));
        assert_eq!(lines[2], "step,0,,noisy,0.1,0.5,1,0.01,,,");
        assert_eq!(lines[6], "epoch,,1,clean,,,,,,0.5,0.7");
        assert_eq!(lines.len(), 8);
    }

    #[test]
    fn out_dir_precedence() {
        assert_eq!(out_dir(Some("x".into())), PathBuf::from("x"));
    }
}

//! Run manifests and evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::direct::{LrFlag, LrValue};
use crate::error::Result;
use crate::eval::EvalReport;
use crate::method::MethodKind;
use crate::persist::write_atomic;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    /// Hex digest of the parsed content (panel or pair set fingerprint).
    pub fingerprint: String,
}

/// Provenance record written next to every output of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: Value, seed: Option<u64>) -> Self {
        RunManifest {
            schema: SCHEMA_VERSION,
            command: command.to_string(),
            args,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>, fingerprint: u64) {
        self.inputs.push(InputFingerprint {
            path: path.as_ref().display().to_string(),
            fingerprint: format!("{fingerprint:016x}"),
        });
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Where the manifest of an output file lives.
pub fn manifest_path(output: impl AsRef<Path>) -> PathBuf {
    let output = output.as_ref();
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn method_label(m: MethodKind) -> &'static str {
    match m {
        MethodKind::Direct => "Direct",
        MethodKind::IndirectScalar => "Indirect scal. d",
        MethodKind::IndirectVectorial => "Indirect vect. d",
    }
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: MethodKind,
    pub feature_count: usize,
    /// Mean and sd of the per-fold CV AUC (%) when the count was selected.
    pub cv_auc: Option<(f64, f64)>,
    pub calibration: EvalReport,
    pub test: EvalReport,
}

/// Fixed-width comparison table; AUC, Sn and Sp in %, threshold on the
/// posterior scale.
pub fn format_table(rows: &[ReportRow]) -> String {
    let with_cv = rows.iter().any(|r| r.cv_auc.is_some());
    let mut s = String::new();
    let lead = if with_cv {
        format!("{:<18} {:>14} {:>7}", "", "", "")
    } else {
        format!("{:<18}", "")
    };
    let _ = writeln!(s, "{lead} | {:<30} | {:<30}", "Calibration", "Test");
    let head = if with_cv {
        format!("{:<18} {:>14} {:>7}", "Method", "AUC-CV3", "#feat.")
    } else {
        format!("{:<18}", "Method")
    };
    let cols = format!("{:>6} {:>9} {:>6} {:>6}", "AUC", "threshold", "Sn", "Sp");
    let _ = writeln!(s, "{head} | {cols} | {cols}");
    for r in rows {
        let lead = if with_cv {
            let cv = r
                .cv_auc
                .map(|(m, sd)| format!("{m:.1} ({sd:.1})"))
                .unwrap_or_else(|| "-".into());
            format!(
                "{:<18} {:>14} {:>7}",
                method_label(r.method),
                cv,
                r.feature_count
            )
        } else {
            format!("{:<18}", method_label(r.method))
        };
        let _ = writeln!(s, "{lead} | {} | {}", r.calibration, r.test);
    }
    s
}

/// JSON form of an evaluation run.
pub fn evaluation_json(rows: &[ReportRow], prior_ss: f64, manifest: Option<&Path>) -> Value {
    let entry = |e: &EvalReport| {
        serde_json::json!({
            "auc": e.auc,
            "threshold": e.threshold,
            "sn": e.sn,
            "sp": e.sp,
            "n_ss": e.n_ss,
            "n_ds": e.n_ds,
        })
    };
    let methods: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut v = serde_json::json!({
                "method": r.method,
                "feature_count": r.feature_count,
                "calibration": entry(&r.calibration),
                "test": entry(&r.test),
            });
            if let Some((m, sd)) = r.cv_auc {
                v["cv_auc"] = serde_json::json!({ "mean": m, "sd_of_folds": sd });
            }
            v
        })
        .collect();
    let mut out = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "prior_ss": prior_ss,
        "units": "auc, sn, sp in percent; threshold is a posterior probability",
        "methods": methods,
    });
    if let Some(m) = manifest {
        out["manifest"] = Value::from(m.display().to_string());
    }
    out
}

/// `LR=<value> log10(LR)=<value>`, with a note when the LR was clamped.
pub fn format_lr(lr: &LrValue) -> String {
    let note = match lr.flag {
        LrFlag::Finite => "",
        LrFlag::ClampedHigh => " (clamped: upper bound)",
        LrFlag::ClampedLow => " (clamped: lower bound)",
    };
    format!("LR={:.6} log10(LR)={:.6}{note}", lr.lr, lr.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(auc: f64) -> EvalReport {
        EvalReport {
            auc,
            threshold: 0.43,
            sn: 80.6,
            sp: 91.3,
            n_ss: 10,
            n_ds: 90,
            method: "direct".into(),
            feature_count: 741,
            dataset: "calibration".into(),
        }
    }

    #[test]
    fn table_rows_align() {
        let rows = vec![
            ReportRow {
                method: MethodKind::Direct,
                feature_count: 741,
                cv_auc: None,
                calibration: report(91.2),
                test: report(91.4),
            },
            ReportRow {
                method: MethodKind::IndirectVectorial,
                feature_count: 741,
                cv_auc: None,
                calibration: report(98.5),
                test: report(97.1),
            },
        ];
        let t = format_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.len() == lines[1].len()));
        assert!(lines[2].starts_with("Direct"));
        assert!(lines[2].contains("  91.2      0.43   80.6   91.3"));
    }

    #[test]
    fn cv_columns_appear_when_present() {
        let rows = vec![ReportRow {
            method: MethodKind::IndirectScalar,
            feature_count: 12,
            cv_auc: Some((90.04, 1.26)),
            calibration: report(91.2),
            test: report(91.4),
        }];
        let t = format_table(&rows);
        assert!(t.contains("AUC-CV3"));
        assert!(t.contains("90.0 (1.3)"));
    }

    #[test]
    fn evaluation_json_has_table_keys() {
        let rows = vec![ReportRow {
            method: MethodKind::Direct,
            feature_count: 3,
            cv_auc: None,
            calibration: report(91.2),
            test: report(91.4),
        }];
        let v = evaluation_json(&rows, 0.5, None);
        assert_eq!(v["schema"], 1);
        for set in ["calibration", "test"] {
            for k in ["auc", "threshold", "sn", "sp"] {
                assert!(v["methods"][0][set][k].is_number(), "{set}.{k}");
            }
        }
    }

    #[test]
    fn lr_line() {
        assert_eq!(
            format_lr(&LrValue::from_ln(0.0)),
            "LR=1.000000 log10(LR)=0.000000"
        );
        assert!(format_lr(&LrValue::from_ln(1e4)).contains("clamped"));
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path("out/model.json"),
            PathBuf::from("out/model.json.manifest.json")
        );
    }
}

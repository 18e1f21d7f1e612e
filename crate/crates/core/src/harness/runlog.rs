use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRow {
    /// 1-based count of completed optimizer steps.
    pub iter: usize,
    pub l_reg: f64,
    pub l_cls: f64,
    pub l_mt: f64,
    pub w_reg: f64,
    pub w_cls: f64,
    /// Log-variances used for this step's loss, before the update. Zero
    /// outside learned mode and for an absent task.
    pub s_reg: f64,
    pub s_cls: f64,
    pub alpha: f64,
    /// Batches skipped so far for lack of ground truth.
    pub skipped_batches: usize,
}

impl IterRow {
    /// `w_reg * l_reg + r_reg + w_cls * l_cls + r_cls` from this row alone.
    pub fn recompose(&self, learned: bool) -> f64 {
        let (r_reg, r_cls) = if learned {
            (0.5 * self.s_reg, 0.5 * self.s_cls)
        } else {
            (0.0, 0.0)
        };
        self.w_reg * self.l_reg + r_reg + self.w_cls * self.l_cls + r_cls
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub iter: usize,
    pub silog_reg_scaled: f64,
    /// Absent when the run has no classification head; an empty CSV field.
    pub silog_cls_scaled: Option<f64>,
}

/// Training and validation history of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    /// Free-form `key: value` notes written as comment lines atop each CSV.
    pub header: Vec<String>,
    pub train: Vec<IterRow>,
    pub val: Vec<ValRow>,
}

pub const TRAIN_COLUMNS: &str = "iter,l_reg,l_cls,l_mt,w_reg,w_cls,s_reg,s_cls,alpha,skipped_batches";
pub const VAL_COLUMNS: &str = "iter,silog_reg_scaled,silog_cls_scaled";

impl RunLog {
    /// Lowest validation error of the regression head.
    pub fn best_silog_reg(&self) -> Option<f64> {
        self.val.iter().map(|v| v.silog_reg_scaled).min_by(f64::total_cmp)
    }

    pub fn best_silog_cls(&self) -> Option<f64> {
        self.val
            .iter()
            .filter_map(|v| v.silog_cls_scaled)
            .min_by(f64::total_cmp)
    }

    fn header_lines(&self) -> String {
        self.header.iter().map(|h| format!("# {h}\n")).collect()
    }

    pub fn train_csv(&self) -> String {
        let mut out = self.header_lines();
        out.push_str(TRAIN_COLUMNS);
        out.push('\n');
        for r in &self.train {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iter, r.l_reg, r.l_cls, r.l_mt, r.w_reg, r.w_cls, r.s_reg, r.s_cls, r.alpha, r.skipped_batches
            );
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = self.header_lines();
        out.push_str(VAL_COLUMNS);
        out.push('\n');
        for r in &self.val {
            let cls = r.silog_cls_scaled.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{cls}", r.iter, r.silog_reg_scaled);
        }
        out
    }

    /// Writes `train_log.csv` and `val_log.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::write(dir.join("train_log.csv"), self.train_csv())?;
        fs::write(dir.join("val_log.csv"), self.val_csv())?;
        Ok(())
    }
}

//! Line-delimited key/value metrics log.
//!
//! One record per training step, e.g.:
//! `step=12 phase=selftrain loss=1.234567890e-1 mean_w=9.0e-1 frac_low_w=5.0e-2 lr=1.0e-4 ema=0`
//!
//! Formatting is fixed-precision scientific notation so identical runs
//! produce byte-identical logs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Per-step training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: String,
    pub loss: f64,
    pub mean_weight: f64,
    pub frac_low_weight: f64,
    pub lr: f64,
    pub ema_applied: bool,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "step={} phase={} loss={:.9e} mean_w={:.9e} frac_low_w={:.9e} lr={:.9e} ema={}",
            self.step,
            self.phase,
            self.loss,
            self.mean_weight,
            self.frac_low_weight,
            self.lr,
            if self.ema_applied { 1 } else { 0 },
        )
    }
}

/// Parses one `k=v` line back into a map (used by tests and reports).
pub fn parse_line(line: &str) -> BTreeMap<String, String> {
    line.split_whitespace()
        .filter_map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect()
}

/// Collects metric lines in memory and optionally mirrors them to a file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    lines: Vec<String>,
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        MetricsLog::default()
    }

    pub fn with_file(path: &Path) -> Result<Self> {
        Ok(MetricsLog {
            lines: Vec::new(),
            file: Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
        })
    }

    pub fn record(&mut self, record: &StepRecord) {
        self.push_line(record.to_line());
    }

    /// Free-form line (evaluation snapshots, EMA events, warnings).
    pub fn push_line(&mut self, line: String) {
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{line}");
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip() {
        let rec = StepRecord {
            step: 41,
            phase: "selftrain".into(),
            loss: 0.125,
            mean_weight: 0.875,
            frac_low_weight: 0.0625,
            lr: 1e-4,
            ema_applied: true,
        };
        let line = rec.to_line();
        let kv = parse_line(&line);
        assert_eq!(kv["step"], "41");
        assert_eq!(kv["phase"], "selftrain");
        assert_eq!(kv["ema"], "1");
        assert_eq!(kv["loss"], format!("{:.9e}", 0.125));
    }
}

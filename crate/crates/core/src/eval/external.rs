use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};

/// A quality score computed outside this crate (WER, speaker similarity,
/// MOS predictors and so on).
pub trait ExternalMetric {
    fn name(&self) -> &str;
    fn score(&self, wav: &Path, reference_text: &str) -> Result<f64>;
}

/// Runs `program args... <wav> <reference_text>` and reads the first
/// whitespace-separated token of its stdout as the score.
#[derive(Debug, Clone)]
pub struct CommandMetric {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalMetric for CommandMetric {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, wav: &Path, reference_text: &str) -> Result<f64> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(wav)
            .arg(reference_text)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !output.status.success() {
            return Err(Error::InvalidInput(format!(
                "metric {} exited with {}: {}",
                self.name,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .split_whitespace()
            .next()
            .and_then(|tok| tok.parse::<f64>().ok())
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "metric {} printed no number: {stdout:?}",
                    self.name
                ))
            })
    }
}

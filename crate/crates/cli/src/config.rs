use std::path::{Path, PathBuf};

use serde::Deserialize;

use motionforge::pipeline::synthetic::SyntheticConfig;
use motionforge::pipeline::SampleOptions;

use crate::CliError;

/// `--config` file. Command-line flags take precedence over these fields.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub threshold: Option<f64>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub state_dir: Option<PathBuf>,
    pub sample: Option<SampleOptions>,
    pub synth: Option<SyntheticConfig>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }
}

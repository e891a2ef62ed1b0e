use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Values a config file may supply. Keys mirror the long flag names with
/// dashes replaced by underscores; a flag given on the command line wins.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub blocks: Option<usize>,
    pub divisor: Option<usize>,
    pub scale: Option<String>,
    pub time: Option<usize>,
    pub channels: Option<usize>,
    pub receivers: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub snr_db: Option<f64>,
    pub cutoff_hz: Option<f64>,
    pub time_samples: Option<usize>,
    pub sources: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub val_samples: Option<usize>,
    pub spatial: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}

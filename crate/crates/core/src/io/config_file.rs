use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tasks::forecast::ForecastSpec;
use crate::tasks::optim::TrainSettings;
use crate::tasks::recall::RecallSpec;
use crate::tasks::MlmTaskSpec;

/// How a corpus splits into train and evaluation documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// First `train_frac` of documents train, the rest evaluate.
    Frac,
    /// 30% train, 10% validation, 60% test by document order.
    Ttl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Plain UTF-8 corpus, one document per line.
    pub corpus: String,
    /// Series CSV with the `date,HUFL,...,OT` schema.
    pub ett_csv: String,
    pub split: SplitMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: "data/toy.txt".into(),
            ett_csv: "data/ETTh1.csv".into(),
            split: SplitMode::Frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: String,
    /// Checkpoint path for eval/ttl; train writes its checkpoint here
    /// relative to the out dir when empty.
    pub checkpoint: String,
    pub ttl_passes: usize,
    pub lengths: Vec<usize>,
    pub chunk_sizes: Vec<usize>,
    pub allow_hash_mismatch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![1],
            out: "runs/out".into(),
            checkpoint: String::new(),
            ttl_passes: 50,
            lengths: vec![128, 256, 512],
            chunk_sizes: vec![16, 32, 64],
            allow_hash_mismatch: false,
        }
    }
}

/// The whole experiment file: model, optimizer, task and run settings.
/// Unknown keys anywhere are rejected, and the fully resolved document
/// is echoed into every output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub optimizer: TrainSettings,
    pub mlm: MlmTaskSpec,
    pub forecast: ForecastSpec,
    pub recall: RecallSpec,
    pub data: DataConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        ExperimentConfig::from_value(value)
    }

    fn from_value(value: toml::Value) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    /// Apply dotted-path overrides like `model.chunk_size=64` on top of
    /// the current document, then re-validate (unknown keys rejected).
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut value = toml::Value::try_from(self)
            .map_err(|e| Error::Config(format!("config serialize error: {e}")))?;
        for (path, raw) in overrides {
            let parsed = parse_override_value(raw)?;
            set_path(&mut value, path, parsed)?;
        }
        ExperimentConfig::from_value(value)
    }

    /// Canonical TOML text of the fully resolved config.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialize error: {e}")))
    }

    /// Hash of the resolved document; stored in every record and
    /// checkpoint so a result row names the exact configuration.
    pub fn hash(&self) -> Result<String> {
        let text = self.resolved_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(hex_prefix(&digest, 8))
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

fn parse_override_value(raw: &str) -> Result<toml::Value> {
    // try native TOML scalars and arrays first, fall back to a string
    let attempt = format!("v = {raw}");
    if let Ok(doc) = attempt.parse::<toml::Value>() {
        if let Some(v) = doc.get("v") {
            return Ok(v.clone());
        }
    }
    Ok(toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &str, new_value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{path}'")));
    }
    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| Error::Config(format!("unknown config section '{part}' in '{path}'")))?;
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{path}' does not address a table entry")))?;
    let leaf = parts[parts.len() - 1];
    if !table.contains_key(leaf) {
        return Err(Error::Config(format!("unknown config key '{path}'")));
    }
    table.insert(leaf.to_string(), new_value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.resolved_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[model]\nchunk_sizes = 32\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("chunk_sizes"), "{err}");
    }

    #[test]
    fn override_replaces_file_value() {
        let cfg = ExperimentConfig::from_toml("[model]\nchunk_size = 32\n").unwrap();
        let cfg = cfg
            .with_overrides(&[("model.chunk_size".into(), "64".into())])
            .unwrap();
        assert_eq!(cfg.model.chunk_size, 64);
        assert!(cfg.resolved_toml().unwrap().contains("chunk_size = 64"));
    }

    #[test]
    fn override_rejects_unknown_key() {
        let cfg = ExperimentConfig::default();
        assert!(cfg
            .with_overrides(&[("model.chunky".into(), "64".into())])
            .is_err());
    }

    #[test]
    fn string_and_enum_overrides_parse() {
        let cfg = ExperimentConfig::default();
        let cfg = cfg
            .with_overrides(&[
                ("model.variant".into(), "lmm".into()),
                ("model.memory_dim".into(), "16".into()),
                ("model.model_dim".into(), "16".into()),
                ("data.corpus".into(), "other.txt".into()),
                ("run.seeds".into(), "[3, 4]".into()),
            ])
            .unwrap();
        assert_eq!(cfg.model.variant, crate::model::Variant::Lmm);
        assert_eq!(cfg.data.corpus, "other.txt");
        assert_eq!(cfg.run.seeds, vec![3, 4]);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::default();
        let b = a
            .with_overrides(&[("model.chunk_size".into(), "64".into())])
            .unwrap();
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap(), ExperimentConfig::default().hash().unwrap());
    }

    #[test]
    fn invalid_model_config_rejected_at_load() {
        let text = "[model]\nchunk_size = 0\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}

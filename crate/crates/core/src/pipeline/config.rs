//! Run configuration and seeded sub-streams.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchConfig;
use crate::metrics::DEFAULT_TAU_RR;
use crate::nn::ModelConfig;
use crate::tearing::GeneratorConfig;

/// Procedural source images used instead of an image directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticImages {
    pub count: usize,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of source images for `generate`.
    pub images: Option<PathBuf>,
    pub dataset: PathBuf,
    /// Checkpoints, traces, and reports.
    pub run: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            images: None,
            dataset: PathBuf::from("dataset"),
            run: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: Option<SyntheticImages>,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub matching: MatchConfig,
    pub top_k: usize,
    pub tau_rr: f64,
    pub render_samples: usize,
    /// Lifts the cap on correspondences stored per pair in the match report.
    pub report_all_correspondences: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            synthetic: None,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            matching: MatchConfig::default(),
            top_k: 20,
            tau_rr: DEFAULT_TAU_RR,
            render_samples: 4,
            report_all_correspondences: false,
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON config; every failure is a config error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.matching.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.tau_rr > 0.0) {
            return Err(Error::Config("tau_rr must be positive".into()));
        }
        if let Some(s) = &self.synthetic {
            if s.count == 0 || s.width == 0 || s.height == 0 {
                return Err(Error::Config("synthetic images need a positive count and size".into()));
            }
        }
        Ok(())
    }
}

/// Seed of the named sub-stream `name` of `root`: FNV-1a of the name mixed
/// into the root, then one splitmix64 round.
pub fn sub_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = (root ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        assert_eq!(sub_seed(7, "training"), sub_seed(7, "training"));
        assert_ne!(sub_seed(7, "training"), sub_seed(7, "generation"));
        assert_ne!(sub_seed(7, "training"), sub_seed(8, "training"));
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.top_k, 20);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 1, "topk": 3}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, r#"{"top_k": 0}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, r#"{"generator": {"tau": 2.0}}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, r#"{"seed": 3, "model": {"gcn_layers": 2}}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!((cfg.seed, cfg.model.gcn_layers, cfg.model.d_feat), (3, 2, 64));
    }

    fn check_defaults(schema: &serde_json::Value, value: &serde_json::Value, path: &str) {
        let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{path}: no properties"));
        let obj = value.as_object().unwrap();
        let keys: Vec<&String> = obj.keys().collect();
        let mut schema_keys: Vec<&String> = props.keys().collect();
        schema_keys.sort();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(sorted, schema_keys, "{path}");
        for (k, v) in obj {
            let sub = &props[k];
            if v.is_object() {
                check_defaults(sub, v, &format!("{path}.{k}"));
            } else {
                assert_eq!(&sub["default"], v, "{path}.{k}");
            }
        }
    }

    #[test]
    fn published_schema_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.schema.json");
        let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let value = serde_json::to_value(RunConfig::default()).unwrap();
        check_defaults(&schema, &value, "config");
    }
}

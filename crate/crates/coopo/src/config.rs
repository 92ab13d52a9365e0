//! Run configuration: one JSON document with namespaced sections,
//! strict about unknown keys, resolved defaults echoed back out so a
//! run's full provenance lives next to its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cycle::{CoopoConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::validate_text_field;
use crate::offline::OfflineConfig;
use crate::online::OnlineConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Experimental: grow the offline dataset with each cycle's online
    /// rollouts, so later offline phases retrain on them too.
    pub append_online_rollouts: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Record real elapsed milliseconds in metric rows. Off keeps
    /// reruns bitwise identical.
    pub wall_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Accepted and echoed for provenance but consumed nowhere; its
    /// role is unassigned.
    pub beta_extra: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { beta_extra: 0.99 }
    }
}

/// Everything the file format can express. Flat keys configure the
/// run itself; the sections mirror the training modules one to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Defaults to `<env>_s<seed>` when left unset.
    pub run_id: Option<String>,
    pub env: String,
    /// Offline dataset path, relative to the working directory. The
    /// cyclic algorithm requires it; the pure online baseline ignores
    /// it.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub cycles: usize,
    pub eval_episodes: usize,
    pub early_stop: bool,
    /// Default output directory; a command-line flag wins over it.
    pub out: Option<PathBuf>,
    pub offline: OfflineConfig,
    pub online: OnlineConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub metrics: MetricsConfig,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: None,
            env: "pointmass".into(),
            dataset: None,
            seed: 0,
            cycles: 2,
            eval_episodes: 20,
            early_stop: false,
            out: None,
            offline: OfflineConfig::default(),
            online: OnlineConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            metrics: MetricsConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl RunConfig {
    /// Every check that does not need the file system, plus the
    /// existence of the referenced dataset, which does.
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::input("config key `cycles`: must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::input("config key `eval_episodes`: must be at least 1"));
        }
        if self.env.is_empty() {
            return Err(Error::input("config key `env`: must be non-empty"));
        }
        if let Some(id) = &self.run_id {
            validate_text_field(id, "config key `run_id`")?;
        }
        if !self.optim.beta_extra.is_finite() {
            return Err(Error::input("config key `optim.beta_extra`: must be finite"));
        }
        self.offline.validate()?;
        self.online.validate()?;
        self.model.validate()?;
        if let Some(path) = &self.dataset {
            if !path.is_file() {
                return Err(Error::input(format!(
                    "config key `dataset`: no file at {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}_s{}", self.env, self.seed))
    }

    /// Runtime settings for the cyclic algorithm. Fails when no
    /// dataset is configured.
    pub fn to_coopo(&self) -> Result<CoopoConfig> {
        let dataset = self
            .dataset
            .clone()
            .ok_or_else(|| Error::input("config key `dataset`: required for cyclic training"))?;
        let mut cfg = self.to_baseline();
        cfg.dataset = dataset;
        Ok(cfg)
    }

    /// Runtime settings for the pure online baseline, which never
    /// reads the dataset.
    pub fn to_baseline(&self) -> CoopoConfig {
        CoopoConfig {
            cycles: self.cycles,
            env: self.env.clone(),
            dataset: self.dataset.clone().unwrap_or_default(),
            seed: self.seed,
            eval_episodes: self.eval_episodes,
            early_stop: self.early_stop,
            run_id: self.resolved_run_id(),
            wall_clock: self.metrics.wall_clock,
            append_online_rollouts: self.data.append_online_rollouts,
            offline: self.offline.clone(),
            online: self.online.clone(),
            model: self.model.clone(),
        }
    }

    /// The full config with every default filled in, as JSON.
    pub fn resolved_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::schema(e.to_string()))
    }

    /// Writes `resolved_config.json` under `out_dir`, creating the
    /// directory if needed.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join("resolved_config.json");
        fs::write(&path, self.resolved_json()?)?;
        Ok(path)
    }
}

/// Parses and validates a config document, reporting the offending
/// key on failure.
pub fn parse_str(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner();
        if path == "." {
            Error::input(format!("config: {inner}"))
        } else {
            Error::input(format!("config key `{path}`: {inner}"))
        }
    })?;
    de.end().map_err(|e| Error::input(format!("config: trailing content, {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_file(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
    parse_str(&text)
}

/// Parses a `COOPO_SEED`-style override. Takes the raw variable value
/// so callers other than the process environment stay testable.
pub fn seed_override(value: Option<&str>) -> Result<Option<u64>> {
    let Some(raw) = value else { return Ok(None) };
    raw.trim().parse().map(Some).map_err(|_| {
        Error::input(format!("COOPO_SEED must be an unsigned integer, got {raw:?}"))
    })
}

/// Applies the `COOPO_SEED` override to a parsed config.
pub fn apply_seed_override(cfg: &mut RunConfig, value: Option<&str>) -> Result<()> {
    if let Some(seed) = seed_override(value)? {
        cfg.seed = seed;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_object_yields_the_defaults() {
        let cfg = parse_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.env, "pointmass");
        assert_eq!(cfg.cycles, 2);
        assert_eq!(cfg.offline.lambda, 0.05);
        assert_eq!(cfg.online.batch, 64);
        assert_eq!(cfg.optim.beta_extra, 0.99);
        assert!(cfg.dataset.is_none());
        assert!(!cfg.data.append_online_rollouts);
        assert!(!cfg.metrics.wall_clock);
    }

    #[test]
    fn section_keys_land_in_their_modules() {
        let cfg = parse_str(r#"{"offline":{"lambda":0.05}}"#).unwrap();
        assert_eq!(cfg.offline.lambda, 0.05);
        let cfg = parse_str(r#"{"cycles":7,"online":{"clip":0.1}}"#).unwrap();
        assert_eq!(cfg.cycles, 7);
        assert_eq!(cfg.online.clip, 0.1);
    }

    #[test]
    fn wrong_type_names_the_offending_key() {
        let err = parse_str(r#"{"cycles":"five"}"#).unwrap_err();
        assert!(err.to_string().contains("cycles"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        let err = parse_str(r#"{"cyles":3}"#).unwrap_err();
        assert!(err.to_string().contains("cyles"), "{err}");
        let err = parse_str(r#"{"offline":{"lamda":0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn trailing_content_is_rejected() {
        assert!(parse_str("{} {}").is_err());
    }

    #[test]
    fn invalid_values_are_parse_errors() {
        assert!(parse_str(r#"{"cycles":0}"#).is_err());
        assert!(parse_str(r#"{"offline":{"lambda":0.0}}"#).is_err());
        assert!(parse_str(r#"{"online":{"clip":1.0}}"#).is_err());
        assert!(parse_str(r#"{"optim":{"beta_extra":null}}"#).is_err());
        assert!(parse_str(r#"{"run_id":"has,comma"}"#).is_err());
    }

    #[test]
    fn the_reference_hyperparameters_are_representable() {
        let cfg = parse_str(
            r#"{
                "cycles": 500,
                "offline": {"lr": 3e-4, "gamma": 0.99, "lambda": 0.05, "batch": 512},
                "online": {
                    "lr": 3e-4, "gamma": 0.99, "batch": 64,
                    "episodes": 5, "epochs_per_update": 5,
                    "episodes_per_collect": 512,
                    "total_step_budget": 1000000
                }
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.cycles, 500);
        assert_eq!(cfg.offline.lr, 3e-4);
        assert_eq!(cfg.offline.gamma, Some(0.99));
        assert_eq!(cfg.offline.lambda, 0.05);
        assert_eq!(cfg.offline.batch, 512);
        assert_eq!(cfg.online.lr, 3e-4);
        assert_eq!(cfg.online.gamma, Some(0.99));
        assert_eq!(cfg.online.batch, 64);
        assert_eq!(cfg.online.episodes, 5);
        assert_eq!(cfg.online.epochs_per_update, 5);
        assert_eq!(cfg.online.episodes_per_collect, 512);
        assert_eq!(cfg.online.total_step_budget, Some(1_000_000));
    }

    #[test]
    fn referenced_dataset_must_exist() {
        let err = parse_str(r#"{"dataset":"/nonexistent/nowhere.jsonl"}"#).unwrap_err();
        assert!(err.to_string().contains("dataset"), "{err}");

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "placeholder").unwrap();
        let doc = format!(r#"{{"dataset":{:?}}}"#, file.path());
        let cfg = parse_str(&doc).unwrap();
        assert_eq!(cfg.dataset.as_deref(), Some(file.path()));
    }

    #[test]
    fn seed_override_parses_or_complains() {
        let mut cfg = RunConfig::default();
        apply_seed_override(&mut cfg, None).unwrap();
        assert_eq!(cfg.seed, 0);
        apply_seed_override(&mut cfg, Some("123")).unwrap();
        assert_eq!(cfg.seed, 123);
        assert!(apply_seed_override(&mut cfg, Some("twelve")).is_err());
        assert_eq!(cfg.seed, 123);
    }

    #[test]
    fn resolved_echo_reparses_to_the_same_config() {
        let cfg = parse_str(r#"{"seed":42,"offline":{"epochs":3},"early_stop":true}"#).unwrap();
        let echoed = cfg.resolved_json().unwrap();
        assert_eq!(parse_str(&echoed).unwrap(), cfg);

        let dir = tempfile::tempdir().unwrap();
        let path = cfg.write_resolved(&dir.path().join("run")).unwrap();
        assert_eq!(parse_file(&path).unwrap(), cfg);
    }

    #[test]
    fn runtime_conversion_fills_the_run_id_and_needs_data() {
        let cfg = parse_str(r#"{"env":"chain5","seed":9}"#).unwrap();
        assert!(cfg.to_coopo().is_err());

        let baseline = cfg.to_baseline();
        assert_eq!(baseline.run_id, "chain5_s9");
        assert_eq!(baseline.env, "chain5");
        assert!(!baseline.wall_clock);

        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "placeholder").unwrap();
        let doc = format!(r#"{{"run_id":"named","dataset":{:?}}}"#, file.path());
        let named = parse_str(&doc).unwrap().to_coopo().unwrap();
        assert_eq!(named.run_id, "named");
        assert_eq!(named.dataset, file.path());
    }

    #[test]
    fn missing_file_is_reported_with_its_path() {
        let err = parse_file("/nonexistent/cfg.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.json"), "{err}");
    }
}

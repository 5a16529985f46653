//! Run configuration: one JSON file, every field optional, unknown fields
//! rejected. The fully resolved configuration is written next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mombo::dynamics::EnsembleConfig;
use mombo::envs::{make_env, Behavior, BehaviorMix};
use mombo::pevi::{PenaltyConfig, SacConfig, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Demonstration behavior mixed into random episodes.
    pub demo: String,
    /// Fraction of episodes generated by `demo`.
    pub ratio: f64,
    pub size: usize,
    /// Read this file instead of generating one per seed.
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            demo: "expert".into(),
            ratio: 0.1,
            size: 20_000,
            path: None,
        }
    }
}

impl DatasetConfig {
    pub fn mix(&self) -> anyhow::Result<BehaviorMix> {
        Ok(BehaviorMix {
            demo: Behavior::parse(&self.demo)?,
            ratio: self.ratio,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalUqConfig {
    pub episodes: usize,
    /// Score every `every`-th step of each episode, plus its last step.
    pub every: usize,
    /// Policy draws behind each exact Bellman estimate.
    pub exact_samples: usize,
    pub strategies: Vec<Strategy>,
}

impl Default for EvalUqConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            every: 10,
            exact_samples: 1000,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    pub grid: Vec<usize>,
    pub repetitions: usize,
    pub reference_samples: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            grid: vec![10, 100, 1_000, 10_000],
            repetitions: 100,
            reference_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Sample sizes for the sampling bound.
    pub grid: Vec<usize>,
    /// Network container whose first network is the critic. Without it the
    /// seeded fixture critic is used.
    pub critic: Option<PathBuf>,
    pub belief_mean: Option<Vec<f64>>,
    pub belief_var: Option<Vec<f64>>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            grid: vec![10, 100, 1_000, 10_000],
            critic: None,
            belief_mean: None,
            belief_var: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub dataset: DatasetConfig,
    pub penalty: PenaltyConfig,
    pub ensemble: EnsembleConfig,
    pub sac: SacConfig,
    pub train: TrainConfig,
    pub eval_uq: EvalUqConfig,
    pub figure: FigureConfig,
    pub bounds: BoundsConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "linereach".into(),
            dataset: DatasetConfig::default(),
            penalty: PenaltyConfig::default(),
            ensemble: EnsembleConfig::default(),
            sac: SacConfig::default(),
            train: TrainConfig::default(),
            eval_uq: EvalUqConfig::default(),
            figure: FigureConfig::default(),
            bounds: BoundsConfig::default(),
            seeds: vec![0],
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Parses JSON text; errors name the line, column and offending field.
    pub fn from_json(text: &str, origin: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            anyhow::anyhow!("{origin}:{}:{}: {e}", e.line(), e.column())
        })?;
        cfg.validate().with_context(|| format!("invalid configuration in {origin}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        make_env(&self.env)?;
        self.dataset.mix()?;
        if !(0.0..=1.0).contains(&self.dataset.ratio) {
            bail!("dataset.ratio must lie in [0, 1]");
        }
        if self.dataset.size == 0 {
            bail!("dataset.size must be at least 1");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        self.penalty.validate()?;
        self.ensemble.validate()?;
        self.sac.validate()?;
        self.train.validate()?;
        if self.eval_uq.episodes == 0 || self.eval_uq.every == 0 || self.eval_uq.exact_samples == 0 {
            bail!("eval_uq counts must all be at least 1");
        }
        if self.figure.grid.is_empty() || self.figure.grid.contains(&0) || self.figure.repetitions < 2 {
            bail!("figure.grid needs positive sizes and figure.repetitions at least 2");
        }
        if self.bounds.grid.is_empty() || self.bounds.grid.iter().any(|&n| n < 2) {
            bail!("bounds.grid needs sample sizes of at least 2");
        }
        if self.bounds.belief_mean.is_some() != self.bounds.belief_var.is_some() {
            bail!("bounds.belief_mean and bounds.belief_var must be given together");
        }
        Ok(())
    }

    /// Writes the resolved configuration to `<out>/config.json`.
    pub fn dump(&self) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        let path = self.out.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn dataset_path(&self, seed: u64) -> PathBuf {
        self.dataset
            .path
            .clone()
            .unwrap_or_else(|| self.out.join(format!("dataset-seed{seed}.jsonl")))
    }

    pub fn dynamics_stem(&self, seed: u64) -> PathBuf {
        self.out.join(format!("dynamics-seed{seed}"))
    }

    pub fn policy_path(&self, seed: u64) -> PathBuf {
        self.out
            .join(format!("policy-{}-seed{seed}.nets", self.penalty.strategy.label()))
    }

    pub fn curve_path(&self, seed: u64) -> PathBuf {
        self.out
            .join(format!("curve-{}-seed{seed}.csv", self.penalty.strategy.label()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}", "t").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_field_is_reported_with_position() {
        let err = RunConfig::from_json("{\n  \"env\": \"linereach\",\n  \"sedes\": [1]\n}", "cfg.json").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("cfg.json:3:"), "{msg}");
        assert!(msg.contains("sedes"), "{msg}");
    }

    #[test]
    fn nested_unknown_field_is_rejected() {
        let err = RunConfig::from_json("{\"sac\": {\"tua\": 0.1}}", "c").unwrap_err();
        assert!(format!("{err:#}").contains("tua"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json("{\"env\": \"cartpole\"}", "c").is_err());
        assert!(RunConfig::from_json("{\"seeds\": []}", "c").is_err());
        assert!(RunConfig::from_json("{\"dataset\": {\"demo\": \"oracle\"}}", "c").is_err());
        assert!(RunConfig::from_json("{\"penalty\": {\"strategy\": \"mobile\", \"samples\": 1}}", "c").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            seeds: vec![3, 4],
            ..RunConfig::default()
        };
        let path = cfg.dump().unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}

//! Scenario files: TOML with one table per concern. Every key has a default,
//! so an empty file is a valid scenario.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fl::SgdParams;
use crate::ledger::MinerSet;
use crate::opinion::WeightConfig;
use crate::orchestrator::{ReputationParams, Scheme, TrainingParams};

/// A configuration problem, located at a line of the source when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub roster: RosterConfig,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub reputation: ReputationConfig,
    pub experiment: ExperimentConfig,
    pub grid: GridConfig,
    pub trace: TraceConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterConfig {
    pub honest: usize,
    pub poisoners: usize,
    pub unreliable: usize,
    pub lazy: usize,
    pub attack_strength: f64,
    /// Target EMD of each unreliable worker's shard.
    pub unreliable_emd: f64,
    pub lazy_fraction: f64,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            honest: 4,
            poisoners: 2,
            unreliable: 4,
            lazy: 0,
            attack_strength: 0.9,
            unreliable_emd: 1.6,
            lazy_fraction: 0.4,
        }
    }
}

impl RosterConfig {
    pub fn total(&self) -> usize {
        self.honest + self.poisoners + self.unreliable + self.lazy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Synthetic examples in total, before the test and validation splits.
    pub examples: usize,
    pub classes: usize,
    pub features: usize,
    pub separation: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_size: usize,
    pub validation_size: usize,
    /// Examples per worker; omitted means an even split of the training pool.
    pub shard_size: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            examples: 22_000,
            classes: 10,
            features: 20,
            separation: 4.0,
            images: None,
            labels: None,
            test_size: 2_000,
            validation_size: 1_000,
            shard_size: Some(1_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub rounds: u32,
    pub batch_size: usize,
    pub batches_per_round: usize,
    pub learning_rate: f64,
    pub compute_rate: f64,
    pub elapsed_tolerance: f64,
    pub roni_epsilon: f64,
    pub link_failure: [f64; 2],
    pub init_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            batch_size: 32,
            batches_per_round: 5,
            learning_rate: 1.0,
            compute_rate: 1.0,
            elapsed_tolerance: 0.1,
            roni_epsilon: 0.02,
            link_failure: [0.0, 0.4],
            init_scale: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReputationConfig {
    pub gamma: f64,
    pub w_recent: f64,
    pub w_past: f64,
    pub rho_pos: f64,
    pub rho_neg: f64,
    pub recency_window: u64,
    pub frequency_window: u64,
    pub tasks_per_week: [u64; 2],
    pub atv_scale: f64,
    pub atv_weight: f64,
    /// Publishers taking turns running tasks.
    pub publishers: u32,
    pub miners: usize,
    pub faulty_miners: usize,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        let msl = WeightConfig::msl();
        Self {
            gamma: msl.gamma,
            w_recent: msl.w_recent,
            w_past: msl.w_past,
            rho_pos: msl.rho_pos,
            rho_neg: msl.rho_neg,
            recency_window: msl.recency_window,
            frequency_window: 7,
            tasks_per_week: [20, 40],
            atv_scale: 0.1,
            atv_weight: 1.0,
            publishers: 5,
            miners: 4,
            faulty_miners: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Scheme and threshold of a single `run-task`.
    pub scheme: Scheme,
    pub threshold: f64,
    pub min_data_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=20).collect(),
            scheme: Scheme::Msl,
            threshold: 0.5,
            min_data_size: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub attack_strengths: Vec<f64>,
    pub emd_settings: Vec<f64>,
    pub attacker_counts: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            attack_strengths: vec![0.0, 0.5, 0.9],
            emd_settings: vec![0.0, 1.6],
            attacker_counts: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub tasks: u64,
    /// Tasks in which the tracked worker behaves before it turns.
    pub good_tasks: u64,
    pub misbehave_prob: f64,
    pub rounds: u32,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            tasks: 30,
            good_tasks: 6,
            misbehave_prob: 0.8,
            rounds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub warmup_tasks: u64,
    pub warmup_rounds: u32,
    pub schemes: Vec<Scheme>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 0.9,
            step: 0.1,
            warmup_tasks: 6,
            warmup_rounds: 10,
            schemes: vec![Scheme::Msl, Scheme::Tsl, Scheme::Atv],
        }
    }
}

impl SweepConfig {
    /// Grid points from `start` to `end` inclusive, rounded to 6 decimals so
    /// accumulated steps do not drift.
    pub fn thresholds(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e6).round() / 1e6)
            .collect()
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()
            .map_err(|(section, key, message)| ConfigError {
                line: locate_key(text, section, key),
                message: format!("{section}.{key}: {message}"),
            })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(LoadError::Io)?;
        Self::from_toml(&text).map_err(LoadError::Config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Checks the semantic constraints; errors name the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        fn check(
            ok: bool,
            section: &'static str,
            key: &'static str,
            msg: impl Into<String>,
        ) -> Result<(), (&'static str, &'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((section, key, msg.into()))
            }
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);

        let r = &self.roster;
        check(
            r.total() >= 1,
            "roster",
            "honest",
            "the roster has no workers",
        )?;
        check(
            unit(r.attack_strength),
            "roster",
            "attack_strength",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..=2.0).contains(&r.unreliable_emd),
            "roster",
            "unreliable_emd",
            "must lie in [0, 2]",
        )?;
        check(
            r.lazy_fraction > 0.0 && r.lazy_fraction < 1.0,
            "roster",
            "lazy_fraction",
            "must lie in (0, 1)",
        )?;

        let d = &self.dataset;
        check(
            d.classes >= 2,
            "dataset",
            "classes",
            "need at least 2 classes",
        )?;
        check(
            d.features >= 1,
            "dataset",
            "features",
            "need at least 1 feature",
        )?;
        check(d.test_size >= 1, "dataset", "test_size", "must be positive")?;
        check(
            d.validation_size >= 1,
            "dataset",
            "validation_size",
            "must be positive",
        )?;
        check(
            d.shard_size != Some(0),
            "dataset",
            "shard_size",
            "must be positive",
        )?;
        check(
            d.separation > 0.0,
            "dataset",
            "separation",
            "must be positive",
        )?;
        match d.source {
            DataSource::Synthetic => check(
                d.examples > d.test_size + d.validation_size,
                "dataset",
                "examples",
                "leaves no training data after the test and validation splits",
            )?,
            DataSource::Idx => {
                check(
                    d.images.is_some(),
                    "dataset",
                    "source",
                    "idx data needs `images`",
                )?;
                check(
                    d.labels.is_some(),
                    "dataset",
                    "source",
                    "idx data needs `labels`",
                )?;
            }
        }

        let t = &self.training;
        check(t.rounds >= 1, "training", "rounds", "must be at least 1")?;
        check(
            t.batch_size >= 1,
            "training",
            "batch_size",
            "must be at least 1",
        )?;
        check(
            t.batches_per_round >= 1,
            "training",
            "batches_per_round",
            "must be at least 1",
        )?;
        check(
            t.learning_rate > 0.0,
            "training",
            "learning_rate",
            "must be positive",
        )?;
        check(
            t.compute_rate > 0.0,
            "training",
            "compute_rate",
            "must be positive",
        )?;
        check(
            unit(t.elapsed_tolerance),
            "training",
            "elapsed_tolerance",
            "must lie in [0, 1]",
        )?;
        check(
            t.roni_epsilon >= 0.0,
            "training",
            "roni_epsilon",
            "must be non-negative",
        )?;
        check(
            unit(t.link_failure[0])
                && unit(t.link_failure[1])
                && t.link_failure[0] <= t.link_failure[1],
            "training",
            "link_failure",
            "must be a range [lo, hi] within [0, 1]",
        )?;

        let rp = &self.reputation;
        if let Err(e) = self.msl_weights().validate() {
            return Err(("reputation", "gamma", e.to_string()));
        }
        check(
            rp.frequency_window >= 1,
            "reputation",
            "frequency_window",
            "must be at least 1",
        )?;
        check(
            rp.tasks_per_week[0] <= rp.tasks_per_week[1],
            "reputation",
            "tasks_per_week",
            "start must not exceed end",
        )?;
        check(
            rp.atv_scale > 0.0,
            "reputation",
            "atv_scale",
            "must be positive",
        )?;
        check(
            rp.atv_weight > 0.0 && rp.atv_weight <= 1.0,
            "reputation",
            "atv_weight",
            "must lie in (0, 1]",
        )?;
        check(
            rp.publishers >= 1,
            "reputation",
            "publishers",
            "must be at least 1",
        )?;
        check(rp.miners >= 1, "reputation", "miners", "must be at least 1")?;
        check(
            rp.faulty_miners <= rp.miners,
            "reputation",
            "faulty_miners",
            "exceeds the number of miners",
        )?;

        let e = &self.experiment;
        check(
            !e.seeds.is_empty(),
            "experiment",
            "seeds",
            "must not be empty",
        )?;
        check(
            unit(e.threshold),
            "experiment",
            "threshold",
            "must lie in [0, 1]",
        )?;

        let g = &self.grid;
        check(
            !g.attack_strengths.is_empty(),
            "grid",
            "attack_strengths",
            "must not be empty",
        )?;
        check(
            g.attack_strengths.iter().all(|&s| unit(s)),
            "grid",
            "attack_strengths",
            "values must lie in [0, 1]",
        )?;
        check(
            !g.emd_settings.is_empty(),
            "grid",
            "emd_settings",
            "must not be empty",
        )?;
        check(
            g.emd_settings.iter().all(|e| (0.0..=2.0).contains(e)),
            "grid",
            "emd_settings",
            "values must lie in [0, 2]",
        )?;
        check(
            !g.attacker_counts.is_empty(),
            "grid",
            "attacker_counts",
            "must not be empty",
        )?;
        check(
            g.attacker_counts
                .iter()
                .all(|&a| a <= r.honest + r.poisoners),
            "grid",
            "attacker_counts",
            "cannot exceed the honest and poisoning workers combined",
        )?;

        let tr = &self.trace;
        check(tr.tasks >= 1, "trace", "tasks", "must be at least 1")?;
        check(
            tr.good_tasks <= tr.tasks,
            "trace",
            "good_tasks",
            "exceeds `tasks`",
        )?;
        check(
            unit(tr.misbehave_prob),
            "trace",
            "misbehave_prob",
            "must lie in [0, 1]",
        )?;
        check(tr.rounds >= 1, "trace", "rounds", "must be at least 1")?;

        let s = &self.sweep;
        check(
            s.start <= s.end,
            "sweep",
            "start",
            "start must not exceed end",
        )?;
        check(
            unit(s.start) && unit(s.end),
            "sweep",
            "end",
            "range must lie within [0, 1]",
        )?;
        check(s.step > 0.0, "sweep", "step", "must be positive")?;
        check(
            s.warmup_rounds >= 1,
            "sweep",
            "warmup_rounds",
            "must be at least 1",
        )?;
        check(
            !s.schemes.is_empty(),
            "sweep",
            "schemes",
            "must not be empty",
        )?;
        Ok(())
    }

    pub fn msl_weights(&self) -> WeightConfig {
        let r = &self.reputation;
        WeightConfig {
            gamma: r.gamma,
            w_recent: r.w_recent,
            w_past: r.w_past,
            rho_pos: r.rho_pos,
            rho_neg: r.rho_neg,
            recency_window: r.recency_window,
        }
    }

    pub fn reputation_params(&self) -> ReputationParams {
        let r = &self.reputation;
        ReputationParams {
            msl: self.msl_weights(),
            tsl: WeightConfig {
                gamma: r.gamma,
                ..WeightConfig::tsl()
            },
            frequency_window: r.frequency_window,
            atv_scale: r.atv_scale,
            atv_weight: r.atv_weight,
        }
    }

    pub fn training_params(&self) -> TrainingParams {
        let t = &self.training;
        TrainingParams {
            sgd: SgdParams {
                batch_size: t.batch_size,
                n_batches: t.batches_per_round,
                lr: t.learning_rate,
                compute_rate: t.compute_rate,
                coverage: 1.0,
            },
            elapsed_tolerance: t.elapsed_tolerance,
            roni_epsilon: t.roni_epsilon,
            link_failure: (t.link_failure[0], t.link_failure[1]),
            init_scale: t.init_scale,
        }
    }

    pub fn miner_set(&self) -> MinerSet {
        MinerSet::with_faulty(self.reputation.miners, self.reputation.faulty_miners)
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    Config(ConfigError),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(e) => write!(f, "cannot read config: {e}"),
            LoadError::Config(e) => write!(f, "invalid config: {e}"),
        }
    }
}

impl std::error::Error for LoadError {}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, or of the section header when the key
/// is not spelled out.
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

/// Parses a seed list such as `1,2,5-9`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("bad seed {a:?}"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("bad seed {b:?}"))?;
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

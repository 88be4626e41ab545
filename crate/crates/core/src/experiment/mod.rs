//! Seeded multi-run experiments: the accuracy grid, the reputation trace and
//! the threshold sweep.
//!
//! Each seed owns its data, ledgers and scheme state, so seeds run in
//! parallel and their rows are concatenated in seed order.

pub mod config;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fl::{
    gen_synthetic, load_idx, partition, poison, Behavior, Dataset, FlError, WorkerProfile,
};
use crate::ids::{PublisherId, TaskIndex, WorkerId};
use crate::ledger::{KeyRegistry, Ledger, SigningKey};
use crate::opinion::Outcome;
use crate::orchestrator::{
    admit_candidates, atv_update, publish_opinions, scheme_reputation, select_workers,
    train_federated, LedgerStatus, OrchestratorError, ReputationParams, Scheme, SchemeState,
    TaskEnv, TaskSpec, TrainingOutcome, TrainingParams, ATV_INITIAL,
};
use crate::seed::{self, tag};

pub use config::{parse_seed_list, ConfigError, LoadError, ScenarioConfig};
pub use metrics::{write_rows, write_summary, MetricError, MetricRow, Status, CSV_VERSION};

pub const ACCURACY_GRID: &str = "accuracy_grid";
pub const REPUTATION_TRACE: &str = "reputation_trace";
pub const THRESHOLD_SWEEP: &str = "threshold_sweep";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Class count an unreliable worker holds to reach roughly `emd` against a
/// uniform population: a shard spread evenly over `k` of `c` classes has EMD
/// `2 (1 - k / c)`.
pub fn classes_for_emd(emd: f64, n_classes: usize) -> usize {
    let k = (n_classes as f64 * (1.0 - emd / 2.0)).round() as usize;
    k.clamp(1, n_classes)
}

/// Test, validation and training splits for one seed.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Loads IDX files once; synthetic data is generated per seed.
#[derive(Clone, Debug)]
pub struct DataProvider {
    idx: Option<Dataset>,
}

impl DataProvider {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ExperimentError> {
        let d = &cfg.dataset;
        let idx = match (d.source, &d.images, &d.labels) {
            (config::DataSource::Idx, Some(images), Some(labels)) => {
                Some(load_idx(images, labels)?)
            }
            (config::DataSource::Idx, _, _) => {
                return Err(ExperimentError::Config(
                    "idx data needs images and labels".into(),
                ))
            }
            (config::DataSource::Synthetic, _, _) => None,
        };
        Ok(Self { idx })
    }

    pub fn corpus(&self, cfg: &ScenarioConfig, seed: u64) -> Result<Corpus, ExperimentError> {
        let d = &cfg.dataset;
        let all = match &self.idx {
            Some(ds) => {
                let mut order: Vec<usize> = (0..ds.len()).collect();
                order.shuffle(&mut seed::rng(seed, &[tag::TEST_SPLIT]));
                ds.subset(&order)
            }
            None => gen_synthetic(d.examples, d.classes, d.features, d.separation, seed)?,
        };
        if all.len() <= d.test_size + d.validation_size {
            return Err(FlError::InsufficientData(format!(
                "{} examples leave nothing for training",
                all.len()
            ))
            .into());
        }
        let (test, rest) = all.split_at(d.test_size);
        let (validation, train) = rest.split_at(d.validation_size);
        Ok(Corpus {
            train,
            validation,
            test,
        })
    }
}

/// Worker ids in roster order: poisoners, unreliable, lazy, honest.
pub fn build_roster(
    honest: usize,
    poisoners: usize,
    unreliable: usize,
    lazy: usize,
    attack_strength: f64,
    classes_held: usize,
    lazy_fraction: f64,
) -> Vec<(WorkerId, Behavior)> {
    let behaviors = std::iter::repeat_n(Behavior::Poisoner { attack_strength }, poisoners)
        .chain(std::iter::repeat_n(
            Behavior::Unreliable { classes_held },
            unreliable,
        ))
        .chain(std::iter::repeat_n(
            Behavior::Lazy {
                fraction_trained: lazy_fraction,
            },
            lazy,
        ))
        .chain(std::iter::repeat_n(Behavior::Honest, honest));
    behaviors
        .enumerate()
        .map(|(i, b)| (WorkerId(i as u32), b))
        .collect()
}

/// The roster described by the config.
pub fn configured_roster(cfg: &ScenarioConfig) -> Vec<(WorkerId, Behavior)> {
    let r = &cfg.roster;
    build_roster(
        r.honest,
        r.poisoners,
        r.unreliable,
        r.lazy,
        r.attack_strength,
        classes_for_emd(r.unreliable_emd, cfg.dataset.classes),
        r.lazy_fraction,
    )
}

/// Workers ready to train. `clean` keeps the unpoisoned shards, which the
/// trace uses while its tracked worker still behaves.
#[derive(Clone, Debug)]
pub struct World {
    pub profiles: Vec<WorkerProfile>,
    pub clean: Vec<WorkerProfile>,
}

pub fn build_world(
    cfg: &ScenarioConfig,
    corpus: &Corpus,
    roster: &[(WorkerId, Behavior)],
    seed: u64,
) -> Result<World, ExperimentError> {
    let clean = partition(&corpus.train, roster, cfg.dataset.shard_size, seed)?;
    let profiles = clean
        .iter()
        .map(|p| match p.behavior {
            Behavior::Poisoner { attack_strength } => WorkerProfile {
                shard: poison(
                    &p.shard,
                    attack_strength,
                    seed::derive(seed, &[u64::from(p.worker_id.0)]),
                ),
                ..p.clone()
            },
            _ => p.clone(),
        })
        .collect();
    Ok(World { profiles, clean })
}

fn key_registry(publishers: u32, seed: u64) -> KeyRegistry {
    let mut rng = seed::rng(seed, &[tag::KEYS]);
    let mut keys = KeyRegistry::new();
    // one extra key for the observing publisher
    for p in 0..=publishers {
        let mut k = [0u8; 32];
        rng.fill(&mut k);
        keys.register(PublisherId(p), SigningKey(k));
    }
    keys
}

/// Publisher keys for `seed`, shared by every ledger of that seed.
pub fn keys_for_seed(cfg: &ScenarioConfig, seed: u64) -> KeyRegistry {
    key_registry(cfg.reputation.publishers, seed)
}

/// Background interactions of each publisher with each worker, drawn from
/// the configured weekly task range.
fn seed_activity(state: &mut SchemeState, cfg: &ScenarioConfig, workers: &[WorkerId], seed: u64) {
    let mut rng = seed::rng(seed, &[tag::ACTIVITY]);
    let [lo, hi] = cfg.reputation.tasks_per_week;
    for p in 0..cfg.reputation.publishers {
        for &w in workers {
            state.set_activity(PublisherId(p), w, rng.random_range(lo..=hi));
        }
    }
}

struct Env {
    training: TrainingParams,
    reputation: ReputationParams,
    miners: crate::ledger::MinerSet,
}

impl Env {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            training: cfg.training_params(),
            reputation: cfg.reputation_params(),
            miners: cfg.miner_set(),
        }
    }

    fn task_env<'a>(&'a self, corpus: &'a Corpus) -> TaskEnv<'a> {
        TaskEnv {
            validation: &corpus.validation,
            test: &corpus.test,
            training: &self.training,
            reputation: &self.reputation,
            miners: &self.miners,
        }
    }
}

fn check(cfg: &ScenarioConfig) -> Result<(), ExperimentError> {
    cfg.validate()
        .map_err(|(s, k, m)| ExperimentError::Config(format!("{s}.{k}: {m}")))
}

fn per_seed<F>(cfg: &ScenarioConfig, run: F) -> Result<Vec<MetricRow>, ExperimentError>
where
    F: Fn(&DataProvider, u64) -> Result<Vec<MetricRow>, ExperimentError> + Sync,
{
    check(cfg)?;
    let data = DataProvider::new(cfg)?;
    let per_seed: Vec<Vec<MetricRow>> = cfg
        .experiment
        .seeds
        .par_iter()
        .map(|&s| run(&data, s))
        .collect::<Result<_, _>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Final NoDefense accuracy for every combination of attack strength, EMD
/// setting and attacker count. Attackers take the place of honest workers.
pub fn accuracy_grid(cfg: &ScenarioConfig) -> Result<Vec<MetricRow>, ExperimentError> {
    let env = Env::new(cfg);
    per_seed(cfg, |data, seed| {
        let corpus = data.corpus(cfg, seed)?;
        let r = &cfg.roster;
        let mut rows = Vec::new();
        for &strength in &cfg.grid.attack_strengths {
            for &emd in &cfg.grid.emd_settings {
                for &attackers in &cfg.grid.attacker_counts {
                    let roster = build_roster(
                        r.honest + r.poisoners - attackers,
                        attackers,
                        r.unreliable,
                        r.lazy,
                        strength,
                        classes_for_emd(emd, cfg.dataset.classes),
                        r.lazy_fraction,
                    );
                    let world = build_world(cfg, &corpus, &roster, seed)?;
                    let all: Vec<&WorkerProfile> = world.profiles.iter().collect();
                    let outcome = train_federated(
                        1,
                        PublisherId(0),
                        &all,
                        cfg.training.rounds,
                        false,
                        &env.task_env(&corpus),
                        seed,
                    )?;
                    rows.push(MetricRow {
                        experiment: ACCURACY_GRID,
                        seed,
                        scheme: Scheme::NoDefense.name().into(),
                        threshold: None,
                        emd_setting: emd,
                        attack_strength: strength,
                        attacker_count: attackers,
                        round: u64::from(cfg.training.rounds),
                        accuracy: Some(outcome.accuracy),
                        status: Status::Ok,
                        reputation: None,
                        reputations: BTreeMap::new(),
                    });
                }
            }
        }
        Ok(rows)
    })
}

/// Ledgers and state of one seed when every scheme observes the same tasks.
struct Federation {
    msl: Ledger,
    tsl: Ledger,
    state: SchemeState,
    /// Trust accumulated with every event counted as positive, as a publisher
    /// without any detection would see it.
    undefended: BTreeMap<WorkerId, f64>,
    last_commit: Status,
}

impl Federation {
    fn new(cfg: &ScenarioConfig, workers: &[WorkerId], seed: u64) -> Self {
        let keys = keys_for_seed(cfg, seed);
        let mut state = SchemeState::new();
        seed_activity(&mut state, cfg, workers, seed);
        Self {
            msl: Ledger::new(keys.clone()),
            tsl: Ledger::new(keys),
            state,
            undefended: workers.iter().map(|&w| (w, ATV_INITIAL)).collect(),
            last_commit: Status::Ok,
        }
    }

    /// Runs one defended task with every worker and feeds its records to all
    /// schemes.
    fn observe(
        &mut self,
        task: TaskIndex,
        publisher: PublisherId,
        workers: &[&WorkerProfile],
        rounds: u32,
        env: &TaskEnv<'_>,
        seed: u64,
    ) -> Result<TrainingOutcome, ExperimentError> {
        let outcome = train_federated(task, publisher, workers, rounds, true, env, seed)?;
        let mut counts: BTreeMap<WorkerId, (u64, u64)> = BTreeMap::new();
        for rec in &outcome.records {
            let c = counts.entry(rec.worker_id).or_default();
            match rec.outcome {
                Outcome::Positive => c.0 += 1,
                Outcome::Negative => c.1 += 1,
            }
            self.state.record(rec.clone());
        }
        let ids: Vec<WorkerId> = workers.iter().map(|p| p.worker_id).collect();
        let rp = env.reputation;
        let mut status = Status::Ok;
        for (ledger, weights) in [(&mut self.msl, &rp.msl), (&mut self.tsl, &rp.tsl)] {
            let s = publish_opinions(
                publisher,
                &ids,
                ledger,
                &self.state,
                weights,
                env.miners,
                task,
            )?;
            if matches!(s, LedgerStatus::Failed { .. }) {
                status = Status::CommitFailed;
            }
        }
        self.last_commit = status;
        for (&w, &(pos, neg)) in &counts {
            atv_update(&mut self.state, w, pos, neg, rp.atv_weight, rp.atv_scale)?;
            let v = self.undefended.entry(w).or_insert(ATV_INITIAL);
            *v = (*v + rp.atv_weight * rp.atv_scale).min(1.0);
        }
        Ok(outcome)
    }

    fn ledger(&self, scheme: Scheme) -> &Ledger {
        match scheme {
            Scheme::Tsl => &self.tsl,
            _ => &self.msl,
        }
    }

    fn reputation(
        &self,
        scheme: Scheme,
        viewer: PublisherId,
        worker: WorkerId,
        params: &ReputationParams,
        now: TaskIndex,
    ) -> Result<f64, ExperimentError> {
        if scheme == Scheme::NoDefense {
            return Ok(self.undefended.get(&worker).copied().unwrap_or(ATV_INITIAL));
        }
        Ok(scheme_reputation(
            scheme,
            viewer,
            worker,
            self.ledger(scheme),
            &self.state,
            params,
            now,
        )?)
    }
}

fn publisher_for(cfg: &ScenarioConfig, task: TaskIndex) -> PublisherId {
    PublisherId(((task - 1) % u64::from(cfg.reputation.publishers)) as u32)
}

/// Reputation of one tracked worker over a sequence of tasks, as seen by a
/// publisher that never ran a task itself.
///
/// The tracked worker is the first poisoner. It trains on clean data for the
/// first `good_tasks` tasks and afterwards poisons each task with probability
/// `misbehave_prob`. Row `round` is the task index; task 0 is the initial
/// state.
pub fn reputation_trace(cfg: &ScenarioConfig) -> Result<Vec<MetricRow>, ExperimentError> {
    if cfg.roster.poisoners == 0 {
        return Err(ExperimentError::Config(
            "roster.poisoners: the trace tracks the first poisoner, so at least one is needed"
                .into(),
        ));
    }
    let env = Env::new(cfg);
    let tr = &cfg.trace;
    per_seed(cfg, |data, seed| {
        let corpus = data.corpus(cfg, seed)?;
        let roster = configured_roster(cfg);
        let world = build_world(cfg, &corpus, &roster, seed)?;
        let tracked = world.profiles[0].worker_id;
        let ids: Vec<WorkerId> = roster.iter().map(|(w, _)| *w).collect();
        let mut fed = Federation::new(cfg, &ids, seed);
        let observer = PublisherId(cfg.reputation.publishers);
        let task_env = env.task_env(&corpus);
        let mut behave_rng = seed::rng(seed, &[tag::BEHAVIOR]);

        let mut rows = Vec::new();
        let mut accuracy = None;
        for task in 0..=tr.tasks {
            if task > 0 {
                let misbehaves = task > tr.good_tasks && behave_rng.random_bool(tr.misbehave_prob);
                let mut workers: Vec<&WorkerProfile> = world.profiles.iter().collect();
                if !misbehaves {
                    workers[0] = &world.clean[0];
                }
                let outcome = fed.observe(
                    task,
                    publisher_for(cfg, task),
                    &workers,
                    tr.rounds,
                    &task_env,
                    seed,
                )?;
                accuracy = Some(outcome.accuracy);
            }
            for scheme in Scheme::ALL {
                let mut reputations = BTreeMap::new();
                for &w in &ids {
                    let v = fed.reputation(scheme, observer, w, &env.reputation, task)?;
                    reputations.insert(w, v);
                }
                rows.push(MetricRow {
                    experiment: REPUTATION_TRACE,
                    seed,
                    scheme: scheme.name().into(),
                    threshold: None,
                    emd_setting: cfg.roster.unreliable_emd,
                    attack_strength: cfg.roster.attack_strength,
                    attacker_count: cfg.roster.poisoners,
                    round: task,
                    accuracy,
                    status: fed.last_commit,
                    reputation: Some(reputations[&tracked]),
                    reputations,
                });
            }
        }
        Ok(rows)
    })
}

/// Final accuracy of an evaluation task as the selection threshold varies,
/// after warm-up tasks have populated the ledgers.
///
/// Evaluation tasks apply no per-update filtering, so worker selection is
/// the only defense being measured. Tasks selecting the same workers share
/// one training run.
pub fn threshold_sweep(cfg: &ScenarioConfig) -> Result<Vec<MetricRow>, ExperimentError> {
    let env = Env::new(cfg);
    let sw = &cfg.sweep;
    let thresholds = sw.thresholds();
    per_seed(cfg, |data, seed| {
        let corpus = data.corpus(cfg, seed)?;
        let roster = configured_roster(cfg);
        let world = build_world(cfg, &corpus, &roster, seed)?;
        let ids: Vec<WorkerId> = roster.iter().map(|(w, _)| *w).collect();
        let mut fed = Federation::new(cfg, &ids, seed);
        let task_env = env.task_env(&corpus);
        let all: Vec<&WorkerProfile> = world.profiles.iter().collect();
        for task in 1..=sw.warmup_tasks {
            fed.observe(
                task,
                publisher_for(cfg, task),
                &all,
                sw.warmup_rounds,
                &task_env,
                seed,
            )?;
        }

        let now = sw.warmup_tasks + 1;
        let publisher = publisher_for(cfg, now);
        let mut memo: BTreeMap<Vec<WorkerId>, f64> = BTreeMap::new();
        let mut train = |selected: &[WorkerId]| -> Result<f64, ExperimentError> {
            let mut key = selected.to_vec();
            key.sort_unstable();
            if let Some(&acc) = memo.get(&key) {
                return Ok(acc);
            }
            let chosen: Vec<&WorkerProfile> = world
                .profiles
                .iter()
                .filter(|p| key.binary_search(&p.worker_id).is_ok())
                .collect();
            let outcome = train_federated(
                now,
                publisher,
                &chosen,
                cfg.training.rounds,
                false,
                &task_env,
                seed,
            )?;
            memo.insert(key, outcome.accuracy);
            Ok(outcome.accuracy)
        };

        let mut rows = Vec::new();
        let mut schemes = sw.schemes.clone();
        if !schemes.contains(&Scheme::NoDefense) {
            schemes.push(Scheme::NoDefense);
        }
        for &scheme in &schemes {
            let mut scores = BTreeMap::new();
            if scheme != Scheme::NoDefense {
                for &w in &ids {
                    scores.insert(
                        w,
                        fed.reputation(scheme, publisher, w, &env.reputation, now)?,
                    );
                }
            }
            for &threshold in &thresholds {
                let spec = TaskSpec {
                    task_id: now,
                    publisher_id: publisher,
                    min_data_size: cfg.experiment.min_data_size,
                    reputation_threshold: threshold,
                    rounds: cfg.training.rounds,
                    scheme,
                };
                let admitted = admit_candidates(&spec, &world.profiles);
                let (accuracy, status) = match select_workers(&spec, &admitted, &scores) {
                    Ok(selected) => (Some(train(&selected)?), Status::Ok),
                    Err(OrchestratorError::NoEligibleWorkers { .. }) => {
                        (None, Status::NoEligibleWorkers)
                    }
                    Err(e) => return Err(e.into()),
                };
                rows.push(MetricRow {
                    experiment: THRESHOLD_SWEEP,
                    seed,
                    scheme: scheme.name().into(),
                    threshold: Some(threshold),
                    emd_setting: cfg.roster.unreliable_emd,
                    attack_strength: cfg.roster.attack_strength,
                    attacker_count: cfg.roster.poisoners,
                    round: u64::from(cfg.training.rounds),
                    accuracy,
                    status,
                    reputation: None,
                    reputations: scores.clone(),
                });
            }
        }
        Ok(rows)
    })
}

/// `<dir>/<stem>.summary.csv` next to `path`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.summary.csv"))
}

/// Writes the raw rows to `path` and the per-cell summary beside it.
pub fn write_outputs(path: &Path, rows: &[MetricRow]) -> Result<(), ExperimentError> {
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|source| ExperimentError::Io {
                path: p.to_path_buf(),
                source,
            })
    };
    write_rows(create(path)?, rows)?;
    let summary = summary_path(path);
    write_summary(create(&summary)?, rows)?;
    Ok(())
}

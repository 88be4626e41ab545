//! The per-task protocol: admission, reputation-based selection, federated
//! training with defenses, interaction recording and the ledger update.
//!
//! Three reputation schemes are available. `Msl` and `Tsl` share one pipeline
//! and differ only in their weight configuration and in how recommenders are
//! weighted; `Atv` keeps a scalar trust value per worker; `NoDefense` selects
//! every admitted worker and accepts every update.

mod report;
mod state;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fl::defense::roni_filter_with_baseline;
use crate::fl::{
    aggregate, elapsed_check, evaluate, local_sgd, Dataset, ElapsedVerdict, FlError, LocalUpdate,
    ModelState, RoniVerdict, SgdParams, WorkerProfile,
};
use crate::ids::{MinerId, PublisherId, TaskIndex, WorkerId};
use crate::ledger::{InteractionSummary, Ledger, LedgerError, MinerSet, TxContent};
use crate::opinion::{
    combine_opinions, fuse_recommended, opinion_from_history, weighted_counts, InteractionRecord,
    Opinion, OpinionError, Outcome, ReputationScore, WeightConfig,
};
use crate::seed::{self, tag};

pub use report::{LedgerStatus, RoundLog, TaskReport, Verdict};
pub use state::{SchemeState, ATV_INITIAL};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("task {task}: no admitted worker reaches the reputation threshold {threshold}")]
    NoEligibleWorkers { task: TaskIndex, threshold: f64 },
    #[error("no score for admitted worker {0}")]
    MissingScore(WorkerId),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("trust update without events")]
    NoEvents,
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Opinion(#[from] OpinionError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Msl,
    Tsl,
    Atv,
    NoDefense,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Msl, Scheme::Tsl, Scheme::Atv, Scheme::NoDefense];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Msl => "msl",
            Scheme::Tsl => "tsl",
            Scheme::Atv => "atv",
            Scheme::NoDefense => "nodefense",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme {s:?} (expected msl, tsl, atv or nodefense)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Also the simulated time at which the task runs.
    pub task_id: TaskIndex,
    pub publisher_id: PublisherId,
    pub min_data_size: usize,
    pub reputation_threshold: f64,
    pub rounds: u32,
    pub scheme: Scheme,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if !(0.0..=1.0).contains(&self.reputation_threshold) {
            return Err(OrchestratorError::InvalidTask(format!(
                "threshold {} outside [0, 1]",
                self.reputation_threshold
            )));
        }
        if self.rounds == 0 {
            return Err(OrchestratorError::InvalidTask(
                "rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How recommended opinions are weighted during fusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecommenderWeighting {
    /// Each recommender's familiarity with the worker over the last `window`
    /// tasks.
    Frequency {
        window: u64,
    },
    Uniform,
}

/// Weights and constants for every scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct ReputationParams {
    pub msl: WeightConfig,
    pub tsl: WeightConfig,
    pub frequency_window: u64,
    pub atv_scale: f64,
    pub atv_weight: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            msl: WeightConfig::msl(),
            tsl: WeightConfig::tsl(),
            frequency_window: 7,
            atv_scale: 0.1,
            atv_weight: 1.0,
        }
    }
}

/// Training and defense constants shared by every task.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingParams {
    /// Per-worker coverage is taken from each worker's behavior.
    pub sgd: SgdParams,
    pub elapsed_tolerance: f64,
    pub roni_epsilon: f64,
    /// Range of the per-record link failure probability.
    pub link_failure: (f64, f64),
    pub init_scale: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            sgd: SgdParams {
                batch_size: 32,
                n_batches: 5,
                lr: 1.0,
                compute_rate: 1.0,
                coverage: 1.0,
            },
            elapsed_tolerance: 0.1,
            roni_epsilon: 0.02,
            link_failure: (0.0, 0.4),
            init_scale: 0.01,
        }
    }
}

/// Everything a publisher needs besides the workers and the ledger.
#[derive(Clone, Copy, Debug)]
pub struct TaskEnv<'a> {
    pub validation: &'a Dataset,
    pub test: &'a Dataset,
    pub training: &'a TrainingParams,
    pub reputation: &'a ReputationParams,
    pub miners: &'a MinerSet,
}

/// Workers whose shard meets the task's data requirement.
pub fn admit_candidates(spec: &TaskSpec, candidates: &[WorkerProfile]) -> Vec<WorkerId> {
    candidates
        .iter()
        .filter(|p| p.shard.len() >= spec.min_data_size)
        .map(|p| p.worker_id)
        .collect()
}

/// Composite reputation of `worker` as seen by `publisher` at time `now`.
///
/// A [`Ledger`] can only be built from a verified chain and only grows through
/// validated commits, so the chain needs no re-verification here.
pub fn composite_reputation(
    publisher: PublisherId,
    worker: WorkerId,
    ledger: &Ledger,
    state: &SchemeState,
    cfg: &WeightConfig,
    weighting: RecommenderWeighting,
    now: TaskIndex,
) -> Result<ReputationScore, OrchestratorError> {
    let local = opinion_from_history(state.history(publisher, worker), now, cfg);
    let recommended: Vec<(Opinion, f64)> = ledger
        .latest_opinions(worker)
        .into_iter()
        .filter(|(p, _)| *p != publisher)
        .map(|(p, (op, _))| {
            let w = match weighting {
                RecommenderWeighting::Frequency { window } => {
                    state.frequency_weight(p, worker, now, window)
                }
                RecommenderWeighting::Uniform => 1.0,
            };
            (op, w)
        })
        .collect();
    let opinion = match fuse_recommended(&recommended) {
        Ok(fused) => combine_opinions(&local, &fused),
        Err(OpinionError::AllZeroWeights) => local,
        Err(e) => return Err(e.into()),
    };
    Ok(ReputationScore::new(worker, opinion, cfg.gamma, now))
}

/// The traditional scheme: the same pipeline with flat weights and uniform
/// recommenders.
pub fn tsl_reputation(
    publisher: PublisherId,
    worker: WorkerId,
    ledger: &Ledger,
    state: &SchemeState,
    now: TaskIndex,
) -> Result<ReputationScore, OrchestratorError> {
    composite_reputation(
        publisher,
        worker,
        ledger,
        state,
        &WeightConfig::tsl(),
        RecommenderWeighting::Uniform,
        now,
    )
}

/// Reputation of `worker` under `scheme`. `NoDefense` trusts everyone fully.
pub fn scheme_reputation(
    scheme: Scheme,
    publisher: PublisherId,
    worker: WorkerId,
    ledger: &Ledger,
    state: &SchemeState,
    params: &ReputationParams,
    now: TaskIndex,
) -> Result<f64, OrchestratorError> {
    Ok(match scheme {
        Scheme::Msl => {
            let weighting = RecommenderWeighting::Frequency {
                window: params.frequency_window,
            };
            composite_reputation(
                publisher,
                worker,
                ledger,
                state,
                &params.msl,
                weighting,
                now,
            )?
            .value
        }
        Scheme::Tsl => {
            let weighting = RecommenderWeighting::Uniform;
            composite_reputation(
                publisher,
                worker,
                ledger,
                state,
                &params.tsl,
                weighting,
                now,
            )?
            .value
        }
        Scheme::Atv => state.atv_value(worker),
        Scheme::NoDefense => 1.0,
    })
}

/// Adds the weighted trust offset `(pos - neg) / (pos + neg)` to the worker's
/// trust value, clamped to `[0, 1]`.
pub fn atv_update(
    state: &mut SchemeState,
    worker: WorkerId,
    pos: u64,
    neg: u64,
    weight: f64,
    scale: f64,
) -> Result<f64, OrchestratorError> {
    if pos + neg == 0 {
        return Err(OrchestratorError::NoEvents);
    }
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(OrchestratorError::InvalidTask(format!(
            "trust update weight {weight} outside (0, 1]"
        )));
    }
    let offset = (pos as f64 - neg as f64) / (pos + neg) as f64;
    let value = (state.atv_value(worker) + weight * offset * scale).clamp(0.0, 1.0);
    state.set_atv(worker, value);
    Ok(value)
}

/// Admitted workers at or above the threshold, best first. `NoDefense`
/// selects every admitted worker.
pub fn select_workers(
    spec: &TaskSpec,
    admitted: &[WorkerId],
    scores: &BTreeMap<WorkerId, f64>,
) -> Result<Vec<WorkerId>, OrchestratorError> {
    let mut ranked = Vec::with_capacity(admitted.len());
    for &w in admitted {
        let score = match spec.scheme {
            Scheme::NoDefense => 1.0,
            _ => *scores.get(&w).ok_or(OrchestratorError::MissingScore(w))?,
        };
        if spec.scheme == Scheme::NoDefense || score >= spec.reputation_threshold {
            ranked.push((score, w));
        }
    }
    if ranked.is_empty() {
        return Err(OrchestratorError::NoEligibleWorkers {
            task: spec.task_id,
            threshold: spec.reputation_threshold,
        });
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().map(|(_, w)| w).collect())
}

/// Result of the training step of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    pub model: ModelState,
    pub accuracy: f64,
    pub rounds: Vec<RoundLog>,
    pub records: Vec<InteractionRecord>,
}

/// Federated training over `workers` for `rounds` rounds.
///
/// With `defenses` on, each update passes the elapsed-time check and then
/// RONI against the round's starting model; otherwise every update is
/// accepted. Each worker yields exactly one record per round. A round in
/// which nothing is accepted leaves the model unchanged.
pub fn train_federated(
    task_id: TaskIndex,
    publisher: PublisherId,
    workers: &[&WorkerProfile],
    rounds: u32,
    defenses: bool,
    env: &TaskEnv<'_>,
    seed: u64,
) -> Result<TrainingOutcome, OrchestratorError> {
    let (n_classes, n_features) = (env.test.n_classes(), env.test.n_features());
    let tp = env.training;
    let mut model = ModelState::random(
        n_classes,
        n_features,
        tp.init_scale,
        seed::derive(seed, &[tag::INIT, task_id]),
    );
    let mut link_rng = seed::rng(seed, &[tag::LINK, task_id]);
    let (lo, hi) = tp.link_failure;
    let mut logs = Vec::with_capacity(rounds as usize);
    let mut records = Vec::with_capacity(workers.len() * rounds as usize);

    for round in 1..=rounds {
        let round_seed = seed::derive(seed, &[task_id, u64::from(round)]);
        let baseline = if defenses {
            Some(evaluate(&model, env.validation)?)
        } else {
            None
        };
        let mut accepted: Vec<LocalUpdate> = Vec::new();
        let mut verdicts = Vec::with_capacity(workers.len());
        for profile in workers {
            let params = SgdParams {
                coverage: profile.behavior.coverage(),
                ..tp.sgd.clone()
            };
            let update = local_sgd(
                profile.worker_id,
                &model,
                &profile.shard,
                &params,
                round_seed,
            )?;
            let verdict = match baseline {
                None => Verdict::Accepted,
                Some(base) => {
                    if elapsed_check(&update, tp.sgd.compute_rate, tp.elapsed_tolerance)
                        == ElapsedVerdict::Lazy
                    {
                        Verdict::RejectedLazy
                    } else if roni_filter_with_baseline(
                        &model,
                        &update,
                        env.validation,
                        tp.roni_epsilon,
                        base,
                    )? == RoniVerdict::Reject
                    {
                        Verdict::RejectedRoni
                    } else {
                        Verdict::Accepted
                    }
                }
            };
            records.push(InteractionRecord {
                publisher_id: publisher,
                worker_id: profile.worker_id,
                task_index: task_id,
                outcome: if verdict == Verdict::Accepted {
                    Outcome::Positive
                } else {
                    Outcome::Negative
                },
                link_failure_prob: if hi > lo {
                    link_rng.random_range(lo..hi)
                } else {
                    lo
                },
            });
            if verdict == Verdict::Accepted {
                accepted.push(update);
            }
            verdicts.push((profile.worker_id, verdict));
        }
        match aggregate(&model, &accepted) {
            Ok(next) => model = next,
            Err(FlError::EmptyAccepted) => {
                log::debug!("task {task_id} round {round}: every update rejected");
            }
            Err(e) => return Err(e.into()),
        }
        logs.push(RoundLog { round, verdicts });
    }
    let accuracy = evaluate(&model, env.test)?;
    Ok(TrainingOutcome {
        model,
        accuracy,
        rounds: logs,
        records,
    })
}

/// Computes `publisher`'s fresh local opinion of each worker and commits
/// them as one block.
pub fn publish_opinions(
    publisher: PublisherId,
    workers: &[WorkerId],
    ledger: &mut Ledger,
    state: &SchemeState,
    cfg: &WeightConfig,
    miners: &MinerSet,
    now: TaskIndex,
) -> Result<LedgerStatus, OrchestratorError> {
    let mut pending = Vec::with_capacity(workers.len());
    for &w in workers {
        let history = state.history(publisher, w);
        let (alpha_eff, beta_eff) = weighted_counts(history, now, cfg);
        pending.push(ledger.sign_tx(TxContent {
            publisher_id: publisher,
            worker_id: w,
            opinion: opinion_from_history(history, now, cfg),
            summary: InteractionSummary {
                alpha_eff,
                beta_eff,
                task_index: now,
            },
        })?);
    }
    let proposer = proposer_for(miners, now);
    match ledger.commit(pending, miners, proposer) {
        Ok(block) => Ok(LedgerStatus::Committed {
            height: block.height,
        }),
        Err(LedgerError::CommitFailure { commits, quorum }) => {
            log::warn!("task {now}: ledger commit failed ({commits}/{quorum} votes)");
            Ok(LedgerStatus::Failed { commits, quorum })
        }
        Err(e) => Err(e.into()),
    }
}

/// Proposers rotate with the task index.
pub fn proposer_for(miners: &MinerSet, now: TaskIndex) -> MinerId {
    let all = miners.miners();
    if all.is_empty() {
        return MinerId(0);
    }
    all[(now % all.len() as u64) as usize].id
}

/// Runs one task end to end.
///
/// `MSL` and `TSL` publish fresh opinions to `ledger` after training; `ATV`
/// updates the trust values in `state`; `NoDefense` writes nothing back
/// beyond the interaction records. A failed commit is reported in the
/// returned [`TaskReport`], not as an error.
pub fn run_task(
    spec: &TaskSpec,
    profiles: &[WorkerProfile],
    ledger: &mut Ledger,
    state: &mut SchemeState,
    env: &TaskEnv<'_>,
    seed: u64,
) -> Result<TaskReport, OrchestratorError> {
    spec.validate()?;
    let now = spec.task_id;
    let admitted = admit_candidates(spec, profiles);
    let mut scores = BTreeMap::new();
    if spec.scheme != Scheme::NoDefense {
        for &w in &admitted {
            let score = scheme_reputation(
                spec.scheme,
                spec.publisher_id,
                w,
                ledger,
                state,
                env.reputation,
                now,
            )?;
            scores.insert(w, score);
        }
    }
    let selected = select_workers(spec, &admitted, &scores)?;
    let chosen: Vec<&WorkerProfile> = selected
        .iter()
        .map(|w| {
            profiles
                .iter()
                .find(|p| p.worker_id == *w)
                .expect("selected workers come from the profiles")
        })
        .collect();
    let defenses = spec.scheme != Scheme::NoDefense;
    let outcome = train_federated(
        now,
        spec.publisher_id,
        &chosen,
        spec.rounds,
        defenses,
        env,
        seed,
    )?;
    let mut counts: BTreeMap<WorkerId, (u64, u64)> = BTreeMap::new();
    for rec in &outcome.records {
        let c = counts.entry(rec.worker_id).or_default();
        match rec.outcome {
            Outcome::Positive => c.0 += 1,
            Outcome::Negative => c.1 += 1,
        }
        state.record(rec.clone());
    }

    let ledger_status = match spec.scheme {
        Scheme::Msl | Scheme::Tsl => {
            let cfg = if spec.scheme == Scheme::Msl {
                &env.reputation.msl
            } else {
                &env.reputation.tsl
            };
            publish_opinions(
                spec.publisher_id,
                &selected,
                ledger,
                state,
                cfg,
                env.miners,
                now,
            )?
        }
        Scheme::Atv => {
            let rp = env.reputation;
            for (&w, &(pos, neg)) in &counts {
                atv_update(state, w, pos, neg, rp.atv_weight, rp.atv_scale)?;
            }
            LedgerStatus::Skipped
        }
        Scheme::NoDefense => LedgerStatus::Skipped,
    };
    log::info!(
        "task {now} ({}, {}): {} selected, accuracy {:.4}",
        spec.publisher_id,
        spec.scheme,
        selected.len(),
        outcome.accuracy
    );
    Ok(TaskReport {
        task_id: now,
        publisher_id: spec.publisher_id,
        scheme: spec.scheme,
        admitted,
        scores,
        selected,
        final_accuracy: outcome.accuracy,
        rounds: outcome.rounds,
        outcome_counts: counts,
        ledger: ledger_status,
    })
}

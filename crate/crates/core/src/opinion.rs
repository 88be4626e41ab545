//! Subjective-logic opinion algebra used for worker reputation.
//!
//! A publisher forms a *local* opinion about a worker from its own interaction
//! history, fuses the opinions other publishers recorded on the ledger into a
//! single *recommended* opinion, and combines the two with the consensus
//! operator. The scalar reputation is `belief + gamma * uncertainty`.
//!
//! Interaction histories are weighted three ways:
//!
//! * timeliness: records younger than `recency_window` tasks count with
//!   `w_recent`, older ones with `w_past`;
//! * effect: positive records are scaled by `rho_pos`, negative by `rho_neg`;
//! * frequency: a recommender's familiarity with the worker, relative to its
//!   other workers, weights its opinion during fusion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{PublisherId, TaskIndex, WorkerId};

/// Tolerance for the `b + d + u = 1` invariant.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpinionError {
    #[error("opinion component {name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("opinion components sum to {0}, expected 1")]
    NotOnSimplex(f64),
    #[error("no recommendation carries a positive weight")]
    AllZeroWeights,
    #[error("recommendation weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("invalid weight config: {0}")]
    InvalidConfig(String),
}

/// A (belief, distrust, uncertainty) triple on the unit simplex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    belief: f64,
    distrust: f64,
    uncertainty: f64,
}

impl Opinion {
    /// Total uncertainty. Neutral element of [`combine_opinions`].
    pub const VACUOUS: Opinion = Opinion {
        belief: 0.0,
        distrust: 0.0,
        uncertainty: 1.0,
    };

    pub fn new(belief: f64, distrust: f64, uncertainty: f64) -> Result<Self, OpinionError> {
        for (name, value) in [
            ("belief", belief),
            ("distrust", distrust),
            ("uncertainty", uncertainty),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(OpinionError::OutOfRange { name, value });
            }
        }
        let sum = belief + distrust + uncertainty;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(OpinionError::NotOnSimplex(sum));
        }
        Ok(Self {
            belief,
            distrust,
            uncertainty,
        })
    }

    pub fn belief(&self) -> f64 {
        self.belief
    }

    pub fn distrust(&self) -> f64 {
        self.distrust
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn is_vacuous(&self) -> bool {
        *self == Self::VACUOUS
    }

    /// Builds an opinion from components already known to be valid, clamping
    /// rounding noise at the bounds.
    fn from_parts(belief: f64, distrust: f64, uncertainty: f64) -> Self {
        let o = Self {
            belief: belief.clamp(0.0, 1.0),
            distrust: distrust.clamp(0.0, 1.0),
            uncertainty: uncertainty.clamp(0.0, 1.0),
        };
        debug_assert!(
            (o.belief + o.distrust + o.uncertainty - 1.0).abs() <= SIMPLEX_TOLERANCE,
            "{o:?} left the simplex"
        );
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Positive,
    Negative,
}

/// One publisher/worker training-task outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub publisher_id: PublisherId,
    pub worker_id: WorkerId,
    pub task_index: TaskIndex,
    pub outcome: Outcome,
    /// Sampled packet-loss probability on the link for this interaction.
    pub link_failure_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    /// Share of uncertainty credited to reputation.
    pub gamma: f64,
    pub w_recent: f64,
    pub w_past: f64,
    pub rho_pos: f64,
    pub rho_neg: f64,
    /// A record is recent iff `now - task_index < recency_window`.
    pub recency_window: u64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self::msl()
    }
}

impl WeightConfig {
    /// Multi-weight defaults: recent and negative interactions dominate.
    pub fn msl() -> Self {
        Self {
            gamma: 0.5,
            w_recent: 0.8,
            w_past: 0.2,
            rho_pos: 0.4,
            rho_neg: 0.6,
            recency_window: 3,
        }
    }

    /// Traditional subjective logic: no timeliness or effect differentiation.
    pub fn tsl() -> Self {
        Self {
            gamma: 0.5,
            w_recent: 0.5,
            w_past: 0.5,
            rho_pos: 1.0,
            rho_neg: 1.0,
            recency_window: 3,
        }
    }

    pub fn validate(&self) -> Result<(), OpinionError> {
        let bad = |msg: String| Err(OpinionError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if !(self.w_recent > 0.0 && self.w_recent <= 1.0) || !(0.0..=1.0).contains(&self.w_past) {
            return bad(format!(
                "timeliness weights ({}, {}) must lie in (0, 1] and [0, 1]",
                self.w_recent, self.w_past
            ));
        }
        if (self.w_recent + self.w_past - 1.0).abs() > SIMPLEX_TOLERANCE {
            return bad(format!(
                "w_recent + w_past = {}, expected 1",
                self.w_recent + self.w_past
            ));
        }
        if !(self.rho_pos > 0.0 && self.rho_pos.is_finite())
            || !(self.rho_neg > 0.0 && self.rho_neg.is_finite())
        {
            return bad(format!(
                "effect weights ({}, {}) must be positive",
                self.rho_pos, self.rho_neg
            ));
        }
        if self.recency_window == 0 {
            return bad("recency_window must be positive".into());
        }
        Ok(())
    }
}

/// A scalar reputation together with the opinion it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationScore {
    pub worker_id: WorkerId,
    pub value: f64,
    pub opinion: Opinion,
    pub computed_at: TaskIndex,
}

impl ReputationScore {
    pub fn new(worker_id: WorkerId, opinion: Opinion, gamma: f64, computed_at: TaskIndex) -> Self {
        Self {
            worker_id,
            value: reputation_value(&opinion, gamma),
            opinion,
            computed_at,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct SplitCounts {
    pos_recent: f64,
    pos_past: f64,
    neg_recent: f64,
    neg_past: f64,
}

fn split_counts<'a>(
    records: impl IntoIterator<Item = &'a InteractionRecord>,
    now: TaskIndex,
    window: u64,
) -> SplitCounts {
    let mut c = SplitCounts::default();
    for r in records {
        let recent = now.saturating_sub(r.task_index) < window;
        let slot = match (r.outcome, recent) {
            (Outcome::Positive, true) => &mut c.pos_recent,
            (Outcome::Positive, false) => &mut c.pos_past,
            (Outcome::Negative, true) => &mut c.neg_recent,
            (Outcome::Negative, false) => &mut c.neg_past,
        };
        *slot += 1.0;
    }
    c
}

/// Effective positive and negative evidence after timeliness and effect
/// weighting.
pub fn weighted_counts(
    records: &[InteractionRecord],
    now: TaskIndex,
    cfg: &WeightConfig,
) -> (f64, f64) {
    let c = split_counts(records, now, cfg.recency_window);
    let alpha = cfg.rho_pos * (cfg.w_recent * c.pos_recent + cfg.w_past * c.pos_past);
    let beta = cfg.rho_neg * (cfg.w_recent * c.neg_recent + cfg.w_past * c.neg_past);
    (alpha, beta)
}

/// Local opinion from an interaction history and the link failure probability.
///
/// Belief and distrust split `1 - u` in proportion `alpha_eff : beta_eff`. The
/// ratio is evaluated with the weights normalized against `w_recent` and
/// `rho_pos`, which leaves it mathematically unchanged but makes equal weights
/// reduce to exactly the unweighted counts.
pub fn local_opinion(
    records: &[InteractionRecord],
    now: TaskIndex,
    cfg: &WeightConfig,
    link_failure: f64,
) -> Opinion {
    let c = split_counts(records, now, cfg.recency_window);
    let past = cfg.w_past / cfg.w_recent;
    let pos = c.pos_recent + past * c.pos_past;
    let neg = (c.neg_recent + past * c.neg_past) * (cfg.rho_neg / cfg.rho_pos);
    let total = pos + neg;
    if total == 0.0 {
        return Opinion::VACUOUS;
    }
    let u = link_failure.clamp(0.0, 1.0);
    let certain = 1.0 - u;
    Opinion::from_parts(certain * (pos / total), certain * (neg / total), u)
}

/// Mean sampled link failure over a history; zero for an empty history.
pub fn mean_link_failure(records: &[InteractionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.link_failure_prob).sum::<f64>() / records.len() as f64
}

/// Local opinion with the uncertainty taken from the history's own link samples.
pub fn opinion_from_history(
    records: &[InteractionRecord],
    now: TaskIndex,
    cfg: &WeightConfig,
) -> Opinion {
    local_opinion(records, now, cfg, mean_link_failure(records))
}

/// `T = b + gamma * u`.
pub fn reputation_value(op: &Opinion, gamma: f64) -> f64 {
    (op.belief + gamma * op.uncertainty).clamp(0.0, 1.0)
}

/// Familiarity of a publisher with one worker relative to its average worker.
pub fn frequency_weight(n_with_worker: u64, mean_with_others: f64) -> f64 {
    if mean_with_others <= 0.0 {
        return 1.0;
    }
    (n_with_worker as f64 / mean_with_others).min(1.0)
}

/// Component-wise weighted arithmetic mean of recommended opinions.
pub fn fuse_recommended(opinions: &[(Opinion, f64)]) -> Result<Opinion, OpinionError> {
    if let Some(&(_, w)) = opinions.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(OpinionError::InvalidWeight(w));
    }
    let total: f64 = opinions.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(OpinionError::AllZeroWeights);
    }
    let (mut b, mut d, mut u) = (0.0, 0.0, 0.0);
    for (op, w) in opinions {
        let w = w / total;
        b += w * op.belief;
        d += w * op.distrust;
        u += w * op.uncertainty;
    }
    Ok(Opinion::from_parts(b, d, u))
}

/// Consensus of a local and a recommended opinion.
///
/// When both are dogmatic (`u = 0`) the consensus is undefined and the plain
/// average is returned instead.
pub fn combine_opinions(local: &Opinion, recommended: &Opinion) -> Opinion {
    if recommended.is_vacuous() {
        return *local;
    }
    if local.is_vacuous() {
        return *recommended;
    }
    let (ul, ur) = (local.uncertainty, recommended.uncertainty);
    let kappa = ul + ur - ul * ur;
    if kappa == 0.0 {
        return Opinion::from_parts(
            (local.belief + recommended.belief) / 2.0,
            (local.distrust + recommended.distrust) / 2.0,
            (local.uncertainty + recommended.uncertainty) / 2.0,
        );
    }
    Opinion::from_parts(
        (local.belief * ur + recommended.belief * ul) / kappa,
        (local.distrust * ur + recommended.distrust * ul) / kappa,
        ul * ur / kappa,
    )
}

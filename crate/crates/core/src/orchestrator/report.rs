use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::Scheme;
use crate::ids::{PublisherId, TaskIndex, WorkerId};

/// How the publisher classified one update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    RejectedLazy,
    RejectedRoni,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::RejectedLazy => "rejected_lazy",
            Verdict::RejectedRoni => "rejected_roni",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: u32,
    /// In selection order.
    pub verdicts: Vec<(WorkerId, Verdict)>,
}

impl RoundLog {
    pub fn accepted(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.verdicts
            .iter()
            .filter(|(_, v)| *v == Verdict::Accepted)
            .map(|(w, _)| *w)
    }

    pub fn rejected(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.verdicts
            .iter()
            .filter(|(_, v)| *v != Verdict::Accepted)
            .map(|(w, _)| *w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerStatus {
    Committed {
        height: u64,
    },
    Failed {
        commits: usize,
        quorum: usize,
    },
    /// The scheme does not use the ledger.
    Skipped,
}

impl LedgerStatus {
    pub fn name(self) -> &'static str {
        match self {
            LedgerStatus::Committed { .. } => "committed",
            LedgerStatus::Failed { .. } => "commit_failed",
            LedgerStatus::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskReport {
    pub task_id: TaskIndex,
    pub publisher_id: PublisherId,
    pub scheme: Scheme,
    pub admitted: Vec<WorkerId>,
    /// Reputation of each admitted worker at selection time. Empty for
    /// `NoDefense`.
    pub scores: BTreeMap<WorkerId, f64>,
    pub selected: Vec<WorkerId>,
    pub final_accuracy: f64,
    pub rounds: Vec<RoundLog>,
    /// `(positive, negative)` records per selected worker.
    pub outcome_counts: BTreeMap<WorkerId, (u64, u64)>,
    pub ledger: LedgerStatus,
}

#[derive(Serialize)]
struct FlatRow<'a> {
    task_id: TaskIndex,
    publisher_id: u32,
    scheme: &'a str,
    round: u32,
    worker_id: u32,
    score: String,
    verdict: &'a str,
    final_accuracy: String,
    ledger_status: &'a str,
}

impl TaskReport {
    /// One row per worker per round; task-level fields are repeated on each
    /// row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let accuracy = format!("{:.6}", self.final_accuracy);
        for log in &self.rounds {
            for &(worker, verdict) in &log.verdicts {
                w.serialize(FlatRow {
                    task_id: self.task_id,
                    publisher_id: self.publisher_id.0,
                    scheme: self.scheme.name(),
                    round: log.round,
                    worker_id: worker.0,
                    score: self
                        .scores
                        .get(&worker)
                        .map_or_else(String::new, |s| format!("{s:.6}")),
                    verdict: verdict.name(),
                    final_accuracy: accuracy.clone(),
                    ledger_status: self.ledger.name(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

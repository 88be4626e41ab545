use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{PublisherId, TaskIndex, WorkerId};
use crate::opinion::{frequency_weight, InteractionRecord};

/// Interaction histories, background activity and ATV trust values shared by
/// every scheme in one simulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemeState {
    histories: BTreeMap<(PublisherId, WorkerId), Vec<InteractionRecord>>,
    last_task: BTreeMap<PublisherId, TaskIndex>,
    /// Interactions that happened outside the simulated tasks (tasks per
    /// publisher/worker pair in the current frequency window).
    activity: BTreeMap<(PublisherId, WorkerId), u64>,
    atv: BTreeMap<WorkerId, f64>,
}

/// Initial ATV trust value.
pub const ATV_INITIAL: f64 = 0.5;

impl SchemeState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. Task indices must not go backwards within one
    /// publisher's history.
    pub fn record(&mut self, rec: InteractionRecord) {
        let last = self
            .last_task
            .entry(rec.publisher_id)
            .or_insert(rec.task_index);
        assert!(
            rec.task_index >= *last,
            "{} recorded task {} after task {}",
            rec.publisher_id,
            rec.task_index,
            *last
        );
        *last = rec.task_index;
        self.histories
            .entry((rec.publisher_id, rec.worker_id))
            .or_default()
            .push(rec);
    }

    pub fn history(&self, publisher: PublisherId, worker: WorkerId) -> &[InteractionRecord] {
        self.histories
            .get(&(publisher, worker))
            .map_or(&[], Vec::as_slice)
    }

    pub fn total_records(&self) -> usize {
        self.histories.values().map(Vec::len).sum()
    }

    pub fn set_activity(&mut self, publisher: PublisherId, worker: WorkerId, tasks: u64) {
        self.activity.insert((publisher, worker), tasks);
    }

    /// Tasks in which `publisher` interacted with `worker` during the window
    /// ending at `now`, plus background activity.
    pub fn interaction_count(
        &self,
        publisher: PublisherId,
        worker: WorkerId,
        now: TaskIndex,
        window: u64,
    ) -> u64 {
        let tasks: BTreeSet<TaskIndex> = self
            .history(publisher, worker)
            .iter()
            .filter(|r| now.saturating_sub(r.task_index) < window)
            .map(|r| r.task_index)
            .collect();
        tasks.len() as u64
            + self
                .activity
                .get(&(publisher, worker))
                .copied()
                .unwrap_or(0)
    }

    fn known_workers(&self, publisher: PublisherId) -> BTreeSet<WorkerId> {
        self.histories
            .keys()
            .chain(self.activity.keys())
            .filter(|(p, _)| *p == publisher)
            .map(|&(_, w)| w)
            .collect()
    }

    /// The publisher's familiarity with `worker` relative to the average of
    /// its other workers.
    pub fn frequency_weight(
        &self,
        publisher: PublisherId,
        worker: WorkerId,
        now: TaskIndex,
        window: u64,
    ) -> f64 {
        let others: Vec<u64> = self
            .known_workers(publisher)
            .into_iter()
            .filter(|&w| w != worker)
            .map(|w| self.interaction_count(publisher, w, now, window))
            .collect();
        let mean = if others.is_empty() {
            0.0
        } else {
            others.iter().sum::<u64>() as f64 / others.len() as f64
        };
        frequency_weight(self.interaction_count(publisher, worker, now, window), mean)
    }

    pub fn atv_value(&self, worker: WorkerId) -> f64 {
        self.atv.get(&worker).copied().unwrap_or(ATV_INITIAL)
    }

    pub(crate) fn set_atv(&mut self, worker: WorkerId, value: f64) {
        self.atv.insert(worker, value);
    }
}

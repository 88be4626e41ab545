//! Publisher-side checks applied to each uploaded update.

use super::{evaluate, Dataset, FlError, LocalUpdate, ModelState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElapsedVerdict {
    Ok,
    Lazy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoniVerdict {
    Accept,
    Reject,
}

/// Simulated proof of elapsed time: honest computation takes
/// `compute_rate * claimed_data_size`; claims more than `tolerance` short of
/// that are flagged.
pub fn elapsed_check(update: &LocalUpdate, compute_rate: f64, tolerance: f64) -> ElapsedVerdict {
    let expected = compute_rate * update.claimed_data_size as f64;
    if update.claimed_elapsed < expected * (1.0 - tolerance) {
        ElapsedVerdict::Lazy
    } else {
        ElapsedVerdict::Ok
    }
}

/// Reject iff the update lowers validation accuracy by more than `epsilon`.
pub fn roni_decision(acc_with: f64, acc_without: f64, epsilon: f64) -> RoniVerdict {
    if acc_with - acc_without < -epsilon {
        RoniVerdict::Reject
    } else {
        RoniVerdict::Accept
    }
}

/// Reject on negative influence, measured on the publisher's validation set.
pub fn roni_filter(
    global: &ModelState,
    update: &LocalUpdate,
    validation: &Dataset,
    epsilon: f64,
) -> Result<RoniVerdict, FlError> {
    let without = evaluate(global, validation)?;
    roni_filter_with_baseline(global, update, validation, epsilon, without)
}

/// [`roni_filter`] with the baseline accuracy of `global` already known.
pub fn roni_filter_with_baseline(
    global: &ModelState,
    update: &LocalUpdate,
    validation: &Dataset,
    epsilon: f64,
    baseline: f64,
) -> Result<RoniVerdict, FlError> {
    let with = evaluate(&global.applied(&update.delta), validation)?;
    Ok(roni_decision(with, baseline, epsilon))
}

//! CSV rows shared by every experiment, and their per-cell summaries.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::ids::WorkerId;

/// Bumped whenever a column is added, removed or changes meaning.
pub const CSV_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Ok,
    NoEligibleWorkers,
    CommitFailed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NoEligibleWorkers => "no_eligible_workers",
            Status::CommitFailed => "commit_failed",
        }
    }
}

/// One measurement. Optional fields are left empty in the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub experiment: &'static str,
    pub seed: u64,
    pub scheme: String,
    pub threshold: Option<f64>,
    pub emd_setting: f64,
    pub attack_strength: f64,
    pub attacker_count: usize,
    /// Training round for accuracy rows, task index for trace rows.
    pub round: u64,
    pub accuracy: Option<f64>,
    pub status: Status,
    /// The tracked worker's reputation, when one is tracked.
    pub reputation: Option<f64>,
    pub reputations: BTreeMap<WorkerId, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{field} = {value} outside [0, 1] in {experiment} seed {seed}")]
    OutOfRange {
        experiment: &'static str,
        seed: u64,
        field: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MetricRow {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |field, value| MetricError::OutOfRange {
            experiment: self.experiment,
            seed: self.seed,
            field,
            value,
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for (field, v) in [
            ("accuracy", self.accuracy),
            ("reputation", self.reputation),
            ("threshold", self.threshold),
            ("attack_strength", Some(self.attack_strength)),
        ] {
            if let Some(v) = v {
                if !unit(v) {
                    return Err(bad(field, v));
                }
            }
        }
        if let Some(&v) = self.reputations.values().find(|&&v| !unit(v)) {
            return Err(bad("reputations", v));
        }
        Ok(())
    }
}

fn real(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, real)
}

#[derive(Serialize)]
struct RawRecord<'a> {
    csv_version: u32,
    experiment: &'a str,
    seed: u64,
    scheme: &'a str,
    threshold: String,
    emd_setting: String,
    attack_strength: String,
    attacker_count: usize,
    round: u64,
    accuracy: String,
    status: &'a str,
    reputation: String,
    reputations: String,
}

/// Writes validated rows in the given order.
pub fn write_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), MetricError> {
    for r in rows {
        r.validate()?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        let reputations = r
            .reputations
            .iter()
            .map(|(w, v)| format!("{w}={}", real(*v)))
            .collect::<Vec<_>>()
            .join(";");
        w.serialize(RawRecord {
            csv_version: CSV_VERSION,
            experiment: r.experiment,
            seed: r.seed,
            scheme: &r.scheme,
            threshold: opt(r.threshold),
            emd_setting: real(r.emd_setting),
            attack_strength: real(r.attack_strength),
            attacker_count: r.attacker_count,
            round: r.round,
            accuracy: opt(r.accuracy),
            status: r.status.name(),
            reputation: opt(r.reputation),
            reputations,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    csv_version: u32,
    experiment: &'a str,
    scheme: &'a str,
    threshold: String,
    emd_setting: String,
    attack_strength: String,
    attacker_count: usize,
    round: u64,
    seeds: usize,
    ok: usize,
    accuracy_mean: String,
    accuracy_std: String,
    reputation_mean: String,
    reputation_std: String,
}

/// Mean and sample standard deviation; `None` for an empty sample, zero
/// spread for a single value.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

type CellKey = (String, String, String, String, String, usize, u64);

/// Aggregates rows over seeds, one line per distinct cell. Rows that are not
/// `ok` count towards `seeds` but not towards the statistics.
pub fn write_summary<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), MetricError> {
    let mut cells: BTreeMap<CellKey, Vec<&MetricRow>> = BTreeMap::new();
    let mut order: Vec<CellKey> = Vec::new();
    for r in rows {
        let key = (
            r.experiment.to_string(),
            r.scheme.clone(),
            opt(r.threshold),
            real(r.emd_setting),
            real(r.attack_strength),
            r.attacker_count,
            r.round,
        );
        let entry = cells.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r);
    }
    let mut w = csv::Writer::from_writer(out);
    for key in order {
        let members = &cells[&key];
        let ok: Vec<&&MetricRow> = members.iter().filter(|r| r.status == Status::Ok).collect();
        let acc: Vec<f64> = ok.iter().filter_map(|r| r.accuracy).collect();
        let rep: Vec<f64> = ok.iter().filter_map(|r| r.reputation).collect();
        let (am, asd) = mean_std(&acc).map_or((None, None), |(m, s)| (Some(m), Some(s)));
        let (rm, rsd) = mean_std(&rep).map_or((None, None), |(m, s)| (Some(m), Some(s)));
        w.serialize(SummaryRecord {
            csv_version: CSV_VERSION,
            experiment: &key.0,
            scheme: &key.1,
            threshold: key.2.clone(),
            emd_setting: key.3.clone(),
            attack_strength: key.4.clone(),
            attacker_count: key.5,
            round: key.6,
            seeds: members.len(),
            ok: ok.len(),
            accuracy_mean: opt(am),
            accuracy_std: opt(asd),
            reputation_mean: opt(rm),
            reputation_std: opt(rsd),
        })?;
    }
    w.flush()?;
    Ok(())
}

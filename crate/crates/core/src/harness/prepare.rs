//! Turning raw check-ins into per-user test and training traces.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, Timelike};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Grid;
use crate::harness::dataset::CheckinRecord;
use crate::harness::store::{TraceStore, UserTraces};
use crate::{CellId, Trace};

/// Sparse check-in datasets: the first users feed a shared scarce pool, the
/// last ones are evaluated, and everyone not selected forms the rich pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckinProtocol {
    pub min_checkins: usize,
    pub n_eval: usize,
    pub n_scarce_users: usize,
    /// Check-ins contributed per user to the scarce pool and per test trace.
    pub trace_length: usize,
}

impl Default for CheckinProtocol {
    fn default() -> Self {
        CheckinProtocol {
            min_checkins: 300,
            n_eval: 5,
            n_scarce_users: 15,
            trace_length: 300,
        }
    }
}

/// Dense cab traces, resampled to a fixed slot length per civil day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxicabProtocol {
    pub resample_minutes: u32,
    pub max_silence_minutes: u32,
    pub days_required: usize,
    pub test_days: usize,
    pub scarce_days: usize,
    pub rich_days: usize,
    /// Offset of the local civil day from UTC.
    pub utc_offset_minutes: i32,
}

impl Default for TaxicabProtocol {
    fn default() -> Self {
        TaxicabProtocol {
            resample_minutes: 5,
            max_silence_minutes: 120,
            days_required: 10,
            test_days: 3,
            scarce_days: 1,
            rich_days: 7,
            utc_offset_minutes: 0,
        }
    }
}

/// Numeric ids compare as numbers, anything else lexicographically.
pub fn compare_user_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

// Region check-ins per user in time order (file order breaks ties).
fn group_by_user<'a>(records: &'a [CheckinRecord], grid: &Grid) -> Vec<(&'a str, Vec<(&'a CheckinRecord, CellId)>)> {
    let mut by_user: BTreeMap<&str, Vec<(&CheckinRecord, CellId)>> = BTreeMap::new();
    for r in records {
        if let Some(c) = grid.quantize(r.lat, r.lon) {
            by_user.entry(r.user.as_str()).or_default().push((r, c));
        }
    }
    let mut users: Vec<_> = by_user.into_iter().collect();
    for (_, v) in &mut users {
        v.sort_by_key(|(r, _)| r.time);
    }
    users.sort_by(|a, b| compare_user_ids(a.0, b.0));
    users
}

pub fn prepare_checkin_dataset(
    records: &[CheckinRecord],
    grid: &Grid,
    protocol: &CheckinProtocol,
    shuffle: bool,
    rng: &mut dyn RngCore,
) -> Result<TraceStore> {
    if protocol.min_checkins < protocol.trace_length {
        return Err(Error::Config(format!(
            "min_checkins {} is below trace_length {}",
            protocol.min_checkins, protocol.trace_length
        )));
    }
    let users = group_by_user(records, grid);
    let wanted = protocol.n_scarce_users + protocol.n_eval;
    let qualifying: Vec<usize> = users
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| v.len() >= protocol.min_checkins)
        .map(|(i, _)| i)
        .collect();
    if qualifying.len() < wanted {
        return Err(Error::Dataset(format!(
            "{} users have at least {} check-ins in the region; {wanted} are needed",
            qualifying.len(),
            protocol.min_checkins
        )));
    }
    let selected = &qualifying[..wanted];
    let cells = |i: usize, len: usize| -> Trace { users[i].1.iter().take(len).map(|&(_, c)| c).collect() };

    let mut scarce: Vec<Trace> = selected[..protocol.n_scarce_users]
        .iter()
        .map(|&i| cells(i, protocol.trace_length))
        .collect();
    let mut rich: Vec<Trace> = (0..users.len())
        .filter(|i| !selected.contains(i))
        .map(|i| cells(i, usize::MAX))
        .collect();
    let mut tests: Vec<(String, Trace)> = selected[protocol.n_scarce_users..]
        .iter()
        .map(|&i| (users[i].0.to_string(), cells(i, protocol.trace_length)))
        .collect();
    if shuffle {
        for t in scarce.iter_mut().chain(rich.iter_mut()).chain(tests.iter_mut().map(|(_, t)| t)) {
            t.shuffle(rng);
        }
    }
    log::info!(
        "check-in dataset: {} scarce check-ins, {} rich check-ins from {} users",
        scarce.iter().map(Vec::len).sum::<usize>(),
        rich.iter().map(Vec::len).sum::<usize>(),
        rich.len()
    );
    Ok(TraceStore {
        region: *grid.region(),
        users: tests
            .into_iter()
            .map(|(id, test)| UserTraces {
                id,
                test: vec![test],
                scarce: scarce.clone(),
                rich: rich.clone(),
            })
            .collect(),
    })
}

// Resamples one civil day, or `None` if the cab is silent for too long.
// Slots before the first report take the first reported cell.
fn resample_day(reports: &[(u32, CellId)], slot_secs: u32, max_silence_secs: u32) -> Option<Trace> {
    let day = 24 * 3600;
    let (&(first_t, first_c), &(last_t, _)) = (reports.first()?, reports.last()?);
    if first_t > max_silence_secs || day - last_t > max_silence_secs {
        return None;
    }
    if reports.windows(2).any(|w| w[1].0 - w[0].0 > max_silence_secs) {
        return None;
    }
    let mut out = Vec::with_capacity((day / slot_secs) as usize);
    let mut current = first_c;
    let mut next = 0;
    for slot in 0..day / slot_secs {
        let end = (slot + 1) * slot_secs;
        while next < reports.len() && reports[next].0 < end {
            current = reports[next].1;
            next += 1;
        }
        out.push(current);
    }
    Some(out)
}

pub fn prepare_taxicab_dataset(records: &[CheckinRecord], grid: &Grid, protocol: &TaxicabProtocol) -> Result<TraceStore> {
    let slot_secs = protocol.resample_minutes * 60;
    if slot_secs == 0 || (24 * 3600) % slot_secs != 0 {
        return Err(Error::Config(format!(
            "resample_minutes {} must divide a day",
            protocol.resample_minutes
        )));
    }
    let used = protocol.test_days + protocol.rich_days.max(protocol.scarce_days);
    if protocol.test_days == 0 || used > protocol.days_required {
        return Err(Error::Config(format!(
            "{} test days plus {} training days exceed the {} days kept per user",
            protocol.test_days,
            protocol.rich_days.max(protocol.scarce_days),
            protocol.days_required
        )));
    }
    let offset = Duration::minutes(protocol.utc_offset_minutes as i64);
    let mut out = Vec::new();
    for (user, reports) in group_by_user(records, grid) {
        let mut days: BTreeMap<NaiveDate, Vec<(u32, CellId)>> = BTreeMap::new();
        for (r, c) in reports {
            let local = r.time.naive_utc() + offset;
            days.entry(local.date())
                .or_default()
                .push((local.time().num_seconds_from_midnight(), c));
        }
        let kept: Vec<Trace> = days
            .values()
            .filter_map(|d| resample_day(d, slot_secs, protocol.max_silence_minutes * 60))
            .take(protocol.days_required)
            .collect();
        if kept.len() < protocol.days_required {
            log::debug!("cab {user}: {} usable days, skipped", kept.len());
            continue;
        }
        let n = kept.len();
        out.push(UserTraces {
            id: user.to_string(),
            test: kept[n - protocol.test_days..].to_vec(),
            scarce: kept[..protocol.scarce_days].to_vec(),
            rich: kept[..protocol.rich_days].to_vec(),
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no cab has {} usable days",
            protocol.days_required
        )));
    }
    Ok(TraceStore {
        region: *grid.region(),
        users: out,
    })
}

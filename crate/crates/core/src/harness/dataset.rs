//! Raw check-in files.
//!
//! Two layouts are understood: SNAP check-in dumps (Brightkite, Gowalla),
//! one tab-separated `user  time  lat  lon  location` line per check-in,
//! and the CRAWDAD San Francisco cab traces, one file per cab with
//! space-separated `lat lon occupancy unix_time` lines.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of malformed lines above which a file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinRecord {
    pub user: String,
    pub time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// A trace store written by `lppm ingest`.
    Store,
    Snap,
    Crawdad,
}

#[derive(Debug, Clone, Default)]
pub struct Checkins {
    pub records: Vec<CheckinRecord>,
    /// Non-blank lines that could not be parsed.
    pub skipped: usize,
    pub lines: usize,
}

impl Checkins {
    fn absorb(&mut self, other: Checkins) {
        self.records.extend(other.records);
        self.skipped += other.skipped;
        self.lines += other.lines;
    }
}

fn parse_snap(line: &str) -> Option<CheckinRecord> {
    let mut f = line.split('\t');
    let user = f.next()?.trim();
    let time = DateTime::parse_from_rfc3339(f.next()?.trim()).ok()?;
    let lat: f64 = f.next()?.trim().parse().ok()?;
    let lon: f64 = f.next()?.trim().parse().ok()?;
    // Location id is required but unused.
    f.next()?;
    if user.is_empty() || !lat.is_finite() || !lon.is_finite() {
        return None;
    }
    Some(CheckinRecord {
        user: user.to_string(),
        time: time.with_timezone(&Utc),
        lat,
        lon,
    })
}

fn parse_crawdad(line: &str, cab: &str) -> Option<CheckinRecord> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 4 {
        return None;
    }
    let lat: f64 = f[0].parse().ok()?;
    let lon: f64 = f[1].parse().ok()?;
    f[2].parse::<u8>().ok()?;
    let secs: i64 = f[3].parse().ok()?;
    if !lat.is_finite() || !lon.is_finite() {
        return None;
    }
    Some(CheckinRecord {
        user: cab.to_string(),
        time: DateTime::from_timestamp(secs, 0)?,
        lat,
        lon,
    })
}

fn read_lines(path: &Path, mut parse: impl FnMut(&str) -> Option<CheckinRecord>) -> Result<Checkins> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Checkins::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match parse(&line) {
            Some(r) => out.records.push(r),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

// `new_abboip.txt` → `abboip`.
fn cab_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.strip_prefix("new_").unwrap_or(stem).to_string()
}

fn cab_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if path.is_file() && name.starts_with("new_") && name.ends_with(".txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads check-ins. For `Crawdad`, `path` is either one cab file or a
/// directory of `new_<cab>.txt` files. Malformed lines are skipped and
/// counted; more than 10% malformed is an error.
pub fn load_checkins(path: &Path, format: DatasetFormat) -> Result<Checkins> {
    let out = match format {
        DatasetFormat::Snap => read_lines(path, parse_snap)?,
        DatasetFormat::Crawdad if path.is_dir() => {
            let mut all = Checkins::default();
            for file in cab_files(path)? {
                let cab = cab_id(&file);
                all.absorb(read_lines(&file, |l| parse_crawdad(l, &cab))?);
            }
            all
        }
        DatasetFormat::Crawdad => {
            let cab = cab_id(path);
            read_lines(path, |l| parse_crawdad(l, &cab))?
        }
        DatasetFormat::Store => {
            return Err(Error::Config(
                "a trace store holds prepared traces, not raw check-ins".into(),
            ))
        }
    };
    if out.lines == 0 {
        log::warn!("{} contains no check-ins", path.display());
    } else if out.skipped as f64 > MAX_MALFORMED_FRACTION * out.lines as f64 {
        return Err(Error::Dataset(format!(
            "{}: {} of {} lines are malformed",
            path.display(),
            out.skipped,
            out.lines
        )));
    } else if out.skipped > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), out.skipped);
    }
    Ok(out)
}

//! Prepared traces on disk, so raw datasets are parsed and quantized once.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Region;
use crate::Trace;

/// Traces of one evaluated user. Training sets are kept per user because
/// the protocols differ: check-in datasets share pools across users, cab
/// datasets train on the user's own earlier days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTraces {
    pub id: String,
    pub test: Vec<Trace>,
    pub scarce: Vec<Trace>,
    pub rich: Vec<Trace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStore {
    pub region: Region,
    pub users: Vec<UserTraces>,
}

impl TraceStore {
    /// Checks that every cell id fits the region and every user has test data.
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        let n = self.region.n_cells();
        if self.users.is_empty() {
            return Err(Error::Dataset("trace store has no users".into()));
        }
        for u in &self.users {
            if u.test.iter().all(|t| t.is_empty()) {
                return Err(Error::Dataset(format!("user {} has no test traces", u.id)));
            }
            let all = u.test.iter().chain(&u.scarce).chain(&u.rich).flatten();
            if let Some(&bad) = all.into_iter().find(|&&c| c >= n) {
                return Err(Error::CellOutOfRange { id: bad, n });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let store: TraceStore = serde_json::from_reader(BufReader::new(file))?;
        store.validate()?;
        Ok(store)
    }
}

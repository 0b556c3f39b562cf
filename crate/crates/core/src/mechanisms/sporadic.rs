use rand::RngCore;

use crate::error::Result;
use crate::geo::DistMatrix;
use crate::mechanisms::{check_cell, remap_sporadic, Channel, Mechanism, Release, RemapTable};
use crate::mobility::Profile;
use crate::prob::sample_index;
use crate::CellId;

/// Stateless mechanism: draw `z̃` from the base channel and release its
/// remapped cell. The design profile is fixed at construction.
#[derive(Debug, Clone)]
pub struct SporadicMechanism {
    base: Channel,
    table: RemapTable,
    composed: Channel,
}

impl SporadicMechanism {
    pub fn new(base: Channel, pi: &Profile, d_q: &DistMatrix) -> Result<Self> {
        let (table, composed) = remap_sporadic(&base, pi, d_q)?;
        Ok(SporadicMechanism {
            base,
            table,
            composed,
        })
    }

    pub fn table(&self) -> &RemapTable {
        &self.table
    }

    pub fn composed(&self) -> &Channel {
        &self.composed
    }
}

impl Mechanism for SporadicMechanism {
    fn n_cells(&self) -> usize {
        self.base.n_inputs()
    }

    fn step(&mut self, x: CellId, rng: &mut dyn RngCore) -> Result<Release> {
        check_cell(x, self.n_cells())?;
        let tentative = sample_index(self.base.row(x), rng);
        let z = self.table.apply(tentative);
        Ok(Release {
            z,
            likelihood: self.composed.column(z).to_vec(),
        })
    }
}

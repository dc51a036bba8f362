use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which pipeline stage requested an oracle evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Adaptive,
    Bo,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initial => "initial",
            Phase::Adaptive => "adaptive",
            Phase::Bo => "bo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    /// 1-based call ordinal.
    pub ordinal: usize,
    pub phase: Phase,
    pub fingerprint_id: usize,
    pub energy: f64,
    pub best_so_far: f64,
}

/// Append-only log of every oracle evaluation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    records: Vec<LedgerRecord>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        fingerprint_id: usize,
        energy: f64,
        phase: Phase,
    ) -> Result<&LedgerRecord> {
        if !energy.is_finite() {
            return Err(Error::NonFiniteEnergy {
                index: fingerprint_id,
                energy,
            });
        }
        let best_so_far = self.best().map_or(energy, |b| b.min(energy));
        self.records.push(LedgerRecord {
            ordinal: self.records.len() + 1,
            phase,
            fingerprint_id,
            energy,
            best_so_far,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn best(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    /// The record holding the lowest energy; ties go to the earliest call.
    pub fn best_record(&self) -> Option<&LedgerRecord> {
        self.records
            .iter()
            .fold(None, |acc: Option<&LedgerRecord>, r| match acc {
                Some(a) if a.energy <= r.energy => Some(a),
                _ => Some(r),
            })
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ordinal,phase,fingerprint_id,energy,best_so_far")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.ordinal, r.phase, r.fingerprint_id, r.energy, r.best_so_far
            )?;
        }
        Ok(())
    }
}

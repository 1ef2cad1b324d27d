use std::path::Path;

use crate::error::{Error, Result};

/// Traffic of one round. The model update produced in a round is charged
/// to that round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundComm {
    pub round: usize,
    pub up_floats: u64,
    pub down_floats: u64,
    pub up_indices: u64,
    pub down_indices: u64,
    /// Workers that sent a non-empty message.
    pub participants: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommLedger {
    pub rounds: Vec<RoundComm>,
    /// Cumulative counters; `round` holds the number of rounds.
    pub totals: RoundComm,
}

impl CommLedger {
    pub fn push(&mut self, delta: RoundComm) {
        let t = &mut self.totals;
        t.up_floats += delta.up_floats;
        t.down_floats += delta.down_floats;
        t.up_indices += delta.up_indices;
        t.down_indices += delta.down_indices;
        t.participants += delta.participants;
        t.round = self.rounds.len() + 1;
        self.rounds.push(delta);
    }

    /// Sum of the per-round deltas, recomputed from scratch.
    pub fn recomputed_totals(&self) -> RoundComm {
        let mut t = RoundComm { round: self.rounds.len(), ..RoundComm::default() };
        for r in &self.rounds {
            t.up_floats += r.up_floats;
            t.down_floats += r.down_floats;
            t.up_indices += r.up_indices;
            t.down_indices += r.down_indices;
            t.participants += r.participants;
        }
        t
    }
}

/// Writes one row per round: `round,up_floats,down_floats,up_indices,down_indices,participants`.
pub fn write_ledger_csv(path: &Path, ledger: &CommLedger) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["round", "up_floats", "down_floats", "up_indices", "down_indices", "participants"])
        .map_err(csv_err)?;
    for r in &ledger.rounds {
        w.write_record([
            r.round.to_string(),
            r.up_floats.to_string(),
            r.down_floats.to_string(),
            r.up_indices.to_string(),
            r.down_indices.to_string(),
            r.participants.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::partition::Partition;
use crate::model::{ColumnGrid, ColumnId, Stencil};

/// Who talks to whom each window, derived from the stencil.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPlan {
    /// peer -> my columns whose spikes the peer needs, ascending.
    pub send: BTreeMap<u32, Vec<ColumnId>>,
    pub receive: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePlan {
    pub workers: Vec<WorkerPlan>,
}

impl ExchangePlan {
    pub fn worker(&self, w: u32) -> &WorkerPlan {
        &self.workers[w as usize]
    }

    /// Number of (sender, receiver) pairs.
    pub fn links(&self) -> usize {
        self.workers.iter().map(|w| w.send.len()).sum()
    }

    /// Peers subscribed to `column`, which is owned by `owner`.
    pub fn subscribers(&self, owner: u32, column: ColumnId) -> impl Iterator<Item = u32> + '_ {
        self.workers[owner as usize]
            .send
            .iter()
            .filter(move |(_, cols)| cols.binary_search(&column).is_ok())
            .map(|(&peer, _)| peer)
    }
}

/// Worker `w` sends column `c` to every other worker owning a column within
/// the cutoff-pruned stencil reach of `c`.
pub fn build_exchange_plan(partition: &Partition, grid: &ColumnGrid, stencil: &Stencil) -> ExchangePlan {
    let mut workers = vec![WorkerPlan::default(); partition.workers as usize];
    for w in 0..partition.workers {
        for &c in partition.columns_of(w) {
            let (cx, cy) = grid.column_coords(c);
            let mut peers = BTreeSet::new();
            for o in &stencil.offsets {
                if let Some(t) = grid.column_at(i64::from(cx) + i64::from(o.dx), i64::from(cy) + i64::from(o.dy)) {
                    let peer = partition.owner(t);
                    if peer != w {
                        peers.insert(peer);
                    }
                }
            }
            for peer in peers {
                workers[w as usize].send.entry(peer).or_default().push(c);
                workers[peer as usize].receive.insert(w);
            }
        }
    }
    ExchangePlan { workers }
}

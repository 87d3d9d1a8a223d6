use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ledger::{Digest, TxKind};

use super::TrajectoryEntry;

/// A `supersedes` link naming no earlier entry of the same trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingReference {
    pub height: u64,
    pub tx_id: Digest,
    pub supersedes: Digest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentView {
    pub entries: Vec<TrajectoryEntry>,
    pub warnings: Vec<DanglingReference>,
}

/// Replays a height-ordered change log.
///
/// An entry is live iff it is not a DELETE and no later entry supersedes it.
/// A MODIFY with a dangling link stays live; a dangling DELETE removes nothing.
pub fn materialize_current_view(entries: &[TrajectoryEntry]) -> CurrentView {
    let mut seen: HashSet<Digest> = HashSet::with_capacity(entries.len());
    let mut superseded: HashMap<Digest, u64> = HashMap::new();
    let mut warnings = Vec::new();
    for e in entries {
        if let Some(target) = e.supersedes {
            if seen.contains(&target) {
                superseded.entry(target).or_insert(e.height);
            } else {
                warnings.push(DanglingReference {
                    height: e.height,
                    tx_id: e.tx_id,
                    supersedes: target,
                });
            }
        }
        seen.insert(e.tx_id);
    }
    let live = entries
        .iter()
        .filter(|e| e.kind != TxKind::Delete && !superseded.contains_key(&e.tx_id))
        .cloned()
        .collect();
    CurrentView {
        entries: live,
        warnings,
    }
}

//! Small sorted ID sets.

use alloc::vec::Vec;
use core::fmt;

use crate::rendezvous::AgentId;

/// A set of agent IDs kept as a sorted, deduplicated vector. The sets in
/// this protocol hold at most a few dozen IDs, so this beats a tree.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IdSet(Vec<AgentId>);

impl IdSet {
    pub const fn new() -> IdSet {
        IdSet(Vec::new())
    }

    pub fn singleton(id: AgentId) -> IdSet {
        IdSet(alloc::vec![id])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Returns whether `id` was new.
    pub fn insert(&mut self, id: AgentId) -> bool {
        match self.0.binary_search(&id) {
            Ok(_) => false,
            Err(i) => {
                self.0.insert(i, id);
                true
            }
        }
    }

    pub fn extend<I: IntoIterator<Item = AgentId>>(&mut self, ids: I) {
        for id in ids {
            self.insert(id);
        }
    }

    /// Inserts IDs given in ascending order with one merged walk. Returns
    /// whether any was new.
    pub fn merge_sorted<I: IntoIterator<Item = AgentId>>(&mut self, ids: I) -> bool {
        let mut j = 0;
        let mut grew = false;
        for id in ids {
            while j < self.0.len() && self.0[j] < id {
                j += 1;
            }
            if j == self.0.len() || self.0[j] != id {
                self.0.insert(j, id);
                grew = true;
            }
        }
        grew
    }

    /// Whether every ID of an ascending sequence is present.
    pub fn contains_sorted<I: IntoIterator<Item = AgentId>>(&self, ids: I) -> bool {
        let mut j = 0;
        for id in ids {
            while j < self.0.len() && self.0[j] < id {
                j += 1;
            }
            if j == self.0.len() || self.0[j] != id {
                return false;
            }
        }
        true
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }

    pub fn first(&self) -> Option<AgentId> {
        self.0.first().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[AgentId] {
        &self.0
    }

    pub fn is_superset_of(&self, other: &IdSet) -> bool {
        other.iter().all(|x| self.contains(x))
    }

    pub fn intersection_len(&self, other: &IdSet) -> usize {
        self.iter().filter(|&x| other.contains(x)).count()
    }
}

impl FromIterator<AgentId> for IdSet {
    fn from_iter<I: IntoIterator<Item = AgentId>>(iter: I) -> IdSet {
        let mut v: Vec<AgentId> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        IdSet(v)
    }
}

impl fmt::Debug for IdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.iter()).finish()
    }
}

impl fmt::Display for IdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

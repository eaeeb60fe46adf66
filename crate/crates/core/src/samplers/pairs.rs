use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ItemId;

/// Unordered candidate pairs, always stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSet {
    /// Every pair over items `0..n`.
    All { n: usize },
    /// Explicit pairs, sorted and deduplicated.
    Listed(Vec<(ItemId, ItemId)>),
}

impl PairSet {
    pub fn all(n: usize) -> Self {
        PairSet::All { n }
    }

    /// Normalizes orientation, drops self-pairs, sorts and deduplicates.
    pub fn listed<I: IntoIterator<Item = (ItemId, ItemId)>>(pairs: I) -> Self {
        let mut v: Vec<(ItemId, ItemId)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        v.sort_unstable();
        v.dedup();
        PairSet::Listed(v)
    }

    pub fn len(&self) -> usize {
        match self {
            PairSet::All { n } => n * n.saturating_sub(1) / 2,
            PairSet::Listed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `k`-th pair in lexicographic order.
    pub fn nth(&self, k: usize) -> Option<(ItemId, ItemId)> {
        match self {
            PairSet::Listed(v) => v.get(k).copied(),
            PairSet::All { n } => {
                let mut k = k;
                for i in 0..n.saturating_sub(1) {
                    let row = n - 1 - i;
                    if k < row {
                        return Some((i, i + 1 + k));
                    }
                    k -= row;
                }
                None
            }
        }
    }

    pub fn contains(&self, i: ItemId, j: ItemId) -> bool {
        let (a, b) = (i.min(j), i.max(j));
        match self {
            PairSet::All { n } => a != b && b < *n,
            PairSet::Listed(v) => v.binary_search(&(a, b)).is_ok(),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = (ItemId, ItemId)> + '_> {
        match self {
            PairSet::All { n } => {
                let n = *n;
                Box::new((0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j))))
            }
            PairSet::Listed(v) => Box::new(v.iter().copied()),
        }
    }

    /// Items that appear in at least one pair, ascending.
    pub fn items(&self) -> Vec<ItemId> {
        match self {
            PairSet::All { n } if *n >= 2 => (0..*n).collect(),
            PairSet::All { .. } => Vec::new(),
            PairSet::Listed(v) => {
                let mut items: Vec<ItemId> = v.iter().flat_map(|&(i, j)| [i, j]).collect();
                items.sort_unstable();
                items.dedup();
                items
            }
        }
    }

    /// Partners of `i`, ascending.
    pub fn partners(&self, i: ItemId) -> Vec<ItemId> {
        match self {
            PairSet::All { n } => (0..*n).filter(|&j| j != i).collect(),
            PairSet::Listed(v) => {
                let mut out: Vec<ItemId> = v
                    .iter()
                    .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
                    .collect();
                out.sort_unstable();
                out
            }
        }
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(ItemId, ItemId)> {
        if self.is_empty() {
            return None;
        }
        self.nth(rng.random_range(0..self.len()))
    }
}

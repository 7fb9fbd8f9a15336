//! Row-expansion plans: orderings of (possibly repeated) channel indices in
//! which every unordered channel pair appears vertically adjacent at least
//! once, so a convolution kernel can see every cross-channel correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowExpansionPlan {
    /// Channel index per output row.
    pub sequence: Vec<usize>,
    /// Whether the last and first rows count as neighbors.
    pub circular: bool,
}

impl RowExpansionPlan {
    /// Wraps an explicit row sequence (e.g. a fixed 42-row layout from
    /// config). Pair coverage is not enforced here; check it with
    /// [`RowExpansionPlan::covers_all_pairs`] if required.
    pub fn from_sequence(sequence: Vec<usize>, circular: bool) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::InvalidParameter("empty row sequence".into()));
        }
        Ok(Self { sequence, circular })
    }

    /// True when every unordered pair of `n_channels` is adjacent at least
    /// once (wrap-around counts when circular).
    pub fn covers_all_pairs(&self, n_channels: usize) -> bool {
        let mut seen = vec![false; n_channels * n_channels];
        let mut mark = |a: usize, b: usize| {
            if a < n_channels && b < n_channels && a != b {
                seen[a * n_channels + b] = true;
                seen[b * n_channels + a] = true;
            }
        };
        for pair in self.sequence.windows(2) {
            mark(pair[0], pair[1]);
        }
        if self.circular && self.sequence.len() > 1 {
            mark(*self.sequence.last().unwrap(), self.sequence[0]);
        }
        for a in 0..n_channels {
            for b in (a + 1)..n_channels {
                if !seen[a * n_channels + b] {
                    return false;
                }
            }
        }
        true
    }
}

/// Builds a circular plan as an Eulerian circuit over the complete graph on
/// `n_channels` vertices.
///
/// When `n_channels` is even every vertex has odd degree, so a perfect
/// matching of duplicate edges (chosen by the seeded shuffle) is added
/// first; that is the minimum duplication that evens all degrees. The
/// circuit itself is Hierholzer's algorithm with smallest-index-first
/// tie-breaking. For 10 channels the result is a 50-row circular plan
/// covering all 45 pairs.
pub fn build_expansion_plan(n_channels: usize, seed_val: u64) -> Result<RowExpansionPlan> {
    if n_channels < 2 {
        return Err(Error::InvalidParameter(format!(
            "row expansion needs at least 2 channels, got {n_channels}"
        )));
    }

    // Multigraph adjacency: neighbor -> multiplicity, smallest index first.
    let mut adj: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_channels];
    let add_edge = |adj: &mut Vec<BTreeMap<usize, usize>>, a: usize, b: usize| {
        *adj[a].entry(b).or_insert(0) += 1;
        *adj[b].entry(a).or_insert(0) += 1;
    };
    let mut edge_count = 0usize;
    for a in 0..n_channels {
        for b in (a + 1)..n_channels {
            add_edge(&mut adj, a, b);
            edge_count += 1;
        }
    }
    if (n_channels - 1) % 2 == 1 {
        // All degrees odd: duplicate a perfect matching.
        let mut vertices: Vec<usize> = (0..n_channels).collect();
        let mut rng = seed::rng(seed::derive(seed_val, "expansion-plan"));
        vertices.shuffle(&mut rng);
        for pair in vertices.chunks(2) {
            add_edge(&mut adj, pair[0], pair[1]);
            edge_count += 1;
        }
    }

    // Hierholzer, iterative form.
    let mut stack = vec![0usize];
    let mut circuit = Vec::with_capacity(edge_count + 1);
    while let Some(&v) = stack.last() {
        if let Some((&u, _)) = adj[v].iter().next() {
            let m = adj[v].get_mut(&u).unwrap();
            *m -= 1;
            if *m == 0 {
                adj[v].remove(&u);
            }
            let m = adj[u].get_mut(&v).unwrap();
            *m -= 1;
            if *m == 0 {
                adj[u].remove(&v);
            }
            stack.push(u);
        } else {
            circuit.push(stack.pop().unwrap());
        }
    }
    circuit.reverse();

    debug_assert_eq!(circuit.len(), edge_count + 1);
    debug_assert_eq!(circuit.first(), circuit.last());
    circuit.pop();

    let plan = RowExpansionPlan {
        sequence: circuit,
        circular: true,
    };
    debug_assert!(plan.covers_all_pairs(n_channels));
    Ok(plan)
}

//! Cyclic neighbourhoods over contour points.

/// Default one-sided neighbourhood radius.
pub const DEFAULT_RING_K: usize = 8;

/// Cyclic graph where node `v` is adjacent to `v±1..=v±k` (mod `m`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingGraph {
    m: usize,
    k: usize,
}

/// Builds the ring graph; a radius that would wrap onto itself is clamped
/// so that every node is adjacent to every other node exactly once.
pub fn build_ring_graph(m: usize, k: usize) -> RingGraph {
    let m = m.max(1);
    let k = k.max(1).min(m / 2).max(usize::from(m > 1));
    RingGraph { m, k }
}

impl RingGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Effective one-sided radius after clamping.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Adjacency lists for every node, with `v` itself prepended.
    pub fn closed_neighborhoods(&self) -> Vec<Vec<usize>> {
        (0..self.m)
            .map(|v| {
                let mut n = vec![v];
                n.extend(self.neighbors(v));
                n
            })
            .collect()
    }

    /// Neighbours of `v` without `v` itself, each listed once, ordered
    /// `v-k..v-1, v+1..v+k`.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let m = self.m;
        let mut out = Vec::with_capacity(2 * self.k);
        for d in (1..=self.k).rev() {
            out.push((v + m - d % m) % m);
        }
        for d in 1..=self.k {
            out.push((v + d) % m);
        }
        out.retain(|&u| u != v);
        let mut seen = std::collections::BTreeSet::new();
        out.retain(|&u| seen.insert(u));
        out
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }
}

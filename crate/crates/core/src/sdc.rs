//! Spatial domain consolidation: merge 8-adjacent, mutually similar retained
//! tokens of one frame into mean anchors.

use serde::{Deserialize, Serialize};

use crate::scoring::cosine_distance;
use crate::threshold::{otsu_threshold, OtsuConfig, ThresholdReport};
use crate::token::{FrameEntry, Origin, RetainedToken};

/// Disjoint-set forest with union by size and path compression.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[i] != root {
            let next = self.parent[i];
            self.parent[i] = root;
            i = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }

    /// Groups of element indices, each ascending, ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut slot = vec![usize::MAX; self.parent.len()];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(i);
        }
        groups
    }
}

/// Two retained tokens whose origins are 8-adjacent, with their distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborPair {
    pub a: usize,
    pub b: usize,
    pub distance: f32,
}

/// All unordered pairs of tokens in `entry` at Chebyshev distance 1, with
/// `a < b`, sorted by `(a, b)`.
pub fn neighbor_pairs(entry: &FrameEntry) -> Vec<NeighborPair> {
    let tokens = &entry.tokens;
    if tokens.len() < 2 {
        return Vec::new();
    }
    let rows = tokens.iter().map(|t| t.origin.row).max().unwrap() as usize + 1;
    let cols = tokens.iter().map(|t| t.origin.col).max().unwrap() as usize + 1;
    let mut lookup = vec![usize::MAX; rows * cols];
    for (i, t) in tokens.iter().enumerate() {
        lookup[t.origin.row as usize * cols + t.origin.col as usize] = i;
    }
    let at = |r: usize, c: isize| -> Option<usize> {
        if r >= rows || c < 0 || c as usize >= cols {
            return None;
        }
        let idx = lookup[r * cols + c as usize];
        (idx != usize::MAX).then_some(idx)
    };

    let mut pairs = Vec::new();
    for (a, t) in tokens.iter().enumerate() {
        let (r, c) = (t.origin.row as usize, t.origin.col as isize);
        // Forward half of the 8-neighborhood: each pair is visited once.
        for (dr, dc) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
            if let Some(b) = at(r + dr, c + dc) {
                pairs.push(NeighborPair {
                    a: a.min(b),
                    b: a.max(b),
                    distance: cosine_distance(&t.feature, &tokens[b].feature),
                });
            }
        }
    }
    pairs.sort_by_key(|p| (p.a, p.b));
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    /// One anchor per component, sorted by origin.
    pub anchors: Vec<RetainedToken>,
    /// Member token indices of each component, aligned with `anchors`.
    pub components: Vec<Vec<usize>>,
    pub report: ThresholdReport,
    pub pair_count: usize,
}

/// Consolidates `entry` with an Otsu threshold over its pair distances.
pub fn sdc_consolidate(entry: &FrameEntry, config: OtsuConfig) -> Consolidation {
    let pairs = neighbor_pairs(entry);
    let report = if pairs.is_empty() {
        ThresholdReport::no_samples()
    } else {
        let distances: Vec<f32> = pairs.iter().map(|p| p.distance).collect();
        otsu_threshold(&distances, config).expect("pair distances are finite and non-empty")
    };
    let mut out = consolidate_pairs(entry, &pairs, report.effective_threshold());
    out.report = report;
    out
}

/// Consolidates `entry`, linking pairs with `distance <= threshold`.
pub fn consolidate_with_threshold(entry: &FrameEntry, threshold: f64) -> Consolidation {
    let pairs = neighbor_pairs(entry);
    consolidate_pairs(entry, &pairs, threshold)
}

fn consolidate_pairs(entry: &FrameEntry, pairs: &[NeighborPair], threshold: f64) -> Consolidation {
    let mut sets = UnionFind::new(entry.len());
    for p in pairs.iter().filter(|p| f64::from(p.distance) <= threshold) {
        sets.union(p.a, p.b);
    }
    // Members are ascending and tokens are row-major, so each group's first
    // member has the smallest origin and groups come out in anchor order.
    let components = sets.groups();
    let anchors = components
        .iter()
        .map(|members| mean_anchor(entry, members))
        .collect();
    Consolidation {
        anchors,
        components,
        report: ThresholdReport::no_samples(),
        pair_count: pairs.len(),
    }
}

/// Unweighted mean of the member features; weight is the members' total.
pub fn mean_anchor(entry: &FrameEntry, members: &[usize]) -> RetainedToken {
    let first = &entry.tokens[members[0]];
    if members.len() == 1 {
        return first.clone();
    }
    let mut acc = vec![0.0f64; first.feature.len()];
    for &m in members {
        for (a, &v) in acc.iter_mut().zip(&entry.tokens[m].feature) {
            *a += f64::from(v);
        }
    }
    let n = members.len() as f64;
    let origin: Origin = members
        .iter()
        .map(|&m| entry.tokens[m].origin)
        .min()
        .unwrap();
    RetainedToken {
        feature: acc.into_iter().map(|a| (a / n) as f32).collect(),
        origin,
        weight: members.iter().map(|&m| entry.tokens[m].weight).sum(),
    }
}

/// Turns a consolidation into the long-tier entry for that frame.
pub fn into_entry(frame_index: u64, consolidation: Consolidation) -> FrameEntry {
    FrameEntry {
        frame_index,
        tokens: consolidation.anchors,
    }
}

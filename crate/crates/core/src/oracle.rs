//! Slow reference implementations and the checks that compare the fast
//! paths against them.
//!
//! The references share only the distance kernel with the fast code. They
//! find neighbors by scanning every cell pair, threshold by sorting and
//! sweeping every split, and build components by breadth-first search.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;

use crate::rng::{stream_rng, unit_vector};
use crate::scoring::{cosine_distance, ScoreField, ScoreGrid};
use crate::sdc::{sdc_consolidate, Consolidation};
use crate::tas::tas_select;
use crate::threshold::{otsu_threshold, OtsuConfig, ThresholdReport};
use crate::token::{FrameEntry, Origin, RetainedToken, TokenGrid};

/// Best split found by sorting and evaluating every gap between distinct values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSplit {
    /// Midpoint of the winning gap; the lower class is `{x <= threshold}`.
    pub threshold: f64,
    pub inter_class_variance: f64,
}

/// Exact Otsu: `None` when all samples are equal.
pub fn exact_otsu(samples: &[f64]) -> Option<ExactSplit> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    let mut best: Option<ExactSplit> = None;
    let mut below = 0.0;
    for i in 0..sorted.len().saturating_sub(1) {
        below += sorted[i];
        if sorted[i] == sorted[i + 1] {
            continue;
        }
        let k = (i + 1) as f64;
        let (w1, w2) = (k / n, (n - k) / n);
        let (m1, m2) = (below / k, (total - below) / (n - k));
        let v = w1 * w2 * (m1 - m2).powi(2);
        if best.is_none_or(|b| v > b.inter_class_variance) {
            let mid = sorted[i] + (sorted[i + 1] - sorted[i]) / 2.0;
            let threshold = if mid < sorted[i + 1] { mid } else { sorted[i] };
            best = Some(ExactSplit {
                threshold,
                inter_class_variance: v,
            });
        }
    }
    best
}

/// Effective comparison threshold the reference applies to a sample set,
/// mirroring the degenerate-distribution rule: flat sets cut at 2.0.
pub fn reference_cut(samples: &[f64], flat_epsilon: f64) -> f64 {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match exact_otsu(samples) {
        Some(split) if hi - lo >= flat_epsilon => split.threshold,
        _ => 2.0,
    }
}

/// Minimum distance from each cell of `current` to every cell of `other`
/// within Chebyshev distance 1, found by scanning all cell pairs.
pub fn brute_scores(current: &TokenGrid, other: &TokenGrid) -> ScoreGrid {
    let (h, w) = (current.height(), current.width());
    let mut values = vec![f32::INFINITY; h * w];
    for r in 0..h {
        for c in 0..w {
            for i in 0..h {
                for j in 0..w {
                    if r.abs_diff(i) <= 1 && c.abs_diff(j) <= 1 {
                        let d = cosine_distance(current.token(r, c), other.token(i, j));
                        values[r * w + c] = values[r * w + c].min(d);
                    }
                }
            }
        }
    }
    ScoreGrid {
        height: h,
        width: w,
        values,
    }
}

/// Reference survivor mask for `current` given optional neighbors.
pub fn brute_tas_mask(
    previous: Option<&TokenGrid>,
    current: &TokenGrid,
    next: Option<&TokenGrid>,
    flat_epsilon: f64,
) -> Vec<bool> {
    let Some(previous) = previous else {
        return vec![true; current.len()];
    };
    let side = |other: &TokenGrid| {
        let s: Vec<f64> = brute_scores(current, other)
            .values
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let cut = reference_cut(&s, flat_epsilon);
        s.into_iter().map(move |v| v > cut).collect::<Vec<_>>()
    };
    let back = side(previous);
    match next {
        Some(next) => back.iter().zip(side(next)).map(|(a, b)| *a || b).collect(),
        None => back,
    }
}

/// Reference components: BFS over pairs of 8-adjacent tokens whose distance
/// passes the exact-Otsu cut. Components are sorted member lists, ordered by
/// first member.
pub fn bfs_components(entry: &FrameEntry, flat_epsilon: f64) -> Vec<Vec<usize>> {
    let tokens = &entry.tokens;
    let n = tokens.len();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (oa, ob) = (tokens[a].origin, tokens[b].origin);
            if oa.row.abs_diff(ob.row) <= 1 && oa.col.abs_diff(ob.col) <= 1 {
                edges.push((
                    a,
                    b,
                    f64::from(cosine_distance(&tokens[a].feature, &tokens[b].feature)),
                ));
            }
        }
    }
    let cut = if edges.is_empty() {
        2.0
    } else {
        reference_cut(&edges.iter().map(|e| e.2).collect::<Vec<_>>(), flat_epsilon)
    };
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b, d) in &edges {
        if d <= cut {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut members = Vec::new();
        while let Some(v) = queue.pop_front() {
            members.push(v);
            for &u in &adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// First disagreement found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub check: &'static str,
    pub trial: usize,
    pub detail: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} trial {}: {}", self.check, self.trial, self.detail)
    }
}

/// Compares a score function against [`brute_scores`]; reports the first
/// differing `(row, col)`.
pub fn compare_scores(
    trial: usize,
    current: &TokenGrid,
    other: &TokenGrid,
    fast: impl Fn(&TokenGrid, &TokenGrid) -> ScoreGrid,
) -> Result<(), Mismatch> {
    let got = fast(current, other);
    let want = brute_scores(current, other);
    for r in 0..current.height() {
        for c in 0..current.width() {
            let (g, w) = (got.get(r, c), want.get(r, c));
            if g.to_bits() != w.to_bits() {
                return Err(Mismatch {
                    check: "scores",
                    trial,
                    detail: format!(
                        "first mismatch at (row {r}, col {c}): fast {g} vs reference {w}"
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Sample sets for the threshold check: sizes in `[8, 512]`, alternating
/// unimodal and bimodal shapes.
pub fn random_samples(seed: u64, trial: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, trial as u64);
    let n = rng.random_range(8..=512);
    let bimodal = trial % 2 == 1;
    let (c1, c2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..2.0));
    let spread = rng.random_range(0.01..0.3);
    let share = rng.random_range(0.2..0.8);
    (0..n)
        .map(|_| {
            let center = if bimodal && rng.random_bool(share) {
                c2
            } else {
                c1
            };
            center + spread * (rng.random::<f64>() - 0.5) * 2.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuComparison {
    pub fast: ThresholdReport,
    pub exact: ExactSplit,
}

/// Checks the histogram threshold against the exact sweep: within one bin
/// width, and achieving at least `variance_ratio` of the exact optimum.
pub fn check_otsu(
    trial: usize,
    samples: &[f64],
    config: OtsuConfig,
    variance_ratio: f64,
) -> Result<OtsuComparison, Mismatch> {
    let fail = |detail: String| Mismatch {
        check: "otsu",
        trial,
        detail,
    };
    let fast = otsu_threshold(samples, config).map_err(|e| fail(e.to_string()))?;
    let exact = exact_otsu(samples).ok_or_else(|| fail("reference found no split".into()))?;
    if fast.degenerate {
        return Err(fail("fast path reported a degenerate distribution".into()));
    }
    if (fast.threshold - exact.threshold).abs() > fast.bin_width {
        return Err(fail(format!(
            "threshold {} vs exact {} exceeds bin width {}",
            fast.threshold, exact.threshold, fast.bin_width
        )));
    }
    if fast.inter_class_variance < variance_ratio * exact.inter_class_variance {
        return Err(fail(format!(
            "variance {} below {} x exact {}",
            fast.inter_class_variance, variance_ratio, exact.inter_class_variance
        )));
    }
    Ok(OtsuComparison { fast, exact })
}

/// A random grid of unit vectors.
pub fn random_grid(
    seed: u64,
    stream: u64,
    frame_index: u64,
    h: usize,
    w: usize,
    d: usize,
) -> TokenGrid {
    let mut rng = stream_rng(seed, stream);
    let data = (0..h * w).flat_map(|_| unit_vector(&mut rng, d)).collect();
    TokenGrid::new(frame_index, h, w, d, data).expect("valid grid")
}

/// A `(previous, current, next)` triple. Half the trials correlate the
/// frames (small perturbations of a shared base with some cells replaced),
/// so thresholds land inside realistic bimodal score distributions.
pub fn random_triple(seed: u64, trial: usize, h: usize, w: usize, d: usize) -> [TokenGrid; 3] {
    let stream = (trial as u64) << 8;
    if trial.is_multiple_of(2) {
        return [0, 1, 2].map(|k| random_grid(seed, stream + k, k, h, w, d));
    }
    let base = random_grid(seed, stream, 0, h, w, d);
    let mut rng = stream_rng(seed, stream + 3);
    let change = rng.random_range(0.05..0.6);
    [0u64, 1, 2].map(|k| {
        let mut data = base.data().to_vec();
        for cell in 0..h * w {
            let slot = &mut data[cell * d..(cell + 1) * d];
            if k > 0 && rng.random_bool(change) {
                slot.copy_from_slice(&unit_vector(&mut rng, d));
            } else {
                for v in slot.iter_mut() {
                    *v += 0.05 * (rng.random::<f32>() - 0.5);
                }
            }
        }
        TokenGrid::new(k, h, w, d, data).expect("valid grid")
    })
}

/// Fast temporal selection against [`brute_tas_mask`] on one triple.
pub fn check_tas(
    trial: usize,
    triple: &[TokenGrid; 3],
    config: OtsuConfig,
) -> Result<usize, Mismatch> {
    let [prev, cur, next] = triple;
    let fail = |detail: String| Mismatch {
        check: "tas",
        trial,
        detail,
    };
    let mut field = ScoreField::new(cur.frame_index());
    field.backward =
        Some(crate::scoring::backward_scores(cur, prev).map_err(|e| fail(e.to_string()))?);
    field.forward =
        Some(crate::scoring::forward_scores(cur, next).map_err(|e| fail(e.to_string()))?);
    let out = tas_select(cur, &field, config).map_err(|e| fail(e.to_string()))?;
    let mut fast = vec![false; cur.len()];
    for t in &out.entry.tokens {
        fast[t.origin.row as usize * cur.width() + t.origin.col as usize] = true;
    }
    let want = brute_tas_mask(Some(prev), cur, Some(next), config.flat_epsilon);
    if let Some(i) = (0..fast.len()).find(|&i| fast[i] != want[i]) {
        return Err(fail(format!(
            "survivor mismatch at (row {}, col {}): fast {} vs reference {}",
            i / cur.width(),
            i % cur.width(),
            fast[i],
            want[i]
        )));
    }
    Ok(out.entry.len())
}

/// A random retained subset of an `h x w` grid. Features are drawn around a
/// handful of prototypes so that spatial clusters exist.
pub fn random_retained(seed: u64, trial: usize, h: usize, w: usize, d: usize) -> FrameEntry {
    let mut rng = stream_rng(seed, (trial as u64) << 8 | 0x5d);
    let keep = rng.random_range(0.2..1.0);
    let prototypes: Vec<Vec<f32>> = (0..rng.random_range(1..6))
        .map(|_| unit_vector(&mut rng, d))
        .collect();
    let mut tokens = Vec::new();
    for row in 0..h as u32 {
        for col in 0..w as u32 {
            if !rng.random_bool(keep) {
                continue;
            }
            // Prototype regions are horizontal bands, so neighbors tend to agree.
            let proto = &prototypes[(row as usize * prototypes.len()) / h];
            let jitter = rng.random_range(0.0..0.5f32);
            let noise = unit_vector(&mut rng, d);
            let feature = proto
                .iter()
                .zip(&noise)
                .map(|(p, n)| p + jitter * n)
                .collect();
            tokens.push(RetainedToken {
                feature,
                origin: Origin {
                    frame_index: 0,
                    row,
                    col,
                },
                weight: 1,
            });
        }
    }
    FrameEntry {
        frame_index: 0,
        tokens,
    }
}

/// Union-find consolidation against [`bfs_components`]: same components,
/// anchors equal to member means within `relative_tolerance`, weights conserved.
pub fn check_sdc(
    trial: usize,
    entry: &FrameEntry,
    config: OtsuConfig,
    relative_tolerance: f64,
) -> Result<Consolidation, Mismatch> {
    let fail = |detail: String| Mismatch {
        check: "sdc",
        trial,
        detail,
    };
    let out = sdc_consolidate(entry, config);
    let mut fast = out.components.clone();
    let mut want = bfs_components(entry, config.flat_epsilon);
    fast.sort();
    want.sort();
    if fast != want {
        let first = fast
            .iter()
            .zip(&want)
            .position(|(a, b)| a != b)
            .unwrap_or(fast.len().min(want.len()));
        return Err(fail(format!(
            "{} vs {} components; first differing component {:?} vs {:?}",
            fast.len(),
            want.len(),
            fast.get(first),
            want.get(first)
        )));
    }
    for (anchor, members) in out.anchors.iter().zip(&out.components) {
        for k in 0..anchor.feature.len() {
            let mean = members
                .iter()
                .map(|&m| f64::from(entry.tokens[m].feature[k]))
                .sum::<f64>()
                / members.len() as f64;
            let got = f64::from(anchor.feature[k]);
            if (got - mean).abs() > relative_tolerance * mean.abs().max(1e-6) {
                return Err(fail(format!(
                    "anchor at {:?} feature {k}: {got} vs mean {mean}",
                    anchor.origin
                )));
            }
        }
    }
    let weights: u64 = out.anchors.iter().map(|a| u64::from(a.weight)).sum();
    if weights != entry.total_weight() {
        return Err(fail(format!(
            "weights {weights} vs input {}",
            entry.total_weight()
        )));
    }
    Ok(out)
}

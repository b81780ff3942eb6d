//! Node sufficient statistics and the loss terms derived from them.
//!
//! Every loss of a node is a function of its [`NodeStats`]: the numerical
//! SSE comes from per-feature sums and sums of squares, the categorical mode
//! loss from per-feature category counts and the fairness deviation from
//! per-attribute group counts. Statistics are additive, which is what makes
//! threshold scans incremental.

use crate::data::{Dataset, SensitiveProfile};
use crate::error::{Error, Result};

/// Default ε in the mixed-type weighting denominator.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Shape information shared by all statistics of one dataset.
///
/// Numerical sums are accumulated about a per-feature reference point (the
/// column mean) to keep `sumsq - sum²/n` well conditioned; SSE does not
/// depend on the reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsLayout {
    pub shift: Vec<f64>,
    pub cat_cards: Vec<usize>,
    pub group_cards: Vec<usize>,
}

impl StatsLayout {
    pub fn new(ds: &Dataset) -> Self {
        let n = ds.n() as f64;
        Self {
            shift: (0..ds.d_num()).map(|f| ds.num_col(f).iter().sum::<f64>() / n).collect(),
            cat_cards: (0..ds.d_cat()).map(|j| ds.cat_cardinality(j)).collect(),
            group_cards: (0..ds.n_sensitive()).map(|u| ds.group_cardinality(u)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub n: usize,
    /// Per-feature sums of `x - shift`.
    pub sum: Vec<f64>,
    /// Per-feature sums of `(x - shift)²`.
    pub sumsq: Vec<f64>,
    /// `cat_counts[j][g]`: samples with category `g` in feature `j`.
    pub cat_counts: Vec<Vec<usize>>,
    /// `group_counts[u][g]`: samples in group `g` of attribute `u`.
    pub group_counts: Vec<Vec<usize>>,
}

impl NodeStats {
    pub fn empty(layout: &StatsLayout) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; layout.shift.len()],
            sumsq: vec![0.0; layout.shift.len()],
            cat_counts: layout.cat_cards.iter().map(|&r| vec![0; r]).collect(),
            group_counts: layout.group_cards.iter().map(|&r| vec![0; r]).collect(),
        }
    }

    pub fn from_indices(ds: &Dataset, layout: &StatsLayout, indices: &[usize]) -> Self {
        let mut s = Self::empty(layout);
        for &i in indices {
            s.push(ds, layout, i);
        }
        s
    }

    #[inline]
    pub fn push(&mut self, ds: &Dataset, layout: &StatsLayout, i: usize) {
        self.n += 1;
        for (f, shift) in layout.shift.iter().enumerate() {
            let d = ds.num_col(f)[i] - shift;
            self.sum[f] += d;
            self.sumsq[f] += d * d;
        }
        for (j, counts) in self.cat_counts.iter_mut().enumerate() {
            counts[ds.cat_col(j)[i] as usize] += 1;
        }
        for (u, counts) in self.group_counts.iter_mut().enumerate() {
            counts[ds.sens_col(u)[i] as usize] += 1;
        }
    }

    pub fn add_assign(&mut self, other: &NodeStats) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        for (a, b) in self.cat_counts.iter_mut().zip(&other.cat_counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.group_counts.iter_mut().zip(&other.group_counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Overwrites `self` with `whole - part`; `part` must be a subset of `whole`.
    pub fn assign_difference(&mut self, whole: &NodeStats, part: &NodeStats) {
        self.n = whole.n - part.n;
        for ((d, a), b) in self.sum.iter_mut().zip(&whole.sum).zip(&part.sum) {
            *d = a - b;
        }
        for ((d, a), b) in self.sumsq.iter_mut().zip(&whole.sumsq).zip(&part.sumsq) {
            *d = a - b;
        }
        for ((d, a), b) in self.cat_counts.iter_mut().zip(&whole.cat_counts).zip(&part.cat_counts) {
            for ((x, y), z) in d.iter_mut().zip(a).zip(b) {
                *x = y - z;
            }
        }
        for ((d, a), b) in self
            .group_counts
            .iter_mut()
            .zip(&whole.group_counts)
            .zip(&part.group_counts)
        {
            for ((x, y), z) in d.iter_mut().zip(a).zip(b) {
                *x = y - z;
            }
        }
    }

    pub fn clear(&mut self) {
        self.n = 0;
        self.sum.iter_mut().for_each(|x| *x = 0.0);
        self.sumsq.iter_mut().for_each(|x| *x = 0.0);
        self.cat_counts.iter_mut().flatten().for_each(|x| *x = 0);
        self.group_counts.iter_mut().flatten().for_each(|x| *x = 0);
    }
}

#[inline]
pub(crate) fn sse_of(stats: &NodeStats) -> f64 {
    if stats.n == 0 {
        return 0.0;
    }
    let n = stats.n as f64;
    stats
        .sum
        .iter()
        .zip(&stats.sumsq)
        .map(|(s, q)| (q - s * s / n).max(0.0))
        .sum()
}

/// Within-node sum of squared distances to the node mean, over numerical
/// features only.
pub fn numerical_sse(stats: &NodeStats) -> Result<f64> {
    if stats.n == 0 {
        return Err(Error::InvalidInput("SSE of an empty node".into()));
    }
    Ok(sse_of(stats))
}

/// Number of (sample, feature) cells that differ from the node's per-feature
/// mode.
pub fn categorical_mode_loss(stats: &NodeStats) -> usize {
    stats
        .cat_counts
        .iter()
        .map(|counts| stats.n - counts.iter().copied().max().unwrap_or(0))
        .sum()
}

/// Adaptive weight multiplying the categorical mode loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedWeight {
    pub value: f64,
    pub rho: f64,
    pub epsilon: f64,
}

/// Computes `(1-ρ)·L_n(X) / (ρ·L_c(X) + ε)` from whole-dataset statistics.
///
/// With no categorical features the weight is 0. With no numerical features
/// the formula would collapse to 0 and erase the objective, so the weight is
/// fixed to 1 instead.
pub fn mixed_weight(global_stats: &NodeStats, d_n: usize, d_c: usize, epsilon: f64) -> MixedWeight {
    let rho = d_n as f64 / (d_n + d_c).max(1) as f64;
    let value = if d_c == 0 {
        0.0
    } else if d_n == 0 {
        1.0
    } else {
        let ln = sse_of(global_stats);
        let lc = categorical_mode_loss(global_stats) as f64;
        (1.0 - rho) * ln / (rho * lc + epsilon)
    };
    MixedWeight { value, rho, epsilon }
}

#[inline]
pub(crate) fn compactness_of(stats: &NodeStats, w: &MixedWeight) -> f64 {
    let mode = if w.value == 0.0 {
        0.0
    } else {
        categorical_mode_loss(stats) as f64
    };
    sse_of(stats) + w.value * mode
}

/// `L_C(v) = L_n(v) + w · L_c(v)`.
pub fn compactness_loss(stats: &NodeStats, w: &MixedWeight) -> Result<f64> {
    if stats.n == 0 {
        return Err(Error::InvalidInput("compactness of an empty node".into()));
    }
    Ok(compactness_of(stats, w))
}

/// Weighted L1 distance between the node's group distributions and the
/// global ones, summed over sensitive attributes. Lies in `[0, 2]`.
pub fn fairness_deviation(stats: &NodeStats, profile: &SensitiveProfile) -> f64 {
    if stats.n == 0 {
        return 0.0;
    }
    let n = stats.n as f64;
    profile
        .global_dists
        .iter()
        .zip(&profile.weights)
        .zip(&stats.group_counts)
        .map(|((global, w), counts)| {
            let l1: f64 = global.iter().zip(counts).map(|(g, &c)| (c as f64 / n - g).abs()).sum();
            w * l1
        })
        .sum()
}

/// `L(v) = L_C(v) + λ · L_F(v)`.
pub fn node_objective(stats: &NodeStats, w: &MixedWeight, profile: &SensitiveProfile, lambda: f64) -> Result<f64> {
    Ok(compactness_loss(stats, w)? + lambda * fairness_deviation(stats, profile))
}

/// Bundles everything needed to score a node.
#[derive(Debug, Clone)]
pub struct Objective {
    pub weight: MixedWeight,
    pub profile: SensitiveProfile,
    pub lambda: f64,
}

impl Objective {
    #[inline]
    pub fn compactness(&self, stats: &NodeStats) -> f64 {
        compactness_of(stats, &self.weight)
    }

    #[inline]
    pub fn fairness(&self, stats: &NodeStats) -> f64 {
        fairness_deviation(stats, &self.profile)
    }

    #[inline]
    pub fn loss(&self, stats: &NodeStats) -> f64 {
        if self.lambda == 0.0 {
            self.compactness(stats)
        } else {
            self.compactness(stats) + self.lambda * self.fairness(stats)
        }
    }
}

/// Two-pass numerical SSE of a subset of samples: `Σ ‖x - x̄‖²`.
pub fn two_pass_sse(ds: &Dataset, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let n = indices.len() as f64;
    (0..ds.d_num())
        .map(|f| {
            let col = ds.num_col(f);
            let mean = indices.iter().map(|&i| col[i]).sum::<f64>() / n;
            indices.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Two-pass compactness of a subset, used for reported losses.
pub fn two_pass_compactness(ds: &Dataset, layout: &StatsLayout, indices: &[usize], w: &MixedWeight) -> f64 {
    let mut mode = 0usize;
    if w.value != 0.0 {
        let mut counts = Vec::new();
        for (j, &r) in layout.cat_cards.iter().enumerate() {
            counts.clear();
            counts.resize(r, 0usize);
            for &i in indices {
                counts[ds.cat_col(j)[i] as usize] += 1;
            }
            mode += indices.len() - counts.iter().copied().max().unwrap_or(0);
        }
    }
    two_pass_sse(ds, indices) + w.value * mode as f64
}

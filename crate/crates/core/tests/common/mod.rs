//! Independent reference implementations used by the integration tests.
//!
//! Everything here is computed directly from the definitions, two-pass and
//! without sufficient statistics, so that it shares no code path with the
//! library beyond dataset accessors.

#![allow(dead_code)]

use fairtree::split::SplitRule;
use fairtree::Dataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPSILON: f64 = 1e-12;

/// Two-pass numerical SSE of a subset.
pub fn sse(ds: &Dataset, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let n = idx.len() as f64;
    let mut total = 0.0;
    for f in 0..ds.d_num() {
        let col = ds.num_col(f);
        let mean = idx.iter().map(|&i| col[i]).sum::<f64>() / n;
        total += idx.iter().map(|&i| (col[i] - mean) * (col[i] - mean)).sum::<f64>();
    }
    total
}

/// Samples not equal to the most frequent category, summed over features.
pub fn mode_loss(ds: &Dataset, idx: &[usize]) -> f64 {
    let mut total = 0usize;
    for j in 0..ds.d_cat() {
        let col = ds.cat_col(j);
        let mut best = 0;
        let mut values: Vec<u32> = idx.iter().map(|&i| col[i]).collect();
        values.sort_unstable();
        let mut run = 0;
        for w in 0..values.len() {
            run = if w > 0 && values[w] == values[w - 1] {
                run + 1
            } else {
                1
            };
            best = best.max(run);
        }
        total += idx.len() - best;
    }
    total as f64
}

/// Weight of the categorical term, from whole-dataset losses.
pub fn mixed_weight(ds: &Dataset) -> f64 {
    let (dn, dc) = (ds.d_num() as f64, ds.d_cat() as f64);
    if ds.d_cat() == 0 {
        return 0.0;
    }
    if ds.d_num() == 0 {
        return 1.0;
    }
    let all: Vec<usize> = (0..ds.n()).collect();
    let rho = dn / (dn + dc);
    (1.0 - rho) * sse(ds, &all) / (rho * mode_loss(ds, &all) + EPSILON)
}

pub fn group_distributions(ds: &Dataset, idx: &[usize]) -> Vec<Vec<f64>> {
    (0..ds.n_sensitive())
        .map(|u| {
            let col = ds.sens_col(u);
            (0..ds.group_cardinality(u))
                .map(|g| idx.iter().filter(|&&i| col[i] as usize == g).count() as f64 / idx.len() as f64)
                .collect()
        })
        .collect()
}

/// Fixed quantities of one fitting problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub weight: f64,
    pub global: Vec<Vec<f64>>,
    pub attr_weights: Vec<f64>,
    pub lambda: f64,
}

impl Problem {
    pub fn new(ds: &Dataset, lambda: f64) -> Self {
        let all: Vec<usize> = (0..ds.n()).collect();
        let u = ds.n_sensitive();
        Self {
            weight: mixed_weight(ds),
            global: group_distributions(ds, &all),
            attr_weights: vec![1.0 / u.max(1) as f64; u],
            lambda,
        }
    }

    pub fn compactness(&self, ds: &Dataset, idx: &[usize]) -> f64 {
        sse(ds, idx) + self.weight * mode_loss(ds, idx)
    }

    pub fn fairness(&self, ds: &Dataset, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        group_distributions(ds, idx)
            .iter()
            .zip(&self.global)
            .zip(&self.attr_weights)
            .map(|((local, global), w)| w * local.iter().zip(global).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .sum()
    }

    pub fn loss(&self, ds: &Dataset, idx: &[usize]) -> f64 {
        self.compactness(ds, idx) + self.lambda * self.fairness(ds, idx)
    }

    /// Documented tie tolerance: `1e-10` times the numerical second moment
    /// about the global means, the largest possible weighted mode loss and
    /// the largest possible weighted fairness change.
    pub fn tie_tolerance(&self, ds: &Dataset, idx: &[usize]) -> f64 {
        let n_all = ds.n() as f64;
        let mut second = 0.0;
        for f in 0..ds.d_num() {
            let col = ds.num_col(f);
            let mean = col.iter().sum::<f64>() / n_all;
            second += idx.iter().map(|&i| (col[i] - mean) * (col[i] - mean)).sum::<f64>();
        }
        1e-10 * (second + self.weight * (idx.len() * ds.d_cat()) as f64 + 4.0 * self.lambda)
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = 0.5 * (lo + hi);
    if t < hi {
        t
    } else {
        lo
    }
}

/// Every candidate rule of a node in canonical order: feature index
/// ascending, numerical before categorical at equal index, thresholds
/// ascending, subsets by bitmask over the present categories without the
/// largest one (one-vs-rest singletons above `cap`).
pub fn candidates(ds: &Dataset, idx: &[usize], cap: usize) -> Vec<SplitRule> {
    let mut out = Vec::new();
    for f in 0..ds.d_num().max(ds.d_cat()) {
        if f < ds.d_num() {
            let col = ds.num_col(f);
            let mut vals: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                out.push(SplitRule::NumericThreshold {
                    feature: f,
                    threshold: midpoint(w[0], w[1]),
                });
            }
        }
        if f < ds.d_cat() {
            let col = ds.cat_col(f);
            let mut present: Vec<u32> = idx.iter().map(|&i| col[i]).collect();
            present.sort_unstable();
            present.dedup();
            let r = present.len();
            if r < 2 {
                continue;
            }
            if r > cap {
                for &g in &present {
                    out.push(SplitRule::CategorySubset {
                        feature: f,
                        left: vec![g],
                    });
                }
            } else {
                for mask in 1u64..(1 << (r - 1)) {
                    let left = (0..r - 1).filter(|b| mask >> b & 1 == 1).map(|b| present[b]).collect();
                    out.push(SplitRule::CategorySubset { feature: f, left });
                }
            }
        }
    }
    out
}

pub fn partition(ds: &Dataset, rule: &SplitRule, idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
    idx.iter().partition(|&&i| match rule {
        SplitRule::NumericThreshold { feature, threshold } => ds.num_col(*feature)[i] <= *threshold,
        SplitRule::CategorySubset { feature, left } => left.contains(&ds.cat_col(*feature)[i]),
    })
}

/// Exhaustive best rule: gain of every feasible candidate recomputed from
/// scratch, first candidate within the tie tolerance of the best wins.
pub fn best_rule(p: &Problem, ds: &Dataset, idx: &[usize], n_min: usize, cap: usize) -> Option<(f64, SplitRule)> {
    let parent = p.loss(ds, idx);
    let scored: Vec<(f64, SplitRule)> = candidates(ds, idx, cap)
        .into_iter()
        .filter_map(|rule| {
            let (l, r) = partition(ds, &rule, idx);
            (l.len() >= n_min && r.len() >= n_min).then(|| (parent - p.loss(ds, &l) - p.loss(ds, &r), rule))
        })
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let bound = best - p.tie_tolerance(ds, idx);
    scored.into_iter().find(|s| s.0 >= bound).map(|(_, r)| (best, r))
}

/// Best agreement over all injective cluster-to-class maps, by brute force.
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; kt]; kp];
    for (&a, &b) in pred.iter().zip(truth) {
        counts[a][b] += 1;
    }
    fn search(row: usize, counts: &[Vec<usize>], used: &mut Vec<bool>) -> usize {
        if row == counts.len() {
            return 0;
        }
        // leave this cluster unmatched
        let mut best = search(row + 1, counts, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(counts[row][c] + search(row + 1, counts, used));
                used[c] = false;
            }
        }
        best
    }
    search(0, &counts, &mut vec![false; kt]) as f64 / pred.len() as f64
}

/// Shape limits for random datasets.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub n_max: usize,
    pub d_num_max: usize,
    pub d_cat_max: usize,
    pub card_max: u32,
    pub sens_max: usize,
}

/// Random mixed-type dataset with at least one feature and one sensitive
/// attribute. Values sit on a coarse grid so that ties are frequent.
pub fn random_dataset(rng: &mut ChaCha8Rng, shape: Shape) -> Dataset {
    let n = rng.random_range(2..=shape.n_max);
    let (dn, dc) = loop {
        let dn = rng.random_range(0..=shape.d_num_max);
        let dc = rng.random_range(0..=shape.d_cat_max);
        if dn + dc > 0 {
            break (dn, dc);
        }
    };
    let num = (0..dn)
        .map(|_| {
            let scale = [0.1, 1.0, 1000.0][rng.random_range(0..3)];
            let offset = [0.0, 1e6][rng.random_range(0..2)];
            let levels = rng.random_range(2..=12);
            (0..n)
                .map(|_| offset + scale * rng.random_range(0..levels) as f64)
                .collect()
        })
        .collect();
    let cat = (0..dc)
        .map(|_| {
            let r = rng.random_range(2..=shape.card_max);
            (0..n).map(|_| rng.random_range(0..r)).collect()
        })
        .collect();
    let u = rng.random_range(1..=shape.sens_max);
    let sens = (0..u)
        .map(|_| {
            let m = rng.random_range(2..=3u32);
            (0..n).map(|_| rng.random_range(0..m)).collect()
        })
        .collect();
    Dataset::from_encoded(num, cat, sens, None).expect("valid random dataset")
}

/// Number of distinct feature rows.
pub fn distinct_rows(ds: &Dataset) -> usize {
    let mut rows: Vec<(Vec<u64>, Vec<u32>)> = (0..ds.n())
        .map(|i| {
            (
                (0..ds.d_num()).map(|f| ds.num_col(f)[i].to_bits()).collect(),
                (0..ds.d_cat()).map(|j| ds.cat_col(j)[i]).collect(),
            )
        })
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

//! Run reports, λ sweeps and timing benchmarks.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{compute_profile, generate_synthetic, grid_centers, Dataset, Scaling, SensitiveProfile};
use crate::error::{Error, Result};
use crate::grow::fit_ifct;
use crate::losses::MixedWeight;
use crate::metrics::{accuracy, fairness_report, nmi, FairnessReport, GroupContingency};
use crate::prune::fit_ifct_p;
use crate::tree::{Algorithm, ClusteringTree, FitConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafRow {
    pub cluster: usize,
    pub n: usize,
    pub compactness: f64,
    pub fairness: f64,
}

/// Summary of a fitted or evaluated tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub n: usize,
    pub d_n: usize,
    pub d_c: usize,
    pub u: usize,
    pub total_compactness: f64,
    pub total_fairness: f64,
    pub leaves: Vec<LeafRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness: Option<FairnessReport>,
    pub exhausted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_seconds: Option<f64>,
}

fn lambda_of(tree: &ClusteringTree) -> Option<f64> {
    match tree.algorithm() {
        Algorithm::Ifct => Some(tree.config().lambda),
        Algorithm::IfctP => None,
    }
}

fn quality(ds: &Dataset, clusters: &[usize], k: usize) -> Result<(Option<f64>, Option<f64>, Option<FairnessReport>)> {
    let (acc, nmi_v) = match ds.labels() {
        Some(labels) => (Some(accuracy(clusters, labels)?), Some(nmi(clusters, labels)?)),
        None => (None, None),
    };
    let fairness = if ds.n_sensitive() > 0 {
        let cols: Vec<&[u32]> = (0..ds.n_sensitive()).map(|u| ds.sens_col(u)).collect();
        let cards: Vec<usize> = (0..ds.n_sensitive()).map(|u| ds.group_cardinality(u)).collect();
        let gc = GroupContingency::new(clusters, k, &cols, &cards)?;
        Some(fairness_report(&gc, ds.sens_names()))
    } else {
        None
    };
    Ok((acc, nmi_v, fairness))
}

impl RunReport {
    /// Report for a tree on the data it was fitted on, using the per-leaf
    /// values stored in the tree.
    pub fn from_fit(tree: &ClusteringTree, ds: &Dataset, fit_seconds: Option<f64>) -> Result<Self> {
        let clusters: Vec<usize> = match tree.assignments() {
            Some(a) if a.len() == ds.n() => a.to_vec(),
            _ => (0..ds.n())
                .map(|i| tree.route(&ds.sample(i), false))
                .collect::<Result<_>>()?,
        };
        let leaves: Vec<LeafRow> = (0..tree.k())
            .map(|c| {
                let s = &tree.leaf(c).summary;
                LeafRow {
                    cluster: c,
                    n: s.n,
                    compactness: s.compactness,
                    fairness: s.fairness,
                }
            })
            .collect();
        let (accuracy, nmi, fairness) = quality(ds, &clusters, tree.k())?;
        Ok(Self {
            algorithm: tree.algorithm(),
            k: tree.k(),
            lambda: lambda_of(tree),
            n: ds.n(),
            d_n: ds.d_num(),
            d_c: ds.d_cat(),
            u: ds.n_sensitive(),
            total_compactness: leaves.iter().map(|l| l.compactness).sum(),
            total_fairness: leaves.iter().map(|l| l.fairness).sum(),
            leaves,
            accuracy,
            nmi,
            fairness,
            exhausted: tree.exhausted(),
            fit_seconds,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers and strings")
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "algorithm          {}", self.algorithm.name());
        let _ = writeln!(s, "k                  {}", self.k);
        if let Some(l) = self.lambda {
            let _ = writeln!(s, "lambda             {l}");
        }
        let _ = writeln!(s, "samples            {}", self.n);
        let _ = writeln!(s, "features           {} numerical, {} categorical", self.d_n, self.d_c);
        let _ = writeln!(s, "sensitive attrs    {}", self.u);
        let _ = writeln!(s, "total compactness  {:.6}", self.total_compactness);
        let _ = writeln!(s, "total fairness     {:.6}", self.total_fairness);
        if let Some(a) = self.accuracy {
            let _ = writeln!(s, "ACC                {a:.4}");
        }
        if let Some(v) = self.nmi {
            let _ = writeln!(s, "NMI                {v:.4}");
        }
        if let Some(f) = &self.fairness {
            for a in &f.attributes {
                match (&a.error, a.balance, a.mnce) {
                    (Some(e), _, _) => {
                        let _ = writeln!(s, "{:<18} error: {e}", a.attribute);
                    }
                    (None, Some(b), Some(m)) => {
                        let _ = writeln!(s, "{:<18} BAL {b:.4}  MNCE {m:.4}", a.attribute);
                    }
                    _ => {}
                }
            }
            if let (Some(b), Some(m)) = (f.mean_balance, f.mean_mnce) {
                let _ = writeln!(s, "{:<18} BAL {b:.4}  MNCE {m:.4}", "average");
            }
        }
        if let Some(t) = self.fit_seconds {
            let _ = writeln!(s, "fit time           {t:.3} s");
        }
        if self.exhausted {
            let _ = writeln!(s, "warning            no feasible split left before k leaves");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>7}  {:>8}  {:>16}  {:>12}",
            "cluster", "n", "compactness", "fairness"
        );
        for l in &self.leaves {
            let _ = writeln!(
                s,
                "{:>7}  {:>8}  {:>16.6}  {:>12.6}",
                l.cluster, l.n, l.compactness, l.fairness
            );
        }
        s
    }
}

fn scaled(scaling: Option<&[Scaling]>, f: usize, x: f64) -> f64 {
    scaling.map_or(x, |s| s[f].apply(x))
}

/// Per-leaf values of a partition of `ds`, in the units the tree was
/// fitted in.
fn leaf_rows(
    ds: &Dataset,
    clusters: &[usize],
    k: usize,
    scaling: Option<&[Scaling]>,
    weight: &MixedWeight,
    profile: &SensitiveProfile,
) -> Vec<LeafRow> {
    let mut members = vec![Vec::new(); k];
    for (i, &c) in clusters.iter().enumerate() {
        members[c].push(i);
    }
    members
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            if idx.is_empty() {
                return LeafRow {
                    cluster: c,
                    n: 0,
                    compactness: 0.0,
                    fairness: 0.0,
                };
            }
            let n = idx.len() as f64;
            let sse: f64 = (0..ds.d_num())
                .map(|f| {
                    let vals: Vec<f64> = idx.iter().map(|&i| scaled(scaling, f, ds.raw_num(f, i))).collect();
                    let mean = vals.iter().sum::<f64>() / n;
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                })
                .sum();
            let mode: usize = (0..ds.d_cat())
                .map(|j| {
                    let mut counts = vec![0usize; ds.cat_cardinality(j)];
                    for &i in idx {
                        counts[ds.cat_col(j)[i] as usize] += 1;
                    }
                    idx.len() - counts.into_iter().max().unwrap_or(0)
                })
                .sum();
            let fairness: f64 = profile
                .global_dists
                .iter()
                .zip(&profile.weights)
                .enumerate()
                .map(|(u, (global, w))| {
                    let mut counts = vec![0usize; global.len()];
                    for &i in idx {
                        counts[ds.sens_col(u)[i] as usize] += 1;
                    }
                    w * global
                        .iter()
                        .zip(&counts)
                        .map(|(g, &c)| (c as f64 / n - g).abs())
                        .sum::<f64>()
                })
                .sum();
            LeafRow {
                cluster: c,
                n: idx.len(),
                compactness: sse + weight.value * mode as f64,
                fairness,
            }
        })
        .collect()
}

/// Routes every row of `ds` through the tree and reports metrics on the
/// result. Per-leaf values are recomputed on `ds`, with fairness measured
/// against the group distributions of `ds` itself.
pub fn evaluate(tree: &ClusteringTree, ds: &Dataset, permissive: bool) -> Result<RunReport> {
    if ds.d_num() != tree.features().num_names.len() || ds.d_cat() != tree.features().cat_names.len() {
        return Err(Error::InvalidInput(
            "evaluation data must have the same numerical and categorical columns as the model".into(),
        ));
    }
    let clusters = (0..ds.n())
        .into_par_iter()
        .map(|i| tree.route(&ds.sample(i), permissive))
        .collect::<Result<Vec<usize>>>()?;
    let profile = if ds.n_sensitive() > 0 {
        let weights = tree.config().weights.as_deref().filter(|w| w.len() == ds.n_sensitive());
        compute_profile(ds, weights)?
    } else {
        SensitiveProfile::empty()
    };
    let leaves = leaf_rows(
        ds,
        &clusters,
        tree.k(),
        tree.features().scaling.as_deref(),
        &tree.mixed_weight(),
        &profile,
    );
    let (accuracy, nmi, fairness) = quality(ds, &clusters, tree.k())?;
    Ok(RunReport {
        algorithm: tree.algorithm(),
        k: tree.k(),
        lambda: lambda_of(tree),
        n: ds.n(),
        d_n: ds.d_num(),
        d_c: ds.d_cat(),
        u: ds.n_sensitive(),
        total_compactness: leaves.iter().map(|l| l.compactness).sum(),
        total_fairness: leaves.iter().map(|l| l.fairness).sum(),
        leaves,
        accuracy,
        nmi,
        fairness,
        exhausted: tree.exhausted(),
        fit_seconds: None,
    })
}

/// Fits with the given algorithm, timing the fit.
pub fn fit_timed(ds: &Dataset, cfg: &FitConfig, algorithm: Algorithm) -> Result<(ClusteringTree, f64)> {
    let start = Instant::now();
    let tree = match algorithm {
        Algorithm::Ifct => fit_ifct(ds, cfg)?,
        Algorithm::IfctP => fit_ifct_p(ds, cfg)?,
    };
    Ok((tree, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
    pub balance: Option<f64>,
    pub mnce: Option<f64>,
    pub compactness: f64,
    pub fairness: f64,
    pub exhausted: bool,
}

/// `count` values spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config("log grid needs 0 < lo <= hi".into()));
    }
    match count {
        0 => Err(Error::Config("log grid needs at least one point".into())),
        1 => Ok(vec![lo]),
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            Ok((0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else {
                        10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)
                    }
                })
                .collect())
        }
    }
}

/// One IFCT fit per λ. Rows come back in grid order either way.
pub fn sweep(ds: &Dataset, cfg: &FitConfig, lambdas: &[f64], parallel: bool) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("the λ grid is empty".into()));
    }
    let run = |&lambda: &f64| -> Result<SweepRow> {
        let cfg = FitConfig { lambda, ..cfg.clone() };
        let tree = fit_ifct(ds, &cfg)?;
        let report = RunReport::from_fit(&tree, ds, None)?;
        let f = report.fairness.as_ref();
        Ok(SweepRow {
            lambda,
            accuracy: report.accuracy,
            nmi: report.nmi,
            balance: f.and_then(|f| f.mean_balance),
            mnce: f.and_then(|f| f.mean_mnce),
            compactness: report.total_compactness,
            fairness: report.total_fairness,
            exhausted: report.exhausted,
        })
    };
    if parallel {
        lambdas.par_iter().map(run).collect()
    } else {
        lambdas.iter().map(run).collect()
    }
}

/// Divides every value by its column maximum; a column whose maximum is 0
/// maps to 1.
pub fn normalize_by_max(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let max = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| v.map(|x| if max > 0.0 { x / max } else { 1.0 }))
        .collect()
}

/// Sweep rows as CSV, with a max-normalized copy of every metric column.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cols: [(&str, Vec<Option<f64>>); 6] = [
        ("acc", rows.iter().map(|r| r.accuracy).collect()),
        ("nmi", rows.iter().map(|r| r.nmi).collect()),
        ("bal", rows.iter().map(|r| r.balance).collect()),
        ("mnce", rows.iter().map(|r| r.mnce).collect()),
        ("compactness", rows.iter().map(|r| Some(r.compactness)).collect()),
        ("fairness", rows.iter().map(|r| Some(r.fairness)).collect()),
    ];
    let normalized: Vec<Vec<Option<f64>>> = cols.iter().map(|(_, v)| normalize_by_max(v)).collect();
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());

    let mut out = String::from("lambda");
    for (name, _) in &cols {
        let _ = write!(out, ",{name}");
    }
    for (name, _) in &cols {
        let _ = write!(out, ",{name}_norm");
    }
    out.push_str(",exhausted\n");
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&r.lambda.to_string());
        for (_, v) in &cols {
            let _ = write!(out, ",{}", cell(v[i]));
        }
        for v in &normalized {
            let _ = write!(out, ",{}", cell(v[i]));
        }
        let _ = writeln!(out, ",{}", r.exhausted);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    /// Fastest of the repeated fits.
    pub seconds: f64,
    /// Time relative to the previous row.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub k: usize,
    pub lambda: f64,
    pub blobs: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4000, 8000, 16000],
            k: 10,
            lambda: 1e4,
            blobs: 10,
            repeats: 3,
            seed: 0,
        }
    }
}

/// Times IFCT on 2-D synthetic blobs of each requested size.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() || cfg.blobs == 0 || cfg.repeats == 0 {
        return Err(Error::Config("bench needs sizes, blobs and repeats".into()));
    }
    let centers = grid_centers(cfg.blobs, 10.0);
    let mut rows: Vec<BenchRow> = Vec::new();
    for &n in &cfg.sizes {
        let per_blob = n.div_ceil(cfg.blobs).max(1);
        let ds = generate_synthetic(per_blob, &centers, 1.0, 0.5, cfg.seed)?;
        let fit_cfg = FitConfig::with_k(cfg.k).lambda(cfg.lambda);
        let mut best = f64::INFINITY;
        for _ in 0..cfg.repeats {
            let (_, t) = fit_timed(&ds, &fit_cfg, Algorithm::Ifct)?;
            best = best.min(t);
        }
        let seconds = best.max(f64::MIN_POSITIVE);
        let ratio = rows.last().map(|prev| seconds / prev.seconds);
        rows.push(BenchRow {
            n: ds.n(),
            seconds,
            ratio,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,seconds,ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.n,
            r.seconds,
            r.ratio.map_or(String::new(), |x| x.to_string())
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> Dataset {
        generate_synthetic(50, &grid_centers(2, 20.0), 1.0, 0.5, seed).unwrap()
    }

    #[test]
    fn fit_report_totals_match_leaves() {
        let ds = blobs(3);
        let tree = fit_ifct(&ds, &FitConfig::with_k(2)).unwrap();
        let r = RunReport::from_fit(&tree, &ds, Some(0.1)).unwrap();
        assert!((r.total_compactness - tree.total_compactness()).abs() <= 1e-6 * tree.total_compactness());
        assert_eq!(r.accuracy, Some(1.0));
        assert!(r.fairness.is_some());
        let text = r.to_text();
        assert!(text.contains("ACC"));
        assert!(r.to_json().contains("\"accuracy\""));
    }

    #[test]
    fn evaluate_on_fit_data_matches_fit_report() {
        let ds = blobs(4);
        let tree = fit_ifct(&ds, &FitConfig::with_k(3).lambda(10.0)).unwrap();
        let fit = RunReport::from_fit(&tree, &ds, None).unwrap();
        let eval = evaluate(&tree, &ds, false).unwrap();
        for (a, b) in fit.leaves.iter().zip(&eval.leaves) {
            assert_eq!(a.n, b.n);
            assert!((a.compactness - b.compactness).abs() <= 1e-9 * (1.0 + a.compactness));
            assert!((a.fairness - b.fairness).abs() < 1e-12);
        }
        assert_eq!(fit.accuracy, eval.accuracy);
    }

    #[test]
    fn evaluate_without_labels_omits_acc() {
        let ds = Dataset::from_encoded(vec![vec![0.0, 0.1, 5.0, 5.1]], vec![], vec![vec![0, 1, 0, 1]], None).unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(2)).unwrap();
        let r = evaluate(&tree, &ds, false).unwrap();
        assert!(r.accuracy.is_none());
        assert!(!r.to_json().contains("accuracy"));
    }

    #[test]
    fn grids() {
        let g = log_grid(1e2, 1e6, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 1e2);
        assert_eq!(g[4], 1e6);
        assert!((g[2] - 1e4).abs() < 1e-8);
        assert!(log_grid(1.0, 10.0, 0).is_err());
        assert!(log_grid(0.0, 10.0, 3).is_err());
    }

    #[test]
    fn sweep_rows_and_normalization() {
        let ds = blobs(5);
        let cfg = FitConfig::with_k(2);
        assert!(sweep(&ds, &cfg, &[], false).is_err());
        let one = sweep(&ds, &cfg, &[100.0], false).unwrap();
        let csv = sweep_csv(&one);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert!(cells[7..13].iter().all(|c| *c == "1"), "{csv}");

        let grid = log_grid(1e2, 1e6, 5).unwrap();
        let seq = sweep(&ds, &cfg, &grid, false).unwrap();
        let par = sweep(&ds, &cfg, &grid, true).unwrap();
        assert_eq!(seq, par);
        assert_eq!(sweep_csv(&seq).lines().count(), 6);
    }

    #[test]
    fn normalization_of_zero_column() {
        assert_eq!(normalize_by_max(&[Some(0.0), Some(0.0)]), vec![Some(1.0), Some(1.0)]);
        assert_eq!(
            normalize_by_max(&[Some(1.0), Some(4.0), None]),
            vec![Some(0.25), Some(1.0), None]
        );
    }

    #[test]
    fn bench_rows_are_positive() {
        let rows = bench(&BenchConfig {
            sizes: vec![200, 400],
            k: 3,
            repeats: 1,
            ..BenchConfig::default()
        })
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.seconds > 0.0));
        assert!(rows[0].ratio.is_none() && rows[1].ratio.is_some());
    }
}

//! Clustering quality (ACC, NMI) and group fairness (BAL, MNCE) metrics.

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::Serialize;

use crate::error::{Error, Result};

/// Co-occurrence counts between predicted clusters (rows) and true classes
/// (columns). Ids are compacted in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

fn compact_ids<T: Copy + Eq + std::hash::Hash>(ids: &[T]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|id| {
            let next = map.len();
            *map.entry(*id).or_insert(next)
        })
        .collect();
    (out, map.len())
}

impl ContingencyTable {
    pub fn new<P, T>(pred: &[P], truth: &[T]) -> Result<Self>
    where
        P: Copy + Eq + std::hash::Hash,
        T: Copy + Eq + std::hash::Hash,
    {
        if pred.len() != truth.len() {
            return Err(Error::Metric(format!(
                "prediction has {} entries but truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Metric("no samples".into()));
        }
        let (p, kp) = compact_ids(pred);
        let (t, kt) = compact_ids(truth);
        let mut counts = vec![vec![0usize; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: pred.len(),
        })
    }
}

/// Fraction of samples agreeing under the best one-to-one mapping of
/// clusters to classes.
pub fn accuracy<P, T>(pred: &[P], truth: &[T]) -> Result<f64>
where
    P: Copy + Eq + std::hash::Hash,
    T: Copy + Eq + std::hash::Hash,
{
    let table = ContingencyTable::new(pred, truth)?;
    let size = table.counts.len().max(table.row_sums.len()).max(table.col_sums.len());
    let mut weights = Matrix::new(size, size, 0i64);
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[(i, j)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / table.n as f64)
}

fn entropy_of(counts: impl IntoIterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `2 I / (H_pred + H_truth)`; 0 when either
/// partition has zero entropy.
pub fn nmi<P, T>(pred: &[P], truth: &[T]) -> Result<f64>
where
    P: Copy + Eq + std::hash::Hash,
    T: Copy + Eq + std::hash::Hash,
{
    let table = ContingencyTable::new(pred, truth)?;
    let hp = entropy_of(table.row_sums.iter().copied(), table.n);
    let ht = entropy_of(table.col_sums.iter().copied(), table.n);
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    let n = table.n as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((2.0 * mi / (hp + ht)).clamp(0.0, 1.0))
}

/// Per-attribute cluster × group counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupContingency {
    /// `counts[u][i][g]`: members of cluster `i` in group `g` of attribute `u`.
    pub counts: Vec<Vec<Vec<usize>>>,
    pub cluster_sizes: Vec<usize>,
    /// `group_sizes[u][g]`.
    pub group_sizes: Vec<Vec<usize>>,
}

impl GroupContingency {
    /// `clusters[i]` in `0..k`; `groups[u][i]` in `0..cardinalities[u]`.
    pub fn new(clusters: &[usize], k: usize, groups: &[&[u32]], cardinalities: &[usize]) -> Result<Self> {
        if groups.len() != cardinalities.len() {
            return Err(Error::Metric("one cardinality per attribute is required".into()));
        }
        let mut cluster_sizes = vec![0usize; k];
        for &c in clusters {
            if c >= k {
                return Err(Error::Metric(format!("cluster id {c} out of range for k = {k}")));
            }
            cluster_sizes[c] += 1;
        }
        let mut counts = Vec::with_capacity(groups.len());
        let mut group_sizes = Vec::with_capacity(groups.len());
        for (col, &m) in groups.iter().zip(cardinalities) {
            if col.len() != clusters.len() {
                return Err(Error::Metric(
                    "group column length differs from cluster assignment".into(),
                ));
            }
            let mut table = vec![vec![0usize; m]; k];
            let mut sizes = vec![0usize; m];
            for (&c, &g) in clusters.iter().zip(col.iter()) {
                let g = g as usize;
                if g >= m {
                    return Err(Error::Metric(format!("group id {g} out of range for cardinality {m}")));
                }
                table[c][g] += 1;
                sizes[g] += 1;
            }
            counts.push(table);
            group_sizes.push(sizes);
        }
        Ok(Self {
            counts,
            cluster_sizes,
            group_sizes,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.counts.len()
    }

    fn check(&self, u: usize) -> Result<()> {
        if u >= self.counts.len() {
            return Err(Error::Metric(format!("attribute index {u} out of range")));
        }
        if let Some(i) = self.cluster_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Metric(format!("cluster {i} is empty")));
        }
        Ok(())
    }
}

/// Smallest within-cluster group proportion over all clusters and groups.
/// Groups absent from the data are ignored.
pub fn balance(gc: &GroupContingency, u: usize) -> Result<f64> {
    gc.check(u)?;
    let present: Vec<usize> = (0..gc.group_sizes[u].len())
        .filter(|&g| gc.group_sizes[u][g] > 0)
        .collect();
    Ok(gc.counts[u]
        .iter()
        .zip(&gc.cluster_sizes)
        .map(|(row, &size)| {
            let least = present.iter().map(|&g| row[g]).min().unwrap_or(0);
            least as f64 / size as f64
        })
        .fold(f64::INFINITY, f64::min))
}

/// Smallest cluster group entropy divided by the global group entropy.
pub fn mnce(gc: &GroupContingency, u: usize) -> Result<f64> {
    gc.check(u)?;
    let n = gc.cluster_sizes.iter().sum();
    let global = entropy_of(gc.group_sizes[u].iter().copied(), n);
    if global <= 0.0 {
        return Err(Error::Metric(format!(
            "attribute {u} has a single global group, so its entropy is zero"
        )));
    }
    let least = gc.counts[u]
        .iter()
        .zip(&gc.cluster_sizes)
        .map(|(row, &size)| entropy_of(row.iter().copied(), size))
        .fold(f64::INFINITY, f64::min);
    Ok(least / global)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeFairness {
    pub attribute: String,
    pub balance: Option<f64>,
    pub mnce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub attributes: Vec<AttributeFairness>,
    /// Means over attributes that could be evaluated.
    pub mean_balance: Option<f64>,
    pub mean_mnce: Option<f64>,
}

impl FairnessReport {
    /// First per-attribute error, if any.
    pub fn first_error(&self) -> Option<&str> {
        self.attributes.iter().find_map(|a| a.error.as_deref())
    }
}

/// BAL and MNCE per attribute plus their unweighted means. An attribute
/// that cannot be evaluated carries its error and is left out of the means.
pub fn fairness_report(gc: &GroupContingency, names: &[String]) -> FairnessReport {
    let attributes: Vec<AttributeFairness> = (0..gc.n_attributes())
        .map(|u| {
            let name = names.get(u).cloned().unwrap_or_else(|| format!("s{u}"));
            match (balance(gc, u), mnce(gc, u)) {
                (Ok(b), Ok(m)) => AttributeFairness {
                    attribute: name,
                    balance: Some(b),
                    mnce: Some(m),
                    error: None,
                },
                (Err(e), _) | (_, Err(e)) => AttributeFairness {
                    attribute: name,
                    balance: None,
                    mnce: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mean = |f: fn(&AttributeFairness) -> Option<f64>| {
        let vals: Vec<f64> = attributes.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    FairnessReport {
        mean_balance: mean(|a| a.balance),
        mean_mnce: mean(|a| a.mnce),
        attributes,
    }
}

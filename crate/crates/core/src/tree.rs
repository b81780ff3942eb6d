//! Fitted clustering trees and rule-based routing.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Dictionary, Sample, Scaling, SensitiveProfile};
use crate::error::{Error, Result};
use crate::losses::{MixedWeight, DEFAULT_EPSILON};
use crate::split::SplitRule;

/// Which fitting procedure produced a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "IFCT")]
    Ifct,
    #[serde(rename = "IFCT-P")]
    IfctP,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ifct => "IFCT",
            Algorithm::IfctP => "IFCT-P",
        }
    }
}

/// Fit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of clusters (leaves).
    pub k: usize,
    /// Fairness trade-off. Ignored by IFCT-P.
    pub lambda: f64,
    /// Per-attribute fairness weights; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    /// Minimum samples per child of a split.
    pub n_min: usize,
    pub epsilon: f64,
    /// Largest categorical cardinality enumerated exhaustively.
    pub cat_cap: usize,
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            lambda: 1e4,
            weights: None,
            n_min: 1,
            epsilon: DEFAULT_EPSILON,
            cat_cap: 12,
            standardize: false,
        }
    }
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be finite and non-negative".into()));
        }
        if self.n_min == 0 {
            return Err(Error::Config("n_min must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.cat_cap < 2 {
            return Err(Error::Config("categorical cap must be at least 2".into()));
        }
        Ok(())
    }
}

/// Names, dictionaries and scaling needed to interpret rules and route raw
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    pub num_names: Vec<String>,
    pub scaling: Option<Vec<Scaling>>,
    pub cat_names: Vec<String>,
    pub cat_dicts: Vec<Dictionary>,
    pub sens_names: Vec<String>,
    pub sens_dicts: Vec<Dictionary>,
}

impl FeatureSpace {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            num_names: ds.num_names().to_vec(),
            scaling: ds.scaling().map(<[Scaling]>::to_vec),
            cat_names: ds.cat_names().to_vec(),
            cat_dicts: ds.cat_dicts().to_vec(),
            sens_names: ds.sens_names().to_vec(),
            sens_dicts: ds.sens_dicts().to_vec(),
        }
    }

    /// Threshold expressed in raw feature units.
    pub fn raw_threshold(&self, feature: usize, threshold: f64) -> f64 {
        match &self.scaling {
            Some(s) => s[feature].invert(threshold),
            None => threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub n: usize,
    pub compactness: f64,
    pub fairness: f64,
    pub group_counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Children are arena indices.
    Internal {
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf {
        cluster: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Creation-order id assigned during growth.
    pub id: usize,
    pub kind: NodeKind,
    pub summary: NodeSummary,
}

/// One executed split, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub node: usize,
    pub rule: SplitRule,
    pub left: usize,
    pub right: usize,
    /// Gain of the fitting objective.
    pub gain: f64,
    /// Reduction of compactness alone.
    pub compactness_gain: f64,
    pub left_samples: Vec<usize>,
    pub right_samples: Vec<usize>,
}

/// A fitted tree whose leaves are clusters.
///
/// Nodes live in an arena in creation order with the root at index 0.
#[derive(Debug, Clone)]
pub struct ClusteringTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) leaves: Vec<usize>,
    pub(crate) features: FeatureSpace,
    pub(crate) config: FitConfig,
    pub(crate) algorithm: Algorithm,
    pub(crate) weight: MixedWeight,
    pub(crate) profile: SensitiveProfile,
    pub(crate) total_compactness: f64,
    pub(crate) total_fairness: f64,
    pub(crate) exhausted: bool,
    pub(crate) fingerprint: String,
    pub(crate) timestamp: Option<u64>,
    pub(crate) assignments: Option<Vec<usize>>,
    pub(crate) growth_log: Vec<SplitRecord>,
    pub(crate) negative_gain_splits: usize,
}

impl ClusteringTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Leaf arena indices ordered by cluster id.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf(&self, cluster: usize) -> &TreeNode {
        &self.nodes[self.leaves[cluster]]
    }

    pub fn k(&self) -> usize {
        self.leaves.len()
    }

    pub fn features(&self) -> &FeatureSpace {
        &self.features
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn mixed_weight(&self) -> MixedWeight {
        self.weight
    }

    pub fn profile(&self) -> &SensitiveProfile {
        &self.profile
    }

    pub fn total_compactness(&self) -> f64 {
        self.total_compactness
    }

    pub fn total_fairness(&self) -> f64 {
        self.total_fairness
    }

    /// Tree objective `L_C + λ L_F`; λ is 0 for IFCT-P.
    pub fn objective(&self) -> f64 {
        let lambda = match self.algorithm {
            Algorithm::Ifct => self.config.lambda,
            Algorithm::IfctP => 0.0,
        };
        self.total_compactness + lambda * self.total_fairness
    }

    /// True when growth stopped before reaching the requested k.
    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn timestamp(&self) -> Option<u64> {
        self.timestamp
    }

    pub fn set_timestamp(&mut self, unix_seconds: Option<u64>) {
        self.timestamp = unix_seconds;
    }

    /// Cluster of every fitting sample; `None` for trees loaded from disk.
    pub fn assignments(&self) -> Option<&[usize]> {
        self.assignments.as_deref()
    }

    /// Splits executed during growth, in order. Empty for loaded trees.
    pub fn growth_log(&self) -> &[SplitRecord] {
        &self.growth_log
    }

    pub fn negative_gain_splits(&self) -> usize {
        self.negative_gain_splits
    }

    /// Arena index of the parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Internal { left, right, .. } = node.kind {
                parents[left] = Some(idx);
                parents[right] = Some(idx);
            }
        }
        parents
    }

    /// Rules from the root to node `idx`, each paired with whether the path
    /// goes left.
    pub fn path_to(&self, idx: usize) -> Vec<(&SplitRule, bool)> {
        let parents = self.parents();
        let mut path = Vec::new();
        let mut cur = idx;
        while let Some(p) = parents[cur] {
            if let NodeKind::Internal { rule, left, .. } = &self.nodes[p].kind {
                path.push((rule, *left == cur));
            }
            cur = p;
        }
        path.reverse();
        path
    }

    /// Cluster id of a raw sample.
    ///
    /// A categorical token missing from the dictionaries is an error unless
    /// `permissive` is set, in which case it goes right at every rule that
    /// tests it.
    pub fn route(&self, sample: &Sample, permissive: bool) -> Result<usize> {
        if sample.num.len() != self.features.num_names.len() || sample.cat.len() != self.features.cat_names.len() {
            return Err(Error::InvalidInput(format!(
                "sample has {} numerical and {} categorical values, tree expects {} and {}",
                sample.num.len(),
                sample.cat.len(),
                self.features.num_names.len(),
                self.features.cat_names.len()
            )));
        }
        let mut idx = 0;
        loop {
            match &self.nodes[idx].kind {
                NodeKind::Leaf { cluster } => return Ok(*cluster),
                NodeKind::Internal { rule, left, right } => {
                    let go_left = match rule {
                        SplitRule::NumericThreshold { feature, threshold } => {
                            let raw = sample.num[*feature];
                            let x = match &self.features.scaling {
                                Some(s) => s[*feature].apply(raw),
                                None => raw,
                            };
                            x <= *threshold
                        }
                        SplitRule::CategorySubset { feature, left } => {
                            let token = &sample.cat[*feature];
                            match self.features.cat_dicts[*feature].lookup(token) {
                                Some(id) => left.binary_search(&id).is_ok(),
                                None if permissive => false,
                                None => {
                                    return Err(Error::UnknownCategory {
                                        feature: self.features.cat_names[*feature].clone(),
                                        token: token.clone(),
                                    })
                                }
                            }
                        }
                    };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Routes row `i` of the dataset the tree was fitted on, using encoded
    /// values directly.
    pub fn route_row(&self, ds: &Dataset, i: usize) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx].kind {
                NodeKind::Leaf { cluster } => return *cluster,
                NodeKind::Internal { rule, left, right } => {
                    idx = if rule.goes_left(ds, i) { *left } else { *right };
                }
            }
        }
    }
}

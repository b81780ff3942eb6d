//! Best-first growth of a fair clustering tree to k leaves (IFCT).
//!
//! Each leaf caches the best rule computed when it was created. The loop
//! repeatedly splits the leaf with the largest cached gain, breaking ties in
//! favour of the earliest-created leaf, until the tree has k leaves or no leaf
//! admits a feasible rule. Negative gains are still split.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::data::{compute_profile, standardize, Dataset, SensitiveProfile};
use crate::error::{Error, Result};
use crate::losses::{mixed_weight, two_pass_compactness, NodeStats, Objective, StatsLayout};
use crate::split::{tie_tolerance, SplitEvaluation, SplitSearch};
use crate::tree::{Algorithm, ClusteringTree, FeatureSpace, FitConfig, NodeKind, NodeSummary, SplitRecord, TreeNode};

pub(crate) struct GrowNode {
    pub parent: Option<usize>,
    pub samples: Vec<usize>,
    pub stats: NodeStats,
    pub eval: SplitEvaluation,
    pub children: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    gain: f64,
    id: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.id.cmp(&self.id))
    }
}

/// Everything derived from the dataset before growth starts.
pub(crate) struct Prepared {
    pub ds: Dataset,
    pub layout: StatsLayout,
    pub objective: Objective,
    pub root_stats: NodeStats,
}

pub(crate) fn prepare(ds: &Dataset, cfg: &FitConfig, lambda: f64, require_sensitive: bool) -> Result<Prepared> {
    cfg.validate()?;
    let ds = if cfg.standardize { standardize(ds) } else { ds.clone() };
    if require_sensitive && ds.n_sensitive() == 0 {
        return Err(Error::Config(
            "fairness-aware fitting needs at least one sensitive attribute".into(),
        ));
    }
    let profile = if ds.n_sensitive() > 0 {
        compute_profile(&ds, cfg.weights.as_deref())?
    } else if cfg.weights.as_ref().is_some_and(|w| !w.is_empty()) {
        return Err(Error::Config(
            "fairness weights given but the data has no sensitive attribute".into(),
        ));
    } else {
        SensitiveProfile::empty()
    };
    let layout = StatsLayout::new(&ds);
    let all: Vec<usize> = (0..ds.n()).collect();
    let root_stats = NodeStats::from_indices(&ds, &layout, &all);
    let weight = mixed_weight(&root_stats, ds.d_num(), ds.d_cat(), cfg.epsilon);
    Ok(Prepared {
        ds,
        layout,
        objective: Objective {
            weight,
            profile,
            lambda,
        },
        root_stats,
    })
}

const PARALLEL_CHILDREN: usize = 1 << 13;

pub(crate) struct Grower<'a> {
    prep: &'a Prepared,
    n_min: usize,
    cat_cap: usize,
    tie_tol: f64,
    pub nodes: Vec<GrowNode>,
    frontier: BinaryHeap<Frontier>,
    pub leaf_count: usize,
    pub log: Vec<SplitRecord>,
    pub negative_gain_splits: usize,
}

impl<'a> Grower<'a> {
    pub fn new(prep: &'a Prepared, cfg: &FitConfig) -> Self {
        let tie_tol = tie_tolerance(&prep.root_stats, &prep.objective);
        let mut grower = Self {
            prep,
            n_min: cfg.n_min,
            cat_cap: cfg.cat_cap,
            tie_tol,
            nodes: Vec::new(),
            frontier: BinaryHeap::new(),
            leaf_count: 1,
            log: Vec::new(),
            negative_gain_splits: 0,
        };
        let samples: Vec<usize> = (0..prep.ds.n()).collect();
        let eval = grower.search().best_rule(&samples, &prep.root_stats);
        grower.add_node(None, samples, prep.root_stats.clone(), eval);
        grower
    }

    fn search(&self) -> SplitSearch<'_> {
        SplitSearch {
            ds: &self.prep.ds,
            layout: &self.prep.layout,
            objective: &self.prep.objective,
            n_min: self.n_min,
            cat_cap: self.cat_cap,
            tie_tol: self.tie_tol,
        }
    }

    fn add_node(
        &mut self,
        parent: Option<usize>,
        samples: Vec<usize>,
        stats: NodeStats,
        eval: SplitEvaluation,
    ) -> usize {
        let id = self.nodes.len();
        if eval.rule.is_some() {
            self.frontier.push(Frontier { gain: eval.gain, id });
        }
        self.nodes.push(GrowNode {
            parent,
            samples,
            stats,
            eval,
            children: None,
        });
        id
    }

    /// Leaf with the largest cached gain; among gains within the tie
    /// tolerance of the maximum, the smallest id.
    fn select(&mut self) -> Option<usize> {
        let top = self.frontier.pop()?;
        let bound = top.gain - self.tie_tol;
        let mut tied = vec![top];
        while let Some(next) = self.frontier.peek() {
            if next.gain < bound {
                break;
            }
            tied.push(self.frontier.pop().expect("peeked"));
        }
        let pick = tied.iter().map(|f| f.id).min().expect("non-empty");
        for f in tied {
            if f.id != pick {
                self.frontier.push(f);
            }
        }
        Some(pick)
    }

    /// Splits the best frontier leaf. Returns `None` when no leaf can split.
    pub fn step(&mut self) -> Option<&SplitRecord> {
        let id = self.select()?;
        let eval = std::mem::replace(&mut self.nodes[id].eval, SplitEvaluation::none());
        let rule = eval.rule.clone().expect("frontier leaves have a rule");
        let (left_samples, right_samples) = rule.partition(&self.prep.ds, &self.nodes[id].samples);
        let left_stats = eval.left_stats.clone().expect("evaluated split carries stats");
        let right_stats = eval.right_stats.clone().expect("evaluated split carries stats");

        let search = self.search();
        let (left_eval, right_eval) = if left_samples.len() + right_samples.len() >= PARALLEL_CHILDREN {
            rayon::join(
                || search.best_rule(&left_samples, &left_stats),
                || search.best_rule(&right_samples, &right_stats),
            )
        } else {
            (
                search.best_rule(&left_samples, &left_stats),
                search.best_rule(&right_samples, &right_stats),
            )
        };

        let obj = &self.prep.objective;
        let compactness_gain =
            obj.compactness(&self.nodes[id].stats) - obj.compactness(&left_stats) - obj.compactness(&right_stats);
        if eval.gain < 0.0 {
            self.negative_gain_splits += 1;
        }
        let left = self.add_node(Some(id), left_samples.clone(), left_stats, left_eval);
        let right = self.add_node(Some(id), right_samples.clone(), right_stats, right_eval);
        self.nodes[id].children = Some((left, right));
        self.nodes[id].eval = eval;
        self.leaf_count += 1;
        self.log.push(SplitRecord {
            node: id,
            rule,
            left,
            right,
            gain: self.nodes[id].eval.gain,
            compactness_gain,
            left_samples,
            right_samples,
        });
        self.log.last()
    }

    pub fn grow_to(&mut self, k: usize) {
        while self.leaf_count < k {
            if self.step().is_none() {
                break;
            }
        }
    }

    pub fn grow_fully(&mut self) {
        while self.step().is_some() {}
    }

    pub fn objective(&self) -> &Objective {
        &self.prep.objective
    }

    /// Builds the final tree. Nodes flagged in `collapsed` become leaves
    /// even if they were split during growth.
    pub fn finalize(
        &self,
        collapsed: &[bool],
        algorithm: Algorithm,
        cfg: &FitConfig,
        target_k: usize,
    ) -> ClusteringTree {
        let prep = self.prep;
        let is_internal = |id: usize| self.nodes[id].children.is_some() && !collapsed.get(id).copied().unwrap_or(false);

        // reachable nodes and left-to-right leaf order
        let mut reachable = Vec::new();
        let mut leaf_order = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            reachable.push(id);
            if is_internal(id) {
                let (l, r) = self.nodes[id].children.expect("internal");
                stack.push(r);
                stack.push(l);
            } else {
                leaf_order.push(id);
            }
        }
        reachable.sort_unstable();
        let mut arena_of = vec![usize::MAX; self.nodes.len()];
        for (idx, &id) in reachable.iter().enumerate() {
            arena_of[id] = idx;
        }
        let mut cluster_of = vec![usize::MAX; self.nodes.len()];
        for (c, &id) in leaf_order.iter().enumerate() {
            cluster_of[id] = c;
        }

        let nodes: Vec<TreeNode> = reachable
            .iter()
            .map(|&id| {
                let g = &self.nodes[id];
                let kind = if is_internal(id) {
                    let (l, r) = g.children.expect("internal");
                    NodeKind::Internal {
                        rule: g.eval.rule.clone().expect("split nodes keep their rule"),
                        left: arena_of[l],
                        right: arena_of[r],
                    }
                } else {
                    NodeKind::Leaf {
                        cluster: cluster_of[id],
                    }
                };
                TreeNode {
                    id,
                    kind,
                    summary: NodeSummary {
                        n: g.stats.n,
                        compactness: two_pass_compactness(&prep.ds, &prep.layout, &g.samples, &prep.objective.weight),
                        fairness: prep.objective.fairness(&g.stats),
                        group_counts: g.stats.group_counts.clone(),
                    },
                }
            })
            .collect();

        let mut assignments = vec![0usize; prep.ds.n()];
        for (c, &id) in leaf_order.iter().enumerate() {
            for &i in &self.nodes[id].samples {
                assignments[i] = c;
            }
        }
        let leaves: Vec<usize> = leaf_order.iter().map(|&id| arena_of[id]).collect();
        let total_compactness = leaves.iter().map(|&l| nodes[l].summary.compactness).sum();
        let total_fairness = leaves.iter().map(|&l| nodes[l].summary.fairness).sum();

        ClusteringTree {
            exhausted: leaves.len() < target_k,
            nodes,
            leaves,
            features: FeatureSpace::of(&prep.ds),
            config: cfg.clone(),
            algorithm,
            weight: prep.objective.weight,
            profile: prep.objective.profile.clone(),
            total_compactness,
            total_fairness,
            fingerprint: prep.ds.fingerprint().to_string(),
            timestamp: None,
            assignments: Some(assignments),
            growth_log: self.log.clone(),
            negative_gain_splits: self.negative_gain_splits,
        }
    }
}

/// Fits a tree with exactly `cfg.k` leaves by best-first growth on
/// `L_C + λ L_F`.
///
/// If no leaf admits a feasible rule before k leaves are reached, the
/// smaller tree is returned with [`ClusteringTree::exhausted`] set.
pub fn fit_ifct(ds: &Dataset, cfg: &FitConfig) -> Result<ClusteringTree> {
    let prep = prepare(ds, cfg, cfg.lambda, cfg.lambda > 0.0)?;
    let mut grower = Grower::new(&prep, cfg);
    grower.grow_to(cfg.k);
    Ok(grower.finalize(&[], Algorithm::Ifct, cfg, cfg.k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::SplitRule;

    fn toy(sens: Vec<u32>) -> Dataset {
        Dataset::from_encoded(vec![vec![0.0, 0.1, 5.0, 5.1]], vec![], vec![sens], None).unwrap()
    }

    fn root_threshold(tree: &ClusteringTree) -> f64 {
        match &tree.root().kind {
            NodeKind::Internal {
                rule: SplitRule::NumericThreshold { threshold, .. },
                ..
            } => *threshold,
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn single_leaf_has_zero_fairness() {
        let tree = fit_ifct(&toy(vec![0, 0, 0, 1]), &FitConfig::with_k(1)).unwrap();
        assert_eq!(tree.k(), 1);
        assert_eq!(tree.total_fairness(), 0.0);
        assert!(!tree.exhausted());
        assert!((tree.total_compactness() - 25.01).abs() < 1e-9);
    }

    #[test]
    fn balanced_toy_ignores_lambda() {
        let tree = fit_ifct(&toy(vec![0, 1, 0, 1]), &FitConfig::with_k(2).lambda(1e4)).unwrap();
        assert!((root_threshold(&tree) - 2.55).abs() < 1e-12);
        assert_eq!(tree.total_fairness(), 0.0);
        assert_eq!(tree.assignments().unwrap(), &[0, 0, 1, 1]);
    }

    #[test]
    fn skewed_toy_splits_off_first_point() {
        let tree = fit_ifct(&toy(vec![0, 0, 1, 1]), &FitConfig::with_k(2).lambda(100.0)).unwrap();
        assert!((root_threshold(&tree) - 0.05).abs() < 1e-12);
        assert_eq!(tree.negative_gain_splits(), 1);
    }

    #[test]
    fn exhaustion_is_flagged() {
        let ds = Dataset::from_encoded(vec![vec![1.0, 2.0, 2.0, 3.0, 4.0, 4.0]], vec![], vec![], None).unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(10).lambda(0.0)).unwrap();
        assert_eq!(tree.k(), 4);
        assert!(tree.exhausted());
    }

    #[test]
    fn lambda_requires_sensitive_attribute() {
        let ds = Dataset::from_encoded(vec![vec![1.0, 2.0]], vec![], vec![], None).unwrap();
        assert!(fit_ifct(&ds, &FitConfig::with_k(2).lambda(1.0)).is_err());
        assert!(fit_ifct(&ds, &FitConfig::with_k(2).lambda(0.0)).is_ok());
        assert!(fit_ifct(&ds, &FitConfig::with_k(0).lambda(0.0)).is_err());
    }

    #[test]
    fn leaf_ties_split_earliest_node_first() {
        let tree = fit_ifct(&toy(vec![0, 1, 0, 1]), &FitConfig::with_k(3).lambda(0.0)).unwrap();
        let log = tree.growth_log();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].node, 1);
    }

    #[test]
    fn cluster_ids_follow_left_to_right_order() {
        let ds = Dataset::from_encoded(
            vec![vec![0.0, 1.0, 10.0, 11.0, 30.0, 31.0, 60.0, 61.0]],
            vec![],
            vec![],
            None,
        )
        .unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(4).lambda(0.0)).unwrap();
        assert_eq!(tree.assignments().unwrap(), &[0, 0, 1, 1, 2, 2, 3, 3]);
        for i in 0..ds.n() {
            assert_eq!(
                tree.route(&ds.sample(i), false).unwrap(),
                tree.assignments().unwrap()[i]
            );
        }
    }

    #[test]
    fn standardized_fit_routes_raw_samples() {
        let ds = Dataset::from_encoded(
            vec![vec![100.0, 101.0, 300.0, 302.0, 500.0], vec![1.0, 9.0, 2.0, 8.0, 5.0]],
            vec![],
            vec![vec![0, 1, 0, 1, 0]],
            None,
        )
        .unwrap();
        let cfg = FitConfig {
            standardize: true,
            ..FitConfig::with_k(3).lambda(1.0)
        };
        let tree = fit_ifct(&ds, &cfg).unwrap();
        assert!(tree.features().scaling.is_some());
        for i in 0..ds.n() {
            assert_eq!(
                tree.route(&ds.sample(i), false).unwrap(),
                tree.assignments().unwrap()[i]
            );
        }
    }
}

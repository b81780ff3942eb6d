//! Compactness-only over-expansion followed by fairness-guided pruning
//! down to k leaves (IFCT-P).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grow::{prepare, Grower};
use crate::tree::{Algorithm, ClusteringTree, FitConfig};

/// Gains within this distance of the best count as tied; the smaller node
/// id wins.
pub const PRUNE_TIE_TOLERANCE: f64 = 1e-12;

/// `Δ_F = mean(leaf deviations) - node deviation`.
pub fn subtree_prune_gain(leaf_deviations: &[f64], node_deviation: f64) -> f64 {
    assert!(!leaf_deviations.is_empty(), "a subtree has at least one leaf");
    leaf_deviations.iter().sum::<f64>() / leaf_deviations.len() as f64 - node_deviation
}

/// Pruning gain of arena node `idx` of a tree, from the fairness deviations
/// stored on its current leaves.
pub fn prune_gain(tree: &ClusteringTree, idx: usize) -> Result<f64> {
    use crate::tree::NodeKind;
    let node = tree
        .nodes()
        .get(idx)
        .ok_or_else(|| Error::InvalidInput(format!("node index {idx} out of range")))?;
    if matches!(node.kind, NodeKind::Leaf { .. }) {
        return Err(Error::InvalidInput(format!("node {} is a leaf", node.id)));
    }
    let mut devs = Vec::new();
    let mut stack = vec![idx];
    while let Some(i) = stack.pop() {
        match &tree.nodes()[i].kind {
            NodeKind::Leaf { .. } => devs.push(tree.nodes()[i].summary.fairness),
            NodeKind::Internal { left, right, .. } => {
                stack.push(*right);
                stack.push(*left);
            }
        }
    }
    Ok(subtree_prune_gain(&devs, node.summary.fairness))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // best first: larger gain, then smaller id
    fn cmp(&self, other: &Self) -> Ordering {
        other.gain.total_cmp(&self.gain).then_with(|| self.id.cmp(&other.id))
    }
}

/// What happened to the candidate examined by one pruning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneStep {
    /// The subtree was collapsed into a leaf.
    Collapsed { node: usize, gain: f64 },
    /// Collapsing would leave fewer than k leaves; dropped for good.
    Excluded { node: usize },
}

/// Candidate set and per-node subtree bookkeeping of the pruning phase.
/// Indexed by node id (creation order of the fully grown tree).
#[derive(Debug, Clone)]
pub struct PruneState {
    parent: Vec<Option<usize>>,
    children: Vec<Option<(usize, usize)>>,
    deviation: Vec<f64>,
    subtree_leaves: Vec<usize>,
    leaf_deviation_sum: Vec<f64>,
    gain: Vec<f64>,
    collapsed: Vec<bool>,
    excluded: Vec<bool>,
    queue: BTreeSet<Candidate>,
    leaf_count: usize,
}

impl PruneState {
    fn new(parent: Vec<Option<usize>>, children: Vec<Option<(usize, usize)>>, deviation: Vec<f64>) -> Self {
        let m = parent.len();
        let mut subtree_leaves = vec![0usize; m];
        let mut leaf_deviation_sum = vec![0.0; m];
        // children always have larger ids than their parent
        for id in (0..m).rev() {
            match children[id] {
                None => {
                    subtree_leaves[id] = 1;
                    leaf_deviation_sum[id] = deviation[id];
                }
                Some((l, r)) => {
                    subtree_leaves[id] = subtree_leaves[l] + subtree_leaves[r];
                    leaf_deviation_sum[id] = leaf_deviation_sum[l] + leaf_deviation_sum[r];
                }
            }
        }
        let mut state = Self {
            leaf_count: if m == 0 { 0 } else { subtree_leaves[0] },
            parent,
            deviation,
            subtree_leaves,
            leaf_deviation_sum,
            gain: vec![f64::NAN; m],
            collapsed: vec![false; m],
            excluded: vec![false; m],
            queue: BTreeSet::new(),
            children,
        };
        for id in 0..m {
            if state.children[id].is_some() {
                state.gain[id] = state.compute_gain(id);
                state.queue.insert(Candidate {
                    gain: state.gain[id],
                    id,
                });
            }
        }
        state
    }

    fn compute_gain(&self, id: usize) -> f64 {
        self.leaf_deviation_sum[id] / self.subtree_leaves[id] as f64 - self.deviation[id]
    }

    fn from_grower(grower: &Grower<'_>) -> Self {
        let obj = grower.objective();
        Self::new(
            grower.nodes.iter().map(|g| g.parent).collect(),
            grower.nodes.iter().map(|g| g.children).collect(),
            grower.nodes.iter().map(|g| obj.fairness(&g.stats)).collect(),
        )
    }

    /// Current number of leaves.
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Candidate node ids, best first.
    pub fn candidates(&self) -> Vec<usize> {
        self.queue.iter().map(|c| c.id).collect()
    }

    pub fn is_candidate(&self, id: usize) -> bool {
        self.queue.contains(&Candidate {
            gain: self.gain[id],
            id,
        })
    }

    /// Leaves currently below node `id`.
    pub fn subtree_leaves(&self, id: usize) -> usize {
        self.subtree_leaves[id]
    }

    /// Current `Δ_F` of internal node `id`; NaN for leaves of the grown tree.
    pub fn prune_gain(&self, id: usize) -> f64 {
        self.gain[id]
    }

    pub fn collapsed(&self) -> &[bool] {
        &self.collapsed
    }

    fn select(&self) -> Option<Candidate> {
        let best = *self.queue.first()?;
        let bound = best.gain - PRUNE_TIE_TOLERANCE;
        self.queue
            .iter()
            .take_while(|c| c.gain >= bound)
            .min_by_key(|c| c.id)
            .copied()
    }

    /// Examines the best candidate once. Returns `None` when no candidates
    /// remain.
    pub fn step(&mut self, k: usize) -> Option<PruneStep> {
        let cand = self.select()?;
        self.queue.remove(&cand);
        let id = cand.id;
        if self.leaf_count + 1 < k + self.subtree_leaves[id] {
            self.excluded[id] = true;
            return Some(PruneStep::Excluded { node: id });
        }

        // drop every internal node of the subtree from the candidate set
        let mut stack = vec![id];
        while let Some(i) = stack.pop() {
            if let Some((l, r)) = self.children[i] {
                self.queue.remove(&Candidate {
                    gain: self.gain[i],
                    id: i,
                });
                if !self.collapsed[i] {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }

        let removed = self.subtree_leaves[id] - 1;
        let delta = self.deviation[id] - self.leaf_deviation_sum[id];
        self.collapsed[id] = true;
        self.leaf_count -= removed;
        self.subtree_leaves[id] = 1;
        self.leaf_deviation_sum[id] = self.deviation[id];

        let mut cur = self.parent[id];
        while let Some(a) = cur {
            let queued = !self.excluded[a];
            if queued {
                self.queue.remove(&Candidate {
                    gain: self.gain[a],
                    id: a,
                });
            }
            self.subtree_leaves[a] -= removed;
            self.leaf_deviation_sum[a] += delta;
            self.gain[a] = self.compute_gain(a);
            if queued {
                self.queue.insert(Candidate {
                    gain: self.gain[a],
                    id: a,
                });
            }
            cur = self.parent[a];
        }
        Some(PruneStep::Collapsed {
            node: id,
            gain: cand.gain,
        })
    }

    /// Prunes until `k` leaves remain or candidates run out.
    pub fn prune_to(&mut self, k: usize) -> Vec<PruneStep> {
        let mut steps = Vec::new();
        while self.leaf_count > k {
            match self.step(k) {
                Some(s) => steps.push(s),
                None => break,
            }
        }
        steps
    }
}

/// Grows a tree best-first on compactness alone until no leaf admits a
/// feasible rule. Returns the grown tree with its initial pruning state.
pub fn grow_full(ds: &Dataset, cfg: &FitConfig) -> Result<(ClusteringTree, PruneState)> {
    let prep = prepare(ds, cfg, 0.0, false)?;
    let mut grower = Grower::new(&prep, cfg);
    grower.grow_fully();
    let state = PruneState::from_grower(&grower);
    let tree = grower.finalize(&[], Algorithm::IfctP, cfg, 1);
    Ok((tree, state))
}

/// Fits a tree with exactly `cfg.k` leaves by over-expansion and
/// fairness-guided pruning. `cfg.lambda` is ignored.
pub fn fit_ifct_p(ds: &Dataset, cfg: &FitConfig) -> Result<ClusteringTree> {
    let prep = prepare(ds, cfg, 0.0, true)?;
    let mut grower = Grower::new(&prep, cfg);
    grower.grow_fully();
    if grower.leaf_count < cfg.k {
        return Err(Error::InsufficientStructure {
            leaves: grower.leaf_count,
            k: cfg.k,
        });
    }
    let mut state = PruneState::from_grower(&grower);
    state.prune_to(cfg.k);
    if state.leaf_count() != cfg.k {
        return Err(Error::InsufficientStructure {
            leaves: state.leaf_count(),
            k: cfg.k,
        });
    }
    Ok(grower.finalize(state.collapsed(), Algorithm::IfctP, cfg, cfg.k))
}

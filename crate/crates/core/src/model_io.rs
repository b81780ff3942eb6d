//! Model files, rule and DOT export, and batch prediction.
//!
//! A model file is a JSON document holding everything needed to route new
//! samples. Floats are written with 17 significant digits so every value,
//! thresholds included, reads back bit for bit.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::data::{Dictionary, Sample, Scaling, SensitiveProfile};
use crate::error::{Error, Result};
use crate::losses::MixedWeight;
use crate::split::SplitRule;
use crate::tree::{Algorithm, ClusteringTree, FeatureSpace, FitConfig, NodeKind, NodeSummary, TreeNode};

pub const FORMAT_VERSION: u32 = 1;

/// A float written as a decimal with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("cannot store non-finite value {}", self.0)));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Real)
    }
}

fn reals(xs: &[f64]) -> Vec<Real> {
    xs.iter().copied().map(Real).collect()
}

fn floats(xs: &[Real]) -> Vec<f64> {
    xs.iter().map(|r| r.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub algorithm: Algorithm,
    /// Unix seconds; absent unless requested, to keep files reproducible.
    pub timestamp: Option<u64>,
    pub dataset_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericalColumn {
    pub name: String,
    /// Standardization applied before thresholds are compared.
    pub mean: Option<Real>,
    pub std: Option<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenColumn {
    pub name: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSnapshot {
    pub numerical: Vec<NumericalColumn>,
    pub categorical: Vec<TokenColumn>,
    pub sensitive: Vec<TokenColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub k: usize,
    pub lambda: Real,
    pub weights: Option<Vec<Real>>,
    pub n_min: usize,
    pub epsilon: Real,
    pub cat_cap: usize,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSnapshot {
    pub compactness: Real,
    pub fairness: Real,
    pub total: Real,
    pub mixed_weight: Real,
    pub rho: Real,
    pub global_group_distributions: Vec<Vec<Real>>,
    pub fairness_weights: Vec<Real>,
    pub exhausted: bool,
    pub negative_gain_splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum RuleDoc {
    Threshold { feature: String, threshold: Real },
    Subset { feature: String, left: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKindDoc {
    Internal,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: usize,
    pub kind: NodeKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub n: usize,
    pub compactness: Real,
    pub fairness: Real,
    pub group_counts: Vec<Vec<usize>>,
}

/// Serialized form of a fitted tree. Nodes are listed in creation order
/// with the root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub provenance: Provenance,
    pub schema: SchemaSnapshot,
    pub config: ConfigSnapshot,
    pub objective: ObjectiveSnapshot,
    pub nodes: Vec<NodeDoc>,
}

impl ModelDocument {
    pub fn from_tree(tree: &ClusteringTree) -> Self {
        let f = &tree.features;
        let numerical = f
            .num_names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let s = f.scaling.as_ref().map(|s| s[i]);
                NumericalColumn {
                    name: name.clone(),
                    mean: s.map(|s| Real(s.mean)),
                    std: s.map(|s| Real(s.std)),
                }
            })
            .collect();
        let tokens = |names: &[String], dicts: &[Dictionary]| {
            names
                .iter()
                .zip(dicts)
                .map(|(name, d)| TokenColumn {
                    name: name.clone(),
                    tokens: d.tokens().to_vec(),
                })
                .collect()
        };
        let cfg = &tree.config;
        let nodes = tree
            .nodes
            .iter()
            .map(|node| {
                let (kind, rule, left, right, cluster) = match &node.kind {
                    NodeKind::Internal { rule, left, right } => (
                        NodeKindDoc::Internal,
                        Some(rule_doc(f, rule)),
                        Some(tree.nodes[*left].id),
                        Some(tree.nodes[*right].id),
                        None,
                    ),
                    NodeKind::Leaf { cluster } => (NodeKindDoc::Leaf, None, None, None, Some(*cluster)),
                };
                NodeDoc {
                    id: node.id,
                    kind,
                    rule,
                    left,
                    right,
                    cluster,
                    n: node.summary.n,
                    compactness: Real(node.summary.compactness),
                    fairness: Real(node.summary.fairness),
                    group_counts: node.summary.group_counts.clone(),
                }
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            provenance: Provenance {
                algorithm: tree.algorithm,
                timestamp: tree.timestamp,
                dataset_sha256: tree.fingerprint.clone(),
            },
            schema: SchemaSnapshot {
                numerical,
                categorical: tokens(&f.cat_names, &f.cat_dicts),
                sensitive: tokens(&f.sens_names, &f.sens_dicts),
            },
            config: ConfigSnapshot {
                k: cfg.k,
                lambda: Real(cfg.lambda),
                weights: cfg.weights.as_deref().map(reals),
                n_min: cfg.n_min,
                epsilon: Real(cfg.epsilon),
                cat_cap: cfg.cat_cap,
                standardize: cfg.standardize,
            },
            objective: ObjectiveSnapshot {
                compactness: Real(tree.total_compactness),
                fairness: Real(tree.total_fairness),
                total: Real(tree.objective()),
                mixed_weight: Real(tree.weight.value),
                rho: Real(tree.weight.rho),
                global_group_distributions: tree.profile.global_dists.iter().map(|d| reals(d)).collect(),
                fairness_weights: reals(&tree.profile.weights),
                exhausted: tree.exhausted,
                negative_gain_splits: tree.negative_gain_splits,
            },
            nodes,
        }
    }

    /// Validates the document and rebuilds the tree.
    pub fn into_tree(self) -> Result<ClusteringTree> {
        let bad = |msg: String| Error::Model(msg);
        if self.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        let features = feature_space(&self.schema)?;
        if self.nodes.is_empty() {
            return Err(bad("document has no nodes".into()));
        }

        let mut pos: HashMap<usize, usize> = HashMap::new();
        for (p, node) in self.nodes.iter().enumerate() {
            if pos.insert(node.id, p).is_some() {
                return Err(bad(format!("duplicate node id {}", node.id)));
            }
        }
        let mut has_parent = vec![false; self.nodes.len()];
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut leaf_of_cluster: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let group_shape: Vec<usize> = features.sens_dicts.iter().map(Dictionary::len).collect();
        for (p, node) in self.nodes.iter().enumerate() {
            let kind = match node.kind {
                NodeKindDoc::Internal => {
                    if node.cluster.is_some() {
                        return Err(bad(format!("internal node {} has a cluster id", node.id)));
                    }
                    let rule = node
                        .rule
                        .as_ref()
                        .ok_or_else(|| bad(format!("internal node {} has no rule", node.id)))?;
                    let mut child = |c: Option<usize>, side: &str| -> Result<usize> {
                        let c = c.ok_or_else(|| bad(format!("internal node {} has no {side} child", node.id)))?;
                        let cp = *pos
                            .get(&c)
                            .ok_or_else(|| bad(format!("node {} references missing child {c}", node.id)))?;
                        if std::mem::replace(&mut has_parent[cp], true) {
                            return Err(bad(format!("node {c} has more than one parent")));
                        }
                        Ok(cp)
                    };
                    let left = child(node.left, "left")?;
                    let right = child(node.right, "right")?;
                    NodeKind::Internal {
                        rule: parse_rule(&features, rule)?,
                        left,
                        right,
                    }
                }
                NodeKindDoc::Leaf => {
                    if node.rule.is_some() || node.left.is_some() || node.right.is_some() {
                        return Err(bad(format!("leaf {} has a rule or children", node.id)));
                    }
                    let c = node
                        .cluster
                        .ok_or_else(|| bad(format!("leaf {} has no cluster id", node.id)))?;
                    match leaf_of_cluster.get_mut(c) {
                        Some(slot @ None) => *slot = Some(p),
                        Some(Some(_)) => return Err(bad(format!("cluster id {c} is used by two leaves"))),
                        None => return Err(bad(format!("cluster id {c} out of range"))),
                    }
                    NodeKind::Leaf { cluster: c }
                }
            };
            if node.group_counts.len() != group_shape.len()
                || node.group_counts.iter().zip(&group_shape).any(|(g, &m)| g.len() != m)
            {
                return Err(bad(format!("node {} has group counts of the wrong shape", node.id)));
            }
            nodes.push(TreeNode {
                id: node.id,
                kind,
                summary: NodeSummary {
                    n: node.n,
                    compactness: node.compactness.0,
                    fairness: node.fairness.0,
                    group_counts: node.group_counts.clone(),
                },
            });
        }

        let roots: Vec<usize> = (0..nodes.len()).filter(|&p| !has_parent[p]).collect();
        if roots != [0] {
            return Err(bad(match roots.len() {
                1 => "the root must be the first node".to_string(),
                r => format!("expected exactly one root, found {r}"),
            }));
        }
        // one parent per node and a single root: reaching every node from
        // the root rules out cycles
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(p) = stack.pop() {
            if std::mem::replace(&mut seen[p], true) {
                return Err(bad("node references form a cycle".into()));
            }
            if let NodeKind::Internal { left, right, .. } = nodes[p].kind {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("node references form a cycle".into()));
        }
        let k = leaf_of_cluster.iter().take_while(|l| l.is_some()).count();
        if leaf_of_cluster[k..].iter().any(Option::is_some) {
            return Err(bad("leaf cluster ids are not contiguous from 0".into()));
        }
        let leaves: Vec<usize> = leaf_of_cluster[..k].iter().map(|l| l.expect("checked")).collect();

        let o = &self.objective;
        let c = &self.config;
        Ok(ClusteringTree {
            nodes,
            leaves,
            features,
            config: FitConfig {
                k: c.k,
                lambda: c.lambda.0,
                weights: c.weights.as_deref().map(floats),
                n_min: c.n_min,
                epsilon: c.epsilon.0,
                cat_cap: c.cat_cap,
                standardize: c.standardize,
            },
            algorithm: self.provenance.algorithm,
            weight: MixedWeight {
                value: o.mixed_weight.0,
                rho: o.rho.0,
                epsilon: c.epsilon.0,
            },
            profile: SensitiveProfile {
                global_dists: o.global_group_distributions.iter().map(|d| floats(d)).collect(),
                weights: floats(&o.fairness_weights),
            },
            total_compactness: o.compactness.0,
            total_fairness: o.fairness.0,
            exhausted: o.exhausted,
            fingerprint: self.provenance.dataset_sha256,
            timestamp: self.provenance.timestamp,
            assignments: None,
            growth_log: Vec::new(),
            negative_gain_splits: o.negative_gain_splits,
        })
    }
}

fn rule_doc(f: &FeatureSpace, rule: &SplitRule) -> RuleDoc {
    match rule {
        SplitRule::NumericThreshold { feature, threshold } => RuleDoc::Threshold {
            feature: f.num_names[*feature].clone(),
            threshold: Real(*threshold),
        },
        SplitRule::CategorySubset { feature, left } => RuleDoc::Subset {
            feature: f.cat_names[*feature].clone(),
            left: left
                .iter()
                .map(|&id| {
                    f.cat_dicts[*feature]
                        .decode(id)
                        .expect("rule ids come from the dictionary")
                        .to_string()
                })
                .collect(),
        },
    }
}

fn parse_rule(f: &FeatureSpace, rule: &RuleDoc) -> Result<SplitRule> {
    let find = |names: &[String], name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Model(format!("rule references unknown feature `{name}`")))
    };
    match rule {
        RuleDoc::Threshold { feature, threshold } => Ok(SplitRule::NumericThreshold {
            feature: find(&f.num_names, feature)?,
            threshold: threshold.0,
        }),
        RuleDoc::Subset { feature, left } => {
            let j = find(&f.cat_names, feature)?;
            let mut ids = left
                .iter()
                .map(|t| {
                    f.cat_dicts[j]
                        .lookup(t)
                        .ok_or_else(|| Error::Model(format!("rule on `{feature}` uses unknown category `{t}`")))
                })
                .collect::<Result<Vec<u32>>>()?;
            ids.sort_unstable();
            ids.dedup();
            if ids.is_empty() {
                return Err(Error::Model(format!("subset rule on `{feature}` has no categories")));
            }
            Ok(SplitRule::CategorySubset { feature: j, left: ids })
        }
    }
}

fn feature_space(s: &SchemaSnapshot) -> Result<FeatureSpace> {
    let mut names = HashSet::new();
    for n in s
        .numerical
        .iter()
        .map(|c| &c.name)
        .chain(s.categorical.iter().map(|c| &c.name))
        .chain(s.sensitive.iter().map(|c| &c.name))
    {
        if !names.insert(n) {
            return Err(Error::Model(format!("duplicate column `{n}`")));
        }
    }
    let scaled = s
        .numerical
        .iter()
        .filter(|c| c.mean.is_some() && c.std.is_some())
        .count();
    let unscaled = s
        .numerical
        .iter()
        .filter(|c| c.mean.is_none() && c.std.is_none())
        .count();
    let scaling = if unscaled == s.numerical.len() {
        None
    } else if scaled == s.numerical.len() {
        let v: Vec<Scaling> = s
            .numerical
            .iter()
            .map(|c| Scaling {
                mean: c.mean.expect("checked").0,
                std: c.std.expect("checked").0,
            })
            .collect();
        if v.iter().any(|sc| !(sc.std > 0.0 && sc.mean.is_finite())) {
            return Err(Error::Model("scaling needs a finite mean and a positive std".into()));
        }
        Some(v)
    } else {
        return Err(Error::Model("either all or no numerical columns carry scaling".into()));
    };
    let dicts = |cols: &[TokenColumn]| -> Result<Vec<Dictionary>> {
        cols.iter()
            .map(|c| {
                Dictionary::from_tokens(c.tokens.iter().cloned())
                    .map_err(|e| Error::Model(format!("column `{}`: {e}", c.name)))
            })
            .collect()
    };
    Ok(FeatureSpace {
        num_names: s.numerical.iter().map(|c| c.name.clone()).collect(),
        scaling,
        cat_names: s.categorical.iter().map(|c| c.name.clone()).collect(),
        cat_dicts: dicts(&s.categorical)?,
        sens_names: s.sensitive.iter().map(|c| c.name.clone()).collect(),
        sens_dicts: dicts(&s.sensitive)?,
    })
}

/// Canonical bytes of a tree's model document.
pub fn save(tree: &ClusteringTree) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(&ModelDocument::from_tree(tree))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_file(tree: &ClusteringTree, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save(tree)?)?;
    Ok(())
}

pub fn load(bytes: &[u8]) -> Result<ClusteringTree> {
    let doc: ModelDocument = serde_json::from_slice(bytes).map_err(|e| Error::Model(e.to_string()))?;
    doc.into_tree()
}

pub fn load_file(path: impl AsRef<Path>) -> Result<ClusteringTree> {
    load(&std::fs::read(path)?)
}

fn needs_quotes(token: &str) -> bool {
    token.is_empty() || token.chars().any(|c| c.is_whitespace() || ",{}\"\\".contains(c))
}

fn show_token(token: &str) -> String {
    if needs_quotes(token) {
        serde_json::to_string(token).expect("strings always serialize")
    } else {
        token.to_string()
    }
}

fn condition(f: &FeatureSpace, rule: &SplitRule, left: bool) -> String {
    match rule {
        SplitRule::NumericThreshold { feature, threshold } => {
            let t = f.raw_threshold(*feature, *threshold);
            let op = if left { "≤" } else { ">" };
            format!("{} {op} {t}", f.num_names[*feature])
        }
        SplitRule::CategorySubset { feature, left: ids } => {
            let set: Vec<String> = ids
                .iter()
                .map(|&id| show_token(f.cat_dicts[*feature].decode(id).unwrap_or("?")))
                .collect();
            let op = if left { "∈" } else { "∉" };
            format!("{} {op} {{{}}}", f.cat_names[*feature], set.join(", "))
        }
    }
}

/// One line per leaf, in cluster order, listing the conditions on the path
/// from the root. Thresholds are in raw feature units.
pub fn export_rules(tree: &ClusteringTree) -> String {
    let mut out = String::new();
    for (c, &leaf) in tree.leaves.iter().enumerate() {
        let conds: Vec<String> = tree
            .path_to(leaf)
            .into_iter()
            .map(|(rule, left)| condition(&tree.features, rule, left))
            .collect();
        let body = if conds.is_empty() {
            "(all samples)".to_string()
        } else {
            conds.join(" AND ")
        };
        let _ = writeln!(out, "cluster {c} (n={}): {body}", tree.nodes[leaf].summary.n);
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

/// Graphviz rendering: rules on internal nodes, cluster id, size and group
/// proportions on leaves.
pub fn export_dot(tree: &ClusteringTree) -> String {
    let f = &tree.features;
    let mut out = String::from("digraph fairtree {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for node in &tree.nodes {
        let lines: Vec<String> = match &node.kind {
            NodeKind::Internal { rule, .. } => vec![condition(f, rule, true), format!("n={}", node.summary.n)],
            NodeKind::Leaf { cluster } => {
                let mut lines = vec![format!("cluster {cluster}"), format!("n={}", node.summary.n)];
                for (u, counts) in node.summary.group_counts.iter().enumerate() {
                    let n = node.summary.n.max(1) as f64;
                    let parts: Vec<String> = counts
                        .iter()
                        .enumerate()
                        .map(|(g, &c)| {
                            format!(
                                "{}={:.3}",
                                show_token(f.sens_dicts[u].decode(g as u32).unwrap_or("?")),
                                c as f64 / n
                            )
                        })
                        .collect();
                    lines.push(format!("{}: {}", f.sens_names[u], parts.join(" ")));
                }
                lines
            }
        };
        let label: Vec<String> = lines.iter().map(|l| dot_escape(l)).collect();
        let style = if matches!(node.kind, NodeKind::Leaf { .. }) {
            ", style=rounded"
        } else {
            ""
        };
        let _ = writeln!(out, "  n{} [label=\"{}\"{style}];", node.id, label.join("\\n"));
    }
    for node in &tree.nodes {
        if let NodeKind::Internal { left, right, .. } = node.kind {
            let _ = writeln!(out, "  n{} -> n{} [label=\"yes\"];", node.id, tree.nodes[left].id);
            let _ = writeln!(out, "  n{} -> n{} [label=\"no\"];", node.id, tree.nodes[right].id);
        }
    }
    out.push_str("}\n");
    out
}

/// Cluster ids of the rows of a CSV file plus the same CSV with a trailing
/// `cluster` column.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub clusters: Vec<usize>,
    pub csv: Vec<u8>,
}

/// Routes every row of a CSV through the tree. Columns are matched by
/// name; extra columns are carried through unchanged.
pub fn predict_batch(tree: &ClusteringTree, csv_bytes: &[u8], permissive: bool) -> Result<Prediction> {
    let f = &tree.features;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(csv_bytes);
    let header = reader.headers()?.clone();
    let column = |name: &String| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))
    };
    let num_cols = f.num_names.iter().map(column).collect::<Result<Vec<_>>>()?;
    let cat_cols = f.cat_names.iter().map(column).collect::<Result<Vec<_>>>()?;
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;

    let clusters = records
        .par_iter()
        .enumerate()
        .map(|(r, rec)| {
            let row = r + 1;
            if rec.len() != header.len() {
                return Err(Error::Row {
                    row,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let num = num_cols
                .iter()
                .zip(&f.num_names)
                .map(|(&c, name)| {
                    let cell = rec[c].trim();
                    if cell.is_empty() {
                        return Err(Error::MissingValue {
                            row,
                            column: name.clone(),
                        });
                    }
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(Error::Parse {
                            row,
                            column: name.clone(),
                            value: cell.to_string(),
                        }),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let cat = cat_cols
                .iter()
                .zip(&f.cat_names)
                .map(|(&c, name)| {
                    let cell = rec[c].trim();
                    if cell.is_empty() {
                        Err(Error::MissingValue {
                            row,
                            column: name.clone(),
                        })
                    } else {
                        Ok(cell.to_string())
                    }
                })
                .collect::<Result<Vec<String>>>()?;
            tree.route(&Sample { num, cat }, permissive).map_err(|e| match e {
                Error::UnknownCategory { feature, token } => Error::Row {
                    row,
                    message: format!("unknown category `{token}` in column `{feature}`"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut out_header = header.clone();
    out_header.push_field("cluster");
    writer.write_record(&out_header)?;
    for (rec, c) in records.iter().zip(&clusters) {
        let mut rec = rec.clone();
        rec.push_field(&c.to_string());
        writer.write_record(&rec)?;
    }
    let csv = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(Prediction { clusters, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_csv_bytes, Dataset, Schema};
    use crate::grow::fit_ifct;

    fn toy_tree(k: usize) -> ClusteringTree {
        let ds = Dataset::from_encoded(vec![vec![0.0, 0.1, 5.0, 5.1]], vec![], vec![vec![0, 1, 0, 1]], None).unwrap();
        fit_ifct(&ds, &FitConfig::with_k(k)).unwrap()
    }

    fn job_csv() -> (&'static str, Schema) {
        let csv = "x,job,s\n1.0,a,m\n1.5,a,f\n2.0,b c,m\n9.0,b c,f\n9.5,d,m\n10.0,d,f\n";
        let schema = Schema::from_json_str(r#"{"x":"numerical","job":"categorical","s":"sensitive"}"#).unwrap();
        (csv, schema)
    }

    // only `job` carries a usable split
    const CONSTANT_X: &str = "x,job,s\n1,a,m\n1,a,f\n1,b c,m\n1,b c,f\n1,d,m\n1,d,f\n";

    #[test]
    fn real_writes_seventeen_digits() {
        assert_eq!(serde_json::to_string(&Real(2.55)).unwrap(), "2.5499999999999998e0");
        assert_eq!(serde_json::to_string(&Real(0.0)).unwrap(), "0.0000000000000000e0");
        let back: Real = serde_json::from_str("2.5499999999999998e0").unwrap();
        assert_eq!(back.0, 2.55);
        assert!(serde_json::to_string(&Real(f64::NAN)).is_err());
    }

    #[test]
    fn root_only_document() {
        let tree = toy_tree(1);
        let doc = ModelDocument::from_tree(&tree);
        assert_eq!(doc.nodes.len(), 1);
        assert_eq!(doc.nodes[0].kind, NodeKindDoc::Leaf);
        assert_eq!(doc.nodes[0].cluster, Some(0));
        assert_eq!(export_rules(&tree), "cluster 0 (n=4): (all samples)\n");
        let dot = export_dot(&tree);
        assert_eq!(dot.matches("[label=").count(), 1);
        assert!(!dot.contains("->"));
    }

    #[test]
    fn save_load_save_is_identical() {
        let tree = toy_tree(2);
        let a = save(&tree).unwrap();
        let loaded = load(&a).unwrap();
        let b = save(&loaded).unwrap();
        assert_eq!(a, b);
        for x in [-1.0, 0.05, 2.55, 2.5500000000000003, 5.05, 7.0] {
            let s = Sample {
                num: vec![x],
                cat: vec![],
            };
            assert_eq!(tree.route(&s, false).unwrap(), loaded.route(&s, false).unwrap());
        }
    }

    #[test]
    fn invalid_documents_are_rejected() {
        let tree = toy_tree(2);
        let good = ModelDocument::from_tree(&tree);

        let mut doc = good.clone();
        doc.nodes[0].right = Some(99);
        assert!(matches!(doc.into_tree(), Err(Error::Model(m)) if m.contains("missing child")));

        let mut doc = good.clone();
        doc.nodes[1].id = doc.nodes[2].id;
        assert!(doc.into_tree().is_err());

        let mut doc = good.clone();
        doc.nodes[2].cluster = Some(5);
        assert!(doc.into_tree().is_err());

        let mut doc = good.clone();
        doc.nodes[0].left = Some(0);
        assert!(doc.into_tree().is_err());

        let mut doc = good.clone();
        doc.format_version = 2;
        assert!(doc.into_tree().is_err());

        let mut doc = good;
        doc.nodes[0].rule = Some(RuleDoc::Threshold {
            feature: "nope".into(),
            threshold: Real(1.0),
        });
        assert!(doc.into_tree().is_err());

        assert!(load(b"{\"format_version\": 1}").is_err());
    }

    #[test]
    fn rules_text() {
        let tree = toy_tree(2);
        assert_eq!(
            export_rules(&tree),
            "cluster 0 (n=2): x0 ≤ 2.55\ncluster 1 (n=2): x0 > 2.55\n"
        );
        let dot = export_dot(&tree);
        assert_eq!(dot.matches("[label=").count(), 5);
        assert_eq!(dot.matches("->").count(), 2);
    }

    #[test]
    fn categorical_rules_and_quoting() {
        let (_, schema) = job_csv();
        let ds = load_csv_bytes(CONSTANT_X.as_bytes(), &schema).unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(2).lambda(0.0)).unwrap();
        let rules = export_rules(&tree);
        assert!(
            rules.contains("job ∈ {a}") || rules.contains("job ∈ {a, \"b c\"}"),
            "{rules}"
        );
        assert!(rules.contains("job ∉"), "{rules}");
        let dot = export_dot(&tree);
        assert!(!dot.contains("{b c}"));
    }

    #[test]
    fn predict_reproduces_fit_assignments() {
        let (csv, schema) = job_csv();
        let ds = load_csv_bytes(csv.as_bytes(), &schema).unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(3).lambda(1.0)).unwrap();
        let loaded = load(&save(&tree).unwrap()).unwrap();
        let pred = predict_batch(&loaded, csv.as_bytes(), false).unwrap();
        assert_eq!(pred.clusters, tree.assignments().unwrap());
        let text = String::from_utf8(pred.csv).unwrap();
        assert!(text.starts_with("x,job,s,cluster\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn predict_errors_name_row_and_column() {
        let (_, schema) = job_csv();
        let ds = load_csv_bytes(CONSTANT_X.as_bytes(), &schema).unwrap();
        let tree = fit_ifct(&ds, &FitConfig::with_k(2).lambda(0.0)).unwrap();
        let unseen = "x,job\n1.0,a\n2.0,zzz\n";
        match predict_batch(&tree, unseen.as_bytes(), false) {
            Err(e @ Error::Row { row: 2, .. }) => assert!(e.to_string().contains("`job`")),
            other => panic!("unexpected {other:?}"),
        }
        let pred = predict_batch(&tree, unseen.as_bytes(), true).unwrap();
        let NodeKind::Internal { right, .. } = tree.root().kind else {
            panic!("root should be internal")
        };
        let NodeKind::Leaf { cluster } = tree.nodes()[right].kind else {
            panic!("right child should be a leaf")
        };
        assert_eq!(pred.clusters[1], cluster);

        assert!(matches!(
            predict_batch(&tree, b"y,job\n1.0,a\n", false),
            Err(Error::MissingColumn(c)) if c == "x"
        ));
    }
}

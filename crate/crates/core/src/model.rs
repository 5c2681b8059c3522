//! Tree-based classifiers with explicit axis-aligned split rules.
//!
//! Every split sends a point left iff `point[feature] <= threshold`. Models
//! are immutable once parsed and `classify` is pure, so a `Model` can be
//! shared freely across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeafNode {
    Label(usize),
    Score(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Split(SplitNode),
    Leaf(LeafNode),
}

/// A single tree stored as an arena of nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    root: usize,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Leaf reached by `point`. The caller guarantees the dimension.
    #[inline]
    pub fn leaf(&self, point: &[f64]) -> LeafNode {
        let mut at = self.root;
        loop {
            match self.nodes[at] {
                Node::Split(s) => {
                    at = if point[s.feature] <= s.threshold {
                        s.left
                    } else {
                        s.right
                    };
                }
                Node::Leaf(leaf) => return leaf,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split(s) => 1 + go(nodes, s.left).max(go(nodes, s.right)),
                Node::Leaf(_) => 0,
            }
        }
        go(&self.nodes, self.root)
    }

    fn split_rules(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split(s) => Some((s.feature, s.threshold)),
            Node::Leaf(_) => None,
        })
    }

    fn label(&self, point: &[f64]) -> usize {
        match self.leaf(point) {
            LeafNode::Label(c) => c,
            LeafNode::Score(_) => unreachable!("classification tree with score leaf"),
        }
    }

    fn score(&self, point: &[f64]) -> f64 {
        match self.leaf(point) {
            LeafNode::Score(s) => s,
            LeafNode::Label(_) => unreachable!("boosted tree with label leaf"),
        }
    }
}

/// Majority vote over per-tree labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    BinaryLogistic,
    MultiSoftmax,
}

/// Additive ensemble of score trees. For `MultiSoftmax`, `tree_class[t]` is
/// the class whose margin tree `t` contributes to.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostedEnsemble {
    pub trees: Vec<DecisionTree>,
    pub base_score: f64,
    pub objective: Objective,
    pub tree_class: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    DecisionTree(DecisionTree),
    Forest(Forest),
    Boosted(BoostedEnsemble),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_bounds: Option<Vec<Option<(f64, f64)>>>,
}

impl Model {
    pub fn trees(&self) -> &[DecisionTree] {
        match &self.kind {
            ModelKind::DecisionTree(t) => std::slice::from_ref(t),
            ModelKind::Forest(f) => &f.trees,
            ModelKind::Boosted(b) => &b.trees,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::DecisionTree(_) => "decision_tree",
            ModelKind::Forest(_) => "random_forest",
            ModelKind::Boosted(_) => "boosted_ensemble",
        }
    }

    /// Bounds of feature `i`, if declared.
    pub fn bounds(&self, i: usize) -> Option<(f64, f64)> {
        self.feature_bounds.as_ref().and_then(|b| b[i])
    }

    /// Predicted class of `point`.
    pub fn classify(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: point.len(),
            });
        }
        if let Some((index, &value)) = point.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(self.predict(point))
    }

    /// `classify` without argument checks, for hot loops over points the
    /// caller has already validated.
    pub fn predict(&self, point: &[f64]) -> usize {
        match &self.kind {
            ModelKind::DecisionTree(t) => t.label(point),
            ModelKind::Forest(f) => {
                let mut votes = vec![0u32; self.n_classes];
                for t in &f.trees {
                    votes[t.label(point)] += 1;
                }
                argmax_first(votes.iter().map(|&v| v as f64))
            }
            ModelKind::Boosted(b) => match b.objective {
                Objective::BinaryLogistic => {
                    let margin: f64 =
                        b.base_score + b.trees.iter().map(|t| t.score(point)).sum::<f64>();
                    usize::from(margin > 0.0)
                }
                Objective::MultiSoftmax => {
                    let mut margins = vec![b.base_score; self.n_classes];
                    for (t, &c) in b.trees.iter().zip(&b.tree_class) {
                        margins[c] += t.score(point);
                    }
                    argmax_first(margins.into_iter())
                }
            },
        }
    }

    /// Every split rule of every tree, duplicates included.
    pub fn iter_split_rules(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.trees().iter().flat_map(DecisionTree::split_rules)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serializes")
    }

    fn to_document(&self) -> ModelDocument {
        let tree_doc = |t: &DecisionTree| TreeDocument {
            root: Some(t.root as i64),
            nodes: Some(
                t.nodes
                    .iter()
                    .map(|n| match *n {
                        Node::Split(s) => NodeDocument {
                            feature: Some(s.feature as i64),
                            threshold: Some(s.threshold),
                            left: Some(s.left as i64),
                            right: Some(s.right as i64),
                            ..Default::default()
                        },
                        Node::Leaf(LeafNode::Label(c)) => NodeDocument {
                            leaf_label: Some(c as i64),
                            ..Default::default()
                        },
                        Node::Leaf(LeafNode::Score(s)) => NodeDocument {
                            leaf_score: Some(s),
                            ..Default::default()
                        },
                    })
                    .collect(),
            ),
        };
        let (base_score, objective, tree_class) = match &self.kind {
            ModelKind::Boosted(b) => (
                Some(b.base_score),
                Some(b.objective),
                (b.objective == Objective::MultiSoftmax)
                    .then(|| b.tree_class.iter().map(|&c| c as i64).collect()),
            ),
            _ => (None, None, None),
        };
        ModelDocument {
            kind: Some(self.kind_name().to_string()),
            n_features: Some(self.n_features as i64),
            n_classes: Some(self.n_classes as i64),
            feature_bounds: self
                .feature_bounds
                .as_ref()
                .map(|b| b.iter().map(|o| o.map(|(lo, hi)| [lo, hi])).collect()),
            base_score,
            objective,
            tree_class,
            trees: Some(self.trees().iter().map(tree_doc).collect()),
        }
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    #[serde(rename = "type")]
    kind: Option<String>,
    n_features: Option<i64>,
    n_classes: Option<i64>,
    #[serde(default)]
    feature_bounds: Option<Vec<Option<[f64; 2]>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<Objective>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree_class: Option<Vec<i64>>,
    trees: Option<Vec<TreeDocument>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDocument {
    nodes: Option<Vec<NodeDocument>>,
    root: Option<i64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    feature: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leaf_label: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leaf_score: Option<f64>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn require<T>(value: Option<T>, path: &str, field: &str) -> Result<T> {
    value.ok_or_else(|| schema(path, format!("missing field \"{field}\"")))
}

fn count(value: i64, path: &str, min: i64) -> Result<usize> {
    if value < min {
        return Err(schema(path, format!("expected integer >= {min}, got {value}")));
    }
    Ok(value as usize)
}

#[derive(Clone, Copy, PartialEq)]
enum LeafKind {
    Label,
    Score,
}

fn parse_tree(
    doc: TreeDocument,
    path: &str,
    n_features: usize,
    n_classes: usize,
    leaf_kind: LeafKind,
) -> Result<DecisionTree> {
    let raw_nodes = require(doc.nodes, path, "nodes")?;
    if raw_nodes.is_empty() {
        return Err(schema(format!("{path}.nodes"), "tree has no nodes"));
    }
    let root_path = format!("{path}.root");
    let root = count(require(doc.root, path, "root")?, &root_path, 0)?;
    let n = raw_nodes.len();
    if root >= n {
        return Err(Error::NodeReference {
            path: root_path,
            message: format!("root {root} out of range ({n} nodes)"),
        });
    }

    let mut nodes = Vec::with_capacity(n);
    for (i, nd) in raw_nodes.into_iter().enumerate() {
        let np = format!("{path}.nodes[{i}]");
        let is_split = nd.feature.is_some()
            || nd.threshold.is_some()
            || nd.left.is_some()
            || nd.right.is_some();
        let node = match (is_split, nd.leaf_label, nd.leaf_score) {
            (true, None, None) => {
                let feature = count(require(nd.feature, &np, "feature")?, &np, 0)?;
                if feature >= n_features {
                    return Err(schema(
                        &np,
                        format!("feature {feature} out of range (n_features = {n_features})"),
                    ));
                }
                let threshold = require(nd.threshold, &np, "threshold")?;
                if !threshold.is_finite() {
                    return Err(schema(&np, "threshold must be finite"));
                }
                let child = |v: Option<i64>, name: &str| -> Result<usize> {
                    let c = require(v, &np, name)?;
                    if c < 0 || c as usize >= n {
                        return Err(Error::NodeReference {
                            path: np.clone(),
                            message: format!("{name} child {c} out of range ({n} nodes)"),
                        });
                    }
                    Ok(c as usize)
                };
                Node::Split(SplitNode {
                    feature,
                    threshold,
                    left: child(nd.left, "left")?,
                    right: child(nd.right, "right")?,
                })
            }
            (false, Some(label), None) => {
                if leaf_kind != LeafKind::Label {
                    return Err(schema(&np, "boosted ensembles need \"leaf_score\" leaves"));
                }
                let class = count(label, &np, 0)?;
                if class >= n_classes {
                    return Err(Error::ClassOutOfRange {
                        path: np,
                        class,
                        n_classes,
                    });
                }
                Node::Leaf(LeafNode::Label(class))
            }
            (false, None, Some(score)) => {
                if leaf_kind != LeafKind::Score {
                    return Err(schema(&np, "classification trees need \"leaf_label\" leaves"));
                }
                if !score.is_finite() {
                    return Err(schema(&np, "leaf_score must be finite"));
                }
                Node::Leaf(LeafNode::Score(score))
            }
            _ => {
                return Err(schema(
                    &np,
                    "node must be exactly one of split {feature, threshold, left, right}, {leaf_label} or {leaf_score}",
                ))
            }
        };
        nodes.push(node);
    }

    // Every node must be reached exactly once from the root: this rejects
    // cycles, shared subtrees and orphans.
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    while let Some(at) = stack.pop() {
        if std::mem::replace(&mut seen[at], true) {
            return Err(Error::NodeReference {
                path: format!("{path}.nodes[{at}]"),
                message: "node reached twice from the root".into(),
            });
        }
        if let Node::Split(s) = nodes[at] {
            stack.push(s.right);
            stack.push(s.left);
        }
    }
    if let Some(orphan) = seen.iter().position(|&s| !s) {
        return Err(Error::NodeReference {
            path: format!("{path}.nodes[{orphan}]"),
            message: "node unreachable from the root".into(),
        });
    }
    Ok(DecisionTree { nodes, root })
}

/// Parse a model document (see the model JSON schema in the README).
pub fn parse_model(document: &str) -> Result<Model> {
    let doc: ModelDocument = serde_json::from_str(document)?;
    let kind = require(doc.kind, "$", "type")?;
    let n_features = count(require(doc.n_features, "$", "n_features")?, "$.n_features", 1)?;
    let n_classes = count(require(doc.n_classes, "$", "n_classes")?, "$.n_classes", 1)?;

    let feature_bounds = match doc.feature_bounds {
        None => None,
        Some(bounds) => {
            if bounds.len() != n_features {
                return Err(schema(
                    "$.feature_bounds",
                    format!("expected {n_features} entries, got {}", bounds.len()),
                ));
            }
            for (i, b) in bounds.iter().enumerate() {
                if let Some([lo, hi]) = b {
                    if !(lo < hi) || lo.is_nan() || hi.is_nan() {
                        return Err(schema(
                            format!("$.feature_bounds[{i}]"),
                            format!("bounds must satisfy min < max, got [{lo}, {hi}]"),
                        ));
                    }
                }
            }
            Some(bounds.into_iter().map(|b| b.map(|[lo, hi]| (lo, hi))).collect())
        }
    };

    let tree_docs = require(doc.trees, "$", "trees")?;
    if tree_docs.is_empty() {
        return Err(schema("$.trees", "at least one tree required"));
    }
    let boosted = kind == "boosted_ensemble";
    if !boosted && (doc.base_score.is_some() || doc.objective.is_some() || doc.tree_class.is_some()) {
        return Err(schema(
            "$",
            "base_score/objective/tree_class are only valid for boosted_ensemble",
        ));
    }
    let leaf_kind = if boosted { LeafKind::Score } else { LeafKind::Label };
    let trees = tree_docs
        .into_iter()
        .enumerate()
        .map(|(i, t)| parse_tree(t, &format!("$.trees[{i}]"), n_features, n_classes, leaf_kind))
        .collect::<Result<Vec<_>>>()?;

    let kind = match kind.as_str() {
        "decision_tree" => {
            if trees.len() != 1 {
                return Err(schema(
                    "$.trees",
                    format!("decision_tree needs exactly one tree, got {}", trees.len()),
                ));
            }
            ModelKind::DecisionTree(trees.into_iter().next().expect("one tree"))
        }
        "random_forest" => ModelKind::Forest(Forest { trees }),
        "boosted_ensemble" => {
            let base_score = require(doc.base_score, "$", "base_score")?;
            if !base_score.is_finite() {
                return Err(schema("$.base_score", "must be finite"));
            }
            let objective = require(doc.objective, "$", "objective")?;
            let tree_class = match objective {
                Objective::BinaryLogistic => {
                    if n_classes != 2 {
                        return Err(schema(
                            "$.n_classes",
                            format!("binary_logistic requires n_classes = 2, got {n_classes}"),
                        ));
                    }
                    if doc.tree_class.is_some() {
                        return Err(schema("$.tree_class", "only valid for multi_softmax"));
                    }
                    vec![1; trees.len()]
                }
                Objective::MultiSoftmax => {
                    let tc = require(doc.tree_class, "$", "tree_class")?;
                    if tc.len() != trees.len() {
                        return Err(schema(
                            "$.tree_class",
                            format!("expected {} entries, got {}", trees.len(), tc.len()),
                        ));
                    }
                    let mut owned = vec![false; n_classes];
                    let mut classes = Vec::with_capacity(tc.len());
                    for (i, c) in tc.into_iter().enumerate() {
                        let p = format!("$.tree_class[{i}]");
                        let c = count(c, &p, 0)?;
                        if c >= n_classes {
                            return Err(Error::ClassOutOfRange {
                                path: p,
                                class: c,
                                n_classes,
                            });
                        }
                        owned[c] = true;
                        classes.push(c);
                    }
                    if let Some(c) = owned.iter().position(|&o| !o) {
                        return Err(schema("$.tree_class", format!("class {c} owns no tree")));
                    }
                    classes
                }
            };
            ModelKind::Boosted(BoostedEnsemble {
                trees,
                base_score,
                objective,
                tree_class,
            })
        }
        other => return Err(schema("$.type", format!("unknown model type \"{other}\""))),
    };

    Ok(Model {
        kind,
        n_features,
        n_classes,
        feature_bounds,
    })
}

/// Builders for small models, used by tests and examples.
pub mod build {
    use super::*;

    pub fn leaf(label: usize) -> DecisionTree {
        DecisionTree {
            nodes: vec![Node::Leaf(LeafNode::Label(label))],
            root: 0,
        }
    }

    /// `feature <= threshold` goes to `left`.
    pub fn stump(feature: usize, threshold: f64, left: usize, right: usize) -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Split(SplitNode {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                }),
                Node::Leaf(LeafNode::Label(left)),
                Node::Leaf(LeafNode::Label(right)),
            ],
            root: 0,
        }
    }

    pub fn score_stump(feature: usize, threshold: f64, left: f64, right: f64) -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Split(SplitNode {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                }),
                Node::Leaf(LeafNode::Score(left)),
                Node::Leaf(LeafNode::Score(right)),
            ],
            root: 0,
        }
    }

    /// Tree from a raw arena. Panics if the arena is malformed.
    pub fn tree(nodes: Vec<Node>, root: usize) -> DecisionTree {
        let t = DecisionTree { nodes, root };
        let mut seen = vec![false; t.nodes.len()];
        let mut stack = vec![root];
        while let Some(at) = stack.pop() {
            assert!(!std::mem::replace(&mut seen[at], true), "node {at} reached twice");
            if let Node::Split(s) = t.nodes[at] {
                stack.extend([s.left, s.right]);
            }
        }
        assert!(seen.iter().all(|&s| s), "orphan nodes");
        t
    }

    pub fn single(tree: DecisionTree, n_features: usize, n_classes: usize) -> Model {
        Model {
            kind: ModelKind::DecisionTree(tree),
            n_features,
            n_classes,
            feature_bounds: None,
        }
    }

    pub fn forest(trees: Vec<DecisionTree>, n_features: usize, n_classes: usize) -> Model {
        Model {
            kind: ModelKind::Forest(Forest { trees }),
            n_features,
            n_classes,
            feature_bounds: None,
        }
    }

    pub fn boosted_binary(trees: Vec<DecisionTree>, base_score: f64, n_features: usize) -> Model {
        let tree_class = vec![1; trees.len()];
        Model {
            kind: ModelKind::Boosted(BoostedEnsemble {
                trees,
                base_score,
                objective: Objective::BinaryLogistic,
                tree_class,
            }),
            n_features,
            n_classes: 2,
            feature_bounds: None,
        }
    }
}

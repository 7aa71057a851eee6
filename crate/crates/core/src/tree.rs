//! CART classification tree with Gini impurity, and stratified k-fold
//! cross-validation.
//!
//! Split convention: a row goes left when `value < threshold`. Thresholds are
//! midpoints between consecutive distinct training values. Among equally good
//! splits the lowest feature index wins, then the smallest threshold.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::synth::AnomalyClass;

const CLASS_COUNT: usize = AnomalyClass::ALL.len();

pub type Histogram = [usize; CLASS_COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_impurity_decrease: f64,
    /// Seed for cross-validation shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 5,
            min_impurity_decrease: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be >= 1".into()));
        }
        if !(self.min_impurity_decrease >= 0.0 && self.min_impurity_decrease.is_finite()) {
            return Err(Error::Config("min_impurity_decrease must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: NodeKind,
    histogram: Histogram,
    /// Share of all training rows that reached this node.
    fraction: f64,
}

/// Trained tree. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeRecord", try_from = "TreeRecord")]
pub struct DecisionTree {
    nodes: Vec<Node>,
    feature_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub feature: usize,
    pub threshold: f64,
    pub value: f64,
    pub went_left: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: AnomalyClass,
    pub path: Vec<PathStep>,
    pub leaf_histogram: Histogram,
    pub leaf_fraction: f64,
}

fn gini(h: &Histogram) -> f64 {
    let n: usize = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - h.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(h: &Histogram) -> AnomalyClass {
    let (best, _) = h
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bc), (i, &c)| if c > bc { (i, c) } else { (bi, bc) });
    AnomalyClass::ALL[best]
}

fn histogram(labels: &[AnomalyClass], idx: &[usize]) -> Histogram {
    let mut h = [0; CLASS_COUNT];
    for &i in idx {
        h[labels[i].id()] += 1;
    }
    h
}

struct Builder<'a, S> {
    rows: &'a [S],
    labels: &'a [AnomalyClass],
    config: TrainConfig,
    total: f64,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl<S: AsRef<[f64]>> Builder<'_, S> {
    fn value(&self, row: usize, f: usize) -> f64 {
        self.rows[row].as_ref()[f]
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let hist = histogram(self.labels, &idx);
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Leaf,
            histogram: hist,
            fraction: idx.len() as f64 / self.total,
        });
        let parent = gini(&hist);
        if depth >= self.config.max_depth || parent == 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&idx) else {
            return id;
        };
        if split.impurity > parent - self.config.min_impurity_decrease {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.value(i, split.feature) < split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id].kind = NodeKind::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let n = idx.len();
        let dims = self.rows[idx[0]].as_ref().len();
        let min_leaf = self.config.min_leaf;
        let total = histogram(self.labels, idx);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for f in 0..dims {
            order.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)));
            let mut left = [0; CLASS_COUNT];
            for i in 0..n - 1 {
                left[self.labels[order[i]].id()] += 1;
                let (a, b) = (self.value(order[i], f), self.value(order[i + 1], f));
                let nl = i + 1;
                if a == b || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let mut right = total;
                for c in 0..CLASS_COUNT {
                    right[c] -= left[c];
                }
                let impurity =
                    (nl as f64 * gini(&left) + (n - nl) as f64 * gini(&right)) / n as f64;
                if best.as_ref().map_or(true, |s| impurity < s.impurity) {
                    let mid = a + (b - a) / 2.0;
                    best = Some(Split {
                        feature: f,
                        threshold: if mid > a { mid } else { b },
                        impurity,
                    });
                }
            }
        }
        best
    }
}

pub fn train_tree<S: AsRef<[f64]>>(
    rows: &[S],
    labels: &[AnomalyClass],
    config: &TrainConfig,
) -> Result<DecisionTree> {
    config.validate()?;
    if rows.len() < 2 {
        return Err(Error::Length {
            needed: 2,
            got: rows.len(),
        });
    }
    if labels.len() != rows.len() {
        return Err(Error::Arity {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let dims = rows[0].as_ref().len();
    if dims == 0 {
        return Err(Error::Validation("feature rows are empty".into()));
    }
    for r in rows {
        let r = r.as_ref();
        if r.len() != dims {
            return Err(Error::Arity {
                expected: dims,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature rows contain non-finite values".into()));
        }
    }
    let mut b = Builder {
        rows,
        labels,
        config: *config,
        total: rows.len() as f64,
        nodes: Vec::new(),
    };
    b.build((0..rows.len()).collect(), 0);
    let feature_names = if dims == FEATURE_COUNT {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..dims).map(|i| format!("f{i}")).collect()
    };
    Ok(DecisionTree {
        nodes: b.nodes,
        feature_names,
    })
}

impl DecisionTree {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Leaf)
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Histograms and training fractions of the leaves, left to right.
    pub fn leaves(&self) -> Vec<(Histogram, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            match self.nodes[i].kind {
                NodeKind::Leaf => out.push((self.nodes[i].histogram, self.nodes[i].fraction)),
                NodeKind::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Index of the leaf reached by `x`, in the order of [`leaves`](Self::leaves).
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut leaf_ids = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            match self.nodes[i].kind {
                NodeKind::Leaf => leaf_ids.push(i),
                NodeKind::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        let target = self.route(x, |_| {});
        leaf_ids.iter().position(|&i| i == target).expect("leaf is in the tree")
    }

    fn route(&self, x: &[f64], mut visit: impl FnMut(PathStep)) -> usize {
        let mut i = 0;
        while let NodeKind::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[i].kind
        {
            let value = x[feature];
            let went_left = value < threshold;
            visit(PathStep {
                feature,
                threshold,
                value,
                went_left,
            });
            i = if went_left { left } else { right };
        }
        i
    }

    /// # Panics
    ///
    /// If `x` is shorter than the feature count the tree was trained on.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        assert!(
            x.len() >= self.feature_count(),
            "expected {} features, got {}",
            self.feature_count(),
            x.len()
        );
        let mut path = Vec::new();
        let leaf = self.route(x, |s| path.push(s));
        let node = &self.nodes[leaf];
        Prediction {
            class: majority(&node.histogram),
            path,
            leaf_histogram: node.histogram,
            leaf_fraction: node.fraction,
        }
    }

    pub fn predict_class(&self, x: &[f64]) -> AnomalyClass {
        majority(&self.nodes[self.route(x, |_| {})].histogram)
    }

    /// Indented rendering, one node per line: the split condition (or the
    /// predicted class at a leaf), the class distribution, and the share of
    /// training rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, 0, &mut out);
        out
    }

    fn render_node(&self, i: usize, depth: usize, out: &mut String) {
        let node = &self.nodes[i];
        let dist = AnomalyClass::ALL
            .iter()
            .map(|c| format!("{}={}", c.name(), node.histogram[c.id()]))
            .collect::<Vec<_>>()
            .join(" ");
        let indent = "  ".repeat(depth);
        match node.kind {
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let _ = writeln!(
                    out,
                    "{indent}{} < {threshold}  [{dist}]  {:.1}%",
                    self.feature_names[feature],
                    node.fraction * 100.0
                );
                self.render_node(left, depth + 1, out);
                self.render_node(right, depth + 1, out);
            }
            NodeKind::Leaf => {
                let _ = writeln!(
                    out,
                    "{indent}-> {}  [{dist}]  {:.1}%",
                    majority(&node.histogram),
                    node.fraction * 100.0
                );
            }
        }
    }
}

/// Nested export format of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    pub root: NodeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NodeRecord {
    Split {
        feature: usize,
        feature_name: String,
        threshold: f64,
        histogram: Histogram,
        fraction: f64,
        left: Box<NodeRecord>,
        right: Box<NodeRecord>,
    },
    Leaf {
        class: AnomalyClass,
        histogram: Histogram,
        fraction: f64,
    },
}

impl From<DecisionTree> for TreeRecord {
    fn from(t: DecisionTree) -> Self {
        fn rec(t: &DecisionTree, i: usize) -> NodeRecord {
            let n = &t.nodes[i];
            match n.kind {
                NodeKind::Leaf => NodeRecord::Leaf {
                    class: majority(&n.histogram),
                    histogram: n.histogram,
                    fraction: n.fraction,
                },
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => NodeRecord::Split {
                    feature,
                    feature_name: t.feature_names[feature].clone(),
                    threshold,
                    histogram: n.histogram,
                    fraction: n.fraction,
                    left: Box::new(rec(t, left)),
                    right: Box::new(rec(t, right)),
                },
            }
        }
        TreeRecord {
            root: rec(&t, 0),
            feature_names: t.feature_names,
            classes: AnomalyClass::names(),
        }
    }
}

impl TryFrom<TreeRecord> for DecisionTree {
    type Error = Error;

    fn try_from(r: TreeRecord) -> Result<Self> {
        fn flatten(r: &NodeRecord, dims: usize, nodes: &mut Vec<Node>) -> Result<usize> {
            let id = nodes.len();
            match r {
                NodeRecord::Leaf {
                    histogram,
                    fraction,
                    ..
                } => nodes.push(Node {
                    kind: NodeKind::Leaf,
                    histogram: *histogram,
                    fraction: *fraction,
                }),
                NodeRecord::Split {
                    feature,
                    threshold,
                    histogram,
                    fraction,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= dims || !threshold.is_finite() {
                        return Err(Error::Validation(format!(
                            "tree split on feature {feature} at {threshold} is invalid"
                        )));
                    }
                    nodes.push(Node {
                        kind: NodeKind::Leaf,
                        histogram: *histogram,
                        fraction: *fraction,
                    });
                    let l = flatten(left, dims, nodes)?;
                    let rt = flatten(right, dims, nodes)?;
                    nodes[id].kind = NodeKind::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: rt,
                    };
                }
            }
            Ok(id)
        }
        if r.classes != AnomalyClass::names() {
            return Err(Error::Validation(format!(
                "tree classes {:?} do not match {:?}",
                r.classes,
                AnomalyClass::names()
            )));
        }
        let mut nodes = Vec::new();
        flatten(&r.root, r.feature_names.len(), &mut nodes)?;
        Ok(DecisionTree {
            nodes,
            feature_names: r.feature_names,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// `confusion[true][predicted]`, summed over folds.
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
}

impl CvReport {
    /// Plain-text report: mean, per-fold accuracies, confusion matrix.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "folds: {}", self.folds);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "mean_accuracy: {:.6}", self.mean_accuracy);
        let _ = writeln!(
            out,
            "fold_accuracies: {}",
            self.fold_accuracies
                .iter()
                .map(|a| format!("{a:.6}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        let _ = writeln!(out, "confusion (rows = true, cols = predicted):");
        let _ = writeln!(out, "{:>12} {}", "", AnomalyClass::names().join(" "));
        for c in AnomalyClass::ALL {
            let cells = self.confusion[c.id()]
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{:>12} {cells}", c.name());
        }
        out
    }
}

/// Stratified fold assignment: each class is shuffled with the seed and
/// dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(labels: &[AnomalyClass], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    if labels.len() < folds {
        return Err(Error::Length {
            needed: folds,
            got: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in AnomalyClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Validation(format!(
                "class `{class}` has {} rows, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

pub fn cross_validate<S: AsRef<[f64]> + Sync>(
    rows: &[S],
    labels: &[AnomalyClass],
    folds: usize,
    config: &TrainConfig,
) -> Result<CvReport> {
    config.validate()?;
    if labels.len() != rows.len() {
        return Err(Error::Arity {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let assignment = stratified_folds(labels, folds, config.seed)?;
    let per_fold: Vec<Result<(usize, usize, [[usize; CLASS_COUNT]; CLASS_COUNT])>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..rows.len()).partition(|&i| assignment[i] == k);
            let train_rows: Vec<&[f64]> = train.iter().map(|&i| rows[i].as_ref()).collect();
            let train_labels: Vec<AnomalyClass> = train.iter().map(|&i| labels[i]).collect();
            let tree = train_tree(&train_rows, &train_labels, config)?;
            let mut confusion = [[0; CLASS_COUNT]; CLASS_COUNT];
            let mut correct = 0;
            for &i in &test {
                let p = tree.predict_class(rows[i].as_ref());
                confusion[labels[i].id()][p.id()] += 1;
                correct += usize::from(p == labels[i]);
            }
            Ok((correct, test.len(), confusion))
        })
        .collect();

    let mut fold_accuracies = Vec::with_capacity(folds);
    let mut confusion = [[0; CLASS_COUNT]; CLASS_COUNT];
    for r in per_fold {
        let (correct, n, c) = r?;
        fold_accuracies.push(correct as f64 / n as f64);
        for (row, add) in confusion.iter_mut().zip(c) {
            for (v, a) in row.iter_mut().zip(add) {
                *v += a;
            }
        }
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
    Ok(CvReport {
        folds,
        seed: config.seed,
        mean_accuracy,
        fold_accuracies,
        confusion,
    })
}

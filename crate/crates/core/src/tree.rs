//! Regression trees grown by exhaustive variance-reduction split search.
//!
//! A node's error is `n · Var(y)` (population variance), so the error of a
//! tree is the sum of its leaves' errors. A node is split on the candidate
//! that maximizes `E(parent) - E(left) - E(right)`; candidates are midpoints
//! between consecutive distinct values of each feature, and both children
//! must hold at least `min_leaf_count` samples. Growth stops when the best
//! decrease falls below `min_error_decrease` (absolute, in target units).
//!
//! Ties between equally good candidates go to the lower feature index, then
//! to the lower threshold. Samples with `x[f] <= threshold` route left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub min_error_decrease: f64,
    pub min_leaf_count: usize,
    /// `None` grows until the stopping rule fires.
    pub max_depth: Option<usize>,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            min_error_decrease: 0.01,
            min_leaf_count: 5,
            max_depth: None,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_error_decrease >= 0.0) {
            return Err(Error::Config(format!(
                "min_error_decrease must be >= 0, got {}",
                self.min_error_decrease
            )));
        }
        if self.min_leaf_count < 1 {
            return Err(Error::Config("min_leaf_count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NodeRepr", into = "NodeRepr")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        prediction: f64,
        count: usize,
        variance: f64,
    },
}

// Wire format: {"split":{"f":i,"t":v},"left":…,"right":…} / {"leaf":{"p":v,"n":c,"var":v}}
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Split {
        split: SplitRec,
        left: Box<NodeRepr>,
        right: Box<NodeRepr>,
    },
    Leaf {
        leaf: LeafRec,
    },
}

#[derive(Serialize, Deserialize)]
struct SplitRec {
    f: usize,
    t: f64,
}

#[derive(Serialize, Deserialize)]
struct LeafRec {
    p: f64,
    n: usize,
    var: f64,
}

impl From<NodeRepr> for TreeNode {
    fn from(r: NodeRepr) -> Self {
        match r {
            NodeRepr::Split { split, left, right } => TreeNode::Split {
                feature: split.f,
                threshold: split.t,
                left: Box::new((*left).into()),
                right: Box::new((*right).into()),
            },
            NodeRepr::Leaf { leaf } => TreeNode::Leaf {
                prediction: leaf.p,
                count: leaf.n,
                variance: leaf.var,
            },
        }
    }
}

impl From<TreeNode> for NodeRepr {
    fn from(n: TreeNode) -> Self {
        match n {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => NodeRepr::Split {
                split: SplitRec {
                    f: feature,
                    t: threshold,
                },
                left: Box::new((*left).into()),
                right: Box::new((*right).into()),
            },
            TreeNode::Leaf {
                prediction,
                count,
                variance,
            } => NodeRepr::Leaf {
                leaf: LeafRec {
                    p: prediction,
                    n: count,
                    var: variance,
                },
            },
        }
    }
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { prediction, .. } => return *prediction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                TreeNode::Leaf { .. } => out.push(n),
                TreeNode::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Sum over leaves of `count · variance`.
    pub fn training_error(&self) -> f64 {
        self.leaves()
            .iter()
            .map(|l| match l {
                TreeNode::Leaf {
                    count, variance, ..
                } => *count as f64 * variance,
                _ => unreachable!(),
            })
            .sum()
    }
}

/// A fitted tree plus the column count it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    pub root: TreeNode,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Schema(format!(
                "feature row has {} columns, tree expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.root.predict(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.root).expect("tree serialization is infallible")
    }

    pub fn from_json(n_features: usize, s: &str) -> Result<Self> {
        let root: TreeNode =
            serde_json::from_str(s).map_err(|e| Error::Data(format!("tree JSON: {e}")))?;
        Ok(RegressionTree { n_features, root })
    }
}

/// `n · Var(targets)` with the population variance.
pub fn node_error(targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Argument("node_error of an empty target set".into()));
    }
    let n = targets.len() as f64;
    let shift = targets[0];
    let mean = targets.iter().map(|y| y - shift).sum::<f64>() / n;
    Ok(targets.iter().map(|y| (y - shift - mean).powi(2)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Sums of a node's targets, centered on `shift` for numerical stability.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    s: f64,
    ss: f64,
}

impl Moments {
    fn add(&mut self, d: f64) {
        self.n += 1.0;
        self.s += d;
        self.ss += d * d;
    }

    fn error(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            (self.ss - self.s * self.s / self.n).max(0.0)
        }
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            s: self.s - o.s,
            ss: self.ss - o.ss,
        }
    }
}

/// Best split of one feature given `(value, centered target)` pairs sorted by
/// value. Returns `(threshold, decrease)`; earlier thresholds win ties.
fn scan_sorted(
    pairs: impl Iterator<Item = (f64, f64)>,
    total: &Moments,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let parent = total.error();
    let n = total.n as usize;
    let mut left = Moments::default();
    let mut prev: Option<f64> = None;
    let mut best: Option<(f64, f64)> = None;
    for (i, (v, d)) in pairs.enumerate() {
        // candidate boundary between position i-1 and i
        if let Some(pv) = prev {
            if i >= min_leaf && n - i >= min_leaf && pv < v {
                let dec = parent - left.error() - total.minus(&left).error();
                if best.is_none_or(|(_, b)| dec > b) {
                    let mut t = 0.5 * (pv + v);
                    if t >= v {
                        t = pv;
                    }
                    best = Some((t, dec));
                }
            }
        }
        left.add(d);
        prev = Some(v);
    }
    best
}

fn pick(best: &mut Option<SplitChoice>, feature: usize, cand: Option<(f64, f64)>) {
    if let Some((threshold, decrease)) = cand {
        if best.is_none_or(|b| decrease > b.decrease) {
            *best = Some(SplitChoice {
                feature,
                threshold,
                decrease,
            });
        }
    }
}

/// Best variance-reduction split of `node_rows`, or `None` when no candidate
/// leaves both children with `min_leaf_count` rows or the best decrease is
/// below `min_error_decrease`.
pub fn best_split(
    x: &FeatureMatrix,
    y: &[f64],
    node_rows: &[usize],
    params: &FitParams,
) -> Option<SplitChoice> {
    if node_rows.len() < 2 * params.min_leaf_count.max(1) {
        return None;
    }
    let shift = node_rows.iter().map(|&r| y[r]).sum::<f64>() / node_rows.len() as f64;
    let mut total = Moments::default();
    node_rows.iter().for_each(|&r| total.add(y[r] - shift));
    let mut best = None;
    let mut order = node_rows.to_vec();
    for f in 0..x.n_cols() {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let cand = scan_sorted(
            order.iter().map(|&r| (x.get(r, f), y[r] - shift)),
            &total,
            params.min_leaf_count,
        );
        pick(&mut best, f, cand);
    }
    best.filter(|b| b.decrease >= params.min_error_decrease)
}

/// Fits a tree on all rows of `x`.
pub fn fit_tree(x: &FeatureMatrix, y: &[f64], params: &FitParams) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    fit_tree_on(x, y, &rows, params)
}

/// Fits a tree on the multiset of rows `sample` (repeats allowed, as in a
/// bootstrap replicate).
pub fn fit_tree_on(
    x: &FeatureMatrix,
    y: &[f64],
    sample: &[usize],
    params: &FitParams,
) -> Result<RegressionTree> {
    params.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} targets",
            x.n_rows(),
            y.len()
        )));
    }
    if sample.is_empty() {
        return Err(Error::Argument("cannot fit a tree on zero rows".into()));
    }
    x.check_finite()?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i,
            col: x.n_cols(),
        });
    }
    if let Some(&r) = sample.iter().find(|&&r| r >= x.n_rows()) {
        return Err(Error::Argument(format!("sample row {r} out of range")));
    }

    let n = sample.len();
    let d = x.n_cols();
    // sorted[f] holds sample positions ordered by feature f; a node owns the
    // same sub-range of every list.
    let mut sorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut p: Vec<u32> = (0..n as u32).collect();
            p.sort_by(|&a, &b| {
                x.get(sample[a as usize], f)
                    .total_cmp(&x.get(sample[b as usize], f))
            });
            p
        })
        .collect();
    let mut b = Builder {
        x,
        y,
        sample,
        params,
        goes_left: vec![false; n],
        scratch: Vec::with_capacity(n),
    };
    let root = b.grow(&mut sorted, 0, n, 0);
    Ok(RegressionTree {
        n_features: d,
        root,
    })
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    sample: &'a [usize],
    params: &'a FitParams,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

impl Builder<'_> {
    fn target(&self, pos: u32) -> f64 {
        self.y[self.sample[pos as usize]]
    }

    fn value(&self, pos: u32, f: usize) -> f64 {
        self.x.get(self.sample[pos as usize], f)
    }

    fn leaf(&self, positions: &[u32]) -> TreeNode {
        let n = positions.len() as f64;
        let shift = self.target(positions[0]);
        let dev = positions.iter().map(|&p| self.target(p) - shift).sum::<f64>() / n;
        let var = positions
            .iter()
            .map(|&p| (self.target(p) - shift - dev).powi(2))
            .sum::<f64>()
            / n;
        TreeNode::Leaf {
            prediction: shift + dev,
            count: positions.len(),
            variance: var,
        }
    }

    fn find_split(&self, sorted: &[Vec<u32>], lo: usize, hi: usize) -> Option<SplitChoice> {
        let first = &sorted[0][lo..hi];
        let shift = first.iter().map(|&p| self.target(p)).sum::<f64>() / first.len() as f64;
        let mut total = Moments::default();
        first.iter().for_each(|&p| total.add(self.target(p) - shift));
        let mut best = None;
        for (f, list) in sorted.iter().enumerate() {
            let cand = scan_sorted(
                list[lo..hi]
                    .iter()
                    .map(|&p| (self.value(p, f), self.target(p) - shift)),
                &total,
                self.params.min_leaf_count,
            );
            pick(&mut best, f, cand);
        }
        best.filter(|b| b.decrease >= self.params.min_error_decrease)
    }

    fn grow(&mut self, sorted: &mut [Vec<u32>], lo: usize, hi: usize, depth: usize) -> TreeNode {
        let n = hi - lo;
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        let split = if depth_ok && n >= 2 * self.params.min_leaf_count {
            self.find_split(sorted, lo, hi)
        } else {
            None
        };
        let Some(split) = split else {
            return self.leaf(&sorted[0][lo..hi]);
        };

        let mut n_left = 0;
        for &p in &sorted[0][lo..hi] {
            let l = self.value(p, split.feature) <= split.threshold;
            self.goes_left[p as usize] = l;
            n_left += l as usize;
        }
        for list in sorted.iter_mut() {
            self.scratch.clear();
            let mut w = lo;
            for i in lo..hi {
                let p = list[i];
                if self.goes_left[p as usize] {
                    list[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            list[w..hi].copy_from_slice(&self.scratch);
        }
        let mid = lo + n_left;
        let left = self.grow(sorted, lo, mid, depth + 1);
        let right = self.grow(sorted, mid, hi, depth + 1);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

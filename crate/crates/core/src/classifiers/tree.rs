//! CART classification tree on Gini impurity, stored as a flat node arena.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Design;
use crate::label::Label;
use crate::scalar::Scalar;

/// Internal nodes send `x[f] <= t` left. Leaves hold `[plastic, water]`
/// in-bag counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode<T> {
    Split { f: usize, t: T, l: usize, r: usize },
    Leaf([u32; 2]),
}

/// Node 0 is the root; children always follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree<T> {
    nodes: Vec<TreeNode<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn from_nodes(nodes: Vec<TreeNode<T>>, n_features: usize) -> Result<Self, String> {
        let tree = Self { nodes };
        tree.validate(n_features)?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[TreeNode<T>] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[TreeNode<T>], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { l, r, .. } => 1 + walk(nodes, *l).max(walk(nodes, *r)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split { f, t, l, r } => {
                    if *f >= n_features {
                        return Err(format!("node {i} splits on feature {f} of {n_features}"));
                    }
                    if !t.is_finite() {
                        return Err(format!("node {i} has non-finite threshold"));
                    }
                    for c in [*l, *r] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(format!("node {i} has invalid child {c}"));
                        }
                    }
                }
                TreeNode::Leaf(c) => {
                    if c[0] == 0 && c[1] == 0 {
                        return Err(format!("leaf {i} is empty"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn leaf(&self, row: &[T]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(c) => return *c,
                TreeNode::Split { f, t, l, r } => i = if row[*f] <= *t { *l } else { *r },
            }
        }
    }

    /// Leaf majority; an even leaf votes plastic.
    pub fn predict(&self, row: &[T]) -> Label {
        let c = self.leaf(row);
        if c[0] >= c[1] {
            Label::Plastic
        } else {
            Label::Water
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub mtry: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_leaf_nodes: Option<usize>,
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    /// Weighted impurity decrease, `n * gini(parent) - sum n_c * gini(c)`.
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct Pending<T> {
    node: usize,
    depth: usize,
    split: Candidate<T>,
}

fn counts<T>(design: &Design<T>, samples: &[usize]) -> [u32; 2] {
    let mut c = [0u32; 2];
    for &i in samples {
        c[design.labels[i].index()] += 1;
    }
    c
}

/// Gini impurity times node size.
fn weighted_gini(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n == 0.0 {
        0.0
    } else {
        n - (c[0] * c[0] + c[1] * c[1]) / n
    }
}

fn find_split<T: Scalar>(
    design: &Design<T>,
    samples: &[usize],
    depth: usize,
    p: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate<T>> {
    let n = samples.len();
    let c = counts(design, samples);
    if n < p.min_samples_split
        || n < 2 * p.min_samples_leaf
        || p.max_depth.is_some_and(|d| depth >= d)
        || c[0] == 0
        || c[1] == 0
    {
        return None;
    }
    let parent = weighted_gini([c[0] as f64, c[1] as f64]);
    let mut order: Vec<usize> = (0..design.n_features()).collect();
    order.shuffle(rng);

    let mut best: Option<(usize, T, f64, usize)> = None;
    let mut sorted: Vec<(T, usize)> = Vec::with_capacity(n);
    // Features beyond the first mtry are only tried while no valid split exists.
    for (visited, &f) in order.iter().enumerate() {
        if visited >= p.mtry && best.is_some() {
            break;
        }
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (design.rows[i][f], design.labels[i].index())));
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut left = [0.0f64; 2];
        for k in 0..n - 1 {
            left[sorted[k].1] += 1.0;
            let (lo, hi) = (sorted[k].0, sorted[k + 1].0);
            let nl = k + 1;
            if lo == hi || nl < p.min_samples_leaf || n - nl < p.min_samples_leaf {
                continue;
            }
            let right = [c[0] as f64 - left[0], c[1] as f64 - left[1]];
            let gain = parent - weighted_gini(left) - weighted_gini(right);
            if best.is_none_or(|b| gain > b.2) {
                let mid = (lo + hi) / T::lit(2.0);
                let t = if mid < hi { mid } else { lo };
                best = Some((f, t, gain, nl));
            }
        }
    }
    let (feature, threshold, gain, _) = best?;
    let (left, right) = samples
        .iter()
        .partition(|&&i| design.rows[i][feature] <= threshold);
    Some(Candidate {
        feature,
        threshold,
        gain,
        left,
        right,
    })
}

/// Grows one tree on `samples` (row indices, repeats allowed). Expansion is
/// depth-first, or best-first by impurity decrease when `max_leaf_nodes` is set.
pub(crate) fn grow<T: Scalar>(
    design: &Design<T>,
    samples: &[usize],
    p: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree<T> {
    let mut nodes = vec![TreeNode::Leaf(counts(design, samples))];
    let mut frontier: Vec<Pending<T>> = Vec::new();
    if let Some(split) = find_split(design, samples, 0, p, rng) {
        frontier.push(Pending { node: 0, depth: 0, split });
    }
    let mut leaves = 1usize;
    while !frontier.is_empty() {
        if p.max_leaf_nodes.is_some_and(|m| leaves >= m) {
            break;
        }
        let pick = match p.max_leaf_nodes {
            None => frontier.len() - 1,
            Some(_) => {
                let mut b = 0;
                for (k, cand) in frontier.iter().enumerate() {
                    let cur = &frontier[b];
                    if cand.split.gain > cur.split.gain || (cand.split.gain == cur.split.gain && cand.node < cur.node) {
                        b = k;
                    }
                }
                b
            }
        };
        let Pending { node, depth, split } = frontier.swap_remove(pick);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf(counts(design, &split.left)));
        nodes.push(TreeNode::Leaf(counts(design, &split.right)));
        nodes[node] = TreeNode::Split {
            f: split.feature,
            t: split.threshold,
            l,
            r,
        };
        leaves += 1;
        let left = find_split(design, &split.left, depth + 1, p, rng);
        let right = find_split(design, &split.right, depth + 1, p, rng);
        // left pushed last so depth-first expansion visits it first
        if let Some(s) = right {
            frontier.push(Pending { node: r, depth: depth + 1, split: s });
        }
        if let Some(s) = left {
            frontier.push(Pending { node: l, depth: depth + 1, split: s });
        }
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use crate::spectra::FeatureSet;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(mtry: usize) -> GrowParams {
        GrowParams {
            mtry,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_leaf_nodes: None,
        }
    }

    fn random_design(n: usize, seed: u64) -> Design<f64> {
        let mut rng = stream_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let labels = rows
            .iter()
            .map(|r| if r[0] + 0.3 * r[2] > 0.6 { Label::Plastic } else { Label::Water })
            .collect();
        Design::new(rows, labels, FeatureSet::Model3).unwrap()
    }

    #[test]
    fn memorizes_training_set() {
        let d = random_design(80, 1);
        let all: Vec<usize> = (0..d.len()).collect();
        let tree = grow(&d, &all, &params(4), &mut stream_rng(3, 0));
        for (row, label) in d.rows.iter().zip(&d.labels) {
            assert_eq!(tree.predict(row), *label);
        }
        tree.validate(4).unwrap();
    }

    #[test]
    fn respects_limits() {
        let d = random_design(120, 2);
        let all: Vec<usize> = (0..d.len()).collect();
        let p = GrowParams {
            mtry: 2,
            max_depth: Some(6),
            min_samples_split: 2,
            min_samples_leaf: 2,
            max_leaf_nodes: Some(8),
        };
        let tree = grow(&d, &all, &p, &mut stream_rng(4, 0));
        assert!(tree.leaf_count() <= 8);
        assert!(tree.depth() <= 6);
        for node in tree.nodes() {
            if let TreeNode::Leaf(c) = node {
                assert!(c[0] + c[1] >= 2);
            }
        }
        let stump = grow(&d, &all, &GrowParams { max_depth: Some(1), ..p }, &mut stream_rng(4, 0));
        assert_eq!(stump.leaf_count(), 2);
    }

    #[test]
    fn pure_node_is_leaf() {
        let d = Design::new(vec![vec![0.0; 4], vec![1.0; 4]], vec![Label::Water; 2], FeatureSet::Model3).unwrap();
        let tree = grow(&d, &[0, 1], &params(4), &mut stream_rng(0, 0));
        assert_eq!(tree.nodes(), &[TreeNode::Leaf([0, 2])]);
    }

    #[test]
    fn threshold_between_values() {
        let rows = vec![vec![1.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]];
        let d = Design::new(rows, vec![Label::Water, Label::Plastic], FeatureSet::Model3).unwrap();
        let tree = grow(&d, &[0, 1], &params(1), &mut stream_rng(0, 0));
        assert_eq!(
            tree.nodes()[0],
            TreeNode::Split { f: 0, t: 1.5, l: 1, r: 2 }
        );
    }

    #[test]
    fn validation_rejects_bad_trees() {
        let bad_child = vec![TreeNode::Split { f: 0, t: 0.5, l: 0, r: 1 }, TreeNode::Leaf([1, 0])];
        assert!(Tree::from_nodes(bad_child, 4).is_err());
        assert!(Tree::<f64>::from_nodes(vec![TreeNode::Leaf([0, 0])], 4).is_err());
        assert!(Tree::<f64>::from_nodes(vec![], 4).is_err());
    }

    #[test]
    fn node_json_shape() {
        let t = Tree::from_nodes(
            vec![
                TreeNode::Split { f: 1, t: 0.25, l: 1, r: 2 },
                TreeNode::Leaf([3, 0]),
                TreeNode::Leaf([0, 4]),
            ],
            4,
        )
        .unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"[{"f":1,"t":0.25,"l":1,"r":2},[3,0],[0,4]]"#);
        let back: Tree<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn prop_splits_never_increase_impurity(seed in 0u64..500) {
            let d = random_design(40, seed);
            let all: Vec<usize> = (0..d.len()).collect();
            let mut rng = stream_rng(seed, 1);
            if let Some(s) = find_split(&d, &all, 0, &params(2), &mut rng) {
                let c = counts(&d, &all);
                let parent = weighted_gini([c[0] as f64, c[1] as f64]);
                let l = counts(&d, &s.left);
                let r = counts(&d, &s.right);
                let children = weighted_gini([l[0] as f64, l[1] as f64]) + weighted_gini([r[0] as f64, r[1] as f64]);
                prop_assert!(children <= parent + 1e-12);
                prop_assert!((parent - children - s.gain).abs() < 1e-9);
            }
        }
    }
}

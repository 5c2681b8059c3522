#![allow(dead_code)]

use boxprob::model::build::{forest, single, tree};
use boxprob::model::{LeafNode, Node, SplitNode};
use boxprob::{Gaussian, Model};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Random classification tree whose thresholds come from a coarse grid, so
/// that several trees of a forest share thresholds.
pub fn random_tree<R: Rng>(rng: &mut R, n_features: usize, depth: usize, n_classes: usize) -> boxprob::model::DecisionTree {
    fn grow<R: Rng>(rng: &mut R, nodes: &mut Vec<Node>, n_features: usize, depth: usize, n_classes: usize) -> usize {
        let at = nodes.len();
        if depth == 0 || rng.random_bool(0.2) {
            nodes.push(Node::Leaf(LeafNode::Label(rng.random_range(0..n_classes))));
            return at;
        }
        nodes.push(Node::Leaf(LeafNode::Label(0)));
        let feature = rng.random_range(0..n_features);
        let threshold = rng.random_range(-8i32..=8) as f64 * 0.25;
        let left = grow(rng, nodes, n_features, depth - 1, n_classes);
        let right = grow(rng, nodes, n_features, depth - 1, n_classes);
        nodes[at] = Node::Split(SplitNode {
            feature,
            threshold,
            left,
            right,
        });
        at
    }
    let mut nodes = Vec::new();
    let root = grow(rng, &mut nodes, n_features, depth, n_classes);
    tree(nodes, root)
}

/// A single tree or a small forest over `n_features` features.
pub fn random_model<R: Rng>(rng: &mut R, n_features: usize) -> Model {
    let n_classes = rng.random_range(2..=3);
    if rng.random_bool(0.5) {
        single(random_tree(rng, n_features, 4, n_classes), n_features, n_classes)
    } else {
        let trees = (0..rng.random_range(2..=3))
            .map(|_| random_tree(rng, n_features, 3, n_classes))
            .collect();
        forest(trees, n_features, n_classes)
    }
}

/// Random covariance `A Aᵀ + 0.1 I` with entries of `A` scaled by `scale`.
pub fn random_cov<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale);
    &a * a.transpose() + DMatrix::identity(n, n) * (0.1 * scale * scale)
}

pub fn random_gaussian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Gaussian {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    Gaussian::from_matrix(mean, random_cov(rng, n, scale)).unwrap()
}

/// Spearman matrix with off-diagonals drawn from `[-r, r]`, retried until
/// positive definite.
pub fn random_spearman<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<Vec<f64>> {
    loop {
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            s[i][i] = 1.0;
            for j in 0..i {
                let v = rng.random_range(-r..=r);
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| s[i][j]);
        if m.cholesky().is_some() {
            return s;
        }
    }
}

/// Standard normal CDF from statrs, independent of the engine's own.
pub fn phi(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(x)
}

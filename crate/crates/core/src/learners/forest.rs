//! Random forest regression built from CART trees.
//!
//! Each tree is grown on a bootstrap resample of the training rows. At every
//! node `mtry` candidate features are drawn without replacement and the split
//! maximizing the reduction in squared error is taken; ties go to the lowest
//! feature index and then the lowest threshold. Nodes holding at most
//! `min_node_size` samples become leaves. Depth is not capped.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng as _, RngCore};
use rayon::prelude::*;

use crate::seed::{self, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub num_trees: usize,
    pub min_node_size: usize,
    pub mtry: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, w: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if w[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    target_min: f64,
    target_max: f64,
}

impl RandomForest {
    /// Grows `params.num_trees` trees in parallel. Tree `t` draws from the
    /// stream `derive(base, [TREE, t])` with `base` taken from `rng`.
    pub fn fit(params: ForestParams, features: &DMatrix<f64>, targets: &[f64], rng: &mut Rng) -> Self {
        let base = rng.next_u64();
        let trees = (0..params.num_trees)
            .into_par_iter()
            .map(|t| {
                let mut tree_rng = seed::rng_from(base, &[tag::TREE, t as u64]);
                grow_tree(&params, features, targets, &mut tree_rng)
            })
            .collect();
        let (target_min, target_max) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        RandomForest {
            trees,
            target_min,
            target_max,
        }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict_row(&self, w: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(w)).sum();
        // the average of leaf means lies in the target range; clamp away rounding
        (sum / self.trees.len() as f64).clamp(self.target_min, self.target_max)
    }
}

fn grow_tree(params: &ForestParams, features: &DMatrix<f64>, targets: &[f64], rng: &mut Rng) -> RegressionTree {
    let m = targets.len();
    let v = features.ncols();
    let mut samples: Vec<usize> = if params.bootstrap {
        (0..m).map(|_| rng.random_range(0..m)).collect()
    } else {
        (0..m).collect()
    };

    let mut nodes = vec![Node::Leaf(0.0)];
    // (node index, start, end) ranges into `samples`
    let mut stack = vec![(0usize, 0usize, samples.len())];
    let mut scratch: Vec<(f64, f64)> = Vec::with_capacity(m);

    while let Some((node, start, end)) = stack.pop() {
        let idx = &mut samples[start..end];
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| targets[i]).sum();
        let mean = sum / n as f64;
        let first = targets[idx[0]];
        let constant = idx.iter().all(|&i| targets[i] == first);
        if n <= params.min_node_size || constant {
            nodes[node] = Node::Leaf(mean);
            continue;
        }

        let mut candidates = index::sample(rng, v, params.mtry.min(v)).into_vec();
        candidates.sort_unstable();
        let parent_score = sum * sum / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in &candidates {
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| (features[(i, f)], targets[i])));
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for split in 0..n - 1 {
                left_sum += scratch[split].1;
                let (lo, hi) = (scratch[split].0, scratch[split + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = (split + 1) as f64;
                let nr = (n - split - 1) as f64;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(_, _, s)| score > s) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((f, threshold, score));
                }
            }
        }

        match best {
            Some((feature, threshold, score)) if score > parent_score + 1e-12 * parent_score.abs() => {
                // partition: rows with w[feature] <= threshold go left
                let mut lo = 0;
                for j in 0..n {
                    if features[(idx[j], feature)] <= threshold {
                        idx.swap(lo, j);
                        lo += 1;
                    }
                }
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                let right = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes[node] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, start + lo, end));
                stack.push((left, start, start + lo));
            }
            _ => nodes[node] = Node::Leaf(mean),
        }
    }
    RegressionTree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(num_trees: usize, min_node_size: usize, bootstrap: bool) -> ForestParams {
        ForestParams {
            num_trees,
            min_node_size,
            mtry: 1,
            bootstrap,
        }
    }

    #[test]
    fn root_only_tree_predicts_target_mean() {
        let w = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 2.0, 4.0, 9.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        let mut rng = Rng::seed_from_u64(1);
        let rf = RandomForest::fit(params(1, 4, false), &w, &y, &mut rng);
        assert_eq!(rf.trees()[0].n_leaves(), 1);
        for x in [-5.0, 0.5, 10.0] {
            assert_eq!(rf.predict_row(&[x]), mean);
        }
    }

    #[test]
    fn fully_grown_tree_interpolates_without_bootstrap() {
        let w = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [3.0, -1.0, 2.0, 7.0, 0.0];
        let mut rng = Rng::seed_from_u64(2);
        let rf = RandomForest::fit(params(1, 1, false), &w, &y, &mut rng);
        for i in 0..5 {
            assert_eq!(rf.predict_row(&[i as f64]), y[i]);
        }
    }

    #[test]
    fn split_picks_lowest_threshold_on_ties() {
        // targets symmetric: splits at 0.5 and 2.5 both isolate one outlier
        // with equal gain; the lower threshold wins
        let w = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = [5.0, 0.0, 0.0, 5.0];
        let mut rng = Rng::seed_from_u64(3);
        let tree = grow_tree(&params(1, 3, false), &w, &y, &mut rng);
        match tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
            }
            _ => panic!("expected a split at the root"),
        }
    }

    #[test]
    fn learns_a_step() {
        let m = 200;
        let w = DMatrix::from_fn(m, 1, |i, _| i as f64 / m as f64);
        let y: Vec<f64> = (0..m).map(|i| if i < m / 2 { -1.0 } else { 1.0 }).collect();
        let mut rng = Rng::seed_from_u64(4);
        let rf = RandomForest::fit(params(50, 5, true), &w, &y, &mut rng);
        assert!(rf.predict_row(&[0.1]) < -0.9);
        assert!(rf.predict_row(&[0.9]) > 0.9);
    }
}

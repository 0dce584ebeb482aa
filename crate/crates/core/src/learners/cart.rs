//! CART regression trees with variance-reduction splitting.
//!
//! Shared by the random forest (bootstrap rows, per-split feature
//! subsampling) and gradient boosting (residual targets). Split search is
//! exhaustive over midpoints between distinct sorted values; ties break
//! toward the lower feature index, then the lower threshold, so training is
//! deterministic for a given RNG stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Leaf index a row routes to.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    target: &'a [f64],
    config: &'a CartConfig,
    nodes: Vec<Node>,
}

/// Fit one tree on `rows` (indices into the column vectors; repeats allowed,
/// as produced by bootstrap sampling). `columns` is feature-major.
pub fn fit_tree(
    columns: &[Vec<f64>],
    target: &[f64],
    rows: &[usize],
    config: &CartConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut builder = Builder {
        columns,
        target,
        config,
        nodes: Vec::new(),
    };
    let rows = rows.to_vec();
    builder.grow(rows, 0, rng);
    Tree {
        nodes: builder.nodes,
    }
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.target[i]).sum();
        let mean = sum / n as f64;

        let stop = depth >= self.config.max_depth || n < 2 * self.config.min_leaf;
        let best = if stop {
            None
        } else {
            self.best_split(&rows, rng)
        };

        match best {
            None => {
                self.nodes.push(Node::Leaf { value: mean });
                self.nodes.len() - 1
            }
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.columns[split.feature][i] <= split.threshold);
                let node_idx = self.nodes.len();
                self.nodes.push(Node::Leaf { value: mean }); // placeholder
                let left = self.grow(left_rows, depth + 1, rng);
                let right = self.grow(right_rows, depth + 1, rng);
                self.nodes[node_idx] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                node_idx
            }
        }
    }

    fn candidate_features(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p = self.columns.len();
        let k = ((self.config.feature_fraction * p as f64).ceil() as usize).clamp(1, p);
        if k == p {
            return (0..p).collect();
        }
        // partial Fisher-Yates, then sorted so the lowest-index tie break is
        // over a canonical order
        let mut pool: Vec<usize> = (0..p).collect();
        for i in 0..k {
            let j = rng.random_range(i..p);
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let total_sum: f64 = rows.iter().map(|&i| self.target[i]).sum();
        let total_sumsq: f64 = rows.iter().map(|&i| self.target[i] * self.target[i]).sum();
        let parent_sse = total_sumsq - total_sum * total_sum / n;
        if parent_sse <= 1e-12 {
            return None;
        }

        let min_leaf = self.config.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());

        for &feature in &self.candidate_features(rng) {
            let column = &self.columns[feature];
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (column[i], self.target[i])));
            pairs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

            let mut left_sum = 0.0;
            let mut left_sumsq = 0.0;
            for split_at in 1..pairs.len() {
                let (value, y) = pairs[split_at - 1];
                left_sum += y;
                left_sumsq += y * y;
                let next_value = pairs[split_at].0;
                if next_value == value {
                    continue;
                }
                let left_n = split_at as f64;
                let right_n = n - left_n;
                if (split_at) < min_leaf || (pairs.len() - split_at) < min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sumsq = total_sumsq - left_sumsq;
                let sse = (left_sumsq - left_sum * left_sum / left_n)
                    + (right_sumsq - right_sum * right_sum / right_n);
                let gain = parent_sse - sse;
                let threshold = 0.5 * (value + next_value);
                let better = match &best {
                    None => gain > 0.0,
                    Some(b) => {
                        gain > b.gain
                            || (gain == b.gain
                                && (feature < b.feature
                                    || (feature == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Exhaustive single-split search used by the boosting leaf logic and as a
/// test oracle target: route every row, then set each leaf to the mean of
/// `values` over the rows it receives.
pub fn reestimate_leaves(tree: &mut Tree, columns: &[Vec<f64>], values: &[f64]) {
    let n = values.len();
    let mut sums = vec![0.0; tree.nodes.len()];
    let mut counts = vec![0usize; tree.nodes.len()];
    let p = columns.len();
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            row[j] = col[i];
        }
        let leaf = tree.leaf_index(&row);
        sums[leaf] += values[i];
        counts[leaf] += 1;
    }
    for (idx, node) in tree.nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            if counts[idx] > 0 {
                *value = sums[idx] / counts[idx] as f64;
            }
        }
    }
}

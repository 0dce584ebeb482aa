//! Fully connected ReLU network trained by mini-batch gradient descent on
//! mean-squared error. Hidden layers use ReLU, the output is linear; an empty
//! hidden-layer list gives a plain linear model. Shuffling and weight
//! initialization derive from the run seed, and training is single-threaded,
//! so results are bit-reproducible.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, derive_seed_indexed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    /// Layer widths including input and output: [p, h1, ..., 1].
    pub layer_sizes: Vec<usize>,
    /// Per layer: `weights[out][in]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Per layer: `biases[out]`.
    pub biases: Vec<Vec<f64>>,
    pub activation: String,
}

pub struct NnParams {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

// derivative convention at exactly zero: 0
fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl NnModel {
    fn init(p: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![p];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = seeded_rng(derive_seed(seed, "nn-init"));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let fan_in = sizes[l] as f64;
            let bound = (6.0 / fan_in).sqrt();
            weights.push(
                (0..sizes[l + 1])
                    .map(|_| {
                        (0..sizes[l])
                            .map(|_| rng.random_range(-bound..bound))
                            .collect()
                    })
                    .collect(),
            );
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        NnModel {
            layer_sizes: sizes,
            weights,
            biases,
            activation: "relu".to_string(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Pre-activations and activations per layer for one input row.
    fn forward(&self, row: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.weights.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = Vec::with_capacity(n_layers + 1);
        act.push(row.to_vec());
        for l in 0..n_layers {
            let input = &act[l];
            let z: Vec<f64> = self.weights[l]
                .iter()
                .zip(&self.biases[l])
                .map(|(w_row, b)| w_row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
                .collect();
            let a = if l + 1 == n_layers {
                z.clone() // linear output
            } else {
                z.iter().map(|&v| relu(v)).collect()
            };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let (_, act) = self.forward(row);
        act.last().unwrap()[0]
    }

    /// Mean-squared-error loss and its analytic gradients over a batch.
    /// Exposed so gradient-checking tests can compare against finite
    /// differences.
    pub fn loss_and_gradients(
        &self,
        rows: &[&[f64]],
        targets: &[f64],
    ) -> (f64, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let batch = rows.len() as f64;
        let n_layers = self.weights.len();
        let mut grad_w: Vec<Vec<Vec<f64>>> = self
            .weights
            .iter()
            .map(|layer| layer.iter().map(|row| vec![0.0; row.len()]).collect())
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self
            .biases
            .iter()
            .map(|layer| vec![0.0; layer.len()])
            .collect();
        let mut loss = 0.0;

        for (row, &y) in rows.iter().zip(targets) {
            let (pre, act) = self.forward(row);
            let pred = act[n_layers][0];
            let err = pred - y;
            loss += err * err;

            // delta for the linear output layer
            let mut delta = vec![2.0 * err / batch];
            for l in (0..n_layers).rev() {
                for (j, &d) in delta.iter().enumerate() {
                    grad_b[l][j] += d;
                    for (i, &a) in act[l].iter().enumerate() {
                        grad_w[l][j][i] += d * a;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; self.layer_sizes[l]];
                    for (j, &d) in delta.iter().enumerate() {
                        for (i, p) in prev.iter_mut().enumerate() {
                            *p += d * self.weights[l][j][i];
                        }
                    }
                    for (i, p) in prev.iter_mut().enumerate() {
                        *p *= relu_grad(pre[l - 1][i]);
                    }
                    delta = prev;
                }
            }
        }
        (loss / batch, grad_w, grad_b)
    }
}

pub fn fit_nn(features: &[Vec<f64>], target: &[f64], params: &NnParams, seed: u64) -> NnModel {
    let p = features.first().map(|r| r.len()).unwrap_or(0);
    let mut model = NnModel::init(p, &params.hidden_layers, seed);
    let n = target.len();
    let batch_size = params.batch_size.max(1);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..params.epochs {
        let mut rng = seeded_rng(derive_seed_indexed(seed, "nn-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| target[i]).collect();
            let (_, grad_w, grad_b) = model.loss_and_gradients(&rows, &ys);
            for l in 0..model.weights.len() {
                for j in 0..model.weights[l].len() {
                    model.biases[l][j] -= params.learning_rate * grad_b[l][j];
                    for i in 0..model.weights[l][j].len() {
                        model.weights[l][j][i] -= params.learning_rate * grad_w[l][j][i];
                    }
                }
            }
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_recovers_line() {
        // y = 2x + 1, no hidden layer: full-batch descent must land near the
        // exact least-squares solution (2, 1)
        let features: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 25.0 - 1.0]).collect();
        let target: Vec<f64> = features.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let params = NnParams {
            hidden_layers: vec![],
            epochs: 500,
            learning_rate: 0.1,
            batch_size: 64,
        };
        let model = fit_nn(&features, &target, &params, 42);
        let w = model.weights[0][0][0];
        let b = model.biases[0][0];
        assert!((w - 2.0).abs() < 1e-2, "w = {}", w);
        assert!((b - 1.0).abs() < 1e-2, "b = {}", b);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        // fixed 5x3 instance
        let features: Vec<Vec<f64>> = vec![
            vec![0.1, -0.4, 0.7],
            vec![0.9, 0.2, -0.3],
            vec![-0.6, 0.5, 0.2],
            vec![0.3, -0.8, -0.1],
            vec![-0.2, 0.6, 0.4],
        ];
        let target = vec![1.0, -0.5, 0.25, 0.8, -1.2];
        let rows: Vec<&[f64]> = features.iter().map(|r| r.as_slice()).collect();
        let mut model = NnModel::init(3, &[4], 7);

        let (_, grad_w, grad_b) = model.loss_and_gradients(&rows, &target);
        let h = 1e-6;
        let mut checked = 0;
        for l in 0..model.weights.len() {
            for j in 0..model.weights[l].len() {
                for i in 0..model.weights[l][j].len() {
                    let orig = model.weights[l][j][i];
                    model.weights[l][j][i] = orig + h;
                    let (lp, _, _) = model.loss_and_gradients(&rows, &target);
                    model.weights[l][j][i] = orig - h;
                    let (lm, _, _) = model.loss_and_gradients(&rows, &target);
                    model.weights[l][j][i] = orig;
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = grad_w[l][j][i];
                    let rel =
                        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        rel < 1e-4,
                        "w[{}][{}][{}]: {} vs {}",
                        l,
                        j,
                        i,
                        analytic,
                        numeric
                    );
                    checked += 1;
                }
                let orig = model.biases[l][j];
                model.biases[l][j] = orig + h;
                let (lp, _, _) = model.loss_and_gradients(&rows, &target);
                model.biases[l][j] = orig - h;
                let (lm, _, _) = model.loss_and_gradients(&rows, &target);
                model.biases[l][j] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grad_b[l][j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "b[{}][{}]: {} vs {}", l, j, analytic, numeric);
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn training_is_deterministic() {
        let features: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos()])
            .collect();
        let target: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let params = NnParams {
            hidden_layers: vec![8],
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 16,
        };
        let a = fit_nn(&features, &target, &params, 3);
        let b = fit_nn(&features, &target, &params, 3);
        assert_eq!(a, b);
    }
}

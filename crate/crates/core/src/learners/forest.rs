//! Random forest regression: CART trees on bootstrap samples with per-split
//! feature subsampling, predictions averaged over trees.
//!
//! Each tree consumes an independent derived seed, so training is
//! reproducible at any worker count; assembly order is fixed by tree index.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{fit_tree, CartConfig, Tree};
use crate::rng::{derive_seed_indexed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
}

pub fn fit_forest(
    columns: &[Vec<f64>],
    target: &[f64],
    params: &ForestParams,
    seed: u64,
) -> ForestModel {
    let n = target.len();
    let cart = CartConfig {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        feature_fraction: params.feature_fraction,
    };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded_rng(derive_seed_indexed(seed, "forest-tree", t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(columns, target, &rows, &cart, &mut rng)
        })
        .collect();
    ForestModel {
        n_features: columns.len(),
        trees,
    }
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_predicts_constant() {
        let columns = vec![(0..20).map(|i| i as f64).collect::<Vec<_>>()];
        let target = vec![3.0; 20];
        let params = ForestParams {
            n_trees: 10,
            max_depth: 6,
            min_leaf: 1,
            feature_fraction: 1.0,
        };
        let model = fit_forest(&columns, &target, &params, 42);
        for i in 0..20 {
            assert_eq!(model.predict_row(&[i as f64]), 3.0);
        }
    }

    #[test]
    fn predictions_within_target_hull() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(5);
        let n = 100;
        let columns: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let params = ForestParams {
            n_trees: 20,
            max_depth: 8,
            min_leaf: 2,
            feature_fraction: 0.7,
        };
        let model = fit_forest(&columns, &target, &params, 9);
        let lo = target.iter().cloned().fold(f64::MAX, f64::min);
        let hi = target.iter().cloned().fold(f64::MIN, f64::max);
        for i in 0..n {
            let row = [columns[0][i], columns[1][i], columns[2][i]];
            let p = model.predict_row(&row);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let columns = vec![(0..30).map(|i| (i as f64).sin()).collect::<Vec<_>>()];
        let target: Vec<f64> = (0..30).map(|i| i as f64 * 0.3).collect();
        let params = ForestParams {
            n_trees: 8,
            max_depth: 5,
            min_leaf: 2,
            feature_fraction: 0.8,
        };
        let a = fit_forest(&columns, &target, &params, 77);
        let b = fit_forest(&columns, &target, &params, 77);
        assert_eq!(a, b);
    }
}

//! Random forest regressor: CART trees grown by variance reduction on
//! seeded bootstrap resamples, prediction by averaging tree outputs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlucastError, Result};

/// Number of candidate features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    All,
    Count(usize),
    Fraction(f64),
}

impl FeatureSubset {
    fn size(&self, n_features: usize) -> usize {
        match self {
            FeatureSubset::All => n_features,
            FeatureSubset::Count(k) => (*k).clamp(1, n_features),
            FeatureSubset::Fraction(f) => {
                (((n_features as f64) * f).ceil() as usize).clamp(1, n_features)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 64,
            max_depth: 12,
            min_leaf: 2,
            features_per_split: FeatureSubset::Fraction(1.0 / 3.0),
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|row| {
                if row.len() != self.n_features {
                    return Err(FlucastError::DimensionMismatch {
                        expected: self.n_features,
                        found: row.len(),
                    });
                }
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
                Ok(sum / self.trees.len() as f64)
            })
            .collect()
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    config: &'a ForestConfig,
    nodes: Vec<Node>,
}

/// Best split for one feature over the given rows, as
/// (sum of squared errors after split, threshold). Thresholds are midpoints
/// between adjacent distinct values; both sides must hold `min_leaf` rows.
fn best_split_for_feature(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = rows.iter().map(|&r| (x[r][feature], y[r])).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = pairs.len();
    let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
    let mut left_sum = 0.0;
    let mut left_sq = 0.0;
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        left_sum += pairs[i].1;
        left_sq += pairs[i].1 * pairs[i].1;
        if pairs[i].0 == pairs[i + 1].0 {
            continue;
        }
        let n_left = i + 1;
        let n_right = n - n_left;
        if n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let right_sum = total_sum - left_sum;
        let right_sq = total_sq - left_sq;
        // SSE = sum(y^2) - (sum y)^2 / n, per side
        let sse = (left_sq - left_sum * left_sum / n_left as f64)
            + (right_sq - right_sum * right_sum / n_right as f64);
        let threshold = (pairs[i].0 + pairs[i + 1].0) / 2.0;
        // strict improvement keeps the lowest threshold on ties
        if best.map_or(true, |(b_sse, _)| sse < b_sse) {
            best = Some((sse, threshold));
        }
    }
    best
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
        let sse: f64 = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum();
        let stop = depth >= self.config.max_depth || n < 2 * self.config.min_leaf || sse <= 0.0;

        let split = if stop {
            None
        } else {
            let n_features = self.x[0].len();
            let m = self.config.features_per_split.size(n_features);
            let mut candidates: Vec<usize> = (0..n_features).collect();
            // seeded subset; sorted so ties resolve to the lowest index
            candidates.partial_shuffle(rng, m);
            let mut subset: Vec<usize> = candidates[..m].to_vec();
            subset.sort_unstable();
            let mut best: Option<(f64, usize, f64)> = None;
            for feature in subset {
                if let Some((s, thr)) =
                    best_split_for_feature(self.x, self.y, &rows, feature, self.config.min_leaf)
                {
                    if best.map_or(true, |(b, _, _)| s < b) {
                        best = Some((s, feature, thr));
                    }
                }
            }
            // require an actual reduction over the unsplit node
            best.filter(|(s, _, _)| *s < sse)
        };

        match split {
            None => {
                self.nodes.push(Node::Leaf { value: mean });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&r| self.x[r][feature] <= threshold);
                let idx = self.nodes.len();
                self.nodes.push(Node::Leaf { value: mean }); // placeholder
                let left = self.build(left_rows, depth + 1, rng);
                let right = self.build(right_rows, depth + 1, rng);
                self.nodes[idx] = Node::Split { feature, threshold, left, right };
                idx
            }
        }
    }
}

/// Grow `n_trees` CART trees on seeded bootstrap resamples. Per-tree seeds
/// are derived from the master seed, so growing order is immaterial.
pub fn fit_forest(config: &ForestConfig, x: &[Vec<f64>], y: &[f64]) -> Result<ForestModel> {
    if config.n_trees < 1 || config.min_leaf < 1 {
        return Err(FlucastError::InvalidConfig("n_trees and min_leaf must be >= 1".to_string()));
    }
    if x.len() != y.len() {
        return Err(FlucastError::ShapeMismatch("x and y row counts differ".to_string()));
    }
    if x.len() < 2 * config.min_leaf {
        return Err(FlucastError::InsufficientData(format!(
            "{} rows < 2 * min_leaf",
            x.len()
        )));
    }
    let n_features = x[0].len();
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let tree_seed = config
            .seed
            .wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let rows: Vec<usize> = if config.bootstrap {
            (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
        } else {
            (0..x.len()).collect()
        };
        let mut builder = TreeBuilder { x, y, config, nodes: Vec::new() };
        builder.build(rows, 0, &mut rng);
        trees.push(Tree { nodes: builder.nodes });
    }
    Ok(ForestModel { config: config.clone(), n_features, trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mse(pred: &[f64], y: &[f64]) -> f64 {
        pred.iter().zip(y).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / y.len() as f64
    }

    #[test]
    fn constant_target_predicts_exactly() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y = vec![5.5; 20];
        let model = fit_forest(&ForestConfig::default(), &x, &y).unwrap();
        for p in model.predict(&x).unwrap() {
            assert_eq!(p, 5.5);
        }
    }

    #[test]
    fn single_stump_threshold_lies_in_the_gap() {
        // step function: y = 0 for x < 0, y = 1 for x >= 0; x classes are
        // separated by the gap (-1.5, 0.5)
        let x: Vec<Vec<f64>> = (-5..5)
            .map(|i| vec![if i < 0 { i as f64 - 0.5 } else { i as f64 + 0.5 }])
            .collect();
        let y: Vec<f64> = (-5..5).map(|i| if i < 0 { 0.0 } else { 1.0 }).collect();
        let config = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            features_per_split: FeatureSubset::All,
            bootstrap: false,
            seed: 0,
        };
        let model = fit_forest(&config, &x, &y).unwrap();
        // the best split separates the classes; candidate thresholds are
        // midpoints of adjacent sorted values, so it must be exactly the
        // midpoint of -1.5 and 0.5
        match &model.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, -0.5);
            }
            other => panic!("expected a split at the root, got {other:?}"),
        }
    }

    #[test]
    fn deep_trees_beat_constant_mean_on_training_data() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let v = i as f64 / 10.0;
            x.push(vec![v, (i % 3) as f64]);
            y.push(v.sin() * 3.0 + (i % 3) as f64);
        }
        let config = ForestConfig {
            n_trees: 8,
            max_depth: 20,
            min_leaf: 1,
            features_per_split: FeatureSubset::All,
            bootstrap: false,
            seed: 1,
        };
        let model = fit_forest(&config, &x, &y).unwrap();
        let preds = model.predict(&x).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mean_mse = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        assert!(mse(&preds, &y) <= mean_mse);
    }

    #[test]
    fn more_trees_do_not_hurt_training_mse() {
        // median over 10 seeds: MSE(1 tree) >= MSE(64 trees), bootstrap off
        let mut deltas = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<Vec<f64>> = (0..80)
                .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|r| r[0] * 2.0 - r[1] + rng.gen_range(-0.1..0.1))
                .collect();
            let base = ForestConfig {
                max_depth: 6,
                min_leaf: 2,
                features_per_split: FeatureSubset::Fraction(0.5),
                bootstrap: false,
                seed,
                n_trees: 1,
            };
            let one = fit_forest(&base, &x, &y).unwrap();
            let many = fit_forest(&ForestConfig { n_trees: 64, ..base }, &x, &y).unwrap();
            let d = mse(&one.predict(&x).unwrap(), &y) - mse(&many.predict(&x).unwrap(), &y);
            deltas.push(d);
        }
        deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(deltas[deltas.len() / 2] >= 0.0, "median delta {deltas:?}");
    }

    #[test]
    fn seed_determinism() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let a = fit_forest(&ForestConfig::default(), &x, &y).unwrap();
        let b = fit_forest(&ForestConfig::default(), &x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insufficient_data() {
        let config = ForestConfig { min_leaf: 5, ..ForestConfig::default() };
        let x = vec![vec![1.0]; 4];
        let y = vec![0.0; 4];
        assert!(matches!(
            fit_forest(&config, &x, &y),
            Err(FlucastError::InsufficientData(_))
        ));
    }
}

//! Linear epsilon-insensitive support vector regression, trained by
//! subgradient descent on
//!
//!   J(w, b) = 1/2 ||w||^2 + C * sum_i max(0, |w.x_i + b - y_i| - eps)
//!
//! Full-batch steps with a decaying rate; a step that would raise the
//! objective is rejected and the rate halved, so the objective trace is
//! non-increasing.

use serde::{Deserialize, Serialize};

use crate::error::{FlucastError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// Width of the insensitive tube.
    pub epsilon: f64,
    /// Regularization trade-off (weight of the data term).
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Kept for the uniform fit contract; the full-batch solver does not
    /// consume randomness.
    pub seed: u64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, c: 1.0, epochs: 200, learning_rate: 0.01, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub config: SvrConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective value after each epoch.
    pub objective_trace: Vec<f64>,
}

impl SvrModel {
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|row| {
                if row.len() != self.weights.len() {
                    return Err(FlucastError::DimensionMismatch {
                        expected: self.weights.len(),
                        found: row.len(),
                    });
                }
                Ok(row.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias)
            })
            .collect()
    }
}

pub fn svr_objective(w: &[f64], b: f64, c: f64, eps: f64, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let pred: f64 = row.iter().zip(w).map(|(a, wv)| a * wv).sum::<f64>() + b;
            ((pred - yi).abs() - eps).max(0.0)
        })
        .sum();
    reg + c * data
}

/// Subgradient of the data term for one residual `r = pred - y`: zero inside
/// the tube, sign(r) outside.
pub fn tube_subgradient(residual: f64, eps: f64) -> f64 {
    if residual.abs() <= eps {
        0.0
    } else {
        residual.signum()
    }
}

pub fn fit_svr(config: &SvrConfig, x: &[Vec<f64>], y: &[f64]) -> Result<SvrModel> {
    if config.epsilon < 0.0 || config.c <= 0.0 || config.learning_rate <= 0.0 {
        return Err(FlucastError::InvalidConfig("bad SVR hyperparameters".to_string()));
    }
    if x.is_empty() || x.len() != y.len() {
        return Err(FlucastError::ShapeMismatch("x and y row counts differ".to_string()));
    }
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut lr = config.learning_rate;
    let mut objective = svr_objective(&w, b, config.c, config.epsilon, x, y);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // full-batch subgradient
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (row, &yi) in x.iter().zip(y) {
            let pred: f64 = row.iter().zip(&w).map(|(a, wv)| a * wv).sum::<f64>() + b;
            let s = tube_subgradient(pred - yi, config.epsilon);
            if s != 0.0 {
                for (g, a) in gw.iter_mut().zip(row) {
                    *g += config.c * s * a;
                }
                gb += config.c * s;
            }
        }
        let step_lr = lr / (1.0 + 0.01 * epoch as f64);
        let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wv, g)| wv - step_lr * g).collect();
        let b_new = b - step_lr * gb;
        let obj_new = svr_objective(&w_new, b_new, config.c, config.epsilon, x, y);
        if !obj_new.is_finite() {
            return Err(FlucastError::DivergedTraining { epoch });
        }
        if obj_new <= objective {
            w = w_new;
            b = b_new;
            objective = obj_new;
        } else {
            lr /= 2.0;
        }
        trace.push(objective);
    }

    Ok(SvrModel { config: config.clone(), weights: w, bias: b, objective_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_inside_tube_leave_weights_at_zero() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 0.05 * ((i % 3) as f64 - 1.0)).collect();
        let config = SvrConfig { epsilon: 0.1, ..SvrConfig::default() };
        let model = fit_svr(&config, &x, &y).unwrap();
        assert!(model.weights.iter().all(|&w| w == 0.0));
        assert_eq!(model.bias, 0.0);
    }

    #[test]
    fn recovers_linear_slope() {
        let x: Vec<Vec<f64>> = (-20..20).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0]).collect();
        let config = SvrConfig { epsilon: 0.0, c: 10.0, epochs: 500, ..SvrConfig::default() };
        let model = fit_svr(&config, &x, &y).unwrap();
        // least-squares oracle for perfectly linear data: slope exactly 3
        assert!(
            (model.weights[0] - 3.0).abs() < 0.1,
            "slope {}",
            model.weights[0]
        );
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let x: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 / 7.0).sin(), (i as f64 / 5.0).cos()])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.3).collect();
        let model = fit_svr(&SvrConfig::default(), &x, &y).unwrap();
        for pair in model.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0], "objective rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn tube_subgradient_is_zero_inside() {
        assert_eq!(tube_subgradient(0.05, 0.1), 0.0);
        assert_eq!(tube_subgradient(-0.1, 0.1), 0.0);
        assert_eq!(tube_subgradient(0.2, 0.1), 1.0);
        assert_eq!(tube_subgradient(-0.2, 0.1), -1.0);
    }

    #[test]
    fn determinism_and_dimension_check() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 2) as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let a = fit_svr(&SvrConfig::default(), &x, &y).unwrap();
        let b = fit_svr(&SvrConfig::default(), &x, &y).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            a.predict(&[vec![1.0]]),
            Err(FlucastError::DimensionMismatch { .. })
        ));
    }
}

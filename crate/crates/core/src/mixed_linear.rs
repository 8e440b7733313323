//! Linearized-network unlearning reduced to the quadratic linear machinery.
//!
//! A network linearized around `w_c*` has outputs `f_i + J_i w`. With residual
//! targets `r_i = y_i − f_i` the objective
//!
//! ```text
//! Σ_i ‖J_i w − r_i‖² + (λn/2)‖w‖²
//! ```
//!
//! is twice the quadratic [`SubsetLoss`] at `λ/2` once each sample's base
//! output is stored as the offset `onehot(y_i) − r_i`. Scaling by two changes
//! neither the minimizer nor the Newton step, so training, estimation and
//! unlearning are reused as is. Jacobian rows are shared across outputs
//! (`J_i = I_k ⊗ g_iᵀ`), which is the layout the feature files carry.

use std::path::Path;

use crate::data::{load_features, load_residuals, make_split, FeatureDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{ConvexLoss, LossKind, SubsetLoss};
use crate::unlearner::{compare_methods, Comparison, PipelineConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedProblem {
    /// Jacobian rows, labels and base outputs.
    pub data: FeatureDataset,
    /// `n × k` residual targets.
    pub residuals: Vec<f64>,
    pub lambda: f64,
}

impl LinearizedProblem {
    pub fn new(features: FeatureDataset, residuals: Vec<f64>, lambda: f64) -> Result<Self> {
        let (n, k) = (features.n(), features.k());
        if residuals.len() != n * k {
            return Err(Error::DimensionMismatch { expected: n * k, found: residuals.len() });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        let mut offsets = Vec::with_capacity(n * k);
        for i in 0..n {
            let y = features.label(i);
            for c in 0..k {
                offsets.push(if c == y { 1.0 } else { 0.0 } - residuals[i * k + c]);
            }
        }
        let data = features.with_offsets(offsets)?;
        Ok(Self { data, residuals, lambda })
    }

    /// The quadratic loss equal to half of the linearized objective over `indices`.
    pub fn subset_loss(&self, indices: Vec<usize>) -> Result<SubsetLoss<'_>> {
        SubsetLoss::new(&self.data, indices, ConvexLoss::quadratic(), 0.5 * self.lambda)
    }

    /// `Σ_{i∈S} ‖J_i w − r_i‖² + (λ|S|/2)‖w‖²`, evaluated term by term.
    pub fn objective(&self, indices: &[usize], w: &[f64]) -> Result<f64> {
        let (d, k) = (self.data.d(), self.data.k());
        if w.len() != d * k {
            return Err(Error::DimensionMismatch { expected: d * k, found: w.len() });
        }
        let mut total = 0.0;
        for &i in indices {
            let g = self.data.row(i);
            for c in 0..k {
                let jw: f64 = g.iter().zip(&w[c * d..(c + 1) * d]).map(|(a, b)| a * b).sum();
                total += (jw - self.residuals[i * k + c]).powi(2);
            }
        }
        let sq: f64 = w.iter().map(|v| v * v).sum();
        Ok(total + 0.5 * self.lambda * indices.len() as f64 * sq)
    }
}

/// Reads labels from an `SFUFEAT1` file and residual targets from an `SFUJRES1`
/// file; both must describe the same Jacobian rows.
pub fn load_linearized(features_path: &Path, residuals_path: &Path, lambda: f64) -> Result<LinearizedProblem> {
    let features = load_features(features_path)?;
    let res = load_residuals(residuals_path)?;
    if res.n != features.n() {
        return Err(Error::DimensionMismatch { expected: features.n(), found: res.n });
    }
    if res.d != features.d() {
        return Err(Error::DimensionMismatch { expected: features.d(), found: res.d });
    }
    if res.k != features.k() {
        return Err(Error::DimensionMismatch { expected: features.k(), found: res.k });
    }
    if res.features != features.features() {
        return Err(Error::invalid("feature and residual files carry different Jacobian rows"));
    }
    LinearizedProblem::new(features, res.residuals, lambda)
}

/// Pipeline settings adapted to the linearized objective: quadratic loss at `λ/2`.
pub fn linearized_config(problem: &LinearizedProblem, base: &PipelineConfig) -> PipelineConfig {
    let mut cfg = *base;
    cfg.loss = ConvexLoss::quadratic();
    cfg.lambda = 0.5 * problem.lambda;
    cfg.train = crate::trainer::TrainConfig::for_loss(LossKind::Quadratic);
    cfg
}

/// Retrained / Unlearned(+) / Unlearned(−) rows for each forget fraction.
pub fn run_mixed_linear(
    problem: &LinearizedProblem,
    train_idx: &[usize],
    test_idx: &[usize],
    fractions: &[f64],
    split_seed: u64,
    base: &PipelineConfig,
) -> Result<Vec<Comparison>> {
    let cfg = linearized_config(problem, base);
    fractions
        .iter()
        .map(|&f| {
            let split: SplitSpec = make_split(train_idx.to_vec(), test_idx.to_vec(), f, split_seed)?;
            compare_methods(&problem.data, &split, &format!("forget={:.0}%", 100.0 * f), &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_features, save_residuals};
    use crate::linalg;
    use crate::synthetic::linearized_instance;
    use crate::trainer::{retrain_oracle, train, TrainConfig};
    use crate::unlearner::{unlearn_blocks, UnlearnConfig};
    use proptest::prelude::*;

    fn f32_exact(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|x| x as f32 as f64).collect()
    }

    #[test]
    fn files_roundtrip() {
        let (ds, r) = linearized_instance(20, 4, 3, 0.1, 1).unwrap();
        let ds = FeatureDataset::new(4, 3, f32_exact(ds.features().to_vec()), ds.labels().to_vec()).unwrap();
        let r = f32_exact(r);
        let dir = tempfile::tempdir().unwrap();
        let (fp, rp) = (dir.path().join("j.feat"), dir.path().join("j.res"));
        save_features(&fp, &ds).unwrap();
        save_residuals(&rp, &ds, &r).unwrap();
        let p = load_linearized(&fp, &rp, 0.5).unwrap();
        assert_eq!(p, LinearizedProblem::new(ds.clone(), r.clone(), 0.5).unwrap());
        // mismatched shapes are rejected
        let (other, r2) = linearized_instance(21, 4, 3, 0.1, 2).unwrap();
        save_residuals(&rp, &other, &r2).unwrap();
        assert!(matches!(load_linearized(&fp, &rp, 0.5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_residuals_train_to_zero() {
        let (ds, r) = linearized_instance(40, 5, 2, 0.0, 3).unwrap();
        let p = LinearizedProblem::new(ds, vec![0.0; r.len()], 0.3).unwrap();
        let loss = p.subset_loss((0..40).collect()).unwrap();
        let m = train(&loss, TrainConfig::for_loss(LossKind::Quadratic)).unwrap();
        assert!(linalg::norm2(&m.w) < 1e-12);
    }

    #[test]
    fn unlearning_matches_retrain() {
        let (ds, r) = linearized_instance(100, 50, 1, 0.2, 4).unwrap();
        let p = LinearizedProblem::new(ds, r, 0.2).unwrap();
        let split = make_split((0..100).collect(), vec![], 0.1, 5).unwrap();
        let full = p.subset_loss(split.train_idx.clone()).unwrap();
        let cfg = TrainConfig::for_loss(LossKind::Quadratic);
        let model = train(&full, cfg).unwrap();
        let retrained = retrain_oracle(&p.data, &split, ConvexLoss::quadratic(), 0.1, cfg).unwrap();
        let retain = full.with_indices(split.retain_idx.clone()).unwrap();
        let g = full.with_indices(split.forget_idx.clone()).unwrap().gradient(&model.w).unwrap();
        let out = unlearn_blocks(&model, &retain.hessian_block().unwrap(), &g, &UnlearnConfig::default()).unwrap();
        let rel = linalg::norm2(&linalg::sub(&out.w, &retrained.w)) / linalg::norm2(&retrained.w);
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn fraction_sweep_rows() {
        let (ds, r) = linearized_instance(300, 6, 3, 0.3, 6).unwrap();
        let p = LinearizedProblem::new(ds, r, 0.1).unwrap();
        let base = PipelineConfig::for_loss(LossKind::Quadratic, 0.0);
        let out = run_mixed_linear(&p, &(0..240).collect::<Vec<_>>(), &(240..300).collect::<Vec<_>>(), &[0.1, 0.15, 0.2], 7, &base).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].estimated.setting, "forget=15%");
        for c in &out {
            assert!(c.exact.param_dist.unwrap() < 1e-8 * 1e3);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objective_is_twice_the_quadratic_loss(seed in 0u64..10_000, lambda in 0.0f64..2.0, w in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let (ds, r) = linearized_instance(15, 4, 3, 0.5, seed).unwrap();
            let p = LinearizedProblem::new(ds, r, lambda).unwrap();
            let idx: Vec<usize> = (0..15).collect();
            let direct = p.objective(&idx, &w).unwrap();
            let via = 2.0 * p.subset_loss(idx).unwrap().value(&w).unwrap();
            prop_assert!((direct - via).abs() <= 1e-10 * direct.abs().max(1e-300));
        }
    }
}

//! Minimizers of the regularized empirical loss, plus the retrain-from-scratch oracle.

use crate::data::{FeatureDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, norm2, SpdFactor};
use crate::losses::{ConvexLoss, LossKind, SubsetLoss};
use crate::unlearner::HessianSource;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Gradient-norm tolerance, relative to `max(1, ‖∇L(w₀)‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl TrainConfig {
    pub fn for_loss(kind: LossKind) -> Self {
        match kind {
            LossKind::Quadratic => Self { tol: 1e-8, max_iter: 20 },
            LossKind::Logistic => Self { tol: 1e-6, max_iter: 100 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInfo {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Number of samples in the training subset.
    pub n_samples: usize,
    /// Set for models produced by [`retrain_oracle`].
    pub oracle: bool,
    /// Hessian used by the removal update, for unlearned models.
    pub hessian_source: Option<HessianSource>,
}

/// Flattened linear classifier with its loss binding.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub loss: ConvexLoss,
    pub lambda: f64,
    pub d: usize,
    pub k: usize,
    pub info: TrainingInfo,
}

impl LinearModel {
    /// Wraps parameters that did not come out of [`train`] (loaded files, updates).
    pub fn from_parameters(w: Vec<f64>, loss: ConvexLoss, lambda: f64, d: usize, k: usize, n_samples: usize) -> Result<Self> {
        if w.len() != d * k {
            return Err(Error::DimensionMismatch { expected: d * k, found: w.len() });
        }
        let info = TrainingInfo { iterations: 0, grad_norm: f64::NAN, n_samples, oracle: false, hessian_source: None };
        Ok(Self { w, loss, lambda, d, k, info })
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn with_parameters(&self, w: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.w = w;
        out
    }

    /// Arg-max class for one sample, ties broken toward the lowest index.
    pub fn predict(&self, data: &FeatureDataset, i: usize) -> usize {
        let u = crate::losses::outputs(data, &self.w, i);
        let mut best = 0;
        for c in 1..u.len() {
            if u[c] > u[best] {
                best = c;
            }
        }
        best
    }
}

pub fn train(loss: &SubsetLoss, cfg: TrainConfig) -> Result<LinearModel> {
    train_from(loss, vec![0.0; loss.dim()], cfg)
}

/// Minimizes `loss` starting at `w0`.
///
/// Quadratic losses are solved through the shared `d × d` block of the Hessian;
/// logistic losses by Newton iterations with step halving until the loss stops
/// increasing.
pub fn train_from(loss: &SubsetLoss, w0: Vec<f64>, cfg: TrainConfig) -> Result<LinearModel> {
    if w0.len() != loss.dim() {
        return Err(Error::DimensionMismatch { expected: loss.dim(), found: w0.len() });
    }
    if loss.is_empty() && loss.ridge() == 0.0 {
        return Err(Error::SingularSystem);
    }
    let (w, iterations, grad_norm) = match loss.loss().kind {
        LossKind::Quadratic => solve_quadratic(loss, w0, cfg)?,
        LossKind::Logistic => damped_newton(loss, w0, cfg)?,
    };
    let data = loss.data();
    Ok(LinearModel {
        w,
        loss: loss.loss(),
        lambda: loss.lambda(),
        d: data.d(),
        k: data.k(),
        info: TrainingInfo { iterations, grad_norm, n_samples: loss.len(), oracle: false, hessian_source: None },
    })
}

fn solve_quadratic(loss: &SubsetLoss, mut w: Vec<f64>, cfg: TrainConfig) -> Result<(Vec<f64>, usize, f64)> {
    let d = loss.data().d();
    let block = loss.hessian_block()?;
    let factor = SpdFactor::new(&block).map_err(|_| Error::SingularSystem)?;
    let mut g = loss.gradient(&w)?;
    let threshold = cfg.tol * norm2(&g).max(1.0);
    let mut iterations = 0;
    while norm2(&g) > threshold {
        if iterations == cfg.max_iter {
            return Err(Error::NotConverged { iterations });
        }
        for (wc, gc) in w.chunks_mut(d).zip(g.chunks(d)) {
            let step = factor.solve(gc)?;
            linalg::axpy(-1.0, &step, wc);
        }
        g = loss.gradient(&w)?;
        iterations += 1;
    }
    Ok((w, iterations, norm2(&g)))
}

fn damped_newton(loss: &SubsetLoss, mut w: Vec<f64>, cfg: TrainConfig) -> Result<(Vec<f64>, usize, f64)> {
    let mut g = loss.gradient(&w)?;
    let threshold = cfg.tol * norm2(&g).max(1.0);
    let mut value = loss.value(&w)?;
    let mut iterations = 0;
    while norm2(&g) > threshold {
        if iterations == cfg.max_iter {
            return Err(Error::NotConverged { iterations });
        }
        let h = loss.hessian(&w)?;
        let step = linalg::solve_spd(&h, &g).map_err(|_| Error::SingularSystem)?;
        // Near the optimum the decrease drops below round-off in the loss value.
        let slack = 8.0 * f64::EPSILON * value.abs();
        let mut t = 1.0;
        loop {
            let mut trial = w.clone();
            linalg::axpy(-t, &step, &mut trial);
            let v = loss.value(&trial)?;
            if v <= value + slack || t < 1e-12 {
                w = trial;
                value = v;
                break;
            }
            t *= 0.5;
        }
        g = loss.gradient(&w)?;
        iterations += 1;
    }
    Ok((w, iterations, norm2(&g)))
}

/// Retrains from scratch on the retain set.
pub fn retrain_oracle(
    data: &FeatureDataset,
    split: &SplitSpec,
    loss: ConvexLoss,
    lambda: f64,
    cfg: TrainConfig,
) -> Result<LinearModel> {
    if split.retain_idx.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let retain = SubsetLoss::new(data, split.retain_idx.clone(), loss, lambda)?;
    let mut model = train(&retain, cfg)?;
    model.info.oracle = true;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve_spd, sub};
    use crate::losses::tests::scalar_worked_example;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, k: usize, seed: u64) -> FeatureDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        FeatureDataset::new(d, k, features, labels).unwrap()
    }

    #[test]
    fn worked_example_optima() {
        let ds = scalar_worked_example();
        let cfg = TrainConfig::for_loss(LossKind::Quadratic);
        let full = SubsetLoss::new(&ds, vec![0, 1], ConvexLoss::quadratic(), 1.0).unwrap();
        let m = train(&full, cfg).unwrap();
        assert!((m.w[0] - 0.25).abs() < 1e-14);
        let split = SplitSpec::new(vec![0, 1], vec![], vec![1]).unwrap();
        let r = retrain_oracle(&ds, &split, ConvexLoss::quadratic(), 1.0, cfg).unwrap();
        assert!((r.w[0] - 0.5).abs() < 1e-14);
        assert!(r.info.oracle);
        assert_eq!(r.info.n_samples, 1);
    }

    #[test]
    fn zero_targets_give_zero_model() {
        // offsets equal to the one-hot targets make every residual target zero
        let base = random_dataset(30, 4, 3, 1);
        let offsets: Vec<f64> = (0..30)
            .flat_map(|i| {
                let y = base.label(i);
                (0..3).map(move |c| if c == y { 1.0 } else { 0.0 })
            })
            .collect();
        let ds = base.clone().with_offsets(offsets).unwrap();
        let l = SubsetLoss::new(&ds, (0..30).collect(), ConvexLoss::quadratic(), 0.7).unwrap();
        let m = train(&l, TrainConfig::for_loss(LossKind::Quadratic)).unwrap();
        assert!(m.w.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn quadratic_matches_direct_solve() {
        let ds = random_dataset(50, 5, 3, 2);
        let l = SubsetLoss::new(&ds, (0..50).collect(), ConvexLoss::quadratic(), 0.05).unwrap();
        let m = train(&l, TrainConfig::for_loss(LossKind::Quadratic)).unwrap();
        let z = vec![0.0; 15];
        let h = l.hessian(&z).unwrap();
        let g0 = l.gradient(&z).unwrap();
        let direct: Vec<f64> = solve_spd(&h, &g0).unwrap().into_iter().map(|v| -v).collect();
        assert!(norm2(&sub(&m.w, &direct)) <= 1e-10 * norm2(&direct));
        assert!(m.info.grad_norm <= 1e-8 * norm2(&g0).max(1.0));
    }

    #[test]
    fn logistic_converges() {
        let ds = random_dataset(80, 4, 3, 3);
        let l = SubsetLoss::new(&ds, (0..80).collect(), ConvexLoss::logistic(), 0.01).unwrap();
        let m = train(&l, TrainConfig::for_loss(LossKind::Logistic)).unwrap();
        assert!(norm2(&l.gradient(&m.w).unwrap()) <= 1e-6 * norm2(&l.gradient(&[0.0; 12]).unwrap()));
        assert!(m.info.iterations > 1);
    }

    #[test]
    fn unique_minimizer_from_different_starts() {
        for kind in [ConvexLoss::quadratic(), ConvexLoss::logistic()] {
            let ds = random_dataset(60, 3, 3, 4);
            let l = SubsetLoss::new(&ds, (0..60).collect(), kind, 0.02).unwrap();
            let cfg = TrainConfig { tol: 1e-10, max_iter: 200 };
            let a = train(&l, cfg).unwrap();
            let b = train_from(&l, vec![3.0; 9], cfg).unwrap();
            assert!(norm2(&sub(&a.w, &b.w)) <= 1e-6 * norm2(&a.w), "{kind:?}");
        }
    }

    #[test]
    fn singular_system_without_regularization() {
        // more features than samples, λ = 0
        let ds = random_dataset(3, 6, 2, 5);
        let l = SubsetLoss::new(&ds, (0..3).collect(), ConvexLoss::quadratic(), 0.0).unwrap();
        assert!(matches!(train(&l, TrainConfig::for_loss(LossKind::Quadratic)), Err(Error::SingularSystem)));
        let l = SubsetLoss::new(&ds, (0..3).collect(), ConvexLoss::logistic(), 0.0).unwrap();
        assert!(matches!(train(&l, TrainConfig::for_loss(LossKind::Logistic)), Err(Error::SingularSystem)));
    }

    #[test]
    fn not_converged_reported() {
        let ds = random_dataset(40, 3, 3, 6);
        let l = SubsetLoss::new(&ds, (0..40).collect(), ConvexLoss::logistic(), 1e-3).unwrap();
        let err = train(&l, TrainConfig { tol: 1e-12, max_iter: 1 }).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 1 }));
    }

    #[test]
    fn gradient_splits_at_optimum() {
        let ds = random_dataset(100, 4, 2, 7);
        let full = SubsetLoss::new(&ds, (0..100).collect(), ConvexLoss::logistic(), 0.01).unwrap();
        let m = train(&full, TrainConfig::for_loss(LossKind::Logistic)).unwrap();
        let gr = full.with_indices((10..100).collect()).unwrap().gradient(&m.w).unwrap();
        let gf = full.with_indices((0..10).collect()).unwrap().gradient(&m.w).unwrap();
        let sum: Vec<f64> = gr.iter().zip(&gf).map(|(a, b)| a + b).collect();
        assert!(norm2(&sum) <= 1e-6 * norm2(&full.gradient(&[0.0; 8]).unwrap()));
    }

    #[test]
    fn retrain_is_deterministic() {
        let ds = random_dataset(50, 3, 2, 8);
        let split = crate::data::make_split((0..50).collect(), vec![], 0.2, 1).unwrap();
        let cfg = TrainConfig::for_loss(LossKind::Logistic);
        let a = retrain_oracle(&ds, &split, ConvexLoss::logistic(), 0.1, cfg).unwrap();
        let b = retrain_oracle(&ds, &split, ConvexLoss::logistic(), 0.1, cfg).unwrap();
        assert_eq!(a, b);
    }
}

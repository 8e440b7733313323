//! Per-sample convex losses and the regularized loss over an index subset.
//!
//! Parameters are a flattened `d × k` weight matrix in class-major order:
//! `w[c * d + j]` is the weight of feature `j` for class `c`. The model output
//! for sample `i` is `u_i = o_i + Wᵀx_i`, where `o_i` is the dataset's optional
//! per-sample offset.
//!
//! Subset loss: `L_S(w) = Σ_{i∈S} ℓ(y_i, u_i) + (λ|S|/2)‖w‖²`, so losses over a
//! partition of the training set add up to the full training loss.

use nalgebra::DMatrix;

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `ℓ = ½‖u − onehot(y)‖²`
    Quadratic,
    /// Softmax cross-entropy `ℓ = logsumexp(u) − u_y`.
    Logistic,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(LossKind::Quadratic),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// A per-sample loss together with the constants used in residual bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexLoss {
    pub kind: LossKind,
    /// Lipschitz constant of the loss's second derivative.
    pub gamma: f64,
    /// Bound on the per-sample gradient norm when `‖x‖₂ ≤ 1`, if one exists.
    pub grad_bound: Option<f64>,
}

impl ConvexLoss {
    pub fn quadratic() -> Self {
        Self { kind: LossKind::Quadratic, gamma: 0.0, grad_bound: None }
    }

    /// `γ = 1` is a conservative choice, not a tight constant. `C = √2` since
    /// `‖x (p − e_y)ᵀ‖_F ≤ ‖p − e_y‖ ≤ √2` for unit-bounded `x`.
    pub fn logistic() -> Self {
        Self { kind: LossKind::Logistic, gamma: 1.0, grad_bound: Some(std::f64::consts::SQRT_2) }
    }

    pub fn of_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::Quadratic => Self::quadratic(),
            LossKind::Logistic => Self::logistic(),
        }
    }

    /// Loss value at outputs `u` for label `y`.
    pub fn value(&self, u: &[f64], y: usize) -> f64 {
        match self.kind {
            LossKind::Quadratic => {
                0.5 * u
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| {
                        let r = v - if c == y { 1.0 } else { 0.0 };
                        r * r
                    })
                    .sum::<f64>()
            }
            LossKind::Logistic => log_sum_exp(u) - u[y],
        }
    }

    /// `∂ℓ/∂u`.
    pub fn output_gradient(&self, u: &[f64], y: usize) -> Vec<f64> {
        match self.kind {
            LossKind::Quadratic => {
                u.iter().enumerate().map(|(c, &v)| v - if c == y { 1.0 } else { 0.0 }).collect()
            }
            LossKind::Logistic => {
                let mut p = softmax(u);
                p[y] -= 1.0;
                p
            }
        }
    }

    /// `∂²ℓ/∂u²` as a row-major `k × k` matrix.
    pub fn output_hessian(&self, u: &[f64]) -> Vec<f64> {
        let k = u.len();
        let mut h = vec![0.0; k * k];
        match self.kind {
            LossKind::Quadratic => {
                for c in 0..k {
                    h[c * k + c] = 1.0;
                }
            }
            LossKind::Logistic => {
                let p = softmax(u);
                for a in 0..k {
                    for b in 0..k {
                        h[a * k + b] = if a == b { p[a] } else { 0.0 } - p[a] * p[b];
                    }
                }
            }
        }
        h
    }
}

fn log_sum_exp(u: &[f64]) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Model outputs `o_i + Wᵀx_i` for one sample.
pub fn outputs(data: &FeatureDataset, w: &[f64], i: usize) -> Vec<f64> {
    let (d, k) = (data.d(), data.k());
    let x = data.row(i);
    let mut u: Vec<f64> = (0..k).map(|c| crate::linalg::dot(&w[c * d..(c + 1) * d], x)).collect();
    if let Some(o) = data.offset(i) {
        for (uc, oc) in u.iter_mut().zip(o) {
            *uc += oc;
        }
    }
    u
}

/// Regularized loss of one index subset of a dataset.
#[derive(Clone, Debug)]
pub struct SubsetLoss<'a> {
    data: &'a FeatureDataset,
    indices: Vec<usize>,
    loss: ConvexLoss,
    lambda: f64,
}

impl<'a> SubsetLoss<'a> {
    pub fn new(data: &'a FeatureDataset, indices: Vec<usize>, loss: ConvexLoss, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be a nonnegative finite number, got {lambda}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.n()) {
            return Err(Error::DimensionMismatch { expected: data.n(), found: bad + 1 });
        }
        Ok(Self { data, indices, loss, lambda })
    }

    /// Same dataset, loss and λ over a different subset.
    pub fn with_indices(&self, indices: Vec<usize>) -> Result<Self> {
        Self::new(self.data, indices, self.loss, self.lambda)
    }

    /// Same subset with a different dataset (for example, relabeled samples).
    pub fn with_data<'b>(&self, data: &'b FeatureDataset) -> Result<SubsetLoss<'b>> {
        if data.n() != self.data.n() || data.d() != self.data.d() || data.k() != self.data.k() {
            return Err(Error::invalid("replacement dataset has a different shape"));
        }
        SubsetLoss::new(data, self.indices.clone(), self.loss, self.lambda)
    }

    pub fn data(&self) -> &'a FeatureDataset {
        self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn loss(&self) -> ConvexLoss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.data.p()
    }

    /// `λ|S|`, the strong-convexity modulus contributed by the regularizer.
    pub fn ridge(&self) -> f64 {
        self.lambda * self.indices.len() as f64
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: w.len() });
        }
        Ok(())
    }

    /// Unregularized loss of one sample.
    pub fn sample_loss(&self, w: &[f64], i: usize) -> Result<f64> {
        self.check(w)?;
        Ok(self.loss.value(&outputs(self.data, w, i), self.data.label(i)))
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let data_term: f64 = self
            .indices
            .iter()
            .map(|&i| self.loss.value(&outputs(self.data, w, i), self.data.label(i)))
            .sum();
        let sq: f64 = w.iter().map(|v| v * v).sum();
        Ok(data_term + 0.5 * self.ridge() * sq)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let (d, k) = (self.data.d(), self.data.k());
        let mut g = vec![0.0; d * k];
        for &i in &self.indices {
            let u = outputs(self.data, w, i);
            let gu = self.loss.output_gradient(&u, self.data.label(i));
            let x = self.data.row(i);
            for c in 0..k {
                crate::linalg::axpy(gu[c], x, &mut g[c * d..(c + 1) * d]);
            }
        }
        crate::linalg::axpy(self.ridge(), w, &mut g);
        Ok(g)
    }

    /// Full `p × p` Hessian.
    pub fn hessian(&self, w: &[f64]) -> Result<SymMatrix> {
        self.check(w)?;
        let (d, k) = (self.data.d(), self.data.k());
        let mut h = if self.indices.is_empty() {
            SymMatrix::zeros(d * k)
        } else {
            match self.loss.kind {
                LossKind::Quadratic => SymMatrix::block_diagonal(&self.gram(), k),
                LossKind::Logistic => self.logistic_data_hessian(w),
            }
        };
        h = h.add_diagonal(self.ridge());
        Ok(h)
    }

    /// The `d × d` diagonal block of the quadratic-loss Hessian, `Σ xxᵀ + λ|S| I`.
    /// The full Hessian is `k` copies of it along the diagonal.
    pub fn hessian_block(&self) -> Result<SymMatrix> {
        if self.loss.kind != LossKind::Quadratic {
            return Err(Error::invalid("block Hessian is only defined for the quadratic loss"));
        }
        let g = if self.indices.is_empty() { SymMatrix::zeros(self.data.d()) } else { self.gram() };
        Ok(g.add_diagonal(self.ridge()))
    }

    fn design(&self) -> DMatrix<f64> {
        let d = self.data.d();
        DMatrix::from_fn(self.indices.len(), d, |r, j| self.data.row(self.indices[r])[j])
    }

    fn gram(&self) -> SymMatrix {
        let x = self.design();
        SymMatrix::symmetrize(&(x.transpose() * &x)).expect("square")
    }

    fn logistic_data_hessian(&self, w: &[f64]) -> SymMatrix {
        let (d, k) = (self.data.d(), self.data.k());
        let x = self.design();
        let weights: Vec<Vec<f64>> =
            self.indices.iter().map(|&i| self.loss.output_hessian(&outputs(self.data, w, i))).collect();
        let mut full = DMatrix::zeros(d * k, d * k);
        for a in 0..k {
            for b in a..k {
                let mut scaled = x.clone();
                for (r, wr) in weights.iter().enumerate() {
                    let s = wr[a * k + b];
                    scaled.row_mut(r).scale_mut(s);
                }
                let block = x.transpose() * scaled;
                full.view_mut((a * d, b * d), (d, d)).copy_from(&block);
                if a != b {
                    full.view_mut((b * d, a * d), (d, d)).copy_from(&block.transpose());
                }
            }
        }
        SymMatrix::symmetrize(&full).expect("square")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{norm2, sub};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, k: usize, seed: u64) -> FeatureDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        FeatureDataset::new(d, k, features, labels).unwrap()
    }

    fn random_w(p: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn quadratic_single_sample_value() {
        let ds = FeatureDataset::new(1, 1, vec![1.0], vec![0]).unwrap();
        let l = SubsetLoss::new(&ds, vec![0], ConvexLoss::quadratic(), 0.0).unwrap();
        assert_eq!(l.value(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn regularizer_vanishes_at_zero() {
        let ds = random_dataset(10, 3, 2, 1);
        let a = SubsetLoss::new(&ds, (0..10).collect(), ConvexLoss::quadratic(), 0.0).unwrap();
        let b = SubsetLoss::new(&ds, (0..10).collect(), ConvexLoss::quadratic(), 5.0).unwrap();
        let z = vec![0.0; 6];
        assert_eq!(a.value(&z).unwrap(), b.value(&z).unwrap());
    }

    #[test]
    fn logistic_uniform_value() {
        let ds = random_dataset(7, 4, 5, 2);
        let l = SubsetLoss::new(&ds, (0..7).collect(), ConvexLoss::logistic(), 0.3).unwrap();
        let v = l.value(&vec![0.0; 20]).unwrap();
        assert!((v - 7.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let ds = random_dataset(4, 3, 2, 3);
        let l = SubsetLoss::new(&ds, vec![0, 1], ConvexLoss::quadratic(), 0.1).unwrap();
        assert!(matches!(l.value(&[0.0; 5]), Err(Error::DimensionMismatch { expected: 6, found: 5 })));
        assert!(l.gradient(&[0.0; 7]).is_err());
        assert!(l.hessian(&[0.0; 1]).is_err());
    }

    #[test]
    fn quadratic_single_sample_hessian_is_outer_product() {
        let x = [0.3, -1.2, 2.0];
        let ds = FeatureDataset::new(3, 1, x.to_vec(), vec![0]).unwrap();
        let l = SubsetLoss::new(&ds, vec![0], ConvexLoss::quadratic(), 0.0).unwrap();
        let h = l.hessian(&[0.1, 0.2, 0.3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.get(i, j) - x[i] * x[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_subset_hessian_is_zero_plus_nothing() {
        let ds = random_dataset(4, 2, 3, 4);
        let l = SubsetLoss::new(&ds, vec![], ConvexLoss::logistic(), 2.0).unwrap();
        assert_eq!(l.hessian(&random_w(6, 1)).unwrap(), SymMatrix::zeros(6));
    }

    #[test]
    fn ridge_only_hessian() {
        // all-zero features: data term contributes nothing
        let ds = FeatureDataset::new(2, 2, vec![0.0; 8], vec![0, 1, 1, 0]).unwrap();
        let l = SubsetLoss::new(&ds, vec![0, 1, 2], ConvexLoss::quadratic(), 0.5).unwrap();
        let h = l.hessian(&[0.0; 4]).unwrap();
        assert_eq!(h, SymMatrix::identity(4).scale(1.5));
    }

    #[test]
    fn worked_forget_gradient() {
        // x = 1 for both samples, targets 1 and 0 encoded as a single-output offset problem.
        let ds = scalar_worked_example();
        let forget = SubsetLoss::new(&ds, vec![1], ConvexLoss::quadratic(), 1.0).unwrap();
        let g = forget.gradient(&[0.25]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    /// Two samples `x = 1` with scalar targets 1 and 0: a one-output quadratic
    /// loss `½(w − t)²` encoded with `k = 1` and offsets `−t + onehot = 1 − t`.
    pub(crate) fn scalar_worked_example() -> FeatureDataset {
        FeatureDataset::new(1, 1, vec![1.0, 1.0], vec![0, 0]).unwrap().with_offsets(vec![0.0, 1.0]).unwrap()
    }

    fn fd_gradient(l: &SubsetLoss, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|j| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[j] += h;
                b[j] -= h;
                (l.value(&a).unwrap() - l.value(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn fd_hessian(l: &SubsetLoss, w: &[f64]) -> Vec<Vec<f64>> {
        let h = 1e-5;
        (0..w.len())
            .map(|j| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[j] += h;
                b[j] -= h;
                let ga = l.gradient(&a).unwrap();
                let gb = l.gradient(&b).unwrap();
                ga.iter().zip(&gb).map(|(x, y)| (x - y) / (2.0 * h)).collect()
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (kind, seed) in [(ConvexLoss::quadratic(), 5), (ConvexLoss::logistic(), 6)] {
            let ds = random_dataset(30, 4, 3, seed);
            let l = SubsetLoss::new(&ds, (0..30).step_by(2).collect(), kind, 0.1).unwrap();
            let w = random_w(12, seed);
            let g = l.gradient(&w).unwrap();
            let fd = fd_gradient(&l, &w);
            assert!(norm2(&sub(&g, &fd)) <= 1e-5 * norm2(&g).max(1.0), "{kind:?}");
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        for (kind, seed) in [(ConvexLoss::quadratic(), 7), (ConvexLoss::logistic(), 8)] {
            let ds = random_dataset(25, 3, 3, seed);
            let l = SubsetLoss::new(&ds, (0..25).collect(), kind, 0.05).unwrap();
            let w = random_w(9, seed + 100);
            let h = l.hessian(&w).unwrap();
            let fd = fd_hessian(&l, &w);
            let mut err = 0.0;
            for (i, row) in fd.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    err += (h.get(i, j) - v).powi(2);
                }
            }
            assert!(err.sqrt() <= 1e-4 * h.frobenius_norm(), "{kind:?}: {}", err.sqrt());
        }
    }

    #[test]
    fn additivity_over_partition() {
        for kind in [ConvexLoss::quadratic(), ConvexLoss::logistic()] {
            let ds = random_dataset(40, 3, 4, 9);
            let full = SubsetLoss::new(&ds, (0..40).collect(), kind, 0.2).unwrap();
            let retain = full.with_indices((0..40).filter(|i| i % 5 != 0).collect()).unwrap();
            let forget = full.with_indices((0..40).filter(|i| i % 5 == 0).collect()).unwrap();
            let w = random_w(12, 10);
            let g = full.gradient(&w).unwrap();
            let gs: Vec<f64> =
                retain.gradient(&w).unwrap().iter().zip(forget.gradient(&w).unwrap()).map(|(a, b)| a + b).collect();
            assert!(norm2(&sub(&g, &gs)) < 1e-12);
            let h = full.hessian(&w).unwrap();
            let hs = retain.hessian(&w).unwrap().add(&forget.hessian(&w).unwrap()).unwrap();
            assert!(h.sub(&hs).unwrap().max_abs_entry() < 1e-12);
            let v = full.value(&w).unwrap();
            assert!((v - retain.value(&w).unwrap() - forget.value(&w).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_strong_convexity() {
        let ds = random_dataset(6, 8, 2, 11);
        let l = SubsetLoss::new(&ds, (0..6).collect(), ConvexLoss::quadratic(), 0.3).unwrap();
        let h = l.hessian(&vec![0.0; 16]).unwrap();
        assert!(h.min_eigenvalue() >= l.ridge() - 1e-10);
    }

    #[test]
    fn quadratic_hessian_independent_of_w() {
        let ds = random_dataset(20, 3, 2, 12);
        let l = SubsetLoss::new(&ds, (0..20).collect(), ConvexLoss::quadratic(), 0.1).unwrap();
        assert_eq!(l.hessian(&random_w(6, 1)).unwrap(), l.hessian(&random_w(6, 2)).unwrap());
        let block = l.hessian_block().unwrap();
        assert_eq!(SymMatrix::block_diagonal(&block, 2), l.hessian(&[0.0; 6]).unwrap());
    }
}

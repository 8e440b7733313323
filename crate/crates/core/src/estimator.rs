//! Retain-Hessian estimation from forget-set perturbation probes.
//!
//! Around the trained optimum `w*`, a second-order expansion of the retain
//! loss gives, for every perturbation `δw`,
//!
//! ```text
//! ½ δwᵀ H_r δw − ∇_f(w*)ᵀ δw − δL_r(w* + δw) ≈ 0
//! ```
//!
//! because `∇_r(w*) = −∇_f(w*)`. The retain loss difference is unavailable, so
//! it is replaced by a surrogate built from the forget loss difference, and
//! `H_r` is fitted by least squares over `m` random probes subject to `X ⪰ 0`.
//!
//! The least-squares problem is linear in the `s(s+1)/2` free entries of a
//! symmetric `s × s` matrix. Unknowns are kept in the orthonormal `svec` basis
//! (off-diagonal entries scaled by `√2`) so that Euclidean geometry on the
//! coordinates is Frobenius geometry on matrices and the PSD projection is
//! an exact Euclidean projection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, project_psd, SymMatrix};
use crate::losses::{LossKind, SubsetLoss};

/// Side length above which the normal equations are never assembled.
const DENSE_SIDE_LIMIT: usize = 100;

/// Gaussian perturbation directions, `η · N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub side: usize,
    pub scale: f64,
    pub seed: u64,
    pub probes: Vec<Vec<f64>>,
}

impl ProbeSet {
    pub fn m(&self) -> usize {
        self.probes.len()
    }
}

pub fn sample_probes(side: usize, m: usize, scale: f64, seed: u64) -> Result<ProbeSet> {
    if m == 0 || side == 0 {
        return Err(Error::invalid("need at least one probe of positive dimension"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("probe scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = (0..m)
        .map(|_| {
            (0..side)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect();
    Ok(ProbeSet { side, scale, seed, probes })
}

/// Which parameters a probe perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeLayout {
    /// Probes span the whole flattened parameter vector; the estimate is `p × p`.
    Full,
    /// Probe `i` perturbs only class block `i mod classes`; the estimate is the
    /// shared `d × d` block of a block-diagonal Hessian (quadratic loss only).
    ClassBlocks { classes: usize },
}

/// What stands in for the unavailable retain loss difference `δL_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossDifference {
    /// `δL_f` as measured.
    Forget,
    /// `δL_f · (n − n_f) / n_f`: the per-sample forget difference extrapolated
    /// to the retain set size.
    ForgetPerSample,
}

impl LossDifference {
    pub fn name(self) -> &'static str {
        match self {
            LossDifference::Forget => "forget",
            LossDifference::ForgetPerSample => "forget_per_sample",
        }
    }
}

impl std::str::FromStr for LossDifference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forget" | "raw" => Ok(LossDifference::Forget),
            "forget_per_sample" | "scaled" => Ok(LossDifference::ForgetPerSample),
            other => Err(Error::invalid(format!("unknown loss-difference surrogate {other:?}"))),
        }
    }
}

/// Probes together with the quantities each residual needs, cached once.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSet {
    pub probes: ProbeSet,
    /// `∇_f(w*)ᵀ δw_i`, restricted to the perturbed block in block layout.
    pub linear_terms: Vec<f64>,
    /// Loss differences entering the residual (after any surrogate scaling).
    pub loss_diffs: Vec<f64>,
}

impl PerturbationSet {
    /// Evaluates the forget loss at every perturbed point `w* + δw_i`.
    pub fn record(
        w_star: &[f64],
        forget: &SubsetLoss,
        probes: ProbeSet,
        layout: ProbeLayout,
        diff_scale: f64,
    ) -> Result<Self> {
        if forget.is_empty() {
            return Err(Error::EmptyIndexSet);
        }
        let p = forget.dim();
        if w_star.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: w_star.len() });
        }
        let block = block_width(layout, p, forget.loss().kind)?;
        if probes.side != block {
            return Err(Error::DimensionMismatch { expected: block, found: probes.side });
        }
        let grad = forget.gradient(w_star)?;
        let base = forget.value(w_star)?;
        let mut linear_terms = Vec::with_capacity(probes.m());
        let mut loss_diffs = Vec::with_capacity(probes.m());
        let mut point = w_star.to_vec();
        for (i, dw) in probes.probes.iter().enumerate() {
            let offset = block_offset(layout, block, i);
            linear_terms.push(linalg::dot(&grad[offset..offset + block], dw));
            linalg::axpy(1.0, dw, &mut point[offset..offset + block]);
            loss_diffs.push(diff_scale * (forget.value(&point)? - base));
            point[offset..offset + block].copy_from_slice(&w_star[offset..offset + block]);
        }
        Ok(Self { probes, linear_terms, loss_diffs })
    }

    /// Assembles a set from precomputed terms (oracle substitutions, corruption studies).
    pub fn from_parts(probes: ProbeSet, linear_terms: Vec<f64>, loss_diffs: Vec<f64>) -> Result<Self> {
        if linear_terms.len() != probes.m() || loss_diffs.len() != probes.m() {
            return Err(Error::DimensionMismatch { expected: probes.m(), found: linear_terms.len().min(loss_diffs.len()) });
        }
        Ok(Self { probes, linear_terms, loss_diffs })
    }

    pub fn m(&self) -> usize {
        self.probes.m()
    }

    pub fn side(&self) -> usize {
        self.probes.side
    }

    /// Regression target of probe `i`: `∇_fᵀδw_i + δL_i`.
    fn target(&self, i: usize) -> f64 {
        self.linear_terms[i] + self.loss_diffs[i]
    }
}

fn block_width(layout: ProbeLayout, p: usize, kind: LossKind) -> Result<usize> {
    match layout {
        ProbeLayout::Full => Ok(p),
        ProbeLayout::ClassBlocks { classes } => {
            if kind != LossKind::Quadratic {
                return Err(Error::invalid("class-block probes require the quadratic loss"));
            }
            if classes == 0 || p % classes != 0 {
                return Err(Error::DimensionMismatch { expected: p, found: classes });
            }
            Ok(p / classes)
        }
    }
}

fn block_offset(layout: ProbeLayout, block: usize, i: usize) -> usize {
    match layout {
        ProbeLayout::Full => 0,
        ProbeLayout::ClassBlocks { classes } => (i % classes) * block,
    }
}

/// `f̃_i(H) = ½ δw_iᵀ H δw_i − ∇_f(w*)ᵀ δw_i − δL(w_i)`.
pub fn surrogate_residual(h: &SymMatrix, set: &PerturbationSet, i: usize) -> Result<f64> {
    if h.dim() != set.side() {
        return Err(Error::DimensionMismatch { expected: set.side(), found: h.dim() });
    }
    let dw = &set.probes.probes[i];
    Ok(0.5 * h.quadratic_form(dw)? - set.linear_terms[i] - set.loss_diffs[i])
}

/// `Ψ̃(H)`: mean squared surrogate residual over all probes.
pub fn surrogate_objective(h: &SymMatrix, set: &PerturbationSet) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..set.m() {
        let r = surrogate_residual(h, set, i)?;
        acc += r * r;
    }
    Ok(acc / set.m() as f64)
}

// --- svec coordinates -----------------------------------------------------

fn svec_len(side: usize) -> usize {
    side * (side + 1) / 2
}

/// Coordinates of `½ δwᵀ X δw` in the svec basis.
fn probe_features(dw: &[f64], out: &mut [f64]) {
    let s = dw.len();
    let mut idx = 0;
    for a in 0..s {
        out[idx] = 0.5 * dw[a] * dw[a];
        idx += 1;
        for b in a + 1..s {
            out[idx] = dw[a] * dw[b] * std::f64::consts::FRAC_1_SQRT_2;
            idx += 1;
        }
    }
}

fn svec(x: &SymMatrix) -> Vec<f64> {
    let s = x.dim();
    let mut out = Vec::with_capacity(svec_len(s));
    for a in 0..s {
        out.push(x.get(a, a));
        for b in a + 1..s {
            out.push(x.get(a, b) * std::f64::consts::SQRT_2);
        }
    }
    out
}

fn smat(z: &[f64], s: usize) -> SymMatrix {
    let mut m = DMatrix::zeros(s, s);
    let mut idx = 0;
    for a in 0..s {
        m[(a, a)] = z[idx];
        idx += 1;
        for b in a + 1..s {
            let v = z[idx] * std::f64::consts::FRAC_1_SQRT_2;
            m[(a, b)] = v;
            m[(b, a)] = v;
            idx += 1;
        }
    }
    SymMatrix::from_upper(&m).expect("square")
}

/// The Gram operator `G = Σ φ_i φ_iᵀ` of the least-squares problem.
trait Gram {
    fn apply(&self, z: &[f64]) -> Vec<f64>;
}

enum DenseGram {
    /// `G` itself, when it is no larger than the design matrix.
    Assembled(DMatrix<f64>),
    /// The `m × u` design matrix `Φ`; `G z = Φᵀ(Φ z)`.
    Factored(DMatrix<f64>),
}

impl Gram for DenseGram {
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        let out = match self {
            DenseGram::Assembled(g) => g * z,
            DenseGram::Factored(phi) => phi.tr_mul(&(phi * z)),
        };
        out.as_slice().to_vec()
    }
}

/// Applies `G` through the probes without assembling it: `G z = svec(Σ_i ½ δw_i δw_iᵀ · ½ δw_iᵀ X δw_i)`.
struct ProbeGram<'a>(&'a PerturbationSet);

impl Gram for ProbeGram<'_> {
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let s = self.0.side();
        let x = smat(z, s);
        let weights: Vec<f64> =
            self.0.probes.probes.iter().map(|dw| 0.5 * x.quadratic_form(dw).expect("side matches")).collect();
        svec(&weighted_outer_sum(&self.0.probes.probes, &weights))
    }
}

/// `Σ_i c_i · ½ δw_i δw_iᵀ`.
fn weighted_outer_sum(probes: &[Vec<f64>], coeffs: &[f64]) -> SymMatrix {
    let s = probes[0].len();
    let mut acc = DMatrix::zeros(s, s);
    for (dw, &c) in probes.iter().zip(coeffs) {
        let v = DVector::from_column_slice(dw);
        acc.ger(0.5 * c, &v, &v, 1.0);
    }
    SymMatrix::from_upper(&acc).expect("square")
}

// --- estimation -------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Run projected gradient descent after projecting the unconstrained solution.
    pub refine: bool,
    pub max_refine_iter: usize,
    /// Stop refining when `Ψ̃` drops by less than this fraction over ten steps.
    pub stagnation: f64,
    /// Smallest admissible eigenvalue; 0 gives the PSD cone.
    pub floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { refine: true, max_refine_iter: 2000, stagnation: 1e-10, floor: 0.0 }
    }
}

/// Frobenius error bound attached to an estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub epsilon: f64,
    pub bound: f64,
    /// `‖Ĥ − H_r‖_F` when the true Hessian is available.
    pub actual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianEstimate {
    /// PSD estimate of side `side`.
    pub h: SymMatrix,
    /// Achieved `Ψ̃(Ĥ)`.
    pub objective: f64,
    /// `Ψ̃` at the unconstrained least-squares solution, before projection.
    pub unconstrained_objective: f64,
    pub m: usize,
    pub scale: f64,
    pub seed: u64,
    pub layout: ProbeLayout,
    /// Eigenvalue floor of the constraint set.
    pub floor: f64,
    /// Fewer probes than free entries; the system is underdetermined.
    pub rank_deficient: bool,
    pub refine_iterations: usize,
    pub bound: Option<BoundReport>,
}

impl HessianEstimate {
    pub fn side(&self) -> usize {
        self.h.dim()
    }

    /// The estimate as a `p × p` matrix (block layouts are expanded).
    pub fn full(&self) -> SymMatrix {
        match self.layout {
            ProbeLayout::Full => self.h.clone(),
            ProbeLayout::ClassBlocks { classes } => SymMatrix::block_diagonal(&self.h, classes),
        }
    }

    /// Attaches `ε`, the bound `2ε√s/(2+s)` and, if given, the actual Frobenius error.
    pub fn with_bound(mut self, epsilon: f64, truth: Option<&SymMatrix>) -> Result<Self> {
        let actual = match truth {
            Some(t) => Some(self.h.sub(t)?.frobenius_norm()),
            None => None,
        };
        self.bound = Some(BoundReport { epsilon, bound: lemma1_bound(epsilon, self.side()), actual });
        Ok(self)
    }

    /// `key=value` lines describing the estimate.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let layout = match self.layout {
            ProbeLayout::Full => "full".to_string(),
            ProbeLayout::ClassBlocks { classes } => format!("class_blocks:{classes}"),
        };
        let _ = writeln!(s, "m={}", self.m);
        let _ = writeln!(s, "eta={:e}", self.scale);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "side={}", self.side());
        let _ = writeln!(s, "layout={layout}");
        let _ = writeln!(s, "floor={:e}", self.floor);
        let _ = writeln!(s, "residual={:e}", self.objective);
        let _ = writeln!(s, "unconstrained_residual={:e}", self.unconstrained_objective);
        let _ = writeln!(s, "rank_deficient={}", self.rank_deficient);
        let _ = writeln!(s, "refine_iterations={}", self.refine_iterations);
        let _ = writeln!(s, "trace={:e}", self.h.trace());
        if let Some(b) = &self.bound {
            let _ = writeln!(s, "epsilon={:e}", b.epsilon);
            let _ = writeln!(s, "bound={:e}", b.bound);
            if let Some(a) = b.actual {
                let _ = writeln!(s, "actual_frobenius_error={a:e}");
            }
        }
        s
    }
}

/// Minimizes `Ψ̃(X)` over `X ⪰ 0`.
///
/// Unconstrained least squares first (Cholesky on the normal equations, the
/// dual `m × m` system when underdetermined, or conjugate gradients when the
/// side exceeds the dense limit), then projection onto the PSD cone, then
/// projected gradient descent until `Ψ̃` stagnates.
pub fn solve_surrogate(set: &PerturbationSet, cfg: &SolverConfig) -> Result<(SymMatrix, HessianSolveInfo)> {
    let s = set.side();
    let m = set.m();
    if m == 0 {
        return Err(Error::invalid("no probes"));
    }
    let u = svec_len(s);
    let targets: Vec<f64> = (0..m).map(|i| set.target(i)).collect();
    let rank_deficient = m < u;

    let dense = s <= DENSE_SIDE_LIMIT;
    let mut features = Vec::new();
    let (gram, rhs, z0): (Box<dyn Gram + '_>, Vec<f64>, Vec<f64>) = if dense {
        features = vec![0.0; m * u];
        for (i, dw) in set.probes.probes.iter().enumerate() {
            probe_features(dw, &mut features[i * u..(i + 1) * u]);
        }
        let phi = DMatrix::from_row_slice(m, u, &features);
        let t = DVector::from_column_slice(&targets);
        let rhs = phi.tr_mul(&t);
        if rank_deficient {
            // minimum-norm solution z = Φᵀ (ΦΦᵀ)⁺ t
            let kernel = &phi * phi.transpose();
            let alpha = spd_or_pinv_solve(kernel, &t);
            let z = phi.tr_mul(&alpha);
            (Box::new(DenseGram::Factored(phi)), rhs.as_slice().to_vec(), z.as_slice().to_vec())
        } else {
            let g = phi.tr_mul(&phi);
            let z = spd_or_pinv_solve(g.clone(), &rhs);
            (Box::new(DenseGram::Assembled(g)), rhs.as_slice().to_vec(), z.as_slice().to_vec())
        }
    } else {
        let rhs = svec(&weighted_outer_sum(&set.probes.probes, &targets));
        let op = ProbeGram(set);
        let z = conjugate_gradient(&op, &rhs, u.min(10 * m).max(50), 1e-12);
        (Box::new(op), rhs, z)
    };
    drop(features);

    let unconstrained = smat(&z0, s);
    let unconstrained_objective = surrogate_objective(&unconstrained, set)?;
    if !(cfg.floor >= 0.0) || !cfg.floor.is_finite() {
        return Err(Error::invalid(format!("eigenvalue floor must be nonnegative, got {}", cfg.floor)));
    }
    let mut x = project_floor(&unconstrained, cfg.floor);
    let mut iterations = 0;
    let already_psd = x == unconstrained;
    if cfg.refine && !already_psd {
        let (refined, it) = projected_gradient(gram.as_ref(), &rhs, &targets, x, m, cfg);
        x = refined;
        iterations = it;
    }
    let info = HessianSolveInfo { unconstrained_objective, rank_deficient, refine_iterations: iterations };
    Ok((x, info))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianSolveInfo {
    pub unconstrained_objective: f64,
    pub rank_deficient: bool,
    pub refine_iterations: usize,
}

/// Frobenius-nearest matrix with every eigenvalue at least `floor`.
fn project_floor(x: &SymMatrix, floor: f64) -> SymMatrix {
    if floor == 0.0 {
        project_psd(x)
    } else {
        project_psd(&x.add_diagonal(-floor)).add_diagonal(floor)
    }
}

fn spd_or_pinv_solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let sym = SymMatrix::symmetrize(&a).expect("square");
    let eig = sym.eigen();
    let cutoff = eig.eigenvalues[0].abs() * 1e-12 * a.nrows() as f64;
    let inv = eig.reconstruct_with(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    inv.as_matrix() * b
}

fn conjugate_gradient(op: &dyn Gram, b: &[f64], max_iter: usize, rel_tol: f64) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = linalg::dot(&r, &r);
    let stop = rel_tol * rel_tol * rr;
    for _ in 0..max_iter {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = op.apply(&p);
        let pap = linalg::dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        linalg::axpy(alpha, &p, &mut x);
        linalg::axpy(-alpha, &ap, &mut r);
        let rr_new = linalg::dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    x
}

/// Largest eigenvalue of the Gram operator by power iteration.
fn gram_norm(op: &dyn Gram, dim: usize) -> f64 {
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lam = 0.0;
    for _ in 0..100 {
        let w = op.apply(&v);
        let norm = linalg::norm2(&w);
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - lam).abs() <= 1e-6 * next {
            lam = next;
            break;
        }
        lam = next;
    }
    lam
}

/// Accelerated projected gradient with a fixed `1/L` step.
///
/// Momentum is dropped whenever a step would increase `Ψ̃`, so accepted
/// iterates decrease monotonically and the stagnation test is well defined.
fn projected_gradient(
    gram: &dyn Gram,
    rhs: &[f64],
    targets: &[f64],
    start: SymMatrix,
    m: usize,
    cfg: &SolverConfig,
) -> (SymMatrix, usize) {
    let s = start.dim();
    let u = rhs.len();
    let mf = m as f64;
    let c = targets.iter().map(|t| t * t).sum::<f64>();
    // Ψ̃(z) = (zᵀGz − 2bᵀz + c) / m
    let objective = |z: &[f64], gz: &[f64]| (linalg::dot(z, gz) - 2.0 * linalg::dot(rhs, z) + c) / mf;
    // a slight overestimate keeps the fixed step safely below 1/L
    let lipschitz = 2.0 * gram_norm(gram, u) * 1.01 / mf;
    if lipschitz == 0.0 {
        return (start, 0);
    }
    let step = 1.0 / lipschitz;
    let mut x = start;
    let mut z = svec(&x);
    let mut gz = gram.apply(&z);
    let mut fz = objective(&z, &gz);
    let (mut y, mut gy) = (z.clone(), gz.clone());
    let mut t = 1.0f64;
    let mut history = vec![fz];
    let mut it = 0;
    while it < cfg.max_refine_iter {
        it += 1;
        let mut trial = y.clone();
        for ((v, a), b) in trial.iter_mut().zip(&gy).zip(rhs) {
            *v -= step * 2.0 * (a - b) / mf;
        }
        let x_new = project_floor(&smat(&trial, s), cfg.floor);
        let z_new = svec(&x_new);
        let gz_new = gram.apply(&z_new);
        let f_new = objective(&z_new, &gz_new);
        if f_new > fz {
            // restart from the last accepted point without momentum
            if t == 1.0 {
                break;
            }
            t = 1.0;
            y.clone_from(&z);
            gy.clone_from(&gz);
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        // G is linear, so G y follows from G z without another application
        for j in 0..u {
            y[j] = z_new[j] + beta * (z_new[j] - z[j]);
            gy[j] = gz_new[j] + beta * (gz_new[j] - gz[j]);
        }
        x = x_new;
        z = z_new;
        gz = gz_new;
        fz = f_new;
        t = t_new;
        history.push(fz);
        if history.len() > 10 {
            let old = history[history.len() - 11];
            if old - fz <= cfg.stagnation * old.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    (x, it)
}

/// How the probe scale `η` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeScale {
    Fixed(f64),
    /// `η = factor · ‖w*‖`.
    RelativeToWeights(f64),
}

impl ProbeScale {
    /// Unit probes for the quadratic loss (Taylor is exact), `0.01 ‖w*‖` otherwise.
    pub fn default_for(kind: LossKind) -> Self {
        match kind {
            LossKind::Quadratic => ProbeScale::Fixed(1.0),
            LossKind::Logistic => ProbeScale::RelativeToWeights(0.01),
        }
    }

    pub fn resolve(self, w_star: &[f64]) -> Result<f64> {
        let eta = match self {
            ProbeScale::Fixed(eta) => eta,
            ProbeScale::RelativeToWeights(f) => f * linalg::norm2(w_star),
        };
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("probe scale resolved to {eta}")));
        }
        Ok(eta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub m: usize,
    pub scale: ProbeScale,
    pub seed: u64,
    pub block_mode: bool,
    pub surrogate: LossDifference,
    pub floor: EigenFloor,
    pub solver: SolverConfig,
}

/// Lower bound imposed on the spectrum of the estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EigenFloor {
    /// Plain PSD constraint.
    Zero,
    /// `λ(n − n_f)`: the retain loss is at least this strongly convex.
    StrongConvexity,
    Fixed(f64),
}

impl std::str::FromStr for EigenFloor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psd" | "zero" => Ok(EigenFloor::Zero),
            "strong_convexity" => Ok(EigenFloor::StrongConvexity),
            other => other
                .parse::<f64>()
                .map(EigenFloor::Fixed)
                .map_err(|_| Error::invalid(format!("unknown eigenvalue floor {other:?}"))),
        }
    }
}

impl EstimatorConfig {
    pub fn for_loss(kind: LossKind) -> Self {
        Self {
            m: 500,
            scale: ProbeScale::default_for(kind),
            seed: 0,
            block_mode: kind == LossKind::Quadratic,
            surrogate: LossDifference::ForgetPerSample,
            floor: EigenFloor::StrongConvexity,
            solver: SolverConfig::default(),
        }
    }

    pub fn layout(&self, classes: usize) -> ProbeLayout {
        if self.block_mode {
            ProbeLayout::ClassBlocks { classes }
        } else {
            ProbeLayout::Full
        }
    }
}

/// Estimates the retain Hessian at `w_star` from the forget loss alone.
///
/// `n_train` is the number of samples the model was trained on; it is only
/// used by [`LossDifference::ForgetPerSample`].
pub fn estimate_retain_hessian(
    w_star: &[f64],
    n_train: usize,
    forget: &SubsetLoss,
    cfg: &EstimatorConfig,
) -> Result<HessianEstimate> {
    if forget.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let classes = forget.data().k();
    let layout = cfg.layout(classes);
    let side = block_width(layout, forget.dim(), forget.loss().kind)?;
    let eta = cfg.scale.resolve(w_star)?;
    let probes = sample_probes(side, cfg.m, eta, cfg.seed)?;
    let diff_scale = match cfg.surrogate {
        LossDifference::Forget => 1.0,
        LossDifference::ForgetPerSample => {
            let n_f = forget.len();
            if n_train <= n_f {
                return Err(Error::invalid(format!("training size {n_train} must exceed forget size {n_f}")));
            }
            (n_train - n_f) as f64 / n_f as f64
        }
    };
    let floor = match cfg.floor {
        EigenFloor::Zero => 0.0,
        EigenFloor::StrongConvexity => forget.lambda() * n_train.saturating_sub(forget.len()) as f64,
        EigenFloor::Fixed(f) => f,
    };
    let set = PerturbationSet::record(w_star, forget, probes, layout, diff_scale)?;
    estimate_from_set(&set, layout, &SolverConfig { floor, ..cfg.solver })
}

/// Runs the constrained least-squares fit on an already recorded set.
pub fn estimate_from_set(set: &PerturbationSet, layout: ProbeLayout, solver: &SolverConfig) -> Result<HessianEstimate> {
    let (h, info) = solve_surrogate(set, solver)?;
    let objective = surrogate_objective(&h, set)?;
    Ok(HessianEstimate {
        h,
        objective,
        unconstrained_objective: info.unconstrained_objective,
        m: set.m(),
        scale: set.probes.scale,
        seed: set.probes.seed,
        layout,
        floor: solver.floor,
        rank_deficient: info.rank_deficient,
        refine_iterations: info.refine_iterations,
        bound: None,
    })
}

// --- bound machinery ------------------------------------------------------

/// `‖ΔH‖_F ≤ 2ε√d / (2 + d)`.
pub fn lemma1_bound(epsilon: f64, d: usize) -> f64 {
    let d = d as f64;
    2.0 * epsilon * d.sqrt() / (2.0 + d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuarticCheck {
    pub monte_carlo: f64,
    pub closed_form: f64,
    /// Standard error of the Monte-Carlo mean.
    pub std_error: f64,
}

/// Monte-Carlo estimate of `E[(½ δwᵀ M δw)²]` for `δw ~ N(0, I)` next to
/// the closed form `½ tr(M²) + ¼ tr(M)²`.
pub fn verify_quartic_identity(m: &SymMatrix, samples: usize, seed: u64) -> QuarticCheck {
    let d = m.dim();
    let closed_form = 0.5 * m.frobenius_dot(m).expect("same dim") + 0.25 * m.trace().powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dw = vec![0.0; d];
    // Welford running mean and variance
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=samples {
        for v in dw.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let q = 0.5 * m.quadratic_form(&dw).expect("same dim");
        let x = q * q;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = if samples > 1 { m2 / (samples - 1) as f64 } else { 0.0 };
    QuarticCheck { monte_carlo: mean, closed_form, std_error: (var / samples.max(1) as f64).sqrt() }
}

/// Minimizes `f(M) = ½ tr(M² + 2εM) + ¼ tr(M)²` by gradient descent from `M = 0`.
pub fn verify_optimal_m(epsilon: f64, d: usize) -> Result<SymMatrix> {
    if !(epsilon >= 0.0) || d == 0 {
        return Err(Error::invalid("need ε ≥ 0 and d ≥ 1"));
    }
    // ∇f = M + εI + ½ tr(M) I; its Lipschitz constant is 1 + d/2.
    let step = 0.5 / (1.0 + 0.5 * d as f64);
    let mut m = SymMatrix::zeros(d);
    let tol = 1e-13 * (1.0 + epsilon) * (d as f64).sqrt();
    for _ in 0..100_000 {
        let grad = m.add_diagonal(epsilon + 0.5 * m.trace());
        if grad.frobenius_norm() <= tol {
            return Ok(m);
        }
        m = m.sub(&grad.scale(step))?;
    }
    Err(Error::NotConverged { iterations: 100_000 })
}

/// Recovery error `‖Ĥ − H‖_F` when the loss differences of an exactly
/// quadratic system are corrupted by `ε · u_i` with fixed `u_i ∈ [−1, 1]`.
///
/// Probes and corruption directions are drawn once from `seed`, so the
/// returned errors differ only through `ε`.
pub fn corrupted_recovery_errors(h: &SymMatrix, m: usize, epsilons: &[f64], seed: u64) -> Result<Vec<f64>> {
    let probes = sample_probes(h.dim(), m, 1.0, seed)?;
    let exact: Vec<f64> = probes.probes.iter().map(|dw| h.quadratic_form(dw).map(|q| 0.5 * q)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let u: Vec<f64> = (0..m).map(|_| rand::Rng::random_range(&mut rng, -1.0..=1.0)).collect();
    epsilons
        .iter()
        .map(|&eps| {
            if !(eps >= 0.0) {
                return Err(Error::invalid(format!("corruption level must be nonnegative, got {eps}")));
            }
            let diffs = exact.iter().zip(&u).map(|(q, u)| q + eps * u).collect();
            let set = PerturbationSet::from_parts(probes.clone(), vec![0.0; m], diffs)?;
            let est = estimate_from_set(&set, ProbeLayout::Full, &SolverConfig::default())?;
            Ok(est.h.sub(h)?.frobenius_norm())
        })
        .collect()
}

//! The Newton removal update `w_uf = w* + (H_r + τI)⁻¹∇_f + noise` and the
//! train → Hessian → update → evaluate pipeline around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{FeatureDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_retain_hessian, EstimatorConfig, HessianEstimate, ProbeLayout};
use crate::evaluation::{evaluate, theorem1_check, EvalReport, MiaConfig, Theorem1Inputs, Theorem1Report};
use crate::linalg::{self, SpdFactor, SymMatrix};
use crate::losses::{ConvexLoss, LossKind, SubsetLoss};
use crate::trainer::{retrain_oracle, train, LinearModel, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianSource {
    /// The true retain Hessian, which needs the retain data (Unlearned(+)).
    Exact,
    /// The forget-only estimate (Unlearned(−)).
    Estimated,
}

impl HessianSource {
    pub fn name(self) -> &'static str {
        match self {
            HessianSource::Exact => "exact",
            HessianSource::Estimated => "estimated",
        }
    }

    /// Row label used in result tables.
    pub fn method(self) -> &'static str {
        match self {
            HessianSource::Exact => "Unlearned(+)",
            HessianSource::Estimated => "Unlearned(-)",
        }
    }
}

impl std::str::FromStr for HessianSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(HessianSource::Exact),
            "estimated" => Ok(HessianSource::Estimated),
            other => Err(Error::invalid(format!("unknown Hessian source {other:?}"))),
        }
    }
}

/// How the noise draw `ξ ~ N(0, I)` is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseForm {
    /// `σ² · ξ`.
    Variance,
    /// `σ · ξ`.
    StdDev,
}

impl std::str::FromStr for NoiseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" | "sigma2" => Ok(NoiseForm::Variance),
            "stddev" | "sigma" => Ok(NoiseForm::StdDev),
            other => Err(Error::invalid(format!("unknown noise form {other:?}"))),
        }
    }
}

/// Ridge `τ` added to the Hessian before inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RidgeFloor {
    Fixed(f64),
    /// `τ = factor · trace(H) / side`.
    TraceRelative(f64),
}

impl RidgeFloor {
    pub fn resolve(self, h: &SymMatrix) -> Result<f64> {
        let tau = match self {
            RidgeFloor::Fixed(t) => t,
            RidgeFloor::TraceRelative(f) => f * h.trace() / h.dim() as f64,
        };
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("ridge floor must be nonnegative, got {tau}")));
        }
        Ok(tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnlearnConfig {
    pub hessian_source: HessianSource,
    pub sigma: f64,
    pub noise_form: NoiseForm,
    pub noise_seed: u64,
    pub tau: RidgeFloor,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            hessian_source: HessianSource::Estimated,
            sigma: 0.0,
            noise_form: NoiseForm::Variance,
            noise_seed: 0,
            tau: RidgeFloor::Fixed(0.0),
        }
    }
}

impl UnlearnConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Coefficient multiplying `ξ`.
    pub fn noise_scale(&self) -> f64 {
        match self.noise_form {
            NoiseForm::Variance => self.sigma * self.sigma,
            NoiseForm::StdDev => self.sigma,
        }
    }
}

/// `(H + τI)⁻¹ ∇_f`.
pub fn newton_step(h_r: &SymMatrix, grad_f: &[f64], tau: RidgeFloor) -> Result<Vec<f64>> {
    if h_r.dim() != grad_f.len() {
        return Err(Error::DimensionMismatch { expected: h_r.dim(), found: grad_f.len() });
    }
    let shifted = h_r.add_diagonal(tau.resolve(h_r)?);
    linalg::solve_spd(&shifted, grad_f)
}

/// Newton step for a Hessian made of `k` identical `d × d` diagonal blocks.
pub fn newton_step_blocks(block: &SymMatrix, grad_f: &[f64], tau: RidgeFloor) -> Result<Vec<f64>> {
    let d = block.dim();
    if d == 0 || grad_f.len() % d != 0 {
        return Err(Error::DimensionMismatch { expected: d, found: grad_f.len() });
    }
    let factor = SpdFactor::new(&block.add_diagonal(tau.resolve(block)?))?;
    let mut step = Vec::with_capacity(grad_f.len());
    for g in grad_f.chunks(d) {
        step.extend(factor.solve(g)?);
    }
    Ok(step)
}

/// Applies the removal update with a full `p × p` retain Hessian.
pub fn unlearn(model: &LinearModel, h_r: &SymMatrix, grad_f: &[f64], cfg: &UnlearnConfig) -> Result<LinearModel> {
    cfg.validate()?;
    check_grad(model, grad_f)?;
    let step = newton_step(h_r, grad_f, cfg.tau)?;
    Ok(apply_step(model, &step, cfg))
}

/// Applies the removal update with a block-diagonal retain Hessian given by its shared block.
pub fn unlearn_blocks(model: &LinearModel, block: &SymMatrix, grad_f: &[f64], cfg: &UnlearnConfig) -> Result<LinearModel> {
    cfg.validate()?;
    check_grad(model, grad_f)?;
    if block.dim() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, found: block.dim() });
    }
    let step = newton_step_blocks(block, grad_f, cfg.tau)?;
    Ok(apply_step(model, &step, cfg))
}

fn check_grad(model: &LinearModel, grad_f: &[f64]) -> Result<()> {
    if grad_f.len() != model.p() {
        return Err(Error::DimensionMismatch { expected: model.p(), found: grad_f.len() });
    }
    Ok(())
}

fn apply_step(model: &LinearModel, step: &[f64], cfg: &UnlearnConfig) -> LinearModel {
    let mut w = linalg::add(&model.w, step);
    let scale = cfg.noise_scale();
    if scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        for v in &mut w {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *v += scale * xi;
        }
    }
    let mut out = model.with_parameters(w);
    out.info.oracle = false;
    out.info.hessian_source = Some(cfg.hessian_source);
    out
}

/// Everything the pipeline needs besides the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub loss: ConvexLoss,
    pub lambda: f64,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub estimator: EstimatorConfig,
    pub mia: MiaConfig,
}

impl PipelineConfig {
    pub fn for_loss(kind: LossKind, lambda: f64) -> Self {
        Self {
            loss: ConvexLoss::of_kind(kind),
            lambda,
            train: TrainConfig::for_loss(kind),
            unlearn: UnlearnConfig::default(),
            estimator: EstimatorConfig::for_loss(kind),
            mia: MiaConfig::default(),
        }
    }
}

/// Result of one removal with a chosen Hessian source.
#[derive(Clone, Debug)]
pub struct Removal {
    pub model: LinearModel,
    /// Noiseless Newton correction.
    pub step: Vec<f64>,
    pub estimate: Option<HessianEstimate>,
}

/// Computes the removal update of `trained` for the split's forget set.
pub fn remove(ds: &FeatureDataset, split: &SplitSpec, trained: &LinearModel, cfg: &PipelineConfig, source: HessianSource) -> Result<Removal> {
    let full = SubsetLoss::new(ds, split.train_idx.clone(), cfg.loss, cfg.lambda)?;
    let forget = full.with_indices(split.forget_idx.clone())?;
    let grad_f = forget.gradient(&trained.w)?;
    let ucfg = UnlearnConfig { hessian_source: source, ..cfg.unlearn };
    match source {
        HessianSource::Exact => {
            let retain = full.with_indices(split.retain_idx.clone())?;
            let (model, step) = if cfg.loss.kind == LossKind::Quadratic {
                let block = retain.hessian_block()?;
                let step = newton_step_blocks(&block, &grad_f, ucfg.tau)?;
                (unlearn_blocks(trained, &block, &grad_f, &ucfg)?, step)
            } else {
                let h = retain.hessian(&trained.w)?;
                let step = newton_step(&h, &grad_f, ucfg.tau)?;
                (unlearn(trained, &h, &grad_f, &ucfg)?, step)
            };
            Ok(Removal { model, step, estimate: None })
        }
        HessianSource::Estimated => {
            let est = estimate_retain_hessian(&trained.w, split.n_train(), &forget, &cfg.estimator)?;
            let (model, step) = match est.layout {
                ProbeLayout::ClassBlocks { .. } => {
                    let step = newton_step_blocks(&est.h, &grad_f, ucfg.tau)?;
                    (unlearn_blocks(trained, &est.h, &grad_f, &ucfg)?, step)
                }
                ProbeLayout::Full => {
                    let step = newton_step(&est.h, &grad_f, ucfg.tau)?;
                    (unlearn(trained, &est.h, &grad_f, &ucfg)?, step)
                }
            };
            Ok(Removal { model, step, estimate: Some(est) })
        }
    }
}

/// Gradient-residual bound check of an exact-Hessian removal (`ε = 0`).
///
/// `None` when the update carries noise or the bound's denominator is not positive.
pub fn removal_bound_check(ds: &FeatureDataset, split: &SplitSpec, cfg: &PipelineConfig, removal: &Removal) -> Result<Option<Theorem1Report>> {
    if cfg.unlearn.sigma != 0.0 {
        return Ok(None);
    }
    let retain = SubsetLoss::new(ds, split.retain_idx.clone(), cfg.loss, cfg.lambda)?;
    let inputs = Theorem1Inputs {
        gamma: cfg.loss.gamma,
        c: cfg.loss.grad_bound.unwrap_or(0.0),
        lambda: cfg.lambda,
        n: split.n_train(),
        n_f: split.n_forget(),
        epsilon: 0.0,
        d: ds.p(),
    };
    match theorem1_check(&removal.model.w, &removal.step, &retain, &inputs) {
        Ok(t) => Ok(Some(t)),
        Err(Error::DegenerateBound { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub trained: LinearModel,
    pub retrained: LinearModel,
    pub unlearned: LinearModel,
    pub estimate: Option<HessianEstimate>,
    pub report: EvalReport,
    /// Gradient-residual bound check; only for the exact Hessian, where `ε = 0`.
    pub theorem1: Option<Theorem1Report>,
}

/// Train → Hessian (exact or estimated) → update → evaluate against the retrain oracle.
pub fn unlearn_pipeline(ds: &FeatureDataset, split: &SplitSpec, setting: &str, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    split.check_bounds(ds.n())?;
    let full = SubsetLoss::new(ds, split.train_idx.clone(), cfg.loss, cfg.lambda)?;
    let trained = train(&full, cfg.train)?;
    let retrained = retrain_oracle(ds, split, cfg.loss, cfg.lambda, cfg.train)?;
    let source = cfg.unlearn.hessian_source;
    let removal = remove(ds, split, &trained, cfg, source)?;
    let mut report = evaluate(source.method(), setting, &removal.model, ds, split, Some(&retrained), cfg.mia)?;
    let theorem1 = if source == HessianSource::Exact { removal_bound_check(ds, split, cfg, &removal)? } else { None };
    report.theorem1_bound = theorem1.map(|t| t.bound_closed_form);
    Ok(PipelineOutput { trained, retrained, unlearned: removal.model, estimate: removal.estimate, report, theorem1 })
}

/// Retrained, Unlearned(+) and Unlearned(−) rows for one setting.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub retrained: EvalReport,
    pub exact: EvalReport,
    pub estimated: EvalReport,
    pub estimate: HessianEstimate,
}

impl Comparison {
    /// Accuracy gap between the retrained model and Unlearned(−).
    pub fn gap(&self) -> f64 {
        self.retrained.accuracy_gap(&self.estimated)
    }

    pub fn rows(&self) -> [EvalReport; 3] {
        [self.retrained.clone(), self.exact.clone(), self.estimated.clone()]
    }
}

/// Trains once and evaluates both Hessian sources next to the retrain oracle.
pub fn compare_methods(ds: &FeatureDataset, split: &SplitSpec, setting: &str, cfg: &PipelineConfig) -> Result<Comparison> {
    split.check_bounds(ds.n())?;
    let full = SubsetLoss::new(ds, split.train_idx.clone(), cfg.loss, cfg.lambda)?;
    let trained = train(&full, cfg.train)?;
    let retrained = retrain_oracle(ds, split, cfg.loss, cfg.lambda, cfg.train)?;
    let exact = remove(ds, split, &trained, cfg, HessianSource::Exact)?;
    let estimated = remove(ds, split, &trained, cfg, HessianSource::Estimated)?;
    Ok(Comparison {
        retrained: evaluate("Retrained", setting, &retrained, ds, split, Some(&retrained), cfg.mia)?,
        exact: evaluate(HessianSource::Exact.method(), setting, &exact.model, ds, split, Some(&retrained), cfg.mia)?,
        estimated: evaluate(HessianSource::Estimated.method(), setting, &estimated.model, ds, split, Some(&retrained), cfg.mia)?,
        estimate: estimated.estimate.expect("estimated removal carries its estimate"),
    })
}

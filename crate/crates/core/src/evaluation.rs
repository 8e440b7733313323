//! Accuracies, membership-inference score, distance to the retrain oracle and
//! the gradient-residual bound check.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, norm2};
use crate::losses::{outputs, SubsetLoss};
use crate::trainer::LinearModel;

/// Percentage of samples in `idx` whose arg-max prediction matches the label.
pub fn accuracy(model: &LinearModel, ds: &FeatureDataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let correct = idx.iter().filter(|&&i| model.predict(ds, i) == ds.label(i)).count();
    Ok(100.0 * correct as f64 / idx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiaConfig {
    pub seed: u64,
    pub folds: usize,
    /// Report `max(score, 100 − score)` instead of the raw attack accuracy.
    pub one_sided: bool,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { seed: 0, folds: 5, one_sided: false }
    }
}

/// Loss-threshold membership attack.
///
/// Forget samples are members, an equal-size random draw of test samples are
/// non-members. A threshold and direction on the per-sample loss are fitted on
/// the training folds; the score is held-out attack accuracy over all folds.
pub fn mia_score(model: &LinearModel, ds: &FeatureDataset, forget_idx: &[usize], test_idx: &[usize], cfg: MiaConfig) -> Result<f64> {
    if forget_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = forget_idx.len().min(test_idx.len());
    let members: Vec<usize> = pick(forget_idx, size, &mut rng);
    let non_members: Vec<usize> = pick(test_idx, size, &mut rng);
    let loss_of = |i: usize| model.loss.value(&outputs(ds, &model.w, i), ds.label(i));
    let mut samples: Vec<(f64, bool)> = members
        .iter()
        .map(|&i| (loss_of(i), true))
        .chain(non_members.iter().map(|&i| (loss_of(i), false)))
        .collect();
    samples.shuffle(&mut rng);
    let folds = cfg.folds.clamp(2, samples.len());
    let mut correct = 0usize;
    for f in 0..folds {
        let train: Vec<(f64, bool)> = samples.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, s)| *s).collect();
        let rule = fit_threshold(&train);
        correct += samples.iter().enumerate().filter(|(i, _)| i % folds == f).filter(|(_, s)| rule.predict(s.0) == s.1).count();
    }
    let score = 100.0 * correct as f64 / samples.len() as f64;
    Ok(if cfg.one_sided { score.max(100.0 - score) } else { score })
}

fn pick(idx: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if size == idx.len() {
        return idx.to_vec();
    }
    index::sample(rng, idx.len(), size).into_iter().map(|j| idx[j]).collect()
}

#[derive(Clone, Copy, Debug)]
struct ThresholdRule {
    threshold: f64,
    /// Members are predicted below the threshold when set, above it otherwise.
    members_below: bool,
}

impl ThresholdRule {
    fn predict(&self, loss: f64) -> bool {
        (loss <= self.threshold) == self.members_below
    }
}

/// Exhaustive search over midpoints between sorted losses and both directions.
fn fit_threshold(samples: &[(f64, bool)]) -> ThresholdRule {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let total_members = sorted.iter().filter(|s| s.1).count();
    // threshold below everything: all predicted "above"
    let mut members_below_count = 0usize;
    let mut best = ThresholdRule { threshold: f64::NEG_INFINITY, members_below: false };
    let mut best_correct = total_members;
    let mut j = 0;
    while j < n {
        let mut k = j;
        while k < n && sorted[k].0 == sorted[j].0 {
            if sorted[k].1 {
                members_below_count += 1;
            }
            k += 1;
        }
        let below = k;
        let non_members_below = below - members_below_count;
        let non_members_above = (n - total_members) - non_members_below;
        let threshold = if k < n { 0.5 * (sorted[j].0 + sorted[k].0) } else { f64::INFINITY };
        let correct_below = members_below_count + non_members_above;
        let correct_above = n - correct_below;
        if correct_below > best_correct {
            best_correct = correct_below;
            best = ThresholdRule { threshold, members_below: true };
        }
        if correct_above > best_correct {
            best_correct = correct_above;
            best = ThresholdRule { threshold, members_below: false };
        }
        j = k;
    }
    best
}

/// Inputs of the gradient-residual bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Inputs {
    /// Lipschitz constant of the per-sample loss Hessian.
    pub gamma: f64,
    /// Bound on the per-sample loss gradient norm.
    pub c: f64,
    pub lambda: f64,
    pub n: usize,
    pub n_f: usize,
    /// Uniform bound on the loss-difference surrogate error (0 for the exact Hessian).
    pub epsilon: f64,
    /// Side length of the estimated Hessian.
    pub d: usize,
}

impl Theorem1Inputs {
    /// `λ(n − n_f) − 2ε/(2 + d)`.
    pub fn denominator(&self) -> f64 {
        self.lambda * (self.n - self.n_f) as f64 - 2.0 * self.epsilon / (2.0 + self.d as f64)
    }

    /// `4γC²n_f²(n − n_f) / [λ(n − n_f) − 2ε/(2 + d)]²`.
    pub fn closed_form(&self) -> Result<f64> {
        let den = self.denominator();
        if !(den > 0.0) {
            return Err(Error::DegenerateBound { denominator: den });
        }
        let nf = self.n_f as f64;
        Ok(4.0 * self.gamma * self.c * self.c * nf * nf * (self.n - self.n_f) as f64 / (den * den))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Report {
    /// `‖∇L(w_uf, D_r)‖₂`.
    pub residual: f64,
    /// `γ(n − n_f)‖Ĥ⁻¹∇_f‖²`.
    pub bound_exact_form: f64,
    pub bound_closed_form: f64,
    pub holds: bool,
}

/// Evaluates the retain gradient at the unlearned point against both bound forms.
///
/// `step` is the noiseless Newton correction `Ĥ⁻¹∇_f`. A round-off allowance
/// of `1e-9 · (1 + λ(n − n_f)‖step‖)` is granted so that exact cases (γ = 0)
/// are judged on the bound rather than on floating-point noise.
pub fn theorem1_check(w_uf: &[f64], step: &[f64], retain: &SubsetLoss, inputs: &Theorem1Inputs) -> Result<Theorem1Report> {
    if inputs.n_f == 0 || inputs.n <= inputs.n_f {
        return Err(Error::invalid("need 0 < n_f < n"));
    }
    let bound_closed_form = inputs.closed_form()?;
    let residual = norm2(&retain.gradient(w_uf)?);
    let step_norm = norm2(step);
    let bound_exact_form = inputs.gamma * (inputs.n - inputs.n_f) as f64 * step_norm * step_norm;
    let slack = 1e-9 * (1.0 + inputs.lambda * (inputs.n - inputs.n_f) as f64 * step_norm);
    let holds = residual <= bound_exact_form + slack && residual <= bound_closed_form + slack;
    Ok(Theorem1Report { residual, bound_exact_form, bound_closed_form, holds })
}

/// One row of a result table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub setting: String,
    pub test_acc: f64,
    pub remain_acc: f64,
    pub forget_acc: f64,
    pub mia: f64,
    /// `‖w − w_retrained‖₂` when the oracle is available.
    pub param_dist: Option<f64>,
    /// `‖∇L(w, D_r)‖₂`.
    pub grad_residual: f64,
    pub theorem1_bound: Option<f64>,
}

impl EvalReport {
    /// Mean absolute accuracy difference over the test, remaining and forget columns.
    pub fn accuracy_gap(&self, other: &EvalReport) -> f64 {
        ((self.test_acc - other.test_acc).abs()
            + (self.remain_acc - other.remain_acc).abs()
            + (self.forget_acc - other.forget_acc).abs())
            / 3.0
    }

    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method={}", self.method);
        let _ = writeln!(s, "setting={}", self.setting);
        let _ = writeln!(s, "test_acc={:.4}", self.test_acc);
        let _ = writeln!(s, "remain_acc={:.4}", self.remain_acc);
        let _ = writeln!(s, "forget_acc={:.4}", self.forget_acc);
        let _ = writeln!(s, "mia={:.4}", self.mia);
        if let Some(p) = self.param_dist {
            let _ = writeln!(s, "param_dist={p:e}");
        }
        let _ = writeln!(s, "grad_residual={:e}", self.grad_residual);
        if let Some(b) = self.theorem1_bound {
            let _ = writeln!(s, "theorem1_bound={b:e}");
        }
        s
    }
}

/// Evaluates `model` on every split of `ds`.
pub fn evaluate(
    method: &str,
    setting: &str,
    model: &LinearModel,
    ds: &FeatureDataset,
    split: &SplitSpec,
    retrained: Option<&LinearModel>,
    mia: MiaConfig,
) -> Result<EvalReport> {
    let retain = SubsetLoss::new(ds, split.retain_idx.clone(), model.loss, model.lambda)?;
    Ok(EvalReport {
        method: method.to_string(),
        setting: setting.to_string(),
        test_acc: accuracy(model, ds, &split.test_idx)?,
        remain_acc: accuracy(model, ds, &split.retain_idx)?,
        forget_acc: accuracy(model, ds, &split.forget_idx)?,
        mia: mia_score(model, ds, &split.forget_idx, &split.test_idx, mia)?,
        param_dist: retrained.map(|r| norm2(&linalg::sub(&model.w, &r.w))),
        grad_residual: norm2(&retain.gradient(&model.w)?),
        theorem1_bound: None,
    })
}

pub const TABLE_HEADER: &str = "method,setting,test,remaining,forget,mia,param_dist,grad_residual";

/// CSV with a fixed column order; missing distances are left empty.
pub fn emit_table(reports: &[EvalReport]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in reports {
        let dist = r.param_dist.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4},{:.4},{},{:e}",
            csv_field(&r.method),
            csv_field(&r.setting),
            r.test_acc,
            r.remain_acc,
            r.forget_acc,
            r.mia,
            dist,
            r.grad_residual
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

//! Source-free comparison methods: gradient ascent on the forget loss and
//! fine-tuning on randomly relabeled forget samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::SubsetLoss;
use crate::trainer::LinearModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    NegGrad,
    RandomLabels,
}

impl BaselineKind {
    pub fn method(self) -> &'static str {
        match self {
            BaselineKind::NegGrad => "NegGrad",
            BaselineKind::RandomLabels => "Random Labels",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neggrad" => Ok(BaselineKind::NegGrad),
            "random_labels" => Ok(BaselineKind::RandomLabels),
            other => Err(Error::invalid(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind, steps: 50, step_size: 1e-3, seed: 0 }
    }
}

/// Loss growth factor treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Runs the configured baseline on `forget`, the forget-set loss of `model`.
pub fn run_baseline(model: &LinearModel, forget: &SubsetLoss, cfg: &BaselineConfig) -> Result<LinearModel> {
    if forget.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    if cfg.steps == 0 {
        return Err(Error::invalid("baseline needs at least one step"));
    }
    if !(cfg.step_size >= 0.0) || !cfg.step_size.is_finite() {
        return Err(Error::invalid(format!("step size must be nonnegative, got {}", cfg.step_size)));
    }
    if forget.dim() != model.p() {
        return Err(Error::DimensionMismatch { expected: model.p(), found: forget.dim() });
    }
    let w = match cfg.kind {
        BaselineKind::NegGrad => descend(forget, model.w.clone(), cfg, 1.0)?,
        BaselineKind::RandomLabels => {
            let data = forget.data();
            let labels = random_wrong_labels(data.labels(), forget.indices(), data.k(), cfg.seed)?;
            let relabeled = data.relabeled(labels)?;
            descend(&forget.with_data(&relabeled)?, model.w.clone(), cfg, -1.0)?
        }
    };
    let mut out = model.with_parameters(w);
    out.info.oracle = false;
    out.info.hessian_source = None;
    Ok(out)
}

/// Labels with every index in `idx` moved to a uniformly drawn different class.
pub fn random_wrong_labels(labels: &[u32], idx: &[usize], k: usize, seed: u64) -> Result<Vec<u32>> {
    if k < 2 {
        return Err(Error::invalid("random relabeling needs at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.to_vec();
    for &i in idx {
        let y = labels[i];
        let draw = rng.random_range(0..k as u32 - 1);
        out[i] = if draw >= y { draw + 1 } else { draw };
    }
    Ok(out)
}

/// `w ← w + sign · step · ∇L(w)`, checking for divergence after every step.
fn descend(loss: &SubsetLoss, mut w: Vec<f64>, cfg: &BaselineConfig, sign: f64) -> Result<Vec<f64>> {
    let initial = loss.value(&w)?;
    let limit = DIVERGENCE_FACTOR * initial.abs().max(f64::MIN_POSITIVE);
    for _ in 0..cfg.steps {
        let g = loss.gradient(&w)?;
        linalg::axpy(sign * cfg.step_size, &g, &mut w);
        let v = loss.value(&w)?;
        if !v.is_finite() || v > limit {
            return Err(Error::DivergenceDetected { loss: v, limit });
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureDataset;
    use crate::losses::{ConvexLoss, LossKind};
    use crate::trainer::{train, TrainConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn setup(seed: u64) -> (FeatureDataset, LinearModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let features = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
        let ds = FeatureDataset::new(3, 3, features, labels).unwrap().normalize();
        let full = SubsetLoss::new(&ds, (0..n).collect(), ConvexLoss::logistic(), 0.05).unwrap();
        let model = train(&full, TrainConfig::for_loss(LossKind::Logistic)).unwrap();
        (ds, model)
    }

    #[test]
    fn zero_step_size_leaves_model_unchanged() {
        let (ds, model) = setup(1);
        let forget = SubsetLoss::new(&ds, vec![0, 1, 2], model.loss, model.lambda).unwrap();
        for kind in [BaselineKind::NegGrad, BaselineKind::RandomLabels] {
            let cfg = BaselineConfig { steps: 1, step_size: 0.0, ..BaselineConfig::new(kind) };
            assert_eq!(run_baseline(&model, &forget, &cfg).unwrap().w, model.w);
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let (ds, model) = setup(2);
        let forget = SubsetLoss::new(&ds, vec![0], model.loss, model.lambda).unwrap();
        let cfg = BaselineConfig { steps: 0, ..BaselineConfig::new(BaselineKind::NegGrad) };
        assert!(run_baseline(&model, &forget, &cfg).is_err());
        let empty = forget.with_indices(vec![]).unwrap();
        assert!(matches!(run_baseline(&model, &empty, &BaselineConfig::new(BaselineKind::NegGrad)), Err(Error::EmptyIndexSet)));
    }

    #[test]
    fn neggrad_increases_forget_loss() {
        let (ds, model) = setup(3);
        let forget = SubsetLoss::new(&ds, (0..10).collect(), model.loss, model.lambda).unwrap();
        let cfg = BaselineConfig { steps: 1, ..BaselineConfig::new(BaselineKind::NegGrad) };
        let out = run_baseline(&model, &forget, &cfg).unwrap();
        assert!(forget.value(&out.w).unwrap() > forget.value(&model.w).unwrap());
    }

    #[test]
    fn random_labels_descends_relabeled_loss() {
        let (ds, model) = setup(4);
        let idx: Vec<usize> = (0..10).collect();
        let forget = SubsetLoss::new(&ds, idx.clone(), model.loss, model.lambda).unwrap();
        let cfg = BaselineConfig::new(BaselineKind::RandomLabels);
        let labels = random_wrong_labels(ds.labels(), &idx, 3, cfg.seed).unwrap();
        let relabeled = ds.relabeled(labels).unwrap();
        let target = forget.with_data(&relabeled).unwrap();
        let out = run_baseline(&model, &forget, &cfg).unwrap();
        assert!(target.value(&out.w).unwrap() < target.value(&model.w).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = FeatureDataset::new(1, 1, vec![1.0], vec![0]).unwrap();
        let forget = SubsetLoss::new(&ds, vec![0], ConvexLoss::quadratic(), 0.0).unwrap();
        let model = LinearModel::from_parameters(vec![0.5], ConvexLoss::quadratic(), 0.0, 1, 1, 1).unwrap();
        let cfg = BaselineConfig { steps: 200, step_size: 1.0, ..BaselineConfig::new(BaselineKind::NegGrad) };
        assert!(matches!(run_baseline(&model, &forget, &cfg), Err(Error::DivergenceDetected { .. })));
    }

    #[test]
    fn single_class_cannot_be_relabeled() {
        assert!(random_wrong_labels(&[0, 0], &[0], 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn relabeling_never_keeps_the_label(seed in 0u64..u64::MAX, k in 2usize..12, labels in proptest::collection::vec(0u32..12, 1..50)) {
            let labels: Vec<u32> = labels.into_iter().map(|y| y % k as u32).collect();
            let idx: Vec<usize> = (0..labels.len()).collect();
            let out = random_wrong_labels(&labels, &idx, k, seed).unwrap();
            for (a, b) in labels.iter().zip(&out) {
                prop_assert_ne!(a, b);
                prop_assert!((*b as usize) < k);
            }
        }
    }
}

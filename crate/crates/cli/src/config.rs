//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the config file. Every key is
//! listed in the README; [`RunConfig::to_text`] writes all of them with their
//! resolved values, so a run manifest is itself a valid config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use sfmu::estimator::{EigenFloor, EstimatorConfig, LossDifference, ProbeScale};
use sfmu::evaluation::MiaConfig;
use sfmu::losses::LossKind;
use sfmu::synthetic::MixtureSpec;
use sfmu::trainer::TrainConfig;
use sfmu::unlearner::{HessianSource, NoiseForm, RidgeFloor, UnlearnConfig};

use crate::error::{ConfigError, DataError};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Features { path: PathBuf, residuals: Option<PathBuf>, normalize: bool },
    Synthetic(MixtureSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    /// Directory with `train.idx`, `test.idx` and `forget.idx`.
    pub dir: Option<PathBuf>,
    pub test_fraction: f64,
    pub forget_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    ForgetFraction,
    M,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ForgetFraction => "forget_fraction",
            SweepAxis::M => "m",
            SweepAxis::Lambda => "lambda",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "forget_fraction" => Ok(SweepAxis::ForgetFraction),
            "m" => Ok(SweepAxis::M),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(ConfigError(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<String>,
    /// Replicates per value; replicate `r` adds `r` to every seed.
    pub seeds: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyConfig {
    pub samples: usize,
    pub matrices: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: SplitConfig,
    pub loss: LossKind,
    pub lambda: f64,
    pub train: TrainConfig,
    pub estimator: EstimatorConfig,
    pub unlearn: UnlearnConfig,
    pub mia: MiaConfig,
    /// Trained model to start from; defaults to `<out>/model.bin`.
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
}

struct Entries {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Entries {
    fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError(format!("line {}: empty key or value", no + 1)));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError(format!("line {}: duplicate key {key}", no + 1)));
            }
        }
        Ok(Self { map, base: base.to_path_buf() })
    }

    fn take_raw(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.take_raw(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError(format!("{key} = {v}: {e}"))))
            .transpose()
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take_raw(key).map(|v| self.base.join(v))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.keys().next() {
            Some(k) => Err(ConfigError(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    path.canonicalize().map_err(|e| anyhow::Error::new(e).context(DataError(path)))
}

fn absolute(path: PathBuf) -> PathBuf {
    std::path::absolute(&path).unwrap_or(path)
}

fn exclusive<T>(a: Option<T>, b: Option<T>, keys: (&str, &str)) -> Result<Option<(bool, T)>, ConfigError> {
    match (a, b) {
        (Some(_), Some(_)) => Err(ConfigError(format!("{} and {} are mutually exclusive", keys.0, keys.1))),
        (Some(v), None) => Ok(Some((true, v))),
        (None, Some(v)) => Ok(Some((false, v))),
        (None, None) => Ok(None),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(DataError(path.to_path_buf())))?;
        let base = absolute(path.parent().map(Path::to_path_buf).unwrap_or_default());
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut e = Entries::parse(text, base)?;

        let synthetic_keys = ["synthetic.n", "synthetic.d", "synthetic.k"];
        let data = match e.take_path("features") {
            Some(path) => {
                let residuals = e.take_path("residuals").map(existing).transpose()?;
                let normalize = e.take_or("normalize", residuals.is_none())?;
                DataSource::Features { path: existing(path)?, residuals, normalize }
            }
            None => {
                let mut dims = [0usize; 3];
                for (slot, key) in dims.iter_mut().zip(synthetic_keys) {
                    *slot = e
                        .take(key)?
                        .ok_or_else(|| ConfigError(format!("config sets neither features nor {key}")))?;
                }
                let base = MixtureSpec::new(dims[0], dims[1], dims[2], 0);
                DataSource::Synthetic(MixtureSpec {
                    separation: e.take_or("synthetic.separation", base.separation)?,
                    decay: e.take_or("synthetic.decay", base.decay)?,
                    label_noise: e.take_or("synthetic.label_noise", base.label_noise)?,
                    seed: e.take_or("synthetic.seed", 0)?,
                    ..base
                })
            }
        };
        if matches!(data, DataSource::Features { .. }) {
            for key in synthetic_keys.iter().chain(&["synthetic.separation", "synthetic.decay", "synthetic.label_noise", "synthetic.seed"]) {
                if e.take_raw(key).is_some() {
                    return Err(ConfigError(format!("{key} conflicts with features")).into());
                }
            }
        }

        let split = SplitConfig {
            dir: e.take_path("split_dir").map(existing).transpose()?,
            test_fraction: e.take_or("test_fraction", 0.2)?,
            forget_fraction: e.take_or("forget_fraction", 0.1)?,
            seed: e.take_or("split_seed", 0)?,
        };

        let loss: LossKind = e.take_or("loss", LossKind::Quadratic)?;
        if matches!(data, DataSource::Features { residuals: Some(_), .. }) && loss != LossKind::Quadratic {
            return Err(ConfigError("residual targets need loss = quadratic".into()).into());
        }
        let lambda: f64 = e.take_or("lambda", 1e-3)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(ConfigError(format!("lambda must be nonnegative, got {lambda}")).into());
        }

        let train_default = TrainConfig::for_loss(loss);
        let train = TrainConfig {
            tol: e.take_or("train.tol", train_default.tol)?,
            max_iter: e.take_or("train.max_iter", train_default.max_iter)?,
        };

        let est_default = EstimatorConfig::for_loss(loss);
        let scale = match exclusive(e.take("estimator.eta")?, e.take("estimator.eta_relative")?, ("estimator.eta", "estimator.eta_relative"))? {
            Some((true, eta)) => ProbeScale::Fixed(eta),
            Some((false, f)) => ProbeScale::RelativeToWeights(f),
            None => est_default.scale,
        };
        let mut solver = est_default.solver;
        solver.refine = e.take_or("estimator.refine", solver.refine)?;
        solver.max_refine_iter = e.take_or("estimator.max_refine_iter", solver.max_refine_iter)?;
        let estimator = EstimatorConfig {
            m: e.take_or("estimator.m", est_default.m)?,
            scale,
            seed: e.take_or("estimator.seed", est_default.seed)?,
            block_mode: e.take_or("estimator.block_mode", est_default.block_mode)?,
            surrogate: e.take_or::<LossDifference>("estimator.surrogate", est_default.surrogate)?,
            floor: e.take_or::<EigenFloor>("estimator.floor", est_default.floor)?,
            solver,
        };

        let un_default = UnlearnConfig::default();
        let tau = match exclusive(e.take("unlearn.tau")?, e.take("unlearn.tau_relative")?, ("unlearn.tau", "unlearn.tau_relative"))? {
            Some((true, t)) => RidgeFloor::Fixed(t),
            Some((false, f)) => RidgeFloor::TraceRelative(f),
            None => un_default.tau,
        };
        let unlearn = UnlearnConfig {
            hessian_source: e.take_or::<HessianSource>("unlearn.hessian_source", un_default.hessian_source)?,
            sigma: e.take_or("unlearn.sigma", un_default.sigma)?,
            noise_form: e.take_or::<NoiseForm>("unlearn.noise_form", un_default.noise_form)?,
            noise_seed: e.take_or("unlearn.noise_seed", un_default.noise_seed)?,
            tau,
        };

        let mia_default = MiaConfig::default();
        let mia = MiaConfig {
            seed: e.take_or("mia.seed", mia_default.seed)?,
            folds: e.take_or("mia.folds", mia_default.folds)?,
            one_sided: e.take_or("mia.one_sided", mia_default.one_sided)?,
        };

        let model = e.take_path("model").map(existing).transpose()?;
        let out = absolute(e.take_path("out").unwrap_or_else(|| base.join("out")));

        let sweep = SweepConfig {
            axis: e.take("sweep.axis")?,
            values: e
                .take_raw("sweep.values")
                .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default(),
            seeds: e.take_or("sweep.seeds", 1)?,
        };
        if sweep.seeds == 0 {
            return Err(ConfigError("sweep.seeds must be positive".into()).into());
        }

        let verify = VerifyConfig {
            samples: e.take_or("verify.samples", 1_000_000)?,
            matrices: e.take_or("verify.matrices", 20)?,
            seed: e.take_or("verify.seed", 0)?,
        };

        e.finish()?;
        Ok(Self { data, split, loss, lambda, train, estimator, unlearn, mia, model, out, sweep, verify })
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::Features { path, residuals, normalize } => {
                kv("features", &path.display());
                if let Some(r) = residuals {
                    kv("residuals", &r.display());
                }
                kv("normalize", normalize);
            }
            DataSource::Synthetic(spec) => {
                kv("synthetic.n", &spec.n);
                kv("synthetic.d", &spec.d);
                kv("synthetic.k", &spec.k);
                kv("synthetic.separation", &spec.separation);
                kv("synthetic.decay", &spec.decay);
                kv("synthetic.label_noise", &spec.label_noise);
                kv("synthetic.seed", &spec.seed);
            }
        }
        if let Some(dir) = &self.split.dir {
            kv("split_dir", &dir.display());
        }
        kv("test_fraction", &self.split.test_fraction);
        kv("forget_fraction", &self.split.forget_fraction);
        kv("split_seed", &self.split.seed);
        kv("loss", &self.loss.name());
        kv("lambda", &self.lambda);
        kv("train.tol", &self.train.tol);
        kv("train.max_iter", &self.train.max_iter);
        kv("estimator.m", &self.estimator.m);
        match self.estimator.scale {
            ProbeScale::Fixed(eta) => kv("estimator.eta", &eta),
            ProbeScale::RelativeToWeights(f) => kv("estimator.eta_relative", &f),
        }
        kv("estimator.seed", &self.estimator.seed);
        kv("estimator.block_mode", &self.estimator.block_mode);
        kv("estimator.surrogate", &self.estimator.surrogate.name());
        let floor = match self.estimator.floor {
            EigenFloor::Zero => "psd".to_string(),
            EigenFloor::StrongConvexity => "strong_convexity".to_string(),
            EigenFloor::Fixed(f) => f.to_string(),
        };
        kv("estimator.floor", &floor);
        kv("estimator.refine", &self.estimator.solver.refine);
        kv("estimator.max_refine_iter", &self.estimator.solver.max_refine_iter);
        kv("unlearn.hessian_source", &self.unlearn.hessian_source.name());
        kv("unlearn.sigma", &self.unlearn.sigma);
        let noise = match self.unlearn.noise_form {
            NoiseForm::Variance => "variance",
            NoiseForm::StdDev => "stddev",
        };
        kv("unlearn.noise_form", &noise);
        kv("unlearn.noise_seed", &self.unlearn.noise_seed);
        match self.unlearn.tau {
            RidgeFloor::Fixed(t) => kv("unlearn.tau", &t),
            RidgeFloor::TraceRelative(f) => kv("unlearn.tau_relative", &f),
        }
        kv("mia.seed", &self.mia.seed);
        kv("mia.folds", &self.mia.folds);
        kv("mia.one_sided", &self.mia.one_sided);
        if let Some(m) = &self.model {
            kv("model", &m.display());
        }
        kv("out", &self.out.display());
        if let Some(axis) = self.sweep.axis {
            kv("sweep.axis", &axis.name());
        }
        if !self.sweep.values.is_empty() {
            kv("sweep.values", &self.sweep.values.join(","));
        }
        kv("sweep.seeds", &self.sweep.seeds);
        kv("verify.samples", &self.verify.samples);
        kv("verify.matrices", &self.verify.matrices);
        kv("verify.seed", &self.verify.seed);
        s
    }

    /// Path of the trained model used by `estimate` and `unlearn`.
    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.bin"))
    }

    pub fn with_out(mut self, out: Option<PathBuf>) -> Self {
        if let Some(o) = out {
            self.out = absolute(o);
        }
        self
    }
}

/// Creates `dir` if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| DataError(dir.to_path_buf()))
}

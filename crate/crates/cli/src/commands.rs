use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sfmu::data::{
    load_features_with, load_model, load_residuals, make_split, save_hessian, save_model, train_test_split, FeatureDataset,
    SplitSpec,
};
use sfmu::estimator::{corrupted_recovery_errors, verify_optimal_m, verify_quartic_identity, ProbeLayout};
use sfmu::evaluation::{accuracy, emit_table, evaluate, TABLE_HEADER};
use sfmu::linalg::{self, SymMatrix};
use sfmu::losses::{ConvexLoss, LossKind, SubsetLoss};
use sfmu::mixed_linear::{linearized_config, load_linearized, LinearizedProblem};
use sfmu::synthetic::{gaussian_mixture, MixtureSpec};
use sfmu::trainer::{retrain_oracle, train, LinearModel};
use sfmu::unlearner::{compare_methods, remove, removal_bound_check, Comparison, HessianSource, PipelineConfig};

use crate::config::{ensure_dir, DataSource, RunConfig, SweepAxis};
use crate::error::{CheckFailed, ConfigError, DataError};

/// Mixes the split seed before drawing the forget set, so it is not the
/// train/test stream of a neighbouring replicate.
const FORGET_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

struct Loaded {
    ds: FeatureDataset,
    problem: Option<LinearizedProblem>,
}

fn load_data(cfg: &RunConfig, replicate: u64) -> Result<Loaded> {
    match &cfg.data {
        DataSource::Features { path, residuals: Some(res), .. } => {
            load_residuals(res).with_context(|| DataError(res.clone()))?;
            let problem = load_linearized(path, res, cfg.lambda).with_context(|| DataError(path.clone()))?;
            Ok(Loaded { ds: problem.data.clone(), problem: Some(problem) })
        }
        DataSource::Features { path, residuals: None, normalize } => {
            let ds = load_features_with(path, *normalize).with_context(|| DataError(path.clone()))?;
            Ok(Loaded { ds, problem: None })
        }
        DataSource::Synthetic(spec) => {
            let spec = MixtureSpec { seed: spec.seed.wrapping_add(replicate), ..*spec };
            Ok(Loaded { ds: gaussian_mixture(&spec)?, problem: None })
        }
    }
}

fn split_for(cfg: &RunConfig, n: usize, replicate: u64, forget_fraction: Option<f64>) -> Result<SplitSpec> {
    let seed = cfg.split.seed.wrapping_add(replicate);
    let split = match &cfg.split.dir {
        Some(dir) => {
            let split = SplitSpec::load_dir(dir).with_context(|| DataError(dir.clone()))?;
            match forget_fraction {
                Some(f) => make_split(split.train_idx, split.test_idx, f, seed ^ FORGET_SEED_MIX)?,
                None => split,
            }
        }
        None => {
            let (train_idx, test_idx) = train_test_split(n, cfg.split.test_fraction, seed)?;
            let f = forget_fraction.unwrap_or(cfg.split.forget_fraction);
            make_split(train_idx, test_idx, f, seed ^ FORGET_SEED_MIX)?
        }
    };
    split.check_bounds(n).context("split indices do not fit the dataset")?;
    Ok(split)
}

fn pipeline_config(cfg: &RunConfig, loaded: &Loaded, lambda: f64, replicate: u64) -> PipelineConfig {
    let mut p = PipelineConfig::for_loss(cfg.loss, lambda);
    p.estimator = cfg.estimator;
    p.unlearn = cfg.unlearn;
    p.mia = cfg.mia;
    if let Some(problem) = &loaded.problem {
        p = linearized_config(&LinearizedProblem { lambda, ..problem.clone() }, &p);
    }
    p.train = cfg.train;
    p.estimator.seed = p.estimator.seed.wrapping_add(replicate);
    p.unlearn.noise_seed = p.unlearn.noise_seed.wrapping_add(replicate);
    p.mia.seed = p.mia.seed.wrapping_add(replicate);
    p
}

fn setting_label(split: &SplitSpec) -> String {
    format!("forget={:.0}%", 100.0 * split.n_forget() as f64 / split.n_train() as f64)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| DataError(path.to_path_buf()))
}

fn save_weights(path: &Path, w: &[f64]) -> Result<()> {
    save_model(path, w).with_context(|| DataError(path.to_path_buf()))
}

fn save_matrix(path: &Path, h: &SymMatrix) -> Result<()> {
    save_hessian(path, h).with_context(|| DataError(path.to_path_buf()))
}

fn write_manifest(cfg: &RunConfig, command: &str) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# command = {command}");
    let _ = writeln!(s, "# sfmu = {}", env!("CARGO_PKG_VERSION"));
    s.push_str(&cfg.to_text());
    write(&cfg.out.join(format!("{command}.manifest")), s)
}

/// Shared setup of the single-run commands.
struct Run {
    loaded: Loaded,
    split: SplitSpec,
    pcfg: PipelineConfig,
}

impl Run {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let loaded = load_data(cfg, 0)?;
        let split = split_for(cfg, loaded.ds.n(), 0, None)?;
        let pcfg = pipeline_config(cfg, &loaded, cfg.lambda, 0);
        ensure_dir(&cfg.out)?;
        Ok(Self { loaded, split, pcfg })
    }

    fn ds(&self) -> &FeatureDataset {
        &self.loaded.ds
    }

    fn train(&self) -> Result<LinearModel> {
        let full = SubsetLoss::new(self.ds(), self.split.train_idx.clone(), self.pcfg.loss, self.pcfg.lambda)?;
        Ok(train(&full, self.pcfg.train)?)
    }

    /// The model at `cfg.model_path()`, or a fresh training run when no file exists there.
    fn trained(&self, cfg: &RunConfig) -> Result<(LinearModel, &'static str)> {
        let path = cfg.model_path();
        if !path.exists() {
            return Ok((self.train()?, "trained"));
        }
        let w = load_model(&path).with_context(|| DataError(path.clone()))?;
        let ds = self.ds();
        let model = LinearModel::from_parameters(w, self.pcfg.loss, self.pcfg.lambda, ds.d(), ds.k(), self.split.n_train())
            .with_context(|| DataError(path.clone()))?;
        Ok((model, "loaded"))
    }
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let model = run.train()?;
    save_weights(&cfg.out.join("model.bin"), &model.w)?;
    let split_dir = cfg.out.join("split");
    run.split.save_dir(&split_dir).with_context(|| DataError(split_dir.clone()))?;
    let mut r = String::new();
    let _ = writeln!(r, "n_train={}", run.split.n_train());
    let _ = writeln!(r, "n_forget={}", run.split.n_forget());
    let _ = writeln!(r, "n_test={}", run.split.test_idx.len());
    let _ = writeln!(r, "iterations={}", model.info.iterations);
    let _ = writeln!(r, "grad_norm={:e}", model.info.grad_norm);
    let _ = writeln!(r, "train_acc={:.4}", accuracy(&model, run.ds(), &run.split.train_idx)?);
    if !run.split.test_idx.is_empty() {
        let _ = writeln!(r, "test_acc={:.4}", accuracy(&model, run.ds(), &run.split.test_idx)?);
    }
    write(&cfg.out.join("train_report.txt"), &r)?;
    write_manifest(cfg, "train")?;
    print!("{r}");
    Ok(())
}

pub fn retrain_cmd(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let model = retrain_oracle(run.ds(), &run.split, run.pcfg.loss, run.pcfg.lambda, run.pcfg.train)?;
    save_weights(&cfg.out.join("retrained.bin"), &model.w)?;
    let mut r = String::new();
    let _ = writeln!(r, "n_retain={}", run.split.n_retain());
    let _ = writeln!(r, "iterations={}", model.info.iterations);
    let _ = writeln!(r, "grad_norm={:e}", model.info.grad_norm);
    write(&cfg.out.join("retrain_report.txt"), &r)?;
    write_manifest(cfg, "retrain")?;
    print!("{r}");
    Ok(())
}

/// Exact retain Hessian in the layout of an estimate.
fn exact_hessian(run: &Run, model: &LinearModel, layout: ProbeLayout) -> Result<SymMatrix> {
    let retain = SubsetLoss::new(run.ds(), run.split.retain_idx.clone(), run.pcfg.loss, run.pcfg.lambda)?;
    Ok(match layout {
        ProbeLayout::ClassBlocks { .. } => retain.hessian_block()?,
        ProbeLayout::Full => retain.hessian(&model.w)?,
    })
}

pub fn estimate_cmd(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let (model, origin) = run.trained(cfg)?;
    let full = SubsetLoss::new(run.ds(), run.split.train_idx.clone(), run.pcfg.loss, run.pcfg.lambda)?;
    let forget = full.with_indices(run.split.forget_idx.clone())?;
    let est = sfmu::estimator::estimate_retain_hessian(&model.w, run.split.n_train(), &forget, &run.pcfg.estimator)?;
    save_matrix(&cfg.out.join("hessian.bin"), &est.h)?;
    let truth = exact_hessian(&run, &model, est.layout)?;
    let err = est.h.sub(&truth)?.frobenius_norm();
    let mut r = format!("model={origin}\n");
    r.push_str(&est.report());
    let _ = writeln!(r, "exact_frobenius_error={err:e}");
    let _ = writeln!(r, "relative_error={:e}", err / truth.frobenius_norm());
    write(&cfg.out.join("estimate_report.txt"), &r)?;
    write_manifest(cfg, "estimate")?;
    print!("{r}");
    Ok(())
}

pub fn unlearn_cmd(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let (model, origin) = run.trained(cfg)?;
    let source = run.pcfg.unlearn.hessian_source;
    let removal = remove(run.ds(), &run.split, &model, &run.pcfg, source)?;
    save_weights(&cfg.out.join("unlearned.bin"), &removal.model.w)?;
    let retrained = retrain_oracle(run.ds(), &run.split, run.pcfg.loss, run.pcfg.lambda, run.pcfg.train)?;
    let mut report =
        evaluate(source.method(), &setting_label(&run.split), &removal.model, run.ds(), &run.split, Some(&retrained), run.pcfg.mia)?;
    let bound = match source {
        HessianSource::Exact => removal_bound_check(run.ds(), &run.split, &run.pcfg, &removal)?,
        HessianSource::Estimated => None,
    };
    report.theorem1_bound = bound.map(|b| b.bound_closed_form);
    let mut r = format!("model={origin}\n");
    r.push_str(&report.summary());
    if let Some(b) = bound {
        let _ = writeln!(r, "theorem1_exact_form={:e}", b.bound_exact_form);
        let _ = writeln!(r, "theorem1_holds={}", b.holds);
    }
    if let Some(est) = &removal.estimate {
        save_matrix(&cfg.out.join("hessian.bin"), &est.h)?;
        for line in est.report().lines() {
            let _ = writeln!(r, "estimate.{line}");
        }
    }
    write(&cfg.out.join("unlearn_report.txt"), &r)?;
    write_manifest(cfg, "unlearn")?;
    print!("{r}");
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum SweepValue {
    Fraction(f64),
    M(usize),
    Lambda(f64),
}

fn parse_values(axis: SweepAxis, values: &[String]) -> Result<Vec<SweepValue>, ConfigError> {
    if values.is_empty() {
        return Err(ConfigError("sweep.values is empty".into()));
    }
    values
        .iter()
        .map(|v| {
            let bad = |e: &dyn std::fmt::Display| ConfigError(format!("sweep value {v:?}: {e}"));
            Ok(match axis {
                SweepAxis::ForgetFraction => SweepValue::Fraction(v.parse().map_err(|e| bad(&e))?),
                SweepAxis::M => SweepValue::M(v.parse().map_err(|e| bad(&e))?),
                SweepAxis::Lambda => SweepValue::Lambda(v.parse().map_err(|e| bad(&e))?),
            })
        })
        .collect()
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("SFMU_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| ConfigError(format!("SFMU_THREADS = {v:?} is not a count")))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let axis = cfg.sweep.axis.ok_or_else(|| ConfigError("sweep needs sweep.axis".into()))?;
    let values = parse_values(axis, &cfg.sweep.values)?;
    ensure_dir(&cfg.out)?;
    let seeds = cfg.sweep.seeds;
    let synthetic = matches!(cfg.data, DataSource::Synthetic(_));
    let datasets: Vec<Loaded> = (0..if synthetic { seeds } else { 1 }).map(|r| load_data(cfg, r)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|v| (0..seeds).map(move |r| (v, r))).collect();
    let pool = worker_pool()?;
    let results: Vec<Comparison> = pool.install(|| {
        jobs.par_iter()
            .map(|&(vi, r)| {
                let loaded = &datasets[if synthetic { r as usize } else { 0 }];
                let (fraction, lambda) = match values[vi] {
                    SweepValue::Fraction(f) => (Some(f), cfg.lambda),
                    SweepValue::Lambda(l) => (None, l),
                    SweepValue::M(_) => (None, cfg.lambda),
                };
                let split = split_for(cfg, loaded.ds.n(), r, fraction)?;
                let mut pcfg = pipeline_config(cfg, loaded, lambda, r);
                if let SweepValue::M(m) = values[vi] {
                    pcfg.estimator.m = m;
                }
                let setting = format!("{}={}", axis.name(), cfg.sweep.values[vi]);
                Ok(compare_methods(&loaded.ds, &split, &setting, &pcfg)?)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut full = format!("replicate,{TABLE_HEADER}\n");
    for (&(_, r), c) in jobs.iter().zip(&results) {
        for line in emit_table(&c.rows()).lines().skip(1) {
            let _ = writeln!(full, "{r},{line}");
        }
    }
    let mut summary = String::from(
        "axis,value,seeds,retrained_test,retrained_remaining,retrained_forget,retrained_mia,\
         unlearned_test,unlearned_remaining,unlearned_forget,unlearned_mia,gap,exact_gap\n",
    );
    let per = seeds as usize;
    for (vi, chunk) in results.chunks(per).enumerate() {
        let mean = |f: &dyn Fn(&Comparison) -> f64| chunk.iter().map(f).sum::<f64>() / per as f64;
        let _ = writeln!(
            summary,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            axis.name(),
            cfg.sweep.values[vi],
            seeds,
            mean(&|c| c.retrained.test_acc),
            mean(&|c| c.retrained.remain_acc),
            mean(&|c| c.retrained.forget_acc),
            mean(&|c| c.retrained.mia),
            mean(&|c| c.estimated.test_acc),
            mean(&|c| c.estimated.remain_acc),
            mean(&|c| c.estimated.forget_acc),
            mean(&|c| c.estimated.mia),
            mean(&|c| c.gap()),
            mean(&|c| c.retrained.accuracy_gap(&c.exact)),
        );
    }
    write(&cfg.out.join("sweep.csv"), &summary)?;
    write(&cfg.out.join("sweep_full.csv"), &full)?;
    write_manifest(cfg, "sweep")?;
    print!("{summary}");
    Ok(())
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn random_symmetric(d: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SymMatrix::from_upper_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

fn check_quartic(cfg: &RunConfig) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..cfg.verify.matrices {
        let m = random_symmetric(1 + i % 10, cfg.verify.seed.wrapping_add(i as u64));
        let c = verify_quartic_identity(&m, cfg.verify.samples, cfg.verify.seed.wrapping_add(1000 + i as u64));
        let z = (c.monte_carlo - c.closed_form).abs() / c.std_error.max(f64::MIN_POSITIVE);
        worst = worst.max(z);
    }
    Check {
        name: "quartic_identity",
        pass: worst <= 3.0,
        detail: format!("matrices={} samples={} worst_standard_errors={worst:.3}", cfg.verify.matrices, cfg.verify.samples),
    }
}

fn check_optimal_m() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for eps in [0.0, 0.5, 1.0, 3.0] {
        for d in [1usize, 2, 4, 16] {
            let m = verify_optimal_m(eps, d)?;
            let target = SymMatrix::identity(d).scale(-2.0 * eps / (2.0 + d as f64));
            worst = worst.max(m.sub(&target)?.max_abs_entry());
        }
    }
    Ok(Check { name: "optimal_m", pass: worst <= 1e-6, detail: format!("worst_entry_error={worst:e}") })
}

fn check_lemma_trend(run: &Run, seed: u64) -> Result<Check> {
    let retain = SubsetLoss::new(run.ds(), run.split.retain_idx.clone(), ConvexLoss::quadratic(), run.pcfg.lambda)?;
    let h = retain.hessian_block()?;
    let d = h.dim();
    let errs = corrupted_recovery_errors(&h, d * (d + 1), &[0.0, 0.1, 0.5, 1.0], seed)?;
    let pass = errs[0] <= 1e-8 * h.frobenius_norm() && errs.windows(2).all(|w| w[0] <= w[1]);
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    Ok(Check { name: "lemma1_trend", pass, detail: format!("errors={}", shown.join("/")) })
}

fn check_quadratic_exactness(run: &Run) -> Result<Check> {
    let p = PipelineConfig::for_loss(LossKind::Quadratic, run.pcfg.lambda);
    let full = SubsetLoss::new(run.ds(), run.split.train_idx.clone(), p.loss, p.lambda)?;
    let model = train(&full, p.train)?;
    let retrained = retrain_oracle(run.ds(), &run.split, p.loss, p.lambda, p.train)?;
    let removal = remove(run.ds(), &run.split, &model, &p, HessianSource::Exact)?;
    let rel = linalg::norm2(&linalg::sub(&removal.model.w, &retrained.w)) / linalg::norm2(&retrained.w).max(f64::MIN_POSITIVE);
    let retain = full.with_indices(run.split.retain_idx.clone())?;
    let residual = linalg::norm2(&retain.gradient(&removal.model.w)?);
    let scale = linalg::norm2(&retain.gradient(&vec![0.0; model.p()])?).max(1.0);
    let pass = rel <= 1e-8 && residual <= p.train.tol * scale;
    Ok(Check { name: "quadratic_exactness", pass, detail: format!("relative_error={rel:e} residual={residual:e}") })
}

fn check_theorem1(run: &Run) -> Result<Check> {
    let p = PipelineConfig::for_loss(LossKind::Logistic, run.pcfg.lambda);
    let full = SubsetLoss::new(run.ds(), run.split.train_idx.clone(), p.loss, p.lambda)?;
    let model = train(&full, p.train)?;
    let removal = remove(run.ds(), &run.split, &model, &p, HessianSource::Exact)?;
    Ok(match removal_bound_check(run.ds(), &run.split, &p, &removal)? {
        Some(b) => Check {
            name: "theorem1",
            pass: b.holds,
            detail: format!("residual={:e} bound_exact_form={:e} bound_closed_form={:e}", b.residual, b.bound_exact_form, b.bound_closed_form),
        },
        None => Check { name: "theorem1", pass: false, detail: "bound denominator is not positive".into() },
    })
}

pub fn verify_cmd(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let checks = vec![
        check_quartic(cfg),
        check_optimal_m()?,
        check_lemma_trend(&run, cfg.verify.seed)?,
        check_quadratic_exactness(&run)?,
        check_theorem1(&run)?,
    ];
    let mut r = String::new();
    for c in &checks {
        let _ = writeln!(r, "{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write(&cfg.out.join("verify_report.txt"), &r)?;
    write_manifest(cfg, "verify")?;
    print!("{r}");
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(failed).into())
    }
}

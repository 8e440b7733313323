use proptest::prelude::*;
use sfmu::data::*;
use sfmu::linalg::SymMatrix;
use sfmu::losses::LossKind;
use sfmu::synthetic::{gaussian_mixture, linearized_instance, MixtureSpec};
use sfmu::unlearner::{unlearn_pipeline, HessianSource, PipelineConfig};
use sfmu::Error;

fn mixture(seed: u64) -> FeatureDataset {
    gaussian_mixture(&MixtureSpec::new(240, 5, 3, seed)).unwrap()
}

fn f32_rounded(ds: &FeatureDataset) -> FeatureDataset {
    let features = ds.features().iter().map(|&x| x as f32 as f64).collect();
    FeatureDataset::new(ds.d(), ds.k(), features, ds.labels().to_vec()).unwrap()
}

fn split(n: usize, seed: u64) -> SplitSpec {
    let (train, test) = train_test_split(n, 0.25, seed).unwrap();
    make_split(train, test, 0.1, seed + 1).unwrap()
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = f32_rounded(&mixture(1));
    save_features(&dir.path().join("a.feat"), &ds).unwrap();
    assert_eq!(load_features(&dir.path().join("a.feat")).unwrap(), ds);

    let (jac, res) = linearized_instance(40, 6, 2, 0.1, 2).unwrap();
    let jac = f32_rounded(&jac);
    let res: Vec<f64> = res.iter().map(|&r| r as f32 as f64).collect();
    save_residuals(&dir.path().join("a.res"), &jac, &res).unwrap();
    let back = load_residuals(&dir.path().join("a.res")).unwrap();
    assert_eq!((back.n, back.d, back.k), (40, 6, 2));
    assert_eq!(back.features, jac.features());
    assert_eq!(back.residuals, res);

    let w = vec![0.5, -1.25, 3.0e-7, f64::MIN_POSITIVE];
    save_model(&dir.path().join("m.bin"), &w).unwrap();
    assert_eq!(load_model(&dir.path().join("m.bin")).unwrap(), w);

    let h = SymMatrix::from_upper_fn(4, |i, j| (i * 4 + j) as f64 / 7.0);
    save_hessian(&dir.path().join("h.bin"), &h).unwrap();
    assert_eq!(load_hessian(&dir.path().join("h.bin")).unwrap(), h);

    let s = split(ds.n(), 3);
    s.save_dir(&dir.path().join("split")).unwrap();
    assert_eq!(SplitSpec::load_dir(&dir.path().join("split")).unwrap(), s);
}

#[test]
fn wrong_magic_is_rejected() {
    let ds = mixture(1);
    let mut bytes = encode_dataset(&ds).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_dataset(&bytes), Err(Error::BadMagic { .. })));
    let bytes = encode_dataset(&ds).unwrap();
    assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::TruncatedFile { .. })));
}

#[test]
fn exact_quadratic_removal_matches_retraining() {
    let ds = mixture(4).normalize();
    let s = split(ds.n(), 5);
    let mut cfg = PipelineConfig::for_loss(LossKind::Quadratic, 0.05);
    cfg.unlearn.hessian_source = HessianSource::Exact;
    let out = unlearn_pipeline(&ds, &s, "10%", &cfg).unwrap();
    let rel = out.report.param_dist.unwrap() / out.retrained.w.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(rel < 1e-8, "{rel}");
    let t = out.theorem1.unwrap();
    assert!(t.holds);
}

#[test]
fn estimated_removal_is_deterministic() {
    let ds = mixture(6);
    let s = split(ds.n(), 7);
    let mut cfg = PipelineConfig::for_loss(LossKind::Logistic, 0.05);
    cfg.unlearn.hessian_source = HessianSource::Estimated;
    cfg.estimator.m = 60;
    let a = unlearn_pipeline(&ds, &s, "10%", &cfg).unwrap();
    let b = unlearn_pipeline(&ds, &s, "10%", &cfg).unwrap();
    let (ea, eb) = (a.estimate.unwrap(), b.estimate.unwrap());
    assert_eq!(encode_hessian(&ea.h).unwrap(), encode_hessian(&eb.h).unwrap());
    assert_eq!(encode_model(&a.unlearned.w).unwrap(), encode_model(&b.unlearned.w).unwrap());
    assert!(ea.h.min_eigenvalue() >= ea.floor * (1.0 - 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimate_respects_its_floor(seed in 0u64..1000, m in 5usize..40) {
        let ds = mixture(seed);
        let s = split(ds.n(), seed);
        let mut cfg = PipelineConfig::for_loss(LossKind::Quadratic, 0.01);
        cfg.unlearn.hessian_source = HessianSource::Estimated;
        cfg.estimator.m = m;
        cfg.estimator.seed = seed;
        let out = unlearn_pipeline(&ds, &s, "p", &cfg).unwrap();
        let est = out.estimate.unwrap();
        prop_assert!(est.h.min_eigenvalue() >= est.floor - 1e-9 * est.h.frobenius_norm().max(1.0));
        prop_assert!(out.unlearned.w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn splits_partition_the_training_set(n in 20usize..400, seed in 0u64..1000) {
        let s = split(n, seed);
        let mut all: Vec<usize> = s.retain_idx.iter().chain(&s.forget_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, s.train_idx.clone());
        prop_assert!(s.test_idx.iter().all(|i| !s.train_idx.contains(i)));
    }
}

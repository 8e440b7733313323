//! Regenerates the synthetic files under `fixtures/`.
//!
//! `cargo run -p sfmu-core --example make_fixtures -- fixtures`

use std::path::PathBuf;

use sfmu::data::{save_features, save_residuals, FeatureDataset};
use sfmu::synthetic::{gaussian_mixture, linearized_instance, MixtureSpec};

fn f32_rows(ds: &FeatureDataset) -> FeatureDataset {
    let features = ds.features().iter().map(|&x| x as f32 as f64).collect();
    FeatureDataset::new(ds.d(), ds.k(), features, ds.labels().to_vec()).expect("same shape")
}

fn main() -> sfmu::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;

    let spec = MixtureSpec { separation: 1.0, decay: 0.5, label_noise: 0.05, ..MixtureSpec::new(600, 8, 3, 7) };
    save_features(&dir.join("mixture.feat"), &gaussian_mixture(&spec)?)?;

    let (jac, residuals) = linearized_instance(300, 10, 3, 0.2, 11)?;
    let jac = f32_rows(&jac);
    let residuals: Vec<f64> = residuals.into_iter().map(|r| r as f32 as f64).collect();
    save_features(&dir.join("linearized.feat"), &jac)?;
    save_residuals(&dir.join("linearized.res"), &jac, &residuals)?;
    Ok(())
}

//! Feature datasets, train/test/forget splits, and the binary artifact formats.
//!
//! All binary formats are little-endian:
//!
//! | file       | layout                                                              |
//! |------------|---------------------------------------------------------------------|
//! | `SFUFEAT1` | magic, `u32` n, d, k, `n·d` `f32` features (row-major), `n` `u32` labels |
//! | `SFUJRES1` | magic, `u32` n, d, k, `n·d` `f32` features, `n·k` `f32` residual targets |
//! | `SFUMODL1` | magic, `u32` p, `p` `f64` parameters                                 |
//! | `SFUHESS1` | magic, `u32` p, `u32` p, `p·p` `f64` entries (row-major)             |
//!
//! Split files are newline-delimited decimal indices, one file per role.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"SFUFEAT1";
pub const RESIDUAL_MAGIC: &[u8; 8] = b"SFUJRES1";
pub const MODEL_MAGIC: &[u8; 8] = b"SFUMODL1";
pub const HESSIAN_MAGIC: &[u8; 8] = b"SFUHESS1";

/// `n` labeled feature vectors of width `d` over `k` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    n: usize,
    d: usize,
    k: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
    /// Per-sample base outputs added to `Wᵀx` (linearized networks); `n × k`.
    offsets: Option<Vec<f64>>,
    normalized: bool,
    scale: f64,
}

impl FeatureDataset {
    pub fn new(d: usize, k: usize, features: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::invalid("feature width and class count must be positive"));
        }
        let n = labels.len();
        if features.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: features.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k as u32 });
        }
        Ok(Self { n, d, k, features, labels, offsets: None, normalized: false, scale: 1.0 })
    }

    /// Attaches per-sample base outputs (`n × k`, row-major).
    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != self.n * self.k {
            return Err(Error::DimensionMismatch { expected: self.n * self.k, found: offsets.len() });
        }
        self.offsets = Some(offsets);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Flattened parameter count `d · k`.
    pub fn p(&self) -> usize {
        self.d * self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn offset(&self, i: usize) -> Option<&[f64]> {
        self.offsets.as_ref().map(|o| &o[i * self.k..(i + 1) * self.k])
    }

    pub fn has_offsets(&self) -> bool {
        self.offsets.is_some()
    }

    /// Whether rows were rescaled so that every `‖x_i‖₂ ≤ 1`.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Factor every row was divided by (1 when not normalized).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Divides every row by the largest row norm so that `‖x_i‖₂ ≤ 1`.
    pub fn normalize(mut self) -> Self {
        let m = self.max_row_norm();
        if m > 0.0 {
            for v in &mut self.features {
                *v /= m;
            }
            self.scale *= m;
        }
        self.normalized = true;
        self
    }

    /// Returns a copy with the given labels substituted.
    pub fn relabeled(&self, labels: Vec<u32>) -> Result<Self> {
        let mut out = Self::new(self.d, self.k, self.features.clone(), labels)?;
        out.offsets = self.offsets.clone();
        out.normalized = self.normalized;
        out.scale = self.scale;
        if out.n != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: out.n });
        }
        Ok(out)
    }

    /// Stacks two datasets with matching `d` and `k`; indices of `other` are shifted by `self.n()`.
    pub fn concat(&self, other: &FeatureDataset) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: other.d });
        }
        if self.k != other.k {
            return Err(Error::DimensionMismatch { expected: self.k, found: other.k });
        }
        if self.offsets.is_some() != other.offsets.is_some() {
            return Err(Error::invalid("cannot concatenate datasets with and without offsets"));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut out = Self::new(self.d, self.k, features, labels)?;
        if let (Some(a), Some(b)) = (&self.offsets, &other.offsets) {
            let mut o = a.clone();
            o.extend_from_slice(b);
            out.offsets = Some(o);
        }
        Ok(out)
    }
}

/// Train/test partition plus the forget/retain split of the training indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub forget_idx: Vec<usize>,
    pub retain_idx: Vec<usize>,
}

impl SplitSpec {
    /// Validates `forget ⊂ train` and derives `retain = train \ forget`.
    pub fn new(train_idx: Vec<usize>, test_idx: Vec<usize>, forget_idx: Vec<usize>) -> Result<Self> {
        let train: HashSet<usize> = train_idx.iter().copied().collect();
        if train.len() != train_idx.len() {
            return Err(Error::invalid("duplicate train index"));
        }
        let forget: HashSet<usize> = forget_idx.iter().copied().collect();
        if forget.len() != forget_idx.len() {
            return Err(Error::invalid("duplicate forget index"));
        }
        if let Some(i) = forget_idx.iter().find(|i| !train.contains(i)) {
            return Err(Error::invalid(format!("forget index {i} is not a training index")));
        }
        if forget_idx.is_empty() || forget_idx.len() >= train_idx.len() {
            return Err(Error::invalid(format!(
                "forget set must satisfy 0 < n_f < n_train (n_f = {}, n_train = {})",
                forget_idx.len(),
                train_idx.len()
            )));
        }
        let retain_idx = train_idx.iter().copied().filter(|i| !forget.contains(i)).collect();
        Ok(Self { train_idx, test_idx, forget_idx, retain_idx })
    }

    pub fn n_train(&self) -> usize {
        self.train_idx.len()
    }

    pub fn n_forget(&self) -> usize {
        self.forget_idx.len()
    }

    pub fn n_retain(&self) -> usize {
        self.retain_idx.len()
    }

    pub fn check_bounds(&self, n: usize) -> Result<()> {
        let all = self.train_idx.iter().chain(&self.test_idx);
        if let Some(&bad) = all.into_iter().find(|&&i| i >= n) {
            return Err(Error::DimensionMismatch { expected: n, found: bad + 1 });
        }
        Ok(())
    }

    /// Writes `train.idx`, `test.idx`, `forget.idx` and `retain.idx` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_index_file(&dir.join("train.idx"), &self.train_idx)?;
        write_index_file(&dir.join("test.idx"), &self.test_idx)?;
        write_index_file(&dir.join("forget.idx"), &self.forget_idx)?;
        write_index_file(&dir.join("retain.idx"), &self.retain_idx)?;
        Ok(())
    }

    /// Reads the train, test and forget files written by [`SplitSpec::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::new(
            read_index_file(&dir.join("train.idx"))?,
            read_index_file(&dir.join("test.idx"))?,
            read_index_file(&dir.join("forget.idx"))?,
        )
    }
}

/// Number of forget samples for a fraction: nearest integer, ties toward the larger count.
pub fn forget_count(n_train: usize, fraction: f64) -> usize {
    (fraction * n_train as f64 + 0.5).floor() as usize
}

/// Draws the forget set uniformly without replacement from `train_idx`.
pub fn make_split(
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    forget_fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !(forget_fraction > 0.0 && forget_fraction < 1.0) {
        return Err(Error::FractionOutOfRange(forget_fraction));
    }
    let n_train = train_idx.len();
    let n_f = forget_count(n_train, forget_fraction);
    if n_f == 0 || n_f >= n_train {
        return Err(Error::FractionOutOfRange(forget_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forget: Vec<usize> =
        index::sample(&mut rng, n_train, n_f).into_iter().map(|i| train_idx[i]).collect();
    forget.sort_unstable();
    SplitSpec::new(train_idx, test_idx, forget)
}

/// Random train/test partition of `0..n`, both halves sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::FractionOutOfRange(test_fraction));
    }
    let n_test = forget_count(n, test_fraction);
    if n_test == 0 || n_test >= n {
        return Err(Error::FractionOutOfRange(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];
    for i in index::sample(&mut rng, n, n_test) {
        is_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((train, test))
}

pub fn write_index_file(path: &Path, idx: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(idx.len() * 6);
    for i in idx {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<usize>().map_err(|_| Error::invalid(format!("bad index {l:?} in {}", path.display()))))
        .collect()
}

// --- binary IO ------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &'static [u8; 8]) -> Result<Self> {
        let expected = std::str::from_utf8(magic).expect("ascii magic");
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(Error::BadMagic { expected });
        }
        Ok(Self { buf, pos: 8 })
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).ok_or(Error::TruncatedFile)?;
        if end > self.buf.len() {
            return Err(Error::TruncatedFile);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or(Error::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        let bytes = self.take(count.checked_mul(4).ok_or(Error::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or(Error::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::invalid(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode_features(magic: &[u8; 8], ds: &FeatureDataset, tail: impl FnOnce(&mut Vec<u8>)) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + ds.features.len() * 4 + ds.n * 4);
    out.extend_from_slice(magic);
    push_u32(&mut out, ds.n)?;
    push_u32(&mut out, ds.d)?;
    push_u32(&mut out, ds.k)?;
    for &v in &ds.features {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    tail(&mut out);
    Ok(out)
}

/// Serializes a dataset in the `SFUFEAT1` format. Features are written as `f32`.
pub fn encode_dataset(ds: &FeatureDataset) -> Result<Vec<u8>> {
    encode_features(FEATURE_MAGIC, ds, |out| {
        for &y in &ds.labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
    })
}

pub fn decode_dataset(buf: &[u8]) -> Result<FeatureDataset> {
    let mut r = Reader::open(buf, FEATURE_MAGIC)?;
    let (n, d, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let features = r.f32s(n.checked_mul(d).ok_or(Error::TruncatedFile)?)?;
    let labels = r.u32s(n)?;
    r.finish()?;
    FeatureDataset::new(d, k, features.into_iter().map(f64::from).collect(), labels)
}

pub fn save_features(path: &Path, ds: &FeatureDataset) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureDataset> {
    decode_dataset(&fs::read(path)?)
}

/// Loads a feature file, optionally rescaling rows to unit max-norm.
pub fn load_features_with(path: &Path, normalize: bool) -> Result<FeatureDataset> {
    let ds = load_features(path)?;
    Ok(if normalize { ds.normalize() } else { ds })
}

/// Jacobian features with real-valued residual targets (`n × k`).
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFile {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub features: Vec<f64>,
    pub residuals: Vec<f64>,
}

pub fn encode_residuals(ds: &FeatureDataset, residuals: &[f64]) -> Result<Vec<u8>> {
    if residuals.len() != ds.n * ds.k {
        return Err(Error::DimensionMismatch { expected: ds.n * ds.k, found: residuals.len() });
    }
    encode_features(RESIDUAL_MAGIC, ds, |out| {
        for &v in residuals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    })
}

pub fn decode_residuals(buf: &[u8]) -> Result<ResidualFile> {
    let mut r = Reader::open(buf, RESIDUAL_MAGIC)?;
    let (n, d, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let features = r.f32s(n.checked_mul(d).ok_or(Error::TruncatedFile)?)?;
    let residuals = r.f32s(n.checked_mul(k).ok_or(Error::TruncatedFile)?)?;
    r.finish()?;
    Ok(ResidualFile {
        n,
        d,
        k,
        features: features.into_iter().map(f64::from).collect(),
        residuals: residuals.into_iter().map(f64::from).collect(),
    })
}

pub fn save_residuals(path: &Path, ds: &FeatureDataset, residuals: &[f64]) -> Result<()> {
    fs::write(path, encode_residuals(ds, residuals)?)?;
    Ok(())
}

pub fn load_residuals(path: &Path) -> Result<ResidualFile> {
    decode_residuals(&fs::read(path)?)
}

pub fn encode_model(w: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * w.len());
    out.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut out, w.len())?;
    for v in w {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(buf: &[u8]) -> Result<Vec<f64>> {
    let mut r = Reader::open(buf, MODEL_MAGIC)?;
    let p = r.u32()? as usize;
    let w = r.f64s(p)?;
    r.finish()?;
    Ok(w)
}

pub fn save_model(path: &Path, w: &[f64]) -> Result<()> {
    fs::write(path, encode_model(w)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Vec<f64>> {
    decode_model(&fs::read(path)?)
}

pub fn encode_hessian(h: &SymMatrix) -> Result<Vec<u8>> {
    let p = h.dim();
    let mut out = Vec::with_capacity(16 + 8 * p * p);
    out.extend_from_slice(HESSIAN_MAGIC);
    push_u32(&mut out, p)?;
    push_u32(&mut out, p)?;
    for v in h.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_hessian(buf: &[u8]) -> Result<SymMatrix> {
    let mut r = Reader::open(buf, HESSIAN_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows != cols {
        return Err(Error::DimensionMismatch { expected: rows, found: cols });
    }
    let entries = r.f64s(rows.checked_mul(cols).ok_or(Error::TruncatedFile)?)?;
    r.finish()?;
    SymMatrix::from_row_major(rows, &entries)
}

pub fn save_hessian(path: &Path, h: &SymMatrix) -> Result<()> {
    fs::write(path, encode_hessian(h)?)?;
    Ok(())
}

pub fn load_hessian(path: &Path) -> Result<SymMatrix> {
    decode_hessian(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> FeatureDataset {
        FeatureDataset::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0, 1]).unwrap()
    }

    #[test]
    fn feature_file_layout() {
        let bytes = encode_dataset(&small()).unwrap();
        assert_eq!(&bytes[..8], b"SFUFEAT1");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[40..44], &6.0f32.to_le_bytes());
        assert_eq!(&bytes[44..48], &0u32.to_le_bytes());
        assert_eq!(&bytes[48..52], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 52);
        assert_eq!(decode_dataset(&bytes).unwrap(), small());
    }

    #[test]
    fn label_out_of_range() {
        let mut bytes = encode_dataset(&small()).unwrap();
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::LabelOutOfRange { label: 7, classes: 2 })));
    }

    #[test]
    fn empty_or_wrong_magic() {
        assert!(matches!(decode_dataset(&[]), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_dataset(b"SFUMODL1\0\0\0\0"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_dataset(&small()).unwrap();
        for cut in [10, 20, 30, 51] {
            assert!(matches!(decode_dataset(&bytes[..cut]), Err(Error::TruncatedFile)), "cut {cut}");
        }
    }

    #[test]
    fn model_and_hessian_roundtrip() {
        let w = vec![0.25, -1.5, f64::MIN_POSITIVE, 1e300];
        assert_eq!(decode_model(&encode_model(&w).unwrap()).unwrap(), w);
        let h = SymMatrix::from_row_major(2, &[1.0, 0.1, 0.1, 2.0]).unwrap();
        let bytes = encode_hessian(&h).unwrap();
        assert_eq!(&bytes[..8], b"SFUHESS1");
        assert_eq!(bytes.len(), 16 + 32);
        assert_eq!(decode_hessian(&bytes).unwrap(), h);
    }

    #[test]
    fn residual_roundtrip() {
        let ds = small();
        let r = vec![0.5, -0.5, 0.0, 1.0];
        let f = decode_residuals(&encode_residuals(&ds, &r).unwrap()).unwrap();
        assert_eq!((f.n, f.d, f.k), (2, 3, 2));
        assert_eq!(f.residuals, r);
        assert_eq!(f.features, ds.features());
        assert!(matches!(decode_residuals(&encode_dataset(&ds).unwrap()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn split_counts() {
        let s = make_split((0..100).collect(), vec![], 0.10, 3).unwrap();
        assert_eq!(s.n_forget(), 10);
        assert_eq!(s.n_retain(), 90);
        let s = make_split((0..1000).collect(), vec![], 0.15, 3).unwrap();
        assert_eq!(s.n_forget(), 150);
    }

    #[test]
    fn split_is_deterministic() {
        let a = make_split((0..500).collect(), vec![], 0.1, 42).unwrap();
        let b = make_split((0..500).collect(), vec![], 0.1, 42).unwrap();
        let c = make_split((0..500).collect(), vec![], 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.forget_idx, c.forget_idx);
    }

    #[test]
    fn forget_count_rounding() {
        assert_eq!(forget_count(10, 0.25), 3); // 2.5 ties up
        assert_eq!(forget_count(10, 0.24), 2);
        assert_eq!(forget_count(1000, 0.15), 150);
    }

    #[test]
    fn split_fraction_errors() {
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(make_split((0..10).collect(), vec![], f, 0), Err(Error::FractionOutOfRange(_))));
        }
        // rounds to zero
        assert!(matches!(make_split((0..10).collect(), vec![], 0.01, 0), Err(Error::FractionOutOfRange(_))));
    }

    #[test]
    fn split_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = make_split(vec![1, 3, 5, 7, 9, 11], vec![0, 2], 0.5, 1).unwrap();
        s.save_dir(dir.path()).unwrap();
        assert_eq!(SplitSpec::load_dir(dir.path()).unwrap(), s);
    }

    #[test]
    fn normalize_bounds_rows() {
        let ds = small().normalize();
        assert!(ds.is_normalized());
        assert!((ds.max_row_norm() - 1.0).abs() < 1e-12);
        assert!((ds.scale() - 77f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn save_load_is_bit_exact(
            rows in prop::collection::vec((prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 4), 0u32..5), 0..20)
        ) {
            let features: Vec<f64> = rows.iter().flat_map(|(r, _)| r.iter().map(|&v| v as f64)).collect();
            let labels: Vec<u32> = rows.iter().map(|(_, y)| *y).collect();
            let ds = FeatureDataset::new(4, 5, features, labels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.bin");
            save_features(&path, &ds).unwrap();
            let back = load_features(&path).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            for (a, b) in back.features().iter().zip(ds.features()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn split_partitions_train(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
            if let Ok(s) = make_split((0..n).collect(), vec![], frac, seed) {
                let mut all: Vec<usize> = s.forget_idx.iter().chain(&s.retain_idx).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                let f: HashSet<_> = s.forget_idx.iter().collect();
                prop_assert!(s.retain_idx.iter().all(|i| !f.contains(i)));
            }
        }
    }
}

//! In-memory classification datasets: Gaussian blobs and IDX files.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Fraction of examples assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major `n × d_in` feature matrix.
    pub features: Vec<f64>,
    pub d_in: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Hex SHA-256 of dimensions, features and labels.
    pub hash: String,
}

impl Dataset {
    /// Build a dataset, hash its content and split it 80/20 using `split_seed`.
    pub fn new(features: Vec<f64>, d_in: usize, labels: Vec<usize>, num_classes: usize, split_seed: u64) -> Result<Self> {
        if d_in == 0 || labels.is_empty() || num_classes == 0 {
            return Err(Error::Config("dataset needs d_in, n and classes positive".into()));
        }
        if features.len() != labels.len() * d_in {
            return Err(Error::DimensionMismatch { expected: labels.len() * d_in, got: features.len() });
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::InputDomain(format!("label {} at row {i} >= {num_classes}", labels[i])));
        }
        if let Some(k) = crate::numerics::first_non_finite(&features) {
            return Err(Error::InputDomain(format!("feature row {} is not finite", k / d_in)));
        }
        let hash = content_hash(&features, d_in, &labels, num_classes);
        let (train, test) = split_indices(labels.len(), &hash, split_seed);
        Ok(Self { features, d_in, labels, num_classes, train, test, hash })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    /// Keep the first `k` examples of every class, in file order, and re-split.
    pub fn first_k_per_class(&self, k: usize, split_seed: u64) -> Result<Self> {
        let mut taken = vec![0usize; self.num_classes];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if taken[l] < k {
                taken[l] += 1;
                features.extend_from_slice(self.row(i));
                labels.push(l);
            }
        }
        Self::new(features, self.d_in, labels, self.num_classes, split_seed)
    }

    /// CSV with header `label,f0,f1,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.d_in).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn content_hash(features: &[f64], d_in: usize, labels: &[usize], num_classes: usize) -> String {
    let mut h = Sha256::new();
    h.update((d_in as u64).to_le_bytes());
    h.update((labels.len() as u64).to_le_bytes());
    h.update((num_classes as u64).to_le_bytes());
    for f in features {
        h.update(f.to_le_bytes());
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Deterministic 80/20 split; a function of the content hash and seed only.
fn split_indices(n: usize, hash: &str, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let digest = hex::decode(&hash[..16]).expect("hash is hex");
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(prefix) ^ seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = if n == 1 { 1 } else { ((n as f64) * TRAIN_FRACTION).round().max(1.0) as usize };
    let mut test = idx.split_off(n_train.min(n));
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

/// One isotropic Gaussian cluster per class with standard deviation `spread`.
///
/// Centers sit on `±a·e_j` with `a = 2√2·spread`, so any two centers are at
/// least `4·spread` apart. Samples farther than `1.9·spread` from their center
/// are redrawn, which keeps every class pair linearly separable with a
/// positive margin. Supports up to `2·d_in` classes.
pub fn gen_blobs(n: usize, d_in: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d_in == 0 || classes == 0 {
        return Err(Error::Config("blobs need n, d_in and classes positive".into()));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::Config(format!("spread must be positive, got {spread}")));
    }
    if classes > 2 * d_in {
        return Err(Error::Config(format!("at most {} classes fit in {d_in} dimensions", 2 * d_in)));
    }
    let a = 2.0 * std::f64::consts::SQRT_2 * spread;
    let center = |c: usize| -> Vec<f64> {
        let mut v = vec![0.0; d_in];
        v[c % d_in] = if c < d_in { a } else { -a };
        v
    };
    let radius = 1.9 * spread;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * d_in);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let mu = center(c);
        let offset = loop {
            let z: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            let z: Vec<f64> = z.into_iter().map(|v| v * spread).collect();
            if crate::numerics::norm(&z) < radius {
                break z;
            }
        };
        features.extend(mu.iter().zip(&offset).map(|(m, o)| m + o));
        labels.push(c);
    }
    Dataset::new(features, d_in, labels, classes, seed)
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset, msg: format!("truncated header reading {what}") })
}

/// Parsed IDX image tensor: `(count, rows, cols, pixels scaled to [0,1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse { offset: 0, msg: format!("bad image magic {magic:#010x}") });
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(Error::Parse {
            offset: 16 + payload.len(),
            msg: format!("truncated image payload: expected {expected} bytes, found {}", payload.len()),
        });
    }
    let pixels = payload[..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse { offset: 0, msg: format!("bad label magic {magic:#010x}") });
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Parse {
            offset: 8 + payload.len(),
            msg: format!("truncated label payload: expected {count} bytes, found {}", payload.len()),
        });
    }
    Ok(payload[..count].iter().map(|&b| usize::from(b)).collect())
}

/// Read an IDX image/label pair. `per_class` keeps the first `k` examples of each class.
pub fn read_idx(images: &Path, labels: &Path, per_class: Option<usize>, split_seed: u64) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&fs::read(images)?)?;
    let labels = parse_idx_labels(&fs::read(labels)?)?;
    if labels.len() != count {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("image file has {count} entries but label file has {}", labels.len()),
        });
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let ds = Dataset::new(pixels, rows * cols, labels, num_classes, split_seed)?;
    match per_class {
        Some(k) => ds.first_k_per_class(k, split_seed),
        None => Ok(ds),
    }
}

/// Serialize features as unsigned bytes (`round(255·f)`) in a `1 × d_in` image layout.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if let Some(f) = ds.features.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InputDomain(format!("feature {f} is outside [0, 1]")));
    }
    if ds.num_classes > 256 {
        return Err(Error::InputDomain("IDX labels are single bytes".into()));
    }
    let n = u32::try_from(ds.len()).map_err(|_| Error::InputDomain("too many rows".into()))?;
    let d = u32::try_from(ds.d_in).map_err(|_| Error::InputDomain("too many columns".into()))?;
    let mut img = Vec::with_capacity(16 + ds.features.len());
    for word in [IDX_IMAGES_MAGIC, n, 1, d] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(ds.features.iter().map(|f| (f * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    for word in [IDX_LABELS_MAGIC, n] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((img, lab))
}

pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let (img, lab) = encode_idx(ds)?;
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

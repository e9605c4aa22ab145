//! Classification datasets: IDX image files and synthetic Gaussian blobs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Format(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Format("inputs must share one nonzero dimension".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Format(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// One-hot target: 1 at the label, 0 elsewhere.
    pub fn target(&self, i: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.n_classes];
        t[self.labels[i]] = 1.0;
        t
    }

    /// First `n` examples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(
            self.inputs[..n].to_vec(),
            self.labels[..n].to_vec(),
            self.n_classes,
            self.split,
        )
    }

    /// Hex SHA-256 over the inputs' little-endian bytes, then the labels.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.inputs {
            for v in x {
                h.update(v.to_le_bytes());
            }
        }
        for l in &self.labels {
            h.update((*l as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Reads an IDX image/label pair, scaling pixels by 1/255.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>, split: Split) -> Result<Dataset> {
    if limit == Some(0) {
        return Err(Error::invalid("limit 0 would give an empty dataset"));
    }
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    let magic = be_u32(&img, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let magic = be_u32(&lab, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n_img = be_u32(&img, 4, "images")? as usize;
    let rows = be_u32(&img, 8, "images")? as usize;
    let cols = be_u32(&img, 12, "images")? as usize;
    let n_lab = be_u32(&lab, 4, "labels")? as usize;
    if n_img != n_lab {
        return Err(Error::Format(format!(
            "image/label pairing mismatch: {n_img} images, {n_lab} labels"
        )));
    }
    let dim = rows * cols;
    if img.len() != 16 + n_img * dim {
        return Err(Error::Format(format!(
            "images: expected {} bytes, found {}",
            16 + n_img * dim,
            img.len()
        )));
    }
    if lab.len() != 8 + n_lab {
        return Err(Error::Format(format!(
            "labels: expected {} bytes, found {}",
            8 + n_lab,
            lab.len()
        )));
    }
    let n = limit.map_or(n_img, |l| l.min(n_img));
    let inputs = (0..n)
        .map(|i| {
            img[16 + i * dim..16 + (i + 1) * dim]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    // MNIST-family label files have ten classes even when a prefix misses some.
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(inputs, labels, n_classes, split)
}

/// Vertices of a regular simplex with `k` unit-norm vertices in `R^(k−1)`.
fn simplex_vertices(k: usize) -> Vec<Vec<f64>> {
    // Helmert basis of the sum-zero subspace of R^k.
    let basis: Vec<Vec<f64>> = (1..k)
        .map(|j| {
            let norm = ((j * (j + 1)) as f64).sqrt();
            (0..k)
                .map(|i| match i.cmp(&j) {
                    std::cmp::Ordering::Less => 1.0 / norm,
                    std::cmp::Ordering::Equal => -(j as f64) / norm,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect();
    let radius = ((k as f64 - 1.0) / k as f64).sqrt();
    (0..k)
        .map(|v| basis.iter().map(|u| u[v] / radius).collect())
        .collect()
}

/// Gaussian clusters of standard deviation `spread` around simplex vertices.
/// Examples are class-major.
pub fn make_blobs(n_classes: usize, n_per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {n_classes}")));
    }
    if dim < n_classes - 1 {
        return Err(Error::invalid(format!(
            "dimension {dim} cannot hold a simplex of {n_classes} classes"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be nonnegative, got {spread}")));
    }
    let centers = simplex_vertices(n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n_classes * n_per_class);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let x = (0..dim)
                .map(|d| {
                    let mu = center.get(d).copied().unwrap_or(0.0);
                    mu + spread * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            inputs.push(x);
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, n_classes, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, n_img: u32, n_lab: u32, magic_img: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = Vec::new();
        for v in [magic_img, n_img, 2, 2] {
            img.extend(v.to_be_bytes());
        }
        for i in 0..n_img * 4 {
            img.push((i * 17 % 256) as u8);
        }
        let mut lab = Vec::new();
        for v in [IDX_LABELS, n_lab] {
            lab.extend(v.to_be_bytes());
        }
        for i in 0..n_lab {
            lab.push((i % 10) as u8);
        }
        let ip = dir.join("img");
        let lp = dir.join("lab");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn reads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 3, 3, IDX_IMAGES);
        let d = load_idx(&ip, &lp, None, Split::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.inputs[0][1], 17.0 / 255.0);
        assert_eq!(d.labels, vec![0, 1, 2]);
        let d = load_idx(&ip, &lp, Some(2), Split::Train).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 3, 3, IDX_IMAGES);
        assert!(load_idx(&ip, &lp, Some(0), Split::Train).is_err());
        let (ip, lp) = write_idx(dir.path(), 3, 4, IDX_IMAGES);
        assert!(matches!(load_idx(&ip, &lp, None, Split::Train), Err(Error::Format(m)) if m.contains("pairing")));
        let (ip, lp) = write_idx(dir.path(), 3, 3, 0x0803_0000);
        assert!(load_idx(&ip, &lp, None, Split::Train).is_err());
        std::fs::write(&ip, [0u8, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2]).unwrap();
        assert!(load_idx(&ip, &lp, None, Split::Train).is_err());
    }

    #[test]
    fn simplex_is_regular() {
        for k in 2..6 {
            let v = simplex_vertices(k);
            for a in 0..k {
                let n: f64 = v[a].iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
                for b in a + 1..k {
                    let d: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum();
                    assert!((d + 1.0 / (k as f64 - 1.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blobs_validate_and_repeat() {
        assert!(make_blobs(1, 10, 2, 0.1, 0).is_err());
        assert!(make_blobs(4, 10, 2, 0.1, 0).is_err());
        let a = make_blobs(3, 20, 2, 0.5, 7).unwrap();
        let b = make_blobs(3, 20, 2, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), make_blobs(3, 20, 2, 0.5, 8).unwrap().checksum());
    }

    #[test]
    fn one_hot_targets() {
        let d = make_blobs(3, 2, 2, 0.0, 1).unwrap();
        assert_eq!(d.target(2), vec![0.0, 1.0, 0.0]);
    }
}

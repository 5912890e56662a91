use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard deviation of the per-pixel noise around each synthetic class
/// centre.
pub const SYNTH_NOISE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images in `(n, c, h, w)` order with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<u32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u32>,
        (channels, height, width): (usize, usize, usize),
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let sample = channels * height * width;
        if sample == 0 {
            return Err(Error::Dataset("sample shape has a zero dimension".into()));
        }
        if images.len() != labels.len() * sample {
            return Err(Error::Dataset(format!(
                "{} pixel values for {} labels of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Dataset(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.images[i * s..(i + 1) * s]
    }

    /// Gathers the given samples into contiguous image and label buffers.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<u32>) {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    /// Splits off the first `n` samples; the remainder gets `rest_split`.
    pub fn split_at(&self, n: usize, first_split: Split, rest_split: Split) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Dataset(format!("cannot split {} samples at {n}", self.len())));
        }
        let cut = n * self.sample_len();
        let shape = (self.channels, self.height, self.width);
        Ok((
            Dataset::new(self.images[..cut].to_vec(), self.labels[..n].to_vec(), shape, self.classes, first_split)?,
            Dataset::new(self.images[cut..].to_vec(), self.labels[n..].to_vec(), shape, self.classes, rest_split)?,
        ))
    }

    /// A permutation of sample indices determined by `seed`.
    pub fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }
}

/// Class-centred Gaussian blobs.
///
/// Each class gets a centre drawn uniformly from `[0.2, 0.8]` per pixel;
/// samples add `N(0, SYNTH_NOISE)` noise and are clamped to `[0, 1]`.
/// Labels are balanced (`i % classes`) and the sample order is shuffled.
/// Everything is a function of `seed`.
pub fn synth_blobs(classes: usize, n: usize, dims: (usize, usize, usize), seed: u64) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::Dataset("need at least one class".into()));
    }
    let sample = dims.0 * dims.1 * dims.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..sample).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("valid std");
    let mut labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    labels.shuffle(&mut rng);
    let mut images = Vec::with_capacity(n * sample);
    for &label in &labels {
        for &c in &centres[label as usize] {
            images.push((c + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(images, labels, dims, classes, Split::Train)
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            message: format!("truncated header: need {} bytes, file has {}", at + 4, bytes.len()),
        })
}

/// Parses an IDX file, returning its dimension sizes and payload.
fn parse_idx<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            message: format!("magic number 0x{found:08x}, expected 0x{magic:08x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| read_be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            message: format!("truncated data: {} of {expected} bytes present", payload.len()),
        });
    }
    Ok((dims, &payload[..expected]))
}

/// Reads an IDX image/label pair (e.g. MNIST). Pixels are scaled to
/// `[0, 1]`; the class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (idims, pixels) = parse_idx(&ibytes, ip, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(&lbytes, lp, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let labels: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let images = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(images, labels, (1, idims[1], idims[2]), classes, Split::Train)
}

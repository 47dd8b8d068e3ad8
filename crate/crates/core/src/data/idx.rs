//! IDX image/label files, global standardization and the two image sequencings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SequenceDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: usize = 10;

/// Raw images (row-major bytes) with their digit labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(Error::Consistency(format!(
                "{} pixel bytes for {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
            return Err(Error::Format(format!("label {l} is not a digit")));
        }
        Ok(LabeledImages { rows, cols, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` images (`0` keeps everything).
    pub fn take(&self, n: usize) -> LabeledImages {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        LabeledImages {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.rows * self.cols].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Length {
                needed: n,
                available,
                what: self.what.into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::Format(format!(
                "{}: magic {found:#010x}, expected {expected:#010x}",
                self.what
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parses an images file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader { bytes, pos: 0, what: "idx images" };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(count * rows * cols)?.to_vec();
    r.finish()?;
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0, what: "idx labels" };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32()? as usize;
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    Ok(labels)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImages> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::Consistency(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    LabeledImages::new(rows, cols, pixels, labels)
}

pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(
    images: &LabeledImages,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let bytes = encode_idx_images(images.len(), images.rows, images.cols, &images.pixels);
    fs::write(ip, bytes).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, encode_idx_labels(&images.labels)).map_err(|e| Error::io(lp, e))
}

/// One scalar mean and standard deviation over every training pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Population statistics of `images`; zero spread is rejected.
    pub fn fit(images: &LabeledImages) -> Result<Self> {
        if images.pixels.is_empty() {
            return Err(Error::Degenerate("no pixels to standardize".into()));
        }
        let n = images.pixels.len() as f64;
        let mean = images.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
        let var = images
            .pixels
            .iter()
            .map(|&p| (f64::from(p) - mean).powi(2))
            .sum::<f64>()
            / n;
        let s = Standardizer { mean, std: var.sqrt() };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::Degenerate(format!(
                "pixel standard deviation is {}",
                self.std
            )));
        }
        Ok(())
    }

    pub fn apply(&self, pixel: u8) -> f64 {
        (f64::from(pixel) - self.mean) / self.std
    }
}

/// Images after `(x - mean) / std`, still row-major per image.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedImages {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn standardize(images: &LabeledImages, stats: &Standardizer) -> Result<StandardizedImages> {
    stats.check()?;
    Ok(StandardizedImages {
        rows: images.rows,
        cols: images.cols,
        values: images.pixels.iter().map(|&p| stats.apply(p)).collect(),
        labels: images.labels.clone(),
    })
}

fn labels_usize(labels: &[u8]) -> Vec<usize> {
    labels.iter().map(|&l| usize::from(l)).collect()
}

/// One pixel per step, scanned row by row: `T = rows*cols`, `m = 1`.
pub fn pixelwise(images: &StandardizedImages) -> SequenceDataset {
    SequenceDataset::dense(
        images.values.clone(),
        images.rows * images.cols,
        1,
        labels_usize(&images.labels),
        NUM_CLASSES,
    )
    .expect("standardized images are consistent")
}

/// One image row per step: `T = rows`, `m = cols`.
pub fn rowwise(images: &StandardizedImages) -> SequenceDataset {
    SequenceDataset::dense(
        images.values.clone(),
        images.rows,
        images.cols,
        labels_usize(&images.labels),
        NUM_CLASSES,
    )
    .expect("standardized images are consistent")
}

//! IDX image/label files as distributed for MNIST-style datasets.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nnsym::training::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

/// Images with pixels scaled to `[0, 1]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols`, row-major.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_dataset(self, limit: Option<usize>) -> nnsym::Result<Dataset> {
        let n = limit.map_or(self.len(), |l| l.min(self.len()));
        let dim = self.rows * self.cols;
        let mut images = self.images;
        images.truncate(n * dim);
        let labels = self.labels[..n].iter().map(|&l| l as usize).collect();
        Dataset::new(images, labels, dim, CLASSES)
    }
}

fn header(bytes: &[u8], words: usize, what: &str) -> Result<Vec<u32>> {
    ensure!(bytes.len() >= 4 * words, "{what} file truncated in header");
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<IdxDataset> {
    let ih = header(image_bytes, 4, "image")?;
    ensure!(ih[0] == IMAGE_MAGIC, "bad image magic {:#010x}", ih[0]);
    let (count, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    let pixels = &image_bytes[16..];
    ensure!(
        pixels.len() == count * rows * cols,
        "image file truncated: {} pixel bytes for {count} images of {rows}x{cols}",
        pixels.len()
    );
    let lh = header(label_bytes, 2, "label")?;
    ensure!(lh[0] == LABEL_MAGIC, "bad label magic {:#010x}", lh[0]);
    let labels = &label_bytes[8..];
    ensure!(
        labels.len() == lh[1] as usize,
        "label file truncated: {} bytes for {} labels",
        labels.len(),
        lh[1]
    );
    ensure!(
        labels.len() == count,
        "count mismatch: {count} images but {} labels",
        labels.len()
    );
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        bail!("label out of range: {bad}");
    }
    Ok(IdxDataset {
        rows,
        cols,
        images: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: labels.to_vec(),
    })
}

/// Inverse of [`parse_idx`]; pixels are rounded back to bytes.
pub fn write_idx(data: &IdxDataset) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + data.images.len());
    for w in [
        IMAGE_MAGIC,
        data.len() as u32,
        data.rows as u32,
        data.cols as u32,
    ] {
        images.extend_from_slice(&w.to_be_bytes());
    }
    images.extend(data.images.iter().map(|&p| (p * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + data.len());
    for w in [LABEL_MAGIC, data.len() as u32] {
        labels.extend_from_slice(&w.to_be_bytes());
    }
    labels.extend_from_slice(&data.labels);
    (images, labels)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxDataset> {
    let ib = std::fs::read(images).with_context(|| format!("reading {}", images.display()))?;
    let lb = std::fs::read(labels).with_context(|| format!("reading {}", labels.display()))?;
    parse_idx(&ib, &lb).with_context(|| format!("parsing {}", images.display()))
}

/// Train and test splits from the standard file names in `dir`.
pub fn load_fashion_mnist(dir: &Path) -> Result<(IdxDataset, IdxDataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

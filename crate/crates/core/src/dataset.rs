//! MNIST ingestion from IDX files, the 50k/10k train/validation split and
//! seeded mini-batch iteration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_SIZE: usize = 50_000;
pub const VALID_SIZE: usize = 10_000;

/// Images in `[0, 1]` paired with one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    images: Tensor,
    labels: Tensor,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Tensor) -> Result<Self> {
        if images.rows() != labels.rows() {
            return Err(Error::Shape {
                op: "LabeledSet::new",
                left: images.shape(),
                right: labels.shape(),
            });
        }
        if images.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        check_one_hot(&labels)?;
        Ok(LabeledSet { images, labels })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `start..end`, in order.
    pub fn slice(&self, start: usize, end: usize) -> Result<LabeledSet> {
        Ok(LabeledSet {
            images: self.images.slice_rows(start, end)?,
            labels: self.labels.slice_rows(start, end)?,
        })
    }

    /// The first `n` examples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Result<LabeledSet> {
        self.slice(0, n.min(self.len()))
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabeledSet> {
        Ok(LabeledSet {
            images: self.images.select_rows(indices)?,
            labels: self.labels.select_rows(indices)?,
        })
    }

    /// Integer class of every example.
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels
            .iter_rows()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }
}

/// Every row must be a one-hot vector: entries in {0, 1} summing to exactly 1.
pub fn check_one_hot(labels: &Tensor) -> Result<()> {
    for (i, row) in labels.iter_rows().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::invalid(format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

pub fn one_hot(classes: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(classes.len(), num_classes);
    for (i, &c) in classes.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::invalid(format!(
                "label {c} out of range for {num_classes} classes"
            )));
        }
        t.set(i, c, 1.0);
    }
    Ok(t)
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated IDX header".into()))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(Error::Format(format!(
                "truncated IDX payload: expected {len} bytes, found {}",
                rest.len()
            )));
        }
        Ok(&rest[..len])
    }
}

/// Parses an IDX3 image file already in memory. Pixels are scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let mut r = IdxReader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = r.u32()? as usize;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    if h != IMAGE_SIDE || w != IMAGE_SIDE {
        return Err(Error::Format(format!(
            "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, found {h}x{w}"
        )));
    }
    let payload = r.payload(count * IMAGE_DIM)?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::from_vec(count, IMAGE_DIM, data)
}

/// Parses an IDX1 label file already in memory into one-hot rows.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Tensor> {
    let mut r = IdxReader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = r.u32()? as usize;
    let payload = r.payload(count)?;
    let classes: Vec<usize> = payload.iter().map(|&b| usize::from(b)).collect();
    one_hot(&classes, NUM_CLASSES)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Tensor> {
    parse_idx_labels(&fs::read(path)?)
}

/// The four canonical MNIST file names inside a data directory.
pub fn mnist_files(dir: &Path) -> [std::path::PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// Loads the 60k training and 10k test sets from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(LabeledSet, LabeledSet)> {
    let [tri, trl, tei, tel] = mnist_files(dir.as_ref());
    let train = LabeledSet::new(load_idx_images(tri)?, load_idx_labels(trl)?)?;
    let test = LabeledSet::new(load_idx_images(tei)?, load_idx_labels(tel)?)?;
    Ok((train, test))
}

/// First 50,000 rows for training, last 10,000 for validation.
pub fn split_train_valid(set: &LabeledSet) -> Result<(LabeledSet, LabeledSet)> {
    let total = TRAIN_SIZE + VALID_SIZE;
    if set.len() != total {
        return Err(Error::invalid(format!(
            "train/validation split expects {total} rows, got {}",
            set.len()
        )));
    }
    Ok((set.slice(0, TRAIN_SIZE)?, set.slice(TRAIN_SIZE, total)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            batch_size,
            seed,
            drop_last: true,
        }
    }
}

/// Row indices of every batch in one epoch, from a Fisher–Yates permutation
/// drawn from `rng`.
pub fn epoch_indices(n: usize, batch_size: usize, drop_last: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if batch_size > n {
        return Err(Error::invalid(format!(
            "batch size {batch_size} exceeds dataset size {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

/// One shuffled epoch over `set` with the permutation seeded by `plan.seed`.
pub fn batches<'a>(set: &'a LabeledSet, plan: &BatchPlan) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let mut rng = Rng::new(plan.seed);
    let plan_idx = epoch_indices(set.len(), plan.batch_size, plan.drop_last, &mut rng)?;
    Ok(plan_idx.into_iter().map(move |idx| {
        Ok(Batch {
            x: set.images.select_rows(&idx)?,
            y: set.labels.select_rows(&idx)?,
        })
    }))
}

#[cfg(test)]
pub(crate) mod fixtures {
    /// Builds an IDX3 image file in memory.
    pub fn idx_images(magic: u32, count: u32, side: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [magic, count, side, side] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }
}

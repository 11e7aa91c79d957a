//! MNIST ingestion (IDX format) and its shuffled variants.
//!
//! Files are user-supplied paths; nothing here touches the network. The
//! loader validates the IDX headers (big-endian magic numbers 0x00000803
//! for images, 0x00000801 for labels), scales pixels to [0, 1] as f32, and
//! pairs each image file with its label file, erroring on any mismatch.
//!
//! Two controlled corruptions support the measurement experiments:
//!
//! * [`Dataset::shuffle_pixels`] draws **one** permutation of the flattened
//!   pixel index and applies it to every train and validation image, so
//!   per-image pixel multisets are preserved exactly.
//! * [`Dataset::shuffle_labels`] keeps a random ⌊fraction·n⌋ subset of the
//!   training examples and assigns them uniform random labels; validation
//!   data is untouched and the dataset is marked so sweeps measure
//!   training accuracy (validation accuracy stays at chance by design).

use ndarray::Array2;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::Stream;
use crate::tag;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Canonical MNIST file names, in (train images, train labels, val images,
/// val labels) order. The official 10k test split serves as validation.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// One images+labels collection: `inputs` is (n, width) with entries in
/// [0, 1], `labels` holds one class index per row.
#[derive(Debug, Clone)]
pub struct Split {
    pub inputs: Array2<f32>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Which metric a sweep treats as this dataset's performance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceMeasure {
    ValAccuracy,
    TrainAccuracy,
}

/// A supervised task: train/validation splits plus the metadata describing
/// any controlled corruption applied to them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub val: Split,
    pub classes: usize,
    pub measure: PerformanceMeasure,
    /// Seed of the single pixel permutation, when one was applied.
    pub pixel_shuffle_seed: Option<u64>,
    /// (seed, fraction) of the label shuffle, when one was applied.
    pub label_shuffle: Option<(u64, f64)>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Dataset(format!("{what}: file truncated inside the header")));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("slice of length 4")))
}

/// Parses an IDX image file into (count, rows, cols, pixels).
fn parse_idx_images<'a>(bytes: &'a [u8], what: &str) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad magic number {magic:#010x}, expected {IMAGE_MAGIC:#010x} (IDX images)"
        )));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Dataset(format!(
            "{what}: truncated image data ({} bytes, header promises {expected})",
            bytes.len()
        )));
    }
    Ok((count, rows, cols, &bytes[16..expected]))
}

/// Parses an IDX label file into its label bytes.
fn parse_idx_labels<'a>(bytes: &'a [u8], what: &str) -> Result<&'a [u8]> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad magic number {magic:#010x}, expected {LABEL_MAGIC:#010x} (IDX labels)"
        )));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Dataset(format!(
            "{what}: truncated label data ({} bytes, header promises {expected})",
            bytes.len()
        )));
    }
    Ok(&bytes[8..expected])
}

fn split_from_bytes(images: &[u8], labels: &[u8], what: &str) -> Result<Split> {
    let (count, rows, cols, pixels) = parse_idx_images(images, what)?;
    let label_bytes = parse_idx_labels(labels, what)?;
    if label_bytes.len() != count {
        return Err(Error::Dataset(format!(
            "{what}: {count} images but {} labels",
            label_bytes.len()
        )));
    }
    let width = rows * cols;
    let inputs = Array2::from_shape_fn((count, width), |(i, j)| {
        f32::from(pixels[i * width + j]) / 255.0
    });
    Ok(Split { inputs, labels: label_bytes.to_vec() })
}

/// Loads one images+labels pair of IDX files, scaling pixels to [0, 1].
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let images = fs::read(images_path).map_err(|e| {
        Error::Dataset(format!("cannot read image file {}: {e}", images_path.display()))
    })?;
    let labels = fs::read(labels_path).map_err(|e| {
        Error::Dataset(format!("cannot read label file {}: {e}", labels_path.display()))
    })?;
    split_from_bytes(&images, &labels, &images_path.display().to_string())
}

/// Loads the four canonical MNIST files from `dir`, using the official
/// test split as validation.
pub fn mnist_dataset(dir: &Path) -> Result<Dataset> {
    let train = load_mnist(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
    let val = load_mnist(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
    Dataset::from_splits("mnist", train, val, 10)
}

impl Dataset {
    pub fn from_splits(name: &str, train: Split, val: Split, classes: usize) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Dataset(format!("{name}: empty split")));
        }
        if train.input_dim() != val.input_dim() {
            return Err(Error::Dataset(format!(
                "{name}: train width {} differs from val width {}",
                train.input_dim(),
                val.input_dim()
            )));
        }
        for (which, split) in [("train", &train), ("val", &val)] {
            if let Some(bad) = split.labels.iter().find(|&&l| l as usize >= classes) {
                return Err(Error::Dataset(format!(
                    "{name}: {which} label {bad} out of range for {classes} classes"
                )));
            }
        }
        Ok(Dataset {
            name: name.to_string(),
            train,
            val,
            classes,
            measure: PerformanceMeasure::ValAccuracy,
            pixel_shuffle_seed: None,
            label_shuffle: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }

    /// Applies one random permutation of the pixel index to every train
    /// and validation image.
    pub fn shuffle_pixels(&mut self, seed: u64) {
        let width = self.input_dim();
        let perm = Stream::tagged(seed, &[tag::PIXEL_PERM]).permutation(width);
        for split in [&mut self.train, &mut self.val] {
            let mut scratch = vec![0.0f32; width];
            for mut row in split.inputs.rows_mut() {
                for (dst, &src) in perm.iter().enumerate() {
                    scratch[dst] = row[src];
                }
                for (slot, &v) in row.iter_mut().zip(&scratch) {
                    *slot = v;
                }
            }
        }
        self.pixel_shuffle_seed = Some(seed);
        self.name.push_str("+pixshuf");
    }

    /// Keeps a random ⌊fraction·n⌋ of the training examples and assigns
    /// them uniform random labels. Marks the dataset so sweeps measure
    /// training accuracy; the validation split is left untouched.
    pub fn shuffle_labels(&mut self, seed: u64, fraction: f64) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label-shuffle fraction must be in (0, 1], got {fraction}"
            )));
        }
        let n = self.train.len();
        let keep = ((fraction * n as f64).floor() as usize).min(n);
        if keep == 0 {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} keeps zero of the {n} training examples"
            )));
        }
        let mut chosen = Stream::tagged(seed, &[tag::LABEL_SUBSET]).permutation(n);
        chosen.truncate(keep);
        chosen.sort_unstable();

        let width = self.train.input_dim();
        let mut inputs = Array2::zeros((keep, width));
        let mut noise = Stream::tagged(seed, &[tag::LABEL_NOISE]);
        let mut labels = Vec::with_capacity(keep);
        for (row, &src) in chosen.iter().enumerate() {
            inputs.row_mut(row).assign(&self.train.inputs.row(src));
            labels.push(noise.below(self.classes as u64) as u8);
        }
        self.train = Split { inputs, labels };
        self.measure = PerformanceMeasure::TrainAccuracy;
        self.label_shuffle = Some((seed, fraction));
        self.name.push_str("+labshuf");
        Ok(())
    }

    /// Assembles the f64 staging batch for the given training rows.
    pub fn stage_batch(&self, indices: &[usize]) -> Batch {
        stage_batch(&self.train, indices)
    }
}

/// Copies the selected rows of a split into the f64 form the network eats.
pub fn stage_batch(split: &Split, indices: &[usize]) -> Batch {
    let width = split.input_dim();
    let mut inputs = Array2::zeros((indices.len(), width));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &src) in indices.iter().enumerate() {
        for (slot, &v) in inputs.row_mut(row).iter_mut().zip(split.inputs.row(src)) {
            *slot = f64::from(v);
        }
        labels.push(split.labels[src]);
    }
    Batch { inputs, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds IDX image bytes for `n` images of `rows`×`cols` pixels.
    fn idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        b.extend_from_slice(&(n as u32).to_be_bytes());
        b.extend_from_slice(&(rows as u32).to_be_bytes());
        b.extend_from_slice(&(cols as u32).to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn tiny_split() -> Split {
        // Three 2×2 images with recognizable pixel values.
        let pixels = [0u8, 255, 51, 102, 10, 20, 30, 40, 1, 2, 3, 4];
        let images = idx_images(3, 2, 2, &pixels);
        let labels = idx_labels(&[0, 1, 2]);
        split_from_bytes(&images, &labels, "test").unwrap()
    }

    #[test]
    fn parses_and_scales_synthetic_idx_bytes() {
        let s = tiny_split();
        assert_eq!(s.len(), 3);
        assert_eq!(s.input_dim(), 4);
        assert_eq!(s.inputs[(0, 0)], 0.0);
        assert_eq!(s.inputs[(0, 1)], 1.0); // 255 → 1.0
        assert!((s.inputs[(0, 2)] - 0.2).abs() < 1e-6); // 51/255
        assert_eq!(s.labels, vec![0, 1, 2]);
        assert!(s.inputs.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut images = idx_images(1, 2, 2, &[0; 4]);
        images[3] = 0x99;
        let err = split_from_bytes(&images, &idx_labels(&[0]), "test").unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let mut labels = idx_labels(&[0]);
        labels[3] = 0x42;
        let images = idx_images(1, 2, 2, &[0; 4]);
        let err = split_from_bytes(&images, &labels, "test").unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_files_are_rejected() {
        let mut images = idx_images(2, 2, 2, &[7; 8]);
        images.truncate(images.len() - 3);
        let err = split_from_bytes(&images, &idx_labels(&[0, 1]), "test").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let err = split_from_bytes(&idx_images(1, 2, 2, &[0; 4])[..10].to_vec().as_slice(), &idx_labels(&[0]), "test")
            .unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn image_label_count_mismatch_is_rejected() {
        let images = idx_images(2, 2, 2, &[0; 8]);
        let labels = idx_labels(&[0, 1, 2]);
        let err = split_from_bytes(&images, &labels, "test").unwrap_err();
        assert!(err.to_string().contains("2 images but 3 labels"), "{err}");
    }

    #[test]
    fn pixel_shuffle_is_one_shared_permutation() {
        let train = tiny_split();
        // Validation gets a copy of the train images, so after shuffling
        // the two splits must still match row for row.
        let val = train.clone();
        let mut ds = Dataset::from_splits("t", train.clone(), val, 3).unwrap();
        ds.shuffle_pixels(77);
        assert_eq!(ds.train.inputs, ds.val.inputs, "same permutation on both splits");
        assert_eq!(ds.pixel_shuffle_seed, Some(77));

        // Per-image pixel multisets are preserved.
        for i in 0..3 {
            let mut before: Vec<f32> = train.inputs.row(i).to_vec();
            let mut after: Vec<f32> = ds.train.inputs.row(i).to_vec();
            before.sort_by(f32::total_cmp);
            after.sort_by(f32::total_cmp);
            assert_eq!(before, after, "row {i}");
        }

        // Determinism: the permutation is a pure function of the seed.
        let mut ds2 = Dataset::from_splits("t", train.clone(), train.clone(), 3).unwrap();
        ds2.shuffle_pixels(77);
        assert_eq!(ds.train.inputs, ds2.train.inputs);

        // Labels never move.
        assert_eq!(ds.train.labels, train.labels);
    }

    #[test]
    fn label_shuffle_keeps_the_requested_fraction() {
        // 10 distinct single-pixel-coded examples.
        let pixels: Vec<u8> = (0..40).map(|i| if i % 4 == 0 { (i / 4 + 1) as u8 } else { 0 }).collect();
        let images = idx_images(10, 2, 2, &pixels);
        let labels = idx_labels(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let train = split_from_bytes(&images, &labels, "test").unwrap();
        let val = train.clone();
        let mut ds = Dataset::from_splits("t", train, val.clone(), 10).unwrap();

        ds.shuffle_labels(5, 0.5).unwrap();
        assert_eq!(ds.train.len(), 5, "⌊0.5·10⌋ examples kept");
        assert_eq!(ds.measure, PerformanceMeasure::TrainAccuracy);
        assert_eq!(ds.label_shuffle, Some((5, 0.5)));
        assert!(ds.train.labels.iter().all(|&l| l < 10));
        // Validation untouched.
        assert_eq!(ds.val.inputs, val.inputs);
        assert_eq!(ds.val.labels, val.labels);
        // Kept rows are genuine training rows (single-pixel code survives).
        for row in ds.train.inputs.rows() {
            let nonzero = row.iter().filter(|&&v| v > 0.0).count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn label_shuffle_rejects_bad_fractions() {
        let s = tiny_split();
        let mut ds = Dataset::from_splits("t", s.clone(), s, 3).unwrap();
        assert!(ds.shuffle_labels(0, 0.0).is_err());
        assert!(ds.shuffle_labels(0, 1.5).is_err());
        assert!(ds.shuffle_labels(0, -0.1).is_err());
        assert!(ds.shuffle_labels(0, 0.01).is_err()); // keeps zero of 3
    }

    #[test]
    fn shuffled_labels_agree_with_originals_about_ten_percent_of_the_time() {
        // 2000 examples, true labels uniform: uniform random relabeling
        // agrees ≈ 1/classes of the time.
        let n = 2000;
        let pixels = vec![0u8; n * 4];
        let images = idx_images(n, 2, 2, &pixels);
        let true_labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let labels = idx_labels(&true_labels);
        let train = split_from_bytes(&images, &labels, "test").unwrap();
        let val = tiny_split();
        let mut ds = Dataset::from_splits("t", train, val, 10).unwrap();
        ds.shuffle_labels(9, 1.0).unwrap();
        assert_eq!(ds.train.len(), n);
        let agree = ds
            .train
            .labels
            .iter()
            .zip(&true_labels)
            .filter(|(a, b)| a == b)
            .count() as f64
            / n as f64;
        assert!((agree - 0.1).abs() < 0.03, "agreement {agree}");
    }

    #[test]
    fn staging_converts_to_f64_rows() {
        let s = tiny_split();
        let ds = Dataset::from_splits("t", s, tiny_split(), 3).unwrap();
        let batch = ds.stage_batch(&[2, 0]);
        assert_eq!(batch.labels, vec![2, 0]);
        assert_eq!(batch.inputs.nrows(), 2);
        assert!((batch.inputs[(0, 0)] - 1.0 / 255.0).abs() < 1e-9);
        assert_eq!(batch.inputs[(1, 1)], 1.0);
    }

    #[test]
    fn mismatched_split_widths_are_rejected() {
        let a = tiny_split();
        let images = idx_images(1, 3, 3, &[0; 9]);
        let b = split_from_bytes(&images, &idx_labels(&[0]), "test").unwrap();
        assert!(Dataset::from_splits("t", a, b, 3).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let s = tiny_split(); // labels 0,1,2
        assert!(Dataset::from_splits("t", s.clone(), s, 2).is_err());
    }
}

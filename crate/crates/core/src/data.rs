//! MNIST ingestion, seeded splits and mini-batching.
//!
//! The IDX format is read bit-exactly: a 4-byte big-endian magic (2051 for
//! images, 2049 for labels), big-endian counts, then unsigned bytes. Files
//! whose name ends in `.gz` are transparently gunzipped. Images are flattened
//! row-major to 784-dimensional vectors and scaled to `[0, 1]` by dividing
//! by 255; no other pre-processing is applied.
//!
//! Splits and epoch permutations are driven by the crate's SplitMix64
//! generator, so a seed reproduces them exactly.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_SIDE: usize = 28;
pub const INPUT_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const N_CLASSES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated stream: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingData { extra: usize },
    #[error("unsupported image dimensions {rows}x{cols}, expected 28x28")]
    BadDimensions { rows: u32, cols: u32 },
    #[error("label {label} out of range 0..=9 at index {index}")]
    LabelOutOfRange { label: u8, index: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("split requests {requested} samples but dataset has {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing data file: tried {tried:?}")]
    MissingFile { tried: Vec<PathBuf> },
}

/// A labelled set of flattened images: `inputs` is `n x 784` with pixels in
/// `[0, 1]`, `labels[i]` is the class of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub inputs: Matrix<S>,
    pub labels: Vec<u8>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(inputs: Matrix<S>, labels: Vec<u8>) -> Result<Self, DataError> {
        if inputs.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given rows into a dense mini-batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix<S>, Vec<u8>) {
        let mut inputs = Matrix::zeros(indices.len(), self.inputs.cols());
        let mut labels = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            inputs.row_mut(b).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        (inputs, labels)
    }

    /// Seeded disjoint (train, validation) split.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset<S>, Dataset<S>), DataError> {
        let (train_idx, val_idx) = split_indices(self.len(), spec)?;
        let (ti, tl) = self.gather(&train_idx);
        let (vi, vl) = self.gather(&val_idx);
        Ok((
            Dataset {
                inputs: ti,
                labels: tl,
            },
            Dataset {
                inputs: vi,
                labels: vl,
            },
        ))
    }
}

/// Seeded split request: the first `train_count` entries of a seeded
/// permutation become the training set, the next `val_count` the validation
/// set. Index sets are disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub val_count: usize,
    pub seed: u64,
}

/// Index-level split; `Dataset::split` gathers rows on top of this.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let requested = spec.train_count + spec.val_count;
    if requested > n {
        return Err(DataError::SplitTooLarge {
            requested,
            available: n,
        });
    }
    let perm = SplitMix64::new(spec.seed).permutation(n);
    let train = perm[..spec.train_count].to_vec();
    let val = perm[spec.train_count..requested].to_vec();
    Ok((train, val))
}

/// A fresh seeded permutation of `0..n`, partitioned into consecutive slices
/// of `batch_size`; the final partial batch is kept so every sample is used
/// exactly once per epoch.
pub fn epoch_batches(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let perm = SplitMix64::new(epoch_seed).permutation(n);
    perm.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn read_be_u32(bytes: &[u8], offset: &mut usize) -> Result<u32, DataError> {
    let end = *offset + 4;
    if end > bytes.len() {
        return Err(DataError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    let v = u32::from_be_bytes(bytes[*offset..end].try_into().unwrap());
    *offset = end;
    Ok(v)
}

/// Parses an IDX image stream into an `n x 784` matrix with pixels in `[0,1]`.
pub fn parse_idx_images<S: Scalar>(bytes: &[u8]) -> Result<Matrix<S>, DataError> {
    let mut offset = 0;
    let magic = read_be_u32(bytes, &mut offset)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, &mut offset)? as usize;
    let rows = read_be_u32(bytes, &mut offset)?;
    let cols = read_be_u32(bytes, &mut offset)?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(DataError::BadDimensions { rows, cols });
    }
    let needed = offset + count * INPUT_DIM;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingData {
            extra: bytes.len() - needed,
        });
    }
    let data = bytes[offset..]
        .iter()
        .map(|&b| S::cast(f64::from(b) / 255.0))
        .collect();
    Ok(Matrix::from_vec(count, INPUT_DIM, data))
}

/// Parses an IDX label stream into a vector of class indices in `0..=9`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let mut offset = 0;
    let magic = read_be_u32(bytes, &mut offset)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, &mut offset)? as usize;
    let needed = offset + count;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(DataError::TrailingData {
            extra: bytes.len() - needed,
        });
    }
    let labels = bytes[offset..].to_vec();
    for (index, &label) in labels.iter().enumerate() {
        if label as usize >= N_CLASSES {
            return Err(DataError::LabelOutOfRange { label, index });
        }
    }
    Ok(labels)
}

/// Serializes pixels (recovered by rounding `pixel * 255`) to the IDX image
/// format; inverse of [`parse_idx_images`] for data that came from bytes.
pub fn write_idx_images<S: Scalar>(inputs: &Matrix<S>) -> Vec<u8> {
    assert_eq!(inputs.cols(), INPUT_DIM, "images must be flattened 28x28");
    let mut out = Vec::with_capacity(16 + inputs.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(inputs.rows() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend(
        inputs
            .as_slice()
            .iter()
            .map(|&p| (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Serializes labels to the IDX label format.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, gunzipping when the extension is `.gz`.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DataError> {
    let wrap = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path)
        .map_err(wrap)?
        .read_to_end(&mut raw)
        .map_err(wrap)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut decoded = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut decoded)
            .map_err(wrap)?;
        Ok(decoded)
    } else {
        Ok(raw)
    }
}

fn find_file(dir: &Path, stems: &[&str]) -> Result<PathBuf, DataError> {
    let mut tried = Vec::new();
    for stem in stems {
        for suffix in ["", ".gz"] {
            let candidate = dir.join(format!("{stem}{suffix}"));
            if candidate.is_file() {
                return Ok(candidate);
            }
            tried.push(candidate);
        }
    }
    Err(DataError::MissingFile { tried })
}

fn load_pair<S: Scalar>(
    dir: &Path,
    image_stems: &[&str],
    label_stems: &[&str],
) -> Result<Dataset<S>, DataError> {
    let images = parse_idx_images(&read_maybe_gzip(&find_file(dir, image_stems)?)?)?;
    let labels = parse_idx_labels(&read_maybe_gzip(&find_file(dir, label_stems)?)?)?;
    Dataset::new(images, labels)
}

/// Loads the MNIST training set (60000 images) from a directory, accepting
/// both the `train-images-idx3-ubyte` and `train-images.idx3-ubyte` naming
/// conventions, raw or gzipped.
pub fn load_train_set<S: Scalar>(dir: &Path) -> Result<Dataset<S>, DataError> {
    load_pair(
        dir,
        &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
        &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    )
}

/// Loads the MNIST test set (10000 images) from a directory.
pub fn load_test_set<S: Scalar>(dir: &Path) -> Result<Dataset<S>, DataError> {
    load_pair(
        dir,
        &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
        &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
    )
}

/// Synthetic MNIST-shaped dataset for tests and protocol demonstrations:
/// ten random 28x28 templates (one per class, fixed by `template_seed`),
/// each sample a template plus pixel noise, quantized to byte pixels like
/// real IDX data. Matching train/test sets share a `template_seed` and
/// differ in `sample_seed`.
pub fn synthetic_dataset<S: Scalar>(
    n: usize,
    noise: f64,
    template_seed: u64,
    sample_seed: u64,
) -> Dataset<S> {
    let mut template_rng = SplitMix64::new(template_seed);
    let mut templates = Vec::with_capacity(N_CLASSES);
    for _ in 0..N_CLASSES {
        let t: Vec<f64> = (0..INPUT_DIM).map(|_| template_rng.next_f64()).collect();
        templates.push(t);
    }
    let mut rng = SplitMix64::new(sample_seed);
    let mut inputs = Matrix::zeros(n, INPUT_DIM);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = rng.next_below(N_CLASSES as u64) as u8;
        let template = &templates[class as usize];
        for (j, out) in inputs.row_mut(i).iter_mut().enumerate() {
            let pixel = (template[j] + noise * rng.next_gaussian()).clamp(0.0, 1.0);
            let byte = (pixel * 255.0).round();
            *out = S::cast(byte / 255.0);
        }
        labels.push(class);
    }
    Dataset { inputs, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_header(count: u32) -> Vec<u8> {
        let mut h = Vec::new();
        h.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        h.extend_from_slice(&count.to_be_bytes());
        h.extend_from_slice(&28u32.to_be_bytes());
        h.extend_from_slice(&28u32.to_be_bytes());
        h
    }

    #[test]
    fn parses_single_zero_image() {
        let mut bytes = image_header(1);
        bytes.extend(std::iter::repeat_n(0u8, INPUT_DIM));
        let m: Matrix<f64> = parse_idx_images(&bytes).unwrap();
        assert_eq!(m.shape(), (1, INPUT_DIM));
        assert!(m.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn label_magic_rejected_by_image_parser() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&1u32.to_be_bytes());
        let err = parse_idx_images::<f64>(&bytes).unwrap_err();
        assert!(matches!(
            err,
            DataError::BadMagic {
                expected: IMAGE_MAGIC,
                found: LABEL_MAGIC
            }
        ));
    }

    #[test]
    fn full_brightness_scales_to_one() {
        let mut bytes = image_header(1);
        bytes.extend(std::iter::repeat_n(255u8, INPUT_DIM));
        let m: Matrix<f64> = parse_idx_images(&bytes).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, INPUT_DIM - 1), 1.0);
    }

    #[test]
    fn wrong_image_dimensions_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&14u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend(std::iter::repeat_n(0u8, 14 * 28));
        let err = parse_idx_images::<f64>(&bytes).unwrap_err();
        assert!(matches!(
            err,
            DataError::BadDimensions { rows: 14, cols: 28 }
        ));
    }

    #[test]
    fn labels_decode_directly() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 9, 5]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 9, 5]);
    }

    #[test]
    fn label_ten_rejected() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[3, 10]);
        let err = parse_idx_labels(&bytes).unwrap_err();
        assert!(matches!(
            err,
            DataError::LabelOutOfRange {
                label: 10,
                index: 1
            }
        ));
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2]);
        let err = parse_idx_labels(&bytes).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                needed: 12,
                available: 10
            }
        ));
    }

    #[test]
    fn truncated_image_payload_rejected() {
        let mut bytes = image_header(2);
        bytes.extend(std::iter::repeat_n(0u8, INPUT_DIM)); // one image short
        assert!(matches!(
            parse_idx_images::<f64>(&bytes).unwrap_err(),
            DataError::Truncated { .. }
        ));
    }

    #[test]
    fn idx_round_trip_on_synthetic_fixture() {
        let ds: Dataset<f64> = synthetic_dataset(3, 0.05, 99, 1);
        let images = write_idx_images(&ds.inputs);
        let labels = write_idx_labels(&ds.labels);
        let back = Dataset::new(
            parse_idx_images::<f64>(&images).unwrap(),
            parse_idx_labels(&labels).unwrap(),
        )
        .unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn gzip_round_trip() {
        use std::io::Write;
        let ds: Dataset<f64> = synthetic_dataset(2, 0.0, 7, 1);
        let raw = write_idx_images(&ds.inputs);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.idx3-ubyte.gz");
        std::fs::write(&path, &gz).unwrap();
        let decoded = read_maybe_gzip(&path).unwrap();
        assert_eq!(decoded, raw);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let spec = SplitSpec {
            train_count: 6,
            val_count: 3,
            seed: 42,
        };
        let (t1, v1) = split_indices(10, &spec).unwrap();
        let (t2, v2) = split_indices(10, &spec).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert!(t1.iter().all(|i| !v1.contains(i)));
    }

    #[test]
    fn splits_with_different_seeds_differ() {
        let a = split_indices(
            100,
            &SplitSpec {
                train_count: 50,
                val_count: 25,
                seed: 1,
            },
        )
        .unwrap();
        let b = split_indices(
            100,
            &SplitSpec {
                train_count: 50,
                val_count: 25,
                seed: 2,
            },
        )
        .unwrap();
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn empty_validation_split_allowed() {
        let ds: Dataset<f64> = synthetic_dataset(4, 0.0, 3, 1);
        let (train, val) = ds
            .split(&SplitSpec {
                train_count: 4,
                val_count: 0,
                seed: 0,
            })
            .unwrap();
        assert_eq!(train.len(), 4);
        assert!(val.is_empty());
    }

    #[test]
    fn oversized_split_rejected() {
        let err = split_indices(
            10,
            &SplitSpec {
                train_count: 8,
                val_count: 3,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DataError::SplitTooLarge {
                requested: 11,
                available: 10
            }
        ));
    }

    #[test]
    fn full_mnist_split_sizes() {
        let (train, val) = split_indices(
            60_000,
            &SplitSpec {
                train_count: 50_000,
                val_count: 10_000,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(train.len(), 50_000);
        assert_eq!(val.len(), 10_000);
    }

    #[test]
    fn batches_partition_with_final_partial() {
        let batches = epoch_batches(5, 2, 17);
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![2, 2, 1]
        );
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batches_deterministic_per_seed() {
        assert_eq!(epoch_batches(100, 7, 3), epoch_batches(100, 7, 3));
        assert_ne!(epoch_batches(100, 7, 3), epoch_batches(100, 7, 4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn every_epoch_partitions_all_indices(
            n in 1usize..200,
            batch in 1usize..32,
            seed in 0u64..1000,
        ) {
            let batches = epoch_batches(n, batch, seed);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for b in &batches[..batches.len().saturating_sub(1)] {
                prop_assert_eq!(b.len(), batch);
            }
        }
    }
}

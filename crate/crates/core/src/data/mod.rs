//! Datasets: the XOR table, IDX images, preprocessing, splits and pixel masks.

mod idx;

pub use idx::{encode_idx, load_idx, parse_idx, MnistFiles, RawIdx, IMAGE_MAGIC, LABEL_MAGIC};

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images in `[-1, 1]` (one per row) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub images: Array2<S>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Array2<S>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {l} outside 0..{n_classes}")));
        }
        if images.iter().any(|v| !(v.abs() <= S::one())) {
            return Err(Error::Data("pixel values must lie in [-1, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            n_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            split: self.split,
        }
    }

    /// First `n` rows (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// `len x n_classes` one-hot label matrix.
    pub fn one_hot_labels(&self) -> Array2<S> {
        one_hot_matrix(&self.labels, self.n_classes)
    }
}

/// `[0, .., 1, .., 0]` with the 1 at `label`.
pub fn one_hot<S: Scalar>(label: usize, k: usize) -> Array1<S> {
    let mut v = Array1::zeros(k);
    v[label] = S::one();
    v
}

pub fn one_hot_matrix<S: Scalar>(labels: &[usize], k: usize) -> Array2<S> {
    let mut m = Array2::zeros((labels.len(), k));
    for (r, &l) in labels.iter().enumerate() {
        m[[r, l]] = S::one();
    }
    m
}

/// Label-layer targets: one-hot when the layer has one neuron per class,
/// or a single `{0, 1}` neuron for two classes.
pub fn label_targets<S: Scalar>(labels: &[usize], n_classes: usize, width: usize) -> Result<Array2<S>> {
    if width == n_classes {
        Ok(one_hot_matrix(labels, n_classes))
    } else if width == 1 && n_classes == 2 {
        Ok(Array2::from_shape_fn((labels.len(), 1), |(r, _)| S::of(labels[r] as f64)))
    } else {
        Err(Error::InvalidArgument(format!(
            "label layer of width {width} cannot encode {n_classes} classes"
        )))
    }
}

/// Inverse of [`label_targets`]: argmax over the label block, or a 0.5
/// threshold for a single binary neuron.
pub fn decode_labels<S: Scalar>(outputs: ArrayView2<'_, S>, n_classes: usize) -> Result<Vec<usize>> {
    let width = outputs.ncols();
    if width == 1 && n_classes == 2 {
        return Ok(outputs.iter().map(|&v| usize::from(v.as_f64() > 0.5)).collect());
    }
    if width < n_classes || n_classes == 0 {
        return Err(Error::InvalidArgument(format!(
            "label block of {n_classes} classes does not fit width {width}"
        )));
    }
    Ok(outputs
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for k in 1..n_classes {
                if r[k] > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Maps a byte in `[0, 255]` linearly onto `[-1, 1]`.
pub fn normalize_pixel<S: Scalar>(p: u8) -> S {
    S::of(p as f64 / 127.5 - 1.0)
}

/// Inverse of [`normalize_pixel`], clamped to the byte range.
pub fn denormalize_pixel<S: Scalar>(v: S) -> u8 {
    ((v.as_f64() + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// The XOR truth table with inputs in `{-1, 1}`; label 1 marks output 1.
pub fn xor_dataset<S: Scalar>() -> Dataset<S> {
    let rows = [(-1.0, -1.0, 0), (-1.0, 1.0, 1), (1.0, -1.0, 1), (1.0, 1.0, 0)];
    let images = Array2::from_shape_fn((4, 2), |(r, c)| {
        S::of(if c == 0 { rows[r].0 } else { rows[r].1 })
    });
    Dataset {
        images,
        labels: rows.iter().map(|r| r.2).collect(),
        n_classes: 2,
        split: Split::Train,
    }
}

/// XOR output value (`-1` or `1`) of a label.
pub fn xor_output(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

fn to_dataset<S: Scalar>(raw: &RawIdx, idx: &[usize], k: usize, split: Split) -> Result<Dataset<S>> {
    let d = raw.dim();
    let mut images = Array2::zeros((idx.len(), d));
    let mut labels = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        for (dst, &p) in images.row_mut(r).iter_mut().zip(raw.image(i)) {
            *dst = normalize_pixel(p);
        }
        let l = raw.labels[i] as usize;
        if l >= k {
            return Err(Error::Data(format!("label {l} inconsistent with {k} classes")));
        }
        labels.push(l);
    }
    Ok(Dataset {
        images,
        labels,
        n_classes: k,
        split,
    })
}

/// Train, validation and test sets.
#[derive(Debug, Clone)]
pub struct Splits<S> {
    pub train: Dataset<S>,
    pub val: Dataset<S>,
    pub test: Dataset<S>,
}

/// Normalizes pixels and splits the evaluation set 50/50 into validation
/// and test by a permutation seeded with `eval_split_seed`.
pub fn preprocess<S: Scalar>(
    train: &RawIdx,
    eval: &RawIdx,
    n_classes: usize,
    eval_split_seed: u64,
) -> Result<Splits<S>> {
    if train.dim() != eval.dim() {
        return Err(Error::Data("train and evaluation images differ in size".into()));
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let mut perm: Vec<usize> = (0..eval.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(eval_split_seed));
    let half = eval.len() / 2;
    Ok(Splits {
        train: to_dataset(train, &all, n_classes, Split::Train)?,
        val: to_dataset(eval, &perm[..half], n_classes, Split::Val)?,
        test: to_dataset(eval, &perm[half..], n_classes, Split::Test)?,
    })
}

/// Missing-pixel positions (`true` = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub missing: Array2<bool>,
    pub fraction: f64,
    pub seed: u64,
}

impl PixelMask {
    /// Complement of `missing`: the coordinates to clamp.
    pub fn observed(&self) -> Array2<bool> {
        self.missing.mapv(|m| !m)
    }
}

/// Zeroes `round(fraction * d)` uniformly chosen pixels of every image.
pub fn mask_pixels<S: Scalar>(
    images: &Array2<S>,
    fraction: f64,
    seed: u64,
) -> Result<(Array2<S>, PixelMask)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "missing fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let (n, d) = images.dim();
    let k = (fraction * d as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut missing = Array2::from_elem((n, d), false);
    let mut out = images.clone();
    for r in 0..n {
        for c in rand::seq::index::sample(&mut rng, d, k) {
            missing[[r, c]] = true;
            out[[r, c]] = S::zero();
        }
    }
    Ok((
        out,
        PixelMask {
            missing,
            fraction,
            seed,
        },
    ))
}

/// Seeded stand-in for a digit dataset: each class is a fixed arrangement of
/// Gaussian blobs on a `side x side` grid, with per-sample jitter and noise.
pub fn synthetic_digits<S: Scalar>(
    n: usize,
    side: usize,
    n_classes: usize,
    seed: u64,
) -> Dataset<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    let protos: Vec<Vec<(f64, f64)>> = (0..n_classes)
        .map(|_| {
            (0..3)
                .map(|_| (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s)))
                .collect()
        })
        .collect();
    let width = 0.12 * s;
    let mut images = Array2::zeros((n, side * side));
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let class = r % n_classes;
        labels.push(class);
        let shift: (f64, f64) = (rng.random_range(-0.05 * s..0.05 * s), rng.random_range(-0.05 * s..0.05 * s));
        for (p, v) in images.row_mut(r).iter_mut().enumerate() {
            let (y, x) = ((p / side) as f64, (p % side) as f64);
            let ink: f64 = protos[class]
                .iter()
                .map(|&(cy, cx)| {
                    let (dy, dx) = (y - cy - shift.0, x - cx - shift.1);
                    (-(dy * dy + dx * dx) / (2.0 * width * width)).exp()
                })
                .sum();
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
            *v = S::of((2.0 * ink.min(1.0) - 1.0 + noise).clamp(-1.0, 1.0));
        }
    }
    Dataset {
        images,
        labels,
        n_classes,
        split: Split::Train,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn xor_rows() {
        let d = xor_dataset::<f64>();
        assert_eq!(d.len(), 4);
        assert_eq!(d.images.row(0).to_vec(), vec![-1.0, -1.0]);
        assert_eq!(xor_output(d.labels[0]), -1.0);
        assert_eq!(d.images.row(1).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(xor_output(d.labels[1]), 1.0);
    }

    #[test]
    fn pixel_endpoints_and_inverse() {
        assert_eq!(normalize_pixel::<f64>(0), -1.0);
        assert_eq!(normalize_pixel::<f64>(255), 1.0);
        for p in 0..=255u8 {
            assert_eq!(denormalize_pixel(normalize_pixel::<f64>(p)), p);
            assert_eq!(denormalize_pixel(normalize_pixel::<f32>(p)), p);
        }
    }

    #[test]
    fn one_hot_example() {
        assert_eq!(one_hot::<f64>(2, 4), array![0.0, 0.0, 1.0, 0.0]);
    }

    fn raw(n: usize, seed: u64) -> RawIdx {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RawIdx {
            rows: 2,
            cols: 2,
            pixels: (0..n * 4).map(|_| rng.random()).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
        }
    }

    #[test]
    fn split_is_partition() {
        let s = preprocess::<f64>(&raw(20, 1), &raw(10_000, 2), 10, 7).unwrap();
        assert_eq!(s.val.len(), 5_000);
        assert_eq!(s.test.len(), 5_000);
        assert_eq!(s.train.len(), 20);
        let again = preprocess::<f64>(&raw(20, 1), &raw(10_000, 2), 10, 7).unwrap();
        assert_eq!(s.val, again.val);
    }

    #[test]
    fn inconsistent_classes_error() {
        assert!(matches!(
            preprocess::<f64>(&raw(20, 1), &raw(4, 2), 5, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn mask_counts() {
        let imgs = Array2::from_elem((3, 784), 0.5f64);
        let (out, m) = mask_pixels(&imgs, 0.5, 3).unwrap();
        for r in 0..3 {
            assert_eq!(m.missing.row(r).iter().filter(|&&b| b).count(), 392);
            assert_eq!(out.row(r).iter().filter(|&&v| v == 0.0).count(), 392);
        }
        let (_, m2) = mask_pixels(&imgs, 0.5, 3).unwrap();
        assert_eq!(m, m2);
        let (same, m0) = mask_pixels(&imgs, 0.0, 3).unwrap();
        assert_eq!(same, imgs);
        assert!(m0.missing.iter().all(|&b| !b));
        assert!(mask_pixels(&imgs, 1.5, 0).is_err());
    }

    #[test]
    fn mask_marginal_within_binomial_bounds() {
        let d = 20;
        let trials = 4000;
        let frac = 0.3;
        let imgs = Array2::<f64>::zeros((trials, d));
        let (_, m) = mask_pixels(&imgs, frac, 11).unwrap();
        let p = (frac * d as f64).round() / d as f64;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in 0..d {
            let hits = m.missing.column(c).iter().filter(|&&b| b).count() as f64;
            assert!((hits - trials as f64 * p).abs() <= 3.0 * sd, "pixel {c}: {hits}");
        }
    }

    #[test]
    fn synthetic_digits_valid() {
        let d = synthetic_digits::<f64>(50, 8, 5, 1);
        let checked = Dataset::new(d.images.clone(), d.labels.clone(), 5, Split::Train).unwrap();
        assert_eq!(checked.len(), 50);
        assert_eq!(synthetic_digits::<f64>(50, 8, 5, 1), d);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(array![[2.0f64]], vec![0], 1, Split::Train).is_err());
        assert!(Dataset::new(array![[0.0f64]], vec![1], 1, Split::Train).is_err());
    }
}

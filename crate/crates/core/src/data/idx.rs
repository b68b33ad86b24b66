use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file and its label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawIdx {
    pub rows: usize,
    pub cols: usize,
    /// `n * rows * cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawIdx {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX buffer with the given magic; returns dims and payload.
pub fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok((dims, &payload[..expected]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image file (magic 0x803) and its label file (magic 0x801).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawIdx> {
    let img_bytes = read(images_path)?;
    let lab_bytes = read(labels_path)?;
    let (dims, pixels) = parse_idx(&img_bytes, IMAGE_MAGIC, images_path)?;
    let (ldims, labels) = parse_idx(&lab_bytes, LABEL_MAGIC, labels_path)?;
    if dims[0] != ldims[0] {
        return Err(Error::IdxCountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    Ok(RawIdx {
        rows: dims[1],
        cols: dims[2],
        pixels: pixels.to_vec(),
        labels: labels.to_vec(),
    })
}

/// Serializes images and labels back to IDX buffers.
pub fn encode_idx(raw: &RawIdx) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + raw.pixels.len());
    for v in [IMAGE_MAGIC, raw.len() as u32, raw.rows as u32, raw.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&raw.pixels);
    let mut lab = Vec::with_capacity(8 + raw.labels.len());
    for v in [LABEL_MAGIC, raw.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&raw.labels);
    (img, lab)
}

/// Standard MNIST file names inside a directory.
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }

    /// `(train, eval)` raw sets.
    pub fn load(&self) -> Result<(RawIdx, RawIdx)> {
        Ok((
            load_idx(&self.train_images, &self.train_labels)?,
            load_idx(&self.test_images, &self.test_labels)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, raw: &RawIdx) -> (PathBuf, PathBuf) {
        let (img, lab) = encode_idx(raw);
        let (pi, pl) = (dir.join("img"), dir.join("lab"));
        fs::write(&pi, img).unwrap();
        fs::write(&pl, lab).unwrap();
        (pi, pl)
    }

    fn sample() -> RawIdx {
        RawIdx {
            rows: 2,
            cols: 3,
            pixels: (0..12).map(|v| v * 20).collect(),
            labels: vec![7, 1],
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = write(dir.path(), &sample());
        assert_eq!(load_idx(&pi, &pl).unwrap(), sample());
    }

    #[test]
    fn magic_constants() {
        let (img, lab) = encode_idx(&sample());
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        assert_eq!(&lab[..4], &[0, 0, 8, 1]);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawIdx {
            rows: 28,
            cols: 28,
            pixels: vec![],
            labels: vec![],
        };
        let (pi, pl) = write(dir.path(), &raw);
        assert!(load_idx(&pi, &pl).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = write(dir.path(), &sample());
        // swapped files -> bad magic
        assert!(matches!(load_idx(&pl, &pi), Err(Error::IdxMagic { .. })));
        // truncated payload
        let mut img = fs::read(&pi).unwrap();
        img.truncate(img.len() - 1);
        fs::write(&pi, &img).unwrap();
        assert!(matches!(load_idx(&pi, &pl), Err(Error::IdxTruncated { .. })));
        // count mismatch
        let mut other = sample();
        other.labels.push(3);
        other.pixels.extend(0..6);
        let (_, lab) = encode_idx(&other);
        let (img, _) = encode_idx(&sample());
        fs::write(&pi, img).unwrap();
        fs::write(&pl, lab).unwrap();
        assert!(matches!(
            load_idx(&pi, &pl),
            Err(Error::IdxCountMismatch { images: 2, labels: 3 })
        ));
    }
}

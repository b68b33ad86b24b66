use std::path::Path;

use ndarray::ArrayView2;

use crate::data::denormalize_pixel;
use crate::{Error, Result, Scalar};

/// Binary PGM (P5, 8-bit) tiling square images row-major into a grid with
/// `cols` tiles per row and a one-pixel black border between tiles.
pub fn image_grid_pgm<S: Scalar>(images: ArrayView2<'_, S>, cols: usize) -> Result<Vec<u8>> {
    let d = images.ncols();
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d || side == 0 {
        return Err(Error::Shape(format!("images of {d} pixels are not square")));
    }
    let n = images.nrows().max(1);
    let cols = cols.clamp(1, n);
    let rows = n.div_ceil(cols);
    let (w, h) = (cols * (side + 1) + 1, rows * (side + 1) + 1);
    let mut px = vec![0u8; w * h];
    for (i, img) in images.rows().into_iter().enumerate() {
        let (ty, tx) = (i / cols, i % cols);
        for (j, &v) in img.iter().enumerate() {
            let (y, x) = (ty * (side + 1) + 1 + j / side, tx * (side + 1) + 1 + j % side);
            px[y * w + x] = denormalize_pixel(v);
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

pub fn write_pgm_grid<S: Scalar>(path: &Path, images: ArrayView2<'_, S>, cols: usize) -> Result<()> {
    crate::io::write_atomic(path, &image_grid_pgm(images, cols)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_size() {
        let imgs = ndarray::Array2::<f64>::from_elem((3, 4), 1.0);
        let bytes = image_grid_pgm(imgs.view(), 2).unwrap();
        let header = b"P5\n7 7\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 49);
        assert_eq!(bytes[header.len() + 7 + 1], 255);
        assert!(image_grid_pgm(ndarray::Array2::<f64>::zeros((1, 3)).view(), 1).is_err());
    }
}

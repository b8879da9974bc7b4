//! PGM/PPM writers for eyeballing reconstructions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write a [h,w] or [1,h,w] tensor as binary PGM, or a [3,h,w] tensor as
/// binary PPM. Values are clamped to [0, 1] and scaled to 8 bits.
pub fn write_image(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = match img.shape() {
        [h, w] => (1, *h, *w),
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        other => {
            return Err(Error::InvalidArgument(format!(
                "cannot write {other:?} as pgm/ppm (need 1 or 3 channels)"
            )))
        }
    };
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut bytes = Vec::with_capacity(32 + c * h * w);
    if c == 1 {
        bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
        bytes.extend(img.data().iter().map(|&v| byte(v)));
    } else {
        // planar [3,h,w] to interleaved rgb
        bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    bytes.push(byte(img.at3(ch, y, x)));
                }
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_pgm_and_ppm_headers() {
        let tmp = tempfile::tempdir().unwrap();
        let grey = Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 0.1, 0.9, 2.0]).unwrap();
        let p = tmp.path().join("g.pgm");
        write_image(&p, &grey).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert_eq!(*bytes.last().unwrap(), 255); // clamped

        let rgb = Tensor::new(vec![3, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = tmp.path().join("c.ppm");
        write_image(&p, &rgb).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        // pixel 0: r=255 g=0 b=0; pixel 1: r=0 g=255 b=0
        assert_eq!(&bytes[11..], &[255, 0, 0, 0, 255, 0]);
    }
}

//! Grayscale conversion, resizing, and normalization to network input.

use crate::dataset::RawImage;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Network input edge length.
pub const INPUT_SIZE: usize = 32;

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up.
///
/// Computed in integer thousandths so the rounding is exact.
pub fn rgb_to_gray(img: &RawImage) -> RawImage {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let (r, g, b) = (p[0] as u32, p[1] as u32, p[2] as u32);
            ((299 * r + 587 * g + 114 * b + 500) / 1000).min(255) as u8
        })
        .collect();
    RawImage {
        rows: img.rows,
        cols: img.cols,
        channels: 1,
        pixels,
    }
}

fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Source sample positions for one axis: `(lo, hi, frac)` per output index.
fn sample_axis(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    let last = (src_len - 1) as f64;
    (0..dst_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel-centred sampling; single-channel input.
pub fn resize_bilinear(img: &RawImage, out_rows: usize, out_cols: usize) -> Result<RawImage> {
    if img.channels != 1 {
        return Err(Error::dimension(
            "resize_bilinear",
            "1 channel",
            img.channels,
        ));
    }
    if img.rows == 0 || img.cols == 0 || out_rows == 0 || out_cols == 0 {
        return Err(Error::dimension(
            "resize_bilinear",
            "positive dimensions",
            format!("{}x{} -> {out_rows}x{out_cols}", img.rows, img.cols),
        ));
    }
    let ys = sample_axis(img.rows, out_rows);
    let xs = sample_axis(img.cols, out_cols);
    let mut pixels = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |r, c| img.at(r, c) as f64;
            let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
            let bottom = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
            pixels.push(round_u8(top + (bottom - top) * fy));
        }
    }
    RawImage::gray(out_rows, out_cols, pixels)
}

/// `v / 127.5 - 1`, mapping `[0, 255]` onto `[-1, 1]`.
pub fn normalize(img: &RawImage) -> Result<Tensor> {
    if img.channels != 1 || img.rows != INPUT_SIZE || img.cols != INPUT_SIZE {
        return Err(Error::dimension(
            "normalize",
            format!("{INPUT_SIZE}x{INPUT_SIZE}x1"),
            format!("{}x{}x{}", img.rows, img.cols, img.channels),
        ));
    }
    let data = img.pixels.iter().map(|&v| v as f64 / 127.5 - 1.0).collect();
    Tensor::from_vec(Shape::new(1, INPUT_SIZE, INPUT_SIZE), data)
}

/// Gray -> 32x32 -> `[-1, 1]`.
pub fn preprocess(img: &RawImage) -> Result<Tensor> {
    let gray = rgb_to_gray(img);
    let small = resize_bilinear(&gray, INPUT_SIZE, INPUT_SIZE)?;
    normalize(&small)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: u8, g: u8, b: u8) -> RawImage {
        RawImage::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn bt601_fixtures() {
        assert_eq!(rgb_to_gray(&rgb(255, 255, 255)).pixels, vec![255]);
        assert_eq!(rgb_to_gray(&rgb(255, 0, 0)).pixels, vec![76]);
        assert_eq!(rgb_to_gray(&rgb(0, 255, 0)).pixels, vec![150]);
        assert_eq!(rgb_to_gray(&rgb(0, 0, 255)).pixels, vec![29]);
        assert_eq!(rgb_to_gray(&rgb(0, 0, 0)).pixels, vec![0]);
        let gray = RawImage::gray(1, 3, vec![9, 8, 7]).unwrap();
        assert_eq!(rgb_to_gray(&gray), gray);
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let pixels: Vec<u8> = (0..1024).map(|i| (i * 37 % 256) as u8).collect();
        let img = RawImage::gray(32, 32, pixels).unwrap();
        assert_eq!(resize_bilinear(&img, 32, 32).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        for (r, c) in [(1, 1), (5, 77), (480, 640), (33, 31)] {
            let img = RawImage::gray(r, c, vec![173; r * c]).unwrap();
            let out = resize_bilinear(&img, 32, 32).unwrap();
            assert!(out.pixels.iter().all(|&v| v == 173), "{r}x{c}");
        }
    }

    #[test]
    fn resize_seam() {
        // Output column j samples source x = 2j + 0.5, so column 15 reads source
        // columns 30 and 31 (both in the left half) and column 16 reads 32 and 33.
        let pixels: Vec<u8> = (0..64 * 64)
            .map(|i| if i % 64 < 32 { 100 } else { 200 })
            .collect();
        let img = RawImage::gray(64, 64, pixels).unwrap();
        let out = resize_bilinear(&img, 32, 32).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let want = if c <= 15 { 100 } else { 200 };
                assert_eq!(out.at(r, c), want, "({r},{c})");
            }
        }
    }

    #[test]
    fn resize_upsample_interpolates() {
        let img = RawImage::gray(1, 2, vec![0, 100]).unwrap();
        let out = resize_bilinear(&img, 1, 4).unwrap();
        // x = -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1)
        assert_eq!(out.pixels, vec![0, 25, 75, 100]);
    }

    #[test]
    fn normalize_endpoints() {
        let mut pixels = vec![0u8; 1024];
        pixels[1] = 255;
        pixels[2] = 128;
        let t = normalize(&RawImage::gray(32, 32, pixels).unwrap()).unwrap();
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - 0.003_921_568_627_451).abs() < 1e-12);
        assert!(normalize(&RawImage::gray(16, 16, vec![0; 256]).unwrap()).is_err());
    }

    #[test]
    fn preprocess_is_deterministic_and_bounded() {
        let pixels: Vec<u8> = (0..50 * 70 * 3).map(|i| (i * 91 % 256) as u8).collect();
        let img = RawImage::new(50, 70, 3, pixels).unwrap();
        let a = preprocess(&img).unwrap();
        let b = preprocess(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

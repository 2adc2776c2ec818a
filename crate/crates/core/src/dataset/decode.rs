//! Minimal decoders for binary PGM (P5), binary PPM (P6), and 8-bit PNG.

use std::io::Cursor;

use crate::error::{Error, Result};

/// 8-bit pixels, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    /// 1 (gray) or 3 (RGB)
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(rows: usize, cols: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::dimension(
                "RawImage::new",
                "1 or 3 channels",
                channels,
            ));
        }
        if pixels.len() != rows * cols * channels {
            return Err(Error::dimension(
                "RawImage::new",
                rows * cols * channels,
                pixels.len(),
            ));
        }
        Ok(RawImage {
            rows,
            cols,
            channels,
            pixels,
        })
    }

    pub fn gray(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        RawImage::new(rows, cols, 1, pixels)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }
}

/// Sniffs the format from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<RawImage> {
    match bytes {
        [b'P', b'5', ..] => decode_pnm(bytes, 1),
        [b'P', b'6', ..] => decode_pnm(bytes, 3),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(Error::Decode(
            "unrecognized image format (expected P5, P6, or PNG)".into(),
        )),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Decode(format!(
                "malformed PNM header: missing {what}"
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode(format!("malformed PNM header: bad {what}")))
    }
}

fn decode_pnm(bytes: &[u8], channels: usize) -> Result<RawImage> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let cols = cur.number("width")?;
    let rows = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if cols == 0 || rows == 0 {
        return Err(Error::Decode(format!(
            "malformed PNM header: {cols}x{rows} image"
        )));
    }
    if maxval != 255 {
        return Err(Error::Decode(format!(
            "unsupported PNM maxval {maxval} (only 8-bit, maxval 255)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::Decode(
                "malformed PNM header: no separator after maxval".into(),
            ))
        }
    }
    let needed = rows * cols * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < needed {
        return Err(Error::Decode(format!(
            "truncated PNM payload: {rows}x{cols}x{channels} needs {needed} bytes, found {}",
            payload.len()
        )));
    }
    RawImage::new(rows, cols, channels, payload[..needed].to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<RawImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("PNG: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Decode(format!(
            "unsupported PNG bit depth {:?} (only 8-bit)",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Decode(format!(
                "unsupported PNG color type {other:?} (only 8-bit gray or RGB)"
            )))
        }
    };
    if info.interlaced {
        return Err(Error::Decode("interlaced PNG is not supported".into()));
    }
    let (cols, rows) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(format!("PNG: {e}")))?;
    buf.truncate(frame.buffer_size());
    RawImage::new(rows, cols, channels, buf)
}

/// Binary PGM/PPM bytes for a 1- or 3-channel image.
pub fn encode_pnm(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(cols: u32, rows: u32, color: png::ColorType, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, cols, rows);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn p5_two_by_two() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([1, 2, 3, 4]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.rows, img.cols, img.channels), (2, 2, 1));
        assert_eq!(img.pixels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn p6_two_by_two() {
        let mut bytes = b"P6\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend(0..12u8);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.rows, img.cols, img.channels), (2, 2, 3));
        assert_eq!(img.pixels.len(), 12);
    }

    #[test]
    fn p5_truncated() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend([1, 2, 3]);
        let msg = decode_image(&bytes).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
    }

    #[test]
    fn pnm_header_errors() {
        assert!(decode_image(b"P5 2 2 65535\n\0\0\0\0\0\0\0\0")
            .unwrap_err()
            .to_string()
            .contains("maxval"));
        assert!(decode_image(b"P5 2 x 255\n").is_err());
        assert!(decode_image(b"P5 0 2 255\n").is_err());
        assert!(decode_image(b"P2 2 2 255\n1 2 3 4").is_err());
        assert!(decode_image(b"").is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let img = RawImage::new(3, 2, 3, (0..18).collect()).unwrap();
        assert_eq!(decode_image(&encode_pnm(&img)).unwrap(), img);
    }

    #[test]
    fn png_gray_and_rgb() {
        let gray = decode_image(&png_bytes(
            3,
            2,
            png::ColorType::Grayscale,
            &[0, 1, 2, 3, 4, 5],
        ))
        .unwrap();
        assert_eq!((gray.rows, gray.cols, gray.channels), (2, 3, 1));
        assert_eq!(gray.pixels, vec![0, 1, 2, 3, 4, 5]);

        let rgb_data: Vec<u8> = (0..12).collect();
        let rgb = decode_image(&png_bytes(2, 2, png::ColorType::Rgb, &rgb_data)).unwrap();
        assert_eq!((rgb.rows, rgb.cols, rgb.channels), (2, 2, 3));
        assert_eq!(rgb.pixels, rgb_data);
    }

    #[test]
    fn png_with_alpha_is_rejected() {
        let bytes = png_bytes(1, 1, png::ColorType::Rgba, &[1, 2, 3, 4]);
        assert!(decode_image(&bytes)
            .unwrap_err()
            .to_string()
            .contains("color type"));
    }

    #[test]
    fn png_truncated_is_an_error() {
        let bytes = png_bytes(4, 4, png::ColorType::Grayscale, &[7; 16]);
        assert!(decode_image(&bytes[..bytes.len() / 2]).is_err());
    }
}

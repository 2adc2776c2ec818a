//! Procedural 12-class texture benchmark.
//!
//! Each class is drawn from one texture family:
//!
//! | index | label               | family              |
//! |-------|---------------------|---------------------|
//! | 0     | crosswalk           | horizontal stripes  |
//! | 1     | curbs               | vertical stripes    |
//! | 2     | ramp                | checkerboard        |
//! | 3     | stairs_ascending    | diagonal gradient   |
//! | 4     | stairs_descending   | radial gradient     |
//! | 5     | gravel              | uniform noise       |
//! | 6     | concrete            | low-frequency blobs |
//! | 7     | tiles               | grid lines          |
//! | 8     | bricks              | solid tone          |
//! | 9     | carpets             | dot lattice         |
//! | 10    | snow                | step edge           |
//! | 11    | rocks               | sinusoidal plaid    |
//!
//! Every sample jitters phase, period, and contrast, and all families except
//! uniform noise get +-6 grey levels of pixel noise. Sample `k` of class `c`
//! uses its own xoshiro256++ stream, so the first `n` samples of a class do
//! not depend on `per_class`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{encode_pnm, normalize, ClassLabel, Dataset, LabeledImage, RawImage, INPUT_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureFamily {
    HorizontalStripes,
    VerticalStripes,
    Checkerboard,
    DiagonalGradient,
    RadialGradient,
    UniformNoise,
    Blobs,
    GridLines,
    SolidTone,
    DotLattice,
    StepEdge,
    Plaid,
}

impl TextureFamily {
    pub fn for_label(label: ClassLabel) -> Self {
        use TextureFamily::*;
        [
            HorizontalStripes,
            VerticalStripes,
            Checkerboard,
            DiagonalGradient,
            RadialGradient,
            UniformNoise,
            Blobs,
            GridLines,
            SolidTone,
            DotLattice,
            StepEdge,
            Plaid,
        ][label.index()]
    }
}

const N: usize = INPUT_SIZE;

fn sample_rng(seed: u64, class: usize, sample: usize) -> Xoshiro256PlusPlus {
    let key = ((class as u64) << 32 | sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Xoshiro256PlusPlus::seed_from_u64(seed ^ key)
}

fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn render(rng: &mut Xoshiro256PlusPlus, family: TextureFamily) -> Vec<f64> {
    use TextureFamily::*;
    let lo: f64 = rng.random_range(20.0..70.0);
    let hi: f64 = rng.random_range(185.0..235.0);
    let mut px = vec![0.0; N * N];
    let mut paint = |f: &mut dyn FnMut(f64, f64) -> f64| {
        for r in 0..N {
            for c in 0..N {
                px[r * N + c] = f(r as f64, c as f64);
            }
        }
    };
    let band = |x: f64, period: f64, phase: f64| (x + phase).rem_euclid(period) < period / 2.0;

    match family {
        HorizontalStripes | VerticalStripes => {
            let period = rng.random_range(6.0..10.0);
            let phase = rng.random_range(0.0..period);
            let vertical = family == VerticalStripes;
            paint(&mut |r, c| {
                let x = if vertical { c } else { r };
                if band(x, period, phase) {
                    hi
                } else {
                    lo
                }
            });
        }
        Checkerboard => {
            let cell = rng.random_range(3.0..6.0);
            let (pr, pc) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            paint(&mut |r, c| {
                let parity = ((r + pr) / cell).floor() + ((c + pc) / cell).floor();
                if parity.rem_euclid(2.0) < 1.0 {
                    hi
                } else {
                    lo
                }
            });
        }
        DiagonalGradient => {
            let offset = rng.random_range(-8.0..8.0);
            let span = rng.random_range(50.0..70.0);
            paint(&mut |r, c| {
                let t = ((r + c + offset) / span).clamp(0.0, 1.0);
                lo + (hi - lo) * t
            });
        }
        RadialGradient => {
            let (cy, cx) = (rng.random_range(12.0..20.0), rng.random_range(12.0..20.0));
            let radius = rng.random_range(16.0..24.0);
            paint(&mut |r, c| {
                let d = ((r - cy).powi(2) + (c - cx).powi(2)).sqrt();
                hi - (hi - lo) * (d / radius).min(1.0)
            });
        }
        UniformNoise => {
            for v in px.iter_mut() {
                *v = rng.random_range(lo..hi);
            }
        }
        Blobs => {
            let count = rng.random_range(4..7);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
                .map(|_| {
                    (
                        rng.random_range(0.0..32.0),
                        rng.random_range(0.0..32.0),
                        rng.random_range(3.0..5.0),
                        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    )
                })
                .collect();
            let mid = (lo + hi) / 2.0;
            let amp = (hi - lo) / 2.0;
            paint(&mut |r, c| {
                let s: f64 = blobs
                    .iter()
                    .map(|&(y, x, sigma, sign)| {
                        sign * libm::exp(
                            -((r - y).powi(2) + (c - x).powi(2)) / (2.0 * sigma * sigma),
                        )
                    })
                    .sum();
                mid + amp * s.clamp(-1.0, 1.0)
            });
        }
        GridLines => {
            let period = rng.random_range(6..10) as f64;
            let (pr, pc) = (rng.random_range(0.0..period), rng.random_range(0.0..period));
            paint(&mut |r, c| {
                let on = |x: f64, p: f64| (x + p).rem_euclid(period) < 1.0;
                if on(r, pr) || on(c, pc) {
                    lo
                } else {
                    hi
                }
            });
        }
        SolidTone => {
            let tone = rng.random_range(30.0..225.0);
            paint(&mut |_, _| tone);
        }
        DotLattice => {
            let period = rng.random_range(5..9) as f64;
            let (pr, pc) = (rng.random_range(0.0..period), rng.random_range(0.0..period));
            paint(&mut |r, c| {
                let on = |x: f64, p: f64| (x + p).rem_euclid(period) < 2.0;
                if on(r, pr) && on(c, pc) {
                    hi
                } else {
                    lo
                }
            });
        }
        StepEdge => {
            let edge = rng.random_range(10.0..22.0);
            let (top, bottom) = if rng.random_bool(0.5) {
                (lo, hi)
            } else {
                (hi, lo)
            };
            paint(&mut |r, _| if r < edge { top } else { bottom });
        }
        Plaid => {
            let (py, px_) = (rng.random_range(8.0..12.0), rng.random_range(8.0..12.0));
            let (fy, fx) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            let mid = (lo + hi) / 2.0;
            let amp = (hi - lo) / 2.0;
            paint(&mut |r, c| {
                mid + amp * (libm::sin(TAU * r / py + fy) + libm::sin(TAU * c / px_ + fx)) / 2.0
            });
        }
    }

    if family != UniformNoise {
        for v in px.iter_mut() {
            *v += rng.random_range(-6.0..6.0);
        }
    }
    px
}

/// One 32x32 grayscale texture for `label`; sample `index` under `seed`.
pub fn synth_image(label: ClassLabel, index: usize, seed: u64) -> RawImage {
    let mut rng = sample_rng(seed, label.index(), index);
    let px = render(&mut rng, TextureFamily::for_label(label));
    RawImage::gray(N, N, px.into_iter().map(quantize).collect())
        .expect("synthetic image has 32x32 pixels")
}

fn synth_source(label: ClassLabel, index: usize) -> String {
    format!("{0}/{0}_{index:04}.pgm", label.slug())
}

/// `per_class` textures for every class, deterministic in `seed`.
///
/// Sources match the paths [`write_dataset`] produces, so loading a written
/// benchmark back gives an identical dataset.
pub fn synth_dataset(per_class: usize, seed: u64) -> Dataset {
    let items = ClassLabel::ALL
        .into_iter()
        .flat_map(|label| (0..per_class).map(move |k| (label, k)))
        .map(|(label, k)| LabeledImage {
            tensor: normalize(&synth_image(label, k, seed)).expect("32x32 gray"),
            label,
            source: synth_source(label, k),
        })
        .collect();
    Dataset::new(items)
}

/// Writes the benchmark as `<root>/<slug>/<slug>_NNNN.pgm`; returns the file count.
pub fn write_dataset(root: &Path, per_class: usize, seed: u64) -> Result<usize> {
    let mut written = 0;
    for label in ClassLabel::ALL {
        let dir = root.join(label.slug());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for k in 0..per_class {
            let path = root.join(synth_source(label, k));
            fs::write(&path, encode_pnm(&synth_image(label, k, seed)))
                .map_err(|e| Error::io(&path, e))?;
            written += 1;
        }
    }
    Ok(written)
}

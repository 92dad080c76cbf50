//! Deterministic synthetic scene-text images.
//!
//! Each label character is drawn from the built-in 5×7 font at 2× scale
//! (10×14 pixels) inside its own 16-pixel-wide slot, with ±2 pixel jitter in
//! both axes. Intensities are quantized to 8-bit levels so that images survive
//! a PGM round trip bit-exactly.

mod font;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use font::{char_index, CHARSET};
pub use io::{load_dataset, save_dataset};

use crate::image::{Image, HEIGHT, PIXELS, WIDTH};
use crate::par::Exec;
use crate::pnm;
use crate::rng::{sub_rng, Rng};
use crate::{Error, Result};

pub const MAX_LABEL_LEN: usize = 8;
pub const SLOT_WIDTH: usize = 16;
/// Horizontal per-character jitter; all characters share one baseline.
const JITTER: i64 = 2;
/// Rendered glyph size: the 5×7 font scaled to fill a slot minus the jitter margin.
const GLYPH_PX_W: usize = SLOT_WIDTH - 2 * JITTER as usize;
const GLYPH_PX_H: usize = 4 * font::GLYPH_H;
const NOISE_SIGMA: f64 = 0.08;
/// Foreground level for the low-contrast variant: the 8-bit level closest to 0.25.
const LOW_CONTRAST_FG: f64 = 64.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Clean,
    Noisy,
    Distractor,
    LowContrast,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Clean,
        Variant::Noisy,
        Variant::Distractor,
        Variant::LowContrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Noisy => "noisy",
            Variant::Distractor => "distractor",
            Variant::LowContrast => "lowcontrast",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown variant {s:?}")))
    }
}

/// Pixel rectangle in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }

    /// Row-major pixel indices covered by the rectangle.
    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        (self.y..self.y + self.h)
            .flat_map(move |r| (self.x..self.x + self.w).map(move |c| r * WIDTH + c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: String,
    /// Glyph rectangle of character `k`, inside slot `k`.
    pub slot_boxes: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub size: usize,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
}

pub fn validate_label(label: &str) -> Result<()> {
    if let Some(c) = label.chars().find(|&c| char_index(c).is_none()) {
        return Err(Error::InvalidChar(c));
    }
    let n = label.chars().count();
    if n == 0 || n > MAX_LABEL_LEN {
        return Err(Error::InvalidLabel(
            label.to_string(),
            format!("length must be 1..={MAX_LABEL_LEN}"),
        ));
    }
    Ok(())
}

/// Render `label` with the given variant, drawing all randomness from `rng`.
///
/// Per-character jitter is drawn first, then the variant effects, so the
/// clean and noisy renders of one seed share their glyph geometry.
pub fn render_sample(label: &str, variant: Variant, rng: &mut Rng) -> Result<Sample> {
    validate_label(label)?;
    let fg = if variant == Variant::LowContrast {
        LOW_CONTRAST_FG
    } else {
        1.0
    };
    let gw = GLYPH_PX_W;
    let gh = GLYPH_PX_H;
    let mut data = vec![0.0; PIXELS];
    let mut boxes = Vec::with_capacity(label.len());
    for (k, c) in label.chars().enumerate() {
        let jx = rng.gen_range(-JITTER..=JITTER);
        let x = ((k * SLOT_WIDTH + (SLOT_WIDTH - gw) / 2) as i64 + jx) as usize;
        let y = (HEIGHT - gh) / 2;
        for r in 0..gh {
            for col in 0..gw {
                if font::glyph_pixel(c, r * font::GLYPH_H / gh, col * font::GLYPH_W / gw) {
                    data[(y + r) * WIDTH + x + col] = fg;
                }
            }
        }
        boxes.push(Rect { x, y, w: gw, h: gh });
    }

    match variant {
        Variant::Clean | Variant::LowContrast => {}
        Variant::Noisy => {
            let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
            for v in data.iter_mut() {
                *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
        Variant::Distractor => {
            let strokes = rng.gen_range(1..=3);
            for _ in 0..strokes {
                let a = (
                    rng.gen_range(0..WIDTH) as i64,
                    rng.gen_range(0..HEIGHT) as i64,
                );
                let b = (
                    rng.gen_range(0..WIDTH) as i64,
                    rng.gen_range(0..HEIGHT) as i64,
                );
                for (col, row) in line(a, b) {
                    let (row, col) = (row as usize, col as usize);
                    if !boxes.iter().any(|bx| bx.contains(row, col)) {
                        data[row * WIDTH + col] = fg;
                    }
                }
            }
        }
    }

    for v in data.iter_mut() {
        *v = pnm::from_u8(pnm::to_u8(*v));
    }
    Ok(Sample {
        image: Image::new(data)?,
        label: label.to_string(),
        slot_boxes: boxes,
    })
}

// Bresenham
fn line((mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64)) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn random_label(rng: &mut Rng) -> String {
    let len = rng.gen_range(1..=MAX_LABEL_LEN);
    let chars = CHARSET.as_bytes();
    (0..len)
        .map(|_| chars[rng.gen_range(0..chars.len())] as char)
        .collect()
}

/// Generate `spec.size` samples. Sample `i` uses the stream `sub_seed(spec.seed, i)`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    generate_dataset_with(spec, Exec::default())
}

pub fn generate_dataset_with(spec: &DatasetSpec, exec: Exec) -> Result<Dataset> {
    if spec.size == 0 {
        return Err(Error::InvalidValue(
            "dataset size must be at least 1".into(),
        ));
    }
    let samples = exec.try_map_range(spec.size, |i| {
        let mut rng = sub_rng(spec.seed, i as u64);
        let label = random_label(&mut rng);
        render_sample(&label, spec.variant, &mut rng)
    })?;
    Ok(Dataset {
        name: spec.name.clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;

    #[test]
    fn render_is_deterministic() {
        let a = render_sample("a", Variant::Clean, &mut rng(1)).unwrap();
        let b = render_sample("a", Variant::Clean, &mut rng(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unused_slots_stay_background() {
        for seed in 0..20 {
            let s = render_sample("abc", Variant::Clean, &mut rng(seed)).unwrap();
            for r in 0..HEIGHT {
                for c in 48..WIDTH {
                    assert_eq!(s.image.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn clean_foreground_stays_in_slot() {
        for seed in 0..50 {
            let s = render_sample("m0w8q", Variant::Clean, &mut rng(seed)).unwrap();
            for (k, b) in s.slot_boxes.iter().enumerate() {
                assert!(b.x >= k * SLOT_WIDTH && b.x + b.w <= (k + 1) * SLOT_WIDTH);
                assert!(b.y + b.h <= HEIGHT);
            }
            for r in 0..HEIGHT {
                for c in 0..WIDTH {
                    if s.image.get(r, c) > 0.0 {
                        let k = c / SLOT_WIDTH;
                        assert!(s.slot_boxes[k].contains(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn noisy_differs_from_clean_twin_by_the_noise_level() {
        let clean = render_sample("hello", Variant::Clean, &mut rng(7)).unwrap();
        let noisy = render_sample("hello", Variant::Noisy, &mut rng(7)).unwrap();
        assert_eq!(clean.slot_boxes, noisy.slot_boxes);
        let mad = clean
            .image
            .data()
            .iter()
            .zip(noisy.image.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / PIXELS as f64;
        // Oracle: every clean pixel is 0 or 1, so E|clamp(x + e) - x| is the
        // half-normal mean: integrate e * pdf(e) over e > 0 numerically.
        let sigma = NOISE_SIGMA;
        let n = 100_000;
        let h = 10.0 * sigma / n as f64;
        let expected: f64 = (0..n)
            .map(|i| {
                let e = (i as f64 + 0.5) * h;
                e * (-(e * e) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
                    * h
            })
            .sum();
        assert!(
            (mad - expected).abs() <= 0.05 * sigma,
            "mad {mad} vs {expected}"
        );
    }

    #[test]
    fn distractor_strokes_avoid_glyph_boxes() {
        for seed in 0..20 {
            let clean = render_sample("xy12", Variant::Clean, &mut rng(seed)).unwrap();
            let d = render_sample("xy12", Variant::Distractor, &mut rng(seed)).unwrap();
            let mut extra = 0;
            for r in 0..HEIGHT {
                for c in 0..WIDTH {
                    if d.slot_boxes.iter().any(|b| b.contains(r, c)) {
                        assert_eq!(d.image.get(r, c), clean.image.get(r, c));
                    } else if d.image.get(r, c) != clean.image.get(r, c) {
                        extra += 1;
                    }
                }
            }
            assert!(extra > 0);
        }
    }

    #[test]
    fn low_contrast_gap() {
        let s = render_sample("k", Variant::LowContrast, &mut rng(2)).unwrap();
        let max = s.image.data().iter().cloned().fold(0.0, f64::max);
        assert!((max - 0.25).abs() < 1.0 / 255.0);
    }

    #[test]
    fn invalid_labels() {
        assert!(matches!(
            render_sample("aB", Variant::Clean, &mut rng(0)),
            Err(Error::InvalidChar('B'))
        ));
        assert!(render_sample("", Variant::Clean, &mut rng(0)).is_err());
        assert!(render_sample("abcdefghi", Variant::Clean, &mut rng(0)).is_err());
    }

    #[test]
    fn dataset_is_reproducible() {
        let spec = DatasetSpec {
            name: "d".into(),
            size: 10,
            variant: Variant::Clean,
            seed: 3,
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset_with(&spec, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = DatasetSpec {
            name: "d".into(),
            size: 0,
            variant: Variant::Clean,
            seed: 3,
        };
        assert!(generate_dataset(&spec).is_err());
    }

    #[test]
    fn label_lengths_are_uniform() {
        let spec = DatasetSpec {
            name: "d".into(),
            size: 1000,
            variant: Variant::Clean,
            seed: 9,
        };
        let d = generate_dataset(&spec).unwrap();
        let mean = d.samples.iter().map(|s| s.label.len() as f64).sum::<f64>() / 1000.0;
        // U{1..8} has mean 4.5 and sd 2.29; the sample mean has sd 0.072
        assert!((mean - 4.5).abs() <= 0.3, "mean length {mean}");
        assert!(d.samples.iter().all(|s| (1..=8).contains(&s.label.len())));
    }
}

//! Binary PGM (P5) and PPM (P6) encoding, maxval 255.

use std::fs;
use std::path::Path;

use crate::image::{Heatmap, Image, HEIGHT, PIXELS, WIDTH};
use crate::{Error, Result};

/// Quantize an intensity to the nearest 8-bit level.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    f64::from(v) / 255.0
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| to_u8(v)));
    out
}

pub fn encode_ppm(h: &Heatmap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", h.width, h.height).into_bytes();
    out.extend(h.to_rgb8());
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decode a P5 image of the canvas size.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if (w, h) != (WIDTH, HEIGHT) {
        return Err(bad(&format!("expected {WIDTH}x{HEIGHT}, got {w}x{h}")));
    }
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    if bytes.len() < start + PIXELS {
        return Err(bad("truncated raster"));
    }
    Image::new(
        bytes[start..start + PIXELS]
            .iter()
            .map(|&b| from_u8(b))
            .collect(),
    )
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_ppm(path: &Path, h: &Heatmap) -> Result<()> {
    fs::write(path, encode_ppm(h)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_of_quantized_image() {
        let data = (0..PIXELS).map(|i| from_u8((i * 7 % 256) as u8)).collect();
        let img = Image::new(data).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n128 32\n255\n".to_vec();
        bytes.extend(std::iter::repeat(255u8).take(PIXELS));
        let img = decode_pgm(&bytes).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P6\n128 32\n255\n").is_err());
        assert!(decode_pgm(b"P5\n64 32\n255\n").is_err());
        let mut short = b"P5\n128 32\n255\n".to_vec();
        short.extend([0u8; 100]);
        assert!(decode_pgm(&short).is_err());
    }

    #[test]
    fn ppm_layout() {
        let img = Image::filled(0.5).unwrap();
        let h = crate::image::render_heatmap(&img, &crate::AttributionMap::zeros()).unwrap();
        let bytes = encode_ppm(&h);
        let header = b"P6\n128 32\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 3 * PIXELS);
        assert!(bytes[header.len()..].iter().all(|&b| b == 128));
    }
}

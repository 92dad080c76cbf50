//! `SXM1` model files.
//!
//! Layout: the ASCII magic `SXM1`; four little-endian `u32` dims (input,
//! hidden, slots, classes); then every parameter as a little-endian `f32`,
//! row-major: first-layer weights (hidden × input), first-layer bias, head
//! weights (slot × class × hidden), head biases (slot × class).

use std::fs;
use std::path::Path;

use super::{SlotNet, CLASSES, HIDDEN, INPUT, SLOTS};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SXM1";

pub fn encode_model(model: &SlotNet) -> Vec<u8> {
    let n = HIDDEN * INPUT + HIDDEN + SLOTS * CLASSES * (HIDDEN + 1);
    let mut out = Vec::with_capacity(20 + 4 * n);
    out.extend_from_slice(MAGIC);
    for d in [INPUT, HIDDEN, SLOTS, CLASSES] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let w1 = model.w1_rows();
    for block in [&w1[..], model.b1(), model.heads(), model.head_bias()] {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<SlotNet> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic (expected SXM1)".into()));
    }
    if bytes.len() < 20 {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[4..20]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    if dims != [INPUT, HIDDEN, SLOTS, CLASSES] {
        return Err(Error::Format(format!(
            "dims {dims:?} do not match the architecture {:?}",
            [INPUT, HIDDEN, SLOTS, CLASSES]
        )));
    }
    let sizes = [
        HIDDEN * INPUT,
        HIDDEN,
        SLOTS * CLASSES * HIDDEN,
        SLOTS * CLASSES,
    ];
    let expected = 20 + 4 * sizes.iter().sum::<usize>();
    if bytes.len() < expected {
        return Err(Error::Format(format!(
            "truncated: {} of {expected} bytes",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let mut floats = bytes[20..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let (w1, b1, heads, hb) = (
        take(sizes[0]),
        take(sizes[1]),
        take(sizes[2]),
        take(sizes[3]),
    );
    SlotNet::from_parts(&w1, b1, heads, hb)
}

pub fn save_model(path: &Path, model: &SlotNet) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SlotNet> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

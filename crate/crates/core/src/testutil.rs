use rand::Rng;

use crate::image::{Image, PIXELS};
use crate::recognizer::SlotNet;
use crate::rng::rng;

pub fn random_image(seed: u64) -> Image {
    let mut r = rng(seed);
    Image::new((0..PIXELS).map(|_| r.gen::<f64>()).collect()).unwrap()
}

/// Randomised model with biases so that hidden units sit on both sides of zero.
pub fn random_model(seed: u64) -> SlotNet {
    let mut r = rng(seed ^ 0xABCD);
    let b1 = (0..crate::recognizer::HIDDEN)
        .map(|_| r.gen_range(-0.5..0.5))
        .collect();
    let m = SlotNet::init(seed);
    let heads = m.heads().iter().map(|w| w * 4.0).collect();
    let hb = m
        .head_bias()
        .iter()
        .map(|_| r.gen_range(-0.5..0.5))
        .collect();
    SlotNet::from_parts(&m.w1_rows(), b1, heads, hb).unwrap()
}

//! The slot recognizer: a dense ReLU layer over the whole canvas feeding one
//! softmax head per character slot.
//!
//! Class 0 is the blank; classes 1..=36 are `a..z` followed by `0..9`.

mod format;
mod masked;
mod train;

use serde::{Deserialize, Serialize};

pub use format::{decode_model, encode_model, load_model, save_model};
pub use masked::{MaskedForward, MaskedImages};
pub use train::{exact_match_accuracy, slot_targets, train, TrainConfig, TrainReport};

use crate::image::{AttributionMap, Image, SegmentMap, PIXELS};
use crate::rng::rng;
use crate::synth::{char_index, CHARSET};
use crate::{Error, Result};

pub const INPUT: usize = PIXELS;
pub const HIDDEN: usize = 256;
pub const SLOTS: usize = 8;
pub const CLASSES: usize = 37;
pub const BLANK: usize = 0;

pub fn class_of(c: char) -> Option<usize> {
    char_index(c).map(|i| i + 1)
}

pub fn char_of(class: usize) -> Option<char> {
    (1..CLASSES)
        .contains(&class)
        .then(|| CHARSET.as_bytes()[class - 1] as char)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// Linear surrogate used by test fixtures.
    Identity,
}

/// Per-slot logits and softmax probabilities, `SLOTS × CLASSES`, slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ModelOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let mut probs = vec![0.0; SLOTS * CLASSES];
        for (row, out) in logits
            .chunks_exact(CLASSES)
            .zip(probs.chunks_exact_mut(CLASSES))
        {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &l) in out.iter_mut().zip(row) {
                *o = (l - max).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
        ModelOutput { logits, probs }
    }

    pub fn prob(&self, slot: usize, class: usize) -> f64 {
        self.probs[slot * CLASSES + class]
    }

    pub fn slot_probs(&self, slot: usize) -> &[f64] {
        &self.probs[slot * CLASSES..(slot + 1) * CLASSES]
    }
}

/// Hidden-layer activations and logits of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub logits: Vec<f64>,
}

/// How gradients pass backwards through the hidden ReLU.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BackwardRule {
    #[default]
    Standard,
    /// Zero where the pre-activation is ≤ 0 or the incoming gradient is negative.
    Guided,
    /// Zero where the incoming gradient is negative.
    Deconv,
    /// Rescale rule: multiply by Δpost/Δpre against the baseline trace.
    DeepLiftRescale { baseline: Option<ForwardTrace> },
}

/// Which scalar of the model output is being explained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreSpec {
    /// Mean over all slots of the probability of `target_labels[k]` at slot `k`.
    Global { target_labels: [usize; SLOTS] },
    /// Probability of `target_class` at `slot`.
    Local { slot: usize, target_class: usize },
}

impl ScoreSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreSpec::Global { target_labels } => {
                if let Some(c) = target_labels.iter().find(|&&c| c >= CLASSES) {
                    return Err(Error::OutOfRange(format!("class {c} (have {CLASSES})")));
                }
            }
            ScoreSpec::Local { slot, target_class } => {
                if *slot >= SLOTS {
                    return Err(Error::OutOfRange(format!("slot {slot} (have {SLOTS})")));
                }
                if *target_class >= CLASSES {
                    return Err(Error::OutOfRange(format!(
                        "class {target_class} (have {CLASSES})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The score of `out` under this spec. Assumes a validated spec.
    pub fn of(&self, out: &ModelOutput) -> f64 {
        match self {
            ScoreSpec::Global { target_labels } => {
                target_labels
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| out.prob(k, c))
                    .sum::<f64>()
                    / SLOTS as f64
            }
            ScoreSpec::Local { slot, target_class } => out.prob(*slot, *target_class),
        }
    }

    /// ∂score/∂logits, slot-major.
    fn logit_gradient(&self, out: &ModelOutput) -> Vec<f64> {
        let mut g = vec![0.0; SLOTS * CLASSES];
        let mut fill = |slot: usize, t: usize, weight: f64| {
            let p = out.slot_probs(slot);
            let pt = p[t];
            for (c, gc) in g[slot * CLASSES..(slot + 1) * CLASSES]
                .iter_mut()
                .enumerate()
            {
                let delta = if c == t { 1.0 } else { 0.0 };
                *gc = weight * pt * (delta - p[c]);
            }
        };
        match self {
            ScoreSpec::Global { target_labels } => {
                for (k, &t) in target_labels.iter().enumerate() {
                    fill(k, t, 1.0 / SLOTS as f64);
                }
            }
            ScoreSpec::Local { slot, target_class } => fill(*slot, *target_class, 1.0),
        }
        g
    }
}

/// Decoded prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub text: String,
    pub slot_argmax: [usize; SLOTS],
}

impl Decoded {
    /// Global score spec with the predicted classes as targets.
    pub fn global_spec(&self) -> ScoreSpec {
        ScoreSpec::Global {
            target_labels: self.slot_argmax,
        }
    }
}

/// Per-slot argmax (ties to the lowest class) and the concatenated non-blank characters.
pub fn decode(out: &ModelOutput) -> Decoded {
    let mut slot_argmax = [BLANK; SLOTS];
    for (k, best) in slot_argmax.iter_mut().enumerate() {
        let p = out.slot_probs(k);
        *best = (1..CLASSES).fold(0, |b, c| if p[c] > p[b] { c } else { b });
    }
    let text = slot_argmax.iter().filter_map(|&c| char_of(c)).collect();
    Decoded { text, slot_argmax }
}

/// A sequence recognizer that can be explained.
///
/// Only `forward` is required. Models without input gradients keep the
/// default `score_gradient`, which reports the missing capability.
pub trait Recognizer: Sync {
    fn forward(&self, image: &Image) -> Result<ModelOutput>;

    fn has_gradients(&self) -> bool {
        false
    }

    /// ∂score/∂pixel under `rule`.
    fn score_gradient(
        &self,
        _image: &Image,
        _spec: &ScoreSpec,
        _rule: &BackwardRule,
    ) -> Result<AttributionMap> {
        Err(Error::GradientUnavailable("score_gradient"))
    }

    fn trace(&self, _image: &Image) -> Result<ForwardTrace> {
        Err(Error::GradientUnavailable("trace"))
    }

    /// Evaluator for images with whole segments replaced by `baseline`.
    fn masked<'a>(
        &'a self,
        image: &'a Image,
        seg: &'a SegmentMap,
        baseline: f64,
    ) -> Result<Box<dyn MaskedForward + 'a>>
    where
        Self: 'a,
    {
        Ok(Box::new(MaskedImages::new(self, image, seg, baseline)?))
    }
}

pub fn score(model: &dyn Recognizer, image: &Image, spec: &ScoreSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.of(&model.forward(image)?))
}

/// Hides the gradient capability of a model (black-box access only).
pub struct ForwardOnly<'m>(pub &'m dyn Recognizer);

impl Recognizer for ForwardOnly<'_> {
    fn forward(&self, image: &Image) -> Result<ModelOutput> {
        self.0.forward(image)
    }

    fn masked<'a>(
        &'a self,
        image: &'a Image,
        seg: &'a SegmentMap,
        baseline: f64,
    ) -> Result<Box<dyn MaskedForward + 'a>>
    where
        Self: 'a,
    {
        self.0.masked(image, seg, baseline)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// The recognizer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotNet {
    /// Input-major first layer: `w1[i * HIDDEN + j]` connects pixel `i` to hidden unit `j`.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    /// `[slot][class][hidden]`
    pub(crate) heads: Vec<f64>,
    /// `[slot][class]`
    pub(crate) head_bias: Vec<f64>,
    activation: Activation,
}

impl SlotNet {
    pub fn zeros() -> Self {
        SlotNet {
            w1: vec![0.0; INPUT * HIDDEN],
            b1: vec![0.0; HIDDEN],
            heads: vec![0.0; SLOTS * CLASSES * HIDDEN],
            head_bias: vec![0.0; SLOTS * CLASSES],
            activation: Activation::Relu,
        }
    }

    /// He-normal first layer, `N(0, 1/HIDDEN)` heads, zero biases.
    pub fn init(seed: u64) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut r = rng(seed);
        let n1 = Normal::new(0.0, (2.0 / INPUT as f64).sqrt()).expect("valid std");
        let n2 = Normal::new(0.0, (1.0 / HIDDEN as f64).sqrt()).expect("valid std");
        let mut m = SlotNet::zeros();
        m.w1.iter_mut().for_each(|w| *w = n1.sample(&mut r));
        m.heads.iter_mut().for_each(|w| *w = n2.sample(&mut r));
        m
    }

    /// Build from hidden-major `w1_rows` (`HIDDEN × INPUT`) and the remaining parameters.
    pub fn from_parts(
        w1_rows: &[f64],
        b1: Vec<f64>,
        heads: Vec<f64>,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        let dims = [
            (w1_rows.len(), HIDDEN * INPUT, "w1"),
            (b1.len(), HIDDEN, "b1"),
            (heads.len(), SLOTS * CLASSES * HIDDEN, "heads"),
            (head_bias.len(), SLOTS * CLASSES, "head bias"),
        ];
        for (got, want, what) in dims {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{what}: expected {want} values, got {got}"
                )));
            }
        }
        let mut w1 = vec![0.0; INPUT * HIDDEN];
        for j in 0..HIDDEN {
            for i in 0..INPUT {
                w1[i * HIDDEN + j] = w1_rows[j * INPUT + i];
            }
        }
        let m = SlotNet {
            w1,
            b1,
            heads,
            head_bias,
            activation: Activation::Relu,
        };
        if !m.parameters_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(m)
    }

    /// First-layer weights in hidden-major order (`HIDDEN × INPUT`).
    pub fn w1_rows(&self) -> Vec<f64> {
        let mut rows = vec![0.0; HIDDEN * INPUT];
        for i in 0..INPUT {
            for j in 0..HIDDEN {
                rows[j * INPUT + i] = self.w1[i * HIDDEN + j];
            }
        }
        rows
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn heads(&self) -> &[f64] {
        &self.heads
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn parameters_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.heads, &self.head_bias]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Column of the first layer for pixel `i`.
    #[inline]
    pub(crate) fn pixel_weights(&self, i: usize) -> &[f64] {
        &self.w1[i * HIDDEN..(i + 1) * HIDDEN]
    }

    /// Hidden pre-activations; zero pixels are skipped.
    pub(crate) fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut pre = self.b1.clone();
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                axpy(v, self.pixel_weights(i), &mut pre);
            }
        }
        pre
    }

    pub(crate) fn activate(&self, pre: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => pre.to_vec(),
        }
    }

    pub(crate) fn head_logits(&self, post: &[f64]) -> Vec<f64> {
        self.heads
            .chunks_exact(HIDDEN)
            .zip(&self.head_bias)
            .map(|(w, b)| b + dot(w, post))
            .collect()
    }

    pub(crate) fn output_from_pre(&self, pre: &[f64]) -> ModelOutput {
        ModelOutput::from_logits(self.head_logits(&self.activate(pre)))
    }

    fn check_input(image: &Image) -> Result<()> {
        // Image construction already rejects non-finite data; kept for images built in-crate.
        if image.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input image".into()));
        }
        Ok(())
    }

    pub fn forward_trace(&self, image: &Image) -> Result<(ModelOutput, ForwardTrace)> {
        Self::check_input(image)?;
        let pre = self.pre_activation(image.data());
        let post = self.activate(&pre);
        let logits = self.head_logits(&post);
        let out = ModelOutput::from_logits(logits.clone());
        Ok((out, ForwardTrace { pre, post, logits }))
    }

    /// Gradient of the hidden post-activations for upstream logit gradient `dlogits`.
    pub(crate) fn post_gradient(&self, dlogits: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; HIDDEN];
        for (row, &d) in self.heads.chunks_exact(HIDDEN).zip(dlogits) {
            if d != 0.0 {
                axpy(d, row, &mut g);
            }
        }
        g
    }

    fn relu_backward(
        &self,
        trace: &ForwardTrace,
        gpost: &[f64],
        rule: &BackwardRule,
    ) -> Result<Vec<f64>> {
        if self.activation == Activation::Identity {
            return Ok(gpost.to_vec());
        }
        let pre = &trace.pre;
        let g = match rule {
            BackwardRule::Standard => (0..HIDDEN)
                .map(|j| if pre[j] > 0.0 { gpost[j] } else { 0.0 })
                .collect(),
            BackwardRule::Guided => (0..HIDDEN)
                .map(|j| {
                    if pre[j] > 0.0 && gpost[j] >= 0.0 {
                        gpost[j]
                    } else {
                        0.0
                    }
                })
                .collect(),
            BackwardRule::Deconv => gpost.iter().map(|&g| g.max(0.0)).collect(),
            BackwardRule::DeepLiftRescale { baseline } => {
                let base = baseline.as_ref().ok_or_else(|| {
                    Error::Missing("DeepLift rescale rule needs a baseline trace".into())
                })?;
                if base.pre.len() != HIDDEN || base.post.len() != HIDDEN {
                    return Err(Error::Dimension(
                        "DeepLift baseline trace has wrong dims".into(),
                    ));
                }
                (0..HIDDEN)
                    .map(|j| {
                        let dpre = pre[j] - base.pre[j];
                        let factor = if dpre.abs() < 1e-9 {
                            if pre[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            (trace.post[j] - base.post[j]) / dpre
                        };
                        gpost[j] * factor
                    })
                    .collect()
            }
        };
        Ok(g)
    }
}

impl Recognizer for SlotNet {
    fn forward(&self, image: &Image) -> Result<ModelOutput> {
        Self::check_input(image)?;
        Ok(self.output_from_pre(&self.pre_activation(image.data())))
    }

    fn has_gradients(&self) -> bool {
        true
    }

    fn score_gradient(
        &self,
        image: &Image,
        spec: &ScoreSpec,
        rule: &BackwardRule,
    ) -> Result<AttributionMap> {
        spec.validate()?;
        let (out, trace) = self.forward_trace(image)?;
        let gpost = self.post_gradient(&spec.logit_gradient(&out));
        let gpre = self.relu_backward(&trace, &gpost, rule)?;
        let grad = (0..INPUT)
            .map(|i| dot(self.pixel_weights(i), &gpre))
            .collect();
        AttributionMap::from_values(grad)
    }

    fn trace(&self, image: &Image) -> Result<ForwardTrace> {
        Ok(self.forward_trace(image)?.1)
    }

    fn masked<'a>(
        &'a self,
        image: &'a Image,
        seg: &'a SegmentMap,
        baseline: f64,
    ) -> Result<Box<dyn MaskedForward + 'a>>
    where
        Self: 'a,
    {
        Ok(Box::new(masked::SlotNetMasked::new(
            self, image, seg, baseline,
        )?))
    }
}

#[cfg(test)]
mod tests;

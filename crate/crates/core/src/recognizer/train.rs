use rand::seq::SliceRandom;

use super::{
    class_of, decode, Activation, ModelOutput, Recognizer, SlotNet, BLANK, CLASSES, HIDDEN, INPUT,
    SLOTS,
};
use crate::par::Exec;
use crate::rng::sub_rng;
use crate::synth::Sample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: SlotNet,
    /// Mean per-slot cross-entropy of each epoch.
    pub loss_history: Vec<f64>,
}

/// Class targets per slot: character `k` at slot `k`, blank elsewhere.
pub fn slot_targets(label: &str) -> Result<[usize; SLOTS]> {
    let mut t = [BLANK; SLOTS];
    if label.chars().count() > SLOTS {
        return Err(Error::InvalidLabel(
            label.into(),
            format!("longer than {SLOTS}"),
        ));
    }
    for (k, c) in label.chars().enumerate() {
        t[k] = class_of(c).ok_or(Error::InvalidChar(c))?;
    }
    Ok(t)
}

/// Fraction of samples whose decoded prediction equals the label.
pub fn exact_match_accuracy(model: &dyn Recognizer, samples: &[Sample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidValue("no samples to evaluate".into()));
    }
    let hits = exec.try_map_range(samples.len(), |i| {
        let s = &samples[i];
        Ok::<_, Error>(decode(&model.forward(&s.image)?).text == s.label)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    heads: Vec<f64>,
    head_bias: Vec<f64>,
}

impl Grads {
    fn zeros() -> Self {
        Grads {
            w1: vec![0.0; INPUT * HIDDEN],
            b1: vec![0.0; HIDDEN],
            heads: vec![0.0; SLOTS * CLASSES * HIDDEN],
            head_bias: vec![0.0; SLOTS * CLASSES],
        }
    }
}

/// Accumulate the gradient of `scale ×` mean-over-slots cross-entropy; returns that loss.
fn accumulate(
    model: &SlotNet,
    sample: &Sample,
    targets: &[usize; SLOTS],
    scale: f64,
    g: &mut Grads,
) -> f64 {
    let x = sample.image.data();
    let pre = model.pre_activation(x);
    let post = model.activate(&pre);
    let out = ModelOutput::from_logits(model.head_logits(&post));
    let mut loss = 0.0;
    let mut dlogits = out.probs.clone();
    for (k, &t) in targets.iter().enumerate() {
        loss -= out.prob(k, t).max(f64::MIN_POSITIVE).ln();
        dlogits[k * CLASSES + t] -= 1.0;
    }
    let w = scale / SLOTS as f64;
    dlogits.iter_mut().for_each(|d| *d *= w);

    for (r, &d) in dlogits.iter().enumerate() {
        g.head_bias[r] += d;
        super::axpy(d, &post, &mut g.heads[r * HIDDEN..(r + 1) * HIDDEN]);
    }
    let mut gpre = model.post_gradient(&dlogits);
    if model.activation() == Activation::Relu {
        for (gj, &p) in gpre.iter_mut().zip(&pre) {
            if p <= 0.0 {
                *gj = 0.0;
            }
        }
    }
    super::axpy(1.0, &gpre, &mut g.b1);
    for (i, &v) in x.iter().enumerate() {
        if v != 0.0 {
            super::axpy(v, &gpre, &mut g.w1[i * HIDDEN..(i + 1) * HIDDEN]);
        }
    }
    loss / SLOTS as f64
}

fn step(param: &mut [f64], velocity: &mut [f64], grad: &mut [f64], lr: f64, momentum: f64) {
    for ((p, v), g) in param
        .iter_mut()
        .zip(velocity.iter_mut())
        .zip(grad.iter_mut())
    {
        *v = momentum * *v + *g;
        *p -= lr * *v;
        *g = 0.0;
    }
}

/// Minibatch SGD with momentum on the mean per-slot cross-entropy.
///
/// The epoch-`e` shuffle is drawn from `sub_seed(cfg.seed, e)`; training is
/// sequential and therefore bit-reproducible.
pub fn train(model: &SlotNet, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidValue("batch size must be at least 1".into()));
    }
    let targets = samples
        .iter()
        .map(|s| slot_targets(&s.label))
        .collect::<Result<Vec<_>>>()?;
    let mut m = model.clone();
    let mut g = Grads::zeros();
    let mut v = Grads::zeros();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut sub_rng(cfg.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += accumulate(&m, &samples[i], &targets[i], scale, &mut g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            let (lr, mu) = (cfg.learning_rate, cfg.momentum);
            step(&mut m.w1, &mut v.w1, &mut g.w1, lr, mu);
            step(&mut m.b1, &mut v.b1, &mut g.b1, lr, mu);
            step(&mut m.heads, &mut v.heads, &mut g.heads, lr, mu);
            step(&mut m.head_bias, &mut v.head_bias, &mut g.head_bias, lr, mu);
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() || !m.parameters_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(TrainReport {
        model: m,
        loss_history: history,
    })
}

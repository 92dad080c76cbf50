//! Perturbation attributions over a cooperative game on segments.
//!
//! A player is a segment; a coalition is the set of segments left intact,
//! every other segment being replaced by the baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::image::{Image, SegmentMap};
use crate::recognizer::{MaskedForward, Recognizer, ScoreSpec};
use crate::rng::{sub_rng, Rng};
use crate::{Error, Result};

/// A value function over coalitions of `players()` players.
pub trait CoalitionGame {
    fn players(&self) -> usize;

    fn value(&self, present: &[bool]) -> Result<f64>;
}

/// Model score with the absent segments masked.
pub struct ModelGame<'a> {
    masked: Box<dyn MaskedForward + 'a>,
    spec: &'a ScoreSpec,
}

impl<'a> ModelGame<'a> {
    pub fn new(
        model: &'a dyn Recognizer,
        image: &'a Image,
        seg: &'a SegmentMap,
        baseline: f64,
        spec: &'a ScoreSpec,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(ModelGame {
            masked: model.masked(image, seg, baseline)?,
            spec,
        })
    }
}

impl CoalitionGame for ModelGame<'_> {
    fn players(&self) -> usize {
        self.masked.segment_count()
    }

    fn value(&self, present: &[bool]) -> Result<f64> {
        Ok(self.spec.of(&self.masked.output(present)?))
    }
}

/// A game defined by a closure, for fixtures.
pub struct FnGame<F> {
    pub players: usize,
    pub value: F,
}

impl<F: Fn(&[bool]) -> f64> CoalitionGame for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, present: &[bool]) -> Result<f64> {
        Ok((self.value)(present))
    }
}

fn endpoints(game: &dyn CoalitionGame) -> Result<(f64, f64)> {
    let n = game.players();
    Ok((game.value(&vec![false; n])?, game.value(&vec![true; n])?))
}

fn finite(values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `φ_i = v(N) − v(N \ {i})`
pub fn feature_ablation(game: &dyn CoalitionGame) -> Result<Vec<f64>> {
    let n = game.players();
    let mut present = vec![true; n];
    let full = game.value(&present)?;
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        present[i] = false;
        phi.push(full - game.value(&present)?);
        present[i] = true;
    }
    finite(phi, "feature ablation")
}

pub const MAX_EXACT_PLAYERS: usize = 16;

/// Exact Shapley values by enumerating every coalition.
pub fn exact_shapley_values(game: &dyn CoalitionGame) -> Result<Vec<f64>> {
    let n = game.players();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::InvalidValue(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_PLAYERS} players, got {n}"
        )));
    }
    let mut values = Vec::with_capacity(1 << n);
    let mut present = vec![false; n];
    for mask in 0usize..1 << n {
        for (i, p) in present.iter_mut().enumerate() {
            *p = mask >> i & 1 == 1;
        }
        values.push(game.value(&present)?);
    }
    // weight(s) = s! (n - s - 1)! / n!
    let weight: Vec<f64> = (0..n)
        .map(|s| {
            let mut w = 1.0 / n as f64;
            // 1 / (n * C(n-1, s))
            for k in 0..s {
                w *= (k + 1) as f64 / (n - 1 - k) as f64;
            }
            w
        })
        .collect();
    let mut phi = vec![0.0; n];
    for mask in 0usize..1 << n {
        let s = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[s] * (values[mask | 1 << i] - values[mask]);
            }
        }
    }
    finite(phi, "exact Shapley")
}

/// Mean marginal contribution over `permutations` random orderings.
/// Permutation `p` is drawn from the stream `sub_seed(seed, p)`.
pub fn shapley_sampling(
    game: &dyn CoalitionGame,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if permutations == 0 {
        return Err(Error::InvalidValue("need at least one permutation".into()));
    }
    let n = game.players();
    let empty = game.value(&vec![false; n])?;
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for p in 0..permutations {
        order.sort_unstable();
        order.shuffle(&mut sub_rng(seed, p as u64));
        let mut present = vec![false; n];
        let mut prev = empty;
        for &i in &order {
            present[i] = true;
            let cur = game.value(&present)?;
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter_mut().for_each(|v| *v /= permutations as f64);
    finite(phi, "Shapley sampling")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShapMode {
    /// Draw this many coalitions, sizes proportional to the kernel mass.
    Sampled(usize),
    /// Every coalition with 1 ≤ |z| ≤ n − 1, weighted by the Shapley kernel.
    Exhaustive,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `(n − 1) / (C(n, s) s (n − s))`.
fn shapley_kernel(n: usize, s: usize) -> f64 {
    (n - 1) as f64 / (binomial(n, s) * s as f64 * (n - s) as f64)
}

/// Solve `a x = b` by Cholesky, retrying with a `ridge` shift if `a` is not positive definite.
fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    let n = a.nrows();
    (a + DMatrix::identity(n, n) * ridge)
        .cholesky()
        .map(|ch| ch.solve(&b))
        .ok_or_else(|| Error::NonFinite("regression normal equations".into()))
}

/// Kernel SHAP: Shapley-kernel weighted least squares with the efficiency
/// constraint `Σφ = v(N) − v(∅)` eliminated through the last player.
///
/// Sampled coalitions are drawn with probability proportional to their
/// kernel weight, so each enters the regression with unit weight.
pub fn kernel_shap(
    game: &dyn CoalitionGame,
    mode: KernelShapMode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = game.players();
    let (v0, v1) = endpoints(game)?;
    let total = v1 - v0;
    if n == 1 {
        return Ok(vec![total]);
    }

    let mut rows: Vec<(Vec<bool>, f64)> = Vec::new();
    match mode {
        KernelShapMode::Exhaustive => {
            if n > MAX_EXACT_PLAYERS {
                return Err(Error::InvalidValue(format!(
                    "exhaustive Kernel SHAP supports at most {MAX_EXACT_PLAYERS} players, got {n}"
                )));
            }
            for mask in 1usize..(1 << n) - 1 {
                let z: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                rows.push((z, shapley_kernel(n, mask.count_ones() as usize)));
            }
        }
        KernelShapMode::Sampled(count) => {
            if count == 0 {
                return Err(Error::InvalidValue(
                    "need at least one coalition sample".into(),
                ));
            }
            // kernel mass of all coalitions of size s is (n-1) / (s (n-s))
            let mass: Vec<f64> = (1..n)
                .map(|s| (n - 1) as f64 / (s * (n - s)) as f64)
                .collect();
            let total_mass: f64 = mass.iter().sum();
            let mut players: Vec<usize> = (0..n).collect();
            for _ in 0..count {
                let mut u = rng.gen::<f64>() * total_mass;
                let mut size = n - 1;
                for (s, m) in mass.iter().enumerate() {
                    if u < *m {
                        size = s + 1;
                        break;
                    }
                    u -= m;
                }
                let (chosen, _) = players.partial_shuffle(rng, size);
                let mut z = vec![false; n];
                chosen.iter().for_each(|&i| z[i] = true);
                rows.push((z, 1.0));
            }
        }
    }

    // y - v0 - z_last * total = Σ_{i<last} φ_i (z_i - z_last)
    let k = n - 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DVector::<f64>::zeros(k);
    let mut xrow = vec![0.0; k];
    for (z, w) in &rows {
        let zl = if z[k] { 1.0 } else { 0.0 };
        let y = game.value(z)? - v0 - zl * total;
        for (i, x) in xrow.iter_mut().enumerate() {
            *x = (if z[i] { 1.0 } else { 0.0 }) - zl;
        }
        for i in 0..k {
            if xrow[i] == 0.0 {
                continue;
            }
            atb[i] += w * xrow[i] * y;
            for j in 0..k {
                ata[(i, j)] += w * xrow[i] * xrow[j];
            }
        }
    }
    let head = solve_spd(ata, atb, 1e-6)?;
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    finite(phi, "Kernel SHAP")
}

/// LIME with Bernoulli(0.5) segment masks, an exponential kernel on the
/// fraction of masked segments, and a weighted ridge fit with an unpenalized
/// intercept. The coefficients are the segment attributions.
pub fn lime(
    game: &dyn CoalitionGame,
    samples: usize,
    kernel_width: f64,
    ridge: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::InvalidValue("need at least one LIME sample".into()));
    }
    let n = game.players();
    let mut zs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    let mut ws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let d = z.iter().filter(|&&p| !p).count() as f64 / n as f64;
        ws.push((-(d * d) / (kernel_width * kernel_width)).exp());
        ys.push(game.value(&z)?);
        zs.push(z);
    }
    let wsum: f64 = ws.iter().sum();
    let ybar = ws.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / wsum;
    let zbar: Vec<f64> = (0..n)
        .map(|i| {
            ws.iter()
                .zip(&zs)
                .filter(|(_, z)| z[i])
                .map(|(w, _)| w)
                .sum::<f64>()
                / wsum
        })
        .collect();

    let mut ata = DMatrix::<f64>::identity(n, n) * ridge;
    let mut atb = DVector::<f64>::zeros(n);
    let mut xrow = vec![0.0; n];
    for ((z, &y), &w) in zs.iter().zip(&ys).zip(&ws) {
        for (i, x) in xrow.iter_mut().enumerate() {
            *x = (if z[i] { 1.0 } else { 0.0 }) - zbar[i];
        }
        let yc = y - ybar;
        for i in 0..n {
            atb[i] += w * xrow[i] * yc;
            for j in i..n {
                ata[(i, j)] += w * xrow[i] * xrow[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let beta = solve_spd(ata, atb, 1e-6)?;
    finite(beta.iter().copied().collect(), "LIME")
}

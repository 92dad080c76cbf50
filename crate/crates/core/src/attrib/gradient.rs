use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{AttributionMethod, ExplainRequest, MethodId};
use crate::image::{AttributionMap, Image};
use crate::recognizer::{BackwardRule, Recognizer};
use crate::rng::rng;
use crate::{Error, Result};

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn difference(x: &Image, x0: &Image) -> Vec<f64> {
    x.data().iter().zip(x0.data()).map(|(a, b)| a - b).collect()
}

/// `x0 + t (x - x0)`
fn interpolate(x0: &Image, x: &Image, t: f64) -> Result<Image> {
    Image::new(
        x0.data()
            .iter()
            .zip(x.data())
            .map(|(&a, &b)| (a + t * (b - a)).clamp(0.0, 1.0))
            .collect(),
    )
}

pub(super) fn explain(
    method: &AttributionMethod,
    model: &dyn Recognizer,
    req: &ExplainRequest<'_>,
) -> Result<AttributionMap> {
    let x = req.image;
    let spec = req.spec;
    let grad = |img: &Image, rule: &BackwardRule| model.score_gradient(img, spec, rule);
    let p = &method.params;

    let values = match method.id {
        MethodId::Saliency => grad(x, &BackwardRule::Standard)?
            .map(f64::abs)?
            .into_values(),
        MethodId::InputXGradient => product(x.data(), grad(x, &BackwardRule::Standard)?.values()),
        MethodId::GuidedBackprop => grad(x, &BackwardRule::Guided)?.into_values(),
        MethodId::Deconvolution => grad(x, &BackwardRule::Deconv)?.into_values(),
        MethodId::IntegratedGradients => {
            let x0 = Image::filled(req.baseline)?;
            let m = p.ig_steps;
            let mut avg = vec![0.0; x.data().len()];
            for t in 1..=m {
                let alpha = (t as f64 - 0.5) / m as f64;
                let g = grad(&interpolate(&x0, x, alpha)?, &BackwardRule::Standard)?;
                avg.iter_mut().zip(g.values()).for_each(|(a, v)| *a += v);
            }
            avg.iter_mut().for_each(|a| *a /= m as f64);
            product(&difference(x, &x0), &avg)
        }
        MethodId::GradientSHAP => {
            let mut r = rng(p.seed);
            let noise = Normal::new(0.0, p.gradshap_sigma)
                .map_err(|e| Error::InvalidValue(e.to_string()))?;
            let n = p.gradshap_samples;
            let mut acc = vec![0.0; x.data().len()];
            for _ in 0..n {
                let x0 = Image::new(
                    (0..x.data().len())
                        .map(|_| (req.baseline + noise.sample(&mut r)).clamp(0.0, 1.0))
                        .collect(),
                )?;
                let alpha: f64 = r.gen();
                let g = grad(&interpolate(&x0, x, alpha)?, &BackwardRule::Standard)?;
                for ((a, d), gv) in acc.iter_mut().zip(difference(x, &x0)).zip(g.values()) {
                    *a += d * gv;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            acc
        }
        MethodId::DeepLift => {
            let x0 = Image::filled(req.baseline)?;
            let rule = BackwardRule::DeepLiftRescale {
                baseline: Some(model.trace(&x0)?),
            };
            product(&difference(x, &x0), grad(x, &rule)?.values())
        }
        other => unreachable!("{other} is not a gradient method"),
    };
    AttributionMap::from_values(values)
}

//! Selectivity: how fast recognition performance falls as the most relevant
//! segments are removed first. Lower area under the curve is better.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attrib::{explain, AttributionMethod, ExplainRequest, MethodId};
use crate::image::{segment_means, AttributionMap, SegmentMap};
use crate::par::{mean, Exec};
use crate::recognizer::{decode, Decoded, ModelOutput, Recognizer};
use crate::rng::sub_seed;
use crate::synth::Sample;
use crate::{Error, Result};

/// Performance function plotted on the selectivity curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// 1 if the decoded text equals the ground-truth label, else 0.
    Accuracy,
    /// Mean per-slot probability of the prediction made on the unperturbed image.
    Confidence,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Accuracy, Metric::Confidence];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Confidence => "confidence",
        }
    }

    fn measure(self, out: &ModelOutput, label: &str, frozen: &Decoded) -> f64 {
        match self {
            Metric::Accuracy => {
                if decode(out).text == label {
                    1.0
                } else {
                    0.0
                }
            }
            Metric::Confidence => frozen.global_spec().of(out),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "accuracy" => Ok(Metric::Accuracy),
            "confidence" => Ok(Metric::Confidence),
            other => Err(Error::InvalidValue(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityCurve {
    /// Removed fraction of segments, `t / m`.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub auc: f64,
}

impl SelectivityCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Dimension(format!(
                "curve with {} xs and {} ys",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidValue(
                "curve xs must be strictly increasing".into(),
            ));
        }
        let auc = trapezoid(&xs, &ys);
        Ok(SelectivityCurve { xs, ys, auc })
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Trapezoidal area under the curve.
pub fn selectivity_auc(curve: &SelectivityCurve) -> f64 {
    trapezoid(&curve.xs, &curve.ys)
}

/// Accuracy and confidence curves of one image, sharing their forward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub accuracy: SelectivityCurve,
    pub confidence: SelectivityCurve,
}

impl CurvePair {
    pub fn get(&self, metric: Metric) -> &SelectivityCurve {
        match metric {
            Metric::Accuracy => &self.accuracy,
            Metric::Confidence => &self.confidence,
        }
    }
}

/// Removal order: segments by descending mean attribution, ties to the lower id.
pub fn removal_order(attr: &AttributionMap, seg: &SegmentMap) -> Result<Vec<usize>> {
    Ok(segment_means(attr, seg)?.ranking())
}

/// Both selectivity curves of `sample` under `attr`.
pub fn selectivity_curves(
    model: &dyn Recognizer,
    sample: &Sample,
    attr: &AttributionMap,
    seg: &SegmentMap,
    baseline: f64,
) -> Result<CurvePair> {
    let order = removal_order(attr, seg)?;
    let masked = model.masked(&sample.image, seg, baseline)?;
    let m = seg.segment_count();
    let mut present = vec![true; m];
    let first = masked.output(&present)?;
    let frozen = decode(&first);
    let mut acc = Vec::with_capacity(m + 1);
    let mut conf = Vec::with_capacity(m + 1);
    let mut record = |out: &ModelOutput| {
        acc.push(Metric::Accuracy.measure(out, &sample.label, &frozen));
        conf.push(Metric::Confidence.measure(out, &sample.label, &frozen));
    };
    record(&first);
    for &s in &order {
        present[s] = false;
        record(&masked.output(&present)?);
    }
    let xs: Vec<f64> = (0..=m).map(|t| t as f64 / m as f64).collect();
    Ok(CurvePair {
        accuracy: SelectivityCurve::new(xs.clone(), acc)?,
        confidence: SelectivityCurve::new(xs, conf)?,
    })
}

pub fn selectivity_curve(
    model: &dyn Recognizer,
    sample: &Sample,
    attr: &AttributionMap,
    seg: &SegmentMap,
    baseline: f64,
    metric: Metric,
) -> Result<SelectivityCurve> {
    let pair = selectivity_curves(model, sample, attr, seg, baseline)?;
    Ok(match metric {
        Metric::Accuracy => pair.accuracy,
        Metric::Confidence => pair.confidence,
    })
}

/// Mean per-image AUC over `samples`. `attribution(i, sample, prediction)`
/// supplies the map for image `i`.
pub fn dataset_selectivity<F>(
    model: &dyn Recognizer,
    samples: &[Sample],
    seg: &SegmentMap,
    baseline: f64,
    metric: Metric,
    exec: Exec,
    attribution: F,
) -> Result<f64>
where
    F: Fn(usize, &Sample, &Decoded) -> Result<AttributionMap> + Sync + Send,
{
    if samples.is_empty() {
        return Err(Error::InvalidValue("dataset is empty".into()));
    }
    let aucs = exec.try_map_range(samples.len(), |i| {
        let s = &samples[i];
        let pred = decode(&model.forward(&s.image)?);
        let attr = attribution(i, s, &pred)?;
        Ok::<_, Error>(selectivity_curve(model, s, &attr, seg, baseline, metric)?.auc)
    })?;
    Ok(mean(&aucs))
}

/// Global explanation of image `index` by `method`, with the per-image seed
/// `sub_seed(method.params.seed, index)`.
pub fn global_attribution(
    model: &dyn Recognizer,
    method: &AttributionMethod,
    index: usize,
    sample: &Sample,
    prediction: &Decoded,
    seg: &SegmentMap,
    baseline: f64,
) -> Result<AttributionMap> {
    let spec = prediction.global_spec();
    let m = method.with_seed(sub_seed(method.params.seed, index as u64));
    explain(
        &m,
        model,
        &ExplainRequest {
            image: &sample.image,
            spec: &spec,
            segments: Some(seg),
            baseline,
        },
    )
}

/// Aggregate selectivity per method and the minimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub scores: Vec<(MethodId, f64)>,
    pub best: MethodId,
}

impl MethodRanking {
    /// Pick the minimal score; ties go to the method listed first in reporting order.
    pub fn from_scores(scores: Vec<(MethodId, f64)>) -> Result<Self> {
        let best = scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.order().cmp(&b.0.order())))
            .map(|(m, _)| *m)
            .ok_or_else(|| Error::InvalidValue("no methods to rank".into()))?;
        Ok(MethodRanking { scores, best })
    }
}

/// Score every method by its mean global-explanation selectivity on `samples`
/// and return the ranking.
pub fn query_best(
    model: &dyn Recognizer,
    samples: &[Sample],
    methods: &[AttributionMethod],
    seg: &SegmentMap,
    baseline: f64,
    metric: Metric,
    exec: Exec,
) -> Result<MethodRanking> {
    if methods.is_empty() {
        return Err(Error::InvalidValue("no methods to rank".into()));
    }
    let scores = methods
        .iter()
        .map(|method| {
            let z =
                dataset_selectivity(model, samples, seg, baseline, metric, exec, |i, s, pred| {
                    global_attribution(model, method, i, s, pred, seg, baseline)
                })?;
            Ok((method.id, z))
        })
        .collect::<Result<Vec<_>>>()?;
    MethodRanking::from_scores(scores)
}

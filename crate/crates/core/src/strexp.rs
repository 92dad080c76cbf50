//! Sequence explanations that combine a global map with per-character
//! local maps computed by a single base attribution method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attrib::{explain, AttributionMethod, ExplainRequest, MethodId, MethodParams};
use crate::image::{AttributionMap, Image, SegmentMap};
use crate::par::Exec;
use crate::recognizer::{char_of, decode, Decoded, Recognizer, ScoreSpec, BLANK, SLOTS};
use crate::selectivity::{query_best, MethodRanking, Metric};
use crate::synth::Sample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrExpMode {
    /// Global and local maps.
    GL,
    /// Local maps only.
    L,
}

impl StrExpMode {
    pub fn name(self) -> &'static str {
        match self {
            StrExpMode::GL => "StrExp-GL",
            StrExpMode::L => "StrExp-L",
        }
    }
}

impl FromStr for StrExpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "GL" | "gl" | "StrExp-GL" => Ok(StrExpMode::GL),
            "L" | "l" | "StrExp-L" => Ok(StrExpMode::L),
            other => Err(Error::InvalidValue(format!(
                "unknown mode {other:?} (expected GL or L)"
            ))),
        }
    }
}

impl fmt::Display for StrExpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseMethod {
    /// Choose by selectivity on a calibration set.
    Auto,
    Fixed(MethodId),
}

impl FromStr for BaseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(BaseMethod::Auto),
            other => Ok(BaseMethod::Fixed(other.parse()?)),
        }
    }
}

impl fmt::Display for BaseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseMethod::Auto => f.write_str("auto"),
            BaseMethod::Fixed(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide each component by its max absolute value.
    #[default]
    Linf,
    None,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linf" => Ok(Normalization::Linf),
            "none" => Ok(Normalization::None),
            other => Err(Error::InvalidValue(format!(
                "unknown normalization {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Linf => "linf",
            Normalization::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrExpConfig {
    pub mode: StrExpMode,
    pub base_method: BaseMethod,
    pub normalization: Normalization,
    pub include_blank_slots: bool,
    pub params: MethodParams,
    /// Performance function used to pick the base method when `Auto`.
    pub query_metric: Metric,
}

impl Default for StrExpConfig {
    fn default() -> Self {
        StrExpConfig {
            mode: StrExpMode::GL,
            base_method: BaseMethod::Auto,
            normalization: Normalization::Linf,
            include_blank_slots: false,
            params: MethodParams::default(),
            query_metric: Metric::Confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub slot: usize,
    /// Predicted class at `slot`, the target of this map.
    pub class: usize,
    /// Character of `class`, `None` for blank.
    pub character: Option<char>,
    pub map: AttributionMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrExpResult {
    pub final_map: AttributionMap,
    /// Present in GL mode.
    pub global: Option<AttributionMap>,
    pub locals: Vec<LocalExplanation>,
    pub base_method: MethodId,
    /// Calibration ranking when the base method was chosen automatically.
    pub ranking: Option<MethodRanking>,
    pub prediction: Decoded,
}

fn request<'a>(
    img: &'a Image,
    spec: &'a ScoreSpec,
    seg: &'a SegmentMap,
    baseline: f64,
) -> ExplainRequest<'a> {
    ExplainRequest {
        image: img,
        spec,
        segments: Some(seg),
        baseline,
    }
}

/// Attribution of the mean confidence of the model's own prediction.
pub fn global_explanation(
    model: &dyn Recognizer,
    img: &Image,
    method: &AttributionMethod,
    seg: &SegmentMap,
    baseline: f64,
) -> Result<AttributionMap> {
    let spec = decode(&model.forward(img)?).global_spec();
    explain(method, model, &request(img, &spec, seg, baseline))
}

/// One map per explained slot, in slot order, each targeting the predicted
/// class of that slot. Blank slots are skipped unless `include_blank_slots`.
pub fn local_explanations(
    model: &dyn Recognizer,
    img: &Image,
    method: &AttributionMethod,
    seg: &SegmentMap,
    baseline: f64,
    include_blank_slots: bool,
) -> Result<Vec<LocalExplanation>> {
    let pred = decode(&model.forward(img)?);
    locals_for(
        model,
        img,
        &pred,
        method,
        seg,
        baseline,
        include_blank_slots,
    )
}

fn locals_for(
    model: &dyn Recognizer,
    img: &Image,
    pred: &Decoded,
    method: &AttributionMethod,
    seg: &SegmentMap,
    baseline: f64,
    include_blank_slots: bool,
) -> Result<Vec<LocalExplanation>> {
    (0..SLOTS)
        .filter(|&k| include_blank_slots || pred.slot_argmax[k] != BLANK)
        .map(|slot| {
            let class = pred.slot_argmax[slot];
            let spec = ScoreSpec::Local {
                slot,
                target_class: class,
            };
            let map = explain(method, model, &request(img, &spec, seg, baseline))?;
            Ok(LocalExplanation {
                slot,
                class,
                character: char_of(class),
                map,
            })
        })
        .collect()
}

fn normalized(map: &AttributionMap, norm: Normalization) -> Vec<f64> {
    match norm {
        Normalization::None => map.values().to_vec(),
        Normalization::Linf => {
            let m = map.max_abs();
            if m < 1e-12 {
                vec![0.0; map.values().len()]
            } else {
                map.values().iter().map(|v| v / m).collect()
            }
        }
    }
}

/// Equal-weight pixel-wise mean of the (optionally normalized) components.
pub fn combine(
    global: Option<&AttributionMap>,
    locals: &[&AttributionMap],
    norm: Normalization,
) -> Result<AttributionMap> {
    let parts: Vec<&AttributionMap> = global.into_iter().chain(locals.iter().copied()).collect();
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidValue("combine needs at least one map".into()))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = parts.iter().find(|m| m.height() != h || m.width() != w) {
        return Err(Error::Dimension(format!(
            "cannot combine {}x{} with {}x{}",
            h,
            w,
            bad.height(),
            bad.width()
        )));
    }
    let mut sum = vec![0.0; h * w];
    for part in &parts {
        sum.iter_mut()
            .zip(normalized(part, norm))
            .for_each(|(s, v)| *s += v);
    }
    let n = parts.len() as f64;
    AttributionMap::new(h, w, sum.into_iter().map(|s| s / n).collect())
}

/// Resolve the base method, querying `calibration` when it is `Auto`.
pub fn resolve_base(
    model: &dyn Recognizer,
    cfg: &StrExpConfig,
    candidates: &[MethodId],
    seg: &SegmentMap,
    baseline: f64,
    calibration: Option<&[Sample]>,
    exec: Exec,
) -> Result<(MethodId, Option<MethodRanking>)> {
    match cfg.base_method {
        BaseMethod::Fixed(id) => Ok((id, None)),
        BaseMethod::Auto => {
            let calib = calibration.ok_or_else(|| {
                Error::Missing("automatic base method needs a calibration set".into())
            })?;
            let methods: Vec<AttributionMethod> = candidates
                .iter()
                .map(|&id| AttributionMethod::with_params(id, cfg.params.clone()))
                .collect();
            let ranking = query_best(
                model,
                calib,
                &methods,
                seg,
                baseline,
                cfg.query_metric,
                exec,
            )?;
            Ok((ranking.best, Some(ranking)))
        }
    }
}

/// Combine precomputed maps per `mode`. In local-only mode a prediction with
/// no characters falls back to every slot so the result is never empty.
pub fn assemble(
    model: &dyn Recognizer,
    img: &Image,
    pred: &Decoded,
    method: &AttributionMethod,
    mode: StrExpMode,
    global: Option<AttributionMap>,
    mut locals: Vec<LocalExplanation>,
    seg: &SegmentMap,
    baseline: f64,
    norm: Normalization,
) -> Result<(
    AttributionMap,
    Option<AttributionMap>,
    Vec<LocalExplanation>,
)> {
    let global = match mode {
        StrExpMode::L => None,
        StrExpMode::GL => global,
    };
    if global.is_none() && locals.is_empty() {
        locals = locals_for(model, img, pred, method, seg, baseline, true)?;
    }
    let refs: Vec<&AttributionMap> = locals.iter().map(|l| &l.map).collect();
    let final_map = combine(global.as_ref(), &refs, norm)?;
    Ok((final_map, global, locals))
}

/// Full pipeline on one image.
pub fn strexp_explain(
    model: &dyn Recognizer,
    img: &Image,
    cfg: &StrExpConfig,
    seg: &SegmentMap,
    baseline: f64,
    calibration: Option<&[Sample]>,
) -> Result<StrExpResult> {
    let (base, ranking) = resolve_base(
        model,
        cfg,
        &MethodId::ALL,
        seg,
        baseline,
        calibration,
        Exec::default(),
    )?;
    let method = AttributionMethod::with_params(base, cfg.params.clone());
    let pred = decode(&model.forward(img)?);
    let global = match cfg.mode {
        StrExpMode::GL => Some(explain(
            &method,
            model,
            &request(img, &pred.global_spec(), seg, baseline),
        )?),
        StrExpMode::L => None,
    };
    let locals = locals_for(
        model,
        img,
        &pred,
        &method,
        seg,
        baseline,
        cfg.include_blank_slots,
    )?;
    let (final_map, global, locals) = assemble(
        model,
        img,
        &pred,
        &method,
        cfg.mode,
        global,
        locals,
        seg,
        baseline,
        cfg.normalization,
    )?;
    Ok(StrExpResult {
        final_map,
        global,
        locals,
        base_method: base,
        ranking,
        prediction: pred,
    })
}

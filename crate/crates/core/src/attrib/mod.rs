//! Attribution methods behind a single [`explain`] entry point.
//!
//! Gradient methods attribute individual pixels. Perturbation methods
//! attribute segments of a [`SegmentMap`] and broadcast each segment's value
//! to its pixels, so every method yields a per-pixel [`AttributionMap`].

mod game;
mod gradient;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use game::{
    exact_shapley_values, feature_ablation, kernel_shap, lime, shapley_sampling, CoalitionGame,
    FnGame, KernelShapMode, ModelGame,
};

use crate::image::{AttributionMap, Image, SegmentMap, SegmentScores};
use crate::recognizer::{Recognizer, ScoreSpec};
use crate::rng::rng;
use crate::{Error, Result};

/// The compared attribution methods, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodId {
    IntegratedGradients,
    GradientSHAP,
    DeepLift,
    Saliency,
    InputXGradient,
    GuidedBackprop,
    Deconvolution,
    KernelSHAP,
    FeatureAblation,
    LIME,
    ShapleySampling,
}

impl MethodId {
    pub const ALL: [MethodId; 11] = [
        MethodId::IntegratedGradients,
        MethodId::GradientSHAP,
        MethodId::DeepLift,
        MethodId::Saliency,
        MethodId::InputXGradient,
        MethodId::GuidedBackprop,
        MethodId::Deconvolution,
        MethodId::KernelSHAP,
        MethodId::FeatureAblation,
        MethodId::LIME,
        MethodId::ShapleySampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::IntegratedGradients => "IntegratedGradients",
            MethodId::GradientSHAP => "GradientSHAP",
            MethodId::DeepLift => "DeepLift",
            MethodId::Saliency => "Saliency",
            MethodId::InputXGradient => "InputXGradient",
            MethodId::GuidedBackprop => "GuidedBackprop",
            MethodId::Deconvolution => "Deconvolution",
            MethodId::KernelSHAP => "KernelSHAP",
            MethodId::FeatureAblation => "FeatureAblation",
            MethodId::LIME => "LIME",
            MethodId::ShapleySampling => "ShapleySampling",
        }
    }

    /// Short label used in plots and tables.
    pub fn abbreviation(self) -> &'static str {
        match self {
            MethodId::IntegratedGradients => "IntGrd",
            MethodId::GradientSHAP => "GSHAP",
            MethodId::DeepLift => "DpLft",
            MethodId::Saliency => "Sal",
            MethodId::InputXGradient => "IXG",
            MethodId::GuidedBackprop => "Gd-Bp",
            MethodId::Deconvolution => "Deconv",
            MethodId::KernelSHAP => "KSHAP",
            MethodId::FeatureAblation => "FtAblt",
            MethodId::LIME => "LIME",
            MethodId::ShapleySampling => "Shapley",
        }
    }

    /// Two- or three-letter alias accepted on the command line.
    pub fn short(self) -> &'static str {
        match self {
            MethodId::IntegratedGradients => "IG",
            MethodId::GradientSHAP => "GS",
            MethodId::DeepLift => "DL",
            MethodId::Saliency => "SAL",
            MethodId::InputXGradient => "IXG",
            MethodId::GuidedBackprop => "GB",
            MethodId::Deconvolution => "DC",
            MethodId::KernelSHAP => "KS",
            MethodId::FeatureAblation => "FA",
            MethodId::LIME => "LIME",
            MethodId::ShapleySampling => "SS",
        }
    }

    /// Position in [`list_methods`], used for tie-breaking.
    pub fn order(self) -> usize {
        MethodId::ALL
            .iter()
            .position(|&m| m == self)
            .expect("listed")
    }

    pub fn uses_gradients(self) -> bool {
        !self.uses_segments()
    }

    pub fn uses_segments(self) -> bool {
        matches!(
            self,
            MethodId::KernelSHAP
                | MethodId::FeatureAblation
                | MethodId::LIME
                | MethodId::ShapleySampling
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        MethodId::ALL
            .into_iter()
            .find(|m| {
                m.name().eq_ignore_ascii_case(t)
                    || m.abbreviation().eq_ignore_ascii_case(t)
                    || m.short().eq_ignore_ascii_case(t)
            })
            .ok_or_else(|| Error::InvalidValue(format!("unknown attribution method {t:?}")))
    }
}

/// The method ids in reporting order.
pub fn list_methods() -> [MethodId; 11] {
    MethodId::ALL
}

/// Sample budgets and other knobs shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub ig_steps: usize,
    pub gradshap_samples: usize,
    pub gradshap_sigma: f64,
    pub kernel_shap_samples: usize,
    /// Enumerate every coalition instead of sampling (small segment counts only).
    pub kernel_shap_exhaustive: bool,
    pub lime_samples: usize,
    pub lime_kernel_width: f64,
    pub lime_ridge: f64,
    pub shapley_permutations: usize,
    pub seed: u64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            ig_steps: 32,
            gradshap_samples: 16,
            gradshap_sigma: 0.09,
            kernel_shap_samples: 400,
            kernel_shap_exhaustive: false,
            lime_samples: 400,
            lime_kernel_width: 0.25,
            lime_ridge: 1e-3,
            shapley_permutations: 25,
            seed: 0,
        }
    }
}

impl MethodParams {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps < 2 {
            return Err(Error::InvalidValue("ig_steps must be at least 2".into()));
        }
        let counts = [
            ("gradshap_samples", self.gradshap_samples),
            ("kernel_shap_samples", self.kernel_shap_samples),
            ("lime_samples", self.lime_samples),
            ("shapley_permutations", self.shapley_permutations),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v < 1) {
            return Err(Error::InvalidValue(format!("{name} must be at least 1")));
        }
        if !(self.gradshap_sigma >= 0.0)
            || !(self.lime_kernel_width > 0.0)
            || !(self.lime_ridge >= 0.0)
        {
            return Err(Error::InvalidValue(
                "sigma, kernel width and ridge must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMethod {
    pub id: MethodId,
    pub params: MethodParams,
}

impl AttributionMethod {
    pub fn new(id: MethodId) -> Self {
        AttributionMethod {
            id,
            params: MethodParams::default(),
        }
    }

    pub fn with_params(id: MethodId, params: MethodParams) -> Self {
        AttributionMethod { id, params }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut m = self.clone();
        m.params.seed = seed;
        m
    }
}

/// What to explain: an image, a scalar of the model output, and the
/// segmentation and fill value used by perturbation methods.
#[derive(Debug, Clone, Copy)]
pub struct ExplainRequest<'a> {
    pub image: &'a Image,
    pub spec: &'a ScoreSpec,
    pub segments: Option<&'a SegmentMap>,
    pub baseline: f64,
}

/// Attribution map of `req.spec` under `method`.
pub fn explain(
    method: &AttributionMethod,
    model: &dyn Recognizer,
    req: &ExplainRequest<'_>,
) -> Result<AttributionMap> {
    method.params.validate()?;
    req.spec.validate()?;
    if !(0.0..=1.0).contains(&req.baseline) {
        return Err(Error::InvalidValue(format!(
            "baseline {} outside [0, 1]",
            req.baseline
        )));
    }
    let p = &method.params;
    if method.id.uses_segments() {
        let seg = req
            .segments
            .ok_or_else(|| Error::Missing(format!("{} needs a segment map", method.id)))?;
        let game = ModelGame::new(model, req.image, seg, req.baseline, req.spec)?;
        let mut r = rng(p.seed);
        let scores = match method.id {
            MethodId::FeatureAblation => feature_ablation(&game)?,
            MethodId::ShapleySampling => shapley_sampling(&game, p.shapley_permutations, p.seed)?,
            MethodId::KernelSHAP => {
                let mode = if p.kernel_shap_exhaustive {
                    KernelShapMode::Exhaustive
                } else {
                    KernelShapMode::Sampled(p.kernel_shap_samples)
                };
                kernel_shap(&game, mode, &mut r)?
            }
            MethodId::LIME => lime(
                &game,
                p.lime_samples,
                p.lime_kernel_width,
                p.lime_ridge,
                &mut r,
            )?,
            _ => unreachable!("segment methods only"),
        };
        return AttributionMap::from_segment_values(seg, &scores);
    }
    if !model.has_gradients() {
        return Err(Error::GradientUnavailable(method.id.name()));
    }
    gradient::explain(method, model, req)
}

/// Exact Shapley values of the segments by enumerating all `2^n` coalitions.
/// The value of a coalition is the score with every other segment masked.
pub fn exact_shapley(model: &dyn Recognizer, req: &ExplainRequest<'_>) -> Result<SegmentScores> {
    req.spec.validate()?;
    let seg = req
        .segments
        .ok_or_else(|| Error::Missing("exact Shapley needs a segment map".into()))?;
    let game = ModelGame::new(model, req.image, seg, req.baseline, req.spec)?;
    Ok(SegmentScores {
        scores: exact_shapley_values(&game)?,
    })
}

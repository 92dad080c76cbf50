//! Forward passes over segment-masked copies of one image.

use super::{ModelOutput, Recognizer, SlotNet, HIDDEN};
use crate::image::{mask_absent, Image, SegmentMap, HEIGHT, WIDTH};
use crate::{Error, Result};

/// Evaluates the model on `image` with the absent segments set to the baseline.
pub trait MaskedForward {
    fn segment_count(&self) -> usize;

    /// Output for the presence mask `present` (one flag per segment).
    fn output(&self, present: &[bool]) -> Result<ModelOutput>;
}

fn check(seg: &SegmentMap, baseline: f64) -> Result<()> {
    if seg.height() != HEIGHT || seg.width() != WIDTH {
        return Err(Error::Dimension(format!(
            "segment map is {}x{}, canvas is {HEIGHT}x{WIDTH}",
            seg.height(),
            seg.width()
        )));
    }
    if !(0.0..=1.0).contains(&baseline) {
        return Err(Error::InvalidValue(format!(
            "baseline {baseline} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_mask(present: &[bool], n: usize) -> Result<()> {
    if present.len() != n {
        return Err(Error::Dimension(format!(
            "presence mask of {} for {n} segments",
            present.len()
        )));
    }
    Ok(())
}

/// Generic evaluator: builds each masked image and runs a full forward pass.
pub struct MaskedImages<'a, R: ?Sized> {
    model: &'a R,
    image: &'a Image,
    seg: &'a SegmentMap,
    baseline: f64,
}

impl<'a, R: Recognizer + ?Sized> MaskedImages<'a, R> {
    pub fn new(model: &'a R, image: &'a Image, seg: &'a SegmentMap, baseline: f64) -> Result<Self> {
        check(seg, baseline)?;
        Ok(MaskedImages {
            model,
            image,
            seg,
            baseline,
        })
    }
}

impl<R: Recognizer + ?Sized> MaskedForward for MaskedImages<'_, R> {
    fn segment_count(&self) -> usize {
        self.seg.segment_count()
    }

    fn output(&self, present: &[bool]) -> Result<ModelOutput> {
        check_mask(present, self.seg.segment_count())?;
        self.model
            .forward(&mask_absent(self.image, self.seg, present, self.baseline)?)
    }
}

/// Uses the linearity of the first layer: removing segment `s` shifts the
/// hidden pre-activation by a fixed vector `delta[s]`, so a masked pass costs
/// one vector add per absent segment plus the heads. The two endpoint masks
/// (nothing or everything removed) are cached full forward passes.
pub(crate) struct SlotNetMasked<'a> {
    model: &'a SlotNet,
    n: usize,
    pre: Vec<f64>,
    deltas: Vec<f64>,
    full: ModelOutput,
    empty: ModelOutput,
}

impl<'a> SlotNetMasked<'a> {
    pub(crate) fn new(
        model: &'a SlotNet,
        image: &Image,
        seg: &SegmentMap,
        baseline: f64,
    ) -> Result<Self> {
        check(seg, baseline)?;
        let n = seg.segment_count();
        let x = image.data();
        let pre = model.pre_activation(x);
        let mut deltas = vec![0.0; n * HIDDEN];
        for s in 0..n {
            let d = &mut deltas[s * HIDDEN..(s + 1) * HIDDEN];
            for &i in seg.pixels(s) {
                let change = baseline - x[i];
                if change != 0.0 {
                    super::axpy(change, model.pixel_weights(i), d);
                }
            }
        }
        let full = model.output_from_pre(&pre);
        let empty = model.forward(&Image::filled(baseline)?)?;
        Ok(SlotNetMasked {
            model,
            n,
            pre,
            deltas,
            full,
            empty,
        })
    }
}

impl MaskedForward for SlotNetMasked<'_> {
    fn segment_count(&self) -> usize {
        self.n
    }

    fn output(&self, present: &[bool]) -> Result<ModelOutput> {
        check_mask(present, self.n)?;
        if present.iter().all(|&p| p) {
            return Ok(self.full.clone());
        }
        if present.iter().all(|&p| !p) {
            return Ok(self.empty.clone());
        }
        let mut pre = self.pre.clone();
        for (s, _) in present.iter().enumerate().filter(|(_, &p)| !p) {
            super::axpy(1.0, &self.deltas[s * HIDDEN..(s + 1) * HIDDEN], &mut pre);
        }
        Ok(self.model.output_from_pre(&pre))
    }
}

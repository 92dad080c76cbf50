//! Rasters, segmentations and attribution maps.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Canvas height in pixels.
pub const HEIGHT: usize = 32;
/// Canvas width in pixels.
pub const WIDTH: usize = 128;
/// Number of pixels on the canvas.
pub const PIXELS: usize = HEIGHT * WIDTH;

/// Default grid cell (8×8 pixels, 64 segments on the canvas).
pub const DEFAULT_CELL: usize = 8;

/// A 32×128 grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f64>,
}

impl Image {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != PIXELS {
            return Err(Error::Dimension(format!(
                "image needs {PIXELS} pixels, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image pixel {i}")));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue(format!(
                "image pixel {i} = {} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Image { data })
    }

    pub fn filled(value: f64) -> Result<Self> {
        Image::new(vec![value; PIXELS])
    }

    pub fn height(&self) -> usize {
        HEIGHT
    }

    pub fn width(&self) -> usize {
        WIDTH
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * WIDTH + col]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Partition of the canvas into labelled segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    segment_count: usize,
    // pixel indices per segment, ascending
    members: Vec<Vec<usize>>,
}

impl SegmentMap {
    /// Build from a per-pixel label vector. Labels must cover `0..n` densely.
    pub fn from_labels(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        let segment_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); segment_count];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidValue(format!(
                "segment {empty} has no pixels"
            )));
        }
        Ok(SegmentMap {
            height,
            width,
            labels,
            segment_count,
            members,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    /// Pixel indices (row-major) belonging to `segment`.
    pub fn pixels(&self, segment: usize) -> &[usize] {
        &self.members[segment]
    }

    fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::Dimension(format!(
                "segment map is {}x{}, data is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Regular grid of `cell`×`cell` blocks, ids assigned row-major over cells.
pub fn grid_segmentation(height: usize, width: usize, cell: usize) -> Result<SegmentMap> {
    if cell == 0 || height % cell != 0 || width % cell != 0 {
        return Err(Error::Dimension(format!(
            "cell size {cell} does not divide {height}x{width}"
        )));
    }
    let cols = width / cell;
    let labels = (0..height * width)
        .map(|i| (i / width / cell) * cols + (i % width) / cell)
        .collect();
    SegmentMap::from_labels(height, width, labels)
}

/// One segment per 16-pixel-wide character slot (8 segments).
pub fn slot_segmentation() -> SegmentMap {
    let labels = (0..PIXELS).map(|i| (i % WIDTH) / 16).collect();
    SegmentMap::from_labels(HEIGHT, WIDTH, labels).expect("slot grid is valid")
}

/// Signed per-pixel relevance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("attribution value {i}")));
        }
        Ok(AttributionMap {
            height,
            width,
            values,
        })
    }

    /// Canvas-sized map.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        AttributionMap::new(HEIGHT, WIDTH, values)
    }

    pub fn zeros() -> Self {
        AttributionMap {
            height: HEIGHT,
            width: WIDTH,
            values: vec![0.0; PIXELS],
        }
    }

    /// Broadcast per-segment values to every pixel of each segment.
    pub fn from_segment_values(seg: &SegmentMap, scores: &[f64]) -> Result<Self> {
        if scores.len() != seg.segment_count() {
            return Err(Error::Dimension(format!(
                "{} scores for {} segments",
                scores.len(),
                seg.segment_count()
            )));
        }
        let values = seg.labels().iter().map(|&l| scores[l]).collect();
        AttributionMap::new(seg.height(), seg.width(), values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Element-wise map, keeping dims.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        AttributionMap::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// One score per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub scores: Vec<f64>,
}

impl SegmentScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Segment ids sorted by descending score; ties keep the lower id first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }
}

/// Mean attribution over each segment's pixels.
pub fn segment_means(attr: &AttributionMap, seg: &SegmentMap) -> Result<SegmentScores> {
    seg.check_dims(attr.height, attr.width)?;
    let scores = (0..seg.segment_count())
        .map(|s| {
            let px = seg.pixels(s);
            px.iter().map(|&i| attr.values[i]).sum::<f64>() / px.len() as f64
        })
        .collect();
    Ok(SegmentScores { scores })
}

/// Copy of `img` with every pixel of the `removed` segments set to `baseline`.
pub fn mask_segments(
    img: &Image,
    seg: &SegmentMap,
    removed: &[usize],
    baseline: f64,
) -> Result<Image> {
    seg.check_dims(HEIGHT, WIDTH)?;
    if !(0.0..=1.0).contains(&baseline) {
        return Err(Error::InvalidValue(format!(
            "baseline {baseline} outside [0, 1]"
        )));
    }
    let mut data = img.data.clone();
    for &s in removed {
        if s >= seg.segment_count() {
            return Err(Error::InvalidSegment {
                id: s,
                count: seg.segment_count(),
            });
        }
        for &i in seg.pixels(s) {
            data[i] = baseline;
        }
    }
    Ok(Image { data })
}

/// Like [`mask_segments`] but with a presence mask over all segments.
pub fn mask_absent(
    img: &Image,
    seg: &SegmentMap,
    present: &[bool],
    baseline: f64,
) -> Result<Image> {
    if present.len() != seg.segment_count() {
        return Err(Error::Dimension(format!(
            "presence mask of {} for {} segments",
            present.len(),
            seg.segment_count()
        )));
    }
    let removed: Vec<usize> = (0..present.len()).filter(|&s| !present[s]).collect();
    mask_segments(img, seg, &removed, baseline)
}

/// An RGB overlay of an attribution map on its grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// RGB in `[0, 1]` per pixel.
    pub rgb: Vec<[f64; 3]>,
    /// Signed blend weight per pixel: `v / max|v|`, positive blends green, negative red.
    pub blend: Vec<f64>,
}

impl Heatmap {
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

/// Overlay `attr` on `img`: positive values blend towards green, negative towards red,
/// with weight `|v| / max|v|`. An all-zero map leaves the grayscale untouched.
pub fn render_heatmap(img: &Image, attr: &AttributionMap) -> Result<Heatmap> {
    if attr.height != HEIGHT || attr.width != WIDTH {
        return Err(Error::Dimension(format!(
            "attribution map is {}x{}, image is {HEIGHT}x{WIDTH}",
            attr.height, attr.width
        )));
    }
    let scale = attr.max_abs();
    let blend: Vec<f64> = attr
        .values
        .iter()
        .map(|&v| if scale > 0.0 { v / scale } else { 0.0 })
        .collect();
    let rgb = img
        .data
        .iter()
        .zip(&blend)
        .map(|(&g, &w)| {
            let a = w.abs();
            let target = if w >= 0.0 {
                [0.0, 1.0, 0.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            [0, 1, 2].map(|c| (1.0 - a) * g + a * target[c])
        })
        .collect();
    Ok(Heatmap {
        height: HEIGHT,
        width: WIDTH,
        rgb,
        blend,
    })
}

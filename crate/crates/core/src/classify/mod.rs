//! Region classification (text, title, or mis-segmented) and the CCL-based
//! repair of mis-segmented regions.
//!
//! Crops are rescaled to a fixed 200x522 canvas before they reach a model, so
//! a learned classifier can be dropped in behind [`ClassifierModel`]. The
//! default [`HeuristicClassifier`] reads stroke-width statistics from the
//! normalized crop.

mod external;

pub use external::ExternalClassifier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::raster::Bitmap;
use crate::segmentation::split_regions_with;

pub const NORMALIZED_HEIGHT: usize = 200;
pub const NORMALIZED_WIDTH: usize = 522;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionClass {
    Text,
    Title,
    #[serde(rename = "misseg")]
    MisSegmented,
}

impl RegionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionClass::Text => "text",
            RegionClass::Title => "title",
            RegionClass::MisSegmented => "misseg",
        }
    }
}

impl std::str::FromStr for RegionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(RegionClass::Text),
            "title" => Ok(RegionClass::Title),
            "misseg" => Ok(RegionClass::MisSegmented),
            other => Err(Error::Classifier(format!("unknown class {other:?}"))),
        }
    }
}

/// A crop rescaled to the model input size, together with the size of the
/// crop it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRegion {
    pub image: Bitmap,
    pub source_width: usize,
    pub source_height: usize,
}

impl NormalizedRegion {
    /// Horizontal and vertical scale from source to normalized pixels.
    pub fn scale(&self) -> (f64, f64) {
        (
            NORMALIZED_WIDTH as f64 / self.source_width as f64,
            NORMALIZED_HEIGHT as f64 / self.source_height as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub class: RegionClass,
    /// In `[0, 1]`.
    pub confidence: f64,
}

/// A region classifier. Implementations are shared read-only across page
/// workers and must be deterministic for a fixed input.
pub trait ClassifierModel: Send + Sync {
    fn classify(&self, region: &NormalizedRegion) -> Result<Classification>;
}

/// Nearest-neighbor rescale to exactly 200 rows by 522 columns.
pub fn normalize_region(region_img: &Bitmap) -> Result<NormalizedRegion> {
    if region_img.is_empty() || region_img.ink_count() == 0 {
        return Err(Error::EmptyRegion);
    }
    let (sw, sh) = (region_img.width(), region_img.height());
    let mut out = Bitmap::new(NORMALIZED_WIDTH, NORMALIZED_HEIGHT);
    let xs: Vec<usize> = (0..NORMALIZED_WIDTH).map(|x| x * sw / NORMALIZED_WIDTH).collect();
    for y in 0..NORMALIZED_HEIGHT {
        let src = region_img.row(y * sh / NORMALIZED_HEIGHT);
        for (cell, &sx) in out.row_mut(y).iter_mut().zip(&xs) {
            *cell = src[sx];
        }
    }
    Ok(NormalizedRegion {
        image: out,
        source_width: sw,
        source_height: sh,
    })
}

pub fn classify_region(model: &dyn ClassifierModel, region_img: &Bitmap) -> Result<Classification> {
    model.classify(&normalize_region(region_img)?)
}

/// Splits a mis-segmented crop with half the usual closing thresholds.
/// Returns parts right to left in crop coordinates, or the crop's own ink
/// box when no split is found.
pub fn split_missegmented(region_img: &Bitmap, c_region: usize, region_join: usize) -> Vec<Rect> {
    let parts = split_regions_with(region_img, (c_region / 2).max(1), region_join / 2, 1);
    if parts.len() >= 2 {
        return parts;
    }
    region_img.ink_bbox().into_iter().collect()
}

/// Per-column-group stroke statistics of a normalized crop.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    /// Median stroke width over all ink, in source pixels.
    pub stroke_width: f64,
    /// Ink fraction of the normalized canvas.
    pub density: f64,
    /// Column groups (separated by blank columns), right to left:
    /// `(width in source px, median stroke width in source px, ink pixels)`.
    pub groups: Vec<(f64, f64, usize)>,
    /// Blank gaps between groups, right to left, in source pixels.
    pub gaps: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Stroke width at each ink pixel is the shorter of its horizontal and
/// vertical run, each converted back to source pixels.
pub fn region_features(region: &NormalizedRegion) -> RegionFeatures {
    let img = &region.image;
    let (w, h) = (img.width(), img.height());
    let (sx, sy) = region.scale();
    let mut hrun = vec![0u32; w * h];
    let mut vrun = vec![0u32; w * h];
    for y in 0..h {
        let mut x = 0;
        while x < w {
            if !img.get(x, y) {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && img.get(x, y) {
                x += 1;
            }
            hrun[y * w + start..y * w + x].fill((x - start) as u32);
        }
    }
    for x in 0..w {
        let mut y = 0;
        while y < h {
            if !img.get(x, y) {
                y += 1;
                continue;
            }
            let start = y;
            while y < h && img.get(x, y) {
                y += 1;
            }
            for yy in start..y {
                vrun[yy * w + x] = (y - start) as u32;
            }
        }
    }
    let stroke_at = |i: usize| (hrun[i] as f64 / sx).min(vrun[i] as f64 / sy);

    let mut col_strokes: Vec<Vec<f64>> = vec![Vec::new(); w];
    for y in 0..h {
        for (x, strokes) in col_strokes.iter_mut().enumerate() {
            let i = y * w + x;
            if img.pixels()[i] {
                strokes.push(stroke_at(i));
            }
        }
    }
    let total_ink: usize = col_strokes.iter().map(Vec::len).sum();

    let mut groups = Vec::new();
    let mut gaps = Vec::new();
    let mut x = w;
    let mut pending_gap: Option<usize> = None;
    while x > 0 {
        if col_strokes[x - 1].is_empty() {
            let end = x;
            while x > 0 && col_strokes[x - 1].is_empty() {
                x -= 1;
            }
            if !groups.is_empty() {
                pending_gap = Some(end - x);
            }
            continue;
        }
        let end = x;
        while x > 0 && !col_strokes[x - 1].is_empty() {
            x -= 1;
        }
        if let Some(g) = pending_gap.take() {
            gaps.push(g as f64 / sx);
        }
        let mut values: Vec<f64> = col_strokes[x..end].iter().flatten().copied().collect();
        groups.push(((end - x) as f64 / sx, median(&mut values), values.len()));
    }
    let mut all: Vec<f64> = col_strokes.into_iter().flatten().collect();
    RegionFeatures {
        stroke_width: median(&mut all),
        density: total_ink as f64 / (w * h) as f64,
        groups,
        gaps,
    }
}

/// Linear rules over [`RegionFeatures`]:
///
/// * a crop whose column groups mix thin and thick strokes, or that contains
///   a blank gap wider than `max_internal_gap`, is mis-segmented;
/// * otherwise the median stroke width against `stroke_split` picks title
///   (thick) or text (thin).
///
/// Confidence is the logistic of the winning margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicClassifier {
    /// Stroke width (source px) separating text from title strokes.
    pub stroke_split: f64,
    /// Column groups narrower than this (source px) do not vote on mixing.
    pub min_group_width: f64,
    /// Widest blank gap (source px) a single region may contain.
    pub max_internal_gap: f64,
}

impl Default for HeuristicClassifier {
    fn default() -> Self {
        Self {
            stroke_split: 3.5,
            min_group_width: 6.0,
            max_internal_gap: 12.0,
        }
    }
}

fn squash(margin: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * margin).exp())
}

impl ClassifierModel for HeuristicClassifier {
    fn classify(&self, region: &NormalizedRegion) -> Result<Classification> {
        let f = region_features(region);
        if f.groups.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let voting: Vec<f64> = f
            .groups
            .iter()
            .filter(|g| g.0 >= self.min_group_width)
            .map(|g| g.1 - self.stroke_split)
            .collect();
        let thick = voting.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let thin = voting.iter().copied().fold(f64::INFINITY, f64::min);
        let widest_gap = f.gaps.iter().copied().fold(0.0, f64::max);
        let mix_margin = thick.min(-thin);
        let gap_margin = (widest_gap - self.max_internal_gap) / 2.0;
        if voting.len() >= 2 && (mix_margin > 0.0 || gap_margin > 0.0) {
            return Ok(Classification {
                class: RegionClass::MisSegmented,
                confidence: squash(mix_margin.max(gap_margin)),
            });
        }
        if gap_margin > 0.0 {
            return Ok(Classification {
                class: RegionClass::MisSegmented,
                confidence: squash(gap_margin),
            });
        }
        let margin = f.stroke_width - self.stroke_split;
        Ok(Classification {
            class: if margin >= 0.0 { RegionClass::Title } else { RegionClass::Text },
            confidence: squash(margin.abs()),
        })
    }
}

//! End-to-end extraction of one page, and the configuration that drives it.
//!
//! The config file is `key = value` lines with `#` comments. Keys are the
//! dotted field paths of [`PipelineConfig`] (`segmentation.region_join`,
//! `qc.count_hi`, `order.index_gap_break`, ...). Values are JSON scalars,
//! `none` for an unset option, or bare words for strings; `classifier_command`
//! takes a whitespace-separated command line and `threshold` accepts `otsu`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::{
    classify_region, split_missegmented, ClassifierModel, ExternalClassifier, HeuristicClassifier, RegionClass,
};
use crate::error::{Error, Result};
use crate::geometry::{fit_affine, warp, Quad, Rect};
use crate::order::{assemble, assign_reading_order, sibling_gaps, OrderPolicy, PageLayout, PageMeta, PageType, RegionBlock, RowBlock};
use crate::qc::{nearest_rank, QcThresholds, ThresholdSource};
use crate::raster::{binarize_with, Bitmap, GrayImage, Threshold};
use crate::segmentation::{
    clear_border, detect_page_frame, split_regions, split_rows, split_title_subtitle, SegmentationParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Heuristic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub source: ThresholdSource,
    #[serde(flatten)]
    pub thresholds: QcThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Fixed binarization threshold; unset uses Otsu.
    pub threshold: Option<u8>,
    pub segmentation: SegmentationParams,
    pub classifier: ClassifierKind,
    /// Program and arguments for the external classifier.
    pub classifier_command: Vec<String>,
    pub heuristic: HeuristicClassifier,
    pub order: OrderPolicy,
    pub qc: QcConfig,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            segmentation: SegmentationParams::default(),
            classifier: ClassifierKind::Heuristic,
            classifier_command: Vec::new(),
            heuristic: HeuristicClassifier::default(),
            order: OrderPolicy::default(),
            qc: QcConfig::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

fn config_error(message: impl Into<String>) -> Error {
    Error::InvalidArgument(message.into())
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    column: 1,
                    message: "expected key = value".into(),
                });
            };
            config.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                column: raw.find(key.trim()).unwrap_or(0) + 1,
                message: e.to_string(),
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one dotted key. Unknown keys and ill-typed values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config is representable as JSON");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| config_error(format!("unknown config key {key:?}")))?;
        }
        *slot = match (key, value) {
            (_, "none") => Value::Null,
            ("threshold", "otsu") => Value::Null,
            _ if slot.is_array() => Value::Array(value.split_whitespace().map(|s| Value::String(s.into())).collect()),
            _ => serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into())),
        };
        *self = serde_json::from_value(root).map_err(|e| config_error(format!("bad value {value:?} for {key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.segmentation;
        let positive = [
            ("segmentation.coarse_factor", s.coarse_factor),
            ("segmentation.c_frame", s.c_frame),
            ("segmentation.min_row_pixels", s.min_row_pixels),
            ("segmentation.region_join", s.region_join),
            ("segmentation.min_region_pixels", s.min_region_pixels),
            ("segmentation.subtitle_gap_min", s.subtitle_gap_min),
            ("jobs", self.jobs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_error(format!("{name} must be positive")));
            }
        }
        let fractions = [
            ("segmentation.min_frame_fraction", s.min_frame_fraction),
            ("segmentation.c_row_fraction", s.c_row_fraction),
            ("segmentation.c_region_fraction", s.c_region_fraction),
            ("heuristic.stroke_split", self.heuristic.stroke_split),
            ("heuristic.max_internal_gap", self.heuristic.max_internal_gap),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("order.main_gap_break", self.order.main_gap_break),
            ("order.index_gap_break", self.order.index_gap_break),
        ] {
            if v.is_some_and(|g| !(g > 0.0)) {
                return Err(config_error(format!("{name} must be positive")));
            }
        }
        if self.classifier == ClassifierKind::External && self.classifier_command.is_empty() {
            return Err(config_error("external classifier needs classifier_command"));
        }
        self.qc.thresholds.validate()
    }

    /// The config as recorded with outputs. `jobs` is left out since it
    /// never changes results.
    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config is representable as JSON");
        if let Some(m) = v.as_object_mut() {
            m.remove("jobs");
        }
        v
    }

    pub fn build_classifier(&self) -> Result<Box<dyn ClassifierModel>> {
        match self.classifier {
            ClassifierKind::Heuristic => Ok(Box::new(self.heuristic.clone())),
            ClassifierKind::External => {
                let (program, args) = self
                    .classifier_command
                    .split_first()
                    .ok_or_else(|| config_error("external classifier needs classifier_command"))?;
                Ok(Box::new(ExternalClassifier::spawn(program, args)?))
            }
        }
    }
}

/// Runs the page pipeline with one classifier shared across pages.
pub struct Extractor {
    pub config: PipelineConfig,
    model: Box<dyn ClassifierModel>,
}

impl Extractor {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_classifier()?;
        Ok(Self { config, model })
    }

    pub fn with_model(config: PipelineConfig, model: Box<dyn ClassifierModel>) -> Self {
        Self { config, model }
    }

    fn binarize(&self, img: &GrayImage) -> Bitmap {
        let t = self.config.threshold.map_or(Threshold::Otsu, Threshold::Fixed);
        binarize_with(img, t)
    }

    /// Extracts a page's layout. Page types without layouts pass through
    /// with no elements.
    pub fn extract(&self, img: &GrayImage, meta: PageMeta) -> Result<PageLayout> {
        if !meta.page_type.is_segmented() {
            return Ok(PageLayout::unsegmented(meta));
        }
        let bm = self.binarize(img);
        let quad = detect_page_frame(&bm, &self.config.segmentation)?;
        self.extract_from(&bm, meta, quad)
    }

    /// Extraction from a given frame, skipping frame detection.
    pub fn extract_with_frame(&self, img: &GrayImage, meta: PageMeta, quad: Quad) -> Result<PageLayout> {
        self.extract_from(&self.binarize(img), meta, quad)
    }

    fn extract_from(&self, bm: &Bitmap, meta: PageMeta, quad: Quad) -> Result<PageLayout> {
        let params = &self.config.segmentation;
        let anchor = quad.rectified_rect();
        let target = Rect::new(0, 0, anchor.w, anchor.h);
        let map = fit_affine(&quad, target)?;
        log::debug!(
            "page {}: frame {:?}, rectification residual {:.3} px",
            meta.page_id,
            quad.vertices(),
            map.residual(&quad, target)
        );
        let rectified = clear_border(&warp(bm, &map, anchor.w as usize, anchor.h as usize)?, params.frame_inset);
        let mut rows = Vec::new();
        for row in split_rows(&rectified, params) {
            let row_img = rectified.crop(row);
            let regions = self.row_regions(&row_img)?;
            let Some(union) = regions.iter().map(|r| r.rect).reduce(|a, b| a.union(&b)) else {
                continue;
            };
            let shift = |r: Rect| r.translate(anchor.x + row.x, anchor.y + row.y);
            rows.push(RowBlock {
                rect: shift(union),
                regions: regions
                    .into_iter()
                    .map(|r| RegionBlock {
                        category: r.category,
                        rect: shift(r.rect),
                        parts: r.parts.into_iter().map(|(c, p)| (c, shift(p))).collect(),
                    })
                    .collect(),
            });
        }
        log::debug!("page {}: {} rows", meta.page_id, rows.len());
        let gap_break = self.config.order.gap_break(meta.page_type);
        Ok(assign_reading_order(assemble(meta, quad, &rows)?, gap_break))
    }

    /// Regions of one row crop, in crop coordinates, right to left.
    fn row_regions(&self, row_img: &Bitmap) -> Result<Vec<RegionBlock>> {
        let params = &self.config.segmentation;
        let mut out = Vec::new();
        for rect in split_regions(row_img, params) {
            let img = row_img.crop(rect);
            match classify_region(self.model.as_ref(), &img)?.class {
                RegionClass::MisSegmented => {
                    let c_region = params.c_region(row_img.height());
                    for part in split_missegmented(&img, c_region, params.region_join) {
                        let part_img = img.crop(part);
                        let class = match classify_region(self.model.as_ref(), &part_img)?.class {
                            RegionClass::MisSegmented => RegionClass::Text,
                            c => c,
                        };
                        out.push(self.block(class, &part_img, part.translate(rect.x, rect.y))?);
                    }
                }
                class => out.push(self.block(class, &img, rect)?),
            }
        }
        Ok(out)
    }

    fn block(&self, class: RegionClass, img: &Bitmap, rect: Rect) -> Result<RegionBlock> {
        Ok(match class {
            RegionClass::Title => {
                let (title, subtitle) = split_title_subtitle(img, self.config.segmentation.subtitle_gap_min)?;
                let at = |r: Rect| r.translate(rect.x, rect.y);
                RegionBlock::title(rect, at(title), subtitle.map(at))
            }
            _ => RegionBlock::text(rect),
        })
    }
}

/// For index pages without a configured gap break, derives one from the
/// 99th percentile of their own sibling gaps and reorders them. Returns the
/// break used, if any.
pub fn order_index_pages(layouts: &mut [PageLayout], policy: &OrderPolicy) -> Option<f64> {
    let gap_break = policy.index_gap_break.or_else(|| {
        let mut gaps: Vec<f64> = layouts
            .iter()
            .filter(|l| l.meta.page_type == PageType::Index)
            .flat_map(|l| sibling_gaps(l).into_iter().map(|g| g.1))
            .collect();
        gaps.sort_by(f64::total_cmp);
        nearest_rank(&gaps, 99)
    })?;
    for l in layouts.iter_mut().filter(|l| l.meta.page_type == PageType::Index) {
        *l = assign_reading_order(std::mem::replace(l, PageLayout::unsegmented(l.meta.clone())), Some(gap_break));
    }
    Some(gap_break)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::layout_recall;
    use crate::order::Category;
    use crate::synth::{generate_page, PageSpec, PageStyle};

    #[test]
    fn config_keys_and_values() {
        let text = "# tuned\nthreshold = 120\nsegmentation.region_join = 12 # wider\nqc.count_hi = 130\nqc.source = defaults\norder.index_gap_break = 45.5\nclassifier = external\nclassifier_command = /usr/bin/python3 model.py --fast\njobs = 4\n";
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.threshold, Some(120));
        assert_eq!(c.segmentation.region_join, 12);
        assert_eq!(c.qc.thresholds.count_hi, 130);
        assert_eq!(c.qc.source, ThresholdSource::Defaults);
        assert_eq!(c.order.index_gap_break, Some(45.5));
        assert_eq!(c.classifier, ClassifierKind::External);
        assert_eq!(c.classifier_command, vec!["/usr/bin/python3", "model.py", "--fast"]);
        assert_eq!(c.jobs, 4);
        let mut c = c;
        c.set("threshold", "otsu").unwrap();
        c.set("order.index_gap_break", "none").unwrap();
        assert_eq!((c.threshold, c.order.index_gap_break), (None, None));
    }

    #[test]
    fn config_errors_carry_lines() {
        for (text, line) in [("jobs = 2\nbogus = 1", 2), ("segmentation.region_join = -3", 1), ("x", 1)] {
            match PipelineConfig::parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(PipelineConfig::parse("jobs = 0").is_err());
        assert!(PipelineConfig::parse("qc.count_hi = 10").is_err());
        assert!(PipelineConfig::parse("classifier = external").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("segmentation.frame_inset", "9").unwrap();
        let back: PipelineConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_json()["qc"]["count_lo"], 88);
        c.jobs = 8;
        assert_eq!(c.to_json(), PipelineConfig { jobs: 1, ..c.clone() }.to_json());
    }

    fn meta(spec: &PageSpec) -> PageMeta {
        PageMeta {
            page_id: spec.page_id,
            file_name: spec.file_name(),
            width: spec.width,
            height: spec.height,
            page_type: spec.page_type,
        }
    }

    #[test]
    fn clean_page_is_recovered_exactly() {
        let spec = PageSpec::random(0, &PageStyle::default(), 21);
        let (img, truth) = generate_page(&spec).unwrap();
        let ex = Extractor::new(PipelineConfig::default()).unwrap();
        let found = ex.extract(&img, meta(&spec)).unwrap();
        assert_eq!(layout_recall(&truth, &found, 0.95), (truth.elements.len(), truth.elements.len()));
        assert_eq!(found.elements.len(), truth.elements.len());
        for (a, b) in found.elements.iter().zip(&truth.elements) {
            assert_eq!((a.category, a.rect, a.parent, a.reading_order), (b.category, b.rect, b.parent, b.reading_order));
        }
    }

    #[test]
    fn rotated_page_keeps_its_structure() {
        let mut spec = PageSpec::random(1, &PageStyle::default(), 22);
        spec.rotation = -1.7;
        let (img, truth) = generate_page(&spec).unwrap();
        let found = Extractor::new(PipelineConfig::default()).unwrap().extract(&img, meta(&spec)).unwrap();
        let (hit, total) = layout_recall(&truth, &found, 0.9);
        assert!(hit as f64 >= 0.99 * total as f64, "{hit}/{total}");
    }

    #[test]
    fn blank_page_has_no_frame_and_ads_pass_through() {
        let img = GrayImage::filled(400, 600, 230);
        let ex = Extractor::new(PipelineConfig::default()).unwrap();
        let mut m = PageMeta {
            page_id: 0,
            file_name: "blank.png".into(),
            width: 400,
            height: 600,
            page_type: PageType::Main,
        };
        assert!(matches!(ex.extract(&img, m.clone()), Err(Error::NoPageFrame(_))));
        m.page_type = PageType::Advertisement;
        assert!(ex.extract(&img, m).unwrap().elements.is_empty());
    }

    #[test]
    fn index_pages_get_a_corpus_gap_break() {
        let spec = PageSpec::random_index(0, &PageStyle::default(), 5, 60);
        let (img, truth) = generate_page(&spec).unwrap();
        let ex = Extractor::new(PipelineConfig::default()).unwrap();
        let mut pages = vec![ex.extract(&img, meta(&spec)).unwrap()];
        let used = order_index_pages(&mut pages, &OrderPolicy::default()).unwrap();
        assert!(used >= 14.0);
        assert!(pages[0].check().is_ok());
        let rows = |l: &PageLayout| l.elements.iter().filter(|e| e.category == Category::Row).count();
        assert_eq!(rows(&pages[0]), rows(&truth));
    }
}

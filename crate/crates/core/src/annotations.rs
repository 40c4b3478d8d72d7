//! COCO export with hierarchy extensions, validation and stratified splits.
//!
//! Beyond standard COCO, each image carries `category_id` (its page type) and
//! each annotation carries `parent` (annotation id or null) and
//! `reading_order`. The canonical text form is compact JSON with every object's
//! keys sorted.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon_area, Point, Quad, Rect};
use crate::order::{Category, LayoutElement, PageLayout, PageMeta, PageType};

pub fn category_id(category: Category) -> u32 {
    match category {
        Category::PageFrame => 1,
        Category::Row => 2,
        Category::TitleRegion => 3,
        Category::TextRegion => 4,
        Category::Title => 5,
        Category::Subtitle => 6,
        Category::Other => 7,
    }
}

pub fn category_from_id(id: u32) -> Option<Category> {
    Category::ALL.into_iter().find(|&c| category_id(c) == id)
}

pub fn page_type_id(page_type: PageType) -> u32 {
    match page_type {
        PageType::Main => 8,
        PageType::Advertisement => 9,
        PageType::Index => 10,
        PageType::Other => 11,
    }
}

pub fn page_type_from_id(id: u32) -> Option<PageType> {
    PageType::ALL.into_iter().find(|&t| page_type_id(t) == id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub supercategory: String,
}

/// Element categories 1-7 followed by page types 8-11.
pub fn category_table() -> Vec<CocoCategory> {
    let elements = Category::ALL.into_iter().map(|c| CocoCategory {
        id: category_id(c),
        name: c.name().to_string(),
        supercategory: "layout".into(),
    });
    let pages = PageType::ALL.into_iter().map(|t| CocoCategory {
        id: page_type_id(t),
        name: t.as_str().to_string(),
        supercategory: "page".into(),
    });
    let mut table: Vec<_> = elements.chain(pages).collect();
    table.sort_by_key(|c| c.id);
    table
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Page type id.
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    pub segmentation: Vec<Vec<f64>>,
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
    pub parent: Option<u64>,
    pub reading_order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<serde_json::Value>,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl Default for CocoDataset {
    fn default() -> Self {
        Self {
            info: None,
            images: Vec::new(),
            annotations: Vec::new(),
            categories: category_table(),
        }
    }
}

impl CocoDataset {
    /// Compact JSON with sorted keys.
    pub fn to_canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("dataset is always representable as JSON");
        value.to_string()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_canonical_string())?)
    }
}

fn polygon_of(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn points_of(flat: &[f64]) -> Vec<Point> {
    flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

/// Maps layouts to COCO. Image ids are page ids; annotation ids run from 1
/// across the corpus in page order, then element id order.
pub fn to_coco(layouts: &[PageLayout]) -> CocoDataset {
    let mut ds = CocoDataset::default();
    let mut next_id = 1u64;
    for layout in layouts {
        let m = &layout.meta;
        ds.images.push(CocoImage {
            id: m.page_id,
            file_name: m.file_name.clone(),
            width: m.width,
            height: m.height,
            category_id: page_type_id(m.page_type),
            corrected: layout.corrected,
        });
        let mut elements: Vec<&LayoutElement> = layout.elements.iter().collect();
        elements.sort_by_key(|e| e.id);
        let ann_ids: BTreeMap<u32, u64> = elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id, next_id + i as u64))
            .collect();
        for e in elements {
            let (bbox, points) = match &e.quad {
                Some(q) => {
                    let (x0, y0, x1, y1) = q.bounds();
                    ([x0, y0, x1 - x0, y1 - y0], q.vertices().to_vec())
                }
                None => {
                    let r = e.rect;
                    ([r.x, r.y, r.w, r.h].map(f64::from), r.corners().to_vec())
                }
            };
            ds.annotations.push(CocoAnnotation {
                id: ann_ids[&e.id],
                image_id: m.page_id,
                category_id: category_id(e.category),
                bbox,
                area: polygon_area(&points),
                segmentation: vec![polygon_of(&points)],
                iscrowd: 0,
                parent: e.parent.and_then(|p| ann_ids.get(&p).copied()),
                reading_order: e.reading_order,
            });
        }
        next_id += ann_ids.len() as u64;
    }
    ds
}

/// Rebuilds per-page layouts, in image order. Element ids are the annotation's
/// rank within its image.
pub fn to_layouts(ds: &CocoDataset) -> Result<Vec<PageLayout>> {
    let mut per_image: BTreeMap<u64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &ds.annotations {
        per_image.entry(a.image_id).or_default().push(a);
    }
    let mut layouts = Vec::with_capacity(ds.images.len());
    for img in &ds.images {
        let page_type = page_type_from_id(img.category_id)
            .ok_or_else(|| Error::InvalidArgument(format!("image {} has page type id {}", img.id, img.category_id)))?;
        let mut anns = per_image.remove(&img.id).unwrap_or_default();
        anns.sort_by_key(|a| a.id);
        let local: BTreeMap<u64, u32> = anns.iter().enumerate().map(|(i, a)| (a.id, i as u32)).collect();
        let mut elements = Vec::with_capacity(anns.len());
        for (i, a) in anns.iter().enumerate() {
            let category = category_from_id(a.category_id)
                .ok_or_else(|| Error::InvalidArgument(format!("annotation {} has category {}", a.id, a.category_id)))?;
            let parent = match a.parent {
                None => None,
                Some(p) => Some(
                    *local
                        .get(&p)
                        .ok_or_else(|| Error::InvalidArgument(format!("annotation {} has dangling parent {p}", a.id)))?,
                ),
            };
            let (rect, quad) = if category == Category::PageFrame {
                let points = points_of(a.segmentation.first().map(Vec::as_slice).unwrap_or(&[]));
                let vertices: [Point; 4] = points
                    .try_into()
                    .map_err(|_| Error::InvalidArgument(format!("page frame {} is not a quadrilateral", a.id)))?;
                let quad = Quad::new(vertices)?;
                (quad.rectified_rect(), Some(quad))
            } else {
                let [x, y, w, h] = a.bbox;
                (Rect::try_new(x as i32, y as i32, w as i32, h as i32)?, None)
            };
            elements.push(LayoutElement {
                id: i as u32,
                category,
                rect,
                quad,
                parent,
                reading_order: a.reading_order,
            });
        }
        layouts.push(PageLayout {
            meta: PageMeta {
                page_id: img.id,
                file_name: img.file_name.clone(),
                width: img.width,
                height: img.height,
                page_type,
            },
            elements,
            corrected: img.corrected,
        });
    }
    Ok(layouts)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub image_id: Option<u64>,
    pub annotation_id: Option<u64>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.image_id, self.annotation_id) {
            (_, Some(a)) => write!(f, "annotation {a}: {}", self.message),
            (Some(i), None) => write!(f, "image {i}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

const AREA_TOLERANCE: f64 = 1e-6;

/// Every invariant violation in the dataset. An empty list means valid.
pub fn validate(ds: &CocoDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let image_violation = |out: &mut Vec<Violation>, id: u64, message: String| {
        out.push(Violation {
            image_id: Some(id),
            annotation_id: None,
            message,
        })
    };
    let ann_violation = |out: &mut Vec<Violation>, a: &CocoAnnotation, message: String| {
        out.push(Violation {
            image_id: Some(a.image_id),
            annotation_id: Some(a.id),
            message,
        })
    };

    let mut images = BTreeMap::new();
    for img in &ds.images {
        if images.insert(img.id, img).is_some() {
            image_violation(&mut out, img.id, "duplicate image id".into());
        }
        if page_type_from_id(img.category_id).is_none() {
            image_violation(&mut out, img.id, format!("unknown page type id {}", img.category_id));
        }
    }
    let mut anns = BTreeMap::new();
    for a in &ds.annotations {
        if anns.insert(a.id, a).is_some() {
            ann_violation(&mut out, a, "duplicate annotation id".into());
        }
    }

    for a in &ds.annotations {
        let category = category_from_id(a.category_id);
        if category.is_none() {
            ann_violation(&mut out, a, format!("unknown category id {}", a.category_id));
        }
        let Some(img) = images.get(&a.image_id) else {
            ann_violation(&mut out, a, format!("unknown image {}", a.image_id));
            continue;
        };
        let [x, y, w, h] = a.bbox;
        if !(w > 0.0 && h > 0.0) {
            ann_violation(&mut out, a, format!("empty bbox {:?}", a.bbox));
        }
        if x < 0.0 || y < 0.0 || x + w > f64::from(img.width) || y + h > f64::from(img.height) {
            ann_violation(
                &mut out,
                a,
                format!("bbox {:?} outside {}x{} image", a.bbox, img.width, img.height),
            );
        }
        let poly_area = a
            .segmentation
            .iter()
            .map(|p| polygon_area(&points_of(p)).abs())
            .sum::<f64>();
        if !(a.area > 0.0) || (a.area - poly_area).abs() > AREA_TOLERANCE * poly_area.max(1.0) {
            ann_violation(
                &mut out,
                a,
                format!("area {} does not match polygon area {poly_area}", a.area),
            );
        }
        match a.parent {
            None if category.is_some_and(|c| c != Category::PageFrame) => {
                ann_violation(&mut out, a, "only the page frame may be a root".into());
            }
            None => {}
            Some(p) => match anns.get(&p) {
                None => ann_violation(&mut out, a, format!("dangling parent {p}")),
                Some(parent) if parent.image_id != a.image_id => {
                    ann_violation(&mut out, a, format!("parent {p} belongs to image {}", parent.image_id));
                }
                Some(parent) => {
                    if let (Some(c), Some(pc)) = (category, category_from_id(parent.category_id)) {
                        if !c.allowed_parents().contains(&pc) {
                            ann_violation(&mut out, a, format!("{c} cannot sit under {pc}"));
                        }
                    }
                }
            },
        }
    }

    let mut per_image: BTreeMap<u64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &ds.annotations {
        per_image.entry(a.image_id).or_default().push(a);
    }
    for img in &ds.images {
        let list = per_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        let segmented = page_type_from_id(img.category_id).is_some_and(PageType::is_segmented);
        let frames = list
            .iter()
            .filter(|a| a.category_id == category_id(Category::PageFrame) && a.parent.is_none())
            .count();
        if segmented && frames != 1 {
            image_violation(&mut out, img.id, format!("expected one root page frame, found {frames}"));
        }
        if !segmented && !list.is_empty() {
            image_violation(&mut out, img.id, "annotations on an unsegmented page type".into());
        }
        let mut orders: BTreeMap<Option<u64>, Vec<u32>> = BTreeMap::new();
        for a in list {
            orders.entry(a.parent).or_default().push(a.reading_order);
        }
        for (parent, mut o) in orders {
            o.sort_unstable();
            if o.iter().enumerate().any(|(i, &r)| r != i as u32) {
                image_violation(
                    &mut out,
                    img.id,
                    format!("children of {parent:?} have reading orders {o:?}"),
                );
            }
        }
    }
    out.sort();
    out
}

/// Stratified split by page type. Each type's images are shuffled with a
/// generator seeded from `seed`, then `floor(0.70 n)` go to train,
/// `floor(0.15 n)` to validation and the rest to test. A type with a single
/// image puts it in train.
pub fn split_dataset(ds: &CocoDataset, seed: u64) -> (CocoDataset, CocoDataset, CocoDataset) {
    let mut by_type: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for img in &ds.images {
        by_type.entry(img.category_id).or_default().push(img.id);
    }
    let mut assignment: BTreeMap<u64, usize> = BTreeMap::new();
    for (type_id, mut ids) in by_type {
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(type_id).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ids.shuffle(&mut rng);
        let (train, val) = split_sizes(ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            let part = if i < train {
                0
            } else if i < train + val {
                1
            } else {
                2
            };
            assignment.insert(id, part);
        }
    }
    let mut parts: [CocoDataset; 3] = std::array::from_fn(|_| CocoDataset {
        info: ds.info.clone(),
        categories: ds.categories.clone(),
        ..CocoDataset::default()
    });
    for img in &ds.images {
        parts[assignment[&img.id]].images.push(img.clone());
    }
    for a in &ds.annotations {
        if let Some(&p) = assignment.get(&a.image_id) {
            parts[p].annotations.push(a.clone());
        }
    }
    let [train, val, test] = parts;
    (train, val, test)
}

/// `(train, val)` counts for `n` images of one type; test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let train = n * 70 / 100;
    let val = n * 15 / 100;
    if train == 0 {
        (n, 0)
    } else {
        (train, val)
    }
}

/// Image ids in a dataset, for disjointness checks.
pub fn image_ids(ds: &CocoDataset) -> BTreeSet<u64> {
    ds.images.iter().map(|i| i.id).collect()
}

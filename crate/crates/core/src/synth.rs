//! Synthetic scans with known layouts.
//!
//! Vertical text is drawn as columns of box glyphs: every glyph has a top bar
//! spanning its full width and at least one full-height vertical stroke, so a
//! block's ink bounding box is known exactly from its description. That makes the
//! ground-truth layout a pure function of the description; rendering only adds
//! pixels.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp, AffineMap, Point, Quad, Rect};
use crate::order::{assemble, Category, PageLayout, PageMeta, PageType, RegionBlock, RowBlock};
use crate::raster::{Bitmap, GrayImage};

pub const INK_LEVEL: u8 = 25;
pub const PAPER_LEVEL: u8 = 230;
pub const STAIN_LEVEL: u8 = 70;
pub const CRACK_LEVEL: u8 = 45;
pub const HOLE_LEVEL: u8 = 255;
pub const MAX_ROTATION: f64 = 5.0;
/// Upper bound on the summed area of all stains, as a fraction of the page.
pub const MAX_STAIN_FRACTION: f64 = 0.02;
const MAX_CRACK_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Text,
    Title,
    Other,
}

/// A run of glyph columns sharing one glyph size, laid out right to left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub glyph: u32,
    pub stroke: u32,
    pub column_gap: u32,
    /// Characters per column, rightmost column first.
    pub columns: Vec<u32>,
}

impl BlockSpec {
    pub fn pitch(&self) -> u32 {
        self.glyph + self.glyph / 4
    }

    pub fn width(&self) -> u32 {
        let n = self.columns.len() as u32;
        n * self.glyph + n.saturating_sub(1) * self.column_gap
    }

    pub fn height(&self) -> u32 {
        let chars = self.columns.iter().copied().max().unwrap_or(0);
        (chars * self.pitch()).saturating_sub(self.pitch() - self.glyph)
    }

    fn validate(&self) -> Result<()> {
        if self.columns.is_empty() || self.columns.contains(&0) {
            return Err(Error::InfeasibleSpec("block needs non-empty columns".into()));
        }
        if self.stroke == 0 || self.glyph < 3 * self.stroke {
            return Err(Error::InfeasibleSpec(format!(
                "glyph {} too small for stroke {}",
                self.glyph, self.stroke
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    /// Blank space to the right of this region.
    pub gap: u32,
    /// Text and other regions have one block; title regions have the title
    /// block and optionally a subtitle block to its left.
    pub blocks: Vec<BlockSpec>,
    /// Gap between title and subtitle.
    pub inner_gap: u32,
}

impl RegionSpec {
    pub fn width(&self) -> u32 {
        let n = self.blocks.len() as u32;
        self.blocks.iter().map(BlockSpec::width).sum::<u32>() + n.saturating_sub(1) * self.inner_gap
    }

    pub fn height(&self) -> u32 {
        self.blocks.iter().map(BlockSpec::height).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub regions: Vec<RegionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Crack,
    Stain,
    Hole,
}

/// Stains and holes are disks (`points = [center]`, `magnitude` = radius);
/// cracks are polylines (`magnitude` = stroke width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub points: Vec<Point>,
    pub magnitude: f64,
}

impl NoiseSpec {
    pub fn disk(kind: NoiseKind, center: Point, radius: f64) -> Self {
        Self {
            kind,
            points: vec![center],
            magnitude: radius,
        }
    }

    fn area(&self) -> f64 {
        match self.kind {
            NoiseKind::Crack => 0.0,
            _ => std::f64::consts::PI * self.magnitude * self.magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSpec {
    pub page_id: u64,
    pub page_type: PageType,
    pub width: u32,
    pub height: u32,
    /// Outer edge of the printed frame border.
    pub frame: Rect,
    pub border: u32,
    /// Distance from the frame's outer edge to the content.
    pub margin: u32,
    pub row_gap: u32,
    pub rows: Vec<RowSpec>,
    /// Page rotation in degrees about the page center.
    pub rotation: f64,
    pub noise: Vec<NoiseSpec>,
    /// Standard deviation of additive Gaussian grain, in gray levels.
    pub grain: f64,
    pub seed: u64,
}

impl PageSpec {
    pub fn file_name(&self) -> String {
        format!("page_{:05}.png", self.page_id)
    }

    pub fn row_height(&self) -> u32 {
        let n = self.rows.len().max(1) as i64;
        let inner = i64::from(self.frame.h) - 2 * i64::from(self.margin) - (n - 1) * i64::from(self.row_gap);
        (inner / n).max(0) as u32
    }

    fn content(&self) -> Rect {
        let m = self.margin as i32;
        Rect::from_corners(
            self.frame.x + m,
            self.frame.y + m,
            self.frame.right() - m,
            self.frame.bottom() - m,
        )
    }

    fn center(&self) -> Point {
        Point::new(f64::from(self.width) / 2.0, f64::from(self.height) / 2.0)
    }

    pub fn rotation_map(&self) -> AffineMap {
        AffineMap::rotation_about(self.center(), self.rotation)
    }

    /// The printed frame's outer corners after rotation.
    pub fn frame_quad(&self) -> Quad {
        let map = self.rotation_map();
        let v = self.frame.corners().map(|p| map.apply(p));
        Quad::new(v).expect("a rotated rectangle is a valid quad")
    }

    fn validate(&self) -> Result<()> {
        if !(self.rotation.abs() <= MAX_ROTATION) {
            return Err(Error::InfeasibleSpec(format!(
                "rotation {} exceeds {MAX_ROTATION} degrees",
                self.rotation
            )));
        }
        let page = Rect::new(0, 0, self.width as i32, self.height as i32);
        if !page.contains_rect(&self.frame, 0) {
            return Err(Error::InfeasibleSpec("frame lies outside the page".into()));
        }
        let q = self.frame_quad();
        let (x0, y0, x1, y1) = q.bounds();
        if x0 < 0.0 || y0 < 0.0 || x1 > f64::from(self.width) || y1 > f64::from(self.height) {
            return Err(Error::InfeasibleSpec("rotated frame leaves the page".into()));
        }
        if self.margin <= self.border || 2 * self.margin >= self.frame.w.min(self.frame.h) as u32 {
            return Err(Error::InfeasibleSpec("margin does not fit the frame".into()));
        }
        if !(self.grain >= 0.0) {
            return Err(Error::InfeasibleSpec("grain must be non-negative".into()));
        }
        let stain_area: f64 = self
            .noise
            .iter()
            .filter(|n| n.kind == NoiseKind::Stain)
            .map(NoiseSpec::area)
            .sum();
        let page_area = f64::from(self.width) * f64::from(self.height);
        if stain_area > MAX_STAIN_FRACTION * page_area {
            return Err(Error::InfeasibleSpec(format!(
                "stains cover {:.3} of the page",
                stain_area / page_area
            )));
        }
        for n in &self.noise {
            let ok = match n.kind {
                NoiseKind::Crack => n.points.len() >= 2 && n.magnitude > 0.0 && n.magnitude <= MAX_CRACK_WIDTH,
                _ => n.points.len() == 1 && n.magnitude > 0.0,
            };
            if !ok || n.points.iter().any(|p| !p.is_finite()) {
                return Err(Error::InfeasibleSpec(format!("bad noise spec {n:?}")));
            }
        }
        Ok(())
    }
}

/// Where every block lands on the unrotated page, in construction order.
struct Placement {
    rows: Vec<PlacedRow>,
}

struct PlacedRow {
    rect: Rect,
    regions: Vec<PlacedRegion>,
}

struct PlacedRegion {
    kind: RegionKind,
    rect: Rect,
    blocks: Vec<(Rect, usize)>,
}

fn place(spec: &PageSpec) -> Result<Placement> {
    spec.validate()?;
    let content = spec.content();
    let row_h = spec.row_height();
    if row_h == 0 {
        return Err(Error::InfeasibleSpec("rows do not fit the frame".into()));
    }
    let mut rows = Vec::with_capacity(spec.rows.len());
    for (ri, row) in spec.rows.iter().enumerate() {
        let top = content.y + ri as i32 * (row_h + spec.row_gap) as i32;
        let mut right = content.right();
        let mut regions = Vec::with_capacity(row.regions.len());
        for (gi, region) in row.regions.iter().enumerate() {
            let expected_blocks = match region.kind {
                RegionKind::Title => 1..=2,
                _ => 1..=1,
            };
            if !expected_blocks.contains(&region.blocks.len()) {
                return Err(Error::InfeasibleSpec(format!(
                    "row {ri} region {gi} has {} blocks",
                    region.blocks.len()
                )));
            }
            for b in &region.blocks {
                b.validate()?;
            }
            if region.height() > row_h {
                return Err(Error::InfeasibleSpec(format!(
                    "row {ri} region {gi} is {} px tall, rows are {row_h}",
                    region.height()
                )));
            }
            right -= region.gap as i32;
            let left = right - region.width() as i32;
            if left < content.x {
                return Err(Error::InfeasibleSpec(format!(
                    "row {ri} needs {} px more width",
                    content.x - left
                )));
            }
            let mut blocks = Vec::with_capacity(region.blocks.len());
            let mut bx = right;
            for (bi, b) in region.blocks.iter().enumerate() {
                blocks.push((Rect::new(bx - b.width() as i32, top, b.width() as i32, b.height() as i32), bi));
                bx -= (b.width() + region.inner_gap) as i32;
            }
            regions.push(PlacedRegion {
                kind: region.kind,
                rect: Rect::new(left, top, region.width() as i32, region.height() as i32),
                blocks,
            });
            right = left;
        }
        let rect = regions.iter().map(|r| r.rect).reduce(|a, b| a.union(&b));
        if let Some(rect) = rect {
            rows.push(PlacedRow { rect, regions });
        }
    }
    Ok(Placement { rows })
}

/// The ground-truth layout of a spec, in rectified frame space, without
/// rendering anything.
pub fn layout_of(spec: &PageSpec) -> Result<PageLayout> {
    let placement = place(spec)?;
    let quad = spec.frame_quad();
    let anchor = quad.rectified_rect();
    let (dx, dy) = (anchor.x - spec.frame.x, anchor.y - spec.frame.y);
    let shift = |r: Rect| r.translate(dx, dy);
    let rows: Vec<RowBlock> = placement
        .rows
        .iter()
        .map(|row| RowBlock {
            rect: shift(row.rect),
            regions: row
                .regions
                .iter()
                .map(|region| match region.kind {
                    RegionKind::Text => RegionBlock::text(shift(region.rect)),
                    RegionKind::Other => RegionBlock {
                        category: Category::Other,
                        rect: shift(region.rect),
                        parts: Vec::new(),
                    },
                    RegionKind::Title => RegionBlock::title(
                        shift(region.rect),
                        shift(region.blocks[0].0),
                        region.blocks.get(1).map(|b| shift(b.0)),
                    ),
                })
                .collect(),
        })
        .collect();
    let meta = PageMeta {
        page_id: spec.page_id,
        file_name: spec.file_name(),
        width: spec.width,
        height: spec.height,
        page_type: spec.page_type,
    };
    assemble(meta, quad, &rows)
}

fn draw_glyph(bm: &mut Bitmap, x: i32, y: i32, g: i32, s: i32, rng: &mut impl Rng) {
    bm.fill_rect(Rect::new(x, y, g, s), true);
    let verticals = [x, x + (g - s) / 2, x + g - s];
    // Any non-empty subset of the three verticals.
    let mask = rng.random_range(1u8..8);
    for (i, vx) in verticals.into_iter().enumerate() {
        if mask & (1 << i) != 0 {
            bm.fill_rect(Rect::new(vx, y, s, g), true);
        }
    }
    if rng.random_bool(0.5) {
        bm.fill_rect(Rect::new(x, y + (g - s) / 2, g, s), true);
    }
    if rng.random_bool(0.4) {
        bm.fill_rect(Rect::new(x, y + g - s, g, s), true);
    }
}

fn draw_block(bm: &mut Bitmap, rect: Rect, spec: &BlockSpec, rng: &mut impl Rng) {
    let (g, s, pitch) = (spec.glyph as i32, spec.stroke as i32, spec.pitch() as i32);
    let mut x = rect.right() - g;
    for &chars in &spec.columns {
        for c in 0..chars as i32 {
            draw_glyph(bm, x, rect.y + c * pitch, g, s, rng);
        }
        x -= g + spec.column_gap as i32;
    }
}

/// The noise-free ink of the unrotated page.
fn ink_of(spec: &PageSpec, placement: &Placement, rng: &mut impl Rng) -> Bitmap {
    let mut bm = Bitmap::new(spec.width as usize, spec.height as usize);
    let f = spec.frame;
    let b = spec.border as i32;
    for edge in [
        Rect::new(f.x, f.y, f.w, b),
        Rect::new(f.x, f.bottom() - b, f.w, b),
        Rect::new(f.x, f.y, b, f.h),
        Rect::new(f.right() - b, f.y, b, f.h),
    ] {
        bm.fill_rect(edge, true);
    }
    for (row, row_spec) in placement.rows.iter().zip(&spec.rows) {
        for (region, region_spec) in row.regions.iter().zip(&row_spec.regions) {
            for &(rect, bi) in &region.blocks {
                draw_block(&mut bm, rect, &region_spec.blocks[bi], rng);
            }
        }
    }
    bm
}

/// Renders the scan: ink, rotation, then noise and grain.
pub fn render_page(spec: &PageSpec) -> Result<GrayImage> {
    let placement = place(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ink = ink_of(spec, &placement, &mut rng);
    if spec.rotation != 0.0 {
        ink = warp(&ink, &spec.rotation_map(), ink.width(), ink.height())?;
    }
    let mut img = inject_noise(&ink.render(INK_LEVEL, PAPER_LEVEL), &spec.noise);
    if spec.grain > 0.0 {
        add_grain(&mut img, spec.grain, &mut rng);
    }
    Ok(img)
}

pub fn generate_page(spec: &PageSpec) -> Result<(GrayImage, PageLayout)> {
    Ok((render_page(spec)?, layout_of(spec)?))
}

fn paint_where(img: &mut GrayImage, bounds: (f64, f64, f64, f64), value: u8, inside: impl Fn(Point) -> bool) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = bounds.0.floor().clamp(0.0, w) as usize;
    let y0 = bounds.1.floor().clamp(0.0, h) as usize;
    let x1 = bounds.2.ceil().clamp(0.0, w) as usize;
    let y1 = bounds.3.ceil().clamp(0.0, h) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                img.set(x, y, value);
            }
        }
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Paints disks and polylines. A pixel is covered when its center is.
pub fn inject_noise(img: &GrayImage, specs: &[NoiseSpec]) -> GrayImage {
    let mut out = img.clone();
    for n in specs {
        match n.kind {
            NoiseKind::Stain | NoiseKind::Hole => {
                let c = n.points[0];
                let r = n.magnitude;
                let value = if n.kind == NoiseKind::Stain { STAIN_LEVEL } else { HOLE_LEVEL };
                paint_where(&mut out, (c.x - r, c.y - r, c.x + r, c.y + r), value, |p| p.dist(c) <= r);
            }
            NoiseKind::Crack => {
                let half = n.magnitude / 2.0;
                for seg in n.points.windows(2) {
                    let (a, b) = (seg[0], seg[1]);
                    let bounds = (
                        a.x.min(b.x) - half,
                        a.y.min(b.y) - half,
                        a.x.max(b.x) + half,
                        a.y.max(b.y) + half,
                    );
                    paint_where(&mut out, bounds, CRACK_LEVEL, |p| segment_distance(p, a, b) <= half);
                }
            }
        }
    }
    out
}

fn add_grain(img: &mut GrayImage, sigma: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    for v in img.samples_mut() {
        *v = (f64::from(*v) + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
}

/// Randomization ranges for [`PageSpec::random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PageStyle {
    pub width: u32,
    pub height: u32,
    pub frame: Rect,
    pub border: u32,
    pub margin: u32,
    pub rows: usize,
    pub row_gap: u32,
    pub column_gap: u32,
    pub text_glyph: u32,
    pub text_stroke: u32,
    pub title_glyph: u32,
    pub subtitle_glyph: u32,
    pub title_stroke: u32,
    /// Columns per text region, inclusive.
    pub text_columns: (u32, u32),
    /// Shortest full column, in characters; the longest is whatever fits the row.
    pub min_column_chars: u32,
    pub title_chars: (u32, u32),
    pub subtitle_chars: (u32, u32),
    pub subtitle_probability: f64,
    pub subtitle_gap: u32,
    pub region_gap: (u32, u32),
    /// Each row holds this many title regions, each followed by a run of text regions.
    pub groups_per_row: usize,
    pub texts_per_group: (usize, usize),
}

impl Default for PageStyle {
    fn default() -> Self {
        Self {
            width: 1600,
            height: 2400,
            frame: Rect::new(120, 120, 1360, 2160),
            border: 4,
            margin: 28,
            rows: 5,
            row_gap: 24,
            column_gap: 3,
            text_glyph: 16,
            text_stroke: 2,
            title_glyph: 36,
            subtitle_glyph: 24,
            title_stroke: 5,
            text_columns: (2, 4),
            min_column_chars: 12,
            title_chars: (2, 5),
            subtitle_chars: (3, 12),
            subtitle_probability: 0.8,
            subtitle_gap: 8,
            region_gap: (14, 24),
            groups_per_row: 4,
            texts_per_group: (1, 3),
        }
    }
}

impl PageSpec {
    fn blank(page_id: u64, style: &PageStyle, page_type: PageType, seed: u64) -> Self {
        Self {
            page_id,
            page_type,
            width: style.width,
            height: style.height,
            frame: style.frame,
            border: style.border,
            margin: style.margin,
            row_gap: style.row_gap,
            rows: vec![RowSpec { regions: Vec::new() }; style.rows],
            rotation: 0.0,
            noise: Vec::new(),
            grain: 0.0,
            seed,
        }
    }

    fn max_chars(&self, pitch: u32, glyph: u32) -> u32 {
        (self.row_height() + pitch - glyph) / pitch
    }

    /// A main page: each row alternates title regions with runs of text
    /// regions, trimmed from the left until it fits. Unrotated and clean.
    pub fn random(page_id: u64, style: &PageStyle, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::blank(page_id, style, PageType::Main, rng.random());
        let text = |columns| BlockSpec {
            glyph: style.text_glyph,
            stroke: style.text_stroke,
            column_gap: style.column_gap,
            columns,
        };
        let text_pitch = text(vec![]).pitch();
        let text_max = spec.max_chars(text_pitch, style.text_glyph);
        let content_w = spec.content().w as u32;
        for r in 0..style.rows {
            let mut regions = Vec::new();
            for _ in 0..style.groups_per_row {
                let title = BlockSpec {
                    glyph: style.title_glyph,
                    stroke: style.title_stroke,
                    column_gap: style.column_gap,
                    columns: vec![rng.random_range(style.title_chars.0..=style.title_chars.1)],
                };
                let mut blocks = vec![title];
                if rng.random_bool(style.subtitle_probability) {
                    let sub = BlockSpec {
                        glyph: style.subtitle_glyph,
                        stroke: style.title_stroke,
                        column_gap: style.column_gap,
                        columns: vec![],
                    };
                    let max = spec.max_chars(sub.pitch(), sub.glyph).min(style.subtitle_chars.1);
                    blocks.push(BlockSpec {
                        columns: vec![rng.random_range(style.subtitle_chars.0..=max)],
                        ..sub
                    });
                }
                regions.push(RegionSpec {
                    kind: RegionKind::Title,
                    gap: rng.random_range(style.region_gap.0..=style.region_gap.1),
                    blocks,
                    inner_gap: style.subtitle_gap,
                });
                for _ in 0..rng.random_range(style.texts_per_group.0..=style.texts_per_group.1) {
                    let n = rng.random_range(style.text_columns.0..=style.text_columns.1);
                    let full = rng.random_range(style.min_column_chars.min(text_max)..=text_max);
                    let mut columns = vec![full; n as usize];
                    *columns.last_mut().unwrap() = rng.random_range(1..=full);
                    regions.push(RegionSpec {
                        kind: RegionKind::Text,
                        gap: rng.random_range(style.region_gap.0..=style.region_gap.1),
                        blocks: vec![text(columns)],
                        inner_gap: 0,
                    });
                }
            }
            while regions.iter().map(|g| g.gap + g.width()).sum::<u32>() > content_w {
                regions.pop();
            }
            spec.rows[r].regions = regions;
        }
        spec
    }

    /// An index page: each row holds groups of narrow entries separated by
    /// wide gaps, with a section header between consecutive groups.
    pub fn random_index(page_id: u64, style: &PageStyle, seed: u64, group_gap: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::blank(page_id, style, PageType::Index, rng.random());
        let pitch = style.text_glyph + style.text_glyph / 4;
        let text_max = spec.max_chars(pitch, style.text_glyph);
        let header_glyph = (style.text_glyph + style.title_glyph) / 2;
        let content_w = spec.content().w as u32;
        for r in 0..style.rows {
            let mut regions: Vec<RegionSpec> = Vec::new();
            let mut used = 0;
            'row: loop {
                let items = rng.random_range(2..=6);
                for i in 0..items {
                    let chars = rng.random_range(style.min_column_chars.min(text_max)..=text_max);
                    let gap = if i == 0 && !regions.is_empty() {
                        group_gap
                    } else {
                        rng.random_range(style.region_gap.0..=style.region_gap.1)
                    };
                    let item = RegionSpec {
                        kind: RegionKind::Text,
                        gap,
                        blocks: vec![BlockSpec {
                            glyph: style.text_glyph,
                            stroke: style.text_stroke,
                            column_gap: style.column_gap,
                            columns: vec![chars; rng.random_range(1..=2)],
                        }],
                        inner_gap: 0,
                    };
                    if used + item.gap + item.width() > content_w {
                        break 'row;
                    }
                    used += item.gap + item.width();
                    regions.push(item);
                }
                let header = RegionSpec {
                    kind: RegionKind::Other,
                    gap: group_gap,
                    blocks: vec![BlockSpec {
                        glyph: header_glyph,
                        stroke: style.title_stroke - 1,
                        column_gap: style.column_gap,
                        columns: vec![rng.random_range(2..=5)],
                    }],
                    inner_gap: 0,
                };
                if used + header.gap + header.width() > content_w {
                    break;
                }
                used += header.gap + header.width();
                regions.push(header);
            }
            spec.rows[r].regions = regions;
        }
        spec
    }
}

/// Noise levels for synthetic scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    #[default]
    Clean,
    /// Light wear: a few small stains and holes, light grain.
    Default,
    /// Robustness setting: more and larger stains and holes inside the
    /// frame, frequent margin cracks, heavier grain.
    Hard,
}

impl FromStr for NoisePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Self::Clean),
            "default" => Ok(Self::Default),
            "hard" => Ok(Self::Hard),
            _ => Err(Error::InvalidArgument(format!("unknown noise preset {s:?}"))),
        }
    }
}

struct NoiseLevels {
    stains: (u32, u32),
    holes: (u32, u32),
    radius: (f64, f64),
    crack_probability: f64,
    grain: f64,
}

impl NoisePreset {
    fn levels(self) -> Option<NoiseLevels> {
        match self {
            NoisePreset::Clean => None,
            NoisePreset::Default => Some(NoiseLevels {
                stains: (0, 2),
                holes: (0, 1),
                radius: (3.0, 8.0),
                crack_probability: 0.3,
                grain: 8.0,
            }),
            NoisePreset::Hard => Some(NoiseLevels {
                stains: (2, 4),
                holes: (2, 4),
                radius: (4.0, 12.0),
                crack_probability: 0.5,
                grain: 16.0,
            }),
        }
    }

    /// Fills `spec.noise` and `spec.grain`. Stains and holes fall inside the
    /// frame; cracks stay in the outer page margin, clear of the frame.
    pub fn apply(self, spec: &mut PageSpec, seed: u64) {
        spec.noise.clear();
        spec.grain = 0.0;
        let Some(levels) = self.levels() else { return };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = spec.frame;
        for (kind, (lo, hi)) in [(NoiseKind::Stain, levels.stains), (NoiseKind::Hole, levels.holes)] {
            for _ in 0..rng.random_range(lo..=hi) {
                let c = Point::new(
                    rng.random_range(f64::from(inner.x)..f64::from(inner.right())),
                    rng.random_range(f64::from(inner.y)..f64::from(inner.bottom())),
                );
                let r = rng.random_range(levels.radius.0..=levels.radius.1);
                spec.noise.push(NoiseSpec::disk(kind, c, r));
            }
        }
        if rng.random_bool(levels.crack_probability) {
            spec.noise.push(margin_crack(spec, &mut rng));
        }
        spec.grain = levels.grain;
    }
}

/// A jagged crack confined to the band between the page edge and the frame.
fn margin_crack(spec: &PageSpec, rng: &mut impl Rng) -> NoiseSpec {
    // Frame detection smooths at 1/8 scale and bridges gaps of up to four
    // coarse pixels, plus up to a pixel of pooling slack on each side; stay
    // beyond that so the crack remains a separate component.
    let clearance = 64.0;
    let (x0, y0, x1, y1) = spec.frame_quad().bounds();
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let bands = [
        (0.0, 0.0, w, y0 - clearance),
        (0.0, y1 + clearance, w, h),
        (0.0, 0.0, x0 - clearance, h),
        (x1 + clearance, 0.0, w, h),
    ];
    let usable: Vec<_> = bands.into_iter().filter(|b| b.2 - b.0 > 4.0 && b.3 - b.1 > 4.0).collect();
    let Some(&(bx0, by0, bx1, by1)) = usable.choose(rng) else {
        return NoiseSpec {
            kind: NoiseKind::Crack,
            points: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            magnitude: 2.0,
        };
    };
    let mut p = Point::new(rng.random_range(bx0..bx1), rng.random_range(by0..by1));
    let mut points = vec![p];
    for _ in 0..rng.random_range(3..=6) {
        p = Point::new(
            (p.x + rng.random_range(-120.0..120.0)).clamp(bx0 + 2.0, bx1 - 2.0),
            (p.y + rng.random_range(-120.0..120.0)).clamp(by0 + 2.0, by1 - 2.0),
        );
        points.push(p);
    }
    NoiseSpec {
        kind: NoiseKind::Crack,
        points,
        magnitude: 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    /// The leftmost column of a text region was dropped.
    TruncatedLastLine,
    /// The frame was misdetected and its lower rows lost.
    CorruptedFrame,
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefectKind::TruncatedLastLine => "truncated_last_line",
            DefectKind::CorruptedFrame => "corrupted_frame",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub page_id: u64,
    pub kind: DefectKind,
    /// The damaged element in the defective layout, if a single one.
    pub element: Option<u32>,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.element {
            Some(e) => write!(f, "{} {} {e}", self.page_id, self.kind),
            None => write!(f, "{} {} -", self.page_id, self.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub style: PageStyle,
    pub noise: NoisePreset,
    /// Rotations are drawn uniformly from `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    /// Rows lost by a corrupted frame.
    pub corrupted_rows: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            style: PageStyle::default(),
            noise: NoisePreset::Clean,
            max_rotation: 2.0,
            corrupted_rows: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub spec: PageSpec,
    pub truth: PageLayout,
    /// The truth, or a damaged copy for defective pages; stands in for
    /// extraction output when exercising quality control.
    pub observed: PageLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub pages: Vec<SynthPage>,
    pub defects: Vec<Defect>,
}

impl SynthCorpus {
    /// One `page_id kind element` line per defect.
    pub fn defect_manifest(&self) -> String {
        self.defects.iter().map(|d| format!("{d}\n")).collect()
    }
}

/// `n` main pages with ids `0..n`; `round(defect_rate * n)` of them, chosen
/// by the seed, get a layout-level defect, alternating between kinds.
pub fn generate_corpus(n: usize, base: &CorpusSpec, defect_rate: f64, seed: u64) -> Result<SynthCorpus> {
    if !(0.0..=1.0).contains(&defect_rate) {
        return Err(Error::InvalidArgument(format!("defect rate {defect_rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pages = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let mut spec = PageSpec::random(id, &base.style, rng.random());
        if base.max_rotation > 0.0 {
            spec.rotation = rng.random_range(-base.max_rotation..=base.max_rotation);
        }
        base.noise.apply(&mut spec, rng.random());
        let truth = layout_of(&spec)?;
        pages.push(SynthPage {
            observed: truth.clone(),
            spec,
            truth,
        });
    }
    let count = (defect_rate * n as f64).round() as usize;
    let mut chosen: Vec<usize> = (0..n).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(count);
    chosen.sort_unstable();
    let mut defects = Vec::with_capacity(count);
    for (k, &i) in chosen.iter().enumerate() {
        let page = &mut pages[i];
        let kind = if k % 2 == 0 {
            DefectKind::TruncatedLastLine
        } else {
            DefectKind::CorruptedFrame
        };
        let element = match kind {
            DefectKind::TruncatedLastLine => truncate_last_line(&mut page.observed, &page.spec, &mut rng),
            DefectKind::CorruptedFrame => {
                corrupt_frame(&mut page.observed, base.corrupted_rows);
                None
            }
        };
        defects.push(Defect {
            page_id: page.spec.page_id,
            kind,
            element,
        });
    }
    Ok(SynthCorpus { pages, defects })
}

/// Shrinks a multi-column text region that has a left neighbour by one
/// column pitch from the left. Returns the region's id.
fn truncate_last_line(layout: &mut PageLayout, spec: &PageSpec, rng: &mut impl Rng) -> Option<u32> {
    let mut candidates = Vec::new();
    let mut text_specs = spec
        .rows
        .iter()
        .flat_map(|r| &r.regions)
        .filter(|r| r.kind == RegionKind::Text);
    let children = layout.children();
    for e in &layout.elements {
        if e.category != Category::TextRegion {
            continue;
        }
        let block = &text_specs.next().expect("one spec per text region").blocks[0];
        let siblings = &children[&e.parent];
        let has_left_neighbour = siblings
            .iter()
            .any(|&s| layout.element(s).is_some_and(|o| o.rect.right() <= e.rect.x));
        if block.columns.len() >= 2 && has_left_neighbour {
            candidates.push((e.id, (block.glyph + block.column_gap) as i32));
        }
    }
    let &(id, pitch) = candidates.choose(rng)?;
    let e = layout.elements.iter_mut().find(|e| e.id == id).unwrap();
    e.rect = Rect::new(e.rect.x + pitch, e.rect.y, e.rect.w - pitch, e.rect.h);
    Some(id)
}

/// Drops the bottom `rows` rows and everything under them.
fn corrupt_frame(layout: &mut PageLayout, rows: usize) {
    let frame = layout.page_frame().map(|f| f.id);
    let mut row_ids: Vec<(i32, u32)> = layout
        .elements
        .iter()
        .filter(|e| e.category == Category::Row && e.parent == frame)
        .map(|e| (e.rect.y, e.id))
        .collect();
    row_ids.sort_unstable();
    let dropped: Vec<u32> = row_ids.iter().rev().take(rows).map(|r| r.1).collect();
    layout.remove_subtrees(&dropped);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order::assign_reading_order;
    use crate::raster::binarize;

    fn small_style() -> PageStyle {
        PageStyle {
            width: 800,
            height: 1000,
            frame: Rect::new(60, 60, 680, 880),
            rows: 3,
            groups_per_row: 2,
            ..PageStyle::default()
        }
    }

    #[test]
    fn default_page_has_five_rows_and_expected_counts() {
        let spec = PageSpec::random(0, &PageStyle::default(), 1);
        let layout = layout_of(&spec).unwrap();
        let count = |c| layout.elements.iter().filter(|e| e.category == c).count();
        assert_eq!(count(Category::Row), 5);
        let regions: usize = spec.rows.iter().map(|r| r.regions.len()).sum();
        let parts: usize = spec
            .rows
            .iter()
            .flat_map(|r| &r.regions)
            .filter(|r| r.kind == RegionKind::Title)
            .map(|r| r.blocks.len())
            .sum();
        assert_eq!(layout.elements.len(), 1 + 5 + regions + parts);
        assert!(layout.check().is_ok());
    }

    #[test]
    fn ground_truth_is_already_in_reading_order() {
        for seed in 0..20 {
            let mut spec = PageSpec::random(seed, &PageStyle::default(), seed);
            spec.rotation = (seed as f64 - 10.0) / 4.0;
            let layout = layout_of(&spec).unwrap();
            assert_eq!(assign_reading_order(layout.clone(), None), layout);
            let seq = layout.reading_sequence();
            assert_eq!(seq, (0..layout.elements.len() as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = PageSpec::random(3, &small_style(), 9);
        spec.rotation = 1.5;
        NoisePreset::Hard.apply(&mut spec, 4);
        let (a, la) = generate_page(&spec).unwrap();
        let (b, lb) = generate_page(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn rendered_blocks_match_their_boxes() {
        let spec = PageSpec::random(0, &small_style(), 5);
        let placement = place(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let ink = ink_of(&spec, &placement, &mut rng);
        for row in &placement.rows {
            for region in &row.regions {
                for &(rect, _) in &region.blocks {
                    let grown = Rect::new(rect.x - 1, rect.y - 1, rect.w + 2, rect.h + 2);
                    let found = ink.crop(grown).ink_bbox().map(|r| r.translate(grown.x, grown.y));
                    assert_eq!(found, Some(rect));
                }
            }
        }
    }

    #[test]
    fn overfull_row_is_infeasible() {
        let mut spec = PageSpec::random(0, &PageStyle::default(), 2);
        let region = spec.rows[0].regions[1].clone();
        spec.rows[0].regions = vec![region; 40];
        assert!(matches!(layout_of(&spec), Err(Error::InfeasibleSpec(_))));
        let mut spec = PageSpec::random(0, &PageStyle::default(), 2);
        spec.rotation = 7.0;
        assert!(matches!(layout_of(&spec), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn no_noise_leaves_image_unchanged() {
        let img = GrayImage::filled(50, 40, 200);
        assert_eq!(inject_noise(&img, &[]), img);
    }

    #[test]
    fn stain_adds_its_disk_to_the_ink() {
        let mut page = GrayImage::filled(200, 200, PAPER_LEVEL);
        page.set(5, 5, INK_LEVEL);
        let (c, r) = (Point::new(100.3, 80.7), 9.5);
        let before = binarize(&page).ink_count();
        let after = binarize(&inject_noise(&page, &[NoiseSpec::disk(NoiseKind::Stain, c, r)])).ink_count();
        let mut disk = 0usize;
        for y in 0..200 {
            for x in 0..200 {
                let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
                if dx * dx + dy * dy <= r * r {
                    disk += 1;
                }
            }
        }
        let added = (after - before) as f64;
        assert!((added - disk as f64).abs() <= 0.01 * disk as f64, "{added} vs {disk}");
        assert!((disk as f64 - std::f64::consts::PI * r * r).abs() < 0.05 * disk as f64);
    }

    #[test]
    fn holes_erase_and_cracks_darken() {
        let page = GrayImage::filled(60, 60, INK_LEVEL);
        let holed = inject_noise(&page, &[NoiseSpec::disk(NoiseKind::Hole, Point::new(30.0, 30.0), 5.0)]);
        assert_eq!(holed.get(30, 30), HOLE_LEVEL);
        assert_eq!(holed.get(0, 0), INK_LEVEL);
        let blank = GrayImage::filled(60, 60, PAPER_LEVEL);
        let crack = NoiseSpec {
            kind: NoiseKind::Crack,
            points: vec![Point::new(5.0, 10.0), Point::new(55.0, 10.0), Point::new(55.0, 50.0)],
            magnitude: 2.0,
        };
        let cracked = binarize(&inject_noise(&blank, &[crack]));
        assert!(cracked.get(30, 9) && cracked.get(30, 10) && !cracked.get(30, 12));
        assert!(cracked.get(54, 40) && cracked.get(55, 40));
    }

    #[test]
    fn corpus_defects_follow_the_rate() {
        let corpus = generate_corpus(200, &CorpusSpec::default(), 0.01, 3).unwrap();
        assert_eq!(corpus.defects.len(), 2);
        let again = generate_corpus(200, &CorpusSpec::default(), 0.01, 3).unwrap();
        assert_eq!(corpus, again);
        for d in &corpus.defects {
            let page = &corpus.pages[d.page_id as usize];
            assert_ne!(page.observed, page.truth);
            assert!(page.observed.check().is_ok());
        }
        let clean = corpus.pages.iter().filter(|p| p.observed == p.truth).count();
        assert_eq!(clean, 198);
        let manifest = corpus.defect_manifest();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("truncated_last_line") && lines[1].ends_with("corrupted_frame -"));
    }

    #[test]
    fn index_page_has_headers_between_groups() {
        let spec = PageSpec::random_index(0, &PageStyle::default(), 11, 60);
        let layout = layout_of(&spec).unwrap();
        assert_eq!(layout.meta.page_type, PageType::Index);
        assert!(layout.elements.iter().any(|e| e.category == Category::Other));
        assert_eq!(assign_reading_order(layout.clone(), Some(40.0)), layout);
    }
}

//! The text block detector: smoothing, labeling and tracing primitives, and
//! the page frame -> row -> region extraction built on them.
//!
//! Frame and row detection work on an OR-pooled 1/8 copy of the page; region
//! extraction runs at full resolution on one row at a time, so blocks from
//! different rows can never merge.

mod ccl;
mod contour;
mod rlsa;

pub use ccl::{connected_components, label_components, Component, Connectivity, Labeling};
pub use contour::trace_boundary;
pub use rlsa::{rlsa_horizontal, rlsa_vertical};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{circumscribe_quad, Point, Quad, Rect};
use crate::raster::{downsample, Bitmap};

/// Thresholds for the block detector. None of these come with published
/// values; the defaults are calibrated against the synthetic page generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Downsampling factor for frame and row detection.
    pub coarse_factor: usize,
    /// RLSA closing (coarse pixels, both directions) before frame detection.
    pub c_frame: usize,
    /// Smallest accepted frame, as a fraction of the page area covered by
    /// the frame component's bounding box.
    pub min_frame_fraction: f64,
    /// Half-size of the full-resolution window used to refine each coarse
    /// frame corner; 0 disables refinement.
    pub frame_refine_window: usize,
    /// Band along the rectified frame edge that is cleared before row
    /// splitting, removing the printed border.
    pub frame_inset: usize,
    /// Horizontal RLSA threshold for rows, as a fraction of the coarse width.
    pub c_row_fraction: f64,
    /// Minimum coarse pixel count of a row component.
    pub min_row_pixels: usize,
    /// Vertical RLSA threshold for regions, as a fraction of the row height.
    pub c_region_fraction: f64,
    /// Horizontal closing that joins the lines of one region; gaps wider
    /// than this separate regions.
    pub region_join: usize,
    /// Components smaller than this (smoothed pixels) are dropped as specks.
    pub min_region_pixels: usize,
    /// Narrowest internal column gap that separates a title from its
    /// subtitle.
    pub subtitle_gap_min: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            coarse_factor: 8,
            c_frame: 4,
            min_frame_fraction: 0.25,
            frame_refine_window: 16,
            frame_inset: 12,
            c_row_fraction: 0.5,
            min_row_pixels: 16,
            c_region_fraction: 0.1,
            region_join: 10,
            min_region_pixels: 30,
            subtitle_gap_min: 6,
        }
    }
}

impl SegmentationParams {
    pub fn c_region(&self, row_height: usize) -> usize {
        ((self.c_region_fraction * row_height as f64).round() as usize).max(1)
    }
}

/// Outward corner of a pixel for each quad vertex slot (TL, TR, BR, BL).
const CORNER_SIGNS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

fn outward_corner(slot: usize, px: f64, py: f64, size: f64) -> Point {
    let (sx, sy) = CORNER_SIGNS[slot];
    Point::new(
        px + if sx > 0.0 { size } else { 0.0 },
        py + if sy > 0.0 { size } else { 0.0 },
    )
}

/// Locates the page frame: the outer boundary of the smoothed coarse
/// component with the largest bounding box, circumscribed by a
/// quadrilateral and mapped back to full resolution. A thin frame line holds
/// fewer pixels than dense content, so size is judged by extent.
pub fn detect_page_frame(bm: &Bitmap, params: &SegmentationParams) -> Result<Quad> {
    let f = params.coarse_factor;
    let coarse = downsample(bm, f).map_err(|e| Error::NoPageFrame(e.to_string()))?;
    let smoothed = rlsa_vertical(&rlsa_horizontal(&coarse, params.c_frame), params.c_frame);
    let labeling = label_components(&smoothed, Connectivity::Eight);
    let Some(largest) = labeling
        .components
        .iter()
        .copied()
        .max_by_key(|c| (c.bbox.area(), c.pixel_count))
    else {
        return Err(Error::NoPageFrame("page has no ink".into()));
    };
    let page_area = (coarse.width() * coarse.height()) as f64;
    if (largest.bbox.area() as f64) < params.min_frame_fraction * page_area {
        return Err(Error::NoPageFrame(format!(
            "largest component covers {:.3} of the page",
            largest.bbox.area() as f64 / page_area
        )));
    }
    let boundary = trace_boundary(&labeling.mask(largest.label));
    let coarse_quad =
        circumscribe_quad(&boundary).map_err(|_| Error::NoPageFrame("frame contour is degenerate".into()))?;

    let scale = f as f64;
    let mut vertices = [Point::new(0.0, 0.0); 4];
    for (slot, v) in coarse_quad.vertices().iter().enumerate() {
        let corner = outward_corner(slot, v.x * scale, v.y * scale, scale);
        vertices[slot] = match params.frame_refine_window {
            0 => corner,
            win => refine_corner(bm, slot, corner, win).unwrap_or(corner),
        };
    }
    Quad::new(vertices).map_err(|_| Error::NoPageFrame("frame quad is degenerate".into()))
}

/// Best full-resolution ink pixel for a corner slot near a coarse estimate.
fn refine_corner(bm: &Bitmap, slot: usize, near: Point, win: usize) -> Option<Point> {
    let (sx, sy) = CORNER_SIGNS[slot];
    let win = win as i64;
    let (cx, cy) = (near.x.round() as i64, near.y.round() as i64);
    let mut best: Option<(f64, i64, i64)> = None;
    for y in (cy - win).max(0)..(cy + win).min(bm.height() as i64) {
        for x in (cx - win).max(0)..(cx + win).min(bm.width() as i64) {
            if !bm.get(x as usize, y as usize) {
                continue;
            }
            let score = sx * x as f64 + sy * y as f64;
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, x, y));
            }
        }
    }
    best.map(|(_, x, y)| outward_corner(slot, x as f64, y as f64, 1.0))
}

/// Clears a band of `inset` pixels along every edge.
pub fn clear_border(bm: &Bitmap, inset: usize) -> Bitmap {
    let mut out = bm.clone();
    let (w, h) = (bm.width(), bm.height());
    for y in 0..h {
        let row = out.row_mut(y);
        if y < inset || y + inset >= h {
            row.fill(false);
        } else {
            let i = inset.min(w);
            row[..i].fill(false);
            row[w.saturating_sub(inset)..].fill(false);
        }
    }
    out
}

/// Merges boxes whose projections on one axis overlap, returning the merged
/// boxes sorted along that axis.
fn merge_overlapping(mut rects: Vec<Rect>, vertical: bool) -> Vec<Rect> {
    let key = |r: &Rect| if vertical { (r.y, r.bottom()) } else { (r.x, r.right()) };
    rects.sort_by_key(|r| key(r));
    let mut out: Vec<Rect> = Vec::new();
    for r in rects {
        match out.last_mut() {
            Some(last) if key(&r).0 < key(last).1 => *last = last.union(&r),
            _ => out.push(r),
        }
    }
    out
}

/// Splits a rectified frame into rows, top to bottom.
pub fn split_rows(rectified: &Bitmap, params: &SegmentationParams) -> Vec<Rect> {
    let f = params.coarse_factor;
    let Ok(coarse) = downsample(rectified, f) else {
        return Vec::new();
    };
    let c_row = (params.c_row_fraction * coarse.width() as f64).round() as usize;
    let smoothed = rlsa_horizontal(&coarse, c_row);
    let rows: Vec<Rect> = connected_components(&smoothed, Connectivity::Eight)
        .into_iter()
        .filter(|c| c.pixel_count >= params.min_row_pixels)
        .map(|c| c.bbox)
        .collect();
    let f = f as i32;
    merge_overlapping(rows, true)
        .into_iter()
        .map(|r| Rect::new(r.x * f, r.y * f, r.w * f, r.h * f))
        .collect()
}

/// Splits one full-resolution row crop into regions, right to left. Returned
/// rects are in crop coordinates and pairwise horizontally disjoint.
pub fn split_regions(row_img: &Bitmap, params: &SegmentationParams) -> Vec<Rect> {
    split_regions_with(
        row_img,
        params.c_region(row_img.height()),
        params.region_join,
        params.min_region_pixels,
    )
}

pub(crate) fn split_regions_with(
    row_img: &Bitmap,
    c_region: usize,
    join: usize,
    min_pixels: usize,
) -> Vec<Rect> {
    if row_img.is_empty() {
        return Vec::new();
    }
    let smoothed = rlsa_horizontal(&rlsa_vertical(row_img, c_region), join);
    let rects: Vec<Rect> = connected_components(&smoothed, Connectivity::Eight)
        .into_iter()
        .filter(|c| c.pixel_count >= min_pixels)
        .map(|c| c.bbox)
        .collect();
    let mut merged = merge_overlapping(rects, false);
    sort_right_to_left(&mut merged);
    merged
}

/// Right edge descending, then top edge ascending.
pub fn sort_right_to_left(rects: &mut [Rect]) {
    rects.sort_by(|a, b| b.right().cmp(&a.right()).then(a.y.cmp(&b.y)));
}

/// Splits a title region at its widest internal blank column run when that
/// run is at least `gap_min` wide. The right part is the title; the left
/// part, when present, the subtitle. Rects are in crop coordinates.
pub fn split_title_subtitle(region_img: &Bitmap, gap_min: usize) -> Result<(Rect, Option<Rect>)> {
    let whole = region_img.ink_bbox().ok_or(Error::EmptyRegion)?;
    let occupied: Vec<bool> = (0..region_img.width())
        .map(|x| (0..region_img.height()).any(|y| region_img.get(x, y)))
        .collect();
    let (first, last) = (whole.x as usize, whole.right() as usize - 1);
    // Widest blank run strictly inside [first, last]; ties keep the rightmost.
    let mut best: Option<(usize, usize)> = None;
    let mut x = last;
    while x > first {
        if occupied[x] {
            x -= 1;
            continue;
        }
        let end = x + 1;
        while !occupied[x] {
            x -= 1;
        }
        let start = x + 1;
        if best.is_none_or(|(s, e)| end - start > e - s) {
            best = Some((start, end));
        }
    }
    match best {
        Some((start, end)) if end - start >= gap_min => {
            let right = region_img.crop(Rect::from_corners(end as i32, 0, region_img.width() as i32, region_img.height() as i32));
            let left = region_img.crop(Rect::from_corners(0, 0, start as i32, region_img.height() as i32));
            let title = right.ink_bbox().expect("occupied column right of gap").translate(end as i32, 0);
            let subtitle = left.ink_bbox().expect("occupied column left of gap");
            Ok((title, Some(subtitle)))
        }
        _ => Ok((whole, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(bm: &mut Bitmap, r: Rect) {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                bm.set(x as usize, y as usize, true);
            }
        }
    }

    #[test]
    fn blank_page_has_no_frame() {
        let err = detect_page_frame(&Bitmap::new(400, 600), &SegmentationParams::default());
        assert!(matches!(err, Err(Error::NoPageFrame(_))));
    }

    #[test]
    fn small_blob_is_not_a_frame() {
        let mut bm = Bitmap::new(400, 600);
        bar(&mut bm, Rect::new(100, 100, 40, 40));
        let err = detect_page_frame(&bm, &SegmentationParams::default());
        assert!(matches!(err, Err(Error::NoPageFrame(_))));
    }

    #[test]
    fn rectangle_outline_frame() {
        let mut bm = Bitmap::new(400, 600);
        let frame = Rect::new(37, 51, 300, 500);
        bar(&mut bm, frame);
        bm.clear_rect(Rect::new(41, 55, 292, 492));
        let q = detect_page_frame(&bm, &SegmentationParams::default()).unwrap();
        for (v, t) in q.vertices().iter().zip(frame.corners()) {
            assert!(v.dist(t) < 1e-9, "{v:?} vs {t:?}");
        }
        let coarse_only = SegmentationParams { frame_refine_window: 0, ..Default::default() };
        let q = detect_page_frame(&bm, &coarse_only).unwrap();
        for (v, t) in q.vertices().iter().zip(frame.corners()) {
            assert!(v.dist(t) <= 8.0 * 2f64.sqrt(), "{v:?} vs {t:?}");
        }
    }

    #[test]
    fn rows_are_sorted_and_blank_gives_none() {
        let params = SegmentationParams::default();
        assert!(split_rows(&Bitmap::new(320, 400), &params).is_empty());
        let mut bm = Bitmap::new(320, 400);
        bar(&mut bm, Rect::new(16, 200, 280, 60));
        bar(&mut bm, Rect::new(40, 24, 100, 60));
        bar(&mut bm, Rect::new(200, 30, 100, 50));
        let rows = split_rows(&bm, &params);
        assert_eq!(rows, vec![Rect::new(40, 24, 264, 64), Rect::new(16, 200, 280, 64)]);
    }

    #[test]
    fn regions_two_bars_gap_threshold() {
        let params = SegmentationParams::default();
        let join = params.region_join as i32;
        for (gap, expect) in [(join + 1, 2usize), (join, 1)] {
            let mut bm = Bitmap::new(120, 60);
            bar(&mut bm, Rect::new(10, 5, 20, 50));
            bar(&mut bm, Rect::new(30 + gap, 5, 20, 50));
            let regions = split_regions(&bm, &params);
            assert_eq!(regions.len(), expect, "gap {gap}");
            if expect == 2 {
                assert_eq!(regions[0], Rect::new(30 + gap, 5, 20, 50));
                assert_eq!(regions[1], Rect::new(10, 5, 20, 50));
            }
        }
    }

    #[test]
    fn regions_bridge_character_gaps_vertically() {
        let params = SegmentationParams::default();
        let mut bm = Bitmap::new(60, 200);
        for k in 0..9 {
            bar(&mut bm, Rect::new(20, 5 + k * 20, 14, 14));
        }
        assert_eq!(split_regions(&bm, &params), vec![Rect::new(20, 5, 14, 174)]);
        assert!(split_regions(&Bitmap::new(60, 200), &params).is_empty());
    }

    #[test]
    fn specks_are_dropped() {
        let params = SegmentationParams::default();
        let mut bm = Bitmap::new(100, 100);
        bar(&mut bm, Rect::new(80, 10, 3, 3));
        bar(&mut bm, Rect::new(10, 10, 20, 60));
        assert_eq!(split_regions(&bm, &params), vec![Rect::new(10, 10, 20, 60)]);
    }

    #[test]
    fn title_subtitle_split_at_gap() {
        let mut bm = Bitmap::new(80, 100);
        bar(&mut bm, Rect::new(2, 10, 20, 60));
        bar(&mut bm, Rect::new(32, 0, 30, 90));
        let (title, sub) = split_title_subtitle(&bm, 6).unwrap();
        assert_eq!(title, Rect::new(32, 0, 30, 90));
        assert_eq!(sub, Some(Rect::new(2, 10, 20, 60)));
    }

    #[test]
    fn title_subtitle_threshold_boundary() {
        let mut bm = Bitmap::new(80, 100);
        bar(&mut bm, Rect::new(2, 10, 20, 60));
        bar(&mut bm, Rect::new(27, 0, 30, 90));
        let (title, sub) = split_title_subtitle(&bm, 6).unwrap();
        assert_eq!((title, sub), (Rect::new(2, 0, 55, 90), None));
        let (_, sub) = split_title_subtitle(&bm, 5).unwrap();
        assert!(sub.is_some());
    }

    #[test]
    fn title_subtitle_solid_and_blank() {
        let mut bm = Bitmap::new(30, 30);
        bar(&mut bm, Rect::new(5, 5, 10, 20));
        assert_eq!(split_title_subtitle(&bm, 6).unwrap(), (Rect::new(5, 5, 10, 20), None));
        assert!(matches!(split_title_subtitle(&Bitmap::new(5, 5), 6), Err(Error::EmptyRegion)));
    }

    #[test]
    fn clear_border_band() {
        let mut bm = Bitmap::new(10, 10);
        bm.pixels_mut().fill(true);
        let c = clear_border(&bm, 2);
        assert_eq!(c.ink_count(), 36);
        assert_eq!(c.ink_bbox(), Some(Rect::new(2, 2, 6, 6)));
    }
}

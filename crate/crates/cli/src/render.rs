//! Review overlays: element outlines drawn over the scan.

use image::{Rgb, RgbImage};
use tategaki::geometry::{fit_affine, Point, Rect};
use tategaki::order::{Category, PageLayout};
use tategaki::raster::GrayImage;
use tategaki::Result;

fn color(category: Category) -> Rgb<u8> {
    Rgb(match category {
        Category::PageFrame => [220, 30, 30],
        Category::Row => [40, 90, 230],
        Category::TitleRegion => [240, 140, 0],
        Category::TextRegion => [20, 170, 60],
        Category::Title => [210, 0, 200],
        Category::Subtitle => [120, 40, 200],
        Category::Other => [110, 110, 110],
    })
}

fn plot(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    let (x, y) = (x.round() as i64, y.round() as i64);
    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let (px, py) = (x + dx, y + dy);
        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
            img.put_pixel(px as u32, py as u32, c);
        }
    }
}

fn polygon(img: &mut RgbImage, pts: &[Point; 4], c: Rgb<u8>) {
    for i in 0..4 {
        let (a, b) = (pts[i], pts[(i + 1) % 4]);
        let steps = a.dist(b).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            plot(img, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), c);
        }
    }
}

/// Draws the frame quad and every element, mapped from rectified frame space
/// back onto the scan. `highlight` elements are drawn a second time offset
/// outward so they stand out.
pub fn overlay(scan: &GrayImage, layout: &PageLayout, highlight: &[u32]) -> Result<RgbImage> {
    let mut img = RgbImage::from_fn(scan.width() as u32, scan.height() as u32, |x, y| {
        let v = scan.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let Some(quad) = layout.page_frame().and_then(|f| f.quad) else {
        return Ok(img);
    };
    let anchor = quad.rectified_rect();
    let back = fit_affine(&quad, Rect::new(0, 0, anchor.w, anchor.h))?.inverse()?;
    for e in &layout.elements {
        if e.category == Category::PageFrame {
            polygon(&mut img, quad.vertices(), color(e.category));
            continue;
        }
        let mut rects = vec![e.rect];
        if highlight.contains(&e.id) {
            rects.push(Rect::new(e.rect.x - 3, e.rect.y - 3, e.rect.w + 6, e.rect.h + 6));
        }
        for r in rects {
            let corners = r.translate(-anchor.x, -anchor.y).corners().map(|p| back.apply(p));
            polygon(&mut img, &corners, color(e.category));
        }
    }
    Ok(img)
}

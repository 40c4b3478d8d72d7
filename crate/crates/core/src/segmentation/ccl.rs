//! Connected-component labeling by iterative flood fill.

use crate::geometry::Rect;
use crate::raster::Bitmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// N, S, E, W neighbors.
    Four,
    /// All eight neighbors.
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// A maximal connected set of ink pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    /// Zero-based, in scanline order of each component's first pixel.
    pub label: u32,
    pub bbox: Rect,
    pub pixel_count: usize,
}

/// Per-pixel labels (`0` = background, `k + 1` = component `k`) plus the
/// component table.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl Labeling {
    /// Bitmap holding only the pixels of `component`.
    pub fn mask(&self, component: u32) -> Bitmap {
        let want = component + 1;
        Bitmap::from_vec(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == want).collect(),
        )
        .expect("label buffer matches dimensions")
    }
}

pub fn label_components(bm: &Bitmap, connectivity: Connectivity) -> Labeling {
    let (w, h) = (bm.width(), bm.height());
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let offsets = connectivity.offsets();
    for start in 0..w * h {
        if !bm.pixels()[start] || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32;
        labels[start] = label + 1;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0usize;
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            count += 1;
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if bm.pixels()[n] && labels[n] == 0 {
                    labels[n] = label + 1;
                    stack.push(n);
                }
            }
        }
        components.push(Component {
            label,
            bbox: Rect::from_corners(x0 as i32, y0 as i32, x1 as i32 + 1, y1 as i32 + 1),
            pixel_count: count,
        });
    }
    Labeling {
        width: w,
        height: h,
        labels,
        components,
    }
}

pub fn connected_components(bm: &Bitmap, connectivity: Connectivity) -> Vec<Component> {
    label_components(bm, connectivity).components
}

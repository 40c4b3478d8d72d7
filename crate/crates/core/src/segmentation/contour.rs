//! Moore-neighbor tracing of a component's outer boundary.

use crate::geometry::Point;
use crate::raster::Bitmap;

/// Clockwise on screen (y down), starting west.
const RING: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(dx: i64, dy: i64) -> usize {
    RING.iter()
        .position(|&o| o == (dx, dy))
        .expect("backtrack is always a Moore neighbor")
}

/// Traces the outer boundary of the component containing the first ink pixel
/// in scanline order (topmost, then leftmost). Points are pixel indices,
/// clockwise, starting at that pixel. Holes are ignored. A blank bitmap
/// yields an empty list.
pub fn trace_boundary(bm: &Bitmap) -> Vec<Point> {
    let Some(start) = bm.pixels().iter().position(|&b| b) else {
        return Vec::new();
    };
    let w = bm.width();
    let s = ((start % w) as i64, (start / w) as i64);

    let step = |p: (i64, i64), back: (i64, i64)| -> Option<((i64, i64), (i64, i64))> {
        let from = ring_index(back.0 - p.0, back.1 - p.1);
        let mut prev = back;
        for k in 1..=8 {
            let (dx, dy) = RING[(from + k) % 8];
            let c = (p.0 + dx, p.1 + dy);
            if bm.get_signed(c.0, c.1) {
                return Some((c, prev));
            }
            prev = c;
        }
        None
    };

    let mut out = vec![Point::new(s.0 as f64, s.1 as f64)];
    let Some((first_next, first_back)) = step(s, (s.0 - 1, s.1)) else {
        return out;
    };
    let (mut p, mut back) = (first_next, first_back);
    let limit = 4 * bm.pixels().len() + 16;
    for _ in 0..limit {
        if p == s {
            // Stop once the opening move would repeat.
            match step(p, back) {
                Some((c, _)) if c == first_next => break,
                _ => {}
            }
        }
        out.push(Point::new(p.0 as f64, p.1 as f64));
        let (c, b) = step(p, back).expect("a traced pixel always has an ink neighbor");
        p = c;
        back = b;
    }
    out
}

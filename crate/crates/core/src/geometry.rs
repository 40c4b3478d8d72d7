//! Points, boxes, page-frame quadrilaterals and the affine rectification that
//! maps a detected frame onto an axis-aligned working canvas.
//!
//! Pixel `(i, j)` covers the continuous square `[i, i+1) x [j, j+1)`; its
//! center is `(i + 0.5, j + 0.5)`. Every sampling routine here uses that
//! convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Bitmap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Integer box `(x, y, w, h)` with `(x, y)` the top-left pixel and strictly
/// positive extent. The right and bottom edges are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    /// # Panics
    /// If `w` or `h` is not positive.
    pub fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self::try_new(x, y, w, h).expect("rect extent must be positive")
    }

    pub fn try_new(x: i32, y: i32, w: i32, h: i32) -> Result<Self> {
        if w <= 0 || h <= 0 {
            return Err(Error::InvalidArgument(format!(
                "rect extent must be positive, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// From exclusive corners `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w as i64 * self.h as i64
    }

    pub fn translate(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x0 < x1 && y0 < y1).then(|| Rect::from_corners(x0, y0, x1, y1))
    }

    pub fn intersection_area(&self, other: &Rect) -> i64 {
        self.intersection(other).map_or(0, |r| r.area())
    }

    /// Smallest rect covering both.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect::from_corners(
            self.x.min(other.x),
            self.y.min(other.y),
            self.right().max(other.right()),
            self.bottom().max(other.bottom()),
        )
    }

    /// True when `other` lies inside `self` grown by `tol` pixels on every side.
    pub fn contains_rect(&self, other: &Rect, tol: i32) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    /// Corner polygon, clockwise from top-left.
    pub fn corners(&self) -> [Point; 4] {
        let (x0, y0, x1, y1) = (
            self.x as f64,
            self.y as f64,
            self.right() as f64,
            self.bottom() as f64,
        );
        [
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ]
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

/// Signed polygon area, positive for clockwise order in image (y-down)
/// coordinates.
pub fn polygon_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        s += p.x * q.y - q.x * p.y;
    }
    s / 2.0
}

/// A convex quadrilateral with vertices clockwise from the top-left corner:
/// top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    vertices: [Point; 4],
}

impl Quad {
    pub fn new(vertices: [Point; 4]) -> Result<Self> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("quad vertex is not finite".into()));
        }
        let area = polygon_area(&vertices);
        if area <= 1e-9 {
            return Err(Error::DegenerateContour);
        }
        let scale = vertices.iter().map(|p| p.x.abs() + p.y.abs()).fold(1.0, f64::max);
        for i in 0..4 {
            let (a, b, c) = (vertices[i], vertices[(i + 1) % 4], vertices[(i + 2) % 4]);
            let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
            if cross < -1e-9 * scale * scale {
                return Err(Error::InvalidArgument("quad is not convex".into()));
            }
        }
        Ok(Self { vertices })
    }

    pub fn from_rect(rect: Rect) -> Self {
        Self {
            vertices: rect.corners(),
        }
    }

    pub fn vertices(&self) -> &[Point; 4] {
        &self.vertices
    }

    pub fn top_left(&self) -> Point {
        self.vertices[0]
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// `(min_x, min_y, max_x, max_y)` of the vertices.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        )
    }

    /// Width and height of the rectified frame: mean of opposite edge
    /// lengths, rounded.
    pub fn rectified_size(&self) -> (i32, i32) {
        let [tl, tr, br, bl] = self.vertices;
        let w = ((tl.dist(tr) + bl.dist(br)) / 2.0).round().max(1.0) as i32;
        let h = ((tl.dist(bl) + tr.dist(br)) / 2.0).round().max(1.0) as i32;
        (w, h)
    }

    /// The axis-aligned rect the frame is rectified onto, anchored at the
    /// rounded top-left vertex. All other layout rects live in this space.
    pub fn rectified_rect(&self) -> Rect {
        let (w, h) = self.rectified_size();
        let tl = self.top_left();
        Rect::new(tl.x.round() as i32, tl.y.round() as i32, w, h)
    }

    /// Point-in-quad test with the quad grown by `tol` along each edge normal.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        (0..4).all(|i| {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % 4]);
            let len = a.dist(b);
            if len == 0.0 {
                return true;
            }
            // Clockwise in y-down coordinates keeps the interior on the right.
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            cross / len >= -tol
        })
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain. Collinear points are dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Quadrilateral whose corners are the hull points extremal in `-x-y`,
/// `x-y`, `x+y` and `-x+y` (top-left, top-right, bottom-right, bottom-left).
pub fn circumscribe_quad(boundary: &[Point]) -> Result<Quad> {
    let hull = convex_hull(boundary);
    if hull.len() < 3 || polygon_area(&hull).abs() < 1e-9 {
        return Err(Error::DegenerateContour);
    }
    let pick = |score: fn(&Point) -> f64| {
        hull.iter()
            .copied()
            .fold(None::<Point>, |best, p| match best {
                Some(b) if score(&b) >= score(&p) => Some(b),
                _ => Some(p),
            })
            .unwrap()
    };
    let tl = pick(|p| -p.x - p.y);
    let tr = pick(|p| p.x - p.y);
    let br = pick(|p| p.x + p.y);
    let bl = pick(|p| -p.x + p.y);
    Quad::new([tl, tr, br, bl])
}

/// `(x, y) -> (a*x + b*y + c, d*x + e*y + f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            c: dx,
            f: dy,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `degrees` about `center`. Positive angles turn clockwise on
    /// screen because the y axis points down.
    pub fn rotation_about(center: Point, degrees: f64) -> Self {
        let (s, co) = degrees.to_radians().sin_cos();
        Self {
            a: co,
            b: -s,
            c: center.x - co * center.x + s * center.y,
            d: s,
            e: co,
            f: center.y - s * center.x - co * center.y,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.c,
            self.d * p.x + self.e * p.y + self.f,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularFit(format!("determinant {det}")));
        }
        let (a, b, d, e) = (self.e / det, -self.b / det, -self.d / det, self.a / det);
        Ok(AffineMap {
            a,
            b,
            c: -(a * self.c + b * self.f),
            d,
            e,
            f: -(d * self.c + e * self.f),
        })
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineMap) -> AffineMap {
        AffineMap {
            a: self.a * first.a + self.b * first.d,
            b: self.a * first.b + self.b * first.e,
            c: self.a * first.c + self.b * first.f + self.c,
            d: self.d * first.a + self.e * first.d,
            e: self.d * first.b + self.e * first.e,
            f: self.d * first.c + self.e * first.f + self.f,
        }
    }

    /// Root-mean-square distance between mapped `src` corners and `dst`
    /// corners. Zero for any parallelogram source.
    pub fn residual(&self, src: &Quad, dst: Rect) -> f64 {
        let sq: f64 = src
            .vertices()
            .iter()
            .zip(dst.corners())
            .map(|(s, t)| {
                let m = self.apply(*s);
                (m.x - t.x).powi(2) + (m.y - t.y).powi(2)
            })
            .sum();
        (sq / 4.0).sqrt()
    }
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [
        [m[0][0], m[0][1], m[0][2], rhs[0]],
        [m[1][0], m[1][1], m[1][2], rhs[1]],
        [m[2][0], m[2][1], m[2][2], rhs[2]],
    ];
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale.max(1.0) {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let k = a[row][col] / a[col][col];
                for c in col..4 {
                    a[row][c] -= k * a[col][c];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

/// Least-squares affine map taking each `src` corner to the matching corner
/// of `dst` (clockwise from top-left on both sides).
pub fn fit_affine(src: &Quad, dst: Rect) -> Result<AffineMap> {
    // Center the source for conditioning; large page coordinates otherwise
    // make the normal matrix badly scaled.
    let n = 4.0;
    let cx = src.vertices().iter().map(|p| p.x).sum::<f64>() / n;
    let cy = src.vertices().iter().map(|p| p.y).sum::<f64>() / n;
    let mut m = [[0.0; 3]; 3];
    let mut rx = [0.0; 3];
    let mut ry = [0.0; 3];
    for (s, t) in src.vertices().iter().zip(dst.corners()) {
        let v = [s.x - cx, s.y - cy, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += v[i] * v[j];
            }
            rx[i] += v[i] * t.x;
            ry[i] += v[i] * t.y;
        }
    }
    let (Some([a, b, c0]), Some([d, e, f0])) = (solve3(m, rx), solve3(m, ry)) else {
        return Err(Error::SingularFit("source corners are degenerate".into()));
    };
    let map = AffineMap {
        a,
        b,
        c: c0 - a * cx - b * cy,
        d,
        e,
        f: f0 - d * cx - e * cy,
    };
    if map.determinant().abs() < 1e-12 {
        return Err(Error::SingularFit("fitted map is not invertible".into()));
    }
    Ok(map)
}

/// Nearest-neighbor warp: output pixel `(x, y)` takes the source pixel
/// containing `map^-1(x + 0.5, y + 0.5)`. Samples outside the source are
/// background.
pub fn warp(bm: &Bitmap, map: &AffineMap, out_w: usize, out_h: usize) -> Result<Bitmap> {
    let inv = map.inverse()?;
    let mut out = Bitmap::new(out_w, out_h);
    let (sw, sh) = (bm.width() as f64, bm.height() as f64);
    for y in 0..out_h {
        let py = y as f64 + 0.5;
        let mut u = inv.a * 0.5 + inv.b * py + inv.c;
        let mut v = inv.d * 0.5 + inv.e * py + inv.f;
        let row = out.row_mut(y);
        for cell in row.iter_mut() {
            if u >= 0.0 && v >= 0.0 && u < sw && v < sh {
                *cell = bm.get(u as usize, v as usize);
            }
            u += inv.a;
            v += inv.d;
        }
    }
    Ok(out)
}

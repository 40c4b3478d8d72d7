//! Grayscale scans, binary ink masks, global thresholding and OR-pooled
//! downsampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// An 8-bit grayscale image; 0 is black ink, 255 is white paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// An image filled with a single intensity.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.samples[y * self.width + x] = v;
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &s in &self.samples {
            hist[s as usize] += 1;
        }
        hist
    }

    /// Loads a PNG (or any format the `image` crate decodes with the enabled
    /// features). Color inputs are converted to luma.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.samples.clone(),
        )
        .expect("sample buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// A binary ink mask stored row-major; `true` is ink.
#[derive(Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    ink: Vec<bool>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmap({}x{}", self.width, self.height)?;
        if self.width * self.height <= 1024 {
            for y in 0..self.height {
                f.write_str("\n  ")?;
                for x in 0..self.width {
                    f.write_str(if self.get(x, y) { "#" } else { "." })?;
                }
            }
        }
        f.write_str(")")
    }
}

impl Bitmap {
    /// An all-background bitmap.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ink: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, ink: Vec<bool>) -> Result<Self> {
        if ink.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                ink.len()
            )));
        }
        Ok(Self { width, height, ink })
    }

    /// Builds a bitmap from rows of text where `#` is ink and anything else
    /// is background. Leading/trailing whitespace on each line is ignored and
    /// blank lines are skipped.
    ///
    /// ```
    /// use tategaki::raster::Bitmap;
    /// let bm = Bitmap::from_ascii("
    ///     #..#
    ///     ....
    /// ");
    /// assert_eq!((bm.width(), bm.height()), (4, 2));
    /// assert_eq!(bm.ink_count(), 2);
    /// ```
    pub fn from_ascii(text: &str) -> Self {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        let mut bm = Self::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    bm.set(x, y, true);
                }
            }
        }
        bm
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn pixels(&self) -> &[bool] {
        &self.ink
    }

    pub fn pixels_mut(&mut self) -> &mut [bool] {
        &mut self.ink
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    /// Like [`Bitmap::get`] but out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.ink[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.ink[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.ink[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [bool] {
        &mut self.ink[y * self.width..(y + 1) * self.width]
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&b| b).count()
    }

    pub fn transpose(&self) -> Bitmap {
        let mut out = Bitmap::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(y, x, true);
                }
            }
        }
        out
    }

    /// Copies the part of `rect` that overlaps the bitmap. Pixels of `rect`
    /// outside the bitmap are background.
    pub fn crop(&self, rect: Rect) -> Bitmap {
        let mut out = Bitmap::new(rect.w as usize, rect.h as usize);
        let x0 = rect.x.max(0) as usize;
        let y0 = rect.y.max(0) as usize;
        let x1 = (rect.right() as usize).min(self.width);
        let y1 = (rect.bottom() as usize).min(self.height);
        if rect.right() <= 0 || rect.bottom() <= 0 || x0 >= x1 || y0 >= y1 {
            return out;
        }
        for y in y0..y1 {
            let oy = (y as i64 - rect.y as i64) as usize;
            let ox = (x0 as i64 - rect.x as i64) as usize;
            let n = x1 - x0;
            out.ink[oy * out.width + ox..oy * out.width + ox + n]
                .copy_from_slice(&self.ink[y * self.width + x0..y * self.width + x1]);
        }
        out
    }

    /// Tight bounding box of all ink pixels, or `None` for a blank bitmap.
    pub fn ink_bbox(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..self.height {
            let row = self.row(y);
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap();
            x0 = x0.min(first);
            x1 = x1.max(last);
            y0 = y0.min(y);
            y1 = y;
        }
        (x0 != usize::MAX).then(|| Rect::from_corners(x0 as i32, y0 as i32, x1 as i32 + 1, y1 as i32 + 1))
    }

    /// Clears every pixel of `rect` (clipped to the bitmap).
    pub fn clear_rect(&mut self, rect: Rect) {
        self.fill_rect(rect, false);
    }

    /// Sets every pixel of `rect` (clipped to the bitmap) to `value`.
    pub fn fill_rect(&mut self, rect: Rect, value: bool) {
        let x0 = (rect.x.max(0) as usize).min(self.width);
        let y0 = rect.y.max(0) as usize;
        let x1 = (rect.right().max(0) as usize).min(self.width);
        let y1 = (rect.bottom().max(0) as usize).min(self.height);
        if x0 >= x1 {
            return;
        }
        for y in y0..y1 {
            self.row_mut(y)[x0..x1].fill(value);
        }
    }

    /// Renders ink as `ink_level` and background as `paper_level`.
    pub fn render(&self, ink_level: u8, paper_level: u8) -> GrayImage {
        assert!(!self.is_empty(), "cannot render an empty bitmap");
        GrayImage {
            width: self.width,
            height: self.height,
            samples: self
                .ink
                .iter()
                .map(|&b| if b { ink_level } else { paper_level })
                .collect(),
        }
    }
}

/// How the ink/paper threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threshold {
    /// Global Otsu threshold over the 256-bin histogram.
    #[default]
    Otsu,
    /// Pixels strictly darker than this value are ink.
    Fixed(u8),
}

/// Otsu's threshold: the `t` in `1..=255` maximizing the between-class
/// variance when pixels `< t` form the ink class. Returns `None` when the
/// histogram has a single populated bin.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best: Option<(u8, f64)> = None;
    for t in 1..256usize {
        w0 += hist[t - 1];
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Global Otsu binarization. A uniform image yields an all-background mask.
pub fn binarize(img: &GrayImage) -> Bitmap {
    binarize_with(img, Threshold::Otsu)
}

pub fn binarize_with(img: &GrayImage, threshold: Threshold) -> Bitmap {
    let t = match threshold {
        Threshold::Fixed(t) => Some(t),
        Threshold::Otsu => otsu_threshold(&img.histogram()),
    };
    let ink = match t {
        Some(t) => img.samples.iter().map(|&s| s < t).collect(),
        None => vec![false; img.samples.len()],
    };
    Bitmap {
        width: img.width,
        height: img.height,
        ink,
    }
}

/// OR-pools `factor`x`factor` blocks. Output dimensions are floored; the
/// remainder columns and rows of the source are dropped.
pub fn downsample(bm: &Bitmap, factor: usize) -> Result<Bitmap> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    if factor > bm.width.min(bm.height) {
        return Err(Error::EmptyResult(format!(
            "factor {factor} exceeds {}x{} bitmap",
            bm.width, bm.height
        )));
    }
    if factor == 1 {
        return Ok(bm.clone());
    }
    let (ow, oh) = (bm.width / factor, bm.height / factor);
    let mut out = Bitmap::new(ow, oh);
    for oy in 0..oh {
        for sy in oy * factor..(oy + 1) * factor {
            let src = bm.row(sy);
            let dst = out.row_mut(oy);
            for (ox, cell) in dst.iter_mut().enumerate() {
                if !*cell && src[ox * factor..(ox + 1) * factor].iter().any(|&b| b) {
                    *cell = true;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_otsu(samples: &[u8]) -> Option<u8> {
        // Direct evaluation of between-class variance for every cut.
        let mut best: Option<(u8, f64)> = None;
        for t in 1..=255u16 {
            let (a, b): (Vec<f64>, Vec<f64>) = {
                let a: Vec<f64> = samples.iter().filter(|&&s| (s as u16) < t).map(|&s| s as f64).collect();
                let b: Vec<f64> = samples.iter().filter(|&&s| (s as u16) >= t).map(|&s| s as f64).collect();
                (a, b)
            };
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let v = a.len() as f64 * b.len() as f64 * (ma - mb).powi(2);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t as u8, v));
            }
        }
        best.map(|(t, _)| t)
    }

    #[test]
    fn white_image_has_no_ink() {
        let bm = binarize(&GrayImage::filled(7, 5, 255));
        assert_eq!(bm.ink_count(), 0);
    }

    #[test]
    fn black_image_is_uniform_so_no_ink() {
        let bm = binarize(&GrayImage::filled(7, 5, 0));
        assert_eq!(bm.ink_count(), 0);
    }

    #[test]
    fn two_level_row_separates_exactly() {
        let mut samples = vec![20u8; 50];
        samples.extend(vec![230u8; 50]);
        let img = GrayImage::new(100, 1, samples.clone()).unwrap();
        let t = otsu_threshold(&img.histogram()).unwrap();
        assert_eq!(Some(t), brute_otsu(&samples));
        let bm = binarize(&img);
        assert_eq!(bm.ink_count(), 50);
        assert!((0..50).all(|x| bm.get(x, 0)));
        assert!((50..100).all(|x| !bm.get(x, 0)));
    }

    #[test]
    fn fixed_threshold_override() {
        let img = GrayImage::new(3, 1, vec![10, 100, 200]).unwrap();
        let bm = binarize_with(&img, Threshold::Fixed(150));
        assert_eq!(bm.pixels(), &[true, true, false]);
    }

    #[test]
    fn gray_image_rejects_bad_lengths() {
        assert!(GrayImage::new(3, 3, vec![0; 8]).is_err());
        assert!(GrayImage::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn downsample_examples() {
        let mut full = Bitmap::new(8, 8);
        full.pixels_mut().fill(true);
        let d = downsample(&full, 8).unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        assert!(d.get(0, 0));

        let mut one = Bitmap::new(8, 8);
        one.set(5, 6, true);
        assert!(downsample(&one, 8).unwrap().get(0, 0));

        let d = downsample(&Bitmap::new(100, 80), 8).unwrap();
        assert_eq!((d.width(), d.height()), (12, 10));
    }

    #[test]
    fn downsample_rejects_oversized_factor() {
        assert!(matches!(downsample(&Bitmap::new(5, 9), 6), Err(Error::EmptyResult(_))));
        assert!(matches!(downsample(&Bitmap::new(5, 9), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn crop_pads_outside_with_background() {
        let bm = Bitmap::from_ascii("##\n##");
        let c = bm.crop(Rect::new(-1, -1, 3, 3));
        assert_eq!(c.ink_count(), 4);
        assert!(!c.get(0, 0));
        assert!(c.get(2, 2));
    }

    fn arb_bitmap(max: usize) -> impl Strategy<Value = Bitmap> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |v| Bitmap::from_vec(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn binarize_recovers_rendered_bitmap(bm in arb_bitmap(24)) {
            let n = bm.ink_count();
            prop_assume!(n > 0 && n < bm.width() * bm.height());
            prop_assert_eq!(binarize(&bm.render(0, 255)), bm);
        }

        #[test]
        fn otsu_matches_direct_search(samples in proptest::collection::vec(any::<u8>(), 1..200)) {
            let img = GrayImage::new(samples.len(), 1, samples.clone()).unwrap();
            prop_assert_eq!(otsu_threshold(&img.histogram()), brute_otsu(&samples));
        }

        #[test]
        fn downsample_by_one_is_identity(bm in arb_bitmap(20)) {
            prop_assert_eq!(downsample(&bm, 1).unwrap(), bm);
        }

        #[test]
        fn downsample_is_block_or(bm in arb_bitmap(32), factor in 1usize..6) {
            prop_assume!(factor <= bm.width().min(bm.height()));
            let d = downsample(&bm, factor).unwrap();
            prop_assert_eq!(d.width(), bm.width() / factor);
            prop_assert_eq!(d.height(), bm.height() / factor);
            for oy in 0..d.height() {
                for ox in 0..d.width() {
                    let mut any = false;
                    for y in oy * factor..(oy + 1) * factor {
                        for x in ox * factor..(ox + 1) * factor {
                            any |= bm.get(x, y);
                        }
                    }
                    prop_assert_eq!(d.get(ox, oy), any);
                }
            }
        }
    }
}

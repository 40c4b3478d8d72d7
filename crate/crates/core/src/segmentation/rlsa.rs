//! Run-length smoothing: background runs no longer than a threshold that sit
//! between two ink pixels on the same line are filled.

use crate::raster::Bitmap;

fn smooth_line(line: &mut [bool], c: usize) {
    let mut last_ink: Option<usize> = None;
    for i in 0..line.len() {
        if line[i] {
            if let Some(prev) = last_ink {
                let gap = i - prev - 1;
                if gap > 0 && gap <= c {
                    line[prev + 1..i].fill(true);
                }
            }
            last_ink = Some(i);
        }
    }
}

/// Smooths every row. Leading and trailing runs are never filled.
pub fn rlsa_horizontal(bm: &Bitmap, c: usize) -> Bitmap {
    let mut out = bm.clone();
    if c == 0 {
        return out;
    }
    for y in 0..out.height() {
        smooth_line(out.row_mut(y), c);
    }
    out
}

/// Smooths every column.
pub fn rlsa_vertical(bm: &Bitmap, c: usize) -> Bitmap {
    let mut out = bm.clone();
    if c == 0 || bm.is_empty() {
        return out;
    }
    let (w, h) = (bm.width(), bm.height());
    // Track the last ink row per column so the pass stays row-major.
    let mut last_ink: Vec<Option<usize>> = vec![None; w];
    for y in 0..h {
        for (x, last) in last_ink.iter_mut().enumerate() {
            if bm.get(x, y) {
                if let Some(prev) = *last {
                    let gap = y - prev - 1;
                    if gap > 0 && gap <= c {
                        for fy in prev + 1..y {
                            out.set(x, fy, true);
                        }
                    }
                }
                *last = Some(y);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(bits: &[u8]) -> Bitmap {
        Bitmap::from_vec(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    /// Run-length oracle: decompose into (value, length) runs, fill interior
    /// background runs of length <= c, expand.
    fn oracle_line(line: &[bool], c: usize) -> Vec<bool> {
        let mut runs: Vec<(bool, usize)> = Vec::new();
        for &b in line {
            match runs.last_mut() {
                Some((v, n)) if *v == b => *n += 1,
                _ => runs.push((b, 1)),
            }
        }
        let last = runs.len().saturating_sub(1);
        runs.iter()
            .enumerate()
            .flat_map(|(i, &(v, n))| {
                let fill = !v && i > 0 && i < last && n <= c;
                std::iter::repeat_n(v || fill, n)
            })
            .collect()
    }

    #[test]
    fn fills_short_interior_run() {
        assert_eq!(rlsa_horizontal(&row(&[1, 0, 0, 1]), 2), row(&[1, 1, 1, 1]));
        assert_eq!(rlsa_horizontal(&row(&[1, 0, 0, 1]), 1), row(&[1, 0, 0, 1]));
        for c in 0..6 {
            assert_eq!(rlsa_horizontal(&row(&[0, 0, 1, 1]), c), row(&[0, 0, 1, 1]));
        }
    }

    #[test]
    fn vertical_column_and_blank() {
        let col = row(&[1, 0, 1]).transpose();
        assert_eq!(rlsa_vertical(&col, 1), row(&[1, 1, 1]).transpose());
        let blank = Bitmap::new(5, 4);
        assert_eq!(rlsa_vertical(&blank, 3), blank);
    }

    fn arb_bitmap() -> impl Strategy<Value = Bitmap> {
        (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.3), w * h)
                .prop_map(move |v| Bitmap::from_vec(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn horizontal_matches_oracle(bm in arb_bitmap(), c in 0usize..12) {
            let out = rlsa_horizontal(&bm, c);
            for y in 0..bm.height() {
                prop_assert_eq!(out.row(y).to_vec(), oracle_line(bm.row(y), c));
            }
        }

        #[test]
        fn vertical_is_transposed_horizontal(bm in arb_bitmap(), c in 0usize..12) {
            prop_assert_eq!(rlsa_vertical(&bm, c), rlsa_horizontal(&bm.transpose(), c).transpose());
        }

        #[test]
        fn monotone_and_idempotent(bm in arb_bitmap(), c in 0usize..12) {
            let once = rlsa_horizontal(&bm, c);
            for (a, b) in bm.pixels().iter().zip(once.pixels()) {
                prop_assert!(!a || *b);
            }
            prop_assert_eq!(rlsa_horizontal(&once, c), once.clone());
            let v = rlsa_vertical(&bm, c);
            prop_assert_eq!(rlsa_vertical(&v, c), v);
        }
    }
}

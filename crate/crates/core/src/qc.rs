//! Statistical quality control over a corpus of extracted layouts, and the
//! correction sidecar format.
//!
//! Report lines are `page_id kind subject detail`, `subject` being `-` when
//! absent. Corrections are one edit per line:
//!
//! ```text
//! <page_id> frame <x,y> <x,y> <x,y> <x,y>        # TL TR BR BL, scan coordinates
//! <page_id> rect <element_id> <x> <y> <w> <h>
//! <page_id> delete <element_id>                  # leaves only
//! <page_id> insert <parent_id> <category> <x> <y> <w> <h>
//! ```
//!
//! Element ids refer to the page as it stands when the line is applied, so a
//! `frame` line renumbers everything after it on the same page.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Quad, Rect};
use crate::order::{assign_reading_order, sibling_gaps, Category, LayoutElement, OrderPolicy, PageLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcThresholds {
    /// Pages with more elements than this are flagged.
    pub count_hi: usize,
    /// Pages with fewer elements than this are flagged.
    pub count_lo: usize,
    /// Sibling gaps wider than this (pixels) are flagged.
    pub gap_hi: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            count_hi: 118,
            count_lo: 88,
            gap_hi: 54.0,
        }
    }
}

impl QcThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.count_hi < self.count_lo {
            return Err(Error::InvalidArgument(format!(
                "count_hi {} is below count_lo {}",
                self.count_hi, self.count_lo
            )));
        }
        if !(self.gap_hi > 0.0) {
            return Err(Error::InvalidArgument(format!("gap_hi {} must be positive", self.gap_hi)));
        }
        Ok(())
    }
}

impl fmt::Display for QcThresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "count_hi={} count_lo={} gap_hi={}",
            self.count_hi, self.count_lo, self.gap_hi
        )
    }
}

pub const MIN_CORPUS_PAGES: usize = 20;

/// The smallest value whose 1-based rank is at least `ceil(percent * n / 100)`.
pub fn nearest_rank<T: Copy + PartialOrd>(sorted: &[T], percent: u32) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).clamp(1, n);
    Some(sorted[rank - 1])
}

/// Per-page element counts and all row-sibling gaps of the segmented pages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub counts: Vec<usize>,
    pub gaps: Vec<f64>,
}

impl CorpusStats {
    pub fn collect(layouts: &[PageLayout]) -> Self {
        let mut stats = Self::default();
        for l in layouts.iter().filter(|l| l.meta.page_type.is_segmented()) {
            stats.counts.push(l.elements.len());
            stats.gaps.extend(sibling_gaps(l).into_iter().map(|g| g.1));
        }
        stats
    }
}

/// Count band from the 5th and 95th percentiles, gap limit from the 99th.
pub fn compute_thresholds(stats: &CorpusStats) -> Result<QcThresholds> {
    if stats.counts.len() < MIN_CORPUS_PAGES {
        return Err(Error::InsufficientCorpus(format!(
            "{} pages, need at least {MIN_CORPUS_PAGES}",
            stats.counts.len()
        )));
    }
    let mut counts = stats.counts.clone();
    counts.sort_unstable();
    let mut gaps = stats.gaps.clone();
    gaps.sort_by(f64::total_cmp);
    let gap_hi = nearest_rank(&gaps, 99)
        .filter(|&g| g > 0.0)
        .ok_or_else(|| Error::InsufficientCorpus("no positive sibling gaps".into()))?;
    Ok(QcThresholds {
        count_hi: nearest_rank(&counts, 95).expect("non-empty"),
        count_lo: nearest_rank(&counts, 5).expect("non-empty"),
        gap_hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagKind {
    PageFrameSuspect,
    GapSuspect,
    ManualOther,
}

impl fmt::Display for FlagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagKind::PageFrameSuspect => "page_frame_suspect",
            FlagKind::GapSuspect => "gap_suspect",
            FlagKind::ManualOther => "manual_other",
        })
    }
}

impl FromStr for FlagKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "page_frame_suspect" => Ok(FlagKind::PageFrameSuspect),
            "gap_suspect" => Ok(FlagKind::GapSuspect),
            "manual_other" => Ok(FlagKind::ManualOther),
            _ => Err(Error::InvalidArgument(format!("unknown flag kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcFlag {
    pub page_id: u64,
    pub kind: FlagKind,
    /// Required for gap flags: the block left of the gap.
    pub subject: Option<u32>,
    /// Element count or gap width.
    pub detail: f64,
}

impl fmt::Display for QcFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Some(s) => write!(f, "{} {} {s} {}", self.page_id, self.kind, self.detail),
            None => write!(f, "{} {} - {}", self.page_id, self.kind, self.detail),
        }
    }
}

/// Flags pages whose element count leaves the band and every row-sibling gap
/// wider than `gap_hi`. Output is sorted by page id, count flags first.
pub fn flag_corpus(layouts: &[PageLayout], t: &QcThresholds) -> Vec<QcFlag> {
    let mut pages: Vec<&PageLayout> = layouts.iter().filter(|l| l.meta.page_type.is_segmented()).collect();
    pages.sort_by_key(|l| l.meta.page_id);
    let mut flags = Vec::new();
    for l in pages {
        let n = l.elements.len();
        if n > t.count_hi || n < t.count_lo {
            flags.push(QcFlag {
                page_id: l.meta.page_id,
                kind: FlagKind::PageFrameSuspect,
                subject: None,
                detail: n as f64,
            });
        }
        for (left, gap) in sibling_gaps(l) {
            if gap > t.gap_hi {
                flags.push(QcFlag {
                    page_id: l.meta.page_id,
                    kind: FlagKind::GapSuspect,
                    subject: Some(left),
                    detail: gap,
                });
            }
        }
    }
    flags
}

/// Where the applied thresholds came from, for the report header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// The shipped defaults.
    Defaults,
    /// Percentiles of the corpus being checked.
    #[default]
    Corpus,
    /// Values given in the config.
    Config,
}

impl fmt::Display for ThresholdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdSource::Defaults => "defaults",
            ThresholdSource::Corpus => "corpus",
            ThresholdSource::Config => "config",
        })
    }
}

/// The report: a header recording both the shipped defaults and the applied
/// thresholds, then one line per flag.
pub fn render_report(flags: &[QcFlag], applied: &QcThresholds, source: ThresholdSource) -> String {
    let mut out = format!(
        "# defaults {}\n# applied {} source={source}\n# page_id kind subject detail\n",
        QcThresholds::default(),
        applied
    );
    for f in flags {
        out.push_str(&format!("{f}\n"));
    }
    out
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated fields with their 1-based columns, comments removed.
fn fields(line: &str) -> Vec<(usize, &str)> {
    let body = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &body[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &body[s..]));
    }
    out
}

fn parse_field<T: FromStr>(line: usize, (col, text): (usize, &str), what: &str) -> Result<T> {
    text.parse()
        .map_err(|_| parse_error(line, col, format!("expected {what}, found {text:?}")))
}

pub fn parse_report(text: &str) -> Result<Vec<QcFlag>> {
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f = fields(raw);
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(parse_error(line, 1, format!("expected 4 fields, found {}", f.len())));
        }
        let subject = match f[2].1 {
            "-" => None,
            _ => Some(parse_field(line, f[2], "element id")?),
        };
        flags.push(QcFlag {
            page_id: parse_field(line, f[0], "page id")?,
            kind: parse_field(line, f[1], "flag kind")?,
            subject,
            detail: parse_field(line, f[3], "number")?,
        });
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    Frame(Quad),
    Rect { element: u32, rect: Rect },
    Delete { element: u32 },
    Insert { parent: u32, category: Category, rect: Rect },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub page_id: u64,
    pub edit: Edit,
    /// Source line, for error messages.
    pub line: usize,
}

fn parse_rect(line: usize, f: &[(usize, &str)]) -> Result<Rect> {
    let v: Vec<i32> = f
        .iter()
        .map(|&field| parse_field(line, field, "integer"))
        .collect::<Result<_>>()?;
    Rect::try_new(v[0], v[1], v[2], v[3]).map_err(|e| parse_error(line, f[0].0, e.to_string()))
}

fn parse_point(line: usize, (col, text): (usize, &str)) -> Result<Point> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| parse_error(line, col, format!("expected x,y, found {text:?}")))?;
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| parse_error(line, col, format!("bad coordinate in {text:?}")))
    };
    Ok(Point::new(num(x)?, num(y)?))
}

pub fn parse_corrections(text: &str) -> Result<Vec<Correction>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let f = fields(raw);
        if f.is_empty() {
            continue;
        }
        if f.len() < 2 {
            return Err(parse_error(line, f[0].0, "missing action"));
        }
        let page_id = parse_field(line, f[0], "page id")?;
        let expect = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(parse_error(
                    line,
                    f[1].0,
                    format!("{} takes {} fields, found {}", f[1].1, n - 2, f.len() - 2),
                ))
            }
        };
        let edit = match f[1].1 {
            "frame" => {
                expect(6)?;
                let pts: Vec<Point> = f[2..].iter().map(|&p| parse_point(line, p)).collect::<Result<_>>()?;
                let quad = Quad::new([pts[0], pts[1], pts[2], pts[3]])
                    .map_err(|e| parse_error(line, f[2].0, e.to_string()))?;
                Edit::Frame(quad)
            }
            "rect" => {
                expect(7)?;
                Edit::Rect {
                    element: parse_field(line, f[2], "element id")?,
                    rect: parse_rect(line, &f[3..7])?,
                }
            }
            "delete" => {
                expect(3)?;
                Edit::Delete {
                    element: parse_field(line, f[2], "element id")?,
                }
            }
            "insert" => {
                expect(8)?;
                Edit::Insert {
                    parent: parse_field(line, f[2], "element id")?,
                    category: parse_field(line, f[3], "category")?,
                    rect: parse_rect(line, &f[4..8])?,
                }
            }
            other => return Err(parse_error(line, f[1].0, format!("unknown action {other:?}"))),
        };
        out.push(Correction { page_id, edit, line });
    }
    Ok(out)
}

fn bad(c: &Correction, message: impl fmt::Display) -> Error {
    Error::BadCorrection(format!("line {} (page {}): {message}", c.line, c.page_id))
}

/// Applies corrections in file order. A frame correction replaces the page
/// with `reextract(page, quad)`; element edits patch the page, after which
/// ids are compacted and reading order reassigned. Touched pages are marked
/// corrected.
pub fn apply_corrections(
    mut layouts: Vec<PageLayout>,
    corrections: &[Correction],
    policy: &OrderPolicy,
    reextract: &mut dyn FnMut(&PageLayout, Quad) -> Result<PageLayout>,
) -> Result<Vec<PageLayout>> {
    let index: BTreeMap<u64, usize> = layouts.iter().enumerate().map(|(i, l)| (l.meta.page_id, i)).collect();
    let mut by_page: BTreeMap<usize, Vec<&Correction>> = BTreeMap::new();
    for c in corrections {
        let &i = index.get(&c.page_id).ok_or_else(|| bad(c, "no such page"))?;
        if !layouts[i].meta.page_type.is_segmented() {
            return Err(bad(c, "page type carries no layout"));
        }
        by_page.entry(i).or_default().push(c);
    }
    for (i, edits) in by_page {
        let mut page = layouts[i].clone();
        let mut dirty = false;
        for c in edits {
            match &c.edit {
                Edit::Frame(quad) => {
                    if dirty {
                        page = finish(page, policy).map_err(|e| bad(c, e))?;
                        dirty = false;
                    }
                    page = reextract(&page, *quad).map_err(|e| bad(c, e))?;
                }
                edit => {
                    patch(&mut page, edit).map_err(|m| bad(c, m))?;
                    dirty = true;
                }
            }
        }
        if dirty {
            let id = page.meta.page_id;
            page = finish(page, policy).map_err(|e| Error::BadCorrection(format!("page {id}: {e}")))?;
        }
        page.corrected = true;
        layouts[i] = page;
    }
    Ok(layouts)
}

fn finish(mut page: PageLayout, policy: &OrderPolicy) -> Result<PageLayout> {
    page.compact();
    let gap_break = policy.gap_break(page.meta.page_type);
    let page = assign_reading_order(page, gap_break);
    page.check()?;
    Ok(page)
}

fn patch(page: &mut PageLayout, edit: &Edit) -> std::result::Result<(), String> {
    let find = |page: &PageLayout, id: u32| page.elements.iter().position(|e| e.id == id);
    match *edit {
        Edit::Frame(_) => unreachable!("frame edits re-extract"),
        Edit::Rect { element, rect } => {
            let i = find(page, element).ok_or(format!("no element {element}"))?;
            if page.elements[i].category == Category::PageFrame {
                return Err("use a frame correction for the page frame".into());
            }
            page.elements[i].rect = rect;
        }
        Edit::Delete { element } => {
            let i = find(page, element).ok_or(format!("no element {element}"))?;
            if page.elements.iter().any(|e| e.parent == Some(element)) {
                return Err(format!("element {element} has children"));
            }
            page.elements.remove(i);
        }
        Edit::Insert { parent, category, rect } => {
            let p = find(page, parent).ok_or(format!("no parent {parent}"))?;
            if !category.allowed_parents().contains(&page.elements[p].category) {
                return Err(format!("{category} cannot sit under {}", page.elements[p].category));
            }
            let id = page.elements.iter().map(|e| e.id + 1).max().unwrap_or(0);
            // Ordered last for now; reading order is reassigned afterwards.
            let reading_order = page.elements.iter().filter(|e| e.parent == Some(parent)).count() as u32;
            page.elements.push(LayoutElement {
                id,
                category,
                rect,
                quad: None,
                parent: Some(parent),
                reading_order,
            });
        }
    }
    Ok(())
}

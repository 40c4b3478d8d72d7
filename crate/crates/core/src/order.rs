//! The per-page element tree and its reading order.
//!
//! All element rects live in rectified frame space: the page frame maps to
//! [`Quad::rectified_rect`] and every descendant is positioned inside it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quad, Rect};

/// Pixels a child may stick out of its parent before assembly rejects it.
pub const HIERARCHY_TOLERANCE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    PageFrame,
    Row,
    TitleRegion,
    TextRegion,
    Title,
    Subtitle,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::PageFrame,
        Category::Row,
        Category::TitleRegion,
        Category::TextRegion,
        Category::Title,
        Category::Subtitle,
        Category::Other,
    ];

    /// Categories allowed as this one's parent; empty for the root.
    pub fn allowed_parents(self) -> &'static [Category] {
        match self {
            Category::PageFrame => &[],
            Category::Row => &[Category::PageFrame],
            Category::TitleRegion | Category::TextRegion | Category::Other => &[Category::Row],
            Category::Title | Category::Subtitle => &[Category::TitleRegion],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::PageFrame => "Page Frame",
            Category::Row => "Row",
            Category::TitleRegion => "Title Region",
            Category::TextRegion => "Text Region",
            Category::Title => "Title",
            Category::Subtitle => "Subtitle",
            Category::Other => "Other",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Category::PageFrame => "page_frame",
            Category::Row => "row",
            Category::TitleRegion => "title_region",
            Category::TextRegion => "text_region",
            Category::Title => "title",
            Category::Subtitle => "subtitle",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageType {
    Main,
    Advertisement,
    Index,
    Other,
}

impl PageType {
    pub const ALL: [PageType; 4] = [PageType::Main, PageType::Advertisement, PageType::Index, PageType::Other];

    /// Only these page types carry layout annotations.
    pub fn is_segmented(self) -> bool {
        matches!(self, PageType::Main | PageType::Index)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PageType::Main => "main",
            PageType::Advertisement => "advertisement",
            PageType::Index => "index",
            PageType::Other => "other",
        }
    }
}

impl fmt::Display for PageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PageType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PageType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown page type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub id: u32,
    pub category: Category,
    pub rect: Rect,
    /// Set on the page frame only, in scan coordinates.
    pub quad: Option<Quad>,
    pub parent: Option<u32>,
    pub reading_order: u32,
}

/// Identity of one scan, independent of its annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageMeta {
    pub page_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub page_type: PageType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageLayout {
    pub meta: PageMeta,
    pub elements: Vec<LayoutElement>,
    /// Set once manual corrections have touched the page.
    pub corrected: bool,
}

impl PageLayout {
    pub fn unsegmented(meta: PageMeta) -> Self {
        Self {
            meta,
            elements: Vec::new(),
            corrected: false,
        }
    }

    pub fn element(&self, id: u32) -> Option<&LayoutElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn page_frame(&self) -> Option<&LayoutElement> {
        self.elements.iter().find(|e| e.category == Category::PageFrame)
    }

    /// Child ids per parent, each list in reading order.
    pub fn children(&self) -> BTreeMap<Option<u32>, Vec<u32>> {
        let mut map: BTreeMap<Option<u32>, Vec<&LayoutElement>> = BTreeMap::new();
        for e in &self.elements {
            map.entry(e.parent).or_default().push(e);
        }
        map.into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|e| (e.reading_order, e.id));
                (k, v.into_iter().map(|e| e.id).collect())
            })
            .collect()
    }

    /// Element ids in depth-first reading order.
    pub fn reading_sequence(&self) -> Vec<u32> {
        let children = self.children();
        let mut out = Vec::with_capacity(self.elements.len());
        let mut stack: Vec<u32> = children.get(&None).into_iter().flatten().rev().copied().collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some(kids) = children.get(&Some(id)) {
                stack.extend(kids.iter().rev());
            }
        }
        out
    }

    /// Removes `roots` and all their descendants, then renumbers the
    /// survivors densely and closes gaps in sibling reading orders.
    pub fn remove_subtrees(&mut self, roots: &[u32]) {
        let children = self.children();
        let mut doomed: Vec<u32> = roots.to_vec();
        let mut i = 0;
        while i < doomed.len() {
            if let Some(kids) = children.get(&Some(doomed[i])) {
                doomed.extend(kids);
            }
            i += 1;
        }
        self.elements.retain(|e| !doomed.contains(&e.id));
        self.compact();
    }

    /// Renumbers ids to `0..n` in id order and re-ranks each sibling group's
    /// reading orders to `0..k`, preserving relative order.
    pub fn compact(&mut self) {
        self.elements.sort_by_key(|e| e.id);
        let remap: BTreeMap<u32, u32> = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id, i as u32))
            .collect();
        for e in &mut self.elements {
            e.id = remap[&e.id];
            e.parent = e.parent.map(|p| remap[&p]);
        }
        for kids in self.children().into_values() {
            for (rank, id) in kids.into_iter().enumerate() {
                self.elements[id as usize].reading_order = rank as u32;
            }
        }
    }

    /// Checks the tree invariants: one root page frame (when there are any
    /// elements), resolvable acyclic parents of the right category, children
    /// inside their parent, and sibling orders forming `0..n`.
    pub fn check(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Ok(());
        }
        let by_id: BTreeMap<u32, &LayoutElement> = self.elements.iter().map(|e| (e.id, e)).collect();
        if by_id.len() != self.elements.len() {
            return Err(Error::HierarchyViolation("duplicate element ids".into()));
        }
        let frames: Vec<_> = self.elements.iter().filter(|e| e.category == Category::PageFrame).collect();
        if frames.len() != 1 || frames[0].parent.is_some() {
            return Err(Error::HierarchyViolation(format!(
                "expected one root page frame, found {}",
                frames.len()
            )));
        }
        for e in &self.elements {
            let Some(pid) = e.parent else {
                if e.category != Category::PageFrame {
                    return Err(Error::HierarchyViolation(format!("element {} has no parent", e.id)));
                }
                continue;
            };
            let parent = by_id
                .get(&pid)
                .ok_or_else(|| Error::HierarchyViolation(format!("element {} has dangling parent {pid}", e.id)))?;
            if !e.category.allowed_parents().contains(&parent.category) {
                return Err(Error::HierarchyViolation(format!(
                    "{} {} cannot sit under {} {}",
                    e.category, e.id, parent.category, parent.id
                )));
            }
            if !parent.rect.contains_rect(&e.rect, HIERARCHY_TOLERANCE) {
                return Err(Error::HierarchyViolation(format!(
                    "{} {} at {:?} lies outside parent {} at {:?}",
                    e.category, e.id, e.rect, pid, parent.rect
                )));
            }
        }
        // Categories strictly descend, so a valid parent category rules out cycles.
        for (parent, kids) in self.children() {
            let mut orders: Vec<u32> = kids.iter().map(|id| by_id[id].reading_order).collect();
            orders.sort_unstable();
            if orders.iter().enumerate().any(|(i, &o)| o != i as u32) {
                return Err(Error::HierarchyViolation(format!(
                    "children of {parent:?} have reading orders {orders:?}"
                )));
            }
        }
        Ok(())
    }
}

/// A block inside a row, with the title/subtitle split for title regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBlock {
    pub category: Category,
    pub rect: Rect,
    /// Title and subtitle parts; empty for other categories.
    pub parts: Vec<(Category, Rect)>,
}

impl RegionBlock {
    pub fn text(rect: Rect) -> Self {
        Self {
            category: Category::TextRegion,
            rect,
            parts: Vec::new(),
        }
    }

    pub fn title(rect: Rect, title: Rect, subtitle: Option<Rect>) -> Self {
        let mut parts = vec![(Category::Title, title)];
        parts.extend(subtitle.map(|s| (Category::Subtitle, s)));
        Self {
            category: Category::TitleRegion,
            rect,
            parts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    pub rect: Rect,
    pub regions: Vec<RegionBlock>,
}

/// Builds the element tree. Ids are assigned depth-first in input order;
/// reading orders follow input order until [`assign_reading_order`] runs.
pub fn assemble(meta: PageMeta, frame: Quad, rows: &[RowBlock]) -> Result<PageLayout> {
    let mut elements = Vec::new();
    let mut push = |category, rect, quad, parent, reading_order: usize| {
        let id = elements.len() as u32;
        elements.push(LayoutElement {
            id,
            category,
            rect,
            quad,
            parent,
            reading_order: reading_order as u32,
        });
        id
    };
    let frame_id = push(Category::PageFrame, frame.rectified_rect(), Some(frame), None, 0);
    for (ri, row) in rows.iter().enumerate() {
        let row_id = push(Category::Row, row.rect, None, Some(frame_id), ri);
        for (gi, region) in row.regions.iter().enumerate() {
            let region_id = push(region.category, region.rect, None, Some(row_id), gi);
            for (pi, &(category, rect)) in region.parts.iter().enumerate() {
                push(category, rect, None, Some(region_id), pi);
            }
        }
    }
    let layout = PageLayout {
        meta,
        elements,
        corrected: false,
    };
    layout.check()?;
    Ok(layout)
}

/// Gap-break settings per page type. Unset means plain right-to-left order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderPolicy {
    pub main_gap_break: Option<f64>,
    /// Left unset, extraction fills this with the 99th percentile of the
    /// index pages' own sibling gaps.
    pub index_gap_break: Option<f64>,
}

impl OrderPolicy {
    pub fn gap_break(&self, page_type: PageType) -> Option<f64> {
        match page_type {
            PageType::Main => self.main_gap_break,
            PageType::Index => self.index_gap_break,
            _ => None,
        }
    }
}

/// Reorders siblings: rows top to bottom; blocks in a row right to left,
/// split into segments at gaps wider than `gap_break`, segments right to
/// left; title before subtitle.
pub fn assign_reading_order(mut layout: PageLayout, gap_break: Option<f64>) -> PageLayout {
    let mut groups: BTreeMap<Option<u32>, Vec<usize>> = BTreeMap::new();
    for (i, e) in layout.elements.iter().enumerate() {
        groups.entry(e.parent).or_default().push(i);
    }
    let parent_category: BTreeMap<u32, Category> = layout.elements.iter().map(|e| (e.id, e.category)).collect();
    for (parent, mut idx) in groups {
        let els = &layout.elements;
        match parent.map(|p| parent_category.get(&p).copied()) {
            Some(Some(Category::PageFrame)) | None => {
                idx.sort_by_key(|&i| (els[i].rect.y, els[i].rect.x, els[i].id));
            }
            Some(Some(Category::Row)) => {
                idx = row_order(els, idx, gap_break);
            }
            _ => {
                idx.sort_by_key(|&i| {
                    let rank = if els[i].category == Category::Subtitle { 1 } else { 0 };
                    (rank, -els[i].rect.right(), els[i].rect.y, els[i].id)
                });
            }
        }
        for (order, i) in idx.into_iter().enumerate() {
            layout.elements[i].reading_order = order as u32;
        }
    }
    layout
}

fn right_to_left_key(e: &LayoutElement) -> (i32, i32, u32) {
    (-e.rect.right(), e.rect.y, e.id)
}

fn row_order(els: &[LayoutElement], mut idx: Vec<usize>, gap_break: Option<f64>) -> Vec<usize> {
    idx.sort_by_key(|&i| right_to_left_key(&els[i]));
    let Some(limit) = gap_break else {
        return idx;
    };
    let mut segments: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match segments.last_mut() {
            Some(seg) if f64::from(els[*seg.last().unwrap()].rect.x - els[i].rect.right()) <= limit => seg.push(i),
            _ => segments.push(vec![i]),
        }
    }
    segments.sort_by_key(|seg| seg.iter().map(|&i| right_to_left_key(&els[i])).min());
    segments.into_iter().flatten().collect()
}

/// Horizontal gaps between right-to-left neighbours among a row's children,
/// with the id of the block on the left of each gap.
pub fn sibling_gaps(layout: &PageLayout) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for (parent, kids) in layout.children() {
        let Some(pid) = parent else { continue };
        if layout.element(pid).map(|p| p.category) != Some(Category::Row) {
            continue;
        }
        let mut blocks: Vec<&LayoutElement> = kids.iter().filter_map(|&id| layout.element(id)).collect();
        blocks.sort_by_key(|e| right_to_left_key(e));
        for pair in blocks.windows(2) {
            let gap = (pair[0].rect.x - pair[1].rect.right()).max(0);
            out.push((pair[1].id, gap as f64));
        }
    }
    out
}

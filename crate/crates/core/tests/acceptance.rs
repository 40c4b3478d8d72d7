//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tategaki::annotations::{split_dataset, to_coco, CocoDataset};
use tategaki::classify::{classify_region, HeuristicClassifier, RegionClass};
use tategaki::eval::{average_precision, detections_from_dataset, iou_thresholds, layout_recall, map_50_95, Detection, GroundTruth};
use tategaki::geometry::Rect;
use tategaki::order::{assemble, assign_reading_order, Category, PageLayout, PageMeta, PageType, RegionBlock, RowBlock};
use tategaki::pipeline::{order_index_pages, Extractor, PipelineConfig};
use tategaki::qc::{compute_thresholds, flag_corpus, CorpusStats, FlagKind, QcThresholds};
use tategaki::raster::{binarize, Bitmap};
use tategaki::segmentation::{detect_page_frame, label_components, rlsa_horizontal, rlsa_vertical, Connectivity, SegmentationParams};
use tategaki::synth::{generate_corpus, layout_of, render_page, CorpusSpec, NoisePreset, PageSpec, PageStyle, SynthCorpus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("rlsa and ccl match brute-force oracles", oracle_equivalence),
        ("synthetic end-to-end element recovery", end_to_end_accuracy),
        ("page frame corners within 12 px", frame_rectification),
        ("reading order matches construction", reading_order),
        ("qc flags recover injected defects", qc_recall),
        ("heuristic classifier accuracy", classifier_accuracy),
        ("coco canonical round trip and split sizes", format_fidelity),
        ("map sanity", metric_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {name}: {} ({}; {:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---- 1 ----

fn random_bitmap(rng: &mut ChaCha8Rng) -> Bitmap {
    let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
    let density = rng.random_range(0.05..0.7);
    Bitmap::from_vec(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect()).unwrap()
}

/// Fills a background pixel when the nearest ink on both sides along the
/// line leaves a run of at most `c`.
fn rlsa_oracle(bm: &Bitmap, c: usize, horizontal: bool) -> Bitmap {
    let (w, h) = (bm.width(), bm.height());
    let (along, across) = if horizontal { (w, h) } else { (h, w) };
    let at = |i: usize, j: usize| if horizontal { bm.get(i, j) } else { bm.get(j, i) };
    let mut out = bm.clone();
    for j in 0..across {
        for i in 0..along {
            if at(i, j) {
                continue;
            }
            let left = (0..i).rev().find(|&k| at(k, j));
            let right = (i + 1..along).find(|&k| at(k, j));
            if let (Some(l), Some(r)) = (left, right) {
                if r - l - 1 <= c {
                    if horizontal {
                        out.set(i, j, true);
                    } else {
                        out.set(j, i, true);
                    }
                }
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Union-find over neighbouring ink pairs, relabelled in scanline order of
/// each set's first pixel.
fn ccl_oracle(bm: &Bitmap, eight: bool) -> Vec<u32> {
    let (w, h) = (bm.width(), bm.height());
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            if !bm.get(x, y) {
                continue;
            }
            let mut neighbours = vec![(x + 1, y), (x, y + 1)];
            if eight {
                neighbours.push((x + 1, y + 1));
                if x > 0 {
                    neighbours.push((x - 1, y + 1));
                }
            }
            for (nx, ny) in neighbours {
                if nx < w && ny < h && bm.get(nx, ny) {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, ny * w + nx));
                    parent[a] = b;
                }
            }
        }
    }
    let mut names = std::collections::HashMap::new();
    (0..w * h)
        .map(|i| {
            if !bm.pixels()[i] {
                return 0;
            }
            let root = find(&mut parent, i);
            let next = names.len() as u32 + 1;
            *names.entry(root).or_insert(next)
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let bm = random_bitmap(&mut rng);
        let c = rng.random_range(0..=12);
        if rlsa_horizontal(&bm, c) != rlsa_oracle(&bm, c, true) {
            mismatches.push(format!("case {case} rlsa horizontal"));
        }
        if rlsa_vertical(&bm, c) != rlsa_oracle(&bm, c, false) {
            mismatches.push(format!("case {case} rlsa vertical"));
        }
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let got = label_components(&bm, conn);
            let want = ccl_oracle(&bm, eight);
            let count = want.iter().copied().max().unwrap_or(0) as usize;
            let sizes_ok = got.components.len() == count
                && got.components.iter().all(|c| {
                    want.iter().filter(|&&l| l == c.label + 1).count() == c.pixel_count
                });
            if got.labels != want || !sizes_ok {
                mismatches.push(format!("case {case} ccl {conn:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "1000 bitmaps, {} mismatches{}, {:.2}s",
            mismatches.len(),
            mismatches.first().map(|m| format!(" first {m}")).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---- 2, 4 ----

fn meta(spec: &PageSpec) -> PageMeta {
    PageMeta {
        page_id: spec.page_id,
        file_name: spec.file_name(),
        width: spec.width,
        height: spec.height,
        page_type: spec.page_type,
    }
}

/// Renders and extracts every page on this thread, timing only extraction.
fn extract_all(corpus: &SynthCorpus) -> (Vec<Option<PageLayout>>, Duration) {
    let ex = Extractor::new(PipelineConfig::default()).unwrap();
    let mut elapsed = Duration::ZERO;
    let found = corpus
        .pages
        .iter()
        .map(|p| {
            let img = render_page(&p.spec).unwrap();
            let start = Instant::now();
            let r = ex.extract(&img, meta(&p.spec));
            elapsed += start.elapsed();
            r.ok()
        })
        .collect();
    (found, elapsed)
}

fn recovery(corpus: &SynthCorpus, found: &[Option<PageLayout>]) -> (usize, usize) {
    corpus.pages.iter().zip(found).fold((0, 0), |(h, t), (p, f)| {
        let (hit, total) = match f {
            Some(f) => layout_recall(&p.truth, f, 0.9),
            None => (0, p.truth.elements.len()),
        };
        (h + hit, t + total)
    })
}

fn corpus(noise: NoisePreset, max_rotation: f64, n: usize, seed: u64) -> SynthCorpus {
    let spec = CorpusSpec {
        noise,
        max_rotation,
        ..CorpusSpec::default()
    };
    generate_corpus(n, &spec, 0.0, seed).unwrap()
}

static CLEAN: std::sync::OnceLock<(SynthCorpus, Vec<Option<PageLayout>>, Duration)> = std::sync::OnceLock::new();

fn clean_run() -> &'static (SynthCorpus, Vec<Option<PageLayout>>, Duration) {
    CLEAN.get_or_init(|| {
        let c = corpus(NoisePreset::Clean, 2.0, 100, 0xE2E);
        let (found, t) = extract_all(&c);
        (c, found, t)
    })
}

fn end_to_end_accuracy() -> Outcome {
    let (clean, clean_found, clean_time) = clean_run();
    let hard = corpus(NoisePreset::Hard, 2.0, 100, 0xA4D);
    let (hard_found, hard_time) = extract_all(&hard);
    let (ch, ct) = recovery(clean, clean_found);
    let (hh, ht) = recovery(&hard, &hard_found);
    let (cr, hr) = (ch as f64 / ct as f64, hh as f64 / ht as f64);
    let limit = Duration::from_secs(120);
    outcome(
        cr >= 0.996 && hr >= 0.97 && *clean_time < limit && hard_time < limit,
        format!(
            "clean {ch}/{ct} = {:.4} in {:.1}s, hard {hh}/{ht} = {:.4} in {:.1}s",
            cr,
            clean_time.as_secs_f64(),
            hr,
            hard_time.as_secs_f64()
        ),
    )
}

// ---- 3 ----

fn frame_rectification() -> Outcome {
    let c = corpus(NoisePreset::Default, 3.0, 100, 0xF4A);
    let params = SegmentationParams::default();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for p in &c.pages {
        let bm = binarize(&render_page(&p.spec).unwrap());
        let Ok(quad) = detect_page_frame(&bm, &params) else {
            continue;
        };
        let err = quad
            .vertices()
            .iter()
            .zip(p.spec.frame_quad().vertices())
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max);
        worst = worst.max(err);
        good += usize::from(err <= 12.0);
    }
    outcome(good >= 95, format!("{good}/100 pages within 12 px, worst corner {worst:.2} px"))
}

// ---- 4 ----

fn scrambled(truth: &PageLayout) -> PageLayout {
    let mut l = truth.clone();
    let n = l.elements.len() as u32;
    for e in &mut l.elements {
        e.reading_order = n - e.reading_order;
    }
    l
}

fn sequence(l: &PageLayout) -> Vec<(Category, Rect)> {
    l.reading_sequence().iter().map(|&id| {
        let e = l.element(id).unwrap();
        (e.category, e.rect)
    }).collect()
}

fn same_sequence(truth: &PageLayout, found: &PageLayout) -> bool {
    let (a, b) = (sequence(truth), sequence(found));
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1.iou(&y.1) >= 0.9)
}

/// A right group of four entries, a header, then a left group of three.
fn header_row_case() -> bool {
    let frame = Rect::new(0, 0, 1000, 400);
    let mut regions = Vec::new();
    let mut x = 890;
    for (n, w) in [(4, 40), (1, 60), (3, 40)] {
        for _ in 0..n {
            let mut r = RegionBlock::text(Rect::new(x - w, 20, w, 300));
            if w == 60 {
                r.category = Category::Other;
            }
            regions.push(r);
            x -= w + 10;
        }
        x -= 50;
    }
    let rect = regions.iter().map(|r| r.rect).reduce(|a, b| a.union(&b)).unwrap();
    let meta = PageMeta {
        page_id: 0,
        file_name: "index.png".into(),
        width: 1000,
        height: 400,
        page_type: PageType::Index,
    };
    let quad = tategaki::geometry::Quad::from_rect(frame);
    let l = assign_reading_order(assemble(meta, quad, &[RowBlock { rect, regions }]).unwrap(), Some(40.0));
    let kinds: Vec<Category> = l.reading_sequence().iter().skip(2).map(|&id| l.element(id).unwrap().category).collect();
    let mut want = vec![Category::TextRegion; 8];
    want[4] = Category::Other;
    kinds == want
}

fn reading_order() -> Outcome {
    let (clean, found, _) = clean_run();
    let rebuilt = clean
        .pages
        .iter()
        .filter(|p| assign_reading_order(scrambled(&p.truth), None) == p.truth)
        .count();
    let extracted = clean
        .pages
        .iter()
        .zip(found)
        .filter(|(p, f)| f.as_ref().is_some_and(|f| same_sequence(&p.truth, f)))
        .count();
    let style = PageStyle::default();
    let index_truth: Vec<PageLayout> = (0..20)
        .map(|i| layout_of(&PageSpec::random_index(i, &style, 0x1D0 + i, 60)).unwrap())
        .collect();
    let mut index = index_truth.iter().map(scrambled).collect::<Vec<_>>();
    let gap_break = order_index_pages(&mut index, &Default::default());
    let index_ok = index == index_truth;
    let header = header_row_case();
    outcome(
        rebuilt == 100 && extracted == 100 && index_ok && header,
        format!(
            "reordered truth {rebuilt}/100, extracted {extracted}/100, index pages {} (gap break {:.0}), header row {}",
            if index_ok { "exact" } else { "differ" },
            gap_break.unwrap_or(f64::NAN),
            if header { "exact" } else { "differs" }
        ),
    )
}

// ---- 5 ----

fn qc_recall() -> Outcome {
    let c = generate_corpus(1000, &CorpusSpec::default(), 0.01, 0x0C5).unwrap();
    let observed: Vec<PageLayout> = c.pages.iter().map(|p| p.observed.clone()).collect();
    let t = compute_thresholds(&CorpusStats::collect(&observed)).unwrap();
    let flags = flag_corpus(&observed, &t);
    let flagged: BTreeSet<u64> = flags.iter().map(|f| f.page_id).collect();
    let defective: BTreeSet<u64> = c.defects.iter().map(|d| d.page_id).collect();
    let hit = defective.intersection(&flagged).count();
    let recall = hit as f64 / defective.len() as f64;

    // Paper-density corpus: about a hundred elements per page, with tails on
    // both sides of the default band.
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA4D);
    let dense: Vec<PageLayout> = (0..300)
        .map(|i| {
            let style = PageStyle {
                groups_per_row: match rng.random_range(0..20) {
                    0 => 3,
                    19 => 5,
                    _ => 4,
                },
                ..PageStyle::default()
            };
            layout_of(&PageSpec::random(i, &style, rng.random())).unwrap()
        })
        .collect();
    let d = QcThresholds::default();
    let outside: BTreeSet<u64> = dense
        .iter()
        .filter(|l| l.elements.len() > d.count_hi || l.elements.len() < d.count_lo)
        .map(|l| l.meta.page_id)
        .collect();
    let band_flags: BTreeSet<u64> = flag_corpus(&dense, &d)
        .iter()
        .filter(|f| f.kind == FlagKind::PageFrameSuspect)
        .map(|f| f.page_id)
        .collect();
    let above = dense.iter().filter(|l| l.elements.len() > d.count_hi).count();
    let below = dense.iter().filter(|l| l.elements.len() < d.count_lo).count();
    let mut counts: Vec<usize> = dense.iter().map(|l| l.elements.len()).collect();
    counts.sort_unstable();
    let band_ok = band_flags == outside && above > 0 && below > 0;
    outcome(
        recall >= 0.9 && band_ok,
        format!(
            "recall {hit}/{} with {t} ({} pages flagged); defaults band flags {} of 300 ({above} above, {below} below, counts P5 {} P95 {}) {}",
            defective.len(),
            flagged.len(),
            band_flags.len(),
            tategaki::qc::nearest_rank(&counts, 5).unwrap(),
            tategaki::qc::nearest_rank(&counts, 95).unwrap(),
            if band_ok { "exact" } else { "mismatch" }
        ),
    )
}

// ---- 6 ----

fn classifier_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E1D_u64);
    let style = PageStyle::default();
    let mut samples: Vec<(RegionClass, Bitmap)> = Vec::new();
    let (mut text, mut title, mut merged) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..12 {
        let spec = PageSpec::random(i, &style, rng.random());
        let img = binarize(&render_page(&spec).unwrap());
        let truth = layout_of(&spec).unwrap();
        for (_, kids) in truth.children() {
            let regions: Vec<_> = kids
                .iter()
                .map(|&id| truth.element(id).unwrap())
                .filter(|e| matches!(e.category, Category::TextRegion | Category::TitleRegion))
                .collect();
            for e in &regions {
                let crop = img.crop(e.rect);
                match e.category {
                    Category::TextRegion => text.push(crop),
                    _ => title.push(crop),
                }
            }
            for w in regions.windows(2) {
                merged.push(img.crop(w[0].rect.union(&w[1].rect)));
            }
        }
    }
    for (class, pool, n) in [(RegionClass::Text, &text, 40), (RegionClass::Title, &title, 30), (RegionClass::MisSegmented, &merged, 30)] {
        samples.extend(pool.choose_multiple(&mut rng, n).map(|b| (class, b.clone())));
    }
    let model = HeuristicClassifier::default();
    let wrong: Vec<String> = samples
        .iter()
        .filter_map(|(want, img)| {
            let got = classify_region(&model, img).map(|c| c.class).ok();
            (got != Some(*want)).then(|| format!("{want:?}->{got:?}"))
        })
        .collect();
    let acc = 1.0 - wrong.len() as f64 / samples.len() as f64;
    outcome(
        samples.len() == 100 && acc >= 0.99,
        format!("{}/{} correct{}", samples.len() - wrong.len(), samples.len(), if wrong.is_empty() { String::new() } else { format!(", errors {wrong:?}") }),
    )
}

// ---- 7 ----

fn format_fidelity() -> Outcome {
    let c = generate_corpus(20, &CorpusSpec::default(), 0.0, 0x7C0).unwrap();
    let mut layouts: Vec<PageLayout> = c.pages.iter().map(|p| p.truth.clone()).collect();
    layouts.push(PageLayout::unsegmented(PageMeta {
        page_id: 20,
        file_name: "ad.png".into(),
        width: 800,
        height: 1200,
        page_type: PageType::Advertisement,
    }));
    let mut ds = to_coco(&layouts);
    ds.info = Some(serde_json::json!({ "note": "round trip", "scale": 0.1 }));
    let first = ds.to_canonical_string();
    let second = CocoDataset::from_json(&first).unwrap().to_canonical_string();
    let pretty = serde_json::to_string_pretty(&ds).unwrap();
    let from_pretty = CocoDataset::from_json(&pretty).unwrap().to_canonical_string();
    let round_trip = first == second && first == from_pretty;

    let pages: Vec<PageLayout> = (0..2048)
        .map(|i| {
            PageLayout::unsegmented(PageMeta {
                page_id: i,
                file_name: format!("scan_{i:04}.png"),
                width: 10,
                height: 10,
                page_type: PageType::Advertisement,
            })
        })
        .collect();
    let (train, val, test) = split_dataset(&to_coco(&pages), 42);
    let sizes = (train.images.len(), val.images.len(), test.images.len());
    let ids: BTreeSet<u64> = [&train, &val, &test].iter().flat_map(|d| d.images.iter().map(|i| i.id)).collect();
    let split_ok = sizes == (1433, 307, 308) && ids.len() == 2048;
    outcome(
        round_trip && split_ok,
        format!(
            "canonical {} ({} bytes), split {:?}",
            if round_trip { "byte-identical" } else { "differs" },
            first.len(),
            sizes
        ),
    )
}

// ---- 8 ----

fn metric_sanity() -> Outcome {
    let c = generate_corpus(5, &CorpusSpec::default(), 0.0, 0x8A9).unwrap();
    let ds = to_coco(&c.pages.iter().map(|p| p.truth.clone()).collect::<Vec<_>>());
    let perfect = map_50_95(&detections_from_dataset(&ds), &GroundTruth::from_dataset(&ds)).map;

    let truths = [
        GroundTruth { image_id: 1, category_id: 4, bbox: [0.0, 0.0, 10.0, 10.0] },
        GroundTruth { image_id: 1, category_id: 4, bbox: [50.0, 0.0, 10.0, 10.0] },
    ];
    let det = [Detection { id: 0, image_id: 1, category_id: 4, bbox: [0.0, 0.0, 10.0, 10.0], score: 0.9 }];
    let aps: Vec<f64> = iou_thresholds().iter().map(|&t| average_precision(&det, &truths, 4, t).unwrap()).collect();
    let half = aps.iter().all(|&a| (a - 0.5).abs() < 1e-12);
    outcome(
        perfect == 1.0 && half,
        format!("perfect mAP {perfect}, two-truth one-detection AP {:?}", aps.first().copied().unwrap_or(f64::NAN)),
    )
}

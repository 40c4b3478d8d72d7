//! `tategaki`: extraction, quality control, splitting, synthesis, evaluation
//! and review overlays over directories of page scans.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 some pages skipped,
//! 4 I/O error.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use tategaki::annotations::{
    category_from_id, split_dataset, to_coco, to_layouts, validate, CocoDataset,
};
use tategaki::eval::{detections_from_dataset, map_50_95, parse_detections, Detection, GroundTruth};
use tategaki::order::{PageLayout, PageMeta, PageType};
use tategaki::pipeline::{order_index_pages, Extractor, PipelineConfig};
use tategaki::qc::{
    apply_corrections, compute_thresholds, flag_corpus, parse_corrections, parse_report, render_report, CorpusStats,
    FlagKind, QcThresholds, ThresholdSource,
};
use tategaki::raster::GrayImage;
use tategaki::synth::{generate_corpus, render_page, CorpusSpec, NoisePreset};
use tategaki::Error;

#[derive(Parser)]
#[command(name = "tategaki", version, about = "Layout extraction for scanned vertical-text pages")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract layouts from a directory of PNG scans into a COCO file.
    Extract {
        input: PathBuf,
        /// Lines of `file_name page_type`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality control over an extracted dataset.
    Qc {
        #[command(subcommand)]
        command: QcCommand,
    },
    /// Split a dataset 70/15/15 per page type into train/val/test files.
    Split {
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        pages: usize,
        /// clean, default or hard.
        #[arg(long, default_value = "clean")]
        noise: NoisePreset,
        /// Fraction of pages given a layout defect in `observed.json`.
        #[arg(long, default_value_t = 0.0)]
        defect_rate: f64,
        /// Rotations are uniform in plus or minus this many degrees.
        #[arg(long, default_value_t = 2.0)]
        max_rotation: f64,
    },
    /// Score detections against ground truth (mAP over IoU 0.50:0.95).
    Eval {
        truth: PathBuf,
        /// COCO results list, or a COCO dataset scored as certain.
        detections: PathBuf,
        /// TSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw element outlines over the scans.
    Render {
        dataset: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Only render pages named in this QC report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum QcCommand {
    /// Write the flag report.
    Flag {
        dataset: PathBuf,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a corrections file, re-extracting pages whose frame changed.
    Apply {
        dataset: PathBuf,
        corrections: PathBuf,
        /// Scan directory, needed for frame corrections.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Image(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

enum Status {
    Done,
    Partial,
}

type Outcome = std::result::Result<Status, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = load_config(&cli.common).and_then(|config| run(cli.command, config));
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(3),
        Err(Failure::Usage(m)) => {
            log::error!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            log::error!("{m}");
            ExitCode::from(4)
        }
    }
}

fn load_config(common: &Common) -> std::result::Result<PipelineConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            PipelineConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command, config: PipelineConfig) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match command {
        Command::Extract { input, manifest, out } => cmd_extract(&input, &manifest, &out, config),
        Command::Qc {
            command: QcCommand::Flag { dataset, out },
        } => cmd_qc_flag(&dataset, out.as_deref(), &config),
        Command::Qc {
            command: QcCommand::Apply {
                dataset,
                corrections,
                images,
                out,
            },
        } => cmd_qc_apply(&dataset, &corrections, images.as_deref(), &out, config),
        Command::Split { dataset, out } => cmd_split(&dataset, &out, config.seed),
        Command::Synth {
            out,
            pages,
            noise,
            defect_rate,
            max_rotation,
        } => {
            let spec = CorpusSpec {
                noise,
                max_rotation,
                ..CorpusSpec::default()
            };
            cmd_synth(&out, pages, &spec, defect_rate, config.seed)
        }
        Command::Eval { truth, detections, out } => cmd_eval(&truth, &detections, out.as_deref()),
        Command::Render {
            dataset,
            images,
            out,
            report,
        } => cmd_render(&dataset, &images, &out, report.as_deref()),
    })
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load_dataset(path: &Path) -> std::result::Result<CocoDataset, Failure> {
    CocoDataset::from_json(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn save_dataset(ds: &CocoDataset, path: &Path) -> std::result::Result<(), Failure> {
    write(path, &ds.to_canonical_string())
}

fn create_dir(path: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

/// Parses `file_name page_type` lines; `#` starts a comment.
fn parse_manifest(text: &str) -> std::result::Result<BTreeMap<String, PageType>, Error> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_error = |message: String| Error::Parse {
            line: i + 1,
            column: 1,
            message,
        };
        match fields.as_slice() {
            [] => {}
            [name, kind] => {
                let kind = kind.parse().map_err(|_| parse_error(format!("unknown page type {kind:?}")))?;
                if out.insert(name.to_string(), kind).is_some() {
                    return Err(parse_error(format!("duplicate entry for {name}")));
                }
            }
            _ => return Err(parse_error("expected `file_name page_type`".into())),
        }
    }
    Ok(out)
}

fn list_scans(dir: &Path) -> std::result::Result<Vec<String>, Failure> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_failure(dir, e))? {
        let path = entry.map_err(|e| io_failure(dir, e))?.path();
        let is_png = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if let (true, Some(name)) = (is_png && path.is_file(), path.file_name().and_then(|n| n.to_str())) {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_extract(input: &Path, manifest: &Path, out: &Path, config: PipelineConfig) -> Outcome {
    let types = parse_manifest(&read(manifest)?).map_err(|e| Failure::Usage(format!("{}: {e}", manifest.display())))?;
    let names = list_scans(input)?;
    let present: BTreeSet<&str> = names.iter().map(String::as_str).collect();
    for name in types.keys().filter(|n| !present.contains(n.as_str())) {
        log::warn!("manifest entry {name} has no scan");
    }
    let extractor = Extractor::new(config)?;
    let results: Vec<tategaki::Result<PageLayout>> = names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let page_type = types.get(name).copied().unwrap_or_else(|| {
                log::warn!("{name}: not in manifest, treated as other");
                PageType::Other
            });
            let img = GrayImage::load(input.join(name))?;
            let meta = PageMeta {
                page_id: i as u64,
                file_name: name.clone(),
                width: img.width() as u32,
                height: img.height() as u32,
                page_type,
            };
            extractor.extract(&img, meta)
        })
        .collect();
    let mut layouts = Vec::new();
    let mut skipped = Vec::new();
    for (name, result) in names.iter().zip(results) {
        match result {
            Ok(layout) => {
                log::info!("{name}: {} {} elements", layout.meta.page_type, layout.elements.len());
                layouts.push(layout);
            }
            Err(e) => {
                log::error!("{name}: {e}; page skipped");
                skipped.push(name.clone());
            }
        }
    }
    let gap_break = order_index_pages(&mut layouts, &extractor.config.order);
    let mut ds = to_coco(&layouts);
    ds.info = Some(json!({
        "config": extractor.config.to_json(),
        "index_gap_break": gap_break,
        "skipped": skipped,
    }));
    for v in validate(&ds) {
        log::warn!("{v}");
    }
    save_dataset(&ds, out)?;
    Ok(if skipped.is_empty() { Status::Done } else { Status::Partial })
}

fn cmd_qc_flag(dataset: &Path, out: Option<&Path>, config: &PipelineConfig) -> Outcome {
    let layouts = to_layouts(&load_dataset(dataset)?)?;
    let source = config.qc.source;
    let thresholds = match source {
        ThresholdSource::Corpus => compute_thresholds(&CorpusStats::collect(&layouts))?,
        ThresholdSource::Defaults => QcThresholds::default(),
        ThresholdSource::Config => config.qc.thresholds,
    };
    let flags = flag_corpus(&layouts, &thresholds);
    log::info!("{} flags over {} pages ({thresholds})", flags.len(), layouts.len());
    let report = render_report(&flags, &thresholds, source);
    match out {
        Some(path) => write(path, &report)?,
        None => print!("{report}"),
    }
    Ok(Status::Done)
}

fn cmd_qc_apply(dataset: &Path, corrections: &Path, images: Option<&Path>, out: &Path, config: PipelineConfig) -> Outcome {
    let ds = load_dataset(dataset)?;
    let edits = parse_corrections(&read(corrections)?)?;
    let extractor = Extractor::new(config)?;
    let mut reextract = |page: &PageLayout, quad| {
        let dir = images.ok_or_else(|| Error::BadCorrection("frame corrections need --images".into()))?;
        let img = GrayImage::load(dir.join(&page.meta.file_name))?;
        extractor.extract_with_frame(&img, page.meta.clone(), quad)
    };
    let layouts = apply_corrections(to_layouts(&ds)?, &edits, &extractor.config.order, &mut reextract)?;
    let mut fixed = to_coco(&layouts);
    fixed.info = ds.info;
    save_dataset(&fixed, out)?;
    Ok(Status::Done)
}

fn cmd_split(dataset: &Path, out: &Path, seed: u64) -> Outcome {
    let ds = load_dataset(dataset)?;
    create_dir(out)?;
    let (train, val, test) = split_dataset(&ds, seed);
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        log::info!("{name}: {} images", part.images.len());
        save_dataset(part, &out.join(format!("{name}.json")))?;
    }
    Ok(Status::Done)
}

fn cmd_synth(out: &Path, pages: usize, spec: &CorpusSpec, defect_rate: f64, seed: u64) -> Outcome {
    let corpus = generate_corpus(pages, spec, defect_rate, seed)?;
    create_dir(out)?;
    corpus
        .pages
        .par_iter()
        .try_for_each(|p| render_page(&p.spec)?.save_png(out.join(p.spec.file_name())))?;
    let manifest: String = corpus
        .pages
        .iter()
        .map(|p| format!("{} {}\n", p.spec.file_name(), p.spec.page_type))
        .collect();
    write(&out.join("manifest.txt"), &manifest)?;
    let info = json!({ "seed": seed, "generator": spec });
    let mut truth = to_coco(&corpus.pages.iter().map(|p| p.truth.clone()).collect::<Vec<_>>());
    truth.info = Some(info.clone());
    save_dataset(&truth, &out.join("truth.json"))?;
    if defect_rate > 0.0 {
        let mut observed = to_coco(&corpus.pages.iter().map(|p| p.observed.clone()).collect::<Vec<_>>());
        observed.info = Some(info);
        save_dataset(&observed, &out.join("observed.json"))?;
        write(&out.join("defects.txt"), &corpus.defect_manifest())?;
    }
    log::info!("{} pages, {} defects", corpus.pages.len(), corpus.defects.len());
    Ok(Status::Done)
}

/// A results list is taken as is; a dataset becomes certain detections with
/// image ids re-keyed to the truth's by file name.
fn load_detections(text: &str, truth: &CocoDataset) -> std::result::Result<Vec<Detection>, Failure> {
    if text.trim_start().starts_with('[') {
        return Ok(parse_detections(text)?);
    }
    let ds = CocoDataset::from_json(text)?;
    let by_name: BTreeMap<&str, u64> = truth.images.iter().map(|i| (i.file_name.as_str(), i.id)).collect();
    let remap: BTreeMap<u64, u64> = ds
        .images
        .iter()
        .filter_map(|i| by_name.get(i.file_name.as_str()).map(|&t| (i.id, t)))
        .collect();
    Ok(detections_from_dataset(&ds)
        .into_iter()
        .filter_map(|mut d| {
            d.image_id = *remap.get(&d.image_id)?;
            Some(d)
        })
        .collect())
}

fn cmd_eval(truth: &Path, detections: &Path, out: Option<&Path>) -> Outcome {
    let truth = load_dataset(truth)?;
    let dets = load_detections(&read(detections)?, &truth)
        .map_err(|e| match e {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", detections.display())),
            io => io,
        })?;
    let report = map_50_95(&dets, &GroundTruth::from_dataset(&truth));
    log::info!("mAP@[0.50:0.95] = {:.4}", report.map);
    let tsv = report.to_tsv(|id| category_from_id(id).map_or_else(|| id.to_string(), |c| c.name().to_string()));
    match out {
        Some(path) => write(path, &tsv)?,
        None => print!("{tsv}"),
    }
    Ok(Status::Done)
}

fn cmd_render(dataset: &Path, images: &Path, out: &Path, report: Option<&Path>) -> Outcome {
    let layouts = to_layouts(&load_dataset(dataset)?)?;
    let flags = match report {
        Some(path) => Some(parse_report(&read(path)?)?),
        None => None,
    };
    let selected: Vec<(&PageLayout, Vec<u32>)> = layouts
        .iter()
        .filter_map(|l| match &flags {
            None => Some((l, Vec::new())),
            Some(flags) => {
                let mine: Vec<_> = flags.iter().filter(|f| f.page_id == l.meta.page_id).collect();
                let subjects = mine
                    .iter()
                    .filter(|f| f.kind != FlagKind::PageFrameSuspect)
                    .filter_map(|f| f.subject)
                    .collect();
                (!mine.is_empty()).then_some((l, subjects))
            }
        })
        .collect();
    create_dir(out)?;
    let failures: Vec<String> = selected
        .par_iter()
        .filter_map(|(layout, subjects)| {
            let name = &layout.meta.file_name;
            let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
            let result = GrayImage::load(images.join(name))
                .and_then(|scan| render::overlay(&scan, layout, subjects))
                .and_then(|img| Ok(img.save(out.join(format!("{stem}_overlay.png")))?));
            result.err().map(|e| format!("{name}: {e}"))
        })
        .collect();
    for f in &failures {
        log::error!("{f}");
    }
    log::info!("{} overlays written", selected.len() - failures.len());
    Ok(if failures.is_empty() { Status::Done } else { Status::Partial })
}

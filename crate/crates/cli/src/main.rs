//! `flc`: floor-level line tooling.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use floorlevel::attention::gradcheck;
use floorlevel::augment::{
    generate_sample, pair_facades, rasterize_floor_lines, simplify_semantics, LabelMapping, Provenance,
    RectifiedFacade,
};
use floorlevel::io::{self, AnnotationRecord, PgmFormat};
use floorlevel::metrics::{evaluate_dataset, EvalItem, GtLine};
use floorlevel::overlay::render_svg;
use floorlevel::stats::build_report;
use floorlevel::{run_pipeline, LabelMask, LinesDocument, RunConfig};

#[derive(Parser)]
#[command(name = "flc", version, about = "Floor-level line recognition tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp rectified facades onto annotated quads to synthesize training samples
    Augment(AugmentArgs),
    /// Dataset statistics: histograms, vertical-bound distributions and entropies
    Stats(StatsArgs),
    /// Recover floor-level lines from a facade mask and a floor mask
    Postprocess(PostprocessArgs),
    /// Pixel-wise and line-wise F1 of predictions against ground truth
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient check of the height-attention layer
    AttnCheck(AttnCheckArgs),
    /// Render a lines JSON file as an SVG overlay
    Overlay(OverlayArgs),
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of rectified facades: <name>.sem.pgm plus <name>.floor.pgm or <name>.lines.json
    #[arg(long, value_name = "DIR")]
    facades: PathBuf,
    /// Annotations JSON with the target quads (one object or an array)
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    /// Output directory for numbered PGM pairs and manifest.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Seed for the facade-to-quad pairing
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Band thickness when rasterizing <name>.lines.json floor lines
    #[arg(long, default_value_t = 3)]
    band_px: usize,
    /// JSON object mapping raw semantic labels to 0 (other), 1 (window), 2 (door) or 3 (shop)
    #[arg(long, value_name = "FILE", conflicts_with = "cmp_mapping")]
    mapping: Option<PathBuf>,
    /// Map raw CMP facade labels to the simplified palette
    #[arg(long)]
    cmp_mapping: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory of floor-level PGM masks
    #[arg(long, value_name = "DIR")]
    floor_masks: PathBuf,
    /// Annotations JSON used for the orientation histogram
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Minimum facade component area in pixels
    #[arg(long, default_value_t = 50)]
    min_area: usize,
    /// Slope spread below which a facade's lines are treated as parallel
    #[arg(long, default_value_t = 1e-4)]
    parallel_eps: f64,
    /// Relative loss decrease that stops the vanishing-point refinement
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration cap of the vanishing-point refinement
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
}

#[derive(Args)]
struct PostprocessArgs {
    /// Facade semantic mask (PGM)
    #[arg(long, value_name = "FILE")]
    facade_mask: PathBuf,
    /// Floor-level mask (PGM)
    #[arg(long, value_name = "FILE")]
    floor_mask: PathBuf,
    /// Output lines JSON
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write an SVG overlay of the recovered lines
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
    /// Image name recorded in the output (defaults to the floor mask file stem)
    #[arg(long)]
    image: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction directory: <name>.floor.pgm and <name>.lines.json per image
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Ground-truth directory with the same layout
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// Output metrics JSON
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AttnCheckArgs {
    /// First instance seed
    #[arg(long)]
    seed: u64,
    /// Number of consecutive seeds to check
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args)]
struct OverlayArgs {
    /// Lines JSON to draw
    #[arg(long, value_name = "FILE")]
    lines: PathBuf,
    /// Output SVG
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Canvas width (required unless --facade-mask is given)
    #[arg(long, requires = "height", required_unless_present = "facade_mask")]
    width: Option<usize>,
    /// Canvas height
    #[arg(long, requires = "width")]
    height: Option<usize>,
    /// Take the canvas size from this mask
    #[arg(long, value_name = "FILE", conflicts_with_all = ["width", "height"])]
    facade_mask: Option<PathBuf>,
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Internal(String),
}

impl Failure {
    fn invalid(what: impl Display, err: impl Display) -> Self {
        Failure::Invalid(format!("{what}: {err}"))
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_mask(path: &Path, flag: &str) -> Result<LabelMask, Failure> {
    io::read_label_mask(path).map_err(|e| Failure::invalid(format!("{flag} {}", path.display()), e))
}

fn write_text(path: &Path, text: &str, flag: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Internal(format!("{flag} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T, flag: &str) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    write_text(path, &text, flag)
}

fn write_mask(mask: &LabelMask, path: &Path) -> CmdResult {
    io::write_label_mask(mask, path, PgmFormat::P5).map_err(|e| Failure::Internal(e.to_string()))
}

fn require_dir(path: &Path, flag: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{flag} {}: not a directory", path.display())))
    }
}

/// Sorted names `<name>` of files `<name><suffix>` in `dir`.
fn names_with_suffix(dir: &Path, suffix: &str, flag: &str) -> Result<Vec<String>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::invalid(format!("{flag} {}", dir.display()), e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::invalid(format!("{flag} {}", dir.display()), e))?;
        if let Some(name) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            if !name.is_empty() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn load_mapping(args: &AugmentArgs) -> Result<LabelMapping, Failure> {
    if args.cmp_mapping {
        return Ok(LabelMapping::cmp_default());
    }
    let Some(path) = &args.mapping else {
        return Ok(LabelMapping::identity());
    };
    let what = format!("--mapping {}", path.display());
    let text = fs::read_to_string(path).map_err(|e| Failure::invalid(&what, e))?;
    let table: BTreeMap<String, u8> = serde_json::from_str(&text).map_err(|e| Failure::invalid(&what, e))?;
    let pairs = table
        .into_iter()
        .map(|(k, v)| k.parse::<u8>().map(|k| (k, v)).map_err(|_| Failure::invalid(&what, format!("key {k:?} is not a label"))))
        .collect::<Result<Vec<_>, _>>()?;
    LabelMapping::new(pairs).map_err(|e| Failure::invalid(&what, e))
}

#[derive(Serialize)]
struct ManifestFacade<'a> {
    source: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    index: usize,
    image: &'a str,
    seed: u64,
    semantic: String,
    floor: String,
    facades: Vec<ManifestFacade<'a>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    samples: Vec<ManifestEntry<'a>>,
}

fn cmd_augment(args: &AugmentArgs) -> CmdResult {
    if args.band_px == 0 {
        return Err(Failure::Invalid("--band-px: must be positive".into()));
    }
    require_dir(&args.facades, "--facades")?;
    let mapping = load_mapping(args)?;
    let names = names_with_suffix(&args.facades, ".sem.pgm", "--facades")?;
    if names.is_empty() {
        return Err(Failure::Invalid(format!("--facades {}: no <name>.sem.pgm files", args.facades.display())));
    }

    let mut facades = Vec::with_capacity(names.len());
    for name in &names {
        let sem_path = args.facades.join(format!("{name}.sem.pgm"));
        let raw = read_mask(&sem_path, "--facades")?;
        let semantic = simplify_semantics(&raw, &mapping).map_err(|e| Failure::invalid(sem_path.display(), e))?;
        let floor_path = args.facades.join(format!("{name}.floor.pgm"));
        let lines_path = args.facades.join(format!("{name}.lines.json"));
        let floor = if floor_path.exists() {
            read_mask(&floor_path, "--facades")?
        } else if lines_path.exists() {
            let doc = io::read_lines(&lines_path).map_err(|e| Failure::invalid(lines_path.display(), e))?;
            let lines: Vec<_> = doc.facades.iter().flat_map(|f| f.lines.iter().copied()).collect();
            rasterize_floor_lines(&lines, args.band_px, semantic.width(), semantic.height())
                .map_err(|e| Failure::invalid(lines_path.display(), e))?
        } else {
            return Err(Failure::Invalid(format!(
                "--facades {}: {name} has neither {name}.floor.pgm nor {name}.lines.json",
                args.facades.display()
            )));
        };
        let facade = RectifiedFacade::new(semantic, floor).map_err(|e| Failure::invalid(sem_path.display(), e))?;
        facades.push(facade);
    }

    let records = io::read_annotations(&args.annotations)
        .map_err(|e| Failure::invalid(format!("--annotations {}", args.annotations.display()), e))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Internal(format!("--out {}: {e}", args.out.display())))?;

    let mut samples = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let seed = args.seed.wrapping_add(index as u64);
        let picks = pair_facades(facades.len(), record.facades.len(), seed);
        let jobs: Vec<_> = picks.iter().zip(&record.facades).map(|(&i, q)| (facades[i].clone(), *q)).collect();
        let sample = generate_sample(&jobs, record.width, record.height, seed)
            .map_err(|e| Failure::invalid(format!("--annotations {} (record {index})", args.annotations.display()), e))?;
        let semantic = format!("{index:06}.sem.pgm");
        let floor = format!("{index:06}.floor.pgm");
        write_mask(&sample.semantic_mask, &args.out.join(&semantic))?;
        write_mask(&sample.floor_mask, &args.out.join(&floor))?;
        samples.push((index, record, seed, semantic, floor, picks, sample.provenance));
    }

    let manifest = Manifest {
        seed: args.seed,
        samples: samples
            .iter()
            .map(|(index, record, seed, semantic, floor, picks, provenance)| ManifestEntry {
                index: *index,
                image: &record.image_id,
                seed: *seed,
                semantic: semantic.clone(),
                floor: floor.clone(),
                facades: picks
                    .iter()
                    .zip(provenance)
                    .map(|(&i, provenance)| ManifestFacade { source: &names[i], provenance })
                    .collect(),
            })
            .collect(),
    };
    write_json(&args.out.join("manifest.json"), &manifest, "--out")
}

fn cmd_stats(args: &StatsArgs) -> CmdResult {
    require_dir(&args.floor_masks, "--floor-masks")?;
    let names = names_with_suffix(&args.floor_masks, ".pgm", "--floor-masks")?;
    let masks = names
        .iter()
        .map(|n| read_mask(&args.floor_masks.join(format!("{n}.pgm")), "--floor-masks"))
        .collect::<Result<Vec<_>, _>>()?;
    let annotations: Vec<AnnotationRecord> = match &args.annotations {
        Some(p) => io::read_annotations(p).map_err(|e| Failure::invalid(format!("--annotations {}", p.display()), e))?,
        None => Vec::new(),
    };
    let report =
        build_report(&masks, &annotations).map_err(|e| Failure::invalid(format!("--floor-masks {}", args.floor_masks.display()), e))?;
    write_json(&args.out, &report, "--out")
}

fn run_config(p: &PipelineArgs) -> Result<RunConfig, Failure> {
    let config = RunConfig {
        min_area: p.min_area,
        parallel_slope_eps: p.parallel_eps,
        convergence_tol: p.tol,
        max_iters: p.max_iters,
        ..RunConfig::default()
    };
    config.validate().map_err(|e| {
        let flag = match e.field {
            "min_area" => "--min-area",
            "parallel_slope_eps" => "--parallel-eps",
            "convergence_tol" => "--tol",
            "max_iters" => "--max-iters",
            other => other,
        };
        Failure::Invalid(format!("{flag}: must be positive"))
    })?;
    Ok(config)
}

fn cmd_postprocess(args: &PostprocessArgs) -> CmdResult {
    let config = run_config(&args.pipeline)?;
    let facade = read_mask(&args.facade_mask, "--facade-mask")?;
    let floor = read_mask(&args.floor_mask, "--floor-mask")?;
    let result = run_pipeline(&facade, &floor, &config.pipeline()).map_err(|e| Failure::invalid("--floor-mask", e))?;
    for f in &result.facades {
        for e in &f.errors {
            eprintln!("warning: facade {}: {e}", f.region.id);
        }
    }
    let image = args.image.clone().unwrap_or_else(|| stem(&args.floor_mask));
    let doc = result.to_document(&image);
    write_text(&args.out, &doc.to_json_string(), "--out")?;
    if let Some(svg) = &args.svg {
        write_text(svg, &render_svg(&doc, result.width, result.height), "--svg")?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let name = name.strip_suffix(".pgm").unwrap_or(name);
    name.strip_suffix(".floor").unwrap_or(name).to_string()
}

fn read_lines_flag(path: &Path, flag: &str) -> Result<LinesDocument, Failure> {
    io::read_lines(path).map_err(|e| Failure::invalid(format!("{flag} {}", path.display()), e))
}

fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    require_dir(&args.pred, "--pred")?;
    require_dir(&args.gt, "--gt")?;
    let names = names_with_suffix(&args.gt, ".floor.pgm", "--gt")?;
    if names.is_empty() {
        return Err(Failure::Invalid(format!("--gt {}: no <name>.floor.pgm files", args.gt.display())));
    }
    let mut items = Vec::with_capacity(names.len());
    for name in &names {
        let gt_mask = read_mask(&args.gt.join(format!("{name}.floor.pgm")), "--gt")?;
        let pred_mask = read_mask(&args.pred.join(format!("{name}.floor.pgm")), "--pred")?;
        let gt_doc = read_lines_flag(&args.gt.join(format!("{name}.lines.json")), "--gt")?;
        let pred_doc = read_lines_flag(&args.pred.join(format!("{name}.lines.json")), "--pred")?;
        let gt_lines = gt_doc
            .facades
            .iter()
            .flat_map(|f| f.lines.iter().map(move |&line| GtLine { facade_id: f.id, line }))
            .collect();
        let pred_lines = pred_doc.facades.iter().flat_map(|f| f.lines.iter().copied()).collect();
        items.push(EvalItem { pred_mask, gt_mask, pred_lines, gt_lines });
    }
    let report = evaluate_dataset(&items).map_err(|e| Failure::invalid(format!("--pred {}", args.pred.display()), e))?;
    write_json(&args.out, &report, "--out")
}

fn cmd_attn_check(args: &AttnCheckArgs) -> CmdResult {
    if args.instances == 0 {
        return Err(Failure::Invalid("--instances: must be positive".into()));
    }
    let reports = gradcheck::run_suite(args.seed, args.instances).map_err(|e| Failure::Internal(e.to_string()))?;
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    println!("instances: {}", reports.len());
    println!("gradients checked: {checked}");
    println!("max relative error: {worst:.3e}");
    if reports.iter().all(|r| r.passed()) {
        println!("PASS (tolerance {:.0e})", gradcheck::TOLERANCE);
        Ok(())
    } else {
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.seed.to_string()).collect();
        Err(Failure::Invalid(format!("--seed {}: gradient check failed for seeds {}", args.seed, failed.join(", "))))
    }
}

fn cmd_overlay(args: &OverlayArgs) -> CmdResult {
    let doc = read_lines_flag(&args.lines, "--lines")?;
    let (w, h) = match (&args.facade_mask, args.width, args.height) {
        (Some(p), _, _) => {
            let m = read_mask(p, "--facade-mask")?;
            (m.width(), m.height())
        }
        (None, Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
        _ => return Err(Failure::Invalid("--width/--height: must be positive".into())),
    };
    write_text(&args.out, &render_svg(&doc, w, h), "--out")
}

fn configure_threads() -> CmdResult {
    let Ok(raw) = std::env::var("FLC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Invalid(format!("FLC_THREADS: {raw:?} is not a non-negative integer")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(format!("FLC_THREADS: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::AttnCheck(a) => cmd_attn_check(a),
        Command::Overlay(a) => cmd_overlay(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(msg) | Failure::Internal(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

//! Command-line surface. Exit codes: 0 success, 1 finished with per-image
//! errors or skips, 2 aborted on configuration or I/O problems.
//!
//! Settings are layered defaults, then `--config`, then flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backends::{fakes, BackendSelection, Capability, Detector, Registry, Segmenter};
use crate::concept::interpret;
use crate::error::{Error, Result};
use crate::evaluation::{
    concept_agreement_tally, default_resegment_query, eval_shape_preservation, load_run_records, plausibility_tally,
    render_iou_table, samples_from_external, samples_from_records, validate_manifest, Category, DatasetManifest,
    IoUReport, ShapeSample, StudyResponses, SynonymTable, Tally,
};
use crate::generation::{estimate_depth, generate, GenerationMeta};
use crate::imaging::{blend_composite, resize_to_working, DepthMap, Mask, Raster};
use crate::pipeline::{
    derive_seed, image_id_for, write_json, BatchOptions, ConceptArtifact, DetectionArtifact,
    ImageInput, Outcome, Pipeline, PipelineConfig, PipelineRecord, Stage, StageStatus, VocabularyMode,
};
use crate::segmentation::{extract_silhouette, DetectionQuery};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Partial,
    Abort,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Partial => 1,
            ExitStatus::Abort => 2,
        }
    }

    fn from_ok(ok: bool) -> Self {
        if ok {
            ExitStatus::Success
        } else {
            ExitStatus::Partial
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "shape2animal", version, about = "Turn natural-object photographs into silhouette-filling animals")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage for one image.
    Run(RunArgs),
    /// Run every image of a manifest.
    Batch(BatchArgs),
    /// Run a single stage against artifacts on disk.
    #[command(subcommand)]
    Stage(StageCommand),
    /// Evaluation harness.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Backend registry.
    #[command(subcommand)]
    Backends(BackendsCommand),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the deterministic fake for every capability.
    #[arg(long)]
    fakes: bool,
    /// Backend override, e.g. `detect=fake-salient` (repeatable).
    #[arg(long = "backend", value_name = "CAP=ID")]
    backends: Vec<String>,
    /// Run seed; a generated one is printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Blend opacity of the generated image inside the mask, in [0, 1]
    #[arg(long)]
    opacity: Option<f64>,
    /// Feather radius in pixels for the blend mask.
    #[arg(long)]
    feather: Option<u32>,
    /// Working resolution (square side).
    #[arg(long)]
    side: Option<u32>,
    /// Depth-control strength.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of animal candidates to request.
    #[arg(long)]
    candidates: Option<u32>,
    /// Detection vocabulary term, replacing the configured list (repeatable).
    #[arg(long = "vocab", value_name = "TERM")]
    vocabulary: Vec<String>,
    /// Minimum detection score, in [0, 1)
    #[arg(long)]
    confidence_floor: Option<f32>,
    /// Query only the image's category instead of the whole vocabulary.
    #[arg(long)]
    category_vocabulary: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if self.fakes {
            c.backends = BackendSelection::fakes();
        }
        for spec in &self.backends {
            c.backends.apply_override(spec)?;
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
        if let Some(v) = self.opacity {
            c.opacity = v;
        }
        if let Some(v) = self.feather {
            c.feather_radius = v;
        }
        if let Some(v) = self.side {
            c.working_side = v;
        }
        if let Some(v) = self.alpha {
            c.generation.control_strength = v;
        }
        if let Some(v) = self.candidates {
            c.candidates = v;
        }
        if !self.vocabulary.is_empty() {
            c.query.vocabulary = self.vocabulary.clone();
        }
        if let Some(v) = self.confidence_floor {
            c.query.confidence_floor = v;
        }
        if self.category_vocabulary {
            c.vocabulary_mode = VocabularyMode::Category;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    image: PathBuf,
    /// Manifest category of the image (stone, cloud, fire, other).
    #[arg(long)]
    category: Option<String>,
    /// Recompute every stage even when cached artifacts match.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct BatchArgs {
    manifest: PathBuf,
    /// Images processed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum StageCommand {
    /// Detect and segment: writes `<id>.mask.png` and `<id>.detection.json`.
    Segment(StageArgs),
    /// Interpret the mask: writes `<id>.concept.json`.
    Interpret(StageArgs),
    /// Estimate depth: writes `<id>.depth.png`.
    Depth(StageArgs),
    /// Inpaint the silhouette: writes `<id>.gen.png` and `<id>.genmeta.json`.
    Generate(StageArgs),
    /// Composite: writes `<id>.final.png`.
    Blend(StageArgs),
}

#[derive(Args, Debug)]
struct StageArgs {
    /// Source image (resized to the working resolution).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Artifact stem; defaults to the image's file stem.
    #[arg(long)]
    id: Option<String>,
    /// Artifact directory; defaults to `<out>/<id>`.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    concept: Option<PathBuf>,
    #[arg(long)]
    gen: Option<PathBuf>,
    #[arg(long)]
    category: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Validate a dataset manifest.
    Manifest {
        manifest: PathBuf,
        /// Declared counts, e.g. `stone=21,cloud=24,fire=17`, or `reference`.
        #[arg(long)]
        expect: Option<String>,
        /// Where to write the JSON report instead of the default location
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Shape preservation: re-segment final images and compare masks.
    Iou {
        /// Output directory of a pipeline run.
        #[arg(long)]
        run: PathBuf,
        /// Images from another system, `NAME=DIR` with `<id>.<ext>` files (repeatable).
        #[arg(long = "external", value_name = "NAME=DIR")]
        externals: Vec<String>,
        /// Re-segmentation query term.
        #[arg(long)]
        query: Option<String>,
        /// Name for the run's own row.
        #[arg(long, default_value = "pipeline")]
        model: String,
        /// Print one line per image.
        #[arg(long)]
        detailed: bool,
        /// Where to write the JSON report instead of the default location
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Agreement between participant answers and interpreted labels.
    Concept {
        #[arg(long)]
        responses: PathBuf,
        /// Read labels from the concept artifacts of a run.
        #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
        run: Option<PathBuf>,
        /// Read labels from an `image_id,label` table.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Two-column `variant,canonical` table.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// Require every response to name an image in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Where to write the JSON report instead of the default location
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fraction of plausibility answers that are `yes`.
    Plausibility {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Where to write the JSON report instead of the default location
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum BackendsCommand {
    /// List registered backends.
    List,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return ExitStatus::Abort;
            }
            let _ = write!(out, "{}", e.render());
            return ExitStatus::Success;
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command, out) {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            ExitStatus::Abort
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("S2A_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<ExitStatus> {
    match command {
        Command::Run(a) => cmd_run(a, out),
        Command::Batch(a) => cmd_batch(a, out),
        Command::Stage(s) => cmd_stage(s, out),
        Command::Eval(e) => cmd_eval(e, out),
        Command::Backends(BackendsCommand::List) => cmd_backends_list(out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Fills in a generated run seed and announces it.
fn ensure_seed(config: &mut PipelineConfig, out: &mut dyn Write) -> Result<u64> {
    if let Some(s) = config.seed {
        return Ok(s);
    }
    let s = config.resolve_seed();
    writeln!(out, "seed {s} (generated; pass --seed {s} to reproduce)").map_err(io_err)?;
    Ok(s)
}

fn print_record(record: &PipelineRecord, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{:<10}{}", "image", record.image_id()).map_err(io_err)?;
    for s in record.stages() {
        let cached = if s.cached { " (cached)" } else { "" };
        writeln!(out, "{:<10}{}{cached}", s.stage.as_str(), s.status).map_err(io_err)?;
    }
    let outcome = match record.outcome() {
        Outcome::Ok => "ok",
        Outcome::Skipped => "skipped",
        Outcome::Error => "error",
    };
    writeln!(out, "{:<10}{outcome}", "outcome").map_err(io_err)?;
    if let Some(f) = record.final_image() {
        writeln!(out, "{:<10}{}", "final", f.display()).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<ExitStatus> {
    let mut config = a.cfg.build()?;
    ensure_seed(&mut config, out)?;
    let input = ImageInput::load(&a.image, a.category)?;
    let pipeline = Pipeline::from_registry(config, &Registry::with_defaults())?;
    let record = pipeline.run_single(&input, a.force)?;
    print_record(&record, out)?;
    Ok(ExitStatus::from_ok(record.outcome() == Outcome::Ok))
}

fn cmd_batch(a: BatchArgs, out: &mut dyn Write) -> Result<ExitStatus> {
    let mut config = a.cfg.build()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = validate_manifest(&manifest);
    if !report.is_ok() {
        let detail: Vec<String> = report.findings.iter().map(|f| f.to_string()).collect();
        return Err(Error::Validation(format!(
            "manifest {} is invalid:\n  {}",
            a.manifest.display(),
            detail.join("\n  ")
        )));
    }
    ensure_seed(&mut config, out)?;
    let pipeline = Pipeline::from_registry(config, &Registry::with_defaults())?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        // A second registration in the same process fails; the first handler stays.
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    let options = BatchOptions {
        parallelism: a.parallel,
        force: a.force,
        stop: Some(stop),
    };
    let batch = pipeline.run_batch(&manifest, &options)?;
    for img in &batch.summary.images {
        let outcome = match img.outcome {
            Outcome::Ok => "ok",
            Outcome::Skipped => "skipped",
            Outcome::Error => "error",
        };
        let detail = img.detail.as_deref().map(|d| format!("  {d}")).unwrap_or_default();
        writeln!(out, "{:<28}{outcome}{detail}", img.image_id).map_err(io_err)?;
    }
    let s = &batch.summary;
    writeln!(out, "total {}  ok {}  skipped {}  error {}", s.total, s.ok, s.skipped, s.error).map_err(io_err)?;
    if s.interrupted {
        writeln!(out, "interrupted: {} images not started", s.not_started).map_err(io_err)?;
    }
    writeln!(out, "summary {}", pipeline.config().output_dir.join("summary.json").display()).map_err(io_err)?;
    Ok(ExitStatus::from_ok(s.skipped == 0 && s.error == 0 && !s.interrupted))
}

// ---------------------------------------------------------------------------
// Single stages

struct StageContext {
    config: PipelineConfig,
    id: String,
    dir: PathBuf,
    registry: Registry,
}

impl StageContext {
    fn new(a: &StageArgs) -> Result<Self> {
        let config = a.cfg.build()?;
        let id = match (&a.id, &a.image) {
            (Some(id), _) => id.clone(),
            (None, Some(img)) => image_id_for(img),
            (None, None) => return Err(Error::Config("pass --id or --image to name the artifacts".into())),
        };
        let dir = a.dir.clone().unwrap_or_else(|| config.output_dir.join(&id));
        Ok(Self {
            config,
            id,
            dir,
            registry: Registry::with_defaults(),
        })
    }

    fn artifact(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}.{suffix}", self.id))
    }

    /// An input produced by an earlier stage.
    fn upstream(&self, explicit: &Option<PathBuf>, suffix: &str, producer: Stage) -> Result<PathBuf> {
        let path = explicit.clone().unwrap_or_else(|| self.artifact(suffix));
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Precondition(format!(
                "{} not found; it is produced by the `{producer}` stage",
                path.display()
            )))
        }
    }

    fn working_image(&self, a: &StageArgs) -> Result<Raster> {
        let path = a
            .image
            .as_ref()
            .ok_or_else(|| Error::Config("this stage needs --image".into()))?;
        Ok(resize_to_working(&Raster::load(path)?, self.config.working_side)?.quantized())
    }

    fn pool(&self, cap: Capability) -> Option<u32> {
        self.config.pool.get(&cap).copied()
    }
}

/// Stage-level failures finish with code 1; everything else aborts.
fn stage_failure(e: Error, out: &mut dyn Write) -> Result<ExitStatus> {
    match e {
        Error::Io { .. } | Error::Config(_) | Error::Image { .. } | Error::Json { .. } | Error::Precondition(_) => {
            Err(e)
        }
        other => {
            let status = match other {
                Error::NoDetection | Error::EmptyMask => StageStatus::Skipped(other.tag().into()),
                ref e => StageStatus::Error(format!("{}: {e}", e.tag())),
            };
            writeln!(out, "{status}").map_err(io_err)?;
            Ok(ExitStatus::Partial)
        }
    }
}

fn wrote(out: &mut dyn Write, paths: &[&Path]) -> Result<ExitStatus> {
    for p in paths {
        writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
    }
    Ok(ExitStatus::Success)
}

fn cmd_stage(s: StageCommand, out: &mut dyn Write) -> Result<ExitStatus> {
    match s {
        StageCommand::Segment(a) => {
            let ctx = StageContext::new(&a)?;
            let image = ctx.working_image(&a)?;
            let ids = &ctx.config.backends;
            let det = ctx.registry.detector(&ids.detect, ctx.pool(Capability::Detect))?;
            let seg = ctx.registry.segmenter(&ids.segment, ctx.pool(Capability::Segment))?;
            let query = match (ctx.config.vocabulary_mode, a.category.as_deref()) {
                (VocabularyMode::Category, Some(c)) => DetectionQuery {
                    vocabulary: vec![c.parse::<Category>()?.as_str().to_string()],
                    ..ctx.config.query.clone()
                },
                _ => ctx.config.query.clone(),
            };
            match extract_silhouette(det.as_ref(), seg.as_ref(), &image, &query, &ctx.config.retry) {
                Ok(s) => {
                    let (mask, detection) = (ctx.artifact("mask.png"), ctx.artifact("detection.json"));
                    s.mask.save_png(&mask)?;
                    write_json(&detection, &DetectionArtifact {
                        x0: s.detection.x0,
                        y0: s.detection.y0,
                        x1: s.detection.x1,
                        y1: s.detection.y1,
                        score: s.detection.score,
                        term: s.query_term.clone(),
                    })?;
                    wrote(out, &[&mask, &detection])
                }
                Err(e) => stage_failure(e, out),
            }
        }
        StageCommand::Interpret(a) => {
            let ctx = StageContext::new(&a)?;
            let mask = Mask::load(ctx.upstream(&a.mask, "mask.png", Stage::Segment)?)?;
            let id = &ctx.config.backends.interpret;
            let interp = ctx.registry.interpreter(id, ctx.pool(Capability::Interpret))?;
            match interpret(interp.as_ref(), &mask, ctx.config.candidates, &ctx.config.retry) {
                Ok(c) => {
                    let path = ctx.artifact("concept.json");
                    write_json(&path, &ConceptArtifact::new(&c, id))?;
                    writeln!(out, "label {}", c.label).map_err(io_err)?;
                    wrote(out, &[&path])
                }
                Err(e) => stage_failure(e, out),
            }
        }
        StageCommand::Depth(a) => {
            let ctx = StageContext::new(&a)?;
            let image = ctx.working_image(&a)?;
            let est = ctx.registry.depth(&ctx.config.backends.depth, ctx.pool(Capability::Depth))?;
            match estimate_depth(est.as_ref(), &image, &ctx.config.retry) {
                Ok(d) => {
                    let path = ctx.artifact("depth.png");
                    d.quantized().save_png(&path)?;
                    wrote(out, &[&path])
                }
                Err(e) => stage_failure(e, out),
            }
        }
        StageCommand::Generate(a) => {
            let mut ctx = StageContext::new(&a)?;
            let image = ctx.working_image(&a)?;
            let mask = Mask::load(ctx.upstream(&a.mask, "mask.png", Stage::Segment)?)?;
            let depth = DepthMap::load(ctx.upstream(&a.depth, "depth.png", Stage::Depth)?)?;
            let concept = ConceptArtifact::load(ctx.upstream(&a.concept, "concept.json", Stage::Interpret)?)?
                .into_concept()?;
            let run_seed = ensure_seed(&mut ctx.config, out)?;
            let gen_config = ctx.config.generation.with_seed(derive_seed(run_seed, &ctx.id));
            let id = ctx.config.backends.generate.clone();
            let generator = ctx.registry.generator(&id, ctx.pool(Capability::Generate))?;
            match generate(generator.as_ref(), &image, &mask, &depth, &concept, &gen_config, &ctx.config.retry) {
                Ok(g) => {
                    let (gen, meta) = (ctx.artifact("gen.png"), ctx.artifact("genmeta.json"));
                    g.quantized().save_png(&gen)?;
                    write_json(&meta, &GenerationMeta::new(&gen_config, id))?;
                    wrote(out, &[&gen, &meta])
                }
                Err(e) => stage_failure(e, out),
            }
        }
        StageCommand::Blend(a) => {
            let ctx = StageContext::new(&a)?;
            let image = ctx.working_image(&a)?;
            let mask = Mask::load(ctx.upstream(&a.mask, "mask.png", Stage::Segment)?)?;
            let gen = Raster::load(ctx.upstream(&a.gen, "gen.png", Stage::Generate)?)?;
            let blend_mask = mask.feathered(ctx.config.feather_radius);
            match blend_composite(&gen, &image, &blend_mask, ctx.config.opacity) {
                Ok(f) => {
                    let path = ctx.artifact("final.png");
                    f.quantized().save_png(&path)?;
                    wrote(out, &[&path])
                }
                Err(e) => stage_failure(e, out),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Serialize, Deserialize)]
struct RateReport {
    metric: String,
    hits: usize,
    n: usize,
    rate: f64,
}

/// Four decimals with trailing zeros removed.
fn short_rate(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

fn default_report(beside: &Path, name: &str) -> PathBuf {
    let dir = if beside.is_dir() {
        beside
    } else {
        beside.parent().unwrap_or(Path::new("."))
    };
    dir.join(format!("eval_{name}.json"))
}

fn parse_expect(spec: &str) -> Result<BTreeMap<Category, usize>> {
    if spec.trim() == "reference" {
        return Ok(crate::evaluation::reference_counts());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (c, n) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected `category=count`, found `{item}`")))?;
            let n = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{n}` is not a count")))?;
            Ok((c.parse::<Category>().map_err(|e| Error::Config(e.to_string()))?, n))
        })
        .collect()
}

fn labels_from_table(path: &Path) -> Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Row {
        image_id: String,
        label: String,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        map.insert(row.image_id, row.label);
    }
    Ok(map)
}

fn labels_from_run(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for record in load_run_records(dir)? {
        if record.stage(Stage::Interpret).status.is_ok() {
            let path = record.artifact_path(Stage::Interpret, "concept.json");
            map.insert(record.image_id().to_string(), ConceptArtifact::load(&path)?.label);
        }
    }
    Ok(map)
}

fn check_responses_against(responses: &StudyResponses, manifest: &Option<PathBuf>) -> Result<()> {
    if let Some(m) = manifest {
        let m = DatasetManifest::load(m)?;
        responses.check_ids(|id| m.contains_id(id))?;
    }
    Ok(())
}

fn print_rate(out: &mut dyn Write, metric: &str, t: Tally, report: &Path) -> Result<()> {
    writeln!(out, "{metric} {} ({}/{})", short_rate(t.rate()), t.hits, t.n).map_err(io_err)?;
    write_json(
        report,
        &RateReport {
            metric: metric.into(),
            hits: t.hits,
            n: t.n,
            rate: t.rate(),
        },
    )?;
    writeln!(out, "report {}", report.display()).map_err(io_err)
}

fn resegmenter(
    config: &PipelineConfig,
    sample_sets: &[(String, Vec<ShapeSample>)],
) -> Result<(Arc<dyn Detector>, Arc<dyn Segmenter>)> {
    let ids = &config.backends;
    if ids.detect == fakes::IDENTITY || ids.segment == fakes::IDENTITY {
        let mut pairs = Vec::new();
        for (_, samples) in sample_sets {
            for s in samples {
                pairs.push(s.load()?);
            }
        }
        return Ok(fakes::identity_resegmenter(pairs));
    }
    let registry = Registry::with_defaults();
    Ok((
        registry.detector(&ids.detect, config.pool.get(&Capability::Detect).copied())?,
        registry.segmenter(&ids.segment, config.pool.get(&Capability::Segment).copied())?,
    ))
}

fn cmd_eval(e: EvalCommand, out: &mut dyn Write) -> Result<ExitStatus> {
    match e {
        EvalCommand::Manifest { manifest, expect, report } => {
            let mut m = DatasetManifest::load(&manifest)?;
            if let Some(spec) = expect {
                m.declared = parse_expect(&spec)?;
            }
            let r = validate_manifest(&m);
            write!(out, "{}", r.render()).map_err(io_err)?;
            let path = report.unwrap_or_else(|| default_report(&manifest, "manifest"));
            write_json(&path, &r)?;
            writeln!(out, "report {}", path.display()).map_err(io_err)?;
            Ok(ExitStatus::from_ok(r.is_ok()))
        }
        EvalCommand::Iou {
            run,
            externals,
            query,
            model,
            detailed,
            report,
            cfg,
        } => {
            let config = cfg.build()?;
            let records = load_run_records(&run)?;
            let mut sets = vec![(model, samples_from_records(&records))];
            for spec in &externals {
                let (name, dir) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected `NAME=DIR`, found `{spec}`")))?;
                sets.push((name.to_string(), samples_from_external(dir, &records)?));
            }
            let mut q = match query {
                Some(t) => DetectionQuery::single(t),
                None => default_resegment_query(),
            };
            q.confidence_floor = config.query.confidence_floor;
            let (det, seg) = resegmenter(&config, &sets)?;
            let mut reports: Vec<IoUReport> = Vec::new();
            for (name, samples) in sets {
                reports.push(eval_shape_preservation(
                    &samples,
                    &q,
                    det.as_ref(),
                    seg.as_ref(),
                    &config.retry,
                    Some(name),
                )?);
            }
            write!(out, "{}", render_iou_table(&reports, detailed)).map_err(io_err)?;
            let path = report.unwrap_or_else(|| run.join("eval_iou.json"));
            write_json(&path, &reports)?;
            writeln!(out, "report {}", path.display()).map_err(io_err)?;
            Ok(ExitStatus::from_ok(reports.iter().all(|r| r.failures() == 0)))
        }
        EvalCommand::Concept {
            responses,
            run,
            labels,
            synonyms,
            manifest,
            report,
        } => {
            let r = StudyResponses::load(&responses)?;
            check_responses_against(&r, &manifest)?;
            let concepts = match (&labels, &run) {
                (Some(l), _) => labels_from_table(l)?,
                (None, Some(dir)) => labels_from_run(dir)?,
                (None, None) => return Err(Error::Config("pass --labels or --run".into())),
            };
            let syn = synonyms.map(SynonymTable::load).transpose()?;
            let t = concept_agreement_tally(&r, &concepts, syn.as_ref())?;
            let path = report.unwrap_or_else(|| default_report(&responses, "concept"));
            print_rate(out, "agreement", t, &path)?;
            Ok(ExitStatus::Success)
        }
        EvalCommand::Plausibility {
            responses,
            manifest,
            report,
        } => {
            let r = StudyResponses::load(&responses)?;
            check_responses_against(&r, &manifest)?;
            let t = plausibility_tally(&r)?;
            let path = report.unwrap_or_else(|| default_report(&responses, "plausibility"));
            print_rate(out, "plausibility", t, &path)?;
            Ok(ExitStatus::Success)
        }
    }
}

fn cmd_backends_list(out: &mut dyn Write) -> Result<ExitStatus> {
    let registry = Registry::with_defaults();
    writeln!(
        out,
        "{:<11}{:<22}{:<22}{:<13}max-in-flight",
        "capability", "id", "determinism", "thread-safe"
    )
    .map_err(io_err)?;
    for d in registry.descriptors() {
        let determinism = serde_json::to_value(d.determinism)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let limit = d.max_in_flight.map_or("-".to_string(), |n| n.to_string());
        writeln!(
            out,
            "{:<11}{:<22}{:<22}{:<13}{}",
            d.capability.as_str(),
            d.id,
            determinism,
            if d.thread_safe { "yes" } else { "no" },
            limit
        )
        .map_err(io_err)?;
    }
    Ok(ExitStatus::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_rates() {
        assert_eq!(short_rate(226.0 / 1000.0), "0.226");
        assert_eq!(short_rate(149.0 / 300.0), "0.4967");
        assert_eq!(short_rate(1.0), "1");
        assert_eq!(short_rate(0.0), "0");
    }

    #[test]
    fn expect_specs() {
        let r = parse_expect("reference").unwrap();
        assert_eq!(r.values().sum::<usize>(), 62);
        let c = parse_expect("stone=2, fire=0").unwrap();
        assert_eq!(c, BTreeMap::from([(Category::Stone, 2), (Category::Fire, 0)]));
        assert!(parse_expect("stone").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 1\nopacity = 0.25\nfeather_radius = 3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            fakes: true,
            backends: vec!["detect=fake-full-frame".into()],
            ..ConfigArgs::default()
        };
        let c = args.build().unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.opacity, 0.25);
        assert_eq!(c.feather_radius, 3);
        assert_eq!(c.backends.detect, "fake-full-frame");
        assert_eq!(c.backends.generate, BackendSelection::fakes().generate);
    }

    #[test]
    fn parse_errors_exit_with_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_with(["shape2animal", "frobnicate"], &mut o, &mut e), ExitStatus::Abort);
        assert_eq!(run_with(["shape2animal", "--help"], &mut o, &mut e), ExitStatus::Success);
    }
}

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use roomgroup_core::bedmap::{OracleFromTruth, Predictor};
use roomgroup_core::catalog::{load_catalog, read_grouping, write_catalog, write_grouping};
use roomgroup_core::metrics::evaluate;
use roomgroup_core::overlap::{
    build_overlap_matrix, load_head_weights, read_embedding_cache, write_embedding_cache, write_pair_scores, ImageRef,
    LinearHead, PairScores,
};
use roomgroup_core::pipeline::{cluster_property, map_property, run_property, score_property, Diagnostic, Level, PipelineOptions};
use roomgroup_core::synthgen::{generate_pair_manifest, generate_property, synth_embeddings_and_weights, ManifestCounts, SyntheticOracle};
use roomgroup_core::{
    FirstOption, GroundTruth, GroupingOutput, PipelineError, PropertyCatalog, RemoteService, RoomType, ScorerBackend,
    SynthConfig,
};
use thiserror::Error;

use config::{require_file, BackendKind, FileConfig, FlagValues, PredictorKind, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Remote(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Remote(_) => 4,
        }
    }

    fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_remote() {
            CliError::Remote(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "roomgroup", version, about = "Group listing photos into room spaces and map bedrooms to bed types")]
struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Properties processed in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage for one property or a batch directory.
    Pipeline(PipelineArgs),
    /// Score image pairs and write a pair-score CSV.
    Score(ScoreArgs),
    /// Cluster from a pair-score CSV and write a grouping without bed types.
    Cluster(ClusterArgs),
    /// Assign bed types to the bedroom groups of a grouping.
    Map(MapArgs),
    /// Compare groupings with ground truth and write a metrics report.
    Eval(EvalArgs),
    /// Generate synthetic properties.
    Synth(SynthArgs),
    /// Write a training pair manifest for a synthetic property.
    Pairs(PairsArgs),
}

#[derive(Args, Clone, Default)]
struct BackendOpts {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Pair-score CSV (precomputed backend).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Embedding cache (head backend).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Head weights document (head backend).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ClusterOpts {
    /// Noise threshold as a fraction of the best member mean.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rule table document replacing the built-in rules.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct PredictorOpts {
    #[arg(long, value_enum)]
    predictor: Option<PredictorKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    retries: Option<usize>,
    /// Ground-truth document (oracle predictor).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    catalog: Option<PathBuf>,
    /// Directory of property directories, each with a catalog.json. Input
    /// flags then name files inside each property directory.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendOpts,
    #[command(flatten)]
    cluster: ClusterOpts,
    #[command(flatten)]
    predictor: PredictorOpts,
    /// Grouping file, or output directory with --batch.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[command(flatten)]
    backend: BackendOpts,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[command(flatten)]
    cluster: ClusterOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    grouping: PathBuf,
    #[command(flatten)]
    predictor: PredictorOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Grouping file or directory of grouping files.
    #[arg(long)]
    pred: PathBuf,
    /// Truth file or directory searched for truth.json files.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Rooms per type, e.g. `bedroom=4,bathroom=2`.
    #[arg(long, default_value = "bedroom=2")]
    rooms: String,
    /// Images per room, `LOW..HIGH` or a single count.
    #[arg(long, default_value = "2..5")]
    images_per_room: String,
    /// Standard deviation of additive score noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Heading difference at which same-room overlap reaches its floor.
    #[arg(long)]
    heading_max: Option<f64>,
    /// Comma-separated bed types to draw from.
    #[arg(long)]
    bed_vocab: Option<String>,
    /// Number of properties; more than one writes one subdirectory each.
    #[arg(long, default_value_t = 1)]
    properties: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 100)]
    pos: usize,
    #[arg(long, default_value_t = 100)]
    neg: usize,
    #[arg(long, default_value_t = 0)]
    manual: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| {
            let level = match record.level() {
                log::Level::Error => Level::Error,
                log::Level::Warn => Level::Warning,
                _ => Level::Info,
            };
            let d = Diagnostic::new(level, "", record.target(), record.args().to_string());
            writeln!(buf, "{}", d.to_json_line())
        })
        .init();
}

fn emit(diags: &[Diagnostic]) {
    let mut err = std::io::stderr().lock();
    for d in diags {
        let _ = writeln!(err, "{}", d.to_json_line());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit(&[Diagnostic::new(Level::Error, "", "cli", e.to_string())]);
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut flags = FlagValues {
        jobs: cli.jobs,
        ..FlagValues::default()
    };
    match cli.command {
        Command::Pipeline(args) => {
            absorb_backend(&mut flags, &args.backend);
            absorb_cluster(&mut flags, &args.cluster);
            absorb_predictor(&mut flags, &args.predictor);
            cmd_pipeline(args, Settings::resolve(flags, file)?)
        }
        Command::Score(args) => {
            absorb_backend(&mut flags, &args.backend);
            flags.rules = args.rules.clone();
            cmd_score(args, Settings::resolve(flags, file)?)
        }
        Command::Cluster(args) => {
            absorb_cluster(&mut flags, &args.cluster);
            cmd_cluster(args, Settings::resolve(flags, file)?)
        }
        Command::Map(args) => {
            absorb_predictor(&mut flags, &args.predictor);
            cmd_map(args, Settings::resolve(flags, file)?)
        }
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => {
            flags.seed = args.seed;
            let settings = Settings::resolve(flags, file)?;
            cmd_synth(args, settings.seed)
        }
        Command::Pairs(args) => {
            flags.seed = args.seed;
            let settings = Settings::resolve(flags, file)?;
            cmd_pairs(args, settings.seed)
        }
    }
}

fn absorb_backend(flags: &mut FlagValues, b: &BackendOpts) {
    flags.backend = b.backend;
}

fn absorb_cluster(flags: &mut FlagValues, c: &ClusterOpts) {
    flags.tau = c.tau;
    flags.seed = c.seed;
    flags.rules = c.rules.clone();
}

fn absorb_predictor(flags: &mut FlagValues, p: &PredictorOpts) {
    flags.predictor = p.predictor;
    flags.endpoint = p.endpoint.clone();
    flags.retries = p.retries;
}

fn options(settings: &Settings) -> PipelineOptions {
    PipelineOptions {
        rules: settings.rules.clone(),
        tau: settings.tau,
        seed: settings.seed,
        parallelism: 1,
    }
}

/// Input file locations for one property.
struct Inputs {
    catalog: PathBuf,
    scores: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    weights: Option<PathBuf>,
    truth: Option<PathBuf>,
}

impl Inputs {
    /// Flag paths are used as given, or joined onto `dir` in batch mode
    /// where they default to the standard file names.
    fn resolve(dir: Option<&Path>, catalog: Option<&Path>, b: &BackendOpts, p: &PredictorOpts) -> Self {
        let pick = |given: &Option<PathBuf>, default: &str| -> Option<PathBuf> {
            match (dir, given) {
                (Some(d), Some(g)) => Some(d.join(g)),
                (Some(d), None) => Some(d.join(default)),
                (None, g) => g.clone(),
            }
        };
        Inputs {
            catalog: match dir {
                Some(d) => d.join("catalog.json"),
                None => catalog.expect("clap requires --catalog without --batch").to_path_buf(),
            },
            scores: pick(&b.scores, "scores.csv"),
            embeddings: pick(&b.embeddings, "embeddings.rgec"),
            weights: pick(&b.weights, "weights.json"),
            truth: pick(&p.truth, "truth.json"),
        }
    }

    fn check(&self, settings: &Settings) -> Result<(), CliError> {
        require_file("--catalog", &self.catalog)?;
        match settings.backend {
            BackendKind::Precomputed => require_file("--scores", required("--scores", &self.scores, "--backend precomputed")?)?,
            BackendKind::Head => {
                require_file("--embeddings", required("--embeddings", &self.embeddings, "--backend head")?)?;
                require_file("--weights", required("--weights", &self.weights, "--backend head")?)?;
            }
        }
        check_predictor(settings, &self.truth)
    }
}

fn required<'a>(flag: &str, path: &'a Option<PathBuf>, because: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Config(format!("{flag}: required by {because}")))
}

fn check_predictor(settings: &Settings, truth: &Option<PathBuf>) -> Result<(), CliError> {
    match settings.predictor {
        PredictorKind::Oracle => require_file("--truth", required("--truth", truth, "--predictor oracle")?),
        PredictorKind::Remote if settings.endpoint.is_none() => {
            Err(CliError::Config("--endpoint: required by --predictor remote".into()))
        }
        _ => Ok(()),
    }
}

fn read_catalog(path: &Path) -> Result<PropertyCatalog, CliError> {
    load_catalog(path).map_err(|e| CliError::data(path.display(), e))
}

fn read_truth(path: &Path) -> Result<GroundTruth, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
    GroundTruth::from_json(&text).map_err(|e| CliError::data(path.display(), e))
}

fn make_backend(settings: &Settings, inputs: &Inputs) -> Result<ScorerBackend, CliError> {
    match settings.backend {
        BackendKind::Precomputed => {
            let path = inputs.scores.as_deref().expect("checked");
            let scores = PairScores::load(path).map_err(|e| CliError::data(path.display(), e))?;
            Ok(ScorerBackend::direct(scores))
        }
        BackendKind::Head => {
            let epath = inputs.embeddings.as_deref().expect("checked");
            let wpath = inputs.weights.as_deref().expect("checked");
            let embeddings = read_embedding_cache(epath).map_err(|e| CliError::data(epath.display(), e))?;
            let weights = load_head_weights(wpath).map_err(|e| CliError::data(wpath.display(), e))?;
            let head = LinearHead::new(weights, embeddings).map_err(|e| CliError::data(epath.display(), e))?;
            Ok(ScorerBackend::embedding(head))
        }
    }
}

fn make_predictor(settings: &Settings, truth: &Option<PathBuf>) -> Result<Box<dyn Predictor>, CliError> {
    Ok(match settings.predictor {
        PredictorKind::FirstOption => Box::new(FirstOption),
        PredictorKind::Oracle => {
            let truth = read_truth(truth.as_deref().expect("checked"))?;
            let by_image = truth
                .images
                .iter()
                .filter(|(_, t)| t.pose.room_type == RoomType::Bedroom)
                .filter_map(|(id, t)| truth.bed_type(t.pose.room_index).map(|b| (id.clone(), b.to_owned())))
                .collect::<Vec<_>>();
            Box::new(OracleFromTruth::by_image(by_image))
        }
        PredictorKind::Remote => Box::new(RemoteService::new(
            settings.endpoint.clone().expect("checked"),
            settings.retries,
            settings.timeout,
        )),
    })
}

struct PropertyResult {
    grouping: GroupingOutput,
    summary: String,
}

fn summarize(g: &GroupingOutput) -> String {
    let mut parts: Vec<String> = g
        .room_types
        .iter()
        .map(|(rt, groups)| {
            let images: usize = groups.iter().map(|x| x.image_ids.len()).sum();
            let mapped = groups.iter().filter(|x| x.bed_type.is_some()).count();
            let beds = if mapped > 0 { format!(", {mapped} bed types") } else { String::new() };
            format!("{rt}: {} groups / {images} images{beds}", groups.len())
        })
        .collect();
    parts.push(format!("{} unassigned", g.unassigned.len()));
    format!("{}: {}", g.property_id, parts.join("; "))
}

fn pipeline_one(inputs: &Inputs, settings: &Settings, diags: &mut Vec<Diagnostic>) -> Result<PropertyResult, CliError> {
    let catalog = read_catalog(&inputs.catalog)?;
    let backend = make_backend(settings, inputs)?;
    let mut predictor = make_predictor(settings, &inputs.truth)?;
    let run = run_property(&catalog, &backend, predictor.as_mut(), &options(settings), diags)?;
    let calls: (usize, usize) = run
        .scored
        .accounting
        .values()
        .fold((0, 0), |(e, h), c| (e + c.encoder_calls, h + c.head_calls));
    let summary = format!("{} ({} encoder / {} head calls)", summarize(&run.grouping), calls.0, calls.1);
    Ok(PropertyResult {
        grouping: run.grouping,
        summary,
    })
}

fn property_dirs(batch: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(batch).map_err(|e| CliError::Config(format!("--batch: {}: {e}", batch.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("catalog.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Config(format!(
            "--batch: no property directories with catalog.json in {}",
            batch.display()
        )));
    }
    Ok(dirs)
}

fn cmd_pipeline(args: PipelineArgs, settings: Settings) -> Result<(), CliError> {
    let Some(batch) = &args.batch else {
        let inputs = Inputs::resolve(None, args.catalog.as_deref(), &args.backend, &args.predictor);
        inputs.check(&settings)?;
        let mut diags = Vec::new();
        let result = pipeline_one(&inputs, &settings, &mut diags);
        emit(&diags);
        let result = result?;
        write_grouping(&result.grouping, &args.out).map_err(|e| CliError::data(args.out.display(), e))?;
        println!("{}", result.summary);
        return Ok(());
    };

    let dirs = property_dirs(batch)?;
    let jobs: Vec<Inputs> = dirs
        .iter()
        .map(|d| Inputs::resolve(Some(d), None, &args.backend, &args.predictor))
        .collect();
    for inputs in &jobs {
        inputs.check(&settings)?;
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::Config(format!("--out: {}: {e}", args.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let results: Vec<(Result<PropertyResult, CliError>, Vec<Diagnostic>)> = pool.install(|| {
        jobs.par_iter()
            .map(|inputs| {
                let mut diags = Vec::new();
                let r = pipeline_one(inputs, &settings, &mut diags);
                (r, diags)
            })
            .collect()
    });

    let mut first_error = None;
    for (dir, (result, diags)) in dirs.iter().zip(results) {
        emit(&diags);
        match result {
            Ok(r) => {
                let name = dir.file_name().expect("directory entry").to_string_lossy();
                let out = args.out.join(format!("{name}.json"));
                write_grouping(&r.grouping, &out).map_err(|e| CliError::data(out.display(), e))?;
                println!("{}", r.summary);
            }
            Err(e) => {
                emit(&[Diagnostic::new(Level::Error, &dir.display().to_string(), "pipeline", e.to_string())]);
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn cmd_score(args: ScoreArgs, settings: Settings) -> Result<(), CliError> {
    let inputs = Inputs::resolve(None, Some(&args.catalog), &args.backend, &PredictorOpts::default());
    let settings = Settings {
        predictor: PredictorKind::FirstOption,
        ..settings
    };
    inputs.check(&settings)?;
    let catalog = read_catalog(&inputs.catalog)?;
    let backend = make_backend(&settings, &inputs)?;
    let mut diags = Vec::new();
    let scored = score_property(&catalog, &backend, &options(&settings), &mut diags);
    emit(&diags);
    let scored = scored?;
    write_pair_scores(scored.matrices.values(), &args.out).map_err(|e| CliError::data(args.out.display(), e))?;
    for (rt, calls) in &scored.accounting {
        println!(
            "{}: {rt}: {} images, {} encoder / {} head calls",
            catalog.property_id,
            scored.matrices[rt].len(),
            calls.encoder_calls,
            calls.head_calls
        );
    }
    Ok(())
}

fn cmd_cluster(args: ClusterArgs, settings: Settings) -> Result<(), CliError> {
    require_file("--catalog", &args.catalog)?;
    require_file("--scores", &args.scores)?;
    let catalog = read_catalog(&args.catalog)?;
    let scores = PairScores::load(&args.scores).map_err(|e| CliError::data(args.scores.display(), e))?;
    let opts = options(&settings);
    let mut diags = Vec::new();
    let result = score_property(&catalog, &ScorerBackend::direct(scores), &opts, &mut diags)
        .and_then(|scored| cluster_property(&catalog, &scored.matrices, &opts, &mut diags));
    emit(&diags);
    let grouping = result?;
    write_grouping(&grouping, &args.out).map_err(|e| CliError::data(args.out.display(), e))?;
    println!("{}", summarize(&grouping));
    Ok(())
}

fn cmd_map(args: MapArgs, settings: Settings) -> Result<(), CliError> {
    require_file("--catalog", &args.catalog)?;
    require_file("--grouping", &args.grouping)?;
    check_predictor(&settings, &args.predictor.truth)?;
    let catalog = read_catalog(&args.catalog)?;
    let mut grouping = read_grouping(&args.grouping).map_err(|e| CliError::data(args.grouping.display(), e))?;
    if grouping.property_id != catalog.property_id {
        return Err(CliError::Data(format!(
            "grouping is for `{}` but catalog is `{}`",
            grouping.property_id, catalog.property_id
        )));
    }
    let mut predictor = make_predictor(&settings, &args.predictor.truth)?;
    let mut diags = Vec::new();
    let result = map_property(&catalog, &mut grouping, predictor.as_mut(), &mut diags);
    emit(&diags);
    result?;
    write_grouping(&grouping, &args.out).map_err(|e| CliError::data(args.out.display(), e))?;
    println!("{}", summarize(&grouping));
    Ok(())
}

/// `path` itself, or every `*.json` directly inside it.
fn json_files(flag: &str, path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::Config(format!("{flag}: {}: {e}", path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn truth_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::Config(format!("--truth: {}: {e}", path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path().join("truth.json"))
        .filter(|p| p.is_file())
        .collect();
    if path.join("truth.json").is_file() {
        files.push(path.join("truth.json"));
    }
    files.sort();
    Ok(files)
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let preds = json_files("--pred", &args.pred)?
        .iter()
        .map(|p| read_grouping(p).map_err(|e| CliError::data(p.display(), e)))
        .collect::<Result<Vec<_>, _>>()?;
    if preds.is_empty() {
        return Err(CliError::Config(format!("--pred: no grouping files in {}", args.pred.display())));
    }
    let mut truths = BTreeMap::new();
    for path in truth_files(&args.truth)? {
        let t = read_truth(&path)?;
        truths.insert(t.property_id.clone(), t);
    }
    let report = evaluate(&preds, &truths).map_err(|e| CliError::data("eval", e))?;
    fs::write(&args.out, report.to_json()).map_err(|e| CliError::data(args.out.display(), e))?;
    print!("accuracy {:.4} over {} properties", report.accuracy, report.properties.len());
    if let Some(o) = report.overall {
        print!(
            "; bedroom ARI normalized {:.4}, V-measure {:.4}",
            o.ari_normalized, o.v_measure
        );
    }
    println!();
    Ok(())
}

fn parse_rooms(arg: &str) -> Result<BTreeMap<RoomType, usize>, CliError> {
    let bad = |m: String| CliError::Config(format!("--rooms: {m}"));
    let mut rooms = BTreeMap::new();
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, count) = part.split_once('=').ok_or_else(|| bad(format!("expected TYPE=COUNT, got `{part}`")))?;
        let rt: RoomType = name.replace(['-', '_'], " ").parse().map_err(bad)?;
        let n: usize = count.trim().parse().map_err(|e| bad(format!("`{count}`: {e}")))?;
        rooms.insert(rt, n);
    }
    if rooms.is_empty() {
        return Err(bad("no rooms given".into()));
    }
    Ok(rooms)
}

fn parse_range(arg: &str) -> Result<RangeInclusive<usize>, CliError> {
    let bad = || CliError::Config(format!("--images-per-room: expected LOW..HIGH or N, got `{arg}`"));
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    match arg.split_once("..") {
        Some((lo, hi)) => Ok(parse(lo)?..=parse(hi.trim_start_matches('='))?),
        None => {
            let n = parse(arg)?;
            Ok(n..=n)
        }
    }
}

fn cmd_synth(args: SynthArgs, seed: u64) -> Result<(), CliError> {
    if args.properties == 0 {
        return Err(CliError::Config("--properties: must be at least 1".into()));
    }
    let mut base = SynthConfig {
        rooms_per_type: parse_rooms(&args.rooms)?,
        images_per_room: parse_range(&args.images_per_room)?,
        score_noise_sigma: args.noise,
        seed,
        ..SynthConfig::default()
    };
    if let Some(h) = args.heading_max {
        base.overlap_heading_max = h;
    }
    if let Some(v) = &args.bed_vocab {
        base.bed_vocab = v.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
    }
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;

    for i in 0..args.properties {
        let cfg = SynthConfig {
            property_id: format!("synth-{i:03}"),
            seed: seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let dir = if args.properties == 1 { args.out.clone() } else { args.out.join(&cfg.property_id) };
        fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("--out: {}: {e}", dir.display())))?;
        let (catalog, truth) = generate_property(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let (embeddings, weights) = synth_embeddings_and_weights(&truth);
        let refs: Vec<ImageRef> = catalog.images.iter().map(|i| ImageRef::new(&i.image_id, &i.uri)).collect();
        let backend = ScorerBackend::direct(SyntheticOracle::new(&truth, &cfg));
        let (matrix, _) = build_overlap_matrix(&refs, &backend, 1).map_err(|e| CliError::data("synth", e))?;

        let write_err = |p: &Path, e: &dyn std::fmt::Display| CliError::data(p.display(), e);
        let p = dir.join("catalog.json");
        write_catalog(&catalog, &p).map_err(|e| write_err(&p, &e))?;
        let p = dir.join("truth.json");
        fs::write(&p, truth.to_json()).map_err(|e| write_err(&p, &e))?;
        let p = dir.join("embeddings.rgec");
        write_embedding_cache(&embeddings, &p).map_err(|e| write_err(&p, &e))?;
        let p = dir.join("weights.json");
        let mut w = serde_json::to_string_pretty(&weights).expect("weights serialize");
        w.push('\n');
        fs::write(&p, w).map_err(|e| write_err(&p, &e))?;
        let p = dir.join("scores.csv");
        write_pair_scores([&matrix], &p).map_err(|e| write_err(&p, &e))?;
        println!("{}: {} images -> {}", cfg.property_id, catalog.images.len(), dir.display());
    }
    Ok(())
}

fn cmd_pairs(args: PairsArgs, seed: u64) -> Result<(), CliError> {
    require_file("--truth", &args.truth)?;
    let truth = read_truth(&args.truth)?;
    let counts = ManifestCounts {
        self_supervised_pos: args.pos,
        negatives: args.neg,
        manual_slots: args.manual,
    };
    let manifest = generate_pair_manifest(&truth, counts, seed).map_err(|e| CliError::data(args.truth.display(), e))?;
    fs::write(&args.out, manifest.to_json()).map_err(|e| CliError::data(args.out.display(), e))?;
    println!("{}: {} pair rows", manifest.property_id, manifest.rows.len());
    Ok(())
}

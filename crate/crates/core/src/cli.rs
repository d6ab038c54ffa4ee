//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for bad configuration or unusable inputs
//! (missing paths, duplicate ids, corrupt sources), 1 for any other hard
//! error or an aborted run.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::annotator::{extract_controls_cached, AnnotationCache};
use crate::attributes::{detect_faces, write_face_records, ToyFaceDetector};
use crate::embedding::{read_embedding_file, read_embedding_jsonl};
use crate::error::{Error, Result};
use crate::evaluation::{
    dna_from_images, face_level_protocol, fid_from_images, image_level_protocol,
    reid_from_embeddings, EvaluationReport, NamedImage, Protocol, ToyActivationProvider,
    ToyImageEmbedder,
};
use crate::identity_pool::{build_pool, IdentityPool};
use crate::image::{letterbox, Image};
use crate::pipeline::{
    list_inputs, run_batch, Adapters, ConfigFile, PipelineConfig, RecordStatus, RunManifest,
    Variant, MANIFEST_FILE,
};

/// Overrides the annotation cache directory.
pub const CACHE_DIR_ENV: &str = "LDM_ANON_CACHE_DIR";

pub const REPORTS_DIR: &str = "reports";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const EVALUATION_TABLE: &str = "evaluation.txt";

#[derive(Debug, Parser)]
#[command(name = "ldm-anon", version, about = "Diffusion-based image anonymization and re-identification metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Anonymize every image in a directory.
    #[command(after_long_help = concat!(
        "CONFIG FILE (TOML, every key optional except schema_version):\n\n",
        include_str!("../config/anonymize.toml")
    ))]
    Anonymize(AnonymizeArgs),
    /// Build an identity pool file from a JSONL embedding source.
    BuildPool(BuildPoolArgs),
    /// Run annotators and the face detector, filling the annotation cache.
    Extract(ExtractArgs),
    /// Compare real and anonymized images (or embedding files).
    Evaluate(EvaluateArgs),
    /// Print the summary of an output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    /// TOML config; see the schema below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["base", "light"])]
    pub variant: Option<String>,
    /// Anonymization scale.
    #[arg(long = "as", value_name = "A_S")]
    pub a_s: Option<f64>,
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validate the config and list inputs without processing.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Read and write the annotation cache.
    #[arg(long)]
    pub reuse_cache: bool,
    /// Identity pool file (light variant).
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildPoolArgs {
    /// JSONL lines of {"id": ..., "embedding": [...]}.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long = "out", value_name = "FILE")]
    pub output: PathBuf,
    /// Provider tag stored in the file header.
    #[arg(long, default_value = "jsonl")]
    pub provider: String,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "DIR")]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Reid,
    Fid,
    Dna,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Face,
    Image,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnpairedPolicy {
    /// List unpaired ids in the report and leave them out.
    Exclude,
    /// Fail when any id is unpaired.
    Error,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(value_enum, default_value = "all")]
    pub metric: Metric,
    /// Directory of real images, or an embedding file.
    #[arg(long)]
    pub real: PathBuf,
    /// Directory of anonymized images, or an embedding file.
    #[arg(long)]
    pub anon: PathBuf,
    /// Where reports/ is written; nothing is written when omitted.
    #[arg(long = "out", value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub protocol: ProtocolArg,
    #[arg(long, value_enum, default_value = "exclude")]
    pub unpaired: UnpairedPolicy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of an anonymize or evaluate run.
    pub dir: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::InvalidRecord { .. } | Error::CorruptFile { .. } => 2,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Anonymize(a) => cmd_anonymize(a),
        Command::BuildPool(a) => cmd_build_pool(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_config_file(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn cache_dir(config: &PipelineConfig, out: &Path) -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| config.cache_dir.clone())
        .unwrap_or_else(|| out.join("cache"))
}

pub fn cmd_anonymize(args: AnonymizeArgs) -> Result<i32> {
    let mut file = load_config_file(args.config.as_deref())?;
    if let Some(v) = &args.variant {
        file.variant = Some(v.parse::<Variant>()?);
    }
    file.a_s = args.a_s.or(file.a_s);
    file.seed = args.seed.or(file.seed);
    file.workers = args.workers.or(file.workers);
    file.pool_path = args.pool.clone().or(file.pool_path);
    let config = file.resolve()?;
    let inputs = list_inputs(&args.input)?;

    if args.dry_run {
        println!(
            "config ok: variant {}, a_s {}, {} steps, noise {}, resolution {}, hash {}",
            config.variant.as_str(),
            config.a_s,
            config.steps,
            config.noise_strength,
            config.resolution,
            config.config_hash()
        );
        println!("{} input image(s); dry run, nothing processed", inputs.len());
        return Ok(0);
    }

    let mut adapters = Adapters::toy(config.seed);
    if let Some(path) = &config.pool_path {
        adapters = adapters.with_pool(IdentityPool::load(path)?);
    }
    if args.reuse_cache {
        adapters = adapters.with_cache(AnnotationCache::new(cache_dir(&config, &args.output)));
    }
    let outcome = run_batch(&inputs, &config, &adapters, &args.output)?;
    let s = outcome.manifest.summary;
    let mean = outcome
        .mean_seconds()
        .map_or_else(|| "n/a".to_string(), |m| format!("{m:.3} s/image"));
    println!(
        "processed {} of {} image(s), skipped {} (failed {}, aborted {}), mean {mean}",
        s.processed,
        s.total,
        s.failed + s.aborted,
        s.failed,
        s.aborted
    );
    for r in &outcome.manifest.records {
        if r.status == RecordStatus::Failed {
            eprintln!("failed: {}: {}", r.input, r.error.as_deref().unwrap_or(""));
        }
    }
    println!("manifest: {}", args.output.join(MANIFEST_FILE).display());
    Ok(if s.aborted > 0 { 1 } else { 0 })
}

pub fn cmd_build_pool(args: BuildPoolArgs) -> Result<i32> {
    let bytes = fs::read(&args.source)?;
    let set = read_embedding_jsonl(BufReader::new(bytes.as_slice()), &args.source, &args.provider)?;
    let pool = build_pool(&set)?.with_source_hash(hex::encode(Sha256::digest(&bytes)));
    pool.save(&args.output)?;
    println!("pool: {} identities, dimension {}", pool.len(), pool.dim());
    Ok(0)
}

#[derive(Serialize)]
struct ExtractRecord {
    input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_hash: Option<String>,
    faces: usize,
    controls: Vec<String>,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_extract(args: ExtractArgs) -> Result<i32> {
    let mut file = load_config_file(args.config.as_deref())?;
    file.seed = args.seed.or(file.seed);
    let config = file.resolve()?;
    let inputs = list_inputs(&args.input)?;
    fs::create_dir_all(&args.output)?;
    let adapters = Adapters::toy(config.seed);
    let cache = AnnotationCache::new(cache_dir(&config, &args.output));
    let detector = ToyFaceDetector::new(config.seed);

    let mut faces_out = Vec::new();
    let mut records = Vec::new();
    for item in &inputs {
        let mut rec = ExtractRecord {
            input: item.id.clone(),
            input_hash: None,
            faces: 0,
            controls: Vec::new(),
            warnings: Vec::new(),
            error: None,
        };
        let result = Image::load(&item.path).and_then(|img| {
            rec.input_hash = Some(img.content_hash());
            let (boxed, _) = letterbox(&img, config.resolution);
            let controls =
                extract_controls_cached(&boxed, &adapters.extractors, &config.controls, Some(&cache))?;
            rec.controls = controls.iter().map(|c| c.kind().to_string()).collect();
            let detection = detect_faces(&boxed, &detector);
            rec.faces = detection.faces.len();
            rec.warnings = detection.warnings;
            write_face_records(&mut faces_out, &item.id, &detection.faces)
        });
        if let Err(e) = result {
            eprintln!("failed: {}: {e}", item.id);
            rec.error = Some(e.to_string());
        }
        records.push(rec);
    }
    fs::write(args.output.join("faces.jsonl"), &faces_out)?;
    fs::write(args.output.join(MANIFEST_FILE), serde_json::to_vec_pretty(&records)?)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "extracted {} of {} image(s); cache at {}",
        records.len() - failed,
        records.len(),
        cache.root().display()
    );
    Ok(0)
}

/// Images in `dir` keyed by file stem. Unreadable files are reported and
/// left out.
fn load_named_images(dir: &Path) -> Result<Vec<NamedImage>> {
    let mut out = Vec::new();
    for item in list_inputs(dir)? {
        let stem = item
            .path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&item.id)
            .to_owned();
        match Image::load(&item.path) {
            Ok(img) => out.push(NamedImage::new(stem, img)),
            Err(e) => eprintln!("skipping {}: {e}", item.path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no readable images in {}", dir.display())));
    }
    Ok(out)
}

fn check_unpaired(unpaired: &[String], policy: UnpairedPolicy) -> Result<()> {
    if unpaired.is_empty() {
        return Ok(());
    }
    eprintln!("unpaired ids: {}", unpaired.join(", "));
    match policy {
        UnpairedPolicy::Exclude => Ok(()),
        UnpairedPolicy::Error => Err(Error::Protocol(format!(
            "{} anonymized id(s) have no real counterpart",
            unpaired.len()
        ))),
    }
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    if !args.real.exists() {
        return Err(Error::Config(format!("{} does not exist", args.real.display())));
    }
    if !args.anon.exists() {
        return Err(Error::Config(format!("{} does not exist", args.anon.display())));
    }
    let wants = |m: Metric| args.metric == m || args.metric == Metric::All;
    let mut report = EvaluationReport::default();

    if args.real.is_file() || args.anon.is_file() {
        // Precomputed embeddings: retrieval only.
        if !wants(Metric::Reid) {
            return Err(Error::Config("embedding files support only the reid metric".into()));
        }
        let (real, _) = read_embedding_file(&args.real)?;
        let (anon, _) = read_embedding_file(&args.anon)?;
        let protocol = match args.protocol {
            ProtocolArg::Face => Protocol::FaceLevel,
            _ => Protocol::ImageLevel,
        };
        let r = reid_from_embeddings(&real, &anon, protocol)?;
        check_unpaired(&r.unpaired, args.unpaired)?;
        match protocol {
            Protocol::FaceLevel => report.face_level = Some(r),
            Protocol::ImageLevel => report.image_level = Some(r),
        }
    } else {
        let real = load_named_images(&args.real)?;
        let anon = load_named_images(&args.anon)?;
        if wants(Metric::Reid) {
            if matches!(args.protocol, ProtocolArg::Face | ProtocolArg::Both) {
                let detector = ToyFaceDetector::new(args.seed);
                let r = face_level_protocol(&real, &anon, &detector, detector.encoder())?;
                check_unpaired(&r.unpaired, args.unpaired)?;
                report.face_level = Some(r);
            }
            if matches!(args.protocol, ProtocolArg::Image | ProtocolArg::Both) {
                let r = image_level_protocol(&real, &anon, &ToyImageEmbedder::new(args.seed))?;
                check_unpaired(&r.unpaired, args.unpaired)?;
                report.image_level = Some(r);
            }
        }
        if wants(Metric::Fid) {
            report.fid = Some(fid_from_images(&real, &anon, &ToyImageEmbedder::new(args.seed))?);
        }
        if wants(Metric::Dna) {
            report.visual_dna = Some(dna_from_images(&real, &anon, &ToyActivationProvider::new(args.seed))?);
        }
    }

    let table = report.to_table();
    print!("{table}");
    let _ = std::io::stdout().flush();
    if let Some(out) = &args.output {
        let dir = out.join(REPORTS_DIR);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(EVALUATION_JSON), serde_json::to_vec_pretty(&report)?)?;
        fs::write(dir.join(EVALUATION_TABLE), table)?;
    }
    Ok(0)
}

pub fn cmd_report(args: ReportArgs) -> Result<i32> {
    if !args.dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", args.dir.display())));
    }
    let manifest_path = args.dir.join(MANIFEST_FILE);
    let eval_path = args.dir.join(REPORTS_DIR).join(EVALUATION_JSON);
    let mut found = false;
    if let Ok(manifest) = RunManifest::load(&manifest_path) {
        found = true;
        let s = manifest.summary;
        println!(
            "run: variant {}, a_s {}, seed {}, config {}",
            manifest.variant.as_str(),
            manifest.a_s,
            manifest.run_seed,
            &manifest.config_hash[..12]
        );
        println!(
            "images: {} total, {} processed, {} failed, {} aborted",
            s.total, s.processed, s.failed, s.aborted
        );
        let warnings: usize = manifest.records.iter().map(|r| r.warnings.len()).sum();
        println!("warnings: {warnings}");
    }
    if eval_path.is_file() {
        found = true;
        let report: EvaluationReport = serde_json::from_slice(&fs::read(&eval_path)?)?;
        print!("{}", report.to_table());
    }
    if !found {
        return Err(Error::Config(format!(
            "{} holds neither {MANIFEST_FILE} nor {REPORTS_DIR}/{EVALUATION_JSON}",
            args.dir.display()
        )));
    }
    Ok(0)
}

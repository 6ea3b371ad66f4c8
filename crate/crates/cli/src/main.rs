//! `critiq` — guideline-compliance critique of patient records.
//!
//! Subcommands:
//! - `validate`: check a knowledge library and report every finding.
//! - `analyze`: critique patient records against the library's plans.
//! - `abstract`: evaluate one abstract concept over time as graded intervals.
//! - `synth`: generate a seeded synthetic cohort with a ground-truth manifest.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or usage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use critiq_core::engine::{analyze_patient, EngineConfig, PreparedKnowledge};
use critiq_core::fuzzy::{default_analysis_window, evaluate_concept};
use critiq_core::ingest::{ingest_patient_records, load_mapping, MappingTable, PatientRecord};
use critiq_core::knowledge::validate::validate_library;
use critiq_core::knowledge::wire::{parse_knowledge_library, serialize_library};
use critiq_core::report::{render_abstraction_csv, render_json, render_text};
use critiq_core::synth::{generate_synthetic_cohort, ScenarioKind, ScenarioSpec};
use critiq_core::time::parse_timestamp;
use critiq_core::{KnowledgeLibrary, Span};

// ── Failure handling ─────────────────────────────────────────────────────────

/// Every way a subcommand can fail, mapped onto the two error exit codes.
enum Failure {
    /// The environment failed us: unreadable files, unwritable directories.
    Io(String),
    /// The inputs failed us: malformed or semantically invalid documents,
    /// unknown ids, out-of-range options.
    Invalid(String),
}

type RunResult<T> = Result<T, Failure>;

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(msg) | Failure::Invalid(msg) => msg,
        }
    }
}

fn io_failure(path: &Path, err: impl Display) -> Failure {
    Failure::Io(format!("{}: {err}", path.display()))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

// ── Command line ─────────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(name = "critiq", version, about = "Critique patient records against formal guideline knowledge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a knowledge library and report every finding
    Validate(ValidateArgs),
    /// Critique patient records against the library's guideline plans
    Analyze(AnalyzeArgs),
    /// Evaluate one abstract concept over a record as graded intervals (CSV)
    Abstract(AbstractArgs),
    /// Generate a seeded synthetic cohort with a ground-truth manifest
    Synth(SynthArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Knowledge library JSON document
    #[arg(long, visible_alias = "knowledge", value_name = "FILE")]
    library: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Knowledge library JSON document
    #[arg(long, visible_alias = "knowledge", value_name = "FILE")]
    library: PathBuf,
    /// Patient data CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// External-to-internal concept mapping CSV (identity mapping when omitted)
    #[arg(long, value_name = "FILE")]
    mapping: Option<PathBuf>,
    /// Engine configuration JSON (defaults apply when omitted)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for per-patient report files (stdout when omitted)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Analysis window as `START..END` in RFC 3339 (per-record default when omitted)
    #[arg(long, value_name = "SPAN")]
    window: Option<String>,
    /// Restrict the run to this patient id (repeatable)
    #[arg(long = "patient", value_name = "ID")]
    patients: Vec<String>,
    /// Override the acceptance threshold for condition intervals
    #[arg(long, value_name = "0..=1")]
    threshold: Option<f64>,
    /// Override the medication-coverage threshold for escalation suppression
    #[arg(long, value_name = "0..=1")]
    compliance_threshold: Option<f64>,
    /// Worker threads for per-patient analysis (all cores when omitted)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Attach the reasoning timeline to each report
    #[arg(long)]
    debug: bool,
}

#[derive(Args)]
struct AbstractArgs {
    /// Knowledge library JSON document
    #[arg(long, visible_alias = "knowledge", value_name = "FILE")]
    library: PathBuf,
    /// Patient data CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// External-to-internal concept mapping CSV (identity mapping when omitted)
    #[arg(long, value_name = "FILE")]
    mapping: Option<PathBuf>,
    /// Abstract concept to evaluate
    #[arg(long, value_name = "ID")]
    concept: String,
    /// Analysis window as `START..END` in RFC 3339 (per-record default when omitted)
    #[arg(long, value_name = "SPAN")]
    window: Option<String>,
    /// Restrict the run to this patient id (repeatable)
    #[arg(long = "patient", value_name = "ID")]
    patients: Vec<String>,
    /// Output CSV file (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario family to generate
    #[arg(long, value_enum)]
    scenario: Scenario,
    /// Cohort size; variants cycle deterministically across patients
    #[arg(long, default_value_t = 9)]
    patients: usize,
    /// RNG seed; same seed, same cohort
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for library.json, mapping.csv, cohort.csv, manifest.json
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Text => "txt",
        }
    }

    fn render(self, report: &critiq_core::engine::CritiqueReport) -> String {
        match self {
            Format::Json => render_json(report),
            Format::Text => render_text(report),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Taxonomy,
    DrugEscalation,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> ScenarioKind {
        match s {
            Scenario::Taxonomy => ScenarioKind::Taxonomy,
            Scenario::DrugEscalation => ScenarioKind::DrugEscalation,
        }
    }
}

// ── Shared loading helpers ───────────────────────────────────────────────────

fn read_file(path: &Path) -> RunResult<String> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

/// Parse and validate a library document. Warnings go to stderr and the run
/// continues; errors abort with the findings on stderr.
fn load_library(path: &Path) -> RunResult<KnowledgeLibrary> {
    let text = read_file(path)?;
    let lib = parse_knowledge_library(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let report = validate_library(&lib);
    for finding in &report.findings {
        eprintln!("{finding}");
    }
    if report.has_errors() {
        let n = report.errors().count();
        return Err(invalid(format!(
            "{}: library has {n} validation error(s)",
            path.display()
        )));
    }
    Ok(lib)
}

fn load_mapping_table(path: Option<&Path>, lib: &KnowledgeLibrary) -> RunResult<MappingTable> {
    match path {
        None => Ok(MappingTable::Identity),
        Some(path) => {
            let file = File::open(path).map_err(|e| io_failure(path, e))?;
            load_mapping(BufReader::new(file), lib)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))
        }
    }
}

/// Ingest the data CSV, echo row-level diagnostics to stderr, and optionally
/// narrow the cohort to explicitly requested patient ids.
fn load_records(
    data: &Path,
    mapping: Option<&Path>,
    lib: &KnowledgeLibrary,
    only_patients: &[String],
) -> RunResult<Vec<PatientRecord>> {
    let table = load_mapping_table(mapping, lib)?;
    let file = File::open(data).map_err(|e| io_failure(data, e))?;
    let (records, report) = ingest_patient_records(BufReader::new(file), &table, lib)
        .map_err(|e| invalid(format!("{}: {e}", data.display())))?;
    for skip in report.skipped.iter().chain(report.unmapped.iter()) {
        eprintln!("{}: row {}: skipped: {}", data.display(), skip.row, skip.reason);
    }
    if only_patients.is_empty() {
        return Ok(records);
    }
    let wanted: BTreeSet<&str> = only_patients.iter().map(String::as_str).collect();
    let have: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let missing: Vec<&str> = wanted.difference(&have).copied().collect();
    if !missing.is_empty() {
        return Err(invalid(format!(
            "{}: no data for requested patient(s): {}",
            data.display(),
            missing.join(", ")
        )));
    }
    Ok(records
        .into_iter()
        .filter(|r| wanted.contains(r.patient_id.as_str()))
        .collect())
}

fn parse_window(text: &str) -> RunResult<Span> {
    let err = || {
        invalid(format!(
            "invalid --window '{text}': expected START..END with RFC 3339 timestamps"
        ))
    };
    let (start, end) = text.split_once("..").ok_or_else(err)?;
    let start = parse_timestamp(start.trim()).map_err(|_| err())?;
    let end = parse_timestamp(end.trim()).map_err(|_| err())?;
    Span::new(start, end).ok_or_else(|| invalid(format!("invalid --window '{text}': end precedes start")))
}

fn check_unit_range(value: Option<f64>, flag: &str) -> RunResult<()> {
    match value {
        Some(v) if !(0.0..=1.0).contains(&v) => {
            Err(invalid(format!("{flag} must be within 0..=1, got {v}")))
        }
        _ => Ok(()),
    }
}

/// Write via a sibling temp file and rename so a failed run never leaves a
/// partial file at the destination.
fn write_atomic(path: &Path, contents: &str) -> RunResult<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| invalid(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(&format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).map_err(|e| io_failure(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_failure(path, e)
    })
}

/// Keep report filenames inside the output directory no matter what the
/// patient id contains.
fn sanitize_file_stem(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| match c {
            '/' | '\\' | ':' | '*' | '?' | '"' | '<' | '>' | '|' => '_',
            c if c.is_control() => '_',
            c => c,
        })
        .collect();
    if cleaned.is_empty() || cleaned == "." || cleaned == ".." {
        "_".to_string()
    } else {
        cleaned
    }
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn run_validate(args: &ValidateArgs) -> RunResult<()> {
    let lib = load_library(&args.library)?;
    let paths = critiq_core::knowledge::flatten_guideline_paths(&lib);
    println!(
        "ok: {} concepts, {} plans, {} plan paths",
        lib.concepts.len(),
        lib.plans.len(),
        paths.len()
    );
    Ok(())
}

fn load_config(args: &AnalyzeArgs) -> RunResult<EngineConfig> {
    check_unit_range(args.threshold, "--threshold")?;
    check_unit_range(args.compliance_threshold, "--compliance-threshold")?;
    let mut config = match &args.config {
        None => EngineConfig::default(),
        Some(path) => {
            let text = read_file(path)?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(t) = args.threshold {
        config.acceptance_threshold = t;
    }
    if let Some(t) = args.compliance_threshold {
        config.compliance_threshold = t;
    }
    if args.debug {
        config.debug = true;
    }
    Ok(config)
}

fn run_analyze(args: &AnalyzeArgs) -> RunResult<()> {
    let lib = load_library(&args.library)?;
    let config = load_config(args)?;
    let window = args.window.as_deref().map(parse_window).transpose()?;
    let records = load_records(&args.data, args.mapping.as_deref(), &lib, &args.patients)?;
    let prepared = PreparedKnowledge::prepare(lib);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Io(format!("failed to start worker pool: {e}")))?;
    let reports: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        records
            .par_iter()
            .map(|record| analyze_patient(&prepared, &config, record, window))
            .collect::<Result<_, _>>()
            .map_err(|e| invalid(format!("analysis failed: {e}")))
    })?;

    match &args.out {
        None => {
            for report in &reports {
                print!("{}", args.format.render(report));
            }
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            // Records are sorted by patient id, so writes are deterministic;
            // a filename collision after sanitizing would silently drop a
            // report, so refuse it instead.
            let mut names: BTreeMap<String, &str> = BTreeMap::new();
            for report in &reports {
                let name = format!(
                    "{}.report.{}",
                    sanitize_file_stem(&report.patient_id),
                    args.format.extension()
                );
                if let Some(prev) = names.insert(name.clone(), &report.patient_id) {
                    return Err(invalid(format!(
                        "patients '{prev}' and '{}' map to the same report file '{name}'",
                        report.patient_id
                    )));
                }
                write_atomic(&dir.join(name), &args.format.render(report))?;
            }
            eprintln!("wrote {} report(s) to {}", reports.len(), dir.display());
        }
    }
    Ok(())
}

fn run_abstract(args: &AbstractArgs) -> RunResult<()> {
    let lib = load_library(&args.library)?;
    let window = args.window.as_deref().map(parse_window).transpose()?;
    let records = load_records(&args.data, args.mapping.as_deref(), &lib, &args.patients)?;

    let mut csv = String::new();
    for record in &records {
        let record_window = match window.or_else(|| default_analysis_window(&lib, record)) {
            Some(w) => w,
            None => {
                eprintln!("{}: no observations, skipped", record.patient_id);
                continue;
            }
        };
        let intervals = evaluate_concept(&lib, &args.concept, record, record_window)
            .map_err(|e| invalid(format!("patient '{}': {e}", record.patient_id)))?;
        let rendered = render_abstraction_csv(&args.concept, &intervals);
        if csv.is_empty() {
            csv.push_str(&rendered);
        } else if let Some((_, rows)) = rendered.split_once('\n') {
            csv.push_str(rows);
        }
    }
    if csv.is_empty() {
        // Header-only output so downstream consumers always see the schema.
        csv = render_abstraction_csv(&args.concept, &[]);
    }

    match &args.out {
        None => print!("{csv}"),
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
            }
            write_atomic(path, &csv)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> RunResult<()> {
    let spec = ScenarioSpec {
        scenario: args.scenario.into(),
        patients: args.patients,
        seed: args.seed,
    };
    let cohort = generate_synthetic_cohort(&spec).map_err(|e| invalid(e.to_string()))?;

    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let manifest = serde_json::to_string_pretty(&cohort.manifest)
        .expect("manifest serializes") + "\n";
    write_atomic(&args.out.join("library.json"), &serialize_library(&cohort.library))?;
    write_atomic(&args.out.join("mapping.csv"), &cohort.mapping_csv)?;
    write_atomic(&args.out.join("cohort.csv"), &cohort.data_csv)?;
    write_atomic(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "generated {} patient(s) for scenario '{}' (seed {}) in {}",
        cohort.manifest.patients.len(),
        spec.scenario.as_str(),
        spec.seed,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(args) => run_validate(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Abstract(args) => run_abstract(args),
        Command::Synth(args) => run_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain failure (bad data, failed validation,
//! backend or store errors), 2 usage error. Every failure prints one JSON
//! object `{"error": kind, "message": text}` on a single stderr line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use url::Url;

use crate::backend::RecordStore;
use crate::config::{ConfigError, Overrides, RunConfig};
use crate::corpus::{
    self, CorpusError, Dataset, DatasetFormat, DatasetStats, FieldMap, Language, LoadOptions,
};
use crate::evaluator::{validate_published_row, UnparseablePolicy};
use crate::orchestrator::{self, ExecuteOptions, ReportFormat, RunStore};
use crate::parser::{parse_label, PredictedLabel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "satire-bench",
    version,
    about = "Satire detection benchmark harness for chat-completion models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summary statistics (entries, average words, class balance) per dataset.
    Stats(StatsArgs),
    /// Execute the experiment matrix described by a run configuration.
    Run(RunArgs),
    /// Per-cell metrics from a run store.
    Report(ReportArgs),
    /// Parse model responses into labels; checks agreement for annotated input.
    ParseCheck(ParseCheckArgs),
    /// Check F1 = 2PR/(P+R) for every row of a published metrics table.
    ValidateTable(ValidateTableArgs),
    /// Inspect a response cache.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Labelled dataset file (repeatable).
    #[arg(long = "dataset", value_name = "PATH")]
    pub datasets: Vec<PathBuf>,
    /// Pair of single-class files (satire, non-satire) combined into one dataset (repeatable).
    #[arg(long, num_args = 2, value_names = ["SATIRE", "NONSATIRE"], action = clap::ArgAction::Append)]
    pub merge: Vec<PathBuf>,
    /// Input format; inferred from the file extension when absent.
    #[arg(long, value_name = "jsonl|csv")]
    pub input_format: Option<String>,
    /// Column mapping, e.g. `text=body,label=is_satire`.
    #[arg(long)]
    pub map: Option<String>,
    /// Declared dataset language (en or ar).
    #[arg(long)]
    pub language: Option<String>,
    /// Dataset name; only valid with a single input.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_enum, default_value = "md")]
    pub output: OutputFormat,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (TOML or JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Run store (JSONL); created when missing, resumed otherwise.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Endpoint for every http backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name; requires a single configured backend.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_inflight: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Stop after persisting this many new records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Restrict to these backends (repeatable).
    #[arg(long = "backend")]
    pub backends: Vec<String>,
    /// Restrict to these datasets (repeatable).
    #[arg(long = "only-dataset")]
    pub only_datasets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    pub format: OutputFormat,
    #[arg(long, default_value = "count-as-wrong")]
    pub policy: String,
}

#[derive(Debug, Args)]
pub struct ParseCheckArgs {
    /// One response per line, or `expected<TAB>response` lines for an
    /// agreement check; `-` reads stdin. `\n` and `\t` in responses are
    /// unescaped. Lines starting with `#` are ignored.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateTableArgs {
    /// CSV with columns model,prompt,dataset,approach,accuracy,precision,recall,f1.
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Entry counts per model.
    Inspect {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Print the entry stored under a cache key.
    Get {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        key: String,
    },
}

/// A failure carrying its exit code and machine-readable kind.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    fn domain(kind: &'static str, message: impl ToString) -> CliError {
        CliError {
            code: EXIT_FAILURE,
            kind,
            message: message.to_string(),
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({"error": self.kind, "message": self.message}).to_string()
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::MissingFile(_) => CliError {
                code: EXIT_USAGE,
                kind: "usage",
                message: e.to_string(),
            },
            _ => CliError::domain("corpus", e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::NotFound(_) | ConfigError::Parse { .. } | ConfigError::Invalid(_) => {
                CliError::usage(e.to_string())
            }
            ConfigError::Dataset {
                source: CorpusError::MissingFile(_),
                ..
            } => CliError::usage(e.to_string()),
            _ => CliError::domain("config", e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::domain("io", e)
    }
}

type CliResult = Result<i32, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = write!(err, "{}", e.render());
            }
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            let _ = writeln!(err, "{}", CliError::usage(first).to_json_line());
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json_line());
            e.code
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match command {
        Command::Stats(a) => stats(a, out, err),
        Command::Run(a) => run(a, out, err),
        Command::Report(a) => report(a, out),
        Command::ParseCheck(a) => parse_check(a, out),
        Command::ValidateTable(a) => validate_table(a, out),
        Command::Cache(c) => cache(c, out),
    }
}

fn parse_policy(s: &str) -> Result<UnparseablePolicy, CliError> {
    s.parse()
        .map_err(|e: crate::evaluator::EvalError| CliError::usage(e.to_string()))
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn stats(a: StatsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let inputs = a.datasets.len() + a.merge.len() / 2;
    if inputs == 0 {
        return Err(CliError::usage(
            "stats needs at least one --dataset or --merge",
        ));
    }
    if a.name.is_some() && inputs > 1 {
        return Err(CliError::usage("--name applies to a single input only"));
    }
    let language = a
        .language
        .as_deref()
        .map(str::parse::<Language>)
        .transpose()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let fields = match &a.map {
        Some(m) => m
            .parse::<FieldMap>()
            .map_err(|e| CliError::usage(e.to_string()))?,
        None => FieldMap::default(),
    };
    let format = a
        .input_format
        .as_deref()
        .map(str::parse::<DatasetFormat>)
        .transpose()
        .map_err(|e| CliError::usage(e.to_string()))?;

    let mut load = |path: &Path, name: String| -> Result<Dataset, CliError> {
        let options = LoadOptions {
            name: Some(name),
            language,
            fields: fields.clone(),
        };
        let fmt = format.unwrap_or_else(|| DatasetFormat::from_path(path));
        let outcome = corpus::load_dataset(path, fmt, &options)?;
        for e in &outcome.rejected {
            let _ = writeln!(err, "warning: {}: {e}", path.display());
        }
        Ok(outcome.dataset)
    };

    let mut all = Vec::new();
    for p in &a.datasets {
        let name = a.name.clone().unwrap_or_else(|| file_stem(p));
        all.push(corpus::compute_stats(&load(p, name)?)?);
    }
    for pair in a.merge.chunks(2) {
        let (sp, np) = (&pair[0], &pair[1]);
        let sat = load(sp, file_stem(sp))?;
        let non = load(np, file_stem(np))?;
        let name = a
            .name
            .clone()
            .unwrap_or_else(|| format!("{}+{}", sat.name(), non.name()));
        all.push(corpus::compute_stats(&corpus::merge_balanced(
            &sat, &non, &name,
        )?)?);
    }
    let text = match a.output {
        OutputFormat::Md => stats_markdown(&all),
        OutputFormat::Csv => stats_csv(&all),
        OutputFormat::Json => serde_json::to_string_pretty(&all).expect("stats serialize") + "\n",
    };
    out.write_all(text.as_bytes())?;
    Ok(EXIT_OK)
}

/// Attributes as rows, datasets as columns.
pub fn stats_markdown(all: &[DatasetStats]) -> String {
    let row = |label: &str, f: &dyn Fn(&DatasetStats) -> String| {
        let cells: Vec<String> = all.iter().map(f).collect();
        format!("| {label} | {} |\n", cells.join(" | "))
    };
    let mut s = row("Attribute", &|d| d.name.clone());
    s.push_str(&format!("|---|{}\n", "---:|".repeat(all.len())));
    s.push_str(&row("Language", &|d| d.language.name().to_string()));
    s.push_str(&row("Number of Entries", &|d| d.n_entries.to_string()));
    s.push_str(&row("Average Words per Article", &|d| {
        d.avg_words_display().to_string()
    }));
    s.push_str(&row("Satire (%)", &|d| {
        format!("{} ({:.1}%)", d.n_satire, d.pct_satire)
    }));
    s.push_str(&row("Non-Satire (%)", &|d| {
        format!("{} ({:.1}%)", d.n_nonsatire, d.pct_nonsatire)
    }));
    s
}

fn stats_csv(all: &[DatasetStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "language",
        "entries",
        "avg_words",
        "satire",
        "pct_satire",
        "non_satire",
        "pct_non_satire",
    ])
    .expect("in-memory write");
    for d in all {
        w.write_record([
            d.name.clone(),
            d.language.code().to_string(),
            d.n_entries.to_string(),
            format!("{:.1}", d.avg_words),
            d.n_satire.to_string(),
            format!("{:.1}", d.pct_satire),
            d.n_nonsatire.to_string(),
            format!("{:.1}", d.pct_nonsatire),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut config = RunConfig::load(&a.config)?;
    let endpoint = a
        .endpoint
        .as_deref()
        .map(Url::parse)
        .transpose()
        .map_err(|e| CliError::usage(format!("--endpoint: {e}")))?;
    let policy = a.policy.as_deref().map(parse_policy).transpose()?;
    if a.max_inflight == Some(0) {
        return Err(CliError::usage("--max-inflight must be at least 1"));
    }
    config.apply(&Overrides {
        prompts_dir: a.prompts_dir,
        endpoint,
        model: a.model,
        max_inflight: a.max_inflight,
        seed: a.seed,
        sample_size: a.sample_size,
        policy,
    })?;
    if !a.backends.is_empty() {
        config.only_backends = Some(a.backends);
    }
    if !a.only_datasets.is_empty() {
        config.only_datasets = Some(a.only_datasets);
    }
    let plan = orchestrator::plan(&config).map_err(|e| CliError::usage(e.to_string()))?;
    let (harness, warnings) = config.build()?;
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let mut store = RunStore::open(&a.store).map_err(|e| CliError::domain("store", e))?;
    let summary = harness
        .execute_with(
            &plan,
            &mut store,
            ExecuteOptions {
                stop_after: a.limit,
            },
        )
        .map_err(|e| CliError::domain("run", e))?;
    writeln!(out, "{summary}")?;
    Ok(EXIT_OK)
}

fn report(a: ReportArgs, out: &mut dyn Write) -> CliResult {
    let policy = parse_policy(&a.policy)?;
    if !a.store.is_file() {
        return Err(CliError::usage(format!(
            "run store not found: {}",
            a.store.display()
        )));
    }
    let store = RunStore::open_existing(&a.store).map_err(|e| CliError::domain("store", e))?;
    let table =
        orchestrator::report(store.records(), policy).map_err(|e| CliError::domain("report", e))?;
    let format = match a.format {
        OutputFormat::Md => ReportFormat::Markdown,
        OutputFormat::Csv => ReportFormat::Csv,
        OutputFormat::Json => ReportFormat::Json,
    };
    out.write_all(table.render(format).as_bytes())?;
    Ok(EXIT_OK)
}

fn open_input(path: &Path) -> Result<Box<dyn Read>, CliError> {
    if path == Path::new("-") {
        return Ok(Box::new(std::io::stdin()));
    }
    std::fs::File::open(path)
        .map(|f| Box::new(f) as Box<dyn Read>)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn expected_label(s: &str) -> Option<PredictedLabel> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" => Some(PredictedLabel::Satire),
        "0" => Some(PredictedLabel::NonSatire),
        other => other.parse().ok(),
    }
}

fn parse_check(a: ParseCheckArgs, out: &mut dyn Write) -> CliResult {
    let reader = BufReader::new(open_input(&a.input)?);
    let (mut total, mut agree) = (0usize, 0usize);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((expected, response)) => {
                let want = expected_label(expected).ok_or_else(|| {
                    CliError::domain(
                        "input",
                        format!("line {}: unknown expected label {expected:?}", i + 1),
                    )
                })?;
                let got = parse_label(&unescape(response)).label;
                total += 1;
                let ok = got == want;
                agree += usize::from(ok);
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    i + 1,
                    want.as_str(),
                    got.as_str(),
                    if ok { "ok" } else { "MISMATCH" }
                )?;
            }
            None => {
                let p = parse_label(&unescape(&line));
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    i + 1,
                    p.label.as_str(),
                    p.matched_text().unwrap_or_default()
                )?;
            }
        }
    }
    if total > 0 {
        writeln!(
            out,
            "agreement: {agree}/{total} ({:.1}%)",
            100.0 * agree as f64 / total as f64
        )?;
        if agree < total {
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}

#[derive(Debug, serde::Deserialize)]
struct PublishedRow {
    model: String,
    prompt: String,
    dataset: String,
    approach: String,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn validate_table(a: ValidateTableArgs, out: &mut dyn Write) -> CliResult {
    let mut reader = csv::Reader::from_reader(open_input(&a.csv)?);
    let (mut total, mut consistent) = (0usize, 0usize);
    for (i, row) in reader.deserialize::<PublishedRow>().enumerate() {
        let row = row.map_err(|e| CliError::domain("input", format!("row {}: {e}", i + 1)))?;
        let v = validate_published_row(row.accuracy, row.precision, row.recall, row.f1)
            .map_err(|e| CliError::domain("input", format!("row {}: {e}", i + 1)))?;
        total += 1;
        consistent += usize::from(v.consistent);
        writeln!(
            out,
            "{} / {} / {} / {}: {} (published F1 {:.1}, recomputed {:.2}, deviation {:.4})",
            row.model,
            row.prompt,
            row.dataset,
            row.approach,
            if v.consistent {
                "consistent"
            } else {
                "inconsistent"
            },
            row.f1,
            v.recomputed_f1,
            v.deviation
        )?;
    }
    if total == 0 {
        return Err(CliError::domain("input", "table has no rows"));
    }
    writeln!(out, "{consistent}/{total} rows consistent")?;
    Ok(if consistent == total {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn cache(c: CacheCommand, out: &mut dyn Write) -> CliResult {
    let open = |p: &Path| {
        if !p.is_file() {
            return Err(CliError::usage(format!(
                "cache file not found: {}",
                p.display()
            )));
        }
        RecordStore::open(p).map_err(|e| CliError::domain("cache", e))
    };
    match c {
        CacheCommand::Inspect { cache } => {
            let store = open(&cache)?;
            let mut per_model = std::collections::BTreeMap::<String, usize>::new();
            for e in store.entries() {
                *per_model.entry(e.request.model.clone()).or_default() += 1;
            }
            writeln!(out, "{} entries", store.len())?;
            for (model, n) in per_model {
                writeln!(out, "{model}\t{n}")?;
            }
            Ok(EXIT_OK)
        }
        CacheCommand::Get { cache, key } => {
            let store = open(&cache)?;
            match store.lookup(&key) {
                Some(e) => {
                    writeln!(
                        out,
                        "{}",
                        serde_json::to_string_pretty(&e).expect("entry serializes")
                    )?;
                    Ok(EXIT_OK)
                }
                None => Err(CliError::domain(
                    "cache",
                    format!("no entry for cache_key {key}"),
                )),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("satire-bench").chain(args.iter().copied());
        let code = dispatch(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn help_on_every_subcommand() {
        for sub in [
            "stats",
            "run",
            "report",
            "parse-check",
            "validate-table",
            "cache",
        ] {
            let (code, out, _) = call(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("Usage"), "{sub}");
        }
    }

    #[test]
    fn unknown_subcommand_and_flag_are_usage_errors() {
        let (code, _, err) = call(&["frobnicate"]);
        assert_eq!(code, 2);
        let v: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
        assert_eq!(v["error"], "usage");
        let (code, _, _) = call(&["report", "--store", "x", "--bogus"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_config_names_the_path() {
        let (code, _, err) = call(&[
            "run",
            "--config",
            "/no/such/run.toml",
            "--store",
            "/tmp/x.jsonl",
        ]);
        assert_eq!(code, 2);
        assert_eq!(err.lines().count(), 1);
        assert!(err.contains("/no/such/run.toml"));
    }

    #[test]
    fn unescape_sequences() {
        assert_eq!(unescape(r"a\nb\tc\\d\q"), "a\nb\tc\\d\\q");
    }
}

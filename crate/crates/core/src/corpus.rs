//! Article corpora: loading, balancing, sampling and summary statistics.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

/// Language of an article or of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[serde(alias = "en")]
    English,
    #[serde(alias = "ar")]
    Arabic,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::English, Language::Arabic];

    /// Two-letter code used in file names and cell ids.
    pub fn code(self) -> &'static str {
        match self {
            Language::English => "en",
            Language::Arabic => "ar",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::English => "English",
            Language::Arabic => "Arabic",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "eng" | "english" => Ok(Language::English),
            "ar" | "ara" | "arabic" => Ok(Language::Arabic),
            other => Err(CorpusError::UnknownLanguage(other.to_string())),
        }
    }
}

/// Gold annotation of an article. Satire is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoldLabel {
    #[serde(rename = "satire")]
    Satire,
    #[serde(rename = "non-satire")]
    NonSatire,
}

impl GoldLabel {
    /// Accepts `0`/`1`, `satire`/`non-satire` (case-insensitive) and a few
    /// spelling variants seen in the source corpora.
    pub fn parse(raw: &str) -> Option<GoldLabel> {
        let s = raw.trim().to_lowercase();
        match s.as_str() {
            "1" | "satire" | "satirical" => Some(GoldLabel::Satire),
            "0" | "non-satire" | "nonsatire" | "non_satire" | "non satire" | "not satire"
            | "non-satirical" => Some(GoldLabel::NonSatire),
            _ => None,
        }
    }

    fn from_json(v: &Value) -> Option<GoldLabel> {
        match v {
            Value::Number(n) => match n.as_i64() {
                Some(1) => Some(GoldLabel::Satire),
                Some(0) => Some(GoldLabel::NonSatire),
                _ => None,
            },
            Value::Bool(true) => Some(GoldLabel::Satire),
            Value::Bool(false) => Some(GoldLabel::NonSatire),
            Value::String(s) => GoldLabel::parse(s),
            _ => None,
        }
    }

    pub fn is_satire(self) -> bool {
        self == GoldLabel::Satire
    }
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoldLabel::Satire => "satire",
            GoldLabel::NonSatire => "non-satire",
        })
    }
}

/// One news item with its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub text: String,
    pub language: Language,
    #[serde(rename = "label")]
    pub gold: GoldLabel,
    pub source: String,
}

impl Article {
    /// Builds an article, normalizing the text to NFC and trimming it.
    pub fn new(
        id: impl Into<String>,
        text: &str,
        language: Language,
        gold: GoldLabel,
        source: impl Into<String>,
    ) -> Result<Article, CorpusError> {
        let id = id.into();
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(CorpusError::EmptyText(id));
        }
        Ok(Article {
            id,
            text,
            language,
            gold,
            source: source.into(),
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("dataset {0} is empty")]
    EmptyDataset(String),
    #[error("article {0} has empty text")]
    EmptyText(String),
    #[error("duplicate article id {0}")]
    DuplicateId(String),
    #[error("article {id} is {found} but dataset {dataset} is {expected}")]
    LanguageMismatch {
        dataset: String,
        id: String,
        expected: Language,
        found: Language,
    },
    #[error("cannot merge {left} ({left_lang}) with {right} ({right_lang}): languages differ")]
    MergeLanguageMismatch {
        left: String,
        left_lang: Language,
        right: String,
        right_lang: Language,
    },
    #[error("dataset {dataset} must contain only {expected} articles, but {id} is {found}")]
    LabelPurity {
        dataset: String,
        id: String,
        expected: GoldLabel,
        found: GoldLabel,
    },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("language of {0} is unknown: no declared language and no language field")]
    UndeterminedLanguage(String),
    #[error("invalid field map {0:?}: expected key=column pairs with keys text,label,id,language,source")]
    BadFieldMap(String),
    #[error("unknown dataset format {0:?}")]
    UnknownFormat(String),
    #[error("cannot sample {requested} articles from {dataset} of size {available}")]
    SampleTooLarge {
        dataset: String,
        requested: usize,
        available: usize,
    },
    #[error("sample size must be positive")]
    EmptySample,
    #[error("{0}")]
    Row(RowError),
}

/// A source row that could not be mapped onto an [`Article`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number for JSONL, 1-based record number for CSV.
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

/// NFC normalization followed by whitespace trimming.
pub fn normalize_text(text: &str) -> String {
    nfc(text).trim().to_string()
}

fn nfc(text: &str) -> Cow<'_, str> {
    match is_nfc_quick(text.chars()) {
        IsNormalized::Yes => Cow::Borrowed(text),
        _ => Cow::Owned(text.nfc().collect()),
    }
}

/// Number of maximal non-whitespace runs after NFC normalization.
pub fn word_count(text: &str) -> usize {
    nfc(text).split_whitespace().count()
}

/// A named, single-language collection of articles with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    language: Language,
    articles: Vec<Article>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        language: Language,
        articles: Vec<Article>,
    ) -> Result<Dataset, CorpusError> {
        let name = name.into();
        let mut seen = HashSet::with_capacity(articles.len());
        for a in &articles {
            if a.language != language {
                return Err(CorpusError::LanguageMismatch {
                    dataset: name,
                    id: a.id.clone(),
                    expected: language,
                    found: a.language,
                });
            }
            if a.text.is_empty() {
                return Err(CorpusError::EmptyText(a.id.clone()));
            }
            if !seen.insert(a.id.as_str()) {
                return Err(CorpusError::DuplicateId(a.id.clone()));
            }
        }
        Ok(Dataset {
            name,
            language,
            articles,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.id == id)
    }

    /// Writes the dataset in the canonical JSONL schema.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        for a in &self.articles {
            serde_json::to_writer(&mut w, a).map_err(|e| io_err(e.into()))?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Maps the canonical article fields onto source keys or CSV columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub text: String,
    pub label: String,
    pub id: Option<String>,
    pub language: Option<String>,
    pub source: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            text: "text".into(),
            label: "label".into(),
            id: Some("id".into()),
            language: Some("language".into()),
            source: Some("source".into()),
        }
    }
}

impl FromStr for FieldMap {
    type Err = CorpusError;

    /// Parses `text=COL,label=COL[,id=COL][,language=COL][,source=COL]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadFieldMap(s.to_string());
        let mut pairs = HashMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let (k, v) = (k.trim(), v.trim());
            if v.is_empty() || pairs.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad());
            }
        }
        let map = FieldMap {
            text: pairs.remove("text").ok_or_else(bad)?,
            label: pairs.remove("label").ok_or_else(bad)?,
            id: pairs.remove("id"),
            language: pairs.remove("language"),
            source: pairs.remove("source"),
        };
        if !pairs.is_empty() {
            return Err(bad());
        }
        Ok(map)
    }
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Dataset name; defaults to the file stem.
    pub name: Option<String>,
    /// Declared dataset language; otherwise taken from the first row's
    /// language field.
    pub language: Option<Language>,
    pub fields: FieldMap,
}

/// A loaded dataset plus the rows that could not be mapped.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rejected: Vec<RowError>,
}

/// Loads a corpus file. Unmappable rows are collected in
/// [`LoadOutcome::rejected`] rather than aborting the load.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    options: &LoadOptions,
) -> Result<LoadOutcome, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let name = options.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let rows = match format {
        DatasetFormat::Jsonl => read_jsonl_rows(path)?,
        DatasetFormat::Csv => read_csv_rows(path)?,
    };
    let rows_read = rows.len();

    let mut builder = RowMapper {
        dataset: &name,
        fields: &options.fields,
        language: options.language,
        seen: HashSet::new(),
    };
    let mut articles = Vec::with_capacity(rows.len());
    let mut rejected = Vec::new();
    for (row, fields) in rows {
        match fields.and_then(|f| builder.map(row, &f)) {
            Ok(a) => articles.push(a),
            Err(message) => rejected.push(RowError { row, message }),
        }
    }
    for r in &rejected {
        log::warn!("{}: {}", path.display(), r);
    }
    if articles.is_empty() {
        return Err(CorpusError::EmptyDataset(name));
    }
    let language = builder
        .language
        .ok_or_else(|| CorpusError::UndeterminedLanguage(name.clone()))?;
    let dataset = Dataset::new(name, language, articles)?;
    Ok(LoadOutcome {
        dataset,
        rows_read,
        rejected,
    })
}

type RawRow = (usize, Result<HashMap<String, Value>, String>);

fn read_jsonl_rows(path: &Path) -> Result<Vec<RawRow>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => Ok(obj.into_iter().collect()),
            Ok(_) => Err("expected a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        rows.push((i + 1, parsed));
    }
    Ok(rows)
}

fn read_csv_rows(path: &Path) -> Result<Vec<RawRow>, CorpusError> {
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let parsed = match record {
            Ok(rec) => Ok(headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                .collect()),
            Err(e) => Err(format!("malformed CSV record: {e}")),
        };
        rows.push((i + 1, parsed));
    }
    Ok(rows)
}

struct RowMapper<'a> {
    dataset: &'a str,
    fields: &'a FieldMap,
    language: Option<Language>,
    seen: HashSet<String>,
}

impl RowMapper<'_> {
    fn map(&mut self, row: usize, fields: &HashMap<String, Value>) -> Result<Article, String> {
        let text = match fields.get(&self.fields.text) {
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(format!("field {:?} is not a string", self.fields.text)),
            None => return Err(format!("missing text field {:?}", self.fields.text)),
        };
        let label_raw = fields
            .get(&self.fields.label)
            .ok_or_else(|| format!("missing label field {:?}", self.fields.label))?;
        let gold = GoldLabel::from_json(label_raw)
            .ok_or_else(|| format!("unrecognized label {label_raw}"))?;

        let row_lang = match self.fields.language.as_ref().and_then(|k| fields.get(k)) {
            Some(Value::String(s)) if !s.trim().is_empty() => {
                Some(s.parse::<Language>().map_err(|e| e.to_string())?)
            }
            _ => None,
        };
        let language = match (self.language, row_lang) {
            (Some(declared), Some(found)) if declared != found => {
                return Err(format!(
                    "language {found} does not match dataset language {declared}"
                ))
            }
            (Some(declared), _) => declared,
            (None, Some(found)) => {
                self.language = Some(found);
                found
            }
            (None, None) => return Err("no language field and no declared dataset language".into()),
        };

        let id = match self.fields.id.as_ref().and_then(|k| fields.get(k)) {
            Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("{}-{row}", self.dataset),
        };
        if self.seen.contains(&id) {
            return Err(format!("duplicate id {id:?}"));
        }
        let source = match self.fields.source.as_ref().and_then(|k| fields.get(k)) {
            Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
            _ => self.dataset.to_string(),
        };
        let article = Article::new(id, text, language, gold, source)
            .map_err(|_| "empty text field".to_string())?;
        self.seen.insert(article.id.clone());
        Ok(article)
    }
}

/// Combines a satire-only corpus with a non-satire-only corpus of the same
/// language. Ids are prefixed with the originating dataset name.
pub fn merge_balanced(
    satire_only: &Dataset,
    nonsatire_only: &Dataset,
    name: &str,
) -> Result<Dataset, CorpusError> {
    if satire_only.language != nonsatire_only.language {
        return Err(CorpusError::MergeLanguageMismatch {
            left: satire_only.name.clone(),
            left_lang: satire_only.language,
            right: nonsatire_only.name.clone(),
            right_lang: nonsatire_only.language,
        });
    }
    check_purity(satire_only, GoldLabel::Satire)?;
    check_purity(nonsatire_only, GoldLabel::NonSatire)?;

    let prefix_left = origin_prefix(satire_only, nonsatire_only, "a");
    let prefix_right = origin_prefix(nonsatire_only, satire_only, "b");
    let articles = satire_only
        .articles
        .iter()
        .map(|a| (a, &prefix_left))
        .chain(nonsatire_only.articles.iter().map(|a| (a, &prefix_right)))
        .map(|(a, prefix)| Article {
            id: format!("{prefix}:{}", a.id),
            ..a.clone()
        })
        .collect();
    Dataset::new(name, satire_only.language, articles)
}

// Both inputs may carry the same name; fall back to a positional tag then.
fn origin_prefix(this: &Dataset, other: &Dataset, fallback: &str) -> String {
    if this.name == other.name {
        format!("{}.{fallback}", this.name)
    } else {
        this.name.clone()
    }
}

fn check_purity(d: &Dataset, expected: GoldLabel) -> Result<(), CorpusError> {
    match d.articles.iter().find(|a| a.gold != expected) {
        Some(a) => Err(CorpusError::LabelPurity {
            dataset: d.name.clone(),
            id: a.id.clone(),
            expected,
            found: a.gold,
        }),
        None => Ok(()),
    }
}

/// Table-1 style summary of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub language: Language,
    pub n_entries: usize,
    pub avg_words: f64,
    pub n_satire: usize,
    pub n_nonsatire: usize,
    /// Percentages rounded to one decimal.
    pub pct_satire: f64,
    pub pct_nonsatire: f64,
}

impl DatasetStats {
    /// Average words per article rounded to the nearest integer.
    pub fn avg_words_display(&self) -> u64 {
        self.avg_words.round() as u64
    }
}

pub fn compute_stats(d: &Dataset) -> Result<DatasetStats, CorpusError> {
    if d.is_empty() {
        return Err(CorpusError::EmptyDataset(d.name.clone()));
    }
    let n = d.len();
    let n_satire = d.articles.iter().filter(|a| a.gold.is_satire()).count();
    let words: usize = d.articles.iter().map(|a| word_count(&a.text)).sum();
    Ok(DatasetStats {
        name: d.name.clone(),
        language: d.language,
        n_entries: n,
        avg_words: words as f64 / n as f64,
        n_satire,
        n_nonsatire: n - n_satire,
        pct_satire: pct1(n_satire, n),
        pct_nonsatire: pct1(n - n_satire, n),
    })
}

fn pct1(part: usize, whole: usize) -> f64 {
    (1000.0 * part as f64 / whole as f64).round() / 10.0
}

/// Deterministic sample of `n` articles under `seed`, stratified by label
/// when both classes are present.
pub fn sample(d: &Dataset, n: usize, seed: u64) -> Result<Dataset, CorpusError> {
    if n == 0 {
        return Err(CorpusError::EmptySample);
    }
    if n > d.len() {
        return Err(CorpusError::SampleTooLarge {
            dataset: d.name.clone(),
            requested: n,
            available: d.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sat, mut non): (Vec<usize>, Vec<usize>) =
        (0..d.len()).partition(|&i| d.articles[i].gold.is_satire());
    sat.shuffle(&mut rng);
    non.shuffle(&mut rng);

    let (n_sat, n_non) = stratified_quota(sat.len(), non.len(), n);
    let mut picked: Vec<usize> = sat[..n_sat].iter().chain(&non[..n_non]).copied().collect();
    picked.shuffle(&mut rng);

    let articles = picked.into_iter().map(|i| d.articles[i].clone()).collect();
    Dataset::new(d.name.clone(), d.language, articles)
}

/// Per-class quotas for a stratified sample of `n` out of `n_sat + n_non`.
/// The satire quota is rounded half-up; the non-satire class takes the rest.
pub fn stratified_quota(n_sat: usize, n_non: usize, n: usize) -> (usize, usize) {
    let total = n_sat + n_non;
    debug_assert!(n <= total);
    if n_sat == 0 || n_non == 0 {
        return if n_sat == 0 { (0, n) } else { (n, 0) };
    }
    let sat = (2 * n * n_sat + total) / (2 * total);
    let sat = sat.clamp(n.saturating_sub(n_non), n_sat.min(n));
    (sat, n - sat)
}

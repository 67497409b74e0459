//! Shared fixture builders for the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satire_bench::Language;

pub const MARKER: &str = "[[wire]]";

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satire-bench"))
}

pub fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 stdout")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).expect("utf-8 stderr")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn filler(lang: Language) -> &'static str {
    match lang {
        Language::English => "w",
        Language::Arabic => "ب",
    }
}

/// Writes a JSONL corpus with exact class counts whose total word count is
/// `round(avg_words * n)`, spread as evenly as possible over the articles.
pub fn write_sized_corpus(
    path: &Path,
    lang: Language,
    n_satire: usize,
    n_nonsatire: usize,
    avg_words: f64,
) {
    let n = n_satire + n_nonsatire;
    let total_words = (avg_words * n as f64).round() as usize;
    let word = filler(lang);
    let mut w = BufWriter::new(fs::File::create(path).unwrap());
    let mut text = String::new();
    for i in 0..n {
        let words = total_words / n + usize::from(i < total_words % n);
        text.clear();
        for k in 0..words {
            if k > 0 {
                text.push(' ');
            }
            text.push_str(word);
        }
        let label = u8::from(i < n_satire);
        writeln!(
            w,
            r#"{{"id":"{i}","text":"{text}","label":{label},"language":"{}"}}"#,
            lang.code()
        )
        .unwrap();
    }
}

/// 200 articles: 80 satire, 120 non-satire. The marker appears in 50 satire
/// and 10 non-satire articles, so a marker-keyed mock yields
/// tp=50, fn=30, fp=10, tn=110.
pub fn write_scripted_corpus(path: &Path, lang: Language) {
    let mut w = BufWriter::new(fs::File::create(path).unwrap());
    for i in 0..200usize {
        let satire = i < 80;
        let marked = if satire { i < 50 } else { i < 90 };
        let body = match (lang, satire) {
            (Language::English, true) => format!("Local man declares war on Mondays, story {i}."),
            (Language::English, false) => {
                format!("The council approved the budget on Tuesday, report {i}.")
            }
            (Language::Arabic, true) => format!("رجل يعلن الحرب على يوم الاثنين، القصة {i}."),
            (Language::Arabic, false) => {
                format!("وافق المجلس على الميزانية يوم الثلاثاء، التقرير {i}.")
            }
        };
        let text = if marked {
            format!("{body} {MARKER}")
        } else {
            body
        };
        let row = serde_json::json!({
            "id": format!("{}-{i:03}", lang.code()),
            "text": text,
            "label": u8::from(satire),
            "language": lang.code(),
        });
        writeln!(w, "{row}").unwrap();
    }
}

/// Balanced corpus of `n` satire and `n` non-satire articles.
pub fn write_balanced_corpus(path: &Path, lang: Language, n: usize) {
    write_sized_corpus(path, lang, n, n, 12.0);
}

pub struct MockRun {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

/// A temp directory holding an English and an Arabic scripted corpus and a
/// config running one marker-keyed mock backend over both.
pub fn scripted_run(extra_backend_lines: &str) -> MockRun {
    let dir = tempfile::tempdir().unwrap();
    write_scripted_corpus(&dir.path().join("fx_en.jsonl"), Language::English);
    write_scripted_corpus(&dir.path().join("fx_ar.jsonl"), Language::Arabic);
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            r#"seed = 11

[[backends]]
name = "mock"
kind = "mock"
max_inflight = 4
mock = {{ rule = "marker", marker = "{MARKER}" }}
{extra_backend_lines}

[[datasets]]
name = "fx-en"
path = "fx_en.jsonl"
language = "en"

[[datasets]]
name = "fx-ar"
path = "fx_ar.jsonl"
language = "ar"
"#
        ),
    )
    .unwrap();
    MockRun { dir, config }
}

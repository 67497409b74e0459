//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line before asserting.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;
use satire_bench::backend::{BackendDescriptor, BackendKind, ChatRequest, MockBackend};
use satire_bench::evaluator::{round1, validate_published_row};
use satire_bench::orchestrator::{self, Harness, RunStore};
use satire_bench::prompt::RoleMode;
use satire_bench::{
    parse_label, Article, ConfusionMatrix, Dataset, GoldLabel, Language, ParsedPrediction,
    PredictedLabel, Strategy, TemplateSet, UnparseablePolicy,
};

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({title}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

struct Table1Column {
    name: &'static str,
    language: Language,
    entries: usize,
    avg_words: f64,
    satire: usize,
    nonsatire: usize,
    // printed percentages and the number of decimals they are printed with
    pct_satire: f64,
    pct_nonsatire: f64,
    decimals: i32,
}

const TABLE1: [Table1Column; 4] = [
    Table1Column {
        name: "Assiri",
        language: Language::Arabic,
        entries: 1525,
        avg_words: 1013.0,
        satire: 760,
        nonsatire: 765,
        pct_satire: 49.8,
        pct_nonsatire: 50.2,
        decimals: 1,
    },
    Table1Column {
        name: "Saadany",
        language: Language::Arabic,
        entries: 7948,
        avg_words: 1635.0,
        satire: 3185,
        nonsatire: 4763,
        pct_satire: 40.0,
        pct_nonsatire: 60.0,
        decimals: 0,
    },
    Table1Column {
        name: "Phosseini",
        language: Language::English,
        entries: 6943,
        avg_words: 2721.0,
        satire: 3956,
        nonsatire: 2987,
        pct_satire: 57.0,
        pct_nonsatire: 43.0,
        decimals: 0,
    },
    Table1Column {
        name: "SatiricLR",
        language: Language::English,
        entries: 3411,
        avg_words: 2472.0,
        satire: 1706,
        nonsatire: 1705,
        pct_satire: 50.0,
        pct_nonsatire: 50.0,
        decimals: 0,
    },
];

fn at_precision(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

#[test]
fn criterion_1_dataset_statistics() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["stats".to_string()];
    for c in &TABLE1 {
        let path = dir.path().join(format!("{}.jsonl", c.name));
        write_sized_corpus(&path, c.language, c.satire, c.nonsatire, c.avg_words);
        args.push("--dataset".into());
        args.push(path.display().to_string());
    }
    args.extend(["--output".into(), "json".into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run_cli(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let stats: Vec<Value> = serde_json::from_str(&stdout(&out)).unwrap();

    let mut problems = Vec::new();
    for (c, s) in TABLE1.iter().zip(&stats) {
        let get = |k: &str| s[k].as_f64().unwrap();
        let checks = [
            ("entries", get("n_entries") == c.entries as f64),
            ("satire", get("n_satire") == c.satire as f64),
            ("non-satire", get("n_nonsatire") == c.nonsatire as f64),
            (
                "pct satire",
                at_precision(get("pct_satire"), c.decimals) == c.pct_satire,
            ),
            (
                "pct non-satire",
                at_precision(get("pct_nonsatire"), c.decimals) == c.pct_nonsatire,
            ),
            (
                "avg words ±5%",
                (get("avg_words") - c.avg_words).abs() <= 0.05 * c.avg_words,
            ),
            (
                "language",
                s["language"] == c.language.name().to_lowercase(),
            ),
        ];
        for (what, ok) in checks {
            if !ok {
                problems.push(format!("{} {what}: {s}", c.name));
            }
        }
    }
    let ok = stats.len() == 4 && problems.is_empty();
    verdict(
        1,
        "dataset statistics",
        ok,
        &format!(
            "4 corpora, counts/percentages exact, avg words within 5% ({:.1}s){}",
            start.elapsed().as_secs_f64(),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; {problems:?}")
            }
        ),
    );
}

#[test]
fn criterion_2_published_table_consistency() {
    let table = fixtures_dir().join("table2.csv");
    let out = run_cli(&["validate-table", "--csv", table.to_str().unwrap()]);
    let text = stdout(&out);
    let rows = text
        .lines()
        .filter(|l| l.contains(" consistent (") || l.contains("inconsistent ("))
        .count();
    let consistent = text
        .lines()
        .filter(|l| l.contains(": consistent ("))
        .count();
    // Spot anchors: published (P, R) → F1 after one-decimal rounding.
    let anchors_ok = [(72.7, 49.9, 59.2), (52.1, 95.8, 67.5), (49.8, 99.2, 66.3)]
        .iter()
        .all(|&(p, r, f1)| {
            let v = validate_published_row(50.0, p, r, f1).unwrap();
            round1(v.recomputed_f1) == f1 && v.consistent
        });
    let inconsistent: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("inconsistent"))
        .collect();
    verdict(
        2,
        "published-table consistency",
        rows == 32 && consistent == 32 && out.status.success() && anchors_ok,
        &format!("{consistent}/{rows} rows within ±0.15; spot anchors ok = {anchors_ok}; inconsistent: {inconsistent:?}"),
    );
}

fn report_json(store: &std::path::Path) -> Value {
    let out = run_cli(&[
        "report",
        "--store",
        store.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    serde_json::from_str(&stdout(&out)).unwrap()
}

#[test]
fn criterion_3_scripted_end_to_end_metrics() {
    let start = Instant::now();
    let run = scripted_run("");
    let store = run.dir.path().join("store.jsonl");
    let out = run_cli(&[
        "run",
        "--config",
        run.config.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = report_json(&store);
    let rows = report["rows"].as_array().unwrap();
    let mut bad = Vec::new();
    for r in rows {
        let got = (
            r["accuracy"].as_f64(),
            r["precision"].as_f64(),
            r["recall"].as_f64(),
            r["f1"].as_f64(),
        );
        if got != (Some(80.0), Some(83.3), Some(62.5), Some(71.4)) || r["n"] != 200 {
            bad.push(r.clone());
        }
    }
    verdict(
        3,
        "scripted mock end-to-end",
        rows.len() == 8 && bad.is_empty(),
        &format!(
            "{} cells × 200 articles (en+ar datasets, en+ar prompts, zero-shot+CoT) → 80.0/83.3/62.5/71.4 ({:.1}s){}",
            rows.len(),
            start.elapsed().as_secs_f64(),
            if bad.is_empty() { String::new() } else { format!("; mismatches {bad:?}") }
        ),
    );
}

#[test]
fn criterion_4_always_positive_mock() {
    let dir = tempfile::tempdir().unwrap();
    write_balanced_corpus(&dir.path().join("bal.jsonl"), Language::English, 100);
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        r#"
[[backends]]
name = "yes-man"
kind = "mock"
mock = { rule = "constant", response = "1" }

[[datasets]]
name = "balanced"
path = "bal.jsonl"
"#,
    )
    .unwrap();
    let store = dir.path().join("store.jsonl");
    let out = run_cli(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = report_json(&store);
    let rows = report["rows"].as_array().unwrap();
    let ok = rows.len() == 4
        && rows
            .iter()
            .all(|r| r["recall"].as_f64() == Some(100.0) && r["precision"].as_f64() == Some(50.0));
    verdict(
        4,
        "always-positive mock",
        ok,
        &format!(
            "{} cells over 100/100 fixture: recall 100.0, precision 50.0 = class prior",
            rows.len()
        ),
    );
}

#[test]
fn criterion_5_parser_corpus() {
    let path = fixtures_dir().join("parser_corpus.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let mut total = 0;
    let mut agree = 0;
    let mut arabic_digits = 0;
    let mut refusals = 0;
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        let (expected, response) = line.split_once('\t').unwrap();
        let response = response.replace("\\n", "\n");
        let want = match expected {
            "1" => PredictedLabel::Satire,
            "0" => PredictedLabel::NonSatire,
            _ => PredictedLabel::Unparseable,
        };
        total += 1;
        agree += usize::from(parse_label(&response).label == want);
        arabic_digits += usize::from(
            response
                .chars()
                .any(|c| ('\u{0660}'..='\u{06F9}').contains(&c) && c.is_numeric()),
        );
        refusals += usize::from(want == PredictedLabel::Unparseable);
    }
    let cli = run_cli(&["parse-check", "--input", path.to_str().unwrap()]);
    let ok =
        total >= 20 && agree == total && arabic_digits > 0 && refusals > 0 && cli.status.success();
    verdict(
        5,
        "parser corpus",
        ok,
        &format!("{agree}/{total} annotated responses agree ({arabic_digits} with Arabic-Indic digits, {refusals} refusals/unparseable)"),
    );
}

fn random_label(rng: &mut ChaCha8Rng) -> PredictedLabel {
    match rng.random_range(0..3) {
        0 => PredictedLabel::Satire,
        1 => PredictedLabel::NonSatire,
        _ => PredictedLabel::Unparseable,
    }
}

fn random_stream(rng: &mut ChaCha8Rng) -> Vec<(GoldLabel, PredictedLabel)> {
    let len = rng.random_range(0..60);
    (0..len)
        .map(|_| {
            let gold = if rng.random_bool(0.5) {
                GoldLabel::Satire
            } else {
                GoldLabel::NonSatire
            };
            (gold, random_label(rng))
        })
        .collect()
}

fn brute_force(
    stream: &[(GoldLabel, PredictedLabel)],
    policy: UnparseablePolicy,
) -> ConfusionMatrix {
    let count = |g: GoldLabel, p: bool| {
        stream
            .iter()
            .filter(|(gold, pred)| {
                let as_satire = match pred {
                    PredictedLabel::Satire => Some(true),
                    PredictedLabel::NonSatire => Some(false),
                    PredictedLabel::Unparseable => match policy {
                        UnparseablePolicy::CountAsWrong => Some(!gold.is_satire()),
                        UnparseablePolicy::CountAsNegative => Some(false),
                        UnparseablePolicy::Exclude => None,
                    },
                };
                *gold == g && as_satire == Some(p)
            })
            .count() as u64
    };
    let unparseable = stream
        .iter()
        .filter(|(_, p)| *p == PredictedLabel::Unparseable)
        .count() as u64;
    ConfusionMatrix {
        tp: count(GoldLabel::Satire, true),
        fn_: count(GoldLabel::Satire, false),
        fp: count(GoldLabel::NonSatire, true),
        tn: count(GoldLabel::NonSatire, false),
        n_unparseable: unparseable,
        n_excluded: if policy == UnparseablePolicy::Exclude {
            unparseable
        } else {
            0
        },
    }
}

#[test]
fn criterion_6_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let policies = [
        UnparseablePolicy::CountAsWrong,
        UnparseablePolicy::Exclude,
        UnparseablePolicy::CountAsNegative,
    ];
    let mut mismatches = 0;
    let streams = 1200;
    for i in 0..streams {
        let stream = random_stream(&mut rng);
        let policy = policies[i % 3];
        let incremental = stream.iter().fold(ConfusionMatrix::new(), |cm, (g, p)| {
            cm.accumulate(*g, &label_only(*p), policy)
        });
        if incremental != brute_force(&stream, policy) {
            mismatches += 1;
        }
    }
    let mut merge_failures = 0;
    let triples = 1000;
    for i in 0..triples {
        let policy = policies[i % 3];
        let [a, b, c] = [0; 3].map(|_| brute_force(&random_stream(&mut rng), policy));
        if (a + b) + c != a + (b + c) || a + b != b + a {
            merge_failures += 1;
        }
    }
    verdict(
        6,
        "oracle equivalence",
        mismatches == 0 && merge_failures == 0,
        &format!(
            "{streams} random streams: {mismatches} incremental≠recount; {triples} triples: {merge_failures} merge law violations"
        ),
    );
}

fn label_only(label: PredictedLabel) -> ParsedPrediction {
    ParsedPrediction {
        label,
        raw: String::new(),
        matched_span: None,
    }
}

#[test]
fn criterion_7_resume_idempotence() {
    // Uninterrupted run records every response into the cache.
    let run = scripted_run("cache = \"responses.jsonl\"");
    let dir = run.dir.path();
    let full = dir.join("full.jsonl");
    let out = run_cli(&[
        "run",
        "--config",
        run.config.to_str().unwrap(),
        "--store",
        full.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // Second configuration replays strictly from that cache.
    let replay_cfg = dir.join("replay.toml");
    let text = fs::read_to_string(&run.config)
        .unwrap()
        .replace("kind = \"mock\"", "kind = \"replay\"")
        .replace(
            &format!("mock = {{ rule = \"marker\", marker = \"{MARKER}\" }}"),
            "",
        );
    fs::write(&replay_cfg, text).unwrap();
    let resumed = dir.join("resumed.jsonl");
    let args = |extra: &[&'static str]| {
        let mut v = vec![
            "run".to_string(),
            "--config".into(),
            replay_cfg.display().to_string(),
            "--store".into(),
            resumed.display().to_string(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let killed = bin().args(args(&["--limit", "57"])).output().unwrap();
    assert!(killed.status.success(), "{}", stderr(&killed));
    let after_kill = fs::read_to_string(&resumed).unwrap().lines().count();
    // Simulate dying mid-write: a torn, unterminated record.
    let mut torn = fs::read_to_string(&resumed).unwrap();
    torn.push_str(r#"{"cell":"mock/en/fx-en/cot","article_id":"en-1"#);
    fs::write(&resumed, torn).unwrap();
    let restarted = bin().args(args(&[])).output().unwrap();
    assert!(restarted.status.success(), "{}", stderr(&restarted));

    let lines = fs::read_to_string(&resumed).unwrap();
    let mut keys = HashSet::new();
    let mut dupes = 0;
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).expect("every line is a whole record");
        if !keys.insert((v["cell"].to_string(), v["article_id"].to_string())) {
            dupes += 1;
        }
    }
    let expected = 8 * 200;
    let mut identical = true;
    for format in ["md", "csv", "json"] {
        let a = run_cli(&[
            "report",
            "--store",
            full.to_str().unwrap(),
            "--format",
            format,
        ]);
        let b = run_cli(&[
            "report",
            "--store",
            resumed.to_str().unwrap(),
            "--format",
            format,
        ]);
        identical &= a.status.success() && a.stdout == b.stdout;
    }
    verdict(
        7,
        "resume idempotence",
        after_kill == 57 && keys.len() == expected && dupes == 0 && identical,
        &format!(
            "killed after {after_kill} records + torn line; resumed store has {} unique keys ({dupes} duplicates) of {expected}; md/csv/json reports byte-identical = {identical}",
            keys.len()
        ),
    );
}

#[test]
fn criterion_8_cot_plumbing() {
    // The analysis always mentions a misleading digit; only the prediction
    // response carries the real verdict.
    let mock = MockBackend::new(|req: &ChatRequest| {
        let content = req.last_user_content();
        if req.decoding.max_new_tokens == 512 {
            format!(
                "Step 1: the headline cites 0 sources. Step 2: tone check. Length {}.",
                content.len() % 7
            )
        } else if content.contains(MARKER) {
            "1".to_string()
        } else {
            "0".to_string()
        }
    });
    let mut harness = Harness::new(TemplateSet::bundled(), RoleMode::User);
    harness.add_backend(
        BackendDescriptor::new("mock", BackendKind::Mock, "mock-1"),
        Arc::new(mock),
    );
    let dir = tempfile::tempdir().unwrap();
    let mut cells = Vec::new();
    for lang in Language::ALL {
        let path = dir.path().join(format!("{}.jsonl", lang.code()));
        write_scripted_corpus(&path, lang);
        let articles: Vec<Article> = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| {
                let v: Value = serde_json::from_str(l).unwrap();
                let gold = if v["label"] == 1 {
                    GoldLabel::Satire
                } else {
                    GoldLabel::NonSatire
                };
                Article::new(
                    v["id"].as_str().unwrap(),
                    v["text"].as_str().unwrap(),
                    lang,
                    gold,
                    "fixture",
                )
                .unwrap()
            })
            .collect();
        harness.add_dataset(Dataset::new(lang.code(), lang, articles).unwrap());
        for prompt_language in Language::ALL {
            cells.push(orchestrator::ExperimentCell {
                backend: "mock".into(),
                model: "mock-1".into(),
                prompt_language,
                dataset: lang.code().into(),
                strategy: Strategy::CoT,
            });
        }
    }
    let plan = orchestrator::ExperimentPlan {
        cells,
        sample_size: None,
        seed: 0,
        policy: UnparseablePolicy::CountAsWrong,
    };
    let mut store = RunStore::in_memory();
    harness.execute(&plan, &mut store).unwrap();

    let mut violations: BTreeMap<&str, usize> = BTreeMap::new();
    // Records whose analysis alone would parse to a different label.
    let mut diverging = 0;
    for r in store.records() {
        let mut flag = |k| *violations.entry(k).or_default() += 1;
        if r.prompts.len() != 2 || r.responses.len() != 2 {
            flag("exchange count");
            continue;
        }
        let analysis = r.analysis_text.as_deref().unwrap_or_default();
        if analysis != r.responses[0].response || !r.prompts[1].text.contains(analysis) {
            flag("analysis not embedded verbatim");
        }
        if r.parsed != parse_label(&r.responses[1].response) {
            flag("label not from second response");
        }
        if parse_label(&r.responses[0].response).label != r.parsed.label {
            diverging += 1;
        }
        if r.check().is_err() {
            flag("record invariant");
        }
    }
    let n = store.len();
    verdict(
        8,
        "CoT plumbing",
        n == 800 && violations.is_empty() && diverging > 0,
        &format!(
            "{n} CoT records, two exchanges each, analysis embedded verbatim, label from second response \
             ({diverging} records where the analysis alone parses differently); violations {violations:?}"
        ),
    );
}

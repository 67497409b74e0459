mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use url::Url;

use satire_bench::backend::http::{HttpReply, TransportError};
use satire_bench::backend::{
    BackendDescriptor, BackendError, BackendKind, ChatBackend, ChatRequest, ChatResponse,
    HttpBackend, MockBackend, RetryPolicy, Transport,
};
use satire_bench::config::{BackendConfig, DatasetConfig, RunConfig};
use satire_bench::orchestrator::{self, ExperimentPlan, Harness, RunStore};
use satire_bench::prompt::RoleMode;
use satire_bench::{
    Article, ConfusionMatrix, Dataset, GoldLabel, Language, PredictedLabel, Strategy, TemplateSet,
    UnparseablePolicy,
};

fn dataset(name: &str, lang: Language, n: usize) -> Dataset {
    let articles = (0..n)
        .map(|i| {
            let gold = if i % 2 == 0 {
                GoldLabel::Satire
            } else {
                GoldLabel::NonSatire
            };
            let text = if i % 3 == 0 {
                format!("article {i} {}", common::MARKER)
            } else {
                format!("article {i}")
            };
            Article::new(format!("{name}-{i}"), &text, lang, gold, "test").unwrap()
        })
        .collect();
    Dataset::new(name, lang, articles).unwrap()
}

fn plan_for(backends: &[&str], datasets: &[&str]) -> ExperimentPlan {
    let config = RunConfig {
        backends: backends
            .iter()
            .map(|b| {
                BackendConfig::mock(
                    b,
                    satire_bench::backend::mock::MockSpec::Constant {
                        response: "1".into(),
                    },
                )
            })
            .collect(),
        datasets: datasets
            .iter()
            .map(|d| DatasetConfig::jsonl(d, format!("{d}.jsonl"), Language::English))
            .collect(),
        ..RunConfig::default()
    };
    orchestrator::plan(&config).unwrap()
}

/// Wraps a backend and counts calls.
struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: ChatBackend> ChatBackend for Counting<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[test]
fn cell_count_is_backends_times_languages_times_datasets_times_strategies() {
    for nb in 1..=3 {
        for nd in 1..=4 {
            let b: Vec<String> = (0..nb).map(|i| format!("b{i}")).collect();
            let d: Vec<String> = (0..nd).map(|i| format!("d{i}")).collect();
            let b: Vec<&str> = b.iter().map(String::as_str).collect();
            let d: Vec<&str> = d.iter().map(String::as_str).collect();
            assert_eq!(plan_for(&b, &d).cells.len(), nb * 2 * nd * 2);
        }
    }
}

#[test]
fn re_executing_a_completed_plan_makes_no_backend_calls() {
    let backend = Arc::new(Counting {
        inner: MockBackend::marker(common::MARKER),
        calls: AtomicUsize::new(0),
    });
    let mut h = Harness::new(TemplateSet::bundled(), RoleMode::User);
    h.add_backend(
        BackendDescriptor::new("m", BackendKind::Mock, "mock"),
        backend.clone(),
    );
    h.add_dataset(dataset("d", Language::English, 10));
    let plan = plan_for(&["m"], &["d"]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let mut store = RunStore::open(&path).unwrap();
    h.execute(&plan, &mut store).unwrap();
    // 2 languages × (10 zero-shot + 20 CoT) calls
    assert_eq!(backend.calls.load(Ordering::SeqCst), 60);
    let bytes = std::fs::read(&path).unwrap();
    drop(store);

    let mut store = RunStore::open(&path).unwrap();
    let summary = h.execute(&plan, &mut store).unwrap();
    assert_eq!(backend.calls.load(Ordering::SeqCst), 60);
    assert_eq!(summary.new_records(), 0);
    assert_eq!(
        summary.to_string(),
        "all skipped (40 records already present)"
    );
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn report_matches_brute_force_recount() {
    let mock = MockBackend::new(|r: &ChatRequest| {
        let c = r.last_user_content();
        match c.len() % 5 {
            0 => "I cannot classify this.".into(),
            1 | 2 => "1".into(),
            _ => "0".into(),
        }
    });
    let mut h = Harness::new(TemplateSet::bundled(), RoleMode::User);
    h.add_backend(
        BackendDescriptor::new("m", BackendKind::Mock, "mock"),
        Arc::new(mock),
    );
    h.add_dataset(dataset("en", Language::English, 37));
    h.add_dataset(dataset("ar", Language::Arabic, 23));
    let plan = plan_for(&["m"], &["en", "ar"]);
    let mut store = RunStore::in_memory();
    h.execute(&plan, &mut store).unwrap();

    for policy in [
        UnparseablePolicy::CountAsWrong,
        UnparseablePolicy::Exclude,
        UnparseablePolicy::CountAsNegative,
    ] {
        let table = orchestrator::report(store.records(), policy).unwrap();
        assert_eq!(table.rows.len(), 8);
        for row in &table.rows {
            let mut cm = ConfusionMatrix::new();
            let mut n = 0;
            for r in store.records().iter().filter(|r| {
                r.backend == row.model
                    && r.prompt_language == row.prompt
                    && r.dataset == row.dataset
                    && r.strategy == row.approach
            }) {
                n += 1;
                let pred = match r.parsed.label {
                    PredictedLabel::Satire => Some(true),
                    PredictedLabel::NonSatire => Some(false),
                    PredictedLabel::Unparseable => match policy {
                        UnparseablePolicy::CountAsWrong => Some(!r.gold.is_satire()),
                        UnparseablePolicy::CountAsNegative => Some(false),
                        UnparseablePolicy::Exclude => None,
                    },
                };
                match (r.gold.is_satire(), pred) {
                    (true, Some(true)) => cm.tp += 1,
                    (true, Some(false)) => cm.fn_ += 1,
                    (false, Some(true)) => cm.fp += 1,
                    (false, Some(false)) => cm.tn += 1,
                    (_, None) => cm.n_excluded += 1,
                }
                if r.parsed.label == PredictedLabel::Unparseable {
                    cm.n_unparseable += 1;
                }
            }
            assert_eq!(row.n, n);
            assert_eq!(
                row.confusion, cm,
                "{policy:?} {}/{}",
                row.dataset, row.approach
            );
            let m = cm.metrics(policy).unwrap();
            assert_eq!(
                (row.accuracy, row.precision, row.recall, row.f1),
                (m.accuracy, m.precision, m.recall, m.f1)
            );
        }
    }
}

/// Transport that records peak concurrency and answers "1" after a delay.
struct Instrumented {
    active: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
    status: u16,
}

impl Transport for Instrumented {
    fn post_json(
        &self,
        _: &Url,
        _: Option<&str>,
        _: &Value,
        _: Duration,
    ) -> Result<HttpReply, TransportError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(3));
        self.active.fetch_sub(1, Ordering::SeqCst);
        Ok(HttpReply {
            status: self.status,
            body: json!({"choices": [{"message": {"role": "assistant", "content": "1"}}]})
                .to_string(),
        })
    }
}

fn http_harness(k: usize, transport: Arc<Instrumented>, retry: RetryPolicy) -> Harness {
    let url: Url = "http://127.0.0.1:9/".parse().unwrap();
    let mut d = BackendDescriptor::new("h", BackendKind::Http, "model");
    d.endpoint_url = Some(url.clone());
    d.max_inflight = k;
    let backend = HttpBackend::new(&url, k)
        .with_transport(transport)
        .with_retry(retry);
    let mut h = Harness::new(TemplateSet::bundled(), RoleMode::User);
    h.add_backend(d, Arc::new(backend));
    h.add_dataset(dataset("d", Language::English, 24));
    h
}

#[test]
fn inflight_requests_never_exceed_the_bound() {
    for k in [1, 2, 3, 5] {
        let t = Arc::new(Instrumented {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            status: 200,
        });
        let h = http_harness(k, t.clone(), RetryPolicy::default());
        let mut store = RunStore::in_memory();
        h.execute(&plan_for(&["h"], &["d"]), &mut store).unwrap();
        assert_eq!(store.len(), 96);
        let peak = t.peak.load(Ordering::SeqCst);
        assert!(peak <= k, "k={k} peak={peak}");
        if k > 1 {
            assert!(peak > 1, "k={k}: requests never overlapped");
        }
    }
}

#[test]
fn exhausted_backend_yields_failed_records_and_the_run_continues() {
    let t = Arc::new(Instrumented {
        active: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        calls: AtomicUsize::new(0),
        status: 503,
    });
    let retry = RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(1),
        jitter: 0.0,
    };
    let h = http_harness(4, t.clone(), retry);
    let mut store = RunStore::in_memory();
    let summary = h.execute(&plan_for(&["h"], &["d"]), &mut store).unwrap();
    assert_eq!(summary.failed, 96);
    // CoT stops after the failed analysis: one request (× 3 attempts) per record.
    assert_eq!(t.calls.load(Ordering::SeqCst), 96 * 3);
    let table = orchestrator::report(store.records(), UnparseablePolicy::CountAsWrong).unwrap();
    for row in &table.rows {
        assert_eq!(row.failure_rate, 100.0);
        assert_eq!(row.parse_rate, 0.0);
        assert_eq!(row.accuracy, 0.0);
    }
    assert!(store.records()[0]
        .failure
        .as_deref()
        .unwrap()
        .contains("503"));
}

#[test]
fn oversized_articles_are_truncated_and_flagged() {
    let captured = Arc::new(Mutex::new(Vec::new()));
    let sink = captured.clone();
    let mock = MockBackend::new(move |r: &ChatRequest| {
        sink.lock().unwrap().push(r.last_user_content().to_string());
        "0".into()
    });
    let mut d = BackendDescriptor::new("m", BackendKind::Mock, "mock");
    d.decoding.context_budget_tokens = 400;
    d.analysis_max_new_tokens = 100;
    let mut h = Harness::new(TemplateSet::bundled(), RoleMode::User);
    h.add_backend(d, Arc::new(mock));
    let long = "word ".repeat(3000);
    let articles = vec![
        Article::new("long", &long, Language::English, GoldLabel::Satire, "t").unwrap(),
        Article::new(
            "short",
            "brief note",
            Language::English,
            GoldLabel::NonSatire,
            "t",
        )
        .unwrap(),
    ];
    h.add_dataset(Dataset::new("d", Language::English, articles).unwrap());
    let mut plan = plan_for(&["m"], &["d"]);
    plan.cells
        .retain(|c| c.strategy == Strategy::ZeroShot && c.prompt_language == Language::English);
    let mut store = RunStore::in_memory();
    h.execute(&plan, &mut store).unwrap();

    let long_rec = store
        .records()
        .iter()
        .find(|r| r.article_id == "long")
        .unwrap();
    let short_rec = store
        .records()
        .iter()
        .find(|r| r.article_id == "short")
        .unwrap();
    assert!(long_rec.truncated_input);
    assert!(!short_rec.truncated_input);
    let sent = captured.lock().unwrap();
    let long_sent = sent.iter().find(|s| s.contains("word word")).unwrap();
    // the instruction block survives; the request fits the input budget
    assert!(long_sent.starts_with(&long_rec.prompts[0].text[..long_rec.prompts[0].instruction_end]));
    assert!(satire_bench::backend::estimate_tokens(long_sent) <= 400 - 16);
    let table = orchestrator::report(store.records(), UnparseablePolicy::CountAsWrong).unwrap();
    assert_eq!(table.rows[0].truncation_rate, 50.0);
}

//! Prompt templates and their rendering for zero-shot and two-phase
//! chain-of-thought classification.
//!
//! Templates are plain UTF-8 files named `<strategy>.<phase>.<lang>.txt`
//! (`zeroshot.single.en.txt`, `cot.analysis.ar.txt`,
//! `cot.prediction.en.txt`, ...). Bodies use `{{article}}` and, for the
//! prediction phase, `{{analysis}}`. Substitution is single-pass: payload
//! text is never rescanned for placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatMessage, Role};
use crate::corpus::{Article, Language};

/// Prompt language; same two values as article languages.
pub type PromptLanguage = Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "cot")]
    CoT,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::ZeroShot, Strategy::CoT];

    /// Token used in template file names and cell ids.
    pub fn code(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zeroshot",
            Strategy::CoT => "cot",
        }
    }

    /// Column label as printed in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "Zero-shot",
            Strategy::CoT => "Chain-of-Thought",
        }
    }

    pub fn phases(self) -> &'static [Phase] {
        match self {
            Strategy::ZeroShot => &[Phase::Single],
            Strategy::CoT => &[Phase::Analysis, Phase::Prediction],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_', ' '], "")
            .as_str()
        {
            "zeroshot" => Ok(Strategy::ZeroShot),
            "cot" | "chainofthought" => Ok(Strategy::CoT),
            other => Err(PromptError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Single,
    Analysis,
    Prediction,
}

impl Phase {
    pub fn code(self) -> &'static str {
        match self {
            Phase::Single => "single",
            Phase::Analysis => "analysis",
            Phase::Prediction => "prediction",
        }
    }
}

/// Pre-prompt language paired with the article language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptConfiguration {
    pub prompt_language: PromptLanguage,
    pub article_language: PromptLanguage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateKey {
    pub strategy: Strategy,
    pub phase: Phase,
    pub language: PromptLanguage,
}

impl TemplateKey {
    pub fn all() -> impl Iterator<Item = TemplateKey> {
        Language::ALL.into_iter().flat_map(|language| {
            Strategy::ALL.into_iter().flat_map(move |strategy| {
                strategy.phases().iter().map(move |&phase| TemplateKey {
                    strategy,
                    phase,
                    language,
                })
            })
        })
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}.{}.{}.txt",
            self.strategy.code(),
            self.phase.code(),
            self.language.code()
        )
    }
}

impl fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.strategy.code(),
            self.phase.code(),
            self.language
        )
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing prompt templates: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    MissingTemplates(Vec<TemplateKey>),
    #[error("template {key}: {message}")]
    InvalidTemplate { key: TemplateKey, message: String },
    #[error("template {key} has phase {found:?}, expected one of {expected:?}")]
    WrongPhase {
        key: TemplateKey,
        expected: &'static [Phase],
        found: Phase,
    },
    #[error("analysis text is empty")]
    EmptyAnalysis,
    #[error("unresolved placeholder {0} in rendered prompt")]
    UnresolvedPlaceholder(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Article,
    Analysis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    key: TemplateKey,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses and validates a template body against its phase.
    pub fn new(key: TemplateKey, body: &str) -> Result<PromptTemplate, PromptError> {
        let invalid = |message: String| PromptError::InvalidTemplate { key, message };
        let segments = parse_segments(body).map_err(invalid)?;
        let has = |s: &Segment| segments.contains(s);
        match key.phase {
            Phase::Single | Phase::Analysis => {
                if !has(&Segment::Article) {
                    return Err(invalid("body must contain {{article}}".into()));
                }
                if has(&Segment::Analysis) {
                    return Err(invalid(
                        "{{analysis}} is only allowed in prediction templates".into(),
                    ));
                }
            }
            Phase::Prediction => {
                if !has(&Segment::Analysis) {
                    return Err(invalid("body must contain {{analysis}}".into()));
                }
            }
        }
        let expected = key.strategy.phases();
        if !expected.contains(&key.phase) {
            return Err(PromptError::WrongPhase {
                key,
                expected,
                found: key.phase,
            });
        }
        Ok(PromptTemplate {
            key,
            body: body.to_string(),
            segments,
        })
    }

    pub fn key(&self) -> TemplateKey {
        self.key
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn strategy(&self) -> Strategy {
        self.key.strategy
    }

    pub fn phase(&self) -> Phase {
        self.key.phase
    }

    pub fn language(&self) -> PromptLanguage {
        self.key.language
    }
}

fn parse_segments(body: &str) -> Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| "unterminated '{{'".to_string())?;
        let seg = match after[..close].trim() {
            "article" => Segment::Article,
            "analysis" => Segment::Analysis,
            other => return Err(format!("unknown placeholder {{{{{other}}}}}")),
        };
        if open > 0 {
            segments.push(Segment::Text(rest[..open].to_string()));
        }
        segments.push(seg);
        rest = &after[close + 2..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Text(rest.to_string()));
    }
    Ok(segments)
}

/// A template instantiated for one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub configuration: PromptConfiguration,
    pub strategy: Strategy,
    pub phase: Phase,
    pub article_id: String,
    /// Byte range of the payload the context guard may cut: the article
    /// when present, otherwise the analysis.
    pub payload: Option<Range<usize>>,
    /// Byte offset where the instruction block ends.
    pub instruction_end: usize,
}

/// Where the instruction block goes in the chat exchange.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleMode {
    /// Whole prompt as one user message.
    #[default]
    User,
    /// Instruction block as a system message, the rest as the user message.
    System,
}

impl RenderedPrompt {
    pub fn to_messages(&self, mode: RoleMode) -> Vec<ChatMessage> {
        let split = self.instruction_end;
        if mode == RoleMode::User || split == 0 || self.text[..split].trim().is_empty() {
            return vec![ChatMessage {
                payload: self.payload.clone(),
                ..ChatMessage::user(self.text.clone())
            }];
        }
        let payload = self
            .payload
            .as_ref()
            .map(|p| p.start - split..p.end - split);
        vec![
            ChatMessage::new(Role::System, self.text[..split].trim_end()),
            ChatMessage {
                payload,
                ..ChatMessage::user(&self.text[split..])
            },
        ]
    }
}

fn render_segments(
    t: &PromptTemplate,
    article: &Article,
    analysis: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    let mut text = String::with_capacity(t.body.len() + article.text.len());
    let mut article_span = None;
    let mut analysis_span = None;
    let mut first_placeholder = None;
    for seg in &t.segments {
        let start = text.len();
        match seg {
            Segment::Text(s) => text.push_str(s),
            Segment::Article => {
                first_placeholder.get_or_insert(start);
                text.push_str(&article.text);
                article_span.get_or_insert(start..text.len());
            }
            Segment::Analysis => {
                first_placeholder.get_or_insert(start);
                let a = analysis
                    .ok_or_else(|| PromptError::UnresolvedPlaceholder("{{analysis}}".into()))?;
                text.push_str(a);
                analysis_span.get_or_insert(start..text.len());
            }
        }
    }
    let first = first_placeholder.unwrap_or(text.len());
    let instruction_end = text[..first].rfind("\n\n").map(|i| i + 2).unwrap_or(first);
    Ok(RenderedPrompt {
        text,
        configuration: PromptConfiguration {
            prompt_language: t.language(),
            article_language: article.language,
        },
        strategy: t.strategy(),
        phase: t.phase(),
        article_id: article.id.clone(),
        payload: article_span.or(analysis_span),
        instruction_end,
    })
}

/// Renders a zero-shot or CoT-analysis template for `article`.
pub fn render(t: &PromptTemplate, article: &Article) -> Result<RenderedPrompt, PromptError> {
    const ALLOWED: &[Phase] = &[Phase::Single, Phase::Analysis];
    if !ALLOWED.contains(&t.phase()) {
        return Err(PromptError::WrongPhase {
            key: t.key,
            expected: ALLOWED,
            found: t.phase(),
        });
    }
    render_segments(t, article, None)
}

/// Renders a CoT-prediction template embedding the analysis verbatim.
pub fn render_prediction(
    t: &PromptTemplate,
    article: &Article,
    analysis: &str,
) -> Result<RenderedPrompt, PromptError> {
    if t.phase() != Phase::Prediction {
        return Err(PromptError::WrongPhase {
            key: t.key,
            expected: &[Phase::Prediction],
            found: t.phase(),
        });
    }
    if analysis.trim().is_empty() {
        return Err(PromptError::EmptyAnalysis);
    }
    render_segments(t, article, Some(analysis))
}

/// The six templates, one per (strategy, phase, language).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKey, PromptTemplate>,
}

/// Non-fatal findings from template validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateWarning(pub String);

impl fmt::Display for TemplateWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Sentences of the published English zero-shot instruction that the
/// English zero-shot template is expected to keep verbatim.
pub const ENGLISH_ZERO_SHOT_ANCHORS: &[&str] = &[
    "You will be provided with a news article, and you are required to determine (predict) whether the article is satirical or not.",
    "Your answer should only be \"1\" if the article is satirical or \"0\" if the article is serious.",
    "Do not provide any explanation or additional commentary.",
    "Do not answer with blank.",
];

const BUNDLED: [(&str, &str); 6] = [
    (
        "zeroshot.single.en.txt",
        include_str!("../prompts/zeroshot.single.en.txt"),
    ),
    (
        "zeroshot.single.ar.txt",
        include_str!("../prompts/zeroshot.single.ar.txt"),
    ),
    (
        "cot.analysis.en.txt",
        include_str!("../prompts/cot.analysis.en.txt"),
    ),
    (
        "cot.analysis.ar.txt",
        include_str!("../prompts/cot.analysis.ar.txt"),
    ),
    (
        "cot.prediction.en.txt",
        include_str!("../prompts/cot.prediction.en.txt"),
    ),
    (
        "cot.prediction.ar.txt",
        include_str!("../prompts/cot.prediction.ar.txt"),
    ),
];

impl TemplateSet {
    /// Templates compiled into the binary.
    pub fn bundled() -> TemplateSet {
        let files: BTreeMap<String, String> = BUNDLED
            .iter()
            .map(|(n, b)| (n.to_string(), b.to_string()))
            .collect();
        TemplateSet::from_files(&files).expect("bundled templates are valid")
    }

    /// Builds a set from `file name -> contents`, requiring all six.
    pub fn from_files(files: &BTreeMap<String, String>) -> Result<TemplateSet, PromptError> {
        let mut templates = BTreeMap::new();
        let mut missing = Vec::new();
        for key in TemplateKey::all() {
            match files.get(&key.file_name()) {
                Some(body) => {
                    templates.insert(key, PromptTemplate::new(key, body.trim_end())?);
                }
                None => missing.push(key),
            }
        }
        if !missing.is_empty() {
            return Err(PromptError::MissingTemplates(missing));
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(
        &self,
        strategy: Strategy,
        phase: Phase,
        language: PromptLanguage,
    ) -> &PromptTemplate {
        &self.templates[&TemplateKey {
            strategy,
            phase,
            language,
        }]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Reports anchor sentences missing from the English zero-shot body.
    pub fn verbatim_warnings(&self) -> Vec<TemplateWarning> {
        let t = self.get(Strategy::ZeroShot, Phase::Single, Language::English);
        ENGLISH_ZERO_SHOT_ANCHORS
            .iter()
            .filter(|a| !t.body.contains(*a))
            .map(|a| {
                TemplateWarning(format!(
                    "{}: verbatim-anchor mismatch, missing {a:?}",
                    t.key.file_name()
                ))
            })
            .collect()
    }
}

/// Loads the six template files from `dir`.
pub fn load_templates(dir: &Path) -> Result<(TemplateSet, Vec<TemplateWarning>), PromptError> {
    let mut files = BTreeMap::new();
    for key in TemplateKey::all() {
        let path = dir.join(key.file_name());
        match std::fs::read_to_string(&path) {
            Ok(body) => {
                files.insert(key.file_name(), body);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => {
                return Err(PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        }
    }
    let set = TemplateSet::from_files(&files)?;
    let warnings = set.verbatim_warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((set, warnings))
}

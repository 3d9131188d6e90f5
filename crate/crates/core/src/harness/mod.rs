//! Experiment runners over a labeled corpus, producing per-language
//! report tables.

mod criteria;
mod generative;
mod report;
mod retrieval;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use criteria::{default_criteria_settings, run_criteria_retrieval};
pub use generative::{missing_fc_rate, run_filtration, run_summarization, run_veracity, VeracityMode};
pub use report::{ExperimentReport, Provenance, QueryRow, RunInfo};
pub use retrieval::run_direct_retrieval;

use crate::corpus::{is_valid_language, open_any, Corpus, CorpusError, FactCheck, Post};
use crate::embedding::{EmbedError, Embedder, EmbedderSpec, EmbeddingCache};
use crate::llm::{Chat, ChatSpec, LlmError, SummaryOrder, TemplateSet, MAX_FILTER_CANDIDATES};
use crate::metrics::{MetricError, RelevanceJudgments};
use crate::pipeline::PipelineError;
use crate::retrieval::{build_index, RankedList, RetrievalError, VectorIndex, DEFAULT_PREFILTER_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}

fn default_k_retrieve() -> usize {
    50
}
fn default_k_report() -> usize {
    10
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("reports")
}
fn default_true() -> bool {
    true
}
fn default_min_category_size() -> usize {
    100
}
fn default_threshold() -> f64 {
    DEFAULT_PREFILTER_THRESHOLD
}
fn default_summary_order() -> SummaryOrder {
    SummaryOrder::ArticleFirst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaKind {
    NamedEntity,
    Language,
    Domain,
    DateRange,
}

/// One instantiation of a criterion, e.g. language `es` or organization
/// `AFP`. Date ranges are written `YYYY-MM-DD..YYYY-MM-DD` (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaCategory {
    pub kind: CriteriaKind,
    pub value: String,
    /// Natural-language criterion; a default phrasing is used when absent.
    #[serde(default)]
    pub criteria_text: Option<String>,
}

impl CriteriaCategory {
    pub fn new(kind: CriteriaKind, value: impl Into<String>) -> Self {
        Self {
            kind,
            value: value.into(),
            criteria_text: None,
        }
    }

    fn date_range(&self) -> Result<(NaiveDate, NaiveDate), String> {
        let (a, b) = self
            .value
            .split_once("..")
            .ok_or_else(|| format!("date range {:?} must look like 2020-01-01..2020-12-31", self.value))?;
        let parse = |s: &str| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("{s:?}: {e}"));
        let (from, to) = (parse(a)?, parse(b)?);
        if from > to {
            return Err(format!("date range {:?} is reversed", self.value));
        }
        Ok((from, to))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.value.trim().is_empty() {
            return Err("criteria category value is empty".into());
        }
        match self.kind {
            CriteriaKind::DateRange => self.date_range().map(|_| ()),
            CriteriaKind::Language if !is_valid_language(&self.value) => {
                Err(format!("invalid language code {:?}", self.value))
            }
            _ => Ok(()),
        }
    }

    pub fn text(&self) -> String {
        if let Some(t) = &self.criteria_text {
            return t.clone();
        }
        match self.kind {
            CriteriaKind::NamedEntity => format!("Fact-checks about {}", self.value),
            CriteriaKind::Language => {
                format!(
                    "Fact-checks written in {}",
                    crate::retrieval::language_name(&self.value)
                )
            }
            CriteriaKind::Domain => format!("Fact-checks published by {}", self.value),
            CriteriaKind::DateRange => match self.date_range() {
                Ok((from, to)) => format!("Fact-checks published between {from} and {to}"),
                Err(_) => format!("Fact-checks published in {}", self.value),
            },
        }
    }

    /// Symbolic counterpart of the criterion.
    pub fn matches(&self, fc: &FactCheck) -> bool {
        match self.kind {
            CriteriaKind::NamedEntity => {
                let needle = self.value.to_lowercase();
                fc.claim_text.to_lowercase().contains(&needle)
                    || fc
                        .claim_english
                        .as_deref()
                        .is_some_and(|c| c.to_lowercase().contains(&needle))
            }
            CriteriaKind::Language => fc.language == self.value,
            CriteriaKind::Domain => fc.organization.trim().eq_ignore_ascii_case(self.value.trim()),
            CriteriaKind::DateRange => match (self.date_range(), fc.published_date) {
                (Ok((from, to)), Some(d)) => from <= d && d <= to,
                _ => false,
            },
        }
    }
}

/// A named group of categories reported together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaSetting {
    pub name: String,
    pub categories: Vec<CriteriaCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Stored corpus, data directory or raw fact-check file.
    pub corpus_path: PathBuf,
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub chat: Option<ChatSpec>,
    #[serde(default = "default_k_retrieve")]
    pub k_retrieve: usize,
    #[serde(default = "default_k_report")]
    pub k_report: usize,
    /// Additional success-at-K cutoffs.
    #[serde(default)]
    pub s_at_ks: Vec<usize>,
    /// Empty means every language in the corpus.
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Adds a BM25 row to direct retrieval.
    #[serde(default)]
    pub bm25: bool,
    /// Rank posts only against fact-checks in their own language.
    #[serde(default = "default_true")]
    pub monolingual: bool,
    /// Caps the items evaluated per language; chosen by seeded hash.
    #[serde(default)]
    pub sample_per_language: Option<usize>,
    #[serde(default = "default_min_category_size")]
    pub min_category_size: usize,
    #[serde(default = "default_threshold")]
    pub prefilter_threshold: f64,
    /// Empty means settings derived from the corpus.
    #[serde(default)]
    pub criteria: Vec<CriteriaSetting>,
    #[serde(default = "default_summary_order")]
    pub summary_order: SummaryOrder,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Persistent embedding cache file.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, corpus_path: impl Into<PathBuf>, embedder: EmbedderSpec) -> Self {
        Self {
            name: name.into(),
            corpus_path: corpus_path.into(),
            embedder,
            chat: None,
            k_retrieve: default_k_retrieve(),
            k_report: default_k_report(),
            s_at_ks: Vec::new(),
            languages: Vec::new(),
            seed: 0,
            output_dir: default_output_dir(),
            bm25: false,
            monolingual: true,
            sample_per_language: None,
            min_category_size: default_min_category_size(),
            prefilter_threshold: default_threshold(),
            criteria: Vec::new(),
            summary_order: default_summary_order(),
            templates_dir: None,
            cache_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "name {:?} must be non-empty and contain no path separators",
                self.name
            ));
        }
        if self.k_retrieve == 0 || self.k_report == 0 {
            return bad("k_retrieve and k_report must be positive".into());
        }
        if self.k_report > self.k_retrieve {
            return bad(format!(
                "k_report {} exceeds k_retrieve {}",
                self.k_report, self.k_retrieve
            ));
        }
        if let Some(k) = self.s_at_ks.iter().find(|&&k| k == 0 || k > self.k_retrieve) {
            return bad(format!("s_at_ks entry {k} must be in 1..={}", self.k_retrieve));
        }
        if let Some(l) = self.languages.iter().find(|l| !is_valid_language(l)) {
            return bad(format!("invalid language code {l:?}"));
        }
        if !(0.0..=1.0).contains(&self.prefilter_threshold) {
            return bad(format!(
                "prefilter_threshold {} outside [0, 1]",
                self.prefilter_threshold
            ));
        }
        for s in &self.criteria {
            for c in &s.categories {
                c.validate()
                    .map_err(|m| HarnessError::Config(format!("criteria setting {}: {m}", s.name)))?;
            }
        }
        self.embedder.validate()?;
        if let Some(c) = &self.chat {
            c.validate()?;
        }
        Ok(())
    }

    fn require_chat(&self) -> Result<&ChatSpec, HarnessError> {
        self.chat
            .as_ref()
            .ok_or_else(|| HarnessError::Config("this experiment needs a [chat] provider".into()))
    }

    fn require_filterable_k(&self) -> Result<(), HarnessError> {
        if self.k_retrieve > MAX_FILTER_CANDIDATES {
            return Err(HarnessError::Config(format!(
                "k_retrieve {} exceeds the {MAX_FILTER_CANDIDATES} candidates a filtration prompt can hold",
                self.k_retrieve
            )));
        }
        Ok(())
    }

    /// Hash of every setting that can change results; `output_dir` is left out.
    pub fn sha256(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = PathBuf::new();
        hex_digest(serde_json::to_string(&hashed).expect("config serializes").as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a corpus, independent of how it was loaded.
pub fn corpus_sha256(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for f in corpus.fact_checks() {
        h.update(serde_json::to_vec(f).expect("fact-check serializes"));
        h.update(b"\n");
    }
    for p in corpus.posts() {
        h.update(serde_json::to_vec(p).expect("post serializes"));
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything an experiment needs, loaded once.
pub(crate) struct Workspace<'a> {
    pub cfg: &'a ExperimentConfig,
    pub corpus: Corpus,
    pub embedder: Embedder,
    pub chat: Option<Chat>,
    pub templates: Arc<TemplateSet>,
    pub warnings: Vec<String>,
}

impl<'a> Workspace<'a> {
    pub fn open(cfg: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let (corpus, warnings) = open_any(&cfg.corpus_path)?;
        let cache = match &cfg.cache_path {
            Some(p) => EmbeddingCache::open(p)?,
            None => EmbeddingCache::in_memory(),
        };
        let embedder = Embedder::from_spec(&cfg.embedder)?.with_cache(Arc::new(cache));
        let chat = cfg.chat.as_ref().map(Chat::from_spec).transpose()?;
        let templates = match &cfg.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        Ok(Self {
            cfg,
            corpus,
            embedder,
            chat,
            templates: Arc::new(templates),
            warnings,
        })
    }

    pub fn chat(&self) -> Result<&Chat, HarnessError> {
        self.cfg.require_chat()?;
        Ok(self.chat.as_ref().expect("chat built from spec"))
    }

    /// Configured languages, or every language among `present`.
    pub fn languages(&mut self, present: BTreeSet<String>) -> Vec<String> {
        if self.cfg.languages.is_empty() {
            return present.into_iter().collect();
        }
        let mut out = Vec::new();
        for l in &self.cfg.languages {
            if present.contains(l) {
                out.push(l.clone());
            } else {
                self.warnings
                    .push(format!("language {l}: nothing to evaluate; skipped"));
            }
        }
        out
    }

    /// Relevant fact-check ids for a post; same-language only when
    /// monolingual.
    pub fn judged(&self, post: &Post) -> BTreeSet<String> {
        post.linked_factcheck_ids
            .iter()
            .filter(|id| {
                !self.cfg.monolingual || self.corpus.fact_check(id).is_some_and(|f| f.language == post.language)
            })
            .cloned()
            .collect()
    }

    /// Posts in `lang` with at least one judged fact-check, sampled.
    pub fn judged_posts(&self, lang: &str) -> (Vec<&Post>, RelevanceJudgments) {
        let posts: Vec<&Post> = self
            .corpus
            .posts()
            .filter(|p| p.language == lang && !self.judged(p).is_empty())
            .collect();
        let posts = self.sample(posts, |p| &p.id);
        let judg = posts.iter().map(|p| (p.id.clone(), self.judged(p))).collect();
        (posts, judg)
    }

    /// Keeps at most `sample_per_language` items, chosen by a seeded hash of
    /// their ids; order is preserved.
    pub fn sample<'b, T>(&self, items: Vec<&'b T>, id: impl Fn(&T) -> &String) -> Vec<&'b T> {
        let Some(n) = self.cfg.sample_per_language else {
            return items;
        };
        if items.len() <= n {
            return items;
        }
        let seed = self.cfg.seed.to_le_bytes();
        let mut keyed: Vec<(String, usize)> = items
            .iter()
            .enumerate()
            .map(|(i, t)| (hex_digest(&[seed.as_slice(), id(t).as_bytes()].concat()), i))
            .collect();
        keyed.sort();
        let mut chosen: Vec<usize> = keyed.into_iter().take(n).map(|(_, i)| i).collect();
        chosen.sort_unstable();
        chosen.into_iter().map(|i| items[i]).collect()
    }

    pub fn language_filter<'b>(&'b self, lang: &'b str) -> impl Fn(&str) -> bool + Sync + 'b {
        let mono = self.cfg.monolingual;
        move |id: &str| !mono || self.corpus.fact_check(id).is_some_and(|f| f.language == lang)
    }

    /// Cosine index over every fact-check's claim text.
    pub fn claim_index(&self) -> Result<VectorIndex, HarnessError> {
        let items: Vec<(String, String)> = self
            .corpus
            .fact_checks()
            .map(|f| (f.id.clone(), f.claim_text.clone()))
            .collect();
        Ok(build_index(&self.embedder, &items)?)
    }

    /// Languages of posts that have judged fact-checks.
    pub fn judged_languages(&mut self) -> Vec<String> {
        let present = self
            .corpus
            .posts()
            .filter(|p| !self.judged(p).is_empty())
            .map(|p| p.language.clone())
            .collect();
        self.languages(present)
    }

    pub fn provenance(&self, experiment: &str, parameters: BTreeMap<String, String>) -> Provenance {
        Provenance {
            experiment: experiment.to_string(),
            config_sha256: self.cfg.sha256(),
            corpus_sha256: corpus_sha256(&self.corpus),
            embedder_model: self.cfg.embedder.model_name.clone(),
            chat_model: self.cfg.chat.as_ref().map(|c| c.model_name.clone()),
            seed: self.cfg.seed,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters,
        }
    }
}

pub(crate) fn join_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    ids.into_iter().collect::<Vec<_>>().join(";")
}

pub(crate) fn first_relevant_rank(ranked: &RankedList, relevant: &BTreeSet<String>) -> Option<usize> {
    ranked.ids().position(|id| relevant.contains(id)).map(|p| p + 1)
}

/// Resolves `path` against `base` unless it is absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

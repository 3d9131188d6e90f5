//! The live verification pipeline: retrieve, filter, summarize, predict.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    is_valid_language, open_any, save_corpus, Corpus, CorpusError, FactCheck, VeracityLabel, STORED_CORPUS_FILE,
};
use crate::embedding::{EmbedError, Embedder};
use crate::llm::{
    filter_candidates, overall_summary, predict_veracity, summarize, Chat, Evidence, LlmError, SummaryOrder,
    TemplateSet, VeracityVerdict, MAX_FILTER_CANDIDATES,
};
use crate::retrieval::{build_index, RankedList, RetrievalError, VectorIndex};

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_MAX_TEXT_LEN: usize = 8192;
/// File name of a saved claim index inside a data directory.
pub const INDEX_FILE: &str = "index.bin";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("query text has {len} characters, limit is {max}")]
    QueryTooLong { len: usize, max: usize },
    #[error("top_k must be between 1 and {max}, got {got}")]
    InvalidTopK { got: usize, max: usize },
    #[error("invalid language hint {0:?}")]
    InvalidLanguage(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("chat provider failed: {0}")]
    Chat(#[from] LlmError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// An immutable corpus with its claim index.
#[derive(Debug, Clone)]
pub struct Snapshot {
    corpus: Corpus,
    index: VectorIndex,
}

fn claim_items(corpus: &Corpus) -> Vec<(String, String)> {
    corpus
        .fact_checks()
        .map(|f| (f.id.clone(), f.claim_text.clone()))
        .collect()
}

impl Snapshot {
    /// Pairs a corpus with an index over exactly its fact-checks.
    pub fn new(corpus: Corpus, index: VectorIndex) -> Result<Self, RetrievalError> {
        if index.len() != corpus.num_fact_checks() || !corpus.fact_checks().all(|f| index.contains(&f.id)) {
            return Err(RetrievalError::IndexMismatch);
        }
        Ok(Self { corpus, index })
    }

    /// Embeds every claim and indexes it.
    pub fn build(corpus: Corpus, embedder: &Embedder) -> Result<Self, RetrievalError> {
        let index = build_index(embedder, &claim_items(&corpus))?;
        Ok(Self { corpus, index })
    }

    /// Opens a corpus location (see [`open_any`]). A saved index next to it
    /// is reused when it matches the embedder and corpus; otherwise the
    /// index is rebuilt.
    pub fn open(path: &Path, embedder: &Embedder) -> Result<(Self, Vec<String>), PipelineError> {
        let (corpus, mut warnings) = open_any(path)?;
        let saved = if path.is_dir() {
            path.join(INDEX_FILE)
        } else {
            path.with_file_name(INDEX_FILE)
        };
        if saved.is_file() {
            match VectorIndex::open(&saved) {
                Ok(index) if index.model_name() == embedder.spec().model_name && index.dim() == embedder.spec().dim => {
                    match Self::new(corpus.clone(), index) {
                        Ok(s) => return Ok((s, warnings)),
                        Err(_) => warnings.push(format!("{} does not match the corpus; rebuilding", saved.display())),
                    }
                }
                Ok(_) => warnings.push(format!("{} was built with another model; rebuilding", saved.display())),
                Err(e) => warnings.push(format!("cannot use {}: {e}; rebuilding", saved.display())),
            }
        }
        Ok((Self::build(corpus, embedder)?, warnings))
    }

    /// Writes `corpus.jsonl` and `index.bin` into `dir`, each via a
    /// temporary file and rename.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        save_corpus(&self.corpus, &dir.join(STORED_CORPUS_FILE))?;
        self.index.save(&dir.join(INDEX_FILE))?;
        Ok(())
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub text: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Restricts retrieval to fact-checks in this language.
    #[serde(default)]
    pub language_hint: Option<String>,
}

impl VerifyRequest {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            top_k: None,
            language_hint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantFactCheck {
    pub factcheck: FactCheck,
    pub score: f64,
    pub summary: String,
    pub relevance_explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFactCheck {
    pub factcheck: FactCheck,
    pub score: f64,
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub retrieve_ms: u64,
    pub filter_ms: u64,
    pub summarize_ms: u64,
    pub predict_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    /// Fact-checks the model judged relevant, in retrieval order.
    pub relevant: Vec<RelevantFactCheck>,
    /// The rest of the retrieved list, in retrieval order.
    pub irrelevant: Vec<ScoredFactCheck>,
    pub verdict: VeracityVerdict,
    pub overall_summary: String,
    /// Set when generation was unavailable and only retrieval ran.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub timing: StageTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Answer with retrieval only when the chat provider fails.
    pub degraded_mode: bool,
    pub summary_order: SummaryOrder,
    pub max_text_len: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            degraded_mode: true,
            summary_order: SummaryOrder::ArticleFirst,
            max_text_len: DEFAULT_MAX_TEXT_LEN,
        }
    }
}

fn zero_distribution() -> BTreeMap<VeracityLabel, usize> {
    VeracityLabel::ALL.iter().map(|&l| (l, 0)).collect()
}

fn elapsed_ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

/// Providers and settings shared by all requests. Cheap to clone.
#[derive(Clone)]
pub struct Pipeline {
    embedder: Embedder,
    chat: Option<Chat>,
    templates: Arc<TemplateSet>,
    options: PipelineOptions,
}

impl Pipeline {
    /// `chat = None` runs every request in degraded mode.
    pub fn new(embedder: Embedder, chat: Option<Chat>, templates: Arc<TemplateSet>, options: PipelineOptions) -> Self {
        Self {
            embedder,
            chat,
            templates,
            options,
        }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn chat(&self) -> Option<&Chat> {
        self.chat.as_ref()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    /// Top `k` fact-checks by claim similarity, optionally in one language.
    pub fn retrieve(
        &self,
        snapshot: &Snapshot,
        text: &str,
        k: usize,
        language: Option<&str>,
        query_id: &str,
    ) -> Result<RankedList, PipelineError> {
        if snapshot.is_empty() {
            return Ok(RankedList::empty(query_id));
        }
        let query = self.embedder.embed_one(text)?;
        let corpus = snapshot.corpus();
        let ranked = match language {
            Some(lang) => snapshot.index().top_k_where(&query, k, query_id, |id| {
                corpus.fact_check(id).is_some_and(|f| f.language == lang)
            })?,
            None => snapshot.index().top_k(&query, k, query_id)?,
        };
        Ok(ranked)
    }

    fn validate(&self, req: &VerifyRequest) -> Result<usize, PipelineError> {
        if req.text.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let len = req.text.chars().count();
        if len > self.options.max_text_len {
            return Err(PipelineError::QueryTooLong {
                len,
                max: self.options.max_text_len,
            });
        }
        let k = req.top_k.unwrap_or(DEFAULT_TOP_K);
        if k == 0 || k > MAX_FILTER_CANDIDATES {
            return Err(PipelineError::InvalidTopK {
                got: k,
                max: MAX_FILTER_CANDIDATES,
            });
        }
        if let Some(lang) = &req.language_hint {
            if !is_valid_language(lang) {
                return Err(PipelineError::InvalidLanguage(lang.clone()));
            }
        }
        Ok(k)
    }

    /// Runs all four stages. Chat failures yield a degraded,
    /// retrieval-only response when degraded mode is on.
    pub fn verify(&self, snapshot: &Snapshot, req: &VerifyRequest) -> Result<VerifyResponse, PipelineError> {
        let start = Instant::now();
        let k = self.validate(req)?;
        let ranked = self.retrieve(snapshot, &req.text, k, req.language_hint.as_deref(), "query")?;
        let mut timing = StageTiming {
            retrieve_ms: elapsed_ms(start),
            ..StageTiming::default()
        };
        let corpus = snapshot.corpus();
        let scored: Vec<(&FactCheck, f64)> = ranked
            .items()
            .iter()
            .filter_map(|it| corpus.fact_check(&it.factcheck_id).map(|f| (f, it.score)))
            .collect();

        let Some(chat) = &self.chat else {
            return Ok(degraded(&scored, "chat provider is disabled".into(), timing, start));
        };
        match self.generate(chat, &req.text, &scored, &mut timing) {
            Ok(mut resp) => {
                timing.total_ms = elapsed_ms(start);
                resp.timing = timing;
                Ok(resp)
            }
            Err(e) if self.options.degraded_mode => {
                tracing::warn!(error = %e, "chat provider failed; answering with retrieval only");
                Ok(degraded(&scored, format!("chat provider failed: {e}"), timing, start))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn generate(
        &self,
        chat: &Chat,
        text: &str,
        scored: &[(&FactCheck, f64)],
        timing: &mut StageTiming,
    ) -> Result<VerifyResponse, LlmError> {
        let mut warnings = Vec::new();
        let t = Instant::now();
        let filtered = if scored.is_empty() {
            None
        } else {
            let candidates: Vec<&FactCheck> = scored.iter().map(|(f, _)| *f).collect();
            Some(filter_candidates(chat, &self.templates, text, &candidates)?)
        };
        timing.filter_ms = elapsed_ms(t);
        let explanations: BTreeMap<&str, &str> = filtered
            .iter()
            .flat_map(|r| {
                r.relevant
                    .iter()
                    .map(|p| (p.factcheck_id.as_str(), p.explanation.as_str()))
            })
            .collect();
        if let Some(r) = &filtered {
            warnings.extend(r.warnings.iter().cloned());
        }
        let keep: HashSet<&str> = explanations.keys().copied().collect();
        let (relevant, irrelevant): (Vec<_>, Vec<_>) = scored.iter().partition(|(f, _)| keep.contains(f.id.as_str()));

        let t = Instant::now();
        let summaries: Vec<String> = relevant
            .par_iter()
            .map(|(f, _)| self.summary_for(chat, f))
            .collect::<Result<_, _>>()?;
        timing.summarize_ms = elapsed_ms(t);

        let t = Instant::now();
        let evidence: Vec<Evidence> = relevant
            .iter()
            .zip(&summaries)
            .map(|((f, _), s)| Evidence {
                factcheck: f,
                summary: s,
            })
            .collect();
        let verdict = predict_veracity(chat, &self.templates, text, &evidence)?;
        if let Some(w) = &verdict.parse_warning {
            warnings.push(w.clone());
        }
        let overall = if evidence.is_empty() {
            String::new()
        } else {
            overall_summary(chat, &self.templates, text, &evidence)?
        };
        timing.predict_ms = elapsed_ms(t);

        Ok(VerifyResponse {
            relevant: relevant
                .iter()
                .zip(summaries)
                .map(|((f, score), summary)| RelevantFactCheck {
                    factcheck: (*f).clone(),
                    score: *score,
                    summary,
                    relevance_explanation: explanations.get(f.id.as_str()).unwrap_or(&"").to_string(),
                })
                .collect(),
            irrelevant: irrelevant
                .iter()
                .map(|(f, score)| ScoredFactCheck {
                    factcheck: (*f).clone(),
                    score: *score,
                })
                .collect(),
            verdict,
            overall_summary: overall,
            degraded: false,
            warnings,
            timing: StageTiming::default(),
        })
    }

    /// Model summary of the article when there is one, else the stored
    /// reference summary.
    fn summary_for(&self, chat: &Chat, fc: &FactCheck) -> Result<String, LlmError> {
        match fc.article_text.as_deref().filter(|a| !a.trim().is_empty()) {
            Some(article) => summarize(chat, &self.templates, article, self.options.summary_order),
            None => Ok(fc
                .reference_summary_english
                .clone()
                .or_else(|| fc.reference_summary.clone())
                .unwrap_or_default()),
        }
    }
}

fn degraded(scored: &[(&FactCheck, f64)], reason: String, mut timing: StageTiming, start: Instant) -> VerifyResponse {
    timing.total_ms = elapsed_ms(start);
    VerifyResponse {
        relevant: Vec::new(),
        irrelevant: scored
            .iter()
            .map(|(f, score)| ScoredFactCheck {
                factcheck: (*f).clone(),
                score: *score,
            })
            .collect(),
        verdict: VeracityVerdict::unverifiable(zero_distribution(), "No verdict: generation is unavailable."),
        overall_summary: String::new(),
        degraded: true,
        warnings: vec![reason],
        timing,
    }
}

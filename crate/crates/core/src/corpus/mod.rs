//! Domain types, dataset ingestion and durable corpus storage.

mod load;
mod rating;
mod source;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use load::{load_factchecks, load_posts, Format, LoadReport, LoadWarning, RecordError, RecordErrorKind};
pub use rating::{normalize_rating, Normalized, RatingNormalizer};
pub use source::{load_raw, open_any, open_detailed, Opened, SourceError, STORED_CORPUS_FILE};
pub use store::{open_corpus, save_corpus, CORPUS_FORMAT_VERSION};

/// Three-way veracity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VeracityLabel {
    #[serde(alias = "true", alias = "TRUE")]
    True,
    #[serde(alias = "false", alias = "FALSE")]
    False,
    #[serde(alias = "unverifiable", alias = "UNVERIFIABLE")]
    Unverifiable,
}

impl VeracityLabel {
    pub const ALL: [VeracityLabel; 3] = [Self::True, Self::False, Self::Unverifiable];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::True => "True",
            Self::False => "False",
            Self::Unverifiable => "Unverifiable",
        }
    }
}

impl fmt::Display for VeracityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One published fact-check: the retrieval unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheck {
    pub id: String,
    pub claim_text: String,
    pub claim_english: Option<String>,
    pub language: String,
    pub published_date: Option<NaiveDate>,
    pub organization: String,
    pub rating_raw: String,
    pub rating: VeracityLabel,
    pub article_url: Option<String>,
    pub article_text: Option<String>,
    pub reference_summary: Option<String>,
    pub reference_summary_english: Option<String>,
}

impl FactCheck {
    /// Minimal record; optional fields absent, rating `Unverifiable`.
    pub fn new(id: impl Into<String>, claim_text: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            claim_text: claim_text.into(),
            claim_english: None,
            language: language.into(),
            published_date: None,
            organization: String::new(),
            rating_raw: String::new(),
            rating: VeracityLabel::Unverifiable,
            article_url: None,
            article_text: None,
            reference_summary: None,
            reference_summary_english: None,
        }
    }

    /// English claim when available, otherwise the original.
    pub fn display_claim(&self) -> &str {
        self.claim_english
            .as_deref()
            .filter(|c| !c.trim().is_empty())
            .unwrap_or(&self.claim_text)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::Invalid("fact-check id is empty".into()));
        }
        if self.claim_text.trim().is_empty() {
            return Err(CorpusError::Invalid(format!(
                "fact-check {}: claim_text is empty",
                self.id
            )));
        }
        if !is_valid_language(&self.language) {
            return Err(CorpusError::Invalid(format!(
                "fact-check {}: invalid language code {:?}",
                self.id, self.language
            )));
        }
        Ok(())
    }
}

/// A social-media post used as a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub language: String,
    pub veracity: Option<VeracityLabel>,
    #[serde(default)]
    pub linked_factcheck_ids: BTreeSet<String>,
}

impl Post {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            language: language.into(),
            veracity: None,
            linked_factcheck_ids: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::Invalid("post id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(CorpusError::Invalid(format!("post {}: text is empty", self.id)));
        }
        if !is_valid_language(&self.language) {
            return Err(CorpusError::Invalid(format!(
                "post {}: invalid language code {:?}",
                self.id, self.language
            )));
        }
        Ok(())
    }
}

/// `^[a-z]{2,3}(-[a-z0-9]{2,8})*$`
pub fn is_valid_language(code: &str) -> bool {
    let mut parts = code.split('-');
    let primary = parts.next().unwrap_or_default();
    if !(2..=3).contains(&primary.len()) || !primary.bytes().all(|b| b.is_ascii_lowercase()) {
        return false;
    }
    parts.all(|p| (2..=8).contains(&p.len()) && p.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()))
}

/// How dangling post → fact-check links are treated when assembling a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrity {
    Strict,
    /// Drop dangling links and report them as warnings.
    #[default]
    Lenient,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported corpus format version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corpus file {path} line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("post {post} links to unknown fact-check {factcheck}")]
    DanglingLink { post: String, factcheck: String },
    #[error("{0}")]
    Invalid(String),
}

/// Immutable collection of fact-checks and posts with referential integrity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    fact_checks: BTreeMap<String, FactCheck>,
    posts: BTreeMap<String, Post>,
}

impl Corpus {
    /// Builds a corpus, validating every record and every post link.
    ///
    /// Returns the corpus together with warnings for links dropped in
    /// lenient mode.
    pub fn assemble(
        fact_checks: impl IntoIterator<Item = FactCheck>,
        posts: impl IntoIterator<Item = Post>,
        integrity: Integrity,
    ) -> Result<(Corpus, Vec<String>), CorpusError> {
        let mut fcs = BTreeMap::new();
        for fc in fact_checks {
            fc.validate()?;
            if fcs.contains_key(&fc.id) {
                return Err(CorpusError::DuplicateId(fc.id));
            }
            fcs.insert(fc.id.clone(), fc);
        }
        let mut warnings = Vec::new();
        let mut ps = BTreeMap::new();
        for mut post in posts {
            post.validate()?;
            if ps.contains_key(&post.id) {
                return Err(CorpusError::DuplicateId(post.id));
            }
            let dangling: Vec<String> = post
                .linked_factcheck_ids
                .iter()
                .filter(|id| !fcs.contains_key(*id))
                .cloned()
                .collect();
            for fc_id in dangling {
                match integrity {
                    Integrity::Strict => {
                        return Err(CorpusError::DanglingLink {
                            post: post.id,
                            factcheck: fc_id,
                        })
                    }
                    Integrity::Lenient => {
                        warnings.push(format!(
                            "post {} links to unknown fact-check {}; link dropped",
                            post.id, fc_id
                        ));
                        post.linked_factcheck_ids.remove(&fc_id);
                    }
                }
            }
            ps.insert(post.id.clone(), post);
        }
        Ok((
            Corpus {
                fact_checks: fcs,
                posts: ps,
            },
            warnings,
        ))
    }

    pub fn fact_check(&self, id: &str) -> Option<&FactCheck> {
        self.fact_checks.get(id)
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.posts.get(id)
    }

    /// Fact-checks in ascending id order.
    pub fn fact_checks(&self) -> impl Iterator<Item = &FactCheck> {
        self.fact_checks.values()
    }

    /// Posts in ascending id order.
    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.posts.values()
    }

    pub fn num_fact_checks(&self) -> usize {
        self.fact_checks.len()
    }

    pub fn num_posts(&self) -> usize {
        self.posts.len()
    }

    /// Sorted, de-duplicated languages across fact-checks and posts.
    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .fact_checks
            .values()
            .map(|f| f.language.as_str())
            .chain(self.posts.values().map(|p| p.language.as_str()))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    load_factchecks, load_posts, open_corpus, Corpus, CorpusError, Format, Integrity, RatingNormalizer, RecordError,
};

/// File name of a stored corpus inside a data directory.
pub const STORED_CORPUS_FILE: &str = "corpus.jsonl";

fn is_stored_corpus(path: &Path) -> bool {
    let Ok(f) = File::open(path) else { return false };
    let mut first = String::new();
    if BufReader::new(f).read_line(&mut first).is_err() {
        return false;
    }
    serde_json::from_str::<serde_json::Value>(&first)
        .ok()
        .and_then(|v| {
            v.get("format")
                .and_then(|f| f.as_str())
                .map(|f| f == "claimline-corpus")
        })
        .unwrap_or(false)
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["jsonl", "csv"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// A rejected record and the file it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceError {
    pub file: String,
    #[serde(flatten)]
    pub error: RecordError,
}

impl std::fmt::Display for SourceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {:?}", self.file, self.error.line, self.error.kind)
    }
}

/// A corpus plus what was rejected or adjusted while loading it.
#[derive(Debug, Clone)]
pub struct Opened {
    pub corpus: Corpus,
    pub errors: Vec<SourceError>,
    /// Dropped links, unknown ratings and similar non-fatal notes.
    pub warnings: Vec<String>,
}

/// Like [`open_any`], keeping rejected records apart from other warnings.
pub fn open_detailed(path: &Path) -> Result<Opened, CorpusError> {
    let stored = |p: &Path| -> Result<Opened, CorpusError> {
        Ok(Opened {
            corpus: open_corpus(p)?,
            errors: Vec::new(),
            warnings: Vec::new(),
        })
    };
    if path.is_dir() {
        let corpus_file = path.join(STORED_CORPUS_FILE);
        if is_stored_corpus(&corpus_file) {
            return stored(&corpus_file);
        }
        let fcs = find(path, "factchecks").ok_or_else(|| {
            CorpusError::Invalid(format!(
                "{} holds neither {STORED_CORPUS_FILE} nor factchecks.jsonl/.csv",
                path.display()
            ))
        })?;
        return load_detailed(&fcs, find(path, "posts").as_deref());
    }
    if is_stored_corpus(path) {
        return stored(path);
    }
    load_detailed(path, None)
}

/// Opens a corpus from any supported location:
///
/// * a stored corpus file, or a directory holding `corpus.jsonl`;
/// * a directory with `factchecks.{jsonl,csv}` and optionally
///   `posts.{jsonl,csv}`;
/// * a single raw fact-check file.
///
/// Raw inputs are loaded leniently; rejected records and dropped links come
/// back as warnings.
pub fn open_any(path: &Path) -> Result<(Corpus, Vec<String>), CorpusError> {
    open_detailed(path).map(Opened::into_parts)
}

impl Opened {
    /// The corpus and every error and warning as text.
    pub fn into_parts(self) -> (Corpus, Vec<String>) {
        let mut notes: Vec<String> = self.errors.iter().map(ToString::to_string).collect();
        notes.extend(self.warnings);
        (self.corpus, notes)
    }
}

fn load_detailed(factchecks: &Path, posts: Option<&Path>) -> Result<Opened, CorpusError> {
    let ratings = RatingNormalizer::default();
    let tag = |p: &Path, errors: Vec<RecordError>| -> Vec<SourceError> {
        errors
            .into_iter()
            .map(|error| SourceError {
                file: p.display().to_string(),
                error,
            })
            .collect()
    };
    let fc_report = load_factchecks(factchecks, Format::from_path(factchecks), &ratings)?;
    let mut errors = tag(factchecks, fc_report.errors);
    let mut warnings: Vec<String> = fc_report
        .warnings
        .iter()
        .map(|w| format!("{}:{}: {}", factchecks.display(), w.line, w.message))
        .collect();
    let post_items = match posts {
        Some(p) => {
            let r = load_posts(p, Format::from_path(p), &ratings)?;
            errors.extend(tag(p, r.errors));
            warnings.extend(
                r.warnings
                    .iter()
                    .map(|w| format!("{}:{}: {}", p.display(), w.line, w.message)),
            );
            r.items
        }
        None => Vec::new(),
    };
    let (corpus, link_warnings) = Corpus::assemble(fc_report.items, post_items, Integrity::Lenient)?;
    warnings.extend(link_warnings);
    Ok(Opened {
        corpus,
        errors,
        warnings,
    })
}

/// Loads raw fact-check (and post) files into a corpus.
pub fn load_raw(factchecks: &Path, posts: Option<&Path>) -> Result<(Corpus, Vec<String>), CorpusError> {
    load_detailed(factchecks, posts).map(Opened::into_parts)
}

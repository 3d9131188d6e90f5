use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{is_valid_language, CorpusError, FactCheck, Post, RatingNormalizer};

/// Input file format for the dataset loaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RecordErrorKind {
    Malformed(String),
    MissingField(String),
    DuplicateId(String),
    InvalidLanguage(String),
    InvalidDate(String),
}

/// A rejected input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    /// 1-based line number in the input file.
    pub line: usize,
    pub id: Option<String>,
    #[serde(flatten)]
    pub kind: RecordErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadWarning {
    pub line: usize,
    pub message: String,
}

/// Loaded records plus everything that went wrong. `items` and `errors`
/// partition the non-blank input records.
#[derive(Debug, Clone, Serialize)]
pub struct LoadReport<T> {
    pub items: Vec<T>,
    pub errors: Vec<RecordError>,
    pub warnings: Vec<LoadWarning>,
}

impl<T> Default for LoadReport<T> {
    fn default() -> Self {
        Self {
            items: Vec::new(),
            errors: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Field access common to JSON objects and CSV rows.
enum RawRecord {
    Json(Map<String, Value>),
    Csv(Vec<(String, String)>),
}

impl RawRecord {
    fn get(&self, name: &str) -> Result<Option<String>, String> {
        let raw = match self {
            RawRecord::Json(obj) => match obj.get(name) {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Number(n)) => Some(n.to_string()),
                Some(other) => return Err(format!("field {name} must be a string, got {other}")),
            },
            RawRecord::Csv(row) => row.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone()),
        };
        Ok(raw.filter(|s| !s.trim().is_empty()))
    }

    fn get_list(&self, name: &str) -> Result<Vec<String>, String> {
        if let RawRecord::Json(obj) = self {
            if let Some(Value::Array(items)) = obj.get(name) {
                return items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => Ok(s.trim().to_string()),
                        Value::Number(n) => Ok(n.to_string()),
                        other => Err(format!("field {name} must hold strings, got {other}")),
                    })
                    .filter(|r| !matches!(r, Ok(s) if s.is_empty()))
                    .collect();
            }
        }
        Ok(self
            .get(name)?
            .map(|s| {
                s.split(';')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            })
            .unwrap_or_default())
    }

    fn required(&self, name: &str) -> Result<String, RecordErrorKind> {
        self.get(name)
            .map_err(RecordErrorKind::Malformed)?
            .ok_or_else(|| RecordErrorKind::MissingField(name.to_string()))
    }
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

type NumberedRecord = (usize, Result<RawRecord, String>);

/// Yields `(line, record)` for every non-blank record.
fn read_records(path: &Path, format: Format) -> Result<Vec<NumberedRecord>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    match format {
        Format::Jsonl => {
            for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = match serde_json::from_str::<Value>(&line) {
                    Ok(Value::Object(obj)) => Ok(RawRecord::Json(obj)),
                    Ok(_) => Err("record is not a JSON object".to_string()),
                    Err(e) => Err(format!("invalid JSON: {e}")),
                };
                out.push((i + 1, rec));
            }
        }
        Format::Csv => {
            let mut buf = String::new();
            open(path)?.read_to_string(&mut buf).map_err(io_err)?;
            if buf.trim().is_empty() {
                return Ok(out);
            }
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(buf.as_bytes());
            let headers: Vec<String> = reader
                .headers()
                .map_err(|e| CorpusError::Format {
                    path: path.to_path_buf(),
                    line: 1,
                    message: e.to_string(),
                })?
                .iter()
                .map(|h| h.trim().to_string())
                .collect();
            for row in reader.records() {
                match row {
                    Ok(row) => {
                        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
                        let fields = headers.iter().cloned().zip(row.iter().map(str::to_string)).collect();
                        out.push((line, Ok(RawRecord::Csv(fields))));
                    }
                    Err(e) => {
                        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                        out.push((line, Err(e.to_string())));
                    }
                }
            }
        }
    }
    Ok(out)
}

fn parse_language(raw: &str) -> Result<String, RecordErrorKind> {
    let code = raw.trim().to_lowercase();
    if is_valid_language(&code) {
        Ok(code)
    } else {
        Err(RecordErrorKind::InvalidLanguage(raw.to_string()))
    }
}

fn parse_factcheck(
    rec: &RawRecord,
    ratings: &RatingNormalizer,
    line: usize,
    warnings: &mut Vec<LoadWarning>,
) -> Result<FactCheck, RecordErrorKind> {
    let opt = |name: &str| rec.get(name).map_err(RecordErrorKind::Malformed);
    let id = rec.required("id")?.trim().to_string();
    let claim_text = rec.required("claim_text")?;
    let language = parse_language(&rec.required("language")?)?;
    let published_date = match opt("published_date")? {
        Some(d) => {
            Some(NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|_| RecordErrorKind::InvalidDate(d.clone()))?)
        }
        None => None,
    };
    let rating_raw = opt("rating_raw")?.unwrap_or_default();
    // An explicit rating column wins over the raw published rating.
    let rating_source = opt("rating")?.unwrap_or_else(|| rating_raw.clone());
    let normalized = ratings.normalize(&rating_source);
    if let Some(unknown) = normalized.unknown.filter(|u| !u.trim().is_empty()) {
        warnings.push(LoadWarning {
            line,
            message: format!("fact-check {id}: unknown rating {unknown:?} mapped to Unverifiable"),
        });
    }
    Ok(FactCheck {
        id,
        claim_text,
        claim_english: opt("claim_english")?,
        language,
        published_date,
        organization: opt("organization")?.unwrap_or_default(),
        rating_raw,
        rating: normalized.label,
        article_url: opt("article_url")?,
        article_text: opt("article_text")?,
        reference_summary: opt("reference_summary")?,
        reference_summary_english: opt("reference_summary_english")?,
    })
}

fn parse_post(
    rec: &RawRecord,
    ratings: &RatingNormalizer,
    line: usize,
    warnings: &mut Vec<LoadWarning>,
) -> Result<Post, RecordErrorKind> {
    let id = rec.required("id")?.trim().to_string();
    let text = rec.required("text")?;
    let language = parse_language(&rec.required("language")?)?;
    let veracity = match rec.get("veracity").map_err(RecordErrorKind::Malformed)? {
        Some(raw) => {
            let n = ratings.normalize(&raw);
            if let Some(unknown) = n.unknown {
                warnings.push(LoadWarning {
                    line,
                    message: format!("post {id}: unknown veracity {unknown:?} mapped to Unverifiable"),
                });
            }
            Some(n.label)
        }
        None => None,
    };
    let linked_factcheck_ids: BTreeSet<String> = rec
        .get_list("linked_factcheck_ids")
        .map_err(RecordErrorKind::Malformed)?
        .into_iter()
        .collect();
    Ok(Post {
        id,
        text,
        language,
        veracity,
        linked_factcheck_ids,
    })
}

fn load_with<T>(
    path: &Path,
    format: Format,
    ratings: &RatingNormalizer,
    parse: impl Fn(&RawRecord, &RatingNormalizer, usize, &mut Vec<LoadWarning>) -> Result<T, RecordErrorKind>,
    id_of: impl Fn(&T) -> &str,
) -> Result<LoadReport<T>, CorpusError> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (line, rec) in read_records(path, format)? {
        let rec = match rec {
            Ok(r) => r,
            Err(msg) => {
                report.errors.push(RecordError {
                    line,
                    id: None,
                    kind: RecordErrorKind::Malformed(msg),
                });
                continue;
            }
        };
        match parse(&rec, ratings, line, &mut report.warnings) {
            Ok(item) => {
                let id = id_of(&item).to_string();
                if seen.insert(id.clone()) {
                    report.items.push(item);
                } else {
                    report.errors.push(RecordError {
                        line,
                        id: Some(id.clone()),
                        kind: RecordErrorKind::DuplicateId(id),
                    });
                }
            }
            Err(kind) => report.errors.push(RecordError {
                line,
                id: rec.get("id").ok().flatten(),
                kind,
            }),
        }
    }
    Ok(report)
}

/// Loads fact-checks from a JSONL or CSV file.
///
/// Malformed records, duplicates and missing required fields (`id`,
/// `claim_text`, `language`) are reported with their line number; only an
/// unreadable file is a hard error.
pub fn load_factchecks(
    path: &Path,
    format: Format,
    ratings: &RatingNormalizer,
) -> Result<LoadReport<FactCheck>, CorpusError> {
    load_with(path, format, ratings, parse_factcheck, |f| &f.id)
}

/// Loads posts; `veracity` strings go through the rating normalizer and
/// `linked_factcheck_ids` is a JSON array (or a `;`-separated string).
pub fn load_posts(path: &Path, format: Format, ratings: &RatingNormalizer) -> Result<LoadReport<Post>, CorpusError> {
    load_with(path, format, ratings, parse_post, |p| &p.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VeracityLabel;
    use std::io::Write;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn fc_line(id: &str) -> String {
        format!(r#"{{"id":"{id}","claim_text":"claim {id}","language":"en"}}"#)
    }

    #[test]
    fn three_line_jsonl() {
        let f = file_with(&[fc_line("a"), fc_line("b"), fc_line("c")].join("\n"));
        let r = load_factchecks(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        assert_eq!(r.items.len(), 3);
        assert!(r.errors.is_empty());
        assert!(r.items[0].published_date.is_none());
        assert!(r.items[0].article_text.is_none());
    }

    #[test]
    fn empty_file() {
        let f = file_with("");
        let r = load_factchecks(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        assert!(r.items.is_empty() && r.errors.is_empty());
        let r = load_factchecks(f.path(), Format::Csv, &RatingNormalizer::default()).unwrap();
        assert!(r.items.is_empty() && r.errors.is_empty());
    }

    #[test]
    fn duplicate_id_reported_at_line() {
        let lines = [fc_line("a"), fc_line("b"), fc_line("c"), fc_line("b"), fc_line("d")];
        let f = file_with(&lines.join("\n"));
        let r = load_factchecks(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        assert_eq!(r.items.len(), 4);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].line, 4);
        assert_eq!(r.errors[0].kind, RecordErrorKind::DuplicateId("b".into()));
    }

    #[test]
    fn missing_field_and_malformed_lines() {
        let contents = [
            fc_line("a"),
            r#"{"id":"b","language":"en"}"#.to_string(),
            "not json".to_string(),
            String::new(),
            r#"{"id":"c","claim_text":"x","language":"English"}"#.to_string(),
            r#"{"id":"d","claim_text":"x","language":"en","published_date":"2021-13-40"}"#.to_string(),
        ];
        let f = file_with(&contents.join("\n"));
        let r = load_factchecks(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        assert_eq!(r.items.len(), 1);
        let lines: Vec<usize> = r.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 5, 6]);
        assert_eq!(r.errors[0].kind, RecordErrorKind::MissingField("claim_text".into()));
        assert!(matches!(r.errors[1].kind, RecordErrorKind::Malformed(_)));
        assert!(matches!(r.errors[2].kind, RecordErrorKind::InvalidLanguage(_)));
        assert!(matches!(r.errors[3].kind, RecordErrorKind::InvalidDate(_)));
    }

    #[test]
    fn unreadable_file_is_error() {
        let err = load_factchecks(
            Path::new("/nonexistent/x.jsonl"),
            Format::Jsonl,
            &RatingNormalizer::default(),
        );
        assert!(matches!(err, Err(CorpusError::Io { .. })));
    }

    #[test]
    fn csv_uses_same_headers() {
        let f = file_with(
            "id,claim_text,language,published_date,organization,rating_raw\n\
             a,\"Vaccines, again\",es,2021-03-04,AFP,Falso\n\
             b,Moon landing,en,,Snopes,True\n",
        );
        let r = load_factchecks(f.path(), Format::Csv, &RatingNormalizer::default()).unwrap();
        assert_eq!(r.items.len(), 2);
        assert_eq!(r.items[0].claim_text, "Vaccines, again");
        assert_eq!(r.items[0].published_date, NaiveDate::from_ymd_opt(2021, 3, 4));
        assert_eq!(r.items[0].organization, "AFP");
        // "Falso" is not in the default table.
        assert_eq!(r.items[0].rating, VeracityLabel::Unverifiable);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].line, 2);
        assert_eq!(r.items[1].rating, VeracityLabel::True);
        assert!(r.items[1].published_date.is_none());
    }

    #[test]
    fn post_veracity_and_links() {
        let f = file_with(
            r#"{"id":"p1","text":"hello","language":"en","veracity":"false","linked_factcheck_ids":["a","b"]}
{"id":"p2","text":"hello","language":"en","linked_factcheck_ids":"a; c"}"#,
        );
        let r = load_posts(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        assert_eq!(r.items[0].veracity, Some(VeracityLabel::False));
        assert_eq!(r.items[0].linked_factcheck_ids.len(), 2);
        assert_eq!(r.items[1].veracity, None);
        assert!(r.items[1].linked_factcheck_ids.contains("c"));
    }

    #[test]
    fn ten_post_label_mix() {
        let labels = ["false"; 8].iter().chain(["true", "unverifiable"].iter()).copied();
        let body: Vec<String> = labels
            .enumerate()
            .map(|(i, l)| format!(r#"{{"id":"p{i}","text":"post {i}","language":"en","veracity":"{l}"}}"#))
            .collect();
        let f = file_with(&body.join("\n"));
        let r = load_posts(f.path(), Format::Jsonl, &RatingNormalizer::default()).unwrap();
        let count = |l| r.items.iter().filter(|p| p.veracity == Some(l)).count();
        assert_eq!(count(VeracityLabel::False), 8);
        assert_eq!(count(VeracityLabel::True), 1);
        assert_eq!(count(VeracityLabel::Unverifiable), 1);
    }
}

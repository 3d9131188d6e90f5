use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, FactCheck, Integrity, Post};

pub const CORPUS_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "claimline-corpus";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    FactCheck(FactCheck),
    Post(Post),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LineRef<'a> {
    FactCheck(&'a FactCheck),
    Post(&'a Post),
}

/// Writes the corpus as versioned JSONL. The file is replaced atomically.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        let header = Header {
            format: FORMAT_NAME.into(),
            version: CORPUS_FORMAT_VERSION,
        };
        let lines = std::iter::once(serde_json::to_string(&header))
            .chain(
                corpus
                    .fact_checks()
                    .map(|f| serde_json::to_string(&LineRef::FactCheck(f))),
            )
            .chain(corpus.posts().map(|p| serde_json::to_string(&LineRef::Post(p))));
        for line in lines {
            let line = line.map_err(|e| CorpusError::Invalid(e.to_string()))?;
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

/// Reads a corpus written by [`save_corpus`].
pub fn open_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let fmt_err = |line: usize, message: String| CorpusError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(File::open(path).map_err(io_err)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| fmt_err(1, "missing header".into()))?
        .map_err(io_err)?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| fmt_err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(fmt_err(1, format!("not a corpus file (format {:?})", header.format)));
    }
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(CorpusError::Version {
            found: header.version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    let mut fcs = Vec::new();
    let mut posts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| fmt_err(i + 2, e.to_string()))? {
            Line::FactCheck(f) => fcs.push(f),
            Line::Post(p) => posts.push(p),
        }
    }
    Corpus::assemble(fcs, posts, Integrity::Strict).map(|(c, _)| c)
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// What is needed to re-run a report: input hashes, models and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: String,
    pub config_sha256: String,
    pub corpus_sha256: String,
    pub embedder_model: String,
    pub chat_model: Option<String>,
    pub seed: u64,
    pub engine_version: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, String>,
}

/// Wall-clock facts about one run, kept apart from the report so reruns
/// produce identical report files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u64,
}

pub(crate) struct Clock {
    started: DateTime<Utc>,
    at: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Self {
            started: Utc::now(),
            at: Instant::now(),
        }
    }

    pub fn stop(&self) -> RunInfo {
        RunInfo {
            started_at: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            elapsed_ms: self.at.elapsed().as_millis() as u64,
        }
    }
}

/// One CSV row: a query (post or fact-check) under one system or setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryRow {
    pub query_id: String,
    pub language: String,
    pub system: String,
    pub status: String,
    pub first_relevant_rank: Option<usize>,
    /// `;`-separated ids.
    pub retrieved: String,
    /// `;`-separated ids.
    pub kept: String,
    pub gold: String,
    pub predicted: String,
    pub score: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub experiment: String,
    /// Metric maps per language; undefined metrics are omitted.
    pub per_language: BTreeMap<String, BTreeMap<String, f64>>,
    /// Metric maps per criteria setting.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_setting: BTreeMap<String, BTreeMap<String, f64>>,
    /// Unweighted mean over groups for metrics every group defines, plus
    /// pooled values where noted by a `pooled_` prefix.
    pub aggregate: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub rows: Vec<QueryRow>,
    #[serde(skip)]
    pub run: Option<RunInfo>,
}

impl ExperimentReport {
    pub(crate) fn new(name: &str, provenance: Provenance) -> Self {
        Self {
            name: name.to_string(),
            experiment: provenance.experiment.clone(),
            per_language: BTreeMap::new(),
            per_setting: BTreeMap::new(),
            aggregate: BTreeMap::new(),
            counts: BTreeMap::new(),
            warnings: Vec::new(),
            provenance,
            rows: Vec::new(),
            run: None,
        }
    }

    fn groups(&self) -> &BTreeMap<String, BTreeMap<String, f64>> {
        if self.per_setting.is_empty() {
            &self.per_language
        } else {
            &self.per_setting
        }
    }

    /// Fills `aggregate` with per-group means of shared metrics, keeping
    /// entries already present.
    pub(crate) fn average_groups(&mut self) {
        let groups = self.groups();
        let Some(first) = groups.values().next() else { return };
        let shared: Vec<String> = first
            .keys()
            .filter(|k| groups.values().all(|g| g.contains_key(*k)))
            .cloned()
            .collect();
        let n = groups.len() as f64;
        let means: Vec<(String, f64)> = shared
            .into_iter()
            .map(|k| {
                let sum: f64 = groups.values().map(|g| g[&k]).sum();
                (k, sum / n)
            })
            .collect();
        for (k, v) in means {
            self.aggregate.entry(k).or_insert(v);
        }
    }

    /// Averages groups, attaches warnings and stamps the run.
    pub(crate) fn finish(mut self, clock: &Clock, warnings: Vec<String>) -> Self {
        self.average_groups();
        self.warnings.extend(warnings);
        self.run = Some(clock.stop());
        self
    }

    pub(crate) fn count(&mut self, key: &str, by: u64) {
        *self.counts.entry(key.to_string()).or_default() += by;
    }

    pub fn file_stem(&self) -> String {
        format!("{}.{}", self.name, self.experiment)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Metrics as rows, groups as columns, with the average last.
    pub fn to_table(&self) -> String {
        let groups = self.groups();
        let mut metrics: BTreeSet<&String> = self.aggregate.keys().collect();
        for g in groups.values() {
            metrics.extend(g.keys());
        }
        let mut header = vec!["metric".to_string()];
        header.extend(groups.keys().cloned());
        header.push("average".into());
        let mut rows = vec![header];
        for m in metrics {
            let mut row = vec![m.clone()];
            let cell = |v: Option<&f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            row.extend(groups.values().map(|g| cell(g.get(m))));
            row.push(cell(self.aggregate.get(m)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} ({})\n", self.name, self.experiment);
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        if !self.counts.is_empty() {
            let counts: Vec<String> = self.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "counts: {}", counts.join(" "));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "query_id",
                "language",
                "system",
                "status",
                "first_relevant_rank",
                "retrieved",
                "kept",
                "gold",
                "predicted",
                "score",
                "note",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.json`, `<stem>.txt`, `<stem>.csv` and, when run
    /// information is present, `<stem>.run.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let stem = self.file_stem();
        let mut files = vec![
            (dir.join(format!("{stem}.json")), self.to_json()),
            (dir.join(format!("{stem}.txt")), self.to_table()),
            (dir.join(format!("{stem}.csv")), self.to_csv()?),
        ];
        if let Some(run) = &self.run {
            let mut s = serde_json::to_string_pretty(run).expect("run info serializes");
            s.push('\n');
            files.push((dir.join(format!("{stem}.run.json")), s));
        }
        for (path, body) in &files {
            std::fs::write(path, body).map_err(io(path))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

use std::collections::{BTreeMap, BTreeSet};

use chrono::Datelike;

use super::report::Clock;
use super::{
    join_ids, CriteriaCategory, CriteriaKind, CriteriaSetting, ExperimentConfig, ExperimentReport, HarnessError,
    QueryRow, Workspace,
};
use crate::corpus::{Corpus, Post};
use crate::metrics::{common_fc_proportion, kendall_tau, spearman};
use crate::retrieval::{
    build_index, criteria_retrieve, reference_filtered_rank, render_criteria_template, CriteriaQuery,
};

/// One setting per criterion kind derivable from metadata: every corpus
/// language, every organization, every publication year.
pub fn default_criteria_settings(corpus: &Corpus) -> Vec<CriteriaSetting> {
    let languages: BTreeSet<&str> = corpus.fact_checks().map(|f| f.language.as_str()).collect();
    let orgs: BTreeSet<&str> = corpus
        .fact_checks()
        .map(|f| f.organization.trim())
        .filter(|o| !o.is_empty())
        .collect();
    let years: BTreeSet<i32> = corpus
        .fact_checks()
        .filter_map(|f| f.published_date)
        .map(|d| d.year())
        .collect();
    let settings = [
        (
            "language",
            languages
                .into_iter()
                .map(|l| CriteriaCategory::new(CriteriaKind::Language, l))
                .collect::<Vec<_>>(),
        ),
        (
            "domain",
            orgs.into_iter()
                .map(|o| CriteriaCategory::new(CriteriaKind::Domain, o))
                .collect(),
        ),
        (
            "date_range",
            years
                .into_iter()
                .map(|y| CriteriaCategory::new(CriteriaKind::DateRange, format!("{y}-01-01..{y}-12-31")))
                .collect(),
        ),
    ];
    settings
        .into_iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(name, categories)| CriteriaSetting {
            name: name.to_string(),
            categories,
        })
        .collect()
}

#[derive(Default)]
struct Means(BTreeMap<&'static str, (f64, usize)>);

impl Means {
    fn add(&mut self, key: &'static str, v: Option<f64>) {
        if let Some(v) = v {
            let e = self.0.entry(key).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }

    fn into_map(self) -> BTreeMap<String, f64> {
        self.0
            .into_iter()
            .map(|(k, (s, n))| (k.to_string(), s / n as f64))
            .collect()
    }
}

/// Compares two-step criteria retrieval against exact filtering by the
/// symbolic predicate, per setting.
pub fn run_criteria_retrieval(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let clock = Clock::start();
    let mut ws = Workspace::open(cfg)?;
    let claim_index = ws.claim_index()?;
    let templates: Vec<(String, String)> = ws
        .corpus
        .fact_checks()
        .map(|f| (f.id.clone(), render_criteria_template(f)))
        .collect();
    let template_index = build_index(&ws.embedder, &templates)?;
    let settings = if cfg.criteria.is_empty() {
        default_criteria_settings(&ws.corpus)
    } else {
        cfg.criteria.clone()
    };
    let present = ws.corpus.posts().map(|p| p.language.clone()).collect();
    let languages = ws.languages(present);
    let queries: Vec<&Post> = languages
        .iter()
        .flat_map(|l| ws.sample(ws.corpus.posts().filter(|p| &p.language == l).collect(), |p| &p.id))
        .collect();

    let params = BTreeMap::from([
        ("k_report".to_string(), cfg.k_report.to_string()),
        ("prefilter_threshold".to_string(), cfg.prefilter_threshold.to_string()),
        ("min_category_size".to_string(), cfg.min_category_size.to_string()),
    ]);
    let mut report = ExperimentReport::new(&cfg.name, ws.provenance("criteria", params));
    let mut warnings = Vec::new();
    for setting in &settings {
        let mut means = Means::default();
        let mut evaluated = 0u64;
        for cat in &setting.categories {
            let size = ws.corpus.fact_checks().filter(|f| cat.matches(f)).count();
            if size < cfg.min_category_size.max(1) {
                warnings.push(format!(
                    "criteria {}/{}: {size} matching fact-checks, below {}; skipped",
                    setting.name, cat.value, cfg.min_category_size
                ));
                report.count("categories_skipped", 1);
                continue;
            }
            evaluated += 1;
            let text = cat.text();
            for post in &queries {
                let q = CriteriaQuery::new(&text, &post.text, cfg.k_report).with_threshold(cfg.prefilter_threshold);
                let out = criteria_retrieve(&template_index, &claim_index, &q, &ws.embedder, &post.id)?;
                let reference = reference_filtered_rank(
                    &ws.corpus,
                    |f| cat.matches(f),
                    &post.text,
                    &ws.embedder,
                    &claim_index,
                    cfg.k_report,
                    &post.id,
                )?;
                let pred: Vec<&str> = out.ranked.ids().collect();
                let refr: Vec<&str> = reference.ids().collect();
                let rho = spearman(&pred, &refr);
                means.add("spearman", rho);
                means.add("kendall_tau", kendall_tau(&pred, &refr));
                means.add(
                    "common_fc",
                    common_fc_proportion(&out.ranked, &reference, cfg.k_report).ok(),
                );
                means.add("survivors", Some(out.survivors.len() as f64));
                report.count("query_pairs", 1);
                report.rows.push(QueryRow {
                    query_id: post.id.clone(),
                    language: post.language.clone(),
                    system: setting.name.clone(),
                    status: "ok".into(),
                    retrieved: join_ids(pred),
                    kept: join_ids(refr),
                    score: rho,
                    note: match &out.diagnostic {
                        Some(d) => format!("{}: {d}", cat.value),
                        None => cat.value.clone(),
                    },
                    ..QueryRow::default()
                });
            }
        }
        report.count(&format!("categories.{}", setting.name), evaluated);
        let metrics = means.into_map();
        if metrics.is_empty() {
            warnings.push(format!("criteria setting {}: nothing evaluated", setting.name));
        } else {
            report.per_setting.insert(setting.name.clone(), metrics);
        }
    }
    report.count("queries", queries.len() as u64);
    let mut all = std::mem::take(&mut ws.warnings);
    all.extend(warnings);
    Ok(report.finish(&clock, all))
}

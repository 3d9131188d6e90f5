use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::report::Clock;
use super::{first_relevant_rank, join_ids, ExperimentConfig, ExperimentReport, HarnessError, QueryRow, Workspace};
use crate::corpus::{FactCheck, Post, VeracityLabel};
use crate::llm::{filter_candidates, predict_veracity_baseline, summarize, LlmError, SummaryOrder};
use crate::metrics::{
    macro_prf, mrr, rouge_l, success_at_k, tnr_fnr, youden_threshold, ConfusionCounts, RelevanceJudgments,
};
use crate::pipeline::{Pipeline, PipelineOptions, Snapshot, VerifyRequest};

/// ROUGE-L F1 below this marks a summary as probably written in the wrong
/// language.
pub const WRONG_LANGUAGE_F1: f64 = 0.05;

fn cutoffs(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut ks = vec![cfg.k_report];
    ks.extend(&cfg.s_at_ks);
    ks.sort_unstable();
    ks.dedup();
    ks
}

fn insert_confusion(m: &mut BTreeMap<String, f64>, prefix: &str, c: ConfusionCounts) {
    if let Some(s) = c.macro_scores() {
        m.insert(format!("{prefix}macro_f1"), s.f1);
        m.insert(format!("{prefix}macro_precision"), s.precision);
        m.insert(format!("{prefix}macro_recall"), s.recall);
    }
    let (tnr, fnr) = tnr_fnr(c);
    if let Some(v) = tnr {
        m.insert(format!("{prefix}tnr"), v);
    }
    if let Some(v) = fnr {
        m.insert(format!("{prefix}fnr"), v);
    }
}

fn failed_row(post: &Post, system: &str, e: &impl std::fmt::Display) -> QueryRow {
    QueryRow {
        query_id: post.id.clone(),
        language: post.language.clone(),
        system: system.to_string(),
        status: "failed".into(),
        note: e.to_string(),
        ..QueryRow::default()
    }
}

/// Kept ids and parse warnings for one post.
type Kept = (BTreeSet<String>, Vec<String>);
/// Label, parse warning and notes for one post.
type Prediction = (VeracityLabel, Option<String>, Vec<String>);

/// Retrieves candidates per judged post, lets the model filter them and
/// scores the kept lists against the judgments. Cosine scores thresholded
/// at Youden's optimum form the `baseline_` row.
pub fn run_filtration(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let clock = Clock::start();
    cfg.require_filterable_k()?;
    let mut ws = Workspace::open(cfg)?;
    let chat = ws.chat()?.clone();
    let languages = ws.judged_languages();
    let index = ws.claim_index()?;
    let params = BTreeMap::from([
        ("k_retrieve".to_string(), cfg.k_retrieve.to_string()),
        ("k_report".to_string(), cfg.k_report.to_string()),
        ("monolingual".to_string(), cfg.monolingual.to_string()),
    ]);
    let mut report = ExperimentReport::new(&cfg.name, ws.provenance("filtration", params));
    let mut warnings = Vec::new();
    let (mut pooled, mut pooled_missing, mut pooled_posts) = (ConfusionCounts::default(), 0usize, 0usize);

    for lang in &languages {
        let (posts, judg) = ws.judged_posts(lang);
        let texts: Vec<String> = posts.iter().map(|p| p.text.clone()).collect();
        let vectors = ws.embedder.embed(&texts)?;
        let keep = ws.language_filter(lang);
        let rankings = posts
            .iter()
            .zip(&vectors)
            .map(|(p, v)| index.top_k_where(v, cfg.k_retrieve, &p.id, &keep))
            .collect::<Result<Vec<_>, _>>()?;
        let outcomes: Vec<Result<Kept, LlmError>> = posts
            .par_iter()
            .zip(&rankings)
            .map(|(post, ranked)| {
                if ranked.is_empty() {
                    return Ok((BTreeSet::new(), Vec::new()));
                }
                let candidates: Vec<&FactCheck> = ranked.ids().filter_map(|id| ws.corpus.fact_check(id)).collect();
                let result = filter_candidates(&chat, &ws.templates, &post.text, &candidates)?;
                Ok((result.relevant_ids().map(str::to_string).collect(), result.warnings))
            })
            .collect();

        let mut pre = Vec::new();
        let mut post_filter = Vec::new();
        let mut confusion = ConfusionCounts::default();
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        let (mut missing, mut kept_total) = (0usize, 0usize);
        let mut ok_judg = RelevanceJudgments::new();
        for ((post, ranked), outcome) in posts.iter().zip(&rankings).zip(outcomes) {
            let (kept, filter_warnings) = match outcome {
                Ok(k) => k,
                Err(e) => {
                    report.count("failed_posts", 1);
                    report.rows.push(failed_row(post, "filter", &e));
                    continue;
                }
            };
            let rel = &judg[&post.id];
            for item in ranked.items() {
                let gold = rel.contains(&item.factcheck_id);
                confusion.record(gold, kept.contains(&item.factcheck_id));
                scores.push(item.score);
                labels.push(gold);
            }
            if !kept.iter().any(|id| rel.contains(id)) {
                missing += 1;
            }
            kept_total += kept.len();
            let filtered = ranked.filtered(|id| kept.contains(id));
            report.rows.push(QueryRow {
                query_id: post.id.clone(),
                language: lang.clone(),
                system: "filter".into(),
                status: "ok".into(),
                first_relevant_rank: first_relevant_rank(&filtered, rel),
                retrieved: join_ids(ranked.ids()),
                kept: join_ids(filtered.ids()),
                gold: join_ids(rel.iter().map(String::as_str)),
                note: filter_warnings.join(" | "),
                ..QueryRow::default()
            });
            ok_judg.insert(post.id.clone(), rel.clone());
            pre.push(ranked.clone());
            post_filter.push(filtered);
        }
        report.count(&format!("queries.{lang}"), posts.len() as u64);
        report.count("queries", posts.len() as u64);
        if pre.is_empty() {
            warnings.push(format!("language {lang}: every post failed filtration"));
            continue;
        }
        let mut m = BTreeMap::new();
        for k in cutoffs(cfg) {
            m.insert(format!("s_at_{k}"), success_at_k(&post_filter, &ok_judg, k)?);
            m.insert(format!("retrieval_s_at_{k}"), success_at_k(&pre, &ok_judg, k)?);
        }
        m.insert("mrr".into(), mrr(&post_filter, &ok_judg)?);
        m.insert("retrieval_mrr".into(), mrr(&pre, &ok_judg)?);
        insert_confusion(&mut m, "", confusion);
        m.insert("missing_fc_rate".into(), missing as f64 / pre.len() as f64);
        m.insert("kept_mean".into(), kept_total as f64 / pre.len() as f64);
        match youden_threshold(&scores, &labels) {
            Ok(point) => {
                let mut base = ConfusionCounts::default();
                for (s, g) in scores.iter().zip(&labels) {
                    base.record(*g, *s >= point.threshold);
                }
                insert_confusion(&mut m, "baseline_", base);
                m.insert("youden_j".into(), point.j);
                if point.threshold.is_finite() {
                    m.insert("youden_threshold".into(), point.threshold);
                }
            }
            Err(e) => warnings.push(format!("language {lang}: no Youden baseline ({e})")),
        }
        pooled.merge(confusion);
        pooled_missing += missing;
        pooled_posts += pre.len();
        report.per_language.insert(lang.clone(), m);
    }
    if pooled_posts > 0 {
        let mut pooled_map = BTreeMap::new();
        insert_confusion(&mut pooled_map, "pooled_", pooled);
        pooled_map.insert(
            "pooled_missing_fc_rate".into(),
            pooled_missing as f64 / pooled_posts as f64,
        );
        report.aggregate.extend(pooled_map);
    }
    let mut all = std::mem::take(&mut ws.warnings);
    all.extend(warnings);
    Ok(report.finish(&clock, all))
}

/// Fraction of posts whose filtered context holds none of their judged
/// fact-checks, for the configured chat model.
pub fn missing_fc_rate(cfg: &ExperimentConfig) -> Result<(String, f64), HarnessError> {
    let report = run_filtration(cfg)?;
    let rate = report
        .aggregate
        .get("pooled_missing_fc_rate")
        .copied()
        .ok_or_else(|| HarnessError::Config("no post completed filtration".into()))?;
    Ok((report.provenance.chat_model.unwrap_or_default(), rate))
}

/// Summarizes every fact-check article in both prompt orders and scores
/// the output with ROUGE-L against the English reference summary.
pub fn run_summarization(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let clock = Clock::start();
    let mut ws = Workspace::open(cfg)?;
    let chat = ws.chat()?.clone();
    let present = ws.corpus.fact_checks().map(|f| f.language.clone()).collect();
    let languages = ws.languages(present);
    let mut report = ExperimentReport::new(&cfg.name, ws.provenance("summarization", BTreeMap::new()));
    let mut warnings = Vec::new();
    let usable = |f: &FactCheck| -> Option<(String, String)> {
        let article = f.article_text.as_deref().filter(|a| !a.trim().is_empty())?;
        let reference = f
            .reference_summary_english
            .as_deref()
            .filter(|r| !r.trim().is_empty())?;
        Some((article.to_string(), reference.to_string()))
    };

    for lang in &languages {
        let all: Vec<&FactCheck> = ws.corpus.fact_checks().filter(|f| &f.language == lang).collect();
        let (items, skipped): (Vec<&FactCheck>, Vec<&FactCheck>) = all.into_iter().partition(|f| usable(f).is_some());
        report.count("skipped_missing_reference", skipped.len() as u64);
        let items = ws.sample(items, |f| &f.id);
        if items.is_empty() {
            warnings.push(format!(
                "language {lang}: no fact-check has both an article and a reference summary"
            ));
            continue;
        }
        report.count(&format!("items.{lang}"), items.len() as u64);
        let mut m = BTreeMap::new();
        for order in SummaryOrder::BOTH {
            let outputs: Vec<Result<String, LlmError>> = items
                .par_iter()
                .map(|f| {
                    let (article, _) = usable(f).expect("filtered above");
                    summarize(&chat, &ws.templates, &article, order)
                })
                .collect();
            let (mut p, mut r, mut f1, mut wrong, mut n) = (0.0, 0.0, 0.0, 0usize, 0usize);
            for (fc, out) in items.iter().zip(outputs) {
                let post = Post::new(fc.id.clone(), "-", fc.language.clone());
                let summary = match out {
                    Ok(s) => s,
                    Err(e) => {
                        report.count("failed_items", 1);
                        report.rows.push(failed_row(&post, order.as_str(), &e));
                        continue;
                    }
                };
                let (_, reference) = usable(fc).expect("filtered above");
                let score = rouge_l(&summary, &reference);
                let flagged = score.f1 < WRONG_LANGUAGE_F1;
                p += score.precision;
                r += score.recall;
                f1 += score.f1;
                wrong += usize::from(flagged);
                n += 1;
                report.rows.push(QueryRow {
                    query_id: fc.id.clone(),
                    language: lang.clone(),
                    system: order.as_str().into(),
                    status: "ok".into(),
                    predicted: summary,
                    score: Some(score.f1),
                    note: if flagged {
                        "suspected_wrong_language".into()
                    } else {
                        String::new()
                    },
                    ..QueryRow::default()
                });
            }
            if n == 0 {
                warnings.push(format!("language {lang}: every {} summary failed", order.as_str()));
                continue;
            }
            let n = n as f64;
            let o = order.as_str();
            m.insert(format!("{o}.rouge_l_precision"), p / n);
            m.insert(format!("{o}.rouge_l_recall"), r / n);
            m.insert(format!("{o}.rouge_l_f1"), f1 / n);
            m.insert(format!("{o}.wrong_language_rate"), wrong as f64 / n);
        }
        if !m.is_empty() {
            report.per_language.insert(lang.clone(), m);
        }
    }
    let mut all = std::mem::take(&mut ws.warnings);
    all.extend(warnings);
    Ok(report.finish(&clock, all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VeracityMode {
    /// Post and task description only.
    Baseline,
    /// Full pipeline: retrieve, filter, summarize, predict.
    WithContext,
}

impl VeracityMode {
    pub fn experiment(self) -> &'static str {
        match self {
            Self::Baseline => "veracity_baseline",
            Self::WithContext => "veracity_with_context",
        }
    }
}

/// Predicts a label for every post with gold veracity and scores macro
/// P/R/F1 per language.
pub fn run_veracity(cfg: &ExperimentConfig, mode: VeracityMode) -> Result<ExperimentReport, HarnessError> {
    let clock = Clock::start();
    if mode == VeracityMode::WithContext {
        cfg.require_filterable_k()?;
    }
    let mut ws = Workspace::open(cfg)?;
    let chat = ws.chat()?.clone();
    let present = ws
        .corpus
        .posts()
        .filter(|p| p.veracity.is_some())
        .map(|p| p.language.clone())
        .collect();
    let languages = ws.languages(present);
    let params = match mode {
        VeracityMode::Baseline => BTreeMap::new(),
        VeracityMode::WithContext => BTreeMap::from([
            ("k_retrieve".to_string(), cfg.k_retrieve.to_string()),
            ("summary_order".to_string(), cfg.summary_order.as_str().to_string()),
            ("monolingual".to_string(), cfg.monolingual.to_string()),
        ]),
    };
    let mut report = ExperimentReport::new(&cfg.name, ws.provenance(mode.experiment(), params));
    let mut warnings = Vec::new();
    let context = match mode {
        VeracityMode::Baseline => None,
        VeracityMode::WithContext => {
            let snapshot = Snapshot::new(ws.corpus.clone(), ws.claim_index()?)?;
            let options = PipelineOptions {
                degraded_mode: false,
                summary_order: cfg.summary_order,
                max_text_len: usize::MAX,
            };
            let pipeline = Pipeline::new(ws.embedder.clone(), Some(chat.clone()), ws.templates.clone(), options);
            Some((snapshot, pipeline))
        }
    };
    let (mut pooled_gold, mut pooled_pred) = (Vec::new(), Vec::new());

    for lang in &languages {
        let posts = ws.sample(
            ws.corpus
                .posts()
                .filter(|p| &p.language == lang && p.veracity.is_some())
                .collect(),
            |p| &p.id,
        );
        report.count(&format!("queries.{lang}"), posts.len() as u64);
        report.count("queries", posts.len() as u64);
        let outputs: Vec<Result<Prediction, HarnessError>> = posts
            .par_iter()
            .map(|post| match &context {
                None => {
                    let v = predict_veracity_baseline(&chat, &ws.templates, &post.text)?;
                    Ok((v.label, v.parse_warning, Vec::new()))
                }
                Some((snapshot, pipeline)) => {
                    let req = VerifyRequest {
                        text: post.text.clone(),
                        top_k: Some(cfg.k_retrieve),
                        language_hint: cfg.monolingual.then(|| lang.clone()),
                    };
                    let resp = pipeline.verify(snapshot, &req)?;
                    let ids = resp.relevant.iter().map(|r| r.factcheck.id.clone()).collect();
                    Ok((resp.verdict.label, resp.verdict.parse_warning, ids))
                }
            })
            .collect();

        let (mut gold, mut pred, mut parse_warnings) = (Vec::new(), Vec::new(), 0usize);
        for (post, out) in posts.iter().zip(outputs) {
            let g = post.veracity.expect("filtered above");
            match out {
                Ok((label, parse_warning, kept)) => {
                    parse_warnings += usize::from(parse_warning.is_some());
                    gold.push(g);
                    pred.push(label);
                    report.rows.push(QueryRow {
                        query_id: post.id.clone(),
                        language: lang.clone(),
                        system: mode.experiment().into(),
                        status: "ok".into(),
                        kept: join_ids(kept.iter().map(String::as_str)),
                        gold: g.to_string(),
                        predicted: label.to_string(),
                        note: parse_warning.unwrap_or_default(),
                        ..QueryRow::default()
                    });
                }
                Err(e) => {
                    report.count("failed_posts", 1);
                    report.rows.push(failed_row(post, mode.experiment(), &e));
                }
            }
        }
        if gold.is_empty() {
            warnings.push(format!("language {lang}: no post received a prediction"));
            continue;
        }
        let s = macro_prf(&gold, &pred)?;
        let m = BTreeMap::from([
            ("macro_f1".to_string(), s.f1),
            ("macro_precision".to_string(), s.precision),
            ("macro_recall".to_string(), s.recall),
            (
                "parse_warning_rate".to_string(),
                parse_warnings as f64 / gold.len() as f64,
            ),
        ]);
        report.per_language.insert(lang.clone(), m);
        pooled_gold.extend(gold);
        pooled_pred.extend(pred);
    }
    if !pooled_gold.is_empty() {
        let s = macro_prf(&pooled_gold, &pooled_pred)?;
        report.aggregate.insert("pooled_macro_f1".into(), s.f1);
        report.aggregate.insert("pooled_macro_precision".into(), s.precision);
        report.aggregate.insert("pooled_macro_recall".into(), s.recall);
    }
    let mut all = std::mem::take(&mut ws.warnings);
    all.extend(warnings);
    Ok(report.finish(&clock, all))
}

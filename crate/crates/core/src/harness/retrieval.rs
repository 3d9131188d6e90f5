use std::collections::BTreeMap;

use super::report::Clock;
use super::{first_relevant_rank, join_ids, ExperimentConfig, ExperimentReport, HarnessError, QueryRow, Workspace};
use crate::metrics::{mrr, success_at_k, RelevanceJudgments};
use crate::retrieval::{Bm25Index, Bm25Params, RankedList};

fn rows(system: &str, lang: &str, rankings: &[RankedList], judg: &RelevanceJudgments) -> Vec<QueryRow> {
    rankings
        .iter()
        .map(|r| QueryRow {
            query_id: r.query_id.clone(),
            language: lang.to_string(),
            system: system.to_string(),
            status: "ok".into(),
            first_relevant_rank: first_relevant_rank(r, &judg[&r.query_id]),
            retrieved: join_ids(r.ids()),
            gold: join_ids(judg[&r.query_id].iter().map(String::as_str)),
            ..QueryRow::default()
        })
        .collect()
}

/// Ranks every judged post against the fact-check index and reports
/// success-at-K and MRR per language.
pub fn run_direct_retrieval(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let clock = Clock::start();
    let mut ws = Workspace::open(cfg)?;
    let languages = ws.judged_languages();
    let index = ws.claim_index()?;
    let params = BTreeMap::from([
        ("k_retrieve".to_string(), cfg.k_retrieve.to_string()),
        ("k_report".to_string(), cfg.k_report.to_string()),
        ("monolingual".to_string(), cfg.monolingual.to_string()),
    ]);
    let mut report = ExperimentReport::new(&cfg.name, ws.provenance("retrieval", params));
    let mut cutoffs = vec![cfg.k_report];
    cutoffs.extend(&cfg.s_at_ks);
    cutoffs.sort_unstable();
    cutoffs.dedup();

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
        let mut m = BTreeMap::new();
        for &k in &cutoffs {
            m.insert(format!("s_at_{k}"), success_at_k(&rankings, &judg, k)?);
        }
        m.insert("mrr".into(), mrr(&rankings, &judg)?);
        report.rows.extend(rows("embedding", lang, &rankings, &judg));

        if cfg.bm25 {
            let bm25 = Bm25Index::build(
                ws.corpus
                    .fact_checks()
                    .filter(|f| keep(&f.id))
                    .map(|f| (f.id.clone(), f.claim_text.clone())),
            );
            let ranked: Vec<RankedList> = posts
                .iter()
                .map(|p| bm25.rank(&p.text, cfg.k_retrieve, Bm25Params::default(), &p.id))
                .collect();
            for &k in &cutoffs {
                m.insert(format!("bm25_s_at_{k}"), success_at_k(&ranked, &judg, k)?);
            }
            m.insert("bm25_mrr".into(), mrr(&ranked, &judg)?);
            report.rows.extend(rows("bm25", lang, &ranked, &judg));
        }
        report.count(&format!("queries.{lang}"), posts.len() as u64);
        report.count("queries", posts.len() as u64);
        report.per_language.insert(lang.clone(), m);
    }
    if report.per_language.is_empty() {
        return Err(HarnessError::Config("no judged posts to evaluate".into()));
    }
    let warnings = std::mem::take(&mut ws.warnings);
    Ok(report.finish(&clock, warnings))
}

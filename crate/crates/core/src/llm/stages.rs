use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Chat, LlmError, Placeholder, TemplateName, TemplateSet};
use crate::corpus::{FactCheck, VeracityLabel};

pub const MAX_FILTER_CANDIDATES: usize = 50;

static RELEVANT_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*#>_-]*relevant(?:\s+candidates)?[\s*_]*:\s*(.*)$").unwrap());
static EXPLANATION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*-]*(?:candidate\s*)?#?(\d+)\s*[:.)\-]\s*(\S.*)$").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
static NONE_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(none|nothing|no relevant)\b").unwrap());
static LABEL_HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^[\s*#>_-]*label[\s*_]*:(.*)$").unwrap());
static CLASS_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(true|false|unverifiable)\b").unwrap());

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Numbered candidate block, one claim per line, English when available.
pub fn render_candidates(candidates: &[&FactCheck]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, fc)| format!("{}. {}", i + 1, one_line(fc.display_claim())))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Selection parsed from a filtration reply; indices are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedSelection {
    pub indices: Vec<usize>,
    pub explanations: BTreeMap<usize, String>,
    pub warnings: Vec<String>,
}

/// Parses a filtration reply over `n` candidates. Never fails: anything
/// unreadable yields an empty selection with a warning.
pub fn parse_filter_reply(reply: &str, n: usize) -> ParsedSelection {
    let mut out = ParsedSelection::default();
    let lines: Vec<&str> = reply.lines().collect();
    let header = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| RELEVANT_HEADER.captures(l).map(|c| (i, c[1].to_string())));

    let mut explanations: Vec<(usize, String)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if header.as_ref().is_some_and(|(h, _)| *h == i) {
            continue;
        }
        if let Some(c) = EXPLANATION_LINE.captures(line) {
            if let Ok(k) = c[1].parse::<usize>() {
                explanations.push((k, c[2].trim().to_string()));
            }
        }
    }

    let raw: Vec<String> = match &header {
        Some((_, selection)) => NUMBER.find_iter(selection).map(|m| m.as_str().to_string()).collect(),
        None => {
            if !explanations.is_empty() {
                explanations.iter().map(|(k, _)| k.to_string()).collect()
            } else {
                let first = lines.iter().find(|l| !l.trim().is_empty()).copied().unwrap_or("");
                NUMBER.find_iter(first).map(|m| m.as_str().to_string()).collect()
            }
        }
    };
    if raw.is_empty() {
        let text = header.as_ref().map_or(reply, |(_, s)| s.as_str());
        if !NONE_WORD.is_match(text) {
            out.warnings
                .push("could not parse a selection; treating as none".into());
        }
        return out;
    }

    let mut picked = BTreeSet::new();
    for token in raw {
        match token.parse::<usize>() {
            Ok(k) if (1..=n).contains(&k) => {
                picked.insert(k);
            }
            _ => out
                .warnings
                .push(format!("candidate {token} out of range 1..={n}; dropped")),
        }
    }
    out.indices = picked.into_iter().collect();
    for (k, text) in explanations {
        if out.indices.contains(&k) {
            out.explanations.entry(k).or_insert(text);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantPick {
    pub factcheck_id: String,
    pub explanation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Selected candidates in candidate order.
    pub relevant: Vec<RelevantPick>,
    /// The candidate ids as presented.
    pub considered: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FilterResult {
    pub fn relevant_ids(&self) -> impl Iterator<Item = &str> {
        self.relevant.iter().map(|p| p.factcheck_id.as_str())
    }
}

/// Asks the model which of the numbered candidates are relevant to the
/// post.
pub fn filter_candidates(
    chat: &Chat,
    templates: &TemplateSet,
    post_text: &str,
    candidates: &[&FactCheck],
) -> Result<FilterResult, LlmError> {
    if candidates.is_empty() || candidates.len() > MAX_FILTER_CANDIDATES {
        return Err(LlmError::InvalidInput(format!(
            "filtration takes 1..={MAX_FILTER_CANDIDATES} candidates, got {}",
            candidates.len()
        )));
    }
    let block = render_candidates(candidates);
    let prompt = templates
        .get(TemplateName::Filtration)
        .render(&[(Placeholder::Post, post_text), (Placeholder::Candidates, &block)])?;
    let reply = chat.complete(&prompt)?;
    let parsed = parse_filter_reply(&reply, candidates.len());
    for w in &parsed.warnings {
        tracing::warn!(warning = %w, "filtration reply");
    }
    let relevant = parsed
        .indices
        .iter()
        .map(|&k| RelevantPick {
            factcheck_id: candidates[k - 1].id.clone(),
            explanation: parsed.explanations.get(&k).cloned().unwrap_or_default(),
        })
        .collect();
    Ok(FilterResult {
        relevant,
        considered: candidates.iter().map(|fc| fc.id.clone()).collect(),
        warnings: parsed.warnings,
    })
}

/// Where the article sits relative to the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryOrder {
    ArticleFirst,
    ArticleLast,
}

impl SummaryOrder {
    pub const BOTH: [SummaryOrder; 2] = [SummaryOrder::ArticleFirst, SummaryOrder::ArticleLast];

    pub fn template(self) -> TemplateName {
        match self {
            SummaryOrder::ArticleFirst => TemplateName::SummarizeArticleFirst,
            SummaryOrder::ArticleLast => TemplateName::SummarizeArticleLast,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SummaryOrder::ArticleFirst => "article_first",
            SummaryOrder::ArticleLast => "article_last",
        }
    }
}

impl std::str::FromStr for SummaryOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "article_first" => Ok(SummaryOrder::ArticleFirst),
            "article_last" => Ok(SummaryOrder::ArticleLast),
            other => Err(format!("unknown summary order {other:?}")),
        }
    }
}

/// English summary of a fact-checking article; the reply is trimmed and
/// otherwise untouched.
pub fn summarize(chat: &Chat, templates: &TemplateSet, article: &str, order: SummaryOrder) -> Result<String, LlmError> {
    if article.trim().is_empty() {
        return Err(LlmError::InvalidInput("article text is empty".into()));
    }
    let prompt = templates
        .get(order.template())
        .render(&[(Placeholder::Article, article)])?;
    Ok(chat.complete(&prompt)?.trim().to_string())
}

/// A relevant fact-check and its summary, as shown to the model.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub factcheck: &'a FactCheck,
    pub summary: &'a str,
}

pub fn render_context(evidence: &[Evidence<'_>]) -> String {
    if evidence.is_empty() {
        return "(no relevant fact-checks were found)".into();
    }
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut block = format!(
                "[{}] Claim: {}\nRating: {}",
                i + 1,
                one_line(e.factcheck.display_claim()),
                e.factcheck.rating
            );
            if !e.summary.trim().is_empty() {
                block.push_str(&format!("\nSummary: {}", one_line(e.summary)));
            }
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeracityVerdict {
    pub label: VeracityLabel,
    pub explanation: String,
    /// Ratings of the relevant fact-checks; empty for the baseline.
    pub distribution: BTreeMap<VeracityLabel, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_warning: Option<String>,
}

impl VeracityVerdict {
    /// Verdict used when no model answer is available.
    pub fn unverifiable(distribution: BTreeMap<VeracityLabel, usize>, reason: impl Into<String>) -> Self {
        Self {
            label: VeracityLabel::Unverifiable,
            explanation: reason.into(),
            distribution,
            parse_warning: None,
        }
    }
}

fn class_of(s: &str) -> Option<VeracityLabel> {
    match s.to_ascii_lowercase().as_str() {
        "true" => Some(VeracityLabel::True),
        "false" => Some(VeracityLabel::False),
        "unverifiable" => Some(VeracityLabel::Unverifiable),
        _ => None,
    }
}

/// Label, explanation and optional warning from a veracity reply. Never
/// fails; an unreadable reply is `Unverifiable` with a warning.
pub fn parse_veracity_reply(reply: &str) -> (VeracityLabel, String, Option<String>) {
    let lines: Vec<&str> = reply.lines().collect();
    let rest_without = |skip: usize| {
        lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, l)| *l)
            .collect::<Vec<_>>()
            .join("\n")
            .trim()
            .to_string()
    };
    for (i, line) in lines.iter().enumerate() {
        if let Some(c) = LABEL_HEADER.captures(line) {
            if let Some(label) = CLASS_NAME.find(&c[1]).and_then(|m| class_of(m.as_str())) {
                return (label, rest_without(i), None);
            }
        }
    }
    if let Some((i, first)) = lines.iter().enumerate().find(|(_, l)| !l.trim().is_empty()) {
        let bare = first.trim_matches(|c: char| !c.is_alphanumeric());
        if let Some(label) = class_of(bare) {
            return (label, rest_without(i), Some("reply lacks a \"Label:\" line".into()));
        }
    }
    (
        VeracityLabel::Unverifiable,
        reply.trim().to_string(),
        Some("no recognizable label in reply".into()),
    )
}

fn distribution(evidence: &[Evidence<'_>]) -> BTreeMap<VeracityLabel, usize> {
    let mut d: BTreeMap<VeracityLabel, usize> = VeracityLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for e in evidence {
        *d.entry(e.factcheck.rating).or_default() += 1;
    }
    d
}

fn verdict_from(reply: &str, distribution: BTreeMap<VeracityLabel, usize>) -> VeracityVerdict {
    let (label, explanation, parse_warning) = parse_veracity_reply(reply);
    if let Some(w) = &parse_warning {
        tracing::warn!(warning = %w, "veracity reply");
    }
    VeracityVerdict {
        label,
        explanation,
        distribution,
        parse_warning,
    }
}

/// Veracity of the post given the relevant fact-checks. The distribution
/// counts the evidence ratings and ignores the reply.
pub fn predict_veracity(
    chat: &Chat,
    templates: &TemplateSet,
    post_text: &str,
    evidence: &[Evidence<'_>],
) -> Result<VeracityVerdict, LlmError> {
    let context = render_context(evidence);
    let prompt = templates
        .get(TemplateName::VeracityWithContext)
        .render(&[(Placeholder::Post, post_text), (Placeholder::Context, &context)])?;
    let reply = chat.complete(&prompt)?;
    Ok(verdict_from(&reply, distribution(evidence)))
}

/// Veracity of the post from the post alone.
pub fn predict_veracity_baseline(
    chat: &Chat,
    templates: &TemplateSet,
    post_text: &str,
) -> Result<VeracityVerdict, LlmError> {
    let prompt = templates
        .get(TemplateName::VeracityBaseline)
        .render(&[(Placeholder::Post, post_text)])?;
    let reply = chat.complete(&prompt)?;
    Ok(verdict_from(&reply, BTreeMap::new()))
}

/// Overview of what the relevant fact-checks say about the post.
pub fn overall_summary(
    chat: &Chat,
    templates: &TemplateSet,
    post_text: &str,
    evidence: &[Evidence<'_>],
) -> Result<String, LlmError> {
    let context = render_context(evidence);
    let prompt = templates
        .get(TemplateName::OverallSummary)
        .render(&[(Placeholder::Post, post_text), (Placeholder::Context, &context)])?;
    Ok(chat.complete(&prompt)?.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedChat;
    use proptest::prelude::*;
    use std::sync::{Arc, Mutex};

    fn scripted(reply: &'static str) -> (Chat, Arc<Mutex<Vec<String>>>) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let chat = Chat::new(Arc::new(ScriptedChat::new("m", move |p| {
            log.lock().unwrap().push(p.to_string());
            Ok(reply.to_string())
        })));
        (chat, seen)
    }

    fn fcs(n: usize) -> Vec<FactCheck> {
        (1..=n)
            .map(|i| FactCheck::new(format!("fc{i}"), format!("claim {i}"), "en"))
            .collect()
    }

    fn ids(r: &FilterResult) -> Vec<&str> {
        r.relevant_ids().collect()
    }

    #[test]
    fn filter_bare_numbers() {
        let all = fcs(5);
        let refs: Vec<&FactCheck> = all.iter().collect();
        let (chat, _) = scripted("1, 3");
        let r = filter_candidates(&chat, &TemplateSet::default(), "post", &refs).unwrap();
        assert_eq!(ids(&r), vec!["fc1", "fc3"]);
        assert_eq!(r.considered.len(), 5);
    }

    #[test]
    fn filter_none_and_out_of_range() {
        let all = fcs(5);
        let refs: Vec<&FactCheck> = all.iter().collect();
        let (chat, _) = scripted("none");
        let r = filter_candidates(&chat, &TemplateSet::default(), "post", &refs).unwrap();
        assert!(r.relevant.is_empty());
        assert!(r.warnings.is_empty());
        assert_eq!(r.considered, vec!["fc1", "fc2", "fc3", "fc4", "fc5"]);

        let (chat, _) = scripted("7");
        let r = filter_candidates(&chat, &TemplateSet::default(), "post", &refs).unwrap();
        assert!(r.relevant.is_empty());
        assert!(r.warnings.iter().any(|w| w.contains("out of range")));
    }

    #[test]
    fn filter_header_and_explanations() {
        let p = parse_filter_reply(
            "Relevant: 4, 2, 2\n2: same vaccine claim\n4) same photo\n3: not picked",
            5,
        );
        assert_eq!(p.indices, vec![2, 4]);
        assert_eq!(p.explanations[&2], "same vaccine claim");
        assert_eq!(p.explanations[&4], "same photo");
        assert!(!p.explanations.contains_key(&3));
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn filter_unparseable_and_bounds() {
        let p = parse_filter_reply("I cannot decide.", 5);
        assert!(p.indices.is_empty());
        assert_eq!(p.warnings.len(), 1);
        let p = parse_filter_reply("Relevant: 0, 99999999999999999999999", 5);
        assert!(p.indices.is_empty());
        assert_eq!(p.warnings.len(), 2);

        let (chat, _) = scripted("1");
        assert!(filter_candidates(&chat, &TemplateSet::default(), "p", &[]).is_err());
        let many = fcs(51);
        let refs: Vec<&FactCheck> = many.iter().collect();
        assert!(filter_candidates(&chat, &TemplateSet::default(), "p", &refs).is_err());
    }

    #[test]
    fn candidates_shown_in_english() {
        let mut fc = FactCheck::new("a", "El gato", "es");
        fc.claim_english = Some("The cat".into());
        let (chat, seen) = scripted("Relevant: none");
        filter_candidates(&chat, &TemplateSet::default(), "a post", &[&fc]).unwrap();
        let prompt = &seen.lock().unwrap()[0];
        assert!(prompt.contains("1. The cat"));
        assert!(!prompt.contains("El gato"));
    }

    #[test]
    fn summarize_orders() {
        let (chat, seen) = scripted("  Summary: X \n");
        let t = TemplateSet::default();
        assert_eq!(
            summarize(&chat, &t, "ARTICLE BODY", SummaryOrder::ArticleFirst).unwrap(),
            "Summary: X"
        );
        summarize(&chat, &t, "ARTICLE BODY", SummaryOrder::ArticleLast).unwrap();
        let prompts = seen.lock().unwrap();
        assert!(prompts[0].starts_with("ARTICLE BODY"));
        assert!(prompts[1].ends_with("ARTICLE BODY"));
        assert!(prompts[0].contains("English"));
        drop(prompts);
        assert!(summarize(&chat, &t, " ", SummaryOrder::ArticleFirst).is_err());
    }

    #[test]
    fn veracity_parsing() {
        assert_eq!(
            parse_veracity_reply("Label: False\nBecause ..."),
            (VeracityLabel::False, "Because ...".into(), None)
        );
        assert_eq!(
            parse_veracity_reply("**label**: unverifiable"),
            (VeracityLabel::Unverifiable, "".into(), None)
        );
        let (l, e, w) = parse_veracity_reply("True.\nIt checks out.");
        assert_eq!((l, e.as_str()), (VeracityLabel::True, "It checks out."));
        assert!(w.is_some());
        let (l, e, w) = parse_veracity_reply("Hard to say.");
        assert_eq!((l, e.as_str()), (VeracityLabel::Unverifiable, "Hard to say."));
        assert!(w.is_some());
    }

    #[test]
    fn veracity_distribution_from_evidence() {
        let mut a = FactCheck::new("a", "x", "en");
        a.rating = VeracityLabel::False;
        let b = a.clone();
        let mut c = a.clone();
        c.rating = VeracityLabel::True;
        let ev: Vec<Evidence> = [&a, &b, &c]
            .iter()
            .map(|f| Evidence {
                factcheck: f,
                summary: "s",
            })
            .collect();
        let (chat, _) = scripted("Label: True");
        let v = predict_veracity(&chat, &TemplateSet::default(), "post", &ev).unwrap();
        assert_eq!(v.label, VeracityLabel::True);
        assert_eq!(
            v.distribution,
            BTreeMap::from([
                (VeracityLabel::True, 1),
                (VeracityLabel::False, 2),
                (VeracityLabel::Unverifiable, 0)
            ])
        );
    }

    #[test]
    fn baseline_prompt_and_empty_distribution() {
        let (chat, seen) = scripted("Label: True");
        let v = predict_veracity_baseline(&chat, &TemplateSet::default(), "THE POST").unwrap();
        assert_eq!((v.label, v.explanation.as_str()), (VeracityLabel::True, ""));
        assert!(v.distribution.is_empty());
        let prompt = &seen.lock().unwrap()[0];
        let expected = TemplateSet::default()
            .get(TemplateName::VeracityBaseline)
            .body()
            .replace("{post}", "THE POST");
        assert_eq!(prompt, &expected);
        assert!(!prompt.contains("Fact-checks"));
        assert!(!prompt.contains("Rating:"));
    }

    proptest! {
        #[test]
        fn filter_parse_is_total_and_in_range(reply in "\\PC{0,80}", n in 1usize..60) {
            let p = parse_filter_reply(&reply, n);
            prop_assert!(p.indices.iter().all(|&k| (1..=n).contains(&k)));
            prop_assert!(p.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p.explanations.keys().all(|k| p.indices.contains(k)));
        }

        #[test]
        fn veracity_parse_is_total(reply in "\\PC{0,80}") {
            let (label, _, warning) = parse_veracity_reply(&reply);
            if warning.is_some() && label != VeracityLabel::Unverifiable {
                prop_assert!(!reply.to_lowercase().contains("label"));
            }
        }

        #[test]
        fn distribution_ignores_reply(reply in "\\PC{1,40}", ratings in prop::collection::vec(0usize..3, 0..8)) {
            let fcs: Vec<FactCheck> = ratings.iter().enumerate().map(|(i, &r)| {
                let mut f = FactCheck::new(format!("{i}"), "c", "en");
                f.rating = VeracityLabel::ALL[r];
                f
            }).collect();
            let ev: Vec<Evidence> = fcs.iter().map(|f| Evidence { factcheck: f, summary: "" }).collect();
            let owned = reply.clone();
            let chat = Chat::new(Arc::new(ScriptedChat::new("m", move |_| Ok(owned.clone()))));
            if let Ok(v) = predict_veracity(&chat, &TemplateSet::default(), "p", &ev) {
                prop_assert_eq!(v.distribution.values().sum::<usize>(), fcs.len());
                for l in VeracityLabel::ALL {
                    prop_assert_eq!(v.distribution[&l], ratings.iter().filter(|&&r| VeracityLabel::ALL[r] == l).count());
                }
            }
        }
    }
}

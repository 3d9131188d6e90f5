use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Filtration,
    SummarizeArticleFirst,
    SummarizeArticleLast,
    VeracityWithContext,
    VeracityBaseline,
    OverallSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Post,
    Candidates,
    Article,
    Context,
}

impl Placeholder {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "post" => Self::Post,
            "candidates" => Self::Candidates,
            "article" => Self::Article,
            "context" => Self::Context,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Post => "post",
            Self::Candidates => "candidates",
            Self::Article => "article",
            Self::Context => "context",
        }
    }
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        Self::Filtration,
        Self::SummarizeArticleFirst,
        Self::SummarizeArticleLast,
        Self::VeracityWithContext,
        Self::VeracityBaseline,
        Self::OverallSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Filtration => "filtration",
            Self::SummarizeArticleFirst => "summarize_article_first",
            Self::SummarizeArticleLast => "summarize_article_last",
            Self::VeracityWithContext => "veracity_with_context",
            Self::VeracityBaseline => "veracity_baseline",
            Self::OverallSummary => "overall_summary",
        }
    }

    pub fn required(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            Self::Filtration => &[Post, Candidates],
            Self::SummarizeArticleFirst | Self::SummarizeArticleLast => &[Article],
            Self::VeracityWithContext | Self::OverallSummary => &[Post, Context],
            Self::VeracityBaseline => &[Post],
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            Self::Filtration => include_str!("../../templates/filtration.txt"),
            Self::SummarizeArticleFirst => include_str!("../../templates/summarize_article_first.txt"),
            Self::SummarizeArticleLast => include_str!("../../templates/summarize_article_last.txt"),
            Self::VeracityWithContext => include_str!("../../templates/veracity_with_context.txt"),
            Self::VeracityBaseline => include_str!("../../templates/veracity_baseline.txt"),
            Self::OverallSummary => include_str!("../../templates/overall_summary.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Placeholder),
}

/// A prompt body with `{placeholder}` slots; `{{` and `}}` stand for literal
/// braces. Surrounding whitespace is trimmed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: TemplateName,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(name: TemplateName, body: &str) -> Result<Self, LlmError> {
        let body = body.trim();
        let bad = |msg: String| LlmError::Template {
            name: name.as_str().to_string(),
            message: msg,
        };
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut chars = body.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|p| p.1) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|p| p.1) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let rest = &body[i + 1..];
                    let end = rest
                        .find('}')
                        .ok_or_else(|| bad(format!("unclosed brace at byte {i}")))?;
                    let key = &rest[..end];
                    let slot = Placeholder::parse(key).ok_or_else(|| bad(format!("unknown placeholder {{{key}}}")))?;
                    if !text.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut text)));
                    }
                    segments.push(Segment::Slot(slot));
                    for _ in 0..=end {
                        chars.next();
                    }
                }
                '}' => return Err(bad(format!("stray closing brace at byte {i}"))),
                _ => text.push(c),
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }

        for &p in &[
            Placeholder::Post,
            Placeholder::Candidates,
            Placeholder::Article,
            Placeholder::Context,
        ] {
            let count = segments.iter().filter(|s| **s == Segment::Slot(p)).count();
            let wanted = usize::from(name.required().contains(&p));
            if count != wanted {
                return Err(bad(format!(
                    "placeholder {{{}}} appears {count} times, expected {wanted}",
                    p.as_str()
                )));
            }
        }
        let article = Segment::Slot(Placeholder::Article);
        match name {
            TemplateName::SummarizeArticleFirst if segments.first() != Some(&article) => {
                return Err(bad("body must start with {article}".into()));
            }
            TemplateName::SummarizeArticleLast if segments.last() != Some(&article) => {
                return Err(bad("body must end with {article}".into()));
            }
            _ => {}
        }
        Ok(Self {
            name,
            body: body.to_string(),
            segments,
        })
    }

    pub fn default_for(name: TemplateName) -> Self {
        Self::parse(name, name.default_body()).expect("shipped templates are valid")
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes every slot in one pass; substituted values are never
    /// re-scanned for placeholders.
    pub fn render(&self, values: &[(Placeholder, &str)]) -> Result<String, LlmError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(p) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == p)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| LlmError::Template {
                            name: self.name.as_str().to_string(),
                            message: format!("no value for {{{}}}", p.as_str()),
                        })?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

/// One template per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL
                .iter()
                .map(|&n| (n, PromptTemplate::default_for(n)))
                .collect(),
        }
    }
}

impl TemplateSet {
    /// Reads `<name>.txt` files from `dir`; stages without a file keep the
    /// built-in template.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut set = Self::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(body) => set.set(PromptTemplate::parse(name, &body)?),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(LlmError::Template {
                        name: name.as_str().to_string(),
                        message: format!("cannot read {}: {e}", path.display()),
                    })
                }
            }
        }
        Ok(set)
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name, template);
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }
}

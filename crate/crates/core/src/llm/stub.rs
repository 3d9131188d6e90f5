use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatSpec, LlmError};

/// Lowercase hex SHA-256 of the prompt's UTF-8 bytes; the stub fixture key.
pub fn prompt_sha256(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Hash(String),
    Contains(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Needles {
    One(String),
    All(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    #[serde(default)]
    prompt_sha256: Option<String>,
    #[serde(default)]
    prompt_contains: Option<Needles>,
    reply: String,
}

/// Offline provider answering from a fixture table. Exact prompt hashes are
/// checked first, then substring rules in file order, then the default
/// reply. A substring rule given as a list matches when every entry occurs.
#[derive(Debug, Clone)]
pub struct StubChat {
    spec: ChatSpec,
    rules: Vec<(Rule, String)>,
}

impl StubChat {
    pub fn from_spec(spec: ChatSpec) -> Result<Self, LlmError> {
        let rules = match &spec.fixture_path {
            Some(path) => load_fixture(path)?,
            None => Vec::new(),
        };
        Ok(Self { spec, rules })
    }

    pub fn with_replies(spec: ChatSpec, replies: impl IntoIterator<Item = (String, String)>) -> Self {
        let rules = replies
            .into_iter()
            .map(|(prompt, reply)| (Rule::Hash(prompt_sha256(&prompt)), reply))
            .collect();
        Self { spec, rules }
    }

    fn lookup(&self, prompt: &str) -> Option<&str> {
        let hash = prompt_sha256(prompt);
        self.rules
            .iter()
            .find(|(r, _)| *r == Rule::Hash(hash.clone()))
            .or_else(|| {
                self.rules
                    .iter()
                    .find(|(r, _)| matches!(r, Rule::Contains(all) if all.iter().all(|s| prompt.contains(s.as_str()))))
            })
            .map(|(_, reply)| reply.as_str())
    }
}

fn load_fixture(path: &Path) -> Result<Vec<(Rule, String)>, LlmError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LlmError::Config(format!("cannot read chat fixture {}: {e}", path.display())))?;
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| LlmError::Config(format!("{}:{}: {msg}", path.display(), i + 1));
        let entry: FixtureLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let rule = match (entry.prompt_sha256, entry.prompt_contains) {
            (Some(h), None) => Rule::Hash(h.to_ascii_lowercase()),
            (None, Some(n)) => {
                let all = match n {
                    Needles::One(s) => vec![s],
                    Needles::All(v) => v,
                };
                if all.is_empty() || all.iter().any(String::is_empty) {
                    return Err(bad("prompt_contains entries must be non-empty".into()));
                }
                Rule::Contains(all)
            }
            _ => {
                return Err(bad(
                    "expected exactly one of prompt_sha256 or a non-empty prompt_contains".into(),
                ))
            }
        };
        rules.push((rule, entry.reply));
    }
    Ok(rules)
}

impl ChatProvider for StubChat {
    fn spec(&self) -> &ChatSpec {
        &self.spec
    }

    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError> {
        if self.spec.latency_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(self.spec.latency_ms));
        }
        match (self.lookup(prompt), &self.spec.default_reply) {
            (Some(reply), _) => Ok(reply.to_string()),
            (None, Some(default)) => Ok(default.clone()),
            (None, None) => Err(LlmError::NoFixture {
                sha256: prompt_sha256(prompt),
            }),
        }
    }
}

type ReplyFn = dyn Fn(&str) -> Result<String, LlmError> + Send + Sync;

/// Provider whose replies come from a closure over the prompt.
pub struct ScriptedChat {
    spec: ChatSpec,
    reply: Box<ReplyFn>,
}

impl ScriptedChat {
    pub fn new(
        model_name: impl Into<String>,
        reply: impl Fn(&str) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> Self {
        Self::with_spec(ChatSpec::stub(model_name), reply)
    }

    pub fn with_spec(spec: ChatSpec, reply: impl Fn(&str) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Self {
            spec,
            reply: Box::new(reply),
        }
    }
}

impl ChatProvider for ScriptedChat {
    fn spec(&self) -> &ChatSpec {
        &self.spec
    }

    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError> {
        (self.reply)(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::chat;

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            prompt_sha256("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fixture_hash_contains_and_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chat.jsonl");
        let lines = [
            format!(r#"{{"prompt_sha256":"{}","reply":"OK"}}"#, prompt_sha256("hello")),
            r#"{"prompt_contains":["ll","y"],"reply":"both"}"#.to_string(),
            r#"{"prompt_contains":"ell","reply":"partial"}"#.to_string(),
        ];
        std::fs::write(&path, lines.join("\n")).unwrap();
        let mut spec = ChatSpec::stub("m");
        spec.fixture_path = Some(path.clone());
        assert_eq!(chat(&spec, "hello").unwrap(), "OK");
        assert_eq!(chat(&spec, "jello").unwrap(), "partial");
        assert_eq!(chat(&spec, "yellow").unwrap(), "both");
        assert_eq!(
            chat(&spec, "other"),
            Err(LlmError::NoFixture {
                sha256: prompt_sha256("other")
            })
        );
        spec.default_reply = Some("fallback".into());
        assert_eq!(chat(&spec, "other").unwrap(), "fallback");
    }

    #[test]
    fn malformed_fixture_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chat.jsonl");
        let mut spec = ChatSpec::stub("m");
        spec.fixture_path = Some(path.clone());
        for bad in [
            r#"{"reply":"x"}"#,
            r#"{"prompt_contains":[],"reply":"x"}"#,
            r#"{"prompt_contains":"","reply":"x"}"#,
        ] {
            std::fs::write(&path, bad).unwrap();
            assert!(matches!(StubChat::from_spec(spec.clone()), Err(LlmError::Config(_))));
        }
    }
}

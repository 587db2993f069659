//! Translation providers: identity and dictionary stubs for offline use,
//! and a JSON-over-HTTP client for a real MT endpoint.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the HTTP translation endpoint.
pub const ENDPOINT_ENV: &str = "GLOSSLINK_MT_ENDPOINT";
/// Environment variable carrying an optional bearer token.
pub const API_KEY_ENV: &str = "GLOSSLINK_MT_API_KEY";

/// Translates a pre-tokenized sentence. Implementations must be
/// deterministic for a fixed configuration.
pub trait TranslationProvider {
    fn name(&self) -> &str;

    fn translate(
        &self,
        tokens: &[String],
        source_lang: &str,
        target_lang: &str,
    ) -> Result<Vec<String>>;
}

/// Copies the source tokens.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityProvider;

impl TranslationProvider for IdentityProvider {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, tokens: &[String], _: &str, _: &str) -> Result<Vec<String>> {
        Ok(tokens.to_vec())
    }
}

/// Word-for-word substitution from a static dictionary. Lookups are
/// case-insensitive; unknown words pass through unchanged.
#[derive(Debug, Default, Clone)]
pub struct DictionaryProvider {
    words: HashMap<String, String>,
}

impl DictionaryProvider {
    pub fn new(words: impl IntoIterator<Item = (String, String)>) -> Self {
        DictionaryProvider {
            words: words
                .into_iter()
                .map(|(s, t)| (s.to_lowercase(), t))
                .collect(),
        }
    }

    /// Reads `source<TAB>target` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (src, tgt) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(idx + 1, "expected source<TAB>target"))?;
            words.push((src.to_string(), tgt.to_string()));
        }
        Ok(DictionaryProvider::new(words))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl TranslationProvider for DictionaryProvider {
    fn name(&self) -> &str {
        "dict"
    }

    fn translate(&self, tokens: &[String], _: &str, _: &str) -> Result<Vec<String>> {
        Ok(tokens
            .iter()
            .map(|t| {
                self.words
                    .get(&t.to_lowercase())
                    .cloned()
                    .unwrap_or_else(|| t.clone())
            })
            .collect())
    }
}

#[derive(Debug, Serialize)]
pub struct HttpRequest<'a> {
    pub source_lang: &'a str,
    pub target_lang: &'a str,
    pub tokens: &'a [String],
}

#[derive(Debug, Deserialize)]
pub struct HttpResponse {
    pub tokens: Vec<String>,
}

/// POSTs `{"source_lang","target_lang","tokens"}` to an endpoint and expects
/// `{"tokens":[...]}` back.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(30))
            .build();
        HttpProvider {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(HttpProvider::new(endpoint, std::env::var(API_KEY_ENV).ok()))
    }
}

impl TranslationProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn translate(
        &self,
        tokens: &[String],
        source_lang: &str,
        target_lang: &str,
    ) -> Result<Vec<String>> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = HttpRequest {
            source_lang,
            target_lang,
            tokens,
        };
        let resp = req
            .send_json(serde_json::to_value(&body)?)
            .map_err(|e| Error::Provider(e.to_string()))?;
        let parsed: HttpResponse = resp
            .into_json()
            .map_err(|e| Error::Provider(format!("bad response body: {e}")))?;
        if parsed.tokens.is_empty() {
            return Err(Error::Provider("empty translation".into()));
        }
        Ok(parsed.tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_copies() {
        let t = IdentityProvider.translate(&toks("the dog"), "en", "fr").unwrap();
        assert_eq!(t, toks("the dog"));
    }

    #[test]
    fn dictionary_substitutes_word_for_word() {
        let p = DictionaryProvider::new([
            ("the".to_string(), "le".to_string()),
            ("dog".to_string(), "chien".to_string()),
        ]);
        let t = p.translate(&toks("The dog barks"), "en", "fr").unwrap();
        assert_eq!(t, toks("le chien barks"));
    }

    #[test]
    fn http_without_server_is_provider_error() {
        let p = HttpProvider::new("http://127.0.0.1:9/translate", None);
        assert!(matches!(
            p.translate(&toks("a"), "en", "fr"),
            Err(Error::Provider(_))
        ));
    }
}

//! Model transports: the chat-message shape shared by agents and judges,
//! an HTTP chat-completions client, and deterministic in-process clients
//! for tests and oracle replay.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "ARENA_KIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> SamplingParams {
        SamplingParams {
            temperature: 1.0,
            top_p: 0.9,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model transport error: {0}")]
    Transport(String),
    #[error("model reply malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport error: {0}")]
    Transport(String),
    #[error("judge reply contains no verdict: {0:?}")]
    NoVerdict(String),
}

/// Stateless completion endpoint used by agents. Implementations must
/// tolerate concurrent calls.
pub trait LLMClient: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, ModelError>;
}

/// Black-box grader used by `fuzzy_match`.
pub trait JudgeClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, JudgeError>;
}

// ---------------------------------------------------------------------------
// HTTP chat-completions transport

/// Client for any chat-completions-compatible endpoint. The API key, when
/// present in `ARENA_KIT_API_KEY`, is sent as a bearer token.
pub struct HttpChatClient {
    url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(url: &str, model: &str) -> HttpChatClient {
        HttpChatClient {
            url: url.to_string(),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn request(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        });
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {value}"));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("missing choices[0].message.content in {value}"))
    }
}

impl LLMClient for HttpChatClient {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<String, ModelError> {
        self.request(messages, params).map_err(ModelError::Transport)
    }
}

impl JudgeClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, JudgeError> {
        self.request(messages, &SamplingParams::default())
            .map_err(JudgeError::Transport)
    }
}

// ---------------------------------------------------------------------------
// Deterministic clients

/// Script entry for [`ScriptedClient`].
#[derive(Debug, Clone)]
pub enum ScriptEntry {
    Reply(String),
    Fail(String),
}

/// Returns scripted completions in order; once exhausted, repeats the last
/// entry forever (so "always prose" adversaries are one-liners).
pub struct ScriptedClient {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
}

impl ScriptedClient {
    pub fn new(entries: Vec<ScriptEntry>) -> ScriptedClient {
        assert!(!entries.is_empty(), "script must have at least one entry");
        ScriptedClient {
            entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn replies(replies: &[&str]) -> ScriptedClient {
        ScriptedClient::new(
            replies
                .iter()
                .map(|r| ScriptEntry::Reply(r.to_string()))
                .collect(),
        )
    }

    fn next(&self) -> ScriptEntry {
        let mut cursor = self.cursor.lock().unwrap();
        let entry = self.entries[(*cursor).min(self.entries.len() - 1)].clone();
        *cursor += 1;
        entry
    }
}

impl LLMClient for ScriptedClient {
    fn complete(
        &self,
        _messages: &[ChatMessage],
        _params: &SamplingParams,
    ) -> Result<String, ModelError> {
        match self.next() {
            ScriptEntry::Reply(text) => Ok(text),
            ScriptEntry::Fail(reason) => Err(ModelError::Transport(reason)),
        }
    }
}

/// Always returns the same completion.
pub struct ConstantClient(pub String);

impl LLMClient for ConstantClient {
    fn complete(
        &self,
        _messages: &[ChatMessage],
        _params: &SamplingParams,
    ) -> Result<String, ModelError> {
        Ok(self.0.clone())
    }
}

/// Offline judge. Canned verdicts are keyed by (reference answer,
/// prediction) as they appear in the instantiated grading prompt; pairs
/// without a canned verdict fall back to normalized string equality.
#[derive(Default)]
pub struct StubJudge {
    canned: HashMap<(String, String), String>,
}

impl StubJudge {
    pub fn new() -> StubJudge {
        StubJudge::default()
    }

    pub fn with_verdict(mut self, reference: &str, prediction: &str, verdict: &str) -> StubJudge {
        self.canned.insert(
            (reference.to_string(), prediction.to_string()),
            verdict.to_string(),
        );
        self
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    let to = rest.find(end)?;
    Some(&rest[..to])
}

impl JudgeClient for StubJudge {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, JudgeError> {
        let prompt = messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let reference = between(prompt, "reference answer: ", "\n\nall the string")
            .unwrap_or_default()
            .to_string();
        let prediction = between(prompt, "student answer: ", "\n\nConclude")
            .unwrap_or_default()
            .to_string();
        if let Some(verdict) = self.canned.get(&(reference.clone(), prediction.clone())) {
            return Ok(verdict.clone());
        }
        let norm = |s: &str| {
            s.split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase()
        };
        if norm(&reference) == norm(&prediction) {
            Ok("correct".to_string())
        } else {
            Ok("incorrect".to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judge_prompt(reference: &str, prediction: &str) -> Vec<ChatMessage> {
        let text = format!(
            "question: q\n\nreference answer: {reference}\n\nall the string 'N/A' \
             that you see is a special sequence that means 'not achievable'\n\n\
             student answer: {prediction}\n\nConclude the judgement by \
             correct/incorrect/partially correct."
        );
        vec![ChatMessage::new("user", text)]
    }

    #[test]
    fn stub_judge_canned_and_fallback() {
        let judge = StubJudge::new().with_verdict("walking: 2h58min", "2 hour 58 minutes", "correct");
        assert_eq!(
            judge
                .complete(&judge_prompt("walking: 2h58min", "2 hour 58 minutes"))
                .unwrap(),
            "correct"
        );
        assert_eq!(
            judge.complete(&judge_prompt("Sean Miller", "sean  MILLER")).unwrap(),
            "correct"
        );
        assert_eq!(
            judge.complete(&judge_prompt("Sean Miller", "Sean M.")).unwrap(),
            "incorrect"
        );
    }

    #[test]
    fn scripted_client_repeats_last_entry() {
        let client = ScriptedClient::replies(&["a", "b"]);
        let params = SamplingParams::default();
        assert_eq!(client.complete(&[], &params).unwrap(), "a");
        assert_eq!(client.complete(&[], &params).unwrap(), "b");
        assert_eq!(client.complete(&[], &params).unwrap(), "b");
    }

    #[test]
    fn scripted_client_can_fail() {
        let client = ScriptedClient::new(vec![
            ScriptEntry::Fail("boom".to_string()),
            ScriptEntry::Reply("ok".to_string()),
        ]);
        let params = SamplingParams::default();
        assert!(client.complete(&[], &params).is_err());
        assert_eq!(client.complete(&[], &params).unwrap(), "ok");
    }
}

//! Baseline LLM agents: prompt assembly for the direct and chain-of-thought
//! modes, the decide loop with parse retries, and halt heuristics bounding
//! every episode.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::action::{extract_action, Action, ExtractMode};
use crate::env::Observation;
use crate::llm::{ChatMessage, LLMClient, ModelError, SamplingParams};

pub const SYSTEM_COT: &str = include_str!("../../../prompts/system_cot.txt");
pub const SYSTEM_DIRECT: &str = include_str!("../../../prompts/system_direct.txt");
const EXAMPLES_COT_JSON: &str = include_str!("../../../prompts/examples_cot.json");
const EXAMPLES_DIRECT_JSON: &str = include_str!("../../../prompts/examples_direct.json");

/// The one sentence toggled by `ua_hint` (leading space included so removal
/// leaves no double space).
pub const UA_HINT_SENTENCE: &str =
    " If you believe the task is impossible to complete, provide the answer as \"N/A\" in the bracket.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Cot,
}

#[derive(Debug, Clone, Copy)]
pub struct PromptConfig {
    pub mode: Mode,
    pub ua_hint: bool,
}

impl Default for PromptConfig {
    fn default() -> PromptConfig {
        PromptConfig {
            mode: Mode::Cot,
            ua_hint: true,
        }
    }
}

impl PromptConfig {
    pub fn system_text(&self) -> String {
        let base = match self.mode {
            Mode::Cot => SYSTEM_COT,
            Mode::Direct => SYSTEM_DIRECT,
        };
        if self.ua_hint {
            base.to_string()
        } else {
            base.replace(UA_HINT_SENTENCE, "")
        }
    }

    pub fn examples(&self) -> &'static [(String, String)] {
        static COT: OnceLock<Vec<(String, String)>> = OnceLock::new();
        static DIRECT: OnceLock<Vec<(String, String)>> = OnceLock::new();
        let (cell, json) = match self.mode {
            Mode::Cot => (&COT, EXAMPLES_COT_JSON),
            Mode::Direct => (&DIRECT, EXAMPLES_DIRECT_JSON),
        };
        cell.get_or_init(|| serde_json::from_str(json).expect("packaged examples parse"))
    }

    pub fn extract_mode(&self) -> ExtractMode {
        match self.mode {
            Mode::Cot => ExtractMode::Cot,
            Mode::Direct => ExtractMode::Direct,
        }
    }
}

/// Episode bounds from the reference configuration: 30 transitions, halt on
/// the 4th consecutive repeat, halt after 3 consecutive invalid actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaltPolicy {
    pub max_steps: usize,
    pub max_same_action: usize,
    pub max_invalid: usize,
    pub parse_retries: usize,
}

impl Default for HaltPolicy {
    fn default() -> HaltPolicy {
        HaltPolicy {
            max_steps: 30,
            max_same_action: 3,
            max_invalid: 3,
            parse_retries: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Stop,
    MaxSteps,
    Repeat,
    Invalid,
}

/// One executed step as seen by the halt heuristics.
#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub obs_text: String,
    pub raw_action: String,
    pub was_invalid: bool,
}

/// Check the halt heuristics over the episode history (oldest first).
pub fn should_halt(policy: &HaltPolicy, history: &[HistoryEntry]) -> Option<HaltReason> {
    if history.len() >= policy.max_steps {
        return Some(HaltReason::MaxSteps);
    }
    if let Some(last) = history.last() {
        let streak = history
            .iter()
            .rev()
            .take_while(|e| e.raw_action == last.raw_action && e.obs_text == last.obs_text)
            .count();
        if streak > policy.max_same_action {
            return Some(HaltReason::Repeat);
        }
        let invalid_streak = history.iter().rev().take_while(|e| e.was_invalid).count();
        if invalid_streak >= policy.max_invalid {
            return Some(HaltReason::Invalid);
        }
    }
    None
}

/// Assemble the full message list: system prompt, the two packaged example
/// turns, then the current observation block.
pub fn build_prompt(
    config: &PromptConfig,
    intent: &str,
    observation: &Observation,
    prev_action_raw: Option<&str>,
) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::new("system", config.system_text())];
    for (user, assistant) in config.examples() {
        messages.push(ChatMessage::new("user", user.clone()));
        messages.push(ChatMessage::new("assistant", assistant.clone()));
    }
    // Failed actions are fed back so the agent can perceive and recover.
    let mut obs_text = observation.text.clone();
    if let Some(error) = &observation.error {
        obs_text.push_str(&format!("\nError: {error}"));
    }
    messages.push(ChatMessage::new(
        "user",
        format!(
            "OBSERVATION:\n{obs_text}\nURL: {url}\nOBJECTIVE: {intent}\nPREVIOUS ACTION: {prev}",
            url = observation.url,
            prev = prev_action_raw.unwrap_or("None"),
        ),
    ));
    messages
}

/// Outcome of one decide call: a parsed action, or an invalid-action marker
/// the environment records without touching page state.
#[derive(Debug, Clone)]
pub enum Decision {
    Act { action: Action, raw: String },
    Invalid { raw: String, reason: String },
}

pub struct Agent<'a> {
    pub client: &'a dyn LLMClient,
    pub config: PromptConfig,
    pub params: SamplingParams,
    pub policy: HaltPolicy,
}

impl<'a> Agent<'a> {
    pub fn new(client: &'a dyn LLMClient) -> Agent<'a> {
        Agent {
            client,
            config: PromptConfig::default(),
            params: SamplingParams::default(),
            policy: HaltPolicy::default(),
        }
    }

    /// Query the model and extract an action; transport and parse failures
    /// each get up to `parse_retries` fresh completions.
    pub fn decide(
        &self,
        intent: &str,
        observation: &Observation,
        prev_action_raw: Option<&str>,
    ) -> Result<Decision, ModelError> {
        let messages = build_prompt(&self.config, intent, observation, prev_action_raw);
        let mut last_failure: Option<Decision> = None;
        let mut last_transport: Option<ModelError> = None;
        for _attempt in 0..=self.policy.parse_retries {
            let completion = match self.client.complete(&messages, &self.params) {
                Ok(c) => c,
                Err(e) => {
                    last_transport = Some(e);
                    continue;
                }
            };
            match extract_action(&completion, self.config.extract_mode()) {
                Ok((action, _span)) => {
                    return Ok(Decision::Act {
                        action,
                        raw: completion,
                    })
                }
                Err(e) => {
                    last_failure = Some(Decision::Invalid {
                        raw: completion,
                        reason: format!("invalid action: {e}"),
                    });
                }
            }
        }
        match (last_failure, last_transport) {
            (Some(decision), _) => Ok(decision),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!("loop runs at least once"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedClient};

    fn obs(text: &str, error: Option<&str>) -> Observation {
        Observation {
            text: text.to_string(),
            url: "http://tiny.sim/".to_string(),
            tabs: Vec::new(),
            error: error.map(str::to_string),
        }
    }

    #[test]
    fn prompt_shape_and_previous_action() {
        let config = PromptConfig::default();
        let messages = build_prompt(&config, "find the price", &obs("[1] RootWebArea ''", None), None);
        assert_eq!(messages.len(), 6);
        assert_eq!(messages[0].role, "system");
        assert!(messages[5].content.ends_with("PREVIOUS ACTION: None"));
        let with_prev = build_prompt(
            &config,
            "find the price",
            &obs("[1] RootWebArea ''", None),
            Some("click [2]"),
        );
        assert!(with_prev[5].content.ends_with("PREVIOUS ACTION: click [2]"));
    }

    #[test]
    fn ua_hint_toggle() {
        let on = PromptConfig { mode: Mode::Cot, ua_hint: true }.system_text();
        let off = PromptConfig { mode: Mode::Cot, ua_hint: false }.system_text();
        assert!(on.contains("provide the answer as \"N/A\""));
        assert!(!off.contains("provide the answer as \"N/A\""));
        assert_eq!(on.replace(UA_HINT_SENTENCE, ""), off);
    }

    #[test]
    fn mode_separation() {
        let cot = PromptConfig { mode: Mode::Cot, ua_hint: true };
        for (_, assistant) in cot.examples() {
            assert!(assistant.starts_with("Let's think step-by-step."));
            assert!(assistant.contains("In summary, the next action I will perform is"));
        }
        let direct = PromptConfig { mode: Mode::Direct, ua_hint: true };
        let messages = build_prompt(&direct, "i", &obs("x", None), None);
        for m in &messages {
            assert!(!m.content.contains("Let's think step-by-step"));
        }
    }

    #[test]
    fn error_feedback_reaches_prompt() {
        let config = PromptConfig::default();
        let messages = build_prompt(
            &config,
            "i",
            &obs("[1] RootWebArea ''", Some("Unknown element id 99999")),
            None,
        );
        assert!(messages[5].content.contains("Error: Unknown element id 99999"));
    }

    #[test]
    fn decide_retries_then_succeeds() {
        let mut entries = vec![ScriptEntry::Reply("just prose".to_string()); 9];
        entries.push(ScriptEntry::Reply("```noop```".to_string()));
        let client = ScriptedClient::new(entries);
        let mut agent = Agent::new(&client);
        agent.policy.parse_retries = 10;
        match agent.decide("i", &obs("x", None), None).unwrap() {
            Decision::Act { action, .. } => assert_eq!(action, Action::Noop),
            other => panic!("expected action, got {other:?}"),
        }
    }

    #[test]
    fn decide_returns_invalid_after_exhaustion() {
        let client = ScriptedClient::replies(&["prose forever"]);
        let agent = Agent::new(&client);
        match agent.decide("i", &obs("x", None), None).unwrap() {
            Decision::Invalid { reason, .. } => assert!(reason.starts_with("invalid action:")),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn halt_rules() {
        let policy = HaltPolicy::default();
        let entry = |raw: &str, invalid: bool| HistoryEntry {
            obs_text: "same".to_string(),
            raw_action: raw.to_string(),
            was_invalid: invalid,
        };
        // 30 steps cap.
        let long: Vec<_> = (0..30).map(|i| entry(&format!("click [{i}]"), false)).collect();
        assert_eq!(should_halt(&policy, &long), Some(HaltReason::MaxSteps));
        // 4 consecutive identical (action, observation) pairs halt; 3 do not.
        let repeats = vec![entry("click [5]", false); 4];
        assert_eq!(should_halt(&policy, &repeats), Some(HaltReason::Repeat));
        assert_eq!(should_halt(&policy, &repeats[..3]), None);
        // 3 consecutive invalid actions halt; a broken streak does not.
        let invalids = vec![entry("a", true), entry("b", true), entry("c", true)];
        assert_eq!(should_halt(&policy, &invalids), Some(HaltReason::Invalid));
        let broken = vec![entry("a", true), entry("x", false), entry("b", true), entry("c", true)];
        assert_eq!(should_halt(&policy, &broken), None);
        assert_eq!(should_halt(&policy, &[]), None);
    }
}

//! Functional-correctness evaluation: answer checks (exact, must-include,
//! fuzzy via a judge model), locator-based program checks over final site
//! state, and reward composition.
//!
//! Rewards are binary: an episode scores 1 iff every check passes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendSession;
use crate::env::Trace;
use crate::llm::{ChatMessage, JudgeClient, JudgeError};
use crate::observation::parse_html;
use crate::selector::Selector;
use crate::taskcfg::TaskInstance;

/// Grading prompt for `fuzzy_match`, packaged verbatim.
pub const FUZZY_JUDGE_PROMPT: &str = include_str!("../../../prompts/fuzzy_judge.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    AnswerExact,
    AnswerMustInclude,
    AnswerFuzzy,
    Program,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocatorKind {
    FinalUrl,
    Probe,
    ElementText,
}

/// Procedure retrieving the value a program check asserts over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locator {
    pub kind: LocatorKind,
    /// Probe name or selector expression; empty for final_url.
    #[serde(default)]
    pub arg: String,
}

/// How a program check compares references against the located value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    MustInclude,
}

fn default_match() -> MatchMode {
    MatchMode::MustInclude
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub kind: CheckKind,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<Locator>,
    #[serde(rename = "match", default = "default_match")]
    pub match_mode: MatchMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub checks: Vec<Check>,
    #[serde(default)]
    pub unachievable: bool,
}

#[derive(Debug, Error)]
pub enum EvalSpecError {
    #[error("check has no references")]
    EmptyReferences,
    #[error("program check is missing a locator")]
    MissingLocator,
    #[error("locator arg must be nonempty for kind {0:?}")]
    EmptyLocatorArg(LocatorKind),
    #[error("unachievable task must carry exactly one answer_exact check with reference \"N/A\"")]
    BadUnachievableSpec,
}

impl EvalSpec {
    pub fn validate(&self) -> Result<(), EvalSpecError> {
        for check in &self.checks {
            if check.references.is_empty() {
                return Err(EvalSpecError::EmptyReferences);
            }
            if check.kind == CheckKind::Program {
                match &check.locator {
                    None => return Err(EvalSpecError::MissingLocator),
                    Some(loc) if loc.kind != LocatorKind::FinalUrl && loc.arg.is_empty() => {
                        return Err(EvalSpecError::EmptyLocatorArg(loc.kind))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.unachievable {
            let ok = self.checks.len() == 1
                && self.checks[0].kind == CheckKind::AnswerExact
                && self.checks[0].references == ["N/A"];
            if !ok {
                return Err(EvalSpecError::BadUnachievableSpec);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    /// Located value for program checks; the stop answer otherwise.
    pub value: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub score: u8,
    pub per_check: Vec<CheckOutcome>,
    pub judge_transcripts: Vec<String>,
}

// ---------------------------------------------------------------------------
// Answer scoring functions

/// trim, collapse internal whitespace runs, case-fold.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn exact_match(prediction: &str, reference: &str) -> u8 {
    u8::from(normalize(prediction) == normalize(reference))
}

pub fn must_include(prediction: &str, reference: &str) -> u8 {
    u8::from(normalize(prediction).contains(&normalize(reference)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Incorrect,
    PartiallyCorrect,
}

/// Scan left-to-right for verdict phrases, longest-match-first at each
/// position so "correct" inside "incorrect"/"partially correct" never
/// misfires; the LAST phrase found wins.
pub fn classify_verdict(reply: &str) -> Option<Verdict> {
    const PHRASES: [(&str, Verdict); 3] = [
        ("partially correct", Verdict::PartiallyCorrect),
        ("incorrect", Verdict::Incorrect),
        ("correct", Verdict::Correct),
    ];
    let lower = reply.to_lowercase();
    let bytes = lower.as_bytes();
    let mut last = None;
    let mut i = 0;
    while i < bytes.len() {
        let mut matched = false;
        for (phrase, verdict) in PHRASES {
            if lower[i..].starts_with(phrase) {
                last = Some(verdict);
                i += phrase.len();
                matched = true;
                break;
            }
        }
        if !matched {
            i += 1;
        }
    }
    last
}

fn judge_prompt(intent: &str, reference: &str, prediction: &str) -> Vec<ChatMessage> {
    let text = FUZZY_JUDGE_PROMPT
        .replace("{{intent}}", intent)
        .replace("{{reference answer}}", reference)
        .replace("{{prediction}}", prediction);
    vec![ChatMessage::new("user", text)]
}

fn fuzzy_detail(
    intent: &str,
    references: &[String],
    prediction: &str,
    judge: &dyn JudgeClient,
) -> (bool, Vec<String>, String) {
    let mut transcripts = Vec::new();
    for reference in references {
        let messages = judge_prompt(intent, reference, prediction);
        let reply = match judge.complete(&messages) {
            Ok(reply) => reply,
            Err(e) => return (false, transcripts, format!("judge error: {e}")),
        };
        transcripts.push(reply.clone());
        match classify_verdict(&reply) {
            Some(Verdict::Correct) => {}
            Some(v) => return (false, transcripts, format!("judged {v:?} for {reference:?}")),
            None => {
                return (
                    false,
                    transcripts,
                    JudgeError::NoVerdict(reply).to_string(),
                )
            }
        }
    }
    (true, transcripts, "all references judged correct".to_string())
}

/// 1 iff the judge grades the prediction "correct" against every reference.
pub fn fuzzy_match(
    intent: &str,
    references: &[String],
    prediction: &str,
    judge: &dyn JudgeClient,
) -> u8 {
    u8::from(fuzzy_detail(intent, references, prediction, judge).0)
}

// ---------------------------------------------------------------------------
// Locators

#[derive(Debug, Error)]
pub enum LocateError {
    #[error("selector matched nothing: {0}")]
    NoMatch(String),
    #[error("bad selector {0:?}: {1}")]
    BadSelector(String, String),
    #[error("{0}")]
    Backend(String),
}

/// Retrieve the critical content a program check asserts over. element_text
/// is evaluated against the final focused page; no navigation is performed.
pub fn locate(
    trace: &Trace,
    session: &mut dyn BackendSession,
    locator: &Locator,
) -> Result<String, LocateError> {
    match locator.kind {
        LocatorKind::FinalUrl => Ok(trace.final_url.clone()),
        LocatorKind::Probe => session
            .probe(&locator.arg)
            .map_err(|e| LocateError::Backend(e.to_string())),
        LocatorKind::ElementText => {
            let page = session
                .current_page()
                .map_err(|e| LocateError::Backend(e.to_string()))?;
            let snapshot = parse_html(&page.html, &page.url);
            let selector = Selector::parse(&locator.arg)
                .map_err(|e| LocateError::BadSelector(locator.arg.clone(), e.to_string()))?;
            let node = selector
                .select_first(&snapshot.root)
                .ok_or_else(|| LocateError::NoMatch(locator.arg.clone()))?;
            Ok(crate::observation::collapse_ws(&node.descendant_text()))
        }
    }
}

// ---------------------------------------------------------------------------
// Reward composition

/// Score a finished episode. Never raises: locator and judge failures mark
/// their check failed with a detail string.
pub fn evaluate(
    task: &TaskInstance,
    trace: &Trace,
    session: &mut dyn BackendSession,
    judge: &dyn JudgeClient,
) -> RewardReport {
    let answer = trace.stop_answer.clone().unwrap_or_default();
    let mut per_check = Vec::new();
    let mut judge_transcripts = Vec::new();

    for check in &task.eval.checks {
        let outcome = match check.kind {
            CheckKind::AnswerExact | CheckKind::AnswerMustInclude => {
                let score = |r: &str| match check.kind {
                    CheckKind::AnswerExact => exact_match(&answer, r),
                    _ => must_include(&answer, r),
                };
                let failed: Vec<&str> = check
                    .references
                    .iter()
                    .filter(|r| score(r) == 0)
                    .map(String::as_str)
                    .collect();
                CheckOutcome {
                    check: check.clone(),
                    passed: failed.is_empty(),
                    value: answer.clone(),
                    detail: if failed.is_empty() {
                        "matched".to_string()
                    } else {
                        format!("unmatched references: {failed:?}")
                    },
                }
            }
            CheckKind::AnswerFuzzy => {
                let (passed, transcripts, detail) =
                    fuzzy_detail(&task.intent, &check.references, &answer, judge);
                judge_transcripts.extend(transcripts);
                CheckOutcome {
                    check: check.clone(),
                    passed,
                    value: answer.clone(),
                    detail,
                }
            }
            CheckKind::Program => {
                let locator = check.locator.as_ref().expect("validated: program has locator");
                match locate(trace, session, locator) {
                    Ok(value) => {
                        let score = |r: &str| match check.match_mode {
                            MatchMode::Exact => exact_match(&value, r),
                            MatchMode::MustInclude => must_include(&value, r),
                        };
                        let failed: Vec<&str> = check
                            .references
                            .iter()
                            .filter(|r| score(r) == 0)
                            .map(String::as_str)
                            .collect();
                        CheckOutcome {
                            check: check.clone(),
                            passed: failed.is_empty(),
                            value,
                            detail: if failed.is_empty() {
                                "matched".to_string()
                            } else {
                                format!("unmatched references: {failed:?}")
                            },
                        }
                    }
                    Err(e) => CheckOutcome {
                        check: check.clone(),
                        passed: false,
                        value: String::new(),
                        detail: e.to_string(),
                    },
                }
            }
        };
        per_check.push(outcome);
    }

    let score = u8::from(per_check.iter().all(|c| c.passed));
    RewardReport {
        score,
        per_check,
        judge_transcripts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubJudge;

    #[test]
    fn exact_match_table3() {
        assert_eq!(exact_match("Samantha Jones", "Samantha Jones"), 1);
        assert_eq!(exact_match("samantha  jones", "Samantha Jones"), 1);
        assert_eq!(exact_match("Samantha J.", "Samantha Jones"), 0);
    }

    #[test]
    fn must_include_table3() {
        let pred = "The customer is Sean Miller, reachable at sean@gmail.com";
        assert_eq!(must_include(pred, "Sean Miller"), 1);
        assert_eq!(must_include(pred, "sean@gmail.com"), 1);
        assert_eq!(must_include("Sean M.", "Sean Miller"), 0);
    }

    #[test]
    fn must_include_generalizes_exact() {
        for (p, r) in [("a b", "A  B"), ("x", "x"), ("N/A", "n/a")] {
            if exact_match(p, r) == 1 {
                assert_eq!(must_include(p, r), 1);
            }
        }
    }

    #[test]
    fn verdict_scan_longest_match_first() {
        assert_eq!(classify_verdict("The answer is correct."), Some(Verdict::Correct));
        assert_eq!(
            classify_verdict("The answer is incorrect."),
            Some(Verdict::Incorrect)
        );
        assert_eq!(
            classify_verdict("I judge this partially correct"),
            Some(Verdict::PartiallyCorrect)
        );
        // "incorrect" must not register a trailing "correct".
        assert_eq!(classify_verdict("incorrect"), Some(Verdict::Incorrect));
        // Last occurrence wins.
        assert_eq!(
            classify_verdict("It could be correct, but overall: incorrect"),
            Some(Verdict::Incorrect)
        );
        assert_eq!(classify_verdict("no judgement here"), None);
        assert_eq!(classify_verdict("CORRECT"), Some(Verdict::Correct));
    }

    #[test]
    fn fuzzy_match_verdicts() {
        let refs = vec!["walking: 2h58min".to_string()];
        let pred = "walking takes 2 hour 58 minutes, driving 21 min";
        let correct = StubJudge::new().with_verdict("walking: 2h58min", pred, "correct");
        assert_eq!(fuzzy_match("Compare times", &refs, pred, &correct), 1);
        let partial = StubJudge::new().with_verdict("walking: 2h58min", pred, "partially correct");
        assert_eq!(fuzzy_match("Compare times", &refs, pred, &partial), 0);
        let wordy =
            StubJudge::new().with_verdict("walking: 2h58min", pred, "The answer is incorrect.");
        assert_eq!(fuzzy_match("Compare times", &refs, pred, &wordy), 0);
        // No-verdict reply can never score 1.
        let mute = StubJudge::new().with_verdict("walking: 2h58min", pred, "hmm");
        assert_eq!(fuzzy_match("Compare times", &refs, pred, &mute), 0);
    }

    #[test]
    fn judge_prompt_instantiation() {
        let messages = judge_prompt("intent text", "ref", "pred");
        let text = &messages[0].content;
        assert!(text.contains("question: intent text"));
        assert!(text.contains("reference answer: ref"));
        assert!(text.contains("student answer: pred"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn eval_spec_validation() {
        let good = EvalSpec {
            checks: vec![Check {
                kind: CheckKind::AnswerExact,
                references: vec!["N/A".to_string()],
                locator: None,
                match_mode: MatchMode::MustInclude,
            }],
            unachievable: true,
        };
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.checks[0].references = vec!["555-1212".to_string()];
        assert!(matches!(
            bad.validate(),
            Err(EvalSpecError::BadUnachievableSpec)
        ));
        let no_locator = EvalSpec {
            checks: vec![Check {
                kind: CheckKind::Program,
                references: vec!["x".to_string()],
                locator: None,
                match_mode: MatchMode::MustInclude,
            }],
            unachievable: false,
        };
        assert!(matches!(
            no_locator.validate(),
            Err(EvalSpecError::MissingLocator)
        ));
    }

    #[test]
    fn check_serde_round_trip() {
        let json = r#"{"kind":"program","references":["/f/nyc"],
                       "locator":{"kind":"probe","arg":"latest_post_url"}}"#;
        let check: Check = serde_json::from_str(json).unwrap();
        assert_eq!(check.match_mode, MatchMode::MustInclude);
        let back: Check =
            serde_json::from_str(&serde_json::to_string(&check).unwrap()).unwrap();
        assert_eq!(back, check);
    }
}

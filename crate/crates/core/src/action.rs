//! The agent action space: a strict textual grammar, an extractor for model
//! completions, and a canonical serializer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element addressing: per-observation ID or on-screen coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ElementRef {
    Id(u32),
    Coords { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScrollDirection {
    Up,
    Down,
}

impl fmt::Display for ScrollDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        })
    }
}

/// One element of the action space, plus the terminating stop action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Noop,
    Click { target: ElementRef },
    Hover { target: ElementRef },
    Type { target: ElementRef, text: String, press_enter: bool },
    Press { keys: String },
    Scroll { direction: ScrollDirection },
    TabFocus { index: usize },
    NewTab,
    TabClose,
    GoBack,
    GoForward,
    Goto { url: String },
    Stop { answer: String },
}

impl Action {
    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("invalid action: {0}")]
    Parse(String),
    #[error("no action found in model output: {0}")]
    Extraction(String),
}

const KEY_NAMES: &[&str] = &["ctrl", "alt", "shift", "meta", "enter", "tab", "delete"];

fn valid_key_token(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    KEY_NAMES.contains(&lower.as_str())
        || (lower.len() == 1 && lower.chars().all(|c| c.is_ascii_alphanumeric()))
}

/// Parse a single-line action string. Total: every input yields an
/// `Action` or a `Parse` error.
pub fn parse_action(text: &str) -> Result<Action, ActionError> {
    let text = text.trim();
    let verb_end = text
        .find(|c: char| c.is_whitespace() || c == '[')
        .unwrap_or(text.len());
    let verb = &text[..verb_end];
    let rest = text[verb_end..].trim_start();

    let err = |msg: &str| Err(ActionError::Parse(msg.to_string()));

    match verb {
        "noop" => expect_bare(rest, Action::Noop),
        "new_tab" => expect_bare(rest, Action::NewTab),
        // The packaged prompts name this action `close_tab`; both spellings parse.
        "tab_close" | "close_tab" => expect_bare(rest, Action::TabClose),
        "go_back" => expect_bare(rest, Action::GoBack),
        "go_forward" => expect_bare(rest, Action::GoForward),
        "click" | "hover" => {
            let (arg, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            let target = parse_element_ref(&arg)?;
            Ok(if verb == "click" {
                Action::Click { target }
            } else {
                Action::Hover { target }
            })
        }
        "type" => {
            let (target, rest) = bracket_arg(rest)?;
            let target = parse_element_ref(&target)?;
            let (content, rest) = bracket_arg(rest)?;
            let rest = rest.trim_start();
            let press_enter = if rest.is_empty() {
                true
            } else {
                let (flag, tail) = bracket_arg(rest)?;
                expect_consumed(tail)?;
                match flag.trim() {
                    "1" | "press_enter_after=1" => true,
                    "0" | "press_enter_after=0" => false,
                    other => {
                        return Err(ActionError::Parse(format!(
                            "bad press_enter flag: {other}"
                        )))
                    }
                }
            };
            Ok(Action::Type {
                target,
                text: content,
                press_enter,
            })
        }
        "press" => {
            let (combo, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            let combo = combo.trim().to_string();
            if combo.is_empty() || !combo.split('+').all(|t| valid_key_token(t.trim())) {
                return Err(ActionError::Parse(format!("bad key combination: {combo}")));
            }
            Ok(Action::Press { keys: combo })
        }
        "scroll" => {
            let (dir, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            let dir = dir
                .trim()
                .strip_prefix("direction=")
                .unwrap_or(dir.trim())
                .to_ascii_lowercase();
            match dir.as_str() {
                "up" => Ok(Action::Scroll {
                    direction: ScrollDirection::Up,
                }),
                "down" => Ok(Action::Scroll {
                    direction: ScrollDirection::Down,
                }),
                other => err(&format!("bad scroll direction: {other}")),
            }
        }
        "tab_focus" => {
            let (idx, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            let index: usize = idx
                .trim()
                .parse()
                .map_err(|_| ActionError::Parse(format!("bad tab index: {idx}")))?;
            Ok(Action::TabFocus { index })
        }
        "goto" => {
            let (url, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            let url = url.trim().to_string();
            if url.is_empty() {
                return err("goto requires a URL");
            }
            Ok(Action::Goto { url })
        }
        "stop" => {
            if rest.is_empty() {
                return Ok(Action::Stop {
                    answer: String::new(),
                });
            }
            let (answer, rest) = bracket_arg(rest)?;
            expect_consumed(rest)?;
            Ok(Action::Stop { answer })
        }
        "" => err("empty action"),
        other => err(&format!("unknown verb: {other}")),
    }
}

fn expect_bare(rest: &str, action: Action) -> Result<Action, ActionError> {
    if rest.trim().is_empty() {
        Ok(action)
    } else {
        Err(ActionError::Parse(format!(
            "unexpected argument: {}",
            rest.trim()
        )))
    }
}

fn expect_consumed(rest: &str) -> Result<(), ActionError> {
    if rest.trim().is_empty() {
        Ok(())
    } else {
        Err(ActionError::Parse(format!(
            "trailing input: {}",
            rest.trim()
        )))
    }
}

/// Take one `[...]` argument using a matching-depth bracket scan, so content
/// may itself contain balanced brackets. Returns (content, remainder).
fn bracket_arg(input: &str) -> Result<(String, &str), ActionError> {
    let input = input.trim_start();
    if !input.starts_with('[') {
        return Err(ActionError::Parse(format!(
            "expected [...] argument at: {input}"
        )));
    }
    let mut depth = 0usize;
    for (i, c) in input.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Ok((input[1..i].to_string(), &input[i + 1..]));
                }
            }
            _ => {}
        }
    }
    Err(ActionError::Parse("unterminated [ argument".to_string()))
}

fn parse_element_ref(arg: &str) -> Result<ElementRef, ActionError> {
    let arg = arg.trim();
    if let Some((x, y)) = arg.split_once(',') {
        let x: f64 = x
            .trim()
            .parse()
            .map_err(|_| ActionError::Parse(format!("bad coordinate: {arg}")))?;
        let y: f64 = y
            .trim()
            .parse()
            .map_err(|_| ActionError::Parse(format!("bad coordinate: {arg}")))?;
        return Ok(ElementRef::Coords { x, y });
    }
    let id: u32 = arg
        .parse()
        .map_err(|_| ActionError::Parse(format!("bad element id: {arg}")))?;
    if id == 0 {
        return Err(ActionError::Parse("element ids start at 1".to_string()));
    }
    Ok(ElementRef::Id(id))
}

/// Prompting mode; controls which fenced span of the completion is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractMode {
    Direct,
    Cot,
}

/// Pull the action out of a model completion. CoT mode takes the last
/// triple-backtick fenced span, direct mode the first.
pub fn extract_action(llm_output: &str, mode: ExtractMode) -> Result<(Action, String), ActionError> {
    let mut spans = Vec::new();
    let mut rest = llm_output;
    let mut base = 0;
    let mut open: Option<usize> = None;
    while let Some(idx) = rest.find("```") {
        let abs = base + idx;
        match open.take() {
            None => open = Some(abs + 3),
            Some(start) => spans.push(&llm_output[start..abs]),
        }
        base = abs + 3;
        rest = &llm_output[base..];
    }
    let span = match mode {
        ExtractMode::Direct => spans.first(),
        ExtractMode::Cot => spans.last(),
    };
    let Some(raw) = span else {
        return Err(ActionError::Extraction(
            "no fenced action span".to_string(),
        ));
    };
    let raw = raw.trim().to_string();
    let action = parse_action(&raw)?;
    Ok((action, raw))
}

/// Canonical single-line form; `parse_action(serialize(a)) == a`.
pub fn serialize(action: &Action) -> String {
    fn elem(target: &ElementRef) -> String {
        match target {
            ElementRef::Id(id) => format!("{id}"),
            ElementRef::Coords { x, y } => format!("{x},{y}"),
        }
    }
    match action {
        Action::Noop => "noop".to_string(),
        Action::Click { target } => format!("click [{}]", elem(target)),
        Action::Hover { target } => format!("hover [{}]", elem(target)),
        Action::Type {
            target,
            text,
            press_enter,
        } => format!(
            "type [{}] [{}] [{}]",
            elem(target),
            text,
            if *press_enter { 1 } else { 0 }
        ),
        Action::Press { keys } => format!("press [{keys}]"),
        Action::Scroll { direction } => format!("scroll [{direction}]"),
        Action::TabFocus { index } => format!("tab_focus [{index}]"),
        Action::NewTab => "new_tab".to_string(),
        Action::TabClose => "tab_close".to_string(),
        Action::GoBack => "go_back".to_string(),
        Action::GoForward => "go_forward".to_string(),
        Action::Goto { url } => format!("goto [{url}]"),
        Action::Stop { answer } => format!("stop [{answer}]"),
    }
}

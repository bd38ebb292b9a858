//! Episode state machine: multi-tab management, observation assembly, step
//! semantics, and trace recording.
//!
//! Invalid actions never raise; they leave page state untouched and surface
//! through `observation.error` so the agent can react.

use serde::{Deserialize, Serialize};

use crate::action::{Action, ElementRef};
use crate::backend::{BackendError, BackendSession, SiteBackend};
use crate::observation::{
    derive_axtree, parse_html, render_axtree, resolve_element, AxTree, DomSnapshot, Viewport,
};

/// Tab listing entry shown in the observation header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabInfo {
    pub index: usize,
    pub title: String,
    pub is_focused: bool,
}

/// The agent-facing percept: header + rendered tree + URL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub url: String,
    pub tabs: Vec<TabInfo>,
    /// Why the previous action failed, when it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub terminated: bool,
    pub stop_answer: Option<String>,
}

/// One recorded step: the observation the agent acted on plus its action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub observation: Observation,
    pub raw_action: String,
    pub parsed_action: Option<String>,
    pub error: Option<String>,
}

/// Recorded episode: (o, a) sequence, halt answer, and per-step state
/// snapshots (null where the backend cannot snapshot).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub stop_answer: Option<String>,
    pub final_url: String,
    pub snapshots: Vec<serde_json::Value>,
}

struct Tab {
    session: Box<dyn BackendSession>,
    url: String,
    title: String,
}

pub struct Env {
    backend: Box<dyn SiteBackend>,
    tabs: Vec<Tab>,
    focused: usize,
    step_count: usize,
    viewport: Viewport,
    last_observation: Observation,
    last_tree: AxTree,
    last_snapshot: DomSnapshot,
    trace: Trace,
    terminated: bool,
}

impl Env {
    /// Open a fresh session at `start_url` and assemble the initial
    /// observation.
    pub fn reset(
        backend: Box<dyn SiteBackend>,
        start_url: &str,
        viewport: Viewport,
    ) -> Result<Env, BackendError> {
        let session = backend.open_session(start_url)?;
        let mut env = Env {
            backend,
            tabs: vec![Tab {
                session,
                url: start_url.to_string(),
                title: String::new(),
            }],
            focused: 0,
            step_count: 0,
            viewport,
            last_observation: Observation {
                text: String::new(),
                url: String::new(),
                tabs: Vec::new(),
                error: None,
            },
            last_tree: AxTree {
                nodes: Vec::new(),
                window: viewport,
                total_nodes: 0,
            },
            last_snapshot: parse_html("", start_url),
            trace: Trace::default(),
            terminated: false,
        };
        env.assemble_observation(None)?;
        env.trace.final_url = env.last_observation.url.clone();
        Ok(env)
    }

    pub fn observation(&self) -> &Observation {
        &self.last_observation
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn focused_session_mut(&mut self) -> &mut dyn BackendSession {
        self.tabs[self.focused].session.as_mut()
    }

    /// Apply one parsed action. `raw` is the fenced text the agent emitted;
    /// it is recorded verbatim in the trace.
    pub fn step(&mut self, action: Action, raw: &str) -> StepResult {
        let seen = self.last_observation.clone();
        let mut stop_answer = None;
        let error = match &action {
            Action::Stop { answer } => {
                self.terminated = true;
                stop_answer = Some(answer.clone());
                None
            }
            Action::TabFocus { index } => {
                if *index < self.tabs.len() {
                    self.focused = *index;
                    None
                } else {
                    Some(format!("No tab with index {index}"))
                }
            }
            Action::NewTab => {
                let homepage = self.backend.start_url();
                match self.backend.open_session(&homepage) {
                    Ok(session) => {
                        self.tabs.push(Tab {
                            session,
                            url: homepage,
                            title: String::new(),
                        });
                        self.focused = self.tabs.len() - 1;
                        None
                    }
                    Err(e) => Some(e.to_string()),
                }
            }
            Action::TabClose => {
                if self.tabs.len() == 1 {
                    Some("Cannot close the last tab".to_string())
                } else {
                    let mut tab = self.tabs.remove(self.focused);
                    let _ = tab.session.close();
                    if self.focused > 0 {
                        self.focused -= 1;
                    }
                    None
                }
            }
            Action::Scroll { direction } => {
                if let Some(limit) = self.viewport.limit {
                    use crate::action::ScrollDirection::*;
                    let total = self.last_tree.total_nodes;
                    self.viewport.offset = match direction {
                        Down => (self.viewport.offset + limit)
                            .min(total.saturating_sub(1)),
                        Up => self.viewport.offset.saturating_sub(limit),
                    };
                }
                None
            }
            element_or_nav => self.perform_on_backend(element_or_nav),
        };

        self.record_step(seen, raw, Some(&action), error.clone());
        if let Err(e) = self.assemble_observation(error) {
            // Rendering the page failed; surface it like an action error.
            self.last_observation.error = Some(e.to_string());
        }
        self.trace.final_url = self.last_observation.url.clone();
        if self.terminated {
            self.trace.stop_answer = stop_answer.clone();
        }
        StepResult {
            observation: self.last_observation.clone(),
            terminated: self.terminated,
            stop_answer,
        }
    }

    /// Record an action the agent layer could not parse or extract. Page
    /// state is untouched; the error is surfaced in the next observation.
    pub fn step_invalid(&mut self, raw: &str, reason: &str) -> StepResult {
        let seen = self.last_observation.clone();
        self.record_step(seen, raw, None, Some(reason.to_string()));
        if let Err(e) = self.assemble_observation(Some(reason.to_string())) {
            self.last_observation.error = Some(e.to_string());
        }
        StepResult {
            observation: self.last_observation.clone(),
            terminated: false,
            stop_answer: None,
        }
    }

    fn perform_on_backend(&mut self, action: &Action) -> Option<String> {
        let target_path = match action {
            Action::Click { target } | Action::Hover { target } | Action::Type { target, .. } => {
                match target {
                    ElementRef::Id(id) => match resolve_element(&self.last_tree, *id) {
                        Ok(node) => Some(node.dom_path.clone()),
                        Err(e) => return Some(e.to_string()),
                    },
                    // Backends without hit-testing reject coordinates themselves.
                    ElementRef::Coords { .. } => None,
                }
            }
            _ => None,
        };
        let session = self.tabs[self.focused].session.as_mut();
        match session.perform(action, target_path.as_deref()) {
            Ok(()) => None,
            Err(e) => Some(e.to_string()),
        }
    }

    fn record_step(
        &mut self,
        seen: Observation,
        raw: &str,
        parsed: Option<&Action>,
        error: Option<String>,
    ) {
        self.step_count += 1;
        self.trace.steps.push(TraceStep {
            observation: seen,
            raw_action: raw.to_string(),
            parsed_action: parsed.map(crate::action::serialize),
            error,
        });
        let snapshot = self.tabs[self.focused]
            .session
            .snapshot_state()
            .unwrap_or(serde_json::Value::Null);
        self.trace.snapshots.push(snapshot);
    }

    fn assemble_observation(&mut self, error: Option<String>) -> Result<(), BackendError> {
        // Refresh every tab's URL/title; shared site state may have changed
        // what other tabs render.
        for tab in &mut self.tabs {
            let page = tab.session.current_page()?;
            tab.url = page.url;
            tab.title = page.title;
        }
        let page = self.tabs[self.focused].session.current_page()?;
        let snapshot = parse_html(&page.html, &page.url);
        let full = derive_axtree(&snapshot, Viewport::default());
        let total = full.total_nodes;
        if total > 0 && self.viewport.offset >= total {
            self.viewport.offset = total - 1;
        }
        let tree = derive_axtree(&snapshot, self.viewport);

        let tabs: Vec<TabInfo> = self
            .tabs
            .iter()
            .enumerate()
            .map(|(i, tab)| TabInfo {
                index: i,
                title: tab.title.clone(),
                is_focused: i == self.focused,
            })
            .collect();
        let mut text = String::new();
        for tab in &tabs {
            let marker = if tab.is_focused { " (current)" } else { "" };
            text.push_str(&format!("Tab {}{}: {}\n", tab.index, marker, tab.title));
        }
        text.push('\n');
        text.push_str(&render_axtree(&tree));
        text.push_str(&format!("\nURL: {}", page.url));

        self.last_observation = Observation {
            text,
            url: page.url,
            tabs,
            error,
        };
        self.last_snapshot = snapshot;
        self.last_tree = tree;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::simsite::{SimSite, SimSiteDefinition};
    use std::sync::Arc;

    fn site_def() -> Arc<SimSiteDefinition> {
        let def = serde_json::json!({
            "site_id": "tiny",
            "start_url": "http://tiny.sim/",
            "auth_user": "emma",
            "state": {
                "scalars": {},
                "collections": {"cart": []}
            },
            "pages": [
                {
                    "pattern": "/",
                    "title": "Tiny",
                    "body": "<a href='/cart'>Cart</a><button data-anchor='add'>Add</button>",
                    "behaviors": {
                        "add": {"trigger": "click", "effects": [
                            {"op": "append", "collection": "cart", "record": {"name": "thing"}}
                        ]}
                    }
                },
                {"pattern": "/cart", "title": "Cart", "body": "<h1>Cart</h1>"}
            ],
            "probes": {}
        });
        Arc::new(serde_json::from_value(def).unwrap())
    }

    fn fresh_env() -> Env {
        let backend = Box::new(SimSite::new(site_def()));
        Env::reset(backend, "http://tiny.sim/", Viewport::default()).unwrap()
    }

    #[test]
    fn initial_observation_shape() {
        let env = fresh_env();
        let obs = env.observation();
        assert!(obs.text.starts_with("Tab 0 (current): Tiny\n"));
        assert!(obs.text.contains("[1] RootWebArea 'Tiny'"));
        assert!(obs.text.ends_with("URL: http://tiny.sim/"));
        assert!(env.trace().steps.is_empty());
    }

    #[test]
    fn reset_is_deterministic() {
        let a = fresh_env();
        let b = fresh_env();
        assert_eq!(a.observation(), b.observation());
    }

    #[test]
    fn click_link_navigates() {
        let mut env = fresh_env();
        // [2] is the Cart link (after [1] RootWebArea).
        let result = env.step(
            Action::Click {
                target: ElementRef::Id(2),
            },
            "click [2]",
        );
        assert!(result.observation.error.is_none());
        assert!(result.observation.url.ends_with("/cart"));
    }

    #[test]
    fn unknown_element_sets_error() {
        let mut env = fresh_env();
        let before = env.observation().url.clone();
        let result = env.step(
            Action::Click {
                target: ElementRef::Id(99999),
            },
            "click [99999]",
        );
        assert_eq!(
            result.observation.error.as_deref(),
            Some("Unknown element id 99999")
        );
        assert_eq!(result.observation.url, before);
    }

    #[test]
    fn stop_terminates_with_answer() {
        let mut env = fresh_env();
        let result = env.step(
            Action::Stop {
                answer: "$279.49".to_string(),
            },
            "stop [$279.49]",
        );
        assert!(result.terminated);
        assert_eq!(result.stop_answer.as_deref(), Some("$279.49"));
        assert_eq!(env.trace().stop_answer.as_deref(), Some("$279.49"));
    }

    #[test]
    fn tab_focus_out_of_range_errors() {
        let mut env = fresh_env();
        let result = env.step(Action::TabFocus { index: 1 }, "tab_focus [1]");
        assert!(result.observation.error.is_some());
        assert!(result.observation.tabs[0].is_focused);
    }

    #[test]
    fn last_tab_cannot_close() {
        let mut env = fresh_env();
        let result = env.step(Action::TabClose, "tab_close");
        assert!(result.observation.error.is_some());
        assert_eq!(result.observation.tabs.len(), 1);
    }

    #[test]
    fn new_tab_opens_homepage() {
        let mut env = fresh_env();
        let result = env.step(Action::NewTab, "new_tab");
        assert_eq!(result.observation.tabs.len(), 2);
        assert!(result.observation.tabs[1].is_focused);
        assert_eq!(result.observation.url, "http://tiny.sim/");
        assert!(result
            .observation
            .text
            .starts_with("Tab 0: Tiny\nTab 1 (current): Tiny\n"));
    }

    #[test]
    fn trace_accumulates() {
        let mut env = fresh_env();
        env.step(Action::Noop, "noop");
        env.step_invalid("garbage", "invalid action: unknown verb: garbage");
        env.step(
            Action::Stop {
                answer: "N/A".to_string(),
            },
            "stop [N/A]",
        );
        let trace = env.trace();
        assert_eq!(trace.steps.len(), 3);
        assert_eq!(trace.steps[0].parsed_action.as_deref(), Some("noop"));
        assert!(trace.steps[1].parsed_action.is_none());
        assert!(trace.steps[1].error.is_some());
        assert_eq!(trace.stop_answer.as_deref(), Some("N/A"));
    }
}

//! arena-kit: a web-agent environment framework and evaluation harness.
//!
//! Pages are observed as rendered accessibility trees, operated through a
//! compact bracketed action grammar, and scored by functional correctness:
//! answer checks against reference strings and program checks against the
//! final site state. Backends are deterministic simulated sites (for
//! reproducible evaluation) or a remote browser over the WebDriver wire
//! protocol.

pub mod action;
pub mod agent;
pub mod backend;
pub mod env;
pub mod evalkit;
pub mod llm;
pub mod observation;
pub mod runner;
pub mod selector;
pub mod taskcfg;

pub use action::{extract_action, parse_action, serialize, Action, ActionError, ElementRef, ExtractMode};
pub use agent::{build_prompt, should_halt, Agent, Decision, HaltPolicy, HaltReason, Mode, PromptConfig};
pub use backend::{
    BackendError, BackendSession, CapabilitySet, Page, SimSite, SimSiteDefinition, SiteBackend,
    SiteState, WebDriverBackend,
};
pub use env::{Env, Observation, StepResult, TabInfo, Trace, TraceStep};
pub use evalkit::{
    classify_verdict, evaluate, exact_match, fuzzy_match, locate, must_include, normalize, Check,
    CheckKind, EvalSpec, Locator, LocatorKind, MatchMode, RewardReport,
};
pub use llm::{
    ChatMessage, ConstantClient, HttpChatClient, JudgeClient, JudgeError, LLMClient, ModelError,
    SamplingParams, ScriptedClient, StubJudge,
};
pub use observation::{
    derive_axtree, parse_html, render_axtree, resolve_element, AxNode, AxTree, DomNode,
    DomSnapshot, Role, Viewport,
};
pub use runner::{
    report_render, run, score_trajectories, ClientSpec, Report, ReportFormat, RunConfig, RunError,
    TrajectoryRecord,
};
pub use selector::Selector;
pub use taskcfg::{instantiate, load_tasks, validate_tasks, Category, IntentTemplate, TaskInstance};

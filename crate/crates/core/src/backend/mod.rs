//! Pluggable site backends realizing the environment transition function:
//! a deterministic in-process simulated site for tests and fixtures, and a
//! WebDriver wire-protocol client for real browsers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;

pub mod simsite;
pub mod webdriver;

pub use simsite::{SimSite, SimSiteDefinition, SiteState};
pub use webdriver::WebDriverBackend;

/// What a backend session can do; element-directed actions the env can send
/// depend on these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySet {
    pub element_by_id: bool,
    pub element_by_coords: bool,
    pub probes: bool,
    pub scripts: bool,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("connection error: {0}")]
    Connection(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("session closed")]
    SessionClosed,
    #[error("unsupported action: {0}")]
    UnsupportedAction(String),
    #[error("stale target: {0}")]
    StaleTarget(String),
    #[error("navigation error: {0}")]
    Navigation(String),
    #[error("unknown probe: {0}")]
    UnknownProbe(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

/// Snapshot of the focused page of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub html: String,
    pub url: String,
    pub title: String,
}

/// A site backend opens sessions; the env binds one session per tab.
pub trait SiteBackend {
    fn capabilities(&self) -> CapabilitySet;

    /// Fresh session at `url`. For the simulated site all sessions opened
    /// from one backend share the underlying site state.
    fn open_session(&self, url: &str) -> Result<Box<dyn BackendSession>, BackendError>;

    /// The site's entry URL; used as the homepage for new tabs.
    fn start_url(&self) -> String;
}

/// One page surface (tab) on a backend. Single-threaded use only.
pub trait BackendSession {
    fn capabilities(&self) -> CapabilitySet;

    /// (html, url, title) of the current page; a pure read.
    fn current_page(&mut self) -> Result<Page, BackendError>;

    /// Apply a page-level action. Element-directed actions carry the
    /// dom_path the env resolved from the element id. Tab management and
    /// stop are handled by the env, never here.
    fn perform(&mut self, action: &Action, target: Option<&[usize]>) -> Result<(), BackendError>;

    /// Evaluate a named pure query over site state.
    fn probe(&self, name: &str) -> Result<String, BackendError>;

    /// Serialize the underlying site state (simulated site only).
    fn snapshot_state(&self) -> Result<serde_json::Value, BackendError>;

    /// Restore a previously captured site state.
    fn restore_state(&mut self, snapshot: &serde_json::Value) -> Result<(), BackendError>;

    /// Release backend resources for this tab.
    fn close(&mut self) -> Result<(), BackendError>;
}

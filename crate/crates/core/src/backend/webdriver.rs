//! W3C WebDriver wire-protocol backend.
//!
//! One wire session per backend; each env tab maps to a browser window
//! handle. Element targeting uses absolute positional XPath computed from
//! the parsed snapshot's node_path, so no cooperation from the site is
//! needed.

use std::cell::RefCell;
use std::rc::Rc;

use serde_json::{json, Value};

use super::{BackendError, BackendSession, CapabilitySet, Page, SiteBackend};
use crate::action::{Action, ElementRef};

const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";
const ENTER_KEY: char = '\u{E007}';

const WD_CAPS: CapabilitySet = CapabilitySet {
    element_by_id: true,
    element_by_coords: false,
    probes: false,
    scripts: false,
};

/// Absolute positional XPath for a node_path ("/*" is the document element).
pub fn xpath_for(path: &[usize]) -> String {
    let mut xpath = String::from("/*");
    for idx in path {
        xpath.push_str(&format!("/*[{}]", idx + 1));
    }
    xpath
}

struct WdRemote {
    http: reqwest::blocking::Client,
    base: String,
    session_id: String,
}

impl WdRemote {
    fn connect(endpoint: &str) -> Result<Rc<WdRemote>, BackendError> {
        let http = reqwest::blocking::Client::new();
        let base = endpoint.trim_end_matches('/').to_string();
        let body = json!({"capabilities": {"alwaysMatch": {}}});
        let resp = http
            .post(format!("{base}/session"))
            .json(&body)
            .send()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        let value = decode(resp)?;
        let session_id = value
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("missing sessionId".to_string()))?
            .to_string();
        Ok(Rc::new(WdRemote {
            http,
            base,
            session_id,
        }))
    }

    fn url(&self, suffix: &str) -> String {
        format!("{}/session/{}{}", self.base, self.session_id, suffix)
    }

    fn get(&self, suffix: &str) -> Result<Value, BackendError> {
        let resp = self
            .http
            .get(self.url(suffix))
            .send()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        decode(resp)
    }

    fn post(&self, suffix: &str, body: Value) -> Result<Value, BackendError> {
        let resp = self
            .http
            .post(self.url(suffix))
            .json(&body)
            .send()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        decode(resp)
    }

    fn delete(&self, suffix: &str) -> Result<Value, BackendError> {
        let resp = self
            .http
            .delete(self.url(suffix))
            .send()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        decode(resp)
    }
}

impl Drop for WdRemote {
    fn drop(&mut self) {
        let _ = self.http.delete(self.url("")).send();
    }
}

fn decode(resp: reqwest::blocking::Response) -> Result<Value, BackendError> {
    let status = resp.status();
    let body: Value = resp
        .json()
        .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))?;
    let value = body.get("value").cloned().unwrap_or(Value::Null);
    if !status.is_success() {
        let kind = value
            .get("error")
            .and_then(Value::as_str)
            .unwrap_or("unknown");
        let message = value
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or_default();
        return Err(match kind {
            "no such window" | "invalid session id" => BackendError::SessionClosed,
            "no such element" | "stale element reference" => {
                BackendError::StaleTarget(format!("{kind}: {message}"))
            }
            _ => BackendError::Protocol(format!("{kind}: {message}")),
        });
    }
    Ok(value)
}

/// Backend for a remote WebDriver endpoint (e.g. chromedriver/geckodriver).
pub struct WebDriverBackend {
    endpoint: String,
    start_url: String,
    remote: RefCell<Option<Rc<WdRemote>>>,
}

impl WebDriverBackend {
    pub fn new(endpoint: impl Into<String>, start_url: impl Into<String>) -> Self {
        WebDriverBackend {
            endpoint: endpoint.into(),
            start_url: start_url.into(),
            remote: RefCell::new(None),
        }
    }
}

impl SiteBackend for WebDriverBackend {
    fn capabilities(&self) -> CapabilitySet {
        WD_CAPS
    }

    fn open_session(&self, url: &str) -> Result<Box<dyn BackendSession>, BackendError> {
        let mut slot = self.remote.borrow_mut();
        let handle = match slot.as_ref() {
            None => {
                let remote = WdRemote::connect(&self.endpoint)?;
                *slot = Some(remote.clone());
                remote
                    .get("/window")?
                    .as_str()
                    .ok_or_else(|| BackendError::Protocol("missing window handle".to_string()))?
                    .to_string()
            }
            Some(remote) => {
                let value = remote.post("/window/new", json!({"type": "tab"}))?;
                value
                    .get("handle")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("missing window handle".to_string()))?
                    .to_string()
            }
        };
        let remote = slot.as_ref().unwrap().clone();
        let mut session = WdSession {
            remote,
            handle,
            closed: false,
        };
        session.focus()?;
        session.remote.post("/url", json!({"url": url}))?;
        Ok(Box::new(session))
    }

    fn start_url(&self) -> String {
        self.start_url.clone()
    }
}

struct WdSession {
    remote: Rc<WdRemote>,
    handle: String,
    closed: bool,
}

impl WdSession {
    fn focus(&mut self) -> Result<(), BackendError> {
        self.remote
            .post("/window", json!({"handle": self.handle}))?;
        Ok(())
    }

    fn guard(&mut self) -> Result<(), BackendError> {
        if self.closed {
            return Err(BackendError::SessionClosed);
        }
        self.focus()
    }

    fn find_element(&self, path: &[usize]) -> Result<String, BackendError> {
        let value = self.remote.post(
            "/element",
            json!({"using": "xpath", "value": xpath_for(path)}),
        )?;
        value
            .get(ELEMENT_KEY)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing element key".to_string()))
    }

    fn require_path(target: Option<&[usize]>) -> Result<&[usize], BackendError> {
        target.ok_or_else(|| {
            BackendError::StaleTarget("element action without a resolved target".to_string())
        })
    }
}

impl BackendSession for WdSession {
    fn capabilities(&self) -> CapabilitySet {
        WD_CAPS
    }

    fn current_page(&mut self) -> Result<Page, BackendError> {
        self.guard()?;
        let url = self.remote.get("/url")?.as_str().unwrap_or("").to_string();
        let title = self
            .remote
            .get("/title")?
            .as_str()
            .unwrap_or("")
            .to_string();
        let html = self
            .remote
            .get("/source")?
            .as_str()
            .unwrap_or("")
            .to_string();
        Ok(Page { html, url, title })
    }

    fn perform(&mut self, action: &Action, target: Option<&[usize]>) -> Result<(), BackendError> {
        self.guard()?;
        if let Action::Click { target: r } | Action::Hover { target: r } | Action::Type { target: r, .. } =
            action
        {
            if matches!(r, ElementRef::Coords { .. }) {
                return Err(BackendError::UnsupportedAction(
                    "coordinate element addressing is not supported by the webdriver backend"
                        .to_string(),
                ));
            }
        }
        match action {
            Action::Noop | Action::Scroll { .. } => Ok(()),
            Action::Click { .. } => {
                let eid = self.find_element(Self::require_path(target)?)?;
                self.remote.post(&format!("/element/{eid}/click"), json!({}))?;
                Ok(())
            }
            Action::Type {
                text, press_enter, ..
            } => {
                let eid = self.find_element(Self::require_path(target)?)?;
                let mut keys = text.clone();
                if *press_enter {
                    keys.push(ENTER_KEY);
                }
                self.remote
                    .post(&format!("/element/{eid}/value"), json!({"text": keys}))?;
                Ok(())
            }
            Action::Hover { .. } => Err(BackendError::UnsupportedAction(
                "hover is not supported by the webdriver backend".to_string(),
            )),
            Action::Press { .. } => Err(BackendError::UnsupportedAction(
                "key combinations are not supported by the webdriver backend".to_string(),
            )),
            Action::Goto { url } => {
                self.remote.post("/url", json!({"url": url}))?;
                Ok(())
            }
            Action::GoBack => {
                self.remote.post("/back", json!({}))?;
                Ok(())
            }
            Action::GoForward => {
                self.remote.post("/forward", json!({}))?;
                Ok(())
            }
            other => Err(BackendError::UnsupportedAction(format!(
                "not a page-level action: {other:?}"
            ))),
        }
    }

    fn probe(&self, _name: &str) -> Result<String, BackendError> {
        Err(BackendError::Unsupported(
            "webdriver backend has no probes".to_string(),
        ))
    }

    fn snapshot_state(&self) -> Result<serde_json::Value, BackendError> {
        Err(BackendError::Unsupported(
            "webdriver backend cannot snapshot site state".to_string(),
        ))
    }

    fn restore_state(&mut self, _snapshot: &serde_json::Value) -> Result<(), BackendError> {
        Err(BackendError::Unsupported(
            "webdriver backend cannot restore site state".to_string(),
        ))
    }

    fn close(&mut self) -> Result<(), BackendError> {
        if self.closed {
            return Ok(());
        }
        self.focus()?;
        self.remote.delete("/window")?;
        self.closed = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xpath_from_node_path() {
        assert_eq!(xpath_for(&[]), "/*");
        assert_eq!(xpath_for(&[0]), "/*/*[1]");
        assert_eq!(xpath_for(&[1, 0, 3]), "/*/*[2]/*[1]/*[4]");
    }
}

//! Deterministic in-process simulated-site backend.
//!
//! A site is a JSON document (`sites/*.site.json`): URL patterns mapped to
//! page templates rendered from the site state, element behaviors keyed by
//! `data-anchor` attributes, and named probes. Rendering is a pure function
//! of (state, URL), so identical action sequences from a fresh session
//! always replay identically.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{BackendError, BackendSession, CapabilitySet, Page, SiteBackend};
use crate::action::{Action, ElementRef};
use crate::observation::{parse_html, DomNode, DomSnapshot};

pub type Record = BTreeMap<String, String>;

/// Serializable site state: scalar paths plus ordered record collections.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteState {
    #[serde(default)]
    pub scalars: BTreeMap<String, String>,
    #[serde(default)]
    pub collections: BTreeMap<String, Vec<Record>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Click,
    Hover,
    Submit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Effect {
    Navigate { url: String },
    Set { path: String, value: String },
    Append { collection: String, record: BTreeMap<String, String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementBehavior {
    pub trigger: Trigger,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageTemplate {
    pub pattern: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub behaviors: BTreeMap<String, ElementBehavior>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSiteDefinition {
    pub site_id: String,
    pub start_url: String,
    #[serde(default)]
    pub auth_user: String,
    #[serde(default)]
    pub state: SiteState,
    pub pages: Vec<PageTemplate>,
    #[serde(default)]
    pub probes: BTreeMap<String, String>,
}

impl SimSiteDefinition {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Config(e.to_string()))
    }

    pub fn probe_names(&self) -> Vec<String> {
        self.probes.keys().cloned().collect()
    }

    fn find_page(&self, path: &str) -> Option<(&PageTemplate, BTreeMap<String, String>)> {
        // Longest match: among patterns matching the path, prefer the one
        // with the most literal segments.
        let mut best: Option<(&PageTemplate, BTreeMap<String, String>, usize)> = None;
        for page in &self.pages {
            if let Some((params, literals)) = match_pattern(&page.pattern, path) {
                if best.as_ref().map(|b| literals > b.2).unwrap_or(true) {
                    best = Some((page, params, literals));
                }
            }
        }
        best.map(|(p, params, _)| (p, params))
    }
}

fn match_pattern(pattern: &str, path: &str) -> Option<(BTreeMap<String, String>, usize)> {
    let pat: Vec<&str> = pattern.split('/').filter(|s| !s.is_empty()).collect();
    let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    if pat.len() != segs.len() {
        return None;
    }
    let mut params = BTreeMap::new();
    let mut literals = 0;
    for (p, s) in pat.iter().zip(&segs) {
        if let Some(name) = p.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
            params.insert(name.to_string(), s.to_string());
        } else if p == s {
            literals += 1;
        } else {
            return None;
        }
    }
    Some((params, literals))
}

// ---------------------------------------------------------------------------
// Template rendering
// ---------------------------------------------------------------------------

struct RenderCtx<'a> {
    state: &'a SiteState,
    params: &'a BTreeMap<String, String>,
    record: Option<&'a Record>,
}

fn eval_ref(token: &str, ctx: &RenderCtx) -> String {
    if let Some(name) = token.strip_prefix("url.") {
        return ctx.params.get(name).cloned().unwrap_or_default();
    }
    if let Some(path) = token.strip_prefix("state.") {
        return ctx.state.scalars.get(path).cloned().unwrap_or_default();
    }
    if token.starts_with('\'') && token.ends_with('\'') && token.len() >= 2 {
        return token[1..token.len() - 1].to_string();
    }
    if let Some(record) = ctx.record {
        if let Some(v) = record.get(token) {
            return v.clone();
        }
    }
    token.to_string()
}

fn eval_placeholder(expr: &str, ctx: &RenderCtx) -> String {
    let tokens: Vec<&str> = expr.split_whitespace().collect();
    match tokens.as_slice() {
        [one] => {
            if let Some(name) = one.strip_prefix("url.") {
                ctx.params.get(name).cloned().unwrap_or_default()
            } else if let Some(path) = one.strip_prefix("state.") {
                ctx.state.scalars.get(path).cloned().unwrap_or_default()
            } else if let Some(record) = ctx.record {
                record.get(*one).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        }
        ["count", coll] => ctx
            .state
            .collections
            .get(*coll)
            .map(|c| c.len().to_string())
            .unwrap_or_else(|| "0".to_string()),
        ["next_id", coll] => {
            let n = ctx.state.collections.get(*coll).map(Vec::len).unwrap_or(0);
            (n + 1).to_string()
        }
        ["last", coll, field] => ctx
            .state
            .collections
            .get(*coll)
            .and_then(|c| c.last())
            .and_then(|r| r.get(*field))
            .cloned()
            .unwrap_or_default(),
        ["lookup", coll, key_field, key_ref, out_field] => {
            let key = eval_ref(key_ref, ctx);
            ctx.state
                .collections
                .get(*coll)
                .and_then(|c| c.iter().find(|r| r.get(*key_field) == Some(&key)))
                .and_then(|r| r.get(*out_field))
                .cloned()
                .unwrap_or_default()
        }
        _ => String::new(),
    }
}

fn clause_matches(record: &Record, field: &str, op: &str, value: &str) -> bool {
    let actual = record.get(field).map(String::as_str).unwrap_or("");
    match op {
        "==" => actual == value,
        "contains" => actual.contains(value),
        "icontains" => actual.to_lowercase().contains(&value.to_lowercase()),
        _ => false,
    }
}

fn render_template(template: &str, ctx: &RenderCtx) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        if after.starts_with("#each ") {
            let Some(head_end) = after.find("}}") else {
                out.push_str("{{");
                rest = after;
                continue;
            };
            let header = after[6..head_end].trim();
            let body_start = head_end + 2;
            let Some(close) = after[body_start..].find("{{/each}}") else {
                rest = &after[head_end + 2..];
                continue;
            };
            let body = &after[body_start..body_start + close];
            out.push_str(&render_each(header, body, ctx));
            rest = &after[body_start + close + "{{/each}}".len()..];
        } else if after.starts_with("#if ") {
            let Some(head_end) = after.find("}}") else {
                out.push_str("{{");
                rest = after;
                continue;
            };
            let cond_ref = after[4..head_end].trim();
            let body_start = head_end + 2;
            let Some(close) = after[body_start..].find("{{/if}}") else {
                rest = &after[head_end + 2..];
                continue;
            };
            let body = &after[body_start..body_start + close];
            let value = eval_ref(cond_ref, ctx);
            if !value.is_empty() && value != "0" {
                out.push_str(&render_template(body, ctx));
            }
            rest = &after[body_start + close + "{{/if}}".len()..];
        } else if let Some(end) = after.find("}}") {
            out.push_str(&eval_placeholder(after[..end].trim(), ctx));
            rest = &after[end + 2..];
        } else {
            out.push_str("{{");
            rest = after;
        }
    }
    out.push_str(rest);
    out
}

fn render_each(header: &str, body: &str, ctx: &RenderCtx) -> String {
    // Header: COLL  |  COLL where FIELD OP REF
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let (coll, clause) = match tokens.as_slice() {
        [coll] => (*coll, None),
        [coll, "where", field, op, value_ref] => {
            (*coll, Some((*field, *op, eval_ref(value_ref, ctx))))
        }
        _ => return String::new(),
    };
    let Some(records) = ctx.state.collections.get(coll) else {
        return String::new();
    };
    let mut out = String::new();
    for record in records {
        if let Some((field, op, value)) = &clause {
            if !clause_matches(record, field, op, value) {
                continue;
            }
        }
        let inner = RenderCtx {
            state: ctx.state,
            params: ctx.params,
            record: Some(record),
        };
        out.push_str(&render_template(body, &inner));
    }
    out
}

// ---------------------------------------------------------------------------
// Backend and sessions
// ---------------------------------------------------------------------------

/// A simulated site instance. Sessions opened from one instance share the
/// same mutable [`SiteState`] (one "server" with several tabs on it).
pub struct SimSite {
    def: Arc<SimSiteDefinition>,
    state: Rc<RefCell<SiteState>>,
}

impl SimSite {
    pub fn new(def: Arc<SimSiteDefinition>) -> Self {
        let mut state = def.state.clone();
        state
            .scalars
            .insert("auth_user".to_string(), def.auth_user.clone());
        SimSite {
            def,
            state: Rc::new(RefCell::new(state)),
        }
    }

    pub fn definition(&self) -> &SimSiteDefinition {
        &self.def
    }

    pub fn open_sim_session(&self, url: &str) -> Result<SimSession, BackendError> {
        SimSession::open(self.def.clone(), self.state.clone(), url)
    }
}

const SIM_CAPS: CapabilitySet = CapabilitySet {
    element_by_id: true,
    element_by_coords: false,
    probes: true,
    scripts: false,
};

impl SiteBackend for SimSite {
    fn capabilities(&self) -> CapabilitySet {
        SIM_CAPS
    }

    fn open_session(&self, url: &str) -> Result<Box<dyn BackendSession>, BackendError> {
        Ok(Box::new(self.open_sim_session(url)?))
    }

    fn start_url(&self) -> String {
        self.def.start_url.clone()
    }
}

pub struct SimSession {
    def: Arc<SimSiteDefinition>,
    state: Rc<RefCell<SiteState>>,
    history: Vec<String>,
    cursor: usize,
    /// Anchor of the form owning the last typed field; enter submits it.
    active_form: Option<String>,
    pub warnings: Vec<String>,
    closed: bool,
}

impl SimSession {
    fn open(
        def: Arc<SimSiteDefinition>,
        state: Rc<RefCell<SiteState>>,
        url: &str,
    ) -> Result<Self, BackendError> {
        let mut session = SimSession {
            def,
            state,
            history: Vec::new(),
            cursor: 0,
            active_form: None,
            warnings: Vec::new(),
            closed: false,
        };
        let resolved = session.resolve_url(url, None)?;
        session.history.push(resolved);
        Ok(session)
    }

    fn current_url(&self) -> &str {
        &self.history[self.cursor]
    }

    /// Validate a (possibly relative) URL against the site's closed world.
    fn resolve_url(&self, target: &str, base: Option<&str>) -> Result<String, BackendError> {
        let base_url = Url::parse(base.unwrap_or(&self.def.start_url))
            .map_err(|e| BackendError::Config(format!("bad base URL: {e}")))?;
        let resolved = base_url
            .join(target)
            .map_err(|e| BackendError::Navigation(format!("bad URL {target}: {e}")))?;
        if resolved.host_str() != base_url.host_str()
            && Url::parse(&self.def.start_url)
                .ok()
                .map(|u| u.host_str() != resolved.host_str())
                .unwrap_or(true)
        {
            return Err(BackendError::Navigation(format!(
                "page not found: {resolved}"
            )));
        }
        if self.def.find_page(resolved.path()).is_none() {
            return Err(BackendError::Navigation(format!(
                "page not found: {resolved}"
            )));
        }
        Ok(resolved.to_string())
    }

    fn page_and_params(&self) -> Result<(&PageTemplate, BTreeMap<String, String>), BackendError> {
        let url = Url::parse(self.current_url())
            .map_err(|e| BackendError::Navigation(e.to_string()))?;
        let (page, mut params) = self
            .def
            .find_page(url.path())
            .ok_or_else(|| BackendError::Navigation(format!("page not found: {url}")))?;
        for (k, v) in url.query_pairs() {
            params.entry(k.into_owned()).or_insert(v.into_owned());
        }
        Ok((page, params))
    }

    fn render(&self) -> Result<Page, BackendError> {
        let (page, params) = self.page_and_params()?;
        let state = self.state.borrow();
        let ctx = RenderCtx {
            state: &state,
            params: &params,
            record: None,
        };
        let title = render_template(&page.title, &ctx);
        let body = render_template(&page.body, &ctx);
        let html =
            format!("<html><head><title>{title}</title></head><body>{body}</body></html>");
        Ok(Page {
            html,
            url: self.current_url().to_string(),
            title,
        })
    }

    fn snapshot(&self) -> Result<DomSnapshot, BackendError> {
        let page = self.render()?;
        Ok(parse_html(&page.html, &page.url))
    }

    fn navigate(&mut self, target: &str) -> Result<(), BackendError> {
        let resolved = self.resolve_url(target, Some(self.current_url()))?;
        self.history.truncate(self.cursor + 1);
        self.history.push(resolved);
        self.cursor += 1;
        self.active_form = None;
        Ok(())
    }

    fn apply_effects(
        &mut self,
        effects: &[Effect],
        params: &BTreeMap<String, String>,
    ) -> Result<(), BackendError> {
        for effect in effects {
            match effect {
                Effect::Set { path, value } => {
                    let rendered = {
                        let state = self.state.borrow();
                        let ctx = RenderCtx {
                            state: &state,
                            params,
                            record: None,
                        };
                        render_template(value, &ctx)
                    };
                    self.state.borrow_mut().scalars.insert(path.clone(), rendered);
                }
                Effect::Append { collection, record } => {
                    let rendered: Record = {
                        let state = self.state.borrow();
                        let ctx = RenderCtx {
                            state: &state,
                            params,
                            record: None,
                        };
                        record
                            .iter()
                            .map(|(k, v)| (k.clone(), render_template(v, &ctx)))
                            .collect()
                    };
                    self.state
                        .borrow_mut()
                        .collections
                        .entry(collection.clone())
                        .or_default()
                        .push(rendered);
                }
                Effect::Navigate { url } => {
                    let rendered = {
                        let state = self.state.borrow();
                        let ctx = RenderCtx {
                            state: &state,
                            params,
                            record: None,
                        };
                        render_template(url, &ctx)
                    };
                    self.navigate(&rendered)?;
                }
            }
        }
        Ok(())
    }

    fn behavior_for(&self, anchor: &str, trigger: Trigger) -> Option<ElementBehavior> {
        let (page, _) = self.page_and_params().ok()?;
        page.behaviors
            .get(anchor)
            .filter(|b| b.trigger == trigger)
            .cloned()
    }

    /// Walk ancestors of `path` looking for the enclosing `<form>` anchor.
    fn enclosing_form_anchor(snapshot: &DomSnapshot, path: &[usize]) -> Option<String> {
        for prefix_len in (0..=path.len()).rev() {
            let node = snapshot.node_at(&path[..prefix_len])?;
            if node.tag == "form" {
                return node.attr("data-anchor").map(str::to_string);
            }
        }
        None
    }

    fn resolve_target<'a>(
        snapshot: &'a DomSnapshot,
        target: Option<&[usize]>,
    ) -> Result<&'a DomNode, BackendError> {
        let path = target.ok_or_else(|| {
            BackendError::StaleTarget("element action without a resolved target".to_string())
        })?;
        snapshot
            .node_at(path)
            .ok_or_else(|| BackendError::StaleTarget(format!("no node at path {path:?}")))
    }

    fn click(&mut self, target: Option<&[usize]>) -> Result<(), BackendError> {
        let snapshot = self.snapshot()?;
        let node = Self::resolve_target(&snapshot, target)?;
        let anchor = node.attr("data-anchor").map(str::to_string);
        let href = node.attr("href").map(str::to_string);
        let is_submit = node.tag == "button"
            || (node.tag == "input" && matches!(node.attr("type"), Some("submit")));
        let form_anchor = Self::enclosing_form_anchor(&snapshot, &node.node_path);
        let (_, params) = self.page_and_params()?;

        if let Some(anchor) = anchor.as_deref() {
            if let Some(behavior) = self.behavior_for(anchor, Trigger::Click) {
                return self.apply_effects(&behavior.effects, &params);
            }
        }
        if let Some(href) = href {
            return self.navigate(&href);
        }
        if is_submit {
            if let Some(form) = form_anchor {
                if let Some(behavior) = self.behavior_for(&form, Trigger::Submit) {
                    return self.apply_effects(&behavior.effects, &params);
                }
            }
        }
        // No behavior: focus only, nothing changes.
        Ok(())
    }

    fn hover(&mut self, target: Option<&[usize]>) -> Result<(), BackendError> {
        let snapshot = self.snapshot()?;
        let node = Self::resolve_target(&snapshot, target)?;
        let anchor = node.attr("data-anchor").map(str::to_string);
        let (_, params) = self.page_and_params()?;
        if let Some(anchor) = anchor.as_deref() {
            if let Some(behavior) = self.behavior_for(anchor, Trigger::Hover) {
                return self.apply_effects(&behavior.effects, &params);
            }
        }
        Ok(())
    }

    fn type_text(
        &mut self,
        target: Option<&[usize]>,
        text: &str,
        press_enter: bool,
    ) -> Result<(), BackendError> {
        let snapshot = self.snapshot()?;
        let node = Self::resolve_target(&snapshot, target)?;
        if node.tag != "input" && node.tag != "textarea" {
            return Err(BackendError::UnsupportedAction(format!(
                "cannot type into <{}>",
                node.tag
            )));
        }
        let field = node
            .attr("name")
            .or_else(|| node.attr("data-anchor"))
            .ok_or_else(|| {
                BackendError::UnsupportedAction("field has no name attribute".to_string())
            })?
            .to_string();
        let form_anchor = Self::enclosing_form_anchor(&snapshot, &node.node_path);
        self.state
            .borrow_mut()
            .scalars
            .insert(format!("form.{field}"), text.to_string());
        self.active_form = form_anchor.clone();
        if press_enter {
            self.submit_form(form_anchor)?;
        }
        Ok(())
    }

    fn submit_form(&mut self, form_anchor: Option<String>) -> Result<(), BackendError> {
        let Some(anchor) = form_anchor else {
            return Ok(());
        };
        let (_, params) = self.page_and_params()?;
        if let Some(behavior) = self.behavior_for(&anchor, Trigger::Submit) {
            self.apply_effects(&behavior.effects, &params)?;
        }
        Ok(())
    }

    fn press(&mut self, keys: &str) -> Result<(), BackendError> {
        if keys.eq_ignore_ascii_case("enter") {
            let form = self.active_form.clone();
            self.submit_form(form)
        } else {
            self.warnings
                .push(format!("key combination ignored: {keys}"));
            Ok(())
        }
    }
}

impl BackendSession for SimSession {
    fn capabilities(&self) -> CapabilitySet {
        SIM_CAPS
    }

    fn current_page(&mut self) -> Result<Page, BackendError> {
        if self.closed {
            return Err(BackendError::SessionClosed);
        }
        self.render()
    }

    fn perform(&mut self, action: &Action, target: Option<&[usize]>) -> Result<(), BackendError> {
        if self.closed {
            return Err(BackendError::SessionClosed);
        }
        // Coordinate addressing needs pixel hit-testing, which the simulated
        // site does not have.
        if let Action::Click { target: r } | Action::Hover { target: r } | Action::Type { target: r, .. } = action {
            if matches!(r, ElementRef::Coords { .. }) {
                return Err(BackendError::UnsupportedAction(
                    "coordinate element addressing is not supported by simsite".to_string(),
                ));
            }
        }
        match action {
            Action::Noop => Ok(()),
            Action::Scroll { direction: _ } => Ok(()),
            Action::Click { .. } => self.click(target),
            Action::Hover { .. } => self.hover(target),
            Action::Type {
                text, press_enter, ..
            } => self.type_text(target, text, *press_enter),
            Action::Press { keys } => self.press(keys),
            Action::Goto { url } => self.navigate(url),
            Action::GoBack => {
                if self.cursor == 0 {
                    return Err(BackendError::Navigation("no history".to_string()));
                }
                self.cursor -= 1;
                Ok(())
            }
            Action::GoForward => {
                if self.cursor + 1 >= self.history.len() {
                    return Err(BackendError::Navigation("no forward history".to_string()));
                }
                self.cursor += 1;
                Ok(())
            }
            other => Err(BackendError::UnsupportedAction(format!(
                "not a page-level action: {other:?}"
            ))),
        }
    }

    fn probe(&self, name: &str) -> Result<String, BackendError> {
        let template = self
            .def
            .probes
            .get(name)
            .ok_or_else(|| BackendError::UnknownProbe(name.to_string()))?;
        let state = self.state.borrow();
        let ctx = RenderCtx {
            state: &state,
            params: &BTreeMap::new(),
            record: None,
        };
        Ok(render_template(template, &ctx))
    }

    fn snapshot_state(&self) -> Result<serde_json::Value, BackendError> {
        serde_json::to_value(&*self.state.borrow())
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn restore_state(&mut self, snapshot: &serde_json::Value) -> Result<(), BackendError> {
        let state: SiteState = serde_json::from_value(snapshot.clone())
            .map_err(|e| BackendError::Config(e.to_string()))?;
        *self.state.borrow_mut() = state;
        Ok(())
    }

    fn close(&mut self) -> Result<(), BackendError> {
        self.closed = true;
        Ok(())
    }
}

//! Task configuration: intent templates with variable instantiation, task
//! instances carrying eval specs, and loading/validation of the packaged
//! fixture suite (tasks/*.task.json, schema "arena-kit/1").

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::SimSiteDefinition;
use crate::evalkit::{CheckKind, EvalSpec, LocatorKind};

pub const TASK_SCHEMA: &str = "arena-kit/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    InfoSeeking,
    SiteNavigation,
    ContentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instantiation {
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    pub start_url: String,
    pub eval: EvalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_actions: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentTemplate {
    pub schema: String,
    pub template_id: String,
    pub intent_template: String,
    pub sites: Vec<String>,
    pub category: Category,
    pub instantiations: Vec<Instantiation>,
}

/// A fully instantiated task: concrete intent, start page, and eval spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub template_id: String,
    pub intent: String,
    pub site: String,
    pub category: Category,
    pub start_url: String,
    pub eval: EvalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_actions: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("template {template_id}: unbound variable {{{{{var}}}}}")]
    UnboundVariable { template_id: String, var: String },
    #[error("{file}: field {field}: {message}")]
    SchemaError {
        file: String,
        field: String,
        message: String,
    },
    #[error("duplicate template_id {0}")]
    DuplicateId(String),
    #[error("io error reading {0}: {1}")]
    Io(String, std::io::Error),
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                out.push(after[..close].trim().to_string());
                rest = &after[close + 2..];
            }
            None => break,
        }
    }
    out
}

/// Instantiate one binding of a template. Returns the task plus warnings
/// (bindings for variables the template does not mention).
pub fn instantiate(
    template: &IntentTemplate,
    index: usize,
) -> Result<(TaskInstance, Vec<String>), TaskError> {
    let inst = &template.instantiations[index];
    let vars = placeholders(&template.intent_template);
    let mut intent = template.intent_template.clone();
    for var in &vars {
        match inst.bindings.get(var) {
            Some(value) => intent = intent.replace(&format!("{{{{{var}}}}}"), value),
            None => {
                return Err(TaskError::UnboundVariable {
                    template_id: template.template_id.clone(),
                    var: var.clone(),
                })
            }
        }
    }
    let mut warnings = Vec::new();
    for key in inst.bindings.keys() {
        if !vars.contains(key) {
            warnings.push(format!(
                "template {}: binding {key:?} has no matching placeholder",
                template.template_id
            ));
        }
    }
    let task = TaskInstance {
        task_id: format!("{}.{}", template.template_id, index),
        template_id: template.template_id.clone(),
        intent,
        site: template.sites.first().cloned().unwrap_or_default(),
        category: template.category,
        start_url: inst.start_url.clone(),
        eval: inst.eval.clone(),
        gold_actions: inst.gold_actions.clone(),
    };
    Ok((task, warnings))
}

fn parse_template(path: &Path) -> Result<IntentTemplate, TaskError> {
    let file = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| TaskError::Io(file.clone(), e))?;
    let template: IntentTemplate =
        serde_json::from_str(&text).map_err(|e| TaskError::SchemaError {
            file: file.clone(),
            field: "<document>".to_string(),
            message: e.to_string(),
        })?;
    if template.schema != TASK_SCHEMA {
        return Err(TaskError::SchemaError {
            file,
            field: "schema".to_string(),
            message: format!("expected {TASK_SCHEMA:?}, got {:?}", template.schema),
        });
    }
    if template.sites.is_empty() {
        return Err(TaskError::SchemaError {
            file,
            field: "sites".to_string(),
            message: "must list at least one site".to_string(),
        });
    }
    Ok(template)
}

/// Load a task file or a directory of `*.task.json` files, instantiate all
/// bindings, and return tasks in stable task_id order.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path)
            .map_err(|e| TaskError::Io(path.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| TaskError::Io(path.display().to_string(), e))?;
            let p = entry.path();
            if p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".task.json"))
            {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for file in &files {
        let template = parse_template(file)?;
        if !seen.insert(template.template_id.clone()) {
            return Err(TaskError::DuplicateId(template.template_id));
        }
        for index in 0..template.instantiations.len() {
            let (task, _warnings) = instantiate(&template, index)?;
            task.eval.validate().map_err(|e| TaskError::SchemaError {
                file: file.display().to_string(),
                field: format!("instantiations[{index}].eval"),
                message: e.to_string(),
            })?;
            if task.intent.contains("{{") {
                return Err(TaskError::SchemaError {
                    file: file.display().to_string(),
                    field: "intent_template".to_string(),
                    message: "residual placeholder after instantiation".to_string(),
                });
            }
            tasks.push(task);
        }
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(tasks)
}

/// Cross-check tasks against site definitions: site ids must exist, probe
/// locators must name a defined probe.
pub fn validate_tasks(
    tasks: &[TaskInstance],
    sites: &BTreeMap<String, std::sync::Arc<SimSiteDefinition>>,
) -> Result<(), TaskError> {
    for task in tasks {
        let Some(site) = sites.get(&task.site) else {
            return Err(TaskError::SchemaError {
                file: task.task_id.clone(),
                field: "sites".to_string(),
                message: format!("unknown site {:?}", task.site),
            });
        };
        for check in &task.eval.checks {
            if check.kind == CheckKind::Program {
                if let Some(loc) = &check.locator {
                    if loc.kind == LocatorKind::Probe && !site.probe_names().contains(&loc.arg) {
                        return Err(TaskError::SchemaError {
                            file: task.task_id.clone(),
                            field: "locator".to_string(),
                            message: format!("unknown probe {:?}", loc.arg),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(intent: &str, bindings: &[(&str, &str)]) -> IntentTemplate {
        serde_json::from_value(serde_json::json!({
            "schema": "arena-kit/1",
            "template_id": "t",
            "intent_template": intent,
            "sites": ["tiny"],
            "category": "info_seeking",
            "instantiations": [{
                "bindings": bindings.iter().map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect::<BTreeMap<_, _>>(),
                "start_url": "http://tiny.sim/",
                "eval": {"checks": [{"kind": "answer_exact", "references": ["x"]}]}
            }]
        }))
        .unwrap()
    }

    #[test]
    fn textual_substitution() {
        let t = template(
            "create a {{site1}} account identical to my {{site2}} one",
            &[("site1", "Reddit"), ("site2", "GitLab")],
        );
        let (task, warnings) = instantiate(&t, 0).unwrap();
        assert_eq!(task.intent, "create a Reddit account identical to my GitLab one");
        assert_eq!(task.task_id, "t.0");
        assert!(warnings.is_empty());
    }

    #[test]
    fn unbound_variable_errors() {
        let t = template("find {{x}}", &[]);
        assert!(matches!(
            instantiate(&t, 0),
            Err(TaskError::UnboundVariable { .. })
        ));
    }

    #[test]
    fn no_placeholders_passes_through() {
        let t = template("find the price", &[]);
        let (task, _) = instantiate(&t, 0).unwrap();
        assert_eq!(task.intent, "find the price");
    }

    #[test]
    fn extra_binding_warns() {
        let t = template("find the price", &[("unused", "v")]);
        let (_, warnings) = instantiate(&t, 0).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn substitution_is_purely_textual() {
        let t = template("a {{x}} b", &[("x", "1234")]);
        let (task, _) = instantiate(&t, 0).unwrap();
        // len = template - placeholder + substitution
        assert_eq!(task.intent.len(), "a {{x}} b".len() - "{{x}}".len() + 4);
    }

    #[test]
    fn load_rejects_duplicates_and_bad_schema() {
        let dir = tempfile::tempdir().unwrap();
        let doc = serde_json::to_string(&template("find it", &[])).unwrap();
        std::fs::write(dir.path().join("a.task.json"), &doc).unwrap();
        std::fs::write(dir.path().join("b.task.json"), &doc).unwrap();
        assert!(matches!(
            load_tasks(dir.path()),
            Err(TaskError::DuplicateId(_))
        ));

        let dir2 = tempfile::tempdir().unwrap();
        let bad = doc.replace("arena-kit/1", "arena-kit/9");
        std::fs::write(dir2.path().join("a.task.json"), bad).unwrap();
        assert!(matches!(
            load_tasks(dir2.path()),
            Err(TaskError::SchemaError { ref field, .. }) if field == "schema"
        ));
    }

    #[test]
    fn validate_rejects_unknown_probe() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = template("post it", &[]);
        t.instantiations[0].eval = serde_json::from_value(serde_json::json!({
            "checks": [{"kind": "program", "references": ["/f/nyc"],
                        "locator": {"kind": "probe", "arg": "nonexistent_probe"}}]
        }))
        .unwrap();
        std::fs::write(
            dir.path().join("a.task.json"),
            serde_json::to_string(&t).unwrap(),
        )
        .unwrap();
        let tasks = load_tasks(dir.path()).unwrap();

        let site: SimSiteDefinition = serde_json::from_value(serde_json::json!({
            "site_id": "tiny",
            "start_url": "http://tiny.sim/",
            "state": {"scalars": {}, "collections": {}},
            "pages": [{"pattern": "/", "title": "Tiny", "body": "<p>hi</p>"}],
            "probes": {}
        }))
        .unwrap();
        let mut sites = BTreeMap::new();
        sites.insert("tiny".to_string(), std::sync::Arc::new(site));
        let err = validate_tasks(&tasks, &sites).unwrap_err();
        assert!(err.to_string().contains("nonexistent_probe"));
    }
}

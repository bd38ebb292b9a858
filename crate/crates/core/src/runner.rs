//! Batch execution: drives (env, agent) pairs over a task suite with a
//! bounded work queue, persists trajectories and final-state snapshots,
//! scores them, and renders SR / SR_AC / SR_UA reports.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::serialize;
use crate::agent::{should_halt, Agent, Decision, HaltPolicy, HaltReason, HistoryEntry, PromptConfig};
use crate::backend::{BackendError, SiteBackend};
use crate::env::{Env, Trace};
use crate::evalkit::{evaluate, RewardReport};
use crate::llm::{JudgeClient, LLMClient, SamplingParams, ScriptedClient};
use crate::observation::Viewport;
use crate::taskcfg::TaskInstance;

/// Builds one backend instance per task. Backends need not be Send; each is
/// constructed and used inside a single worker thread.
pub type BackendFactory<'a> =
    &'a (dyn Fn(&TaskInstance) -> Result<Box<dyn SiteBackend>, BackendError> + Sync);

/// How the runner obtains a model client for each task.
pub enum ClientSpec {
    /// Chat-completions endpoint.
    Http { url: String, model: String },
    /// Same completion every step.
    Constant(String),
    /// Replay the task's gold_actions, each wrapped in a fenced block.
    Oracle,
    /// Fixed reply sequence, restarted per task.
    Scripted(Vec<String>),
}

impl ClientSpec {
    fn build(&self, task: &TaskInstance) -> Box<dyn LLMClient> {
        match self {
            ClientSpec::Http { url, model } => {
                Box::new(crate::llm::HttpChatClient::new(url, model))
            }
            ClientSpec::Constant(reply) => Box::new(crate::llm::ConstantClient(reply.clone())),
            ClientSpec::Oracle => {
                let replies: Vec<String> = task
                    .gold_actions
                    .clone()
                    .unwrap_or_default()
                    .iter()
                    .map(|a| format!("```{a}```"))
                    .collect();
                if replies.is_empty() {
                    // No gold actions: emit prose so the episode halts invalid.
                    Box::new(crate::llm::ConstantClient("no gold actions".to_string()))
                } else {
                    Box::new(ScriptedClient::new(
                        replies
                            .into_iter()
                            .map(crate::llm::ScriptEntry::Reply)
                            .collect(),
                    ))
                }
            }
            ClientSpec::Scripted(replies) => Box::new(ScriptedClient::new(
                replies
                    .iter()
                    .cloned()
                    .map(crate::llm::ScriptEntry::Reply)
                    .collect(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Task id patterns; `*` matches any suffix. Empty = all tasks.
    pub task_filter: Vec<String>,
    pub prompt: PromptConfig,
    pub params: SamplingParams,
    pub policy: HaltPolicy,
    pub viewport: Viewport,
    pub out_dir: Option<PathBuf>,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            task_filter: Vec::new(),
            prompt: PromptConfig::default(),
            params: SamplingParams::default(),
            policy: HaltPolicy::default(),
            viewport: Viewport::default(),
            out_dir: None,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation_text: String,
    pub url: String,
    pub raw_action: String,
    pub parsed_action: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub intent: String,
    pub steps: Vec<StepRecord>,
    pub stop_answer: Option<String>,
    pub final_url: String,
    pub halt_reason: HaltReason,
    pub reward_report: RewardReport,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_tasks: usize,
    pub n_achievable: usize,
    pub n_unachievable: usize,
    /// Percentages in [0, 100]; None when the denominator is zero.
    pub sr: Option<f64>,
    pub sr_ac: Option<f64>,
    pub sr_ua: Option<f64>,
    /// Success fraction in [0, 1] per template / category.
    pub per_template: BTreeMap<String, f64>,
    pub per_category: BTreeMap<String, f64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("io error on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("missing final-state snapshot for task {0}")]
    MissingSnapshot(String),
    #[error("bad trajectory record {0}: {1}")]
    BadRecord(String, String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
}

fn matches_filter(filter: &[String], task_id: &str) -> bool {
    if filter.is_empty() {
        return true;
    }
    filter.iter().any(|pat| match pat.strip_suffix('*') {
        Some(prefix) => task_id.starts_with(prefix),
        None => task_id == pat,
    })
}

/// Run one episode to completion and score it. Also returns the final
/// site-state snapshot when the backend supports one.
fn run_one(
    task: &TaskInstance,
    config: &RunConfig,
    backend_factory: BackendFactory,
    client_spec: &ClientSpec,
    judge: &dyn JudgeClient,
) -> Result<(TrajectoryRecord, Option<serde_json::Value>), RunError> {
    let started = Instant::now();
    let backend = backend_factory(task)?;
    let mut env = Env::reset(backend, &task.start_url, config.viewport)?;
    let client = client_spec.build(task);
    let agent = Agent {
        client: client.as_ref(),
        config: config.prompt,
        params: config.params,
        policy: config.policy,
    };

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut prev_raw: Option<String> = None;
    let halt_reason = loop {
        if let Some(reason) = should_halt(&config.policy, &history) {
            break reason;
        }
        let obs = env.observation().clone();
        match agent.decide(&task.intent, &obs, prev_raw.as_deref()) {
            Ok(Decision::Act { action, raw }) => {
                let canonical = serialize(&action);
                let result = env.step(action, &raw);
                history.push(HistoryEntry {
                    obs_text: obs.text,
                    raw_action: raw,
                    was_invalid: result.observation.error.is_some(),
                });
                prev_raw = Some(canonical);
                if result.terminated {
                    break HaltReason::Stop;
                }
            }
            Ok(Decision::Invalid { raw, reason }) => {
                env.step_invalid(&raw, &reason);
                history.push(HistoryEntry {
                    obs_text: obs.text,
                    raw_action: raw.clone(),
                    was_invalid: true,
                });
                prev_raw = Some(raw);
            }
            Err(e) => {
                let reason = e.to_string();
                env.step_invalid("<no completion>", &reason);
                history.push(HistoryEntry {
                    obs_text: obs.text,
                    raw_action: "<no completion>".to_string(),
                    was_invalid: true,
                });
            }
        }
    };

    let trace = env.trace().clone();
    let snapshot = env.focused_session_mut().snapshot_state().ok();
    let reward_report = evaluate(task, &trace, env.focused_session_mut(), judge);
    let steps = trace
        .steps
        .iter()
        .map(|s| StepRecord {
            observation_text: s.observation.text.clone(),
            url: s.observation.url.clone(),
            raw_action: s.raw_action.clone(),
            parsed_action: s.parsed_action.clone(),
            error: s.error.clone(),
        })
        .collect();
    Ok((
        TrajectoryRecord {
            task_id: task.task_id.clone(),
            intent: task.intent.clone(),
            steps,
            stop_answer: trace.stop_answer.clone(),
            final_url: trace.final_url.clone(),
            halt_reason,
            reward_report,
            wall_time: started.elapsed().as_secs_f64(),
        },
        snapshot,
    ))
}

fn persist(
    out_dir: &Path,
    record: &TrajectoryRecord,
    snapshot: &Option<serde_json::Value>,
) -> Result<(), RunError> {
    let dir = out_dir.join("trajectories");
    std::fs::create_dir_all(&dir).map_err(|e| RunError::Io(dir.display().to_string(), e))?;
    let path = dir.join(format!("{}.jsonl", record.task_id));
    let line = serde_json::to_string(record).expect("trajectory serializes");
    std::fs::write(&path, line + "\n").map_err(|e| RunError::Io(path.display().to_string(), e))?;
    if let Some(state) = snapshot {
        let spath = dir.join(format!("{}.state.json", record.task_id));
        std::fs::write(&spath, serde_json::to_string_pretty(state).unwrap())
            .map_err(|e| RunError::Io(spath.display().to_string(), e))?;
    }
    Ok(())
}

fn aggregate(results: &BTreeMap<String, (TaskInstance, TrajectoryRecord)>) -> Report {
    let mut n_ac = 0usize;
    let mut n_ua = 0usize;
    let mut ok_ac = 0usize;
    let mut ok_ua = 0usize;
    let mut template_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut category_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (task, record) in results.values() {
        let success = record.reward_report.score == 1;
        if task.eval.unachievable {
            n_ua += 1;
            ok_ua += usize::from(success);
        } else {
            n_ac += 1;
            ok_ac += usize::from(success);
        }
        let t = template_hits.entry(task.template_id.clone()).or_default();
        t.0 += usize::from(success);
        t.1 += 1;
        let category = serde_json::to_value(task.category)
            .unwrap()
            .as_str()
            .unwrap()
            .to_string();
        let c = category_hits.entry(category).or_default();
        c.0 += usize::from(success);
        c.1 += 1;
    }
    let pct = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64 * 100.0);
    Report {
        n_tasks: n_ac + n_ua,
        n_achievable: n_ac,
        n_unachievable: n_ua,
        sr: pct(ok_ac + ok_ua, n_ac + n_ua),
        sr_ac: pct(ok_ac, n_ac),
        sr_ua: pct(ok_ua, n_ua),
        per_template: template_hits
            .into_iter()
            .map(|(k, (ok, n))| (k, ok as f64 / n as f64))
            .collect(),
        per_category: category_hits
            .into_iter()
            .map(|(k, (ok, n))| (k, ok as f64 / n as f64))
            .collect(),
    }
}

/// Run the selected tasks with at most `parallelism` concurrent episodes.
/// Per-task failures are recorded (score 0, halt_reason invalid); the run
/// never aborts on one task.
pub fn run(
    tasks: &[TaskInstance],
    config: &RunConfig,
    backend_factory: BackendFactory,
    client_spec: &ClientSpec,
    judge: &dyn JudgeClient,
) -> Result<Report, RunError> {
    let selected: Vec<&TaskInstance> = tasks
        .iter()
        .filter(|t| matches_filter(&config.task_filter, &t.task_id))
        .collect();
    let queue: Mutex<VecDeque<&TaskInstance>> = Mutex::new(selected.iter().copied().collect());
    let results: Mutex<BTreeMap<String, (TaskInstance, TrajectoryRecord)>> =
        Mutex::new(BTreeMap::new());
    let failures: Mutex<Vec<RunError>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..config.parallelism.max(1) {
            scope.spawn(|| loop {
                let task = { queue.lock().unwrap().pop_front() };
                let Some(task) = task else { break };
                match run_one(task, config, backend_factory, client_spec, judge) {
                    Ok((record, snapshot)) => {
                        if let Some(out) = &config.out_dir {
                            if let Err(e) = persist(out, &record, &snapshot) {
                                failures.lock().unwrap().push(e);
                            }
                        }
                        results
                            .lock()
                            .unwrap()
                            .insert(task.task_id.clone(), (task.clone(), record));
                    }
                    Err(e) => {
                        // Record a zero-score placeholder so aggregation
                        // still counts the task.
                        let record = TrajectoryRecord {
                            task_id: task.task_id.clone(),
                            intent: task.intent.clone(),
                            steps: Vec::new(),
                            stop_answer: None,
                            final_url: task.start_url.clone(),
                            halt_reason: HaltReason::Invalid,
                            reward_report: RewardReport {
                                score: 0,
                                per_check: Vec::new(),
                                judge_transcripts: vec![e.to_string()],
                            },
                            wall_time: 0.0,
                        };
                        results
                            .lock()
                            .unwrap()
                            .insert(task.task_id.clone(), (task.clone(), record));
                    }
                }
            });
        }
    });

    let results = results.into_inner().unwrap();
    Ok(aggregate(&results))
}

/// Re-score persisted trajectories against restored final state without
/// re-running any episode.
pub fn score_trajectories(
    dir: &Path,
    tasks: &[TaskInstance],
    backend_factory: BackendFactory,
    judge: &dyn JudgeClient,
) -> Result<Report, RunError> {
    let mut results: BTreeMap<String, (TaskInstance, TrajectoryRecord)> = BTreeMap::new();
    for task in tasks {
        let traj_path = dir.join("trajectories").join(format!("{}.jsonl", task.task_id));
        if !traj_path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&traj_path)
            .map_err(|e| RunError::Io(traj_path.display().to_string(), e))?;
        let line = text.lines().next().unwrap_or_default();
        let mut record: TrajectoryRecord = serde_json::from_str(line)
            .map_err(|e| RunError::BadRecord(task.task_id.clone(), e.to_string()))?;

        let state_path = dir.join("trajectories").join(format!("{}.state.json", task.task_id));
        if !state_path.exists() {
            return Err(RunError::MissingSnapshot(task.task_id.clone()));
        }
        let state: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(&state_path)
                .map_err(|e| RunError::Io(state_path.display().to_string(), e))?,
        )
        .map_err(|e| RunError::BadRecord(task.task_id.clone(), e.to_string()))?;

        let backend = backend_factory(task)?;
        let mut session = backend.open_session(&record.final_url)?;
        session.restore_state(&state)?;
        let trace = Trace {
            steps: Vec::new(),
            stop_answer: record.stop_answer.clone(),
            final_url: record.final_url.clone(),
            snapshots: Vec::new(),
        };
        record.reward_report = evaluate(task, &trace, session.as_mut(), judge);
        results.insert(task.task_id.clone(), (task.clone(), record));
    }
    Ok(aggregate(&results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn report_render(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Text => {
            let line = |label: &str, value: Option<f64>, n: usize| match value {
                Some(v) => format!("{label}: {v:.2}% ({n} tasks)"),
                None => format!("{label}: n/a (0 tasks)"),
            };
            let mut out = String::new();
            out.push_str(&line("SR", report.sr, report.n_tasks));
            out.push('\n');
            out.push_str(&line("SR_AC", report.sr_ac, report.n_achievable));
            out.push('\n');
            out.push_str(&line("SR_UA", report.sr_ua, report.n_unachievable));
            out.push('\n');
            let mut buckets = [0usize; 4];
            for fraction in report.per_template.values() {
                let pct = fraction * 100.0;
                let idx = if pct < 25.0 {
                    0
                } else if pct < 50.0 {
                    1
                } else if pct < 75.0 {
                    2
                } else {
                    3
                };
                buckets[idx] += 1;
            }
            out.push_str("Per-template success histogram:\n");
            for (label, count) in ["0–25%", "25–50%", "50–75%", "75–100%"].iter().zip(buckets) {
                out.push_str(&format!("  {label}: {count}\n"));
            }
            out.push_str("Per-category success:\n");
            for (category, fraction) in &report.per_category {
                out.push_str(&format!("  {category}: {:.2}%\n", fraction * 100.0));
            }
            out
        }
    }
}

//! arena-kit command-line interface: batch runs, rescoring, report
//! rendering, task validation, and observation previews.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use arena_kit::runner::{report_render, ClientSpec, ReportFormat, RunConfig};
use arena_kit::{
    BackendError, Env, HaltPolicy, Mode, PromptConfig, SamplingParams, SimSite, SimSiteDefinition,
    SiteBackend, StubJudge, TaskInstance, Viewport, WebDriverBackend,
};

#[derive(Parser)]
#[command(name = "arena-kit", version, about = "Web-agent environment and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cot,
    Direct,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Cot => Mode::Cot,
            ModeArg::Direct => Mode::Direct,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Simsite,
    Webdriver,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Stub,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientKind {
    Http,
    Oracle,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Args)]
struct SuiteArgs {
    /// Task file or directory of *.task.json files.
    #[arg(long, default_value = "tasks")]
    tasks: PathBuf,
    /// Directory of *.site.json definitions.
    #[arg(long, default_value = "sites")]
    sites: PathBuf,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "simsite")]
    backend: BackendKind,
    /// WebDriver endpoint (webdriver backend only).
    #[arg(long, default_value = "http://127.0.0.1:4444")]
    webdriver_url: String,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long, value_enum, default_value = "stub")]
    judge: JudgeKind,
    /// Chat-completions endpoint for --judge http.
    #[arg(long)]
    judge_url: Option<String>,
    #[arg(long, default_value = "gpt-4")]
    judge_model: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run an agent over the task suite and write trajectories + report.
    Run {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        judge: JudgeArgs,
        #[arg(long, value_enum, default_value = "cot")]
        mode: ModeArg,
        /// Include the system-prompt hint that unachievable tasks should be
        /// answered "N/A".
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        ua_hint: bool,
        #[arg(long, value_enum, default_value = "http")]
        client: ClientKind,
        /// Chat-completions endpoint for --client http.
        #[arg(long)]
        model_url: Option<String>,
        #[arg(long, default_value = "gpt-4")]
        model: String,
        /// Fixed completion for --client constant.
        #[arg(long, default_value = "```stop [N/A]```")]
        constant_reply: String,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 30)]
        max_steps: usize,
        #[arg(long, default_value_t = 0)]
        parse_retries: usize,
        /// Viewport size in accessibility nodes (0 = unbounded).
        #[arg(long, default_value_t = 0)]
        viewport: usize,
        /// Task id patterns to run (`prefix*` or exact id). Empty = all.
        #[arg(long)]
        filter: Vec<String>,
    },
    /// Re-score a persisted run directory without re-running episodes.
    Score {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        judge: JudgeArgs,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Render the report saved by a previous run.
    Report {
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Task suite utilities.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
    /// Observation utilities.
    Obs {
        #[command(subcommand)]
        command: ObsCommand,
    },
}

#[derive(Subcommand)]
enum TasksCommand {
    /// Check schema, instantiation, and site/probe references.
    Validate {
        #[command(flatten)]
        suite: SuiteArgs,
    },
}

#[derive(Subcommand)]
enum ObsCommand {
    /// Render the initial observation of a task.
    Preview {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        task_id: Option<String>,
        /// Preview an arbitrary URL instead of a task start page.
        #[arg(long)]
        url: Option<String>,
        /// Site id owning --url.
        #[arg(long)]
        site: Option<String>,
    },
}

fn load_sites(dir: &Path) -> Result<BTreeMap<String, Arc<SimSiteDefinition>>> {
    let mut sites = BTreeMap::new();
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading site dir {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".site.json"))
        })
        .collect();
    paths.sort();
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let def = SimSiteDefinition::from_json(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        sites.insert(def.site_id.clone(), Arc::new(def));
    }
    if sites.is_empty() {
        bail!("no *.site.json files in {}", dir.display());
    }
    Ok(sites)
}

type SiteMap = BTreeMap<String, Arc<SimSiteDefinition>>;

fn load_suite(suite: &SuiteArgs) -> Result<(Vec<TaskInstance>, SiteMap)> {
    let sites = load_sites(&suite.sites)?;
    let tasks = arena_kit::load_tasks(&suite.tasks)?;
    arena_kit::validate_tasks(&tasks, &sites)?;
    Ok((tasks, sites))
}

fn build_judge(args: &JudgeArgs) -> Result<Box<dyn arena_kit::JudgeClient>> {
    Ok(match args.judge {
        JudgeKind::Stub => Box::new(StubJudge::new()),
        JudgeKind::Http => {
            let url = args
                .judge_url
                .clone()
                .context("--judge http requires --judge-url")?;
            Box::new(arena_kit::HttpChatClient::new(&url, &args.judge_model))
        }
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            suite,
            backend,
            judge,
            mode,
            ua_hint,
            client,
            model_url,
            model,
            constant_reply,
            out,
            parallel,
            temperature,
            top_p,
            max_steps,
            parse_retries,
            viewport,
            filter,
        } => {
            let (tasks, sites) = load_suite(&suite)?;
            let judge = build_judge(&judge)?;
            let client_spec = match client {
                ClientKind::Http => ClientSpec::Http {
                    url: model_url.context("--client http requires --model-url")?,
                    model,
                },
                ClientKind::Oracle => ClientSpec::Oracle,
                ClientKind::Constant => ClientSpec::Constant(constant_reply),
            };
            let config = RunConfig {
                task_filter: filter,
                prompt: PromptConfig { mode: mode.into(), ua_hint },
                params: SamplingParams {
                    temperature,
                    top_p,
                    ..SamplingParams::default()
                },
                policy: HaltPolicy {
                    max_steps,
                    parse_retries,
                    ..HaltPolicy::default()
                },
                viewport: Viewport {
                    offset: 0,
                    limit: (viewport > 0).then_some(viewport),
                },
                out_dir: Some(out.clone()),
                parallelism: parallel.max(1),
            };
            let webdriver_url = backend.webdriver_url.clone();
            let factory = move |task: &TaskInstance| -> Result<Box<dyn SiteBackend>, BackendError> {
                match backend.backend {
                    BackendKind::Simsite => {
                        let def = sites.get(&task.site).ok_or_else(|| {
                            BackendError::Config(format!("unknown site {:?}", task.site))
                        })?;
                        Ok(Box::new(SimSite::new(def.clone())))
                    }
                    BackendKind::Webdriver => Ok(Box::new(WebDriverBackend::new(
                        &webdriver_url,
                        &task.start_url,
                    ))),
                }
            };
            let report = arena_kit::run(&tasks, &config, &factory, &client_spec, judge.as_ref())?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("report.json"),
                report_render(&report, ReportFormat::Json),
            )?;
            println!("{}", report_render(&report, ReportFormat::Text));
        }
        Command::Score {
            suite,
            judge,
            out,
            format,
        } => {
            let (tasks, sites) = load_suite(&suite)?;
            let judge = build_judge(&judge)?;
            let factory = move |task: &TaskInstance| -> Result<Box<dyn SiteBackend>, BackendError> {
                let def = sites.get(&task.site).ok_or_else(|| {
                    BackendError::Config(format!("unknown site {:?}", task.site))
                })?;
                Ok(Box::new(SimSite::new(def.clone())))
            };
            let report =
                arena_kit::score_trajectories(&out, &tasks, &factory, judge.as_ref())?;
            let format = match format {
                OutputFormat::Text => ReportFormat::Text,
                OutputFormat::Json => ReportFormat::Json,
            };
            println!("{}", report_render(&report, format));
        }
        Command::Report { out, format } => {
            let path = out.join("report.json");
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            match format {
                OutputFormat::Json => println!("{text}"),
                OutputFormat::Text => {
                    let report: arena_kit::Report = serde_json::from_str(&text)?;
                    println!("{}", report_render(&report, ReportFormat::Text));
                }
            }
        }
        Command::Tasks {
            command: TasksCommand::Validate { suite },
        } => {
            let (tasks, _) = load_suite(&suite)?;
            let unachievable = tasks.iter().filter(|t| t.eval.unachievable).count();
            println!(
                "{} tasks OK ({} achievable, {} unachievable)",
                tasks.len(),
                tasks.len() - unachievable,
                unachievable
            );
        }
        Command::Obs {
            command:
                ObsCommand::Preview {
                    suite,
                    task_id,
                    url,
                    site,
                },
        } => {
            let sites = load_sites(&suite.sites)?;
            let (site_id, start_url) = match (&task_id, &url) {
                (Some(id), None) => {
                    let tasks = arena_kit::load_tasks(&suite.tasks)?;
                    let task = tasks
                        .iter()
                        .find(|t| &t.task_id == id)
                        .with_context(|| format!("no task {id}"))?;
                    (task.site.clone(), task.start_url.clone())
                }
                (None, Some(url)) => (
                    site.clone().context("--url requires --site")?,
                    url.clone(),
                ),
                _ => bail!("pass exactly one of --task-id or --url"),
            };
            let def = sites
                .get(&site_id)
                .with_context(|| format!("unknown site {site_id}"))?;
            let backend: Box<dyn SiteBackend> = Box::new(SimSite::new(def.clone()));
            let env = Env::reset(backend, &start_url, Viewport::default())?;
            println!("{}", env.observation().text);
        }
    }
    Ok(())
}

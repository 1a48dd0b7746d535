//! Batch driver. It escalates `m` per app and writes one report per app.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use log::{info, warn};
use thiserror::Error;

use crate::app_ir::{load_app, AppModel, ComponentDef, ComponentType};
use crate::cfg::{build_cfg, remove_back_edges};
use crate::detectors_report::{
    dedup_warnings, render_report, Format, Report, SequenceDescriptor, Stats,
};
use crate::lifecycle_model::{load_model, LifecycleModel, ModelError};
use crate::sequence_gen::{build_plan, CallbackSequence};
use crate::taint_engine::{
    ComponentOutcome, ConfigError, DetectMode, EngineError, TaintConfig, TaintEngine,
};

pub const BUNDLED_ACTIVITY_MODEL: &str = include_str!("../../../models/activity.json");
pub const BUNDLED_SERVICE_MODEL: &str = include_str!("../../../models/service.json");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Argument(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The life-cycle models of the supported component kinds.
#[derive(Debug, Clone)]
pub struct Models {
    pub activity: LifecycleModel,
    pub service: LifecycleModel,
}

impl Models {
    pub fn bundled() -> Self {
        Models {
            activity: LifecycleModel::from_json(BUNDLED_ACTIVITY_MODEL)
                .expect("bundled activity model"),
            service: LifecycleModel::from_json(BUNDLED_SERVICE_MODEL)
                .expect("bundled service model"),
        }
    }

    /// Reads `activity.json` and `service.json` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ModelError> {
        let dir = dir.as_ref();
        Ok(Models {
            activity: load_model(dir.join("activity.json"))?,
            service: load_model(dir.join("service.json"))?,
        })
    }

    pub fn for_kind(&self, kind: ComponentType) -> Option<&LifecycleModel> {
        match kind {
            ComponentType::Activity => Some(&self.activity),
            ComponentType::Service => Some(&self.service),
            ComponentType::Receiver | ComponentType::Entry => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub m_max: usize,
    pub budget: Duration,
    pub detect: DetectMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            m_max: 2,
            budget: Duration::from_secs(600),
            detect: DetectMode::default(),
        }
    }
}

/// The single callback sequence of a component without a life-cycle model:
/// `onReceive` for receivers, the miscellaneous callbacks in order for plain
/// programs.
pub fn fixed_sequence(app: &AppModel, component: &ComponentDef) -> CallbackSequence {
    let class = app.component_class(component);
    let mut callbacks: Vec<String> = match component.kind {
        ComponentType::Receiver => class
            .method_named("onReceive")
            .map(|m| m.sig.clone())
            .into_iter()
            .collect(),
        _ => Vec::new(),
    };
    callbacks.extend(component.misc_callbacks.iter().cloned());
    CallbackSequence { callbacks }
}

/// Analyses every component of `app` at permutation width `m`. Components
/// without a life-cycle model only run at `m = 1`; components with fewer
/// than `m` units are skipped.
pub fn analyze_at_m(
    app: &AppModel,
    models: &Models,
    config: &TaintConfig,
    detect: DetectMode,
    m: usize,
    deadline: Option<Instant>,
) -> Result<ComponentOutcome, EngineError> {
    let mut engine = TaintEngine::new(app, config, detect);
    engine.set_deadline(deadline);
    let mut total = ComponentOutcome::default();
    for component in &app.components {
        let outcome = match models.for_kind(component.kind) {
            Some(model) => {
                let plan = build_plan(model, app, component, 1)?;
                if m > plan.units.len() {
                    continue;
                }
                let plan = crate::sequence_gen::PermutationPlan { m, ..plan };
                engine.analyze_component(component, &plan)?
            }
            None if m == 1 => {
                let seq = fixed_sequence(app, component);
                let descriptor = SequenceDescriptor {
                    m: 1,
                    units: vec![0],
                    callbacks: Vec::new(),
                };
                match engine.analyze_sequence(component, &seq, descriptor) {
                    Ok(warnings) => ComponentOutcome {
                        warnings,
                        sequences_analyzed: 1,
                        killed: false,
                    },
                    Err(EngineError::Killed) => ComponentOutcome {
                        warnings: engine.take_warnings(),
                        sequences_analyzed: 0,
                        killed: true,
                    },
                    Err(e) => return Err(e),
                }
            }
            None => continue,
        };
        total.warnings.extend(outcome.warnings);
        total.sequences_analyzed += outcome.sequences_analyzed;
        if outcome.killed {
            total.killed = true;
            break;
        }
    }
    total.warnings = dedup_warnings(total.warnings);
    Ok(total)
}

/// Largest `m` any component of `app` can be arranged with.
pub fn usable_m(app: &AppModel, models: &Models) -> Result<usize, EngineError> {
    let mut best = 0;
    for component in &app.components {
        let n = match models.for_kind(component.kind) {
            Some(model) => build_plan(model, app, component, 1)?.units.len(),
            None => 1,
        };
        best = best.max(n);
    }
    Ok(best)
}

/// Runs `m = 1, 2, …` up to `m_max` or the largest usable width, stopping
/// at the first width that yields a warning or when the budget runs out.
pub fn analyze_app(
    app: &AppModel,
    models: &Models,
    config: &TaintConfig,
    opts: &AnalysisOptions,
) -> Report {
    let start = Instant::now();
    let deadline = start.checked_add(opts.budget);
    let mut report = Report {
        app_id: app.app_id.clone(),
        ..Report::default()
    };
    let mut stats = Stats::default();
    let limit = match usable_m(app, models) {
        Ok(n) => opts.m_max.min(n),
        Err(e) => {
            report.error = Some(e.to_string());
            0
        }
    };
    for m in 1..=limit {
        stats.m_reached = m;
        match analyze_at_m(app, models, config, opts.detect, m, deadline) {
            Ok(outcome) => {
                stats.sequences_analyzed += outcome.sequences_analyzed;
                report.warnings = outcome.warnings;
                if outcome.killed {
                    stats.killed = true;
                    break;
                }
            }
            Err(e) => {
                report.error = Some(e.to_string());
                break;
            }
        }
        if !report.warnings.is_empty() {
            info!(
                "{}: {} warning(s) at m={m}",
                app.app_id,
                report.warnings.len()
            );
            break;
        }
    }
    stats.finished = !stats.killed && report.error.is_none();
    stats.elapsed = start.elapsed();
    report.stats = stats;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectArg {
    Leak,
    Sms,
    All,
}

impl From<DetectArg> for DetectMode {
    fn from(d: DetectArg) -> Self {
        match d {
            DetectArg::Leak => DetectMode {
                leak: true,
                sms: false,
            },
            DetectArg::Sms => DetectMode {
                leak: false,
                sms: true,
            },
            DetectArg::All => DetectMode {
                leak: true,
                sms: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Table,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Table => Format::Table,
        }
    }
}

/// Life-cycle-aware taint analysis of app IR files.
#[derive(Debug, Parser)]
#[command(name = "lifetaint", version)]
pub struct RunConfig {
    /// App IR files to analyse.
    #[arg(long = "app", required = true, num_args = 1..)]
    pub apps: Vec<PathBuf>,
    /// Directory holding activity.json and service.json; the bundled models
    /// are used when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Source and sink configuration; the bundled one is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Largest permutation width to try.
    #[arg(long, default_value_t = 2)]
    pub m_max: usize,
    /// Wall-clock budget per app, in seconds.
    #[arg(long, default_value_t = 600)]
    pub budget_secs: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Apps analysed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Print every method's loop-free CFG in DOT to stderr.
    #[arg(long)]
    pub dump_cfg: bool,
    /// Warnings to report.
    #[arg(long, value_enum, default_value_t = DetectArg::Leak)]
    pub detect: DetectArg,
    /// Write one report per app into this directory instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn dump_cfgs(app: &AppModel) {
    for r in app.all_methods() {
        let name = app.qualified_name(r);
        eprint!(
            "{}",
            remove_back_edges(&build_cfg(app.method_at(r))).to_dot(&name)
        );
    }
}

fn analyze_path(
    path: &Path,
    models: &Models,
    config: &TaintConfig,
    opts: &AnalysisOptions,
    dump: bool,
) -> Report {
    match load_app(path) {
        Ok(app) => {
            if dump {
                dump_cfgs(&app);
            }
            analyze_app(&app, models, config, opts)
        }
        Err(e) => {
            warn!("{}: {e}", path.display());
            Report {
                app_id: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                error: Some(e.to_string()),
                ..Report::default()
            }
        }
    }
}

/// Analyses all apps, in parallel when `jobs > 1`. Reports come back in
/// input order.
pub fn analyze_paths(
    paths: &[PathBuf],
    models: &Models,
    config: &TaintConfig,
    opts: &AnalysisOptions,
    jobs: usize,
    dump: bool,
) -> Vec<Report> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Report>>> = Mutex::new(vec![None; paths.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, paths.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = paths.get(i) else { break };
                let report = analyze_path(path, models, config, opts, dump);
                slots.lock().expect("no worker panicked")[i] = Some(report);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn render_all(reports: &[Report], format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialise");
            s.push('\n');
            s
        }
        Format::Table => reports.iter().map(|r| render_report(r, format)).collect(),
    }
}

/// Exit status: 0 when every app was analysed, 2 when some analysis ran out
/// of time, 1 on a configuration error.
pub fn run(cfg: &RunConfig) -> Result<i32, CliError> {
    if cfg.m_max == 0 {
        return Err(CliError::Argument("--m-max must be at least 1".into()));
    }
    if cfg.budget_secs == 0 {
        return Err(CliError::Argument("--budget-secs must be positive".into()));
    }
    let models = match &cfg.models {
        Some(dir) => Models::load_dir(dir)?,
        None => Models::bundled(),
    };
    let config = match &cfg.config {
        Some(p) => TaintConfig::load(p)?,
        None => TaintConfig::bundled(),
    };
    let opts = AnalysisOptions {
        m_max: cfg.m_max,
        budget: Duration::from_secs(cfg.budget_secs),
        detect: cfg.detect.into(),
    };
    let reports = analyze_paths(&cfg.apps, &models, &config, &opts, cfg.jobs, cfg.dump_cfg);
    let format: Format = cfg.format.into();
    match &cfg.out {
        Some(dir) => {
            let io = |source, path: &Path| CliError::Output {
                path: path.display().to_string(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
            let ext = if format == Format::Json {
                "json"
            } else {
                "txt"
            };
            for r in &reports {
                let path = dir.join(format!("{}.{ext}", r.app_id));
                std::fs::write(&path, render_report(r, format)).map_err(|e| io(e, &path))?;
            }
        }
        None => print!("{}", render_all(&reports, format)),
    }
    Ok(if reports.iter().any(|r| r.stats.killed) {
        2
    } else {
        0
    })
}

/// Parses `args` and runs, printing errors to stderr.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lifetaint: {e}");
            1
        }
    }
}

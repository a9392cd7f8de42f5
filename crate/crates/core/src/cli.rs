//! Command implementations behind the `mathagent` binary.
//!
//! Exit codes: 0 success, 1 validation or alignment findings, 2 config
//! error, 3 dataset error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{Backend, BackendConfig, BackendFactory, BackendKind, PhaseTag};
use crate::data_model::{dataset_stats, load_dataset, validate_dataset, DatasetError, ImageKind, Sample};
use crate::formal_language::ArityTable;
use crate::metrics::{
    improvement_delta, render_csv, render_markdown, render_report_input, score, MarkdownRow, Percent, ReportInput,
    RunReport,
};
use crate::pipeline::{AblationMode, Backends, Detection, Pipeline};
use crate::prompts::PromptSet;
use crate::visual::VisualRouter;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Findings(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Findings(_) => 1,
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Dataset(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    pub plane_geometry: String,
    pub diagram: String,
    pub default: String,
}

/// Declarative run description. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: AblationMode,
    /// Row label in reports.
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    /// Named backends. `phase1` and `phase3` are required; `phase2_type`
    /// falls back to the router's default backend.
    pub backends: BTreeMap<String, BackendConfig>,
    pub router: RouterConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Wraps every non-replay backend in a replay cache at this path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arity_table: Option<PathBuf>,
}

fn default_mode() -> AblationMode {
    AblationMode::Full
}

pub const DEFAULT_LABEL: &str = "mathagent";

fn default_label() -> String {
    DEFAULT_LABEL.to_string()
}

fn default_workers() -> usize {
    4
}

pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if config.workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    for required in ["phase1", "phase3"] {
        if !config.backends.contains_key(required) {
            return Err(CliError::Config(format!("backends.{required} is required")));
        }
    }
    let r = &config.router;
    for name in [&r.plane_geometry, &r.diagram, &r.default] {
        if !config.backends.contains_key(name) {
            return Err(CliError::Config(format!("router names unknown backend {name:?}")));
        }
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, path: path.to_path_buf(), base_dir })
}

fn with_cache(config: &BackendConfig, cache_path: Option<&Path>) -> BackendConfig {
    match (cache_path, &config.kind) {
        (Some(path), BackendKind::Http(_) | BackendKind::Scripted { .. }) => BackendConfig {
            kind: BackendKind::Replay { cache_path: path.to_path_buf(), inner: Box::new(config.clone()) },
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        },
        _ => config.clone(),
    }
}

/// Loads prompts and the arity table and builds fresh backends; a backend
/// named in several slots is built once.
pub fn build_pipeline(loaded: &LoadedConfig, factory: &BackendFactory) -> Result<Pipeline, CliError> {
    let cfg = &loaded.config;
    let prompts = match &cfg.prompts_dir {
        Some(dir) => PromptSet::load_dir(&loaded.resolve(dir)).map_err(|e| CliError::Config(e.to_string()))?,
        None => PromptSet::builtin(),
    };
    let arity = match &cfg.arity_table {
        Some(p) => ArityTable::load(loaded.resolve(p)).map_err(|e| CliError::Config(e.to_string()))?,
        None => ArityTable::default(),
    };
    let cache_path = cfg.cache_path.as_deref().map(|p| loaded.resolve(p));
    let mut built: BTreeMap<&str, Arc<dyn Backend>> = BTreeMap::new();
    let mut get = |name: &str| -> Result<Arc<dyn Backend>, CliError> {
        if let Some(b) = built.get(name) {
            return Ok(b.clone());
        }
        let (key, bc) = cfg
            .backends
            .get_key_value(name)
            .ok_or_else(|| CliError::Config(format!("backend {name:?} is not defined")))?;
        let backend = factory
            .build(&with_cache(bc, cache_path.as_deref()), &loaded.base_dir)
            .map_err(|e| CliError::Config(format!("backend {name:?}: {e}")))?;
        built.insert(key.as_str(), backend.clone());
        Ok(backend)
    };
    let router = VisualRouter {
        plane_geometry: get(&cfg.router.plane_geometry)?,
        diagram: get(&cfg.router.diagram)?,
        default: get(&cfg.router.default)?,
    };
    let phase2_type = if cfg.backends.contains_key("phase2_type") { get("phase2_type")? } else { router.default.clone() };
    let backends = Backends { phase1: get("phase1")?, phase2_type, router, phase3: get("phase3")? };
    Ok(Pipeline { backends, prompts, arity })
}

/// Loads a dataset and makes relative image paths absolute against the
/// dataset's directory.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>, CliError> {
    let mut samples = load_dataset(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for s in &mut samples {
        if let Some(img) = &mut s.image {
            if img.kind == ImageKind::FilePath && Path::new(&img.value).is_relative() {
                img.value = dir.join(&img.value).to_string_lossy().into_owned();
            }
        }
    }
    if samples.is_empty() {
        return Err(CliError::Dataset(format!("{}: no samples", path.display())));
    }
    Ok(samples)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn detections_jsonl(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        out.push_str(&serde_json::to_string(d).expect("detection serializes"));
        out.push('\n');
    }
    out
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Dataset(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Dataset(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn report_markdown(label: &str, report: &RunReport) -> String {
    render_markdown(&[MarkdownRow::Report { label, report, delta: None }])
}

/// Per-run tallies for logs, run metadata and the ablation grid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunCounts {
    pub samples: usize,
    pub failed: usize,
    pub errors: usize,
    pub calls: usize,
    pub phase1_calls: usize,
    pub phase2_calls: usize,
    pub phase3_calls: usize,
    pub cache_hits: usize,
}

impl RunCounts {
    pub fn of(detections: &[Detection]) -> Self {
        let mut c = RunCounts { samples: detections.len(), ..Self::default() };
        for d in detections {
            if d.predicted_step.is_none() || d.predicted_category.is_none() {
                c.failed += 1;
            }
            if d.error.is_some() {
                c.errors += 1;
            }
            for call in &d.trace.backend_calls {
                c.calls += 1;
                c.cache_hits += usize::from(call.from_cache);
                match call.phase {
                    PhaseTag::Phase1 => c.phase1_calls += 1,
                    PhaseTag::Phase2Type | PhaseTag::Phase2 => c.phase2_calls += 1,
                    PhaseTag::Phase3 => c.phase3_calls += 1,
                }
            }
        }
        c
    }
}

pub struct ModeRun {
    pub mode: AblationMode,
    pub detections: Vec<Detection>,
    pub report: RunReport,
    pub counts: RunCounts,
}

/// Runs one mode and writes detections.jsonl, report.csv and report.md to
/// `dir`.
fn run_mode(
    loaded: &LoadedConfig,
    factory: &BackendFactory,
    samples: &[Sample],
    mode: AblationMode,
    dir: &Path,
) -> Result<ModeRun, CliError> {
    let pipeline = build_pipeline(loaded, factory)?;
    tracing::info!(%mode, samples = samples.len(), workers = loaded.config.workers, "running");
    let detections = pipeline.run(samples, mode, loaded.config.workers);
    let scored = score(&detections, samples).map_err(|e| CliError::Findings(e.to_string()))?;
    let report = RunReport::from_scored(&scored);
    let label = loaded.config.label.as_str();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("detections.jsonl"), &detections_jsonl(&detections))?;
    write_file(&dir.join("report.csv"), &render_csv(&[(label, &report)]))?;
    write_file(&dir.join("report.md"), &report_markdown(label, &report))?;
    let counts = RunCounts::of(&detections);
    tracing::info!(
        %mode,
        step = %report.step,
        overall = %report.overall,
        failed = counts.failed,
        calls = counts.calls,
        cache_hits = counts.cache_hits,
        "done"
    );
    Ok(ModeRun { mode, detections, report, counts })
}

fn write_meta(
    loaded: &LoadedConfig,
    dir: &Path,
    started_at: &str,
    runs: &[&ModeRun],
) -> Result<(), CliError> {
    let modes: Vec<_> = runs.iter().map(|r| json!({"mode": r.mode, "counts": r.counts})).collect();
    let meta = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_path": loaded.path.display().to_string(),
        "config": loaded.config,
        "started_at": started_at,
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "runs": modes,
    });
    write_file(&dir.join("run_meta.json"), &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"))
}

pub fn cmd_run(config_path: &Path, factory: &BackendFactory) -> Result<ModeRun, CliError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let loaded = load_config(config_path)?;
    let samples = load_samples(&loaded.resolve(&loaded.config.dataset_path))?;
    let out = loaded.resolve(&loaded.config.output_dir);
    let run = run_mode(&loaded, factory, &samples, loaded.config.mode, &out)?;
    write_meta(&loaded, &out, &started_at, &[&run])?;
    if run.counts.failed > 0 {
        tracing::warn!(failed = run.counts.failed, "samples without a prediction");
    }
    Ok(run)
}

pub const ABLATION_HEADER: &str =
    "mode,step,vis,cal,reas,know,mis,overall,average,calls,phase1_calls,phase2_calls,phase3_calls,failed";

pub fn ablation_csv(runs: &[ModeRun]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    let cell = |p: Option<&Percent>| p.map(|p| p.format(2)).unwrap_or_default();
    for r in runs {
        let _ = write!(out, "{},{}", r.mode, r.report.step.format(2));
        for c in crate::data_model::ErrorCategory::ALL {
            let _ = write!(out, ",{}", cell(r.report.categories.get(&c)));
        }
        let c = &r.counts;
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{}",
            r.report.overall.format(2),
            r.report.average.format(2),
            c.calls,
            c.phase1_calls,
            c.phase2_calls,
            c.phase3_calls,
            c.failed
        );
    }
    out
}

/// Runs every mode with fresh backends; per-mode outputs go to
/// `<output_dir>/<mode>/`.
pub fn cmd_ablate(config_path: &Path, factory: &BackendFactory) -> Result<Vec<ModeRun>, CliError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let loaded = load_config(config_path)?;
    let samples = load_samples(&loaded.resolve(&loaded.config.dataset_path))?;
    let out = loaded.resolve(&loaded.config.output_dir);
    let mut runs = Vec::with_capacity(AblationMode::ALL.len());
    for mode in AblationMode::ALL {
        runs.push(run_mode(&loaded, factory, &samples, mode, &out.join(mode.as_str()))?);
    }
    write_file(&out.join("ablation.csv"), &ablation_csv(&runs))?;
    write_meta(&loaded, &out, &started_at, &runs.iter().collect::<Vec<_>>())?;
    Ok(runs)
}

/// Prints findings and statistics; findings make the command fail with
/// exit code 1.
pub fn cmd_validate(dataset_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(dataset_path)
        .map_err(|e| CliError::Dataset(format!("{}: {e}", dataset_path.display())))?;
    let outcome = validate_dataset(&text);
    let mut buf = String::new();
    for f in &outcome.findings {
        let _ = writeln!(buf, "{}: {f}", dataset_path.display());
    }
    match dataset_stats(&outcome.samples) {
        Ok(stats) => {
            let _ = writeln!(buf, "{stats}");
        }
        Err(e) => {
            let _ = writeln!(buf, "{e}");
        }
    }
    out.write_all(buf.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    if outcome.findings.is_empty() {
        Ok(())
    } else {
        Err(CliError::Findings(format!("{} schema finding(s)", outcome.findings.len())))
    }
}

pub struct ReportArgs<'a> {
    pub detections: &'a Path,
    pub dataset: &'a Path,
    pub baseline: Option<&'a Path>,
    pub label: &'a str,
    pub baseline_label: &'a str,
    pub out_dir: Option<&'a Path>,
}

/// Rescores stored detections. Markdown goes to `out`; with `out_dir`,
/// report.md and report.csv are also written there.
pub fn cmd_report(args: &ReportArgs<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let samples = load_dataset(args.dataset)?;
    let rescore = |path: &Path| -> Result<RunReport, CliError> {
        let detections = read_detections(path)?;
        let scored = score(&detections, &samples)
            .map_err(|e| CliError::Findings(format!("{}: {e}", path.display())))?;
        Ok(RunReport::from_scored(&scored))
    };
    let report = rescore(args.detections)?;
    let (markdown, csv) = match args.baseline {
        None => (report_markdown(args.label, &report), render_csv(&[(args.label, &report)])),
        Some(path) => {
            let base = rescore(path)?;
            let delta = improvement_delta(&base, &report);
            let md = render_markdown(&[
                MarkdownRow::Report { label: args.baseline_label, report: &base, delta: None },
                MarkdownRow::Report { label: args.label, report: &report, delta: Some(&delta) },
            ]);
            (md, render_csv(&[(args.baseline_label, &base), (args.label, &report)]))
        }
    };
    if let Some(dir) = args.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_file(&dir.join("report.md"), &markdown)?;
        write_file(&dir.join("report.csv"), &csv)?;
    }
    out.write_all(markdown.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

/// Renders a results table from literal values in report-input JSON.
pub fn cmd_render(input_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input_path).map_err(io_err(input_path))?;
    let input: ReportInput =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", input_path.display())))?;
    let md = render_report_input(&input).map_err(|e| CliError::Config(format!("{}: {e}", input_path.display())))?;
    out.write_all(md.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

/// Writes a synthetic dataset with the reference marginals.
pub fn cmd_generate(out_path: &Path, seed: u64) -> Result<usize, CliError> {
    let samples = crate::synthetic::generate(&crate::synthetic::Marginals::reference(), seed);
    let mut text = String::new();
    for s in &samples {
        text.push_str(&crate::data_model::sample_to_json_line(s));
        text.push('\n');
    }
    write_file(out_path, &text)?;
    Ok(samples.len())
}

//! Orchestration behind the `bte` binary.
//!
//! Three entry points mirror the subcommands: [`cmd_compute`] runs the full
//! ingest, preference, detection, report pipeline over a rating log;
//! [`cmd_simulate`] runs the closed-loop simulator and optionally the same
//! pipeline over its trace; [`cmd_report`] re-emits artifacts from a saved
//! report. All three finish by writing a `manifest.json` that pins the
//! effective configuration, sha256 digests of the inputs, per-stage counts,
//! and the list of files produced, so a run can be audited and replayed.
//!
//! Output files are written atomically (to a sibling `.tmp`, then renamed),
//! per-user problems surface as warnings instead of aborting a whole run,
//! and nothing here reads the clock, so identical configurations produce
//! identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::barrier::{
    build_report, detect_exit_windows, BtEReport, ExitWindow, ReportSettings, ThresholdMode,
};
use crate::error::{BteError, Result};
use crate::ingest::{
    bin_events, parse_ratings, parse_tag_relevance, write_ratings_dat, write_relevance_csv,
    BinningPolicy, RatingEvent, RatingScale, RatingsFormat, Strictness, TagRelevanceMatrix,
    TimeBinnedRatings,
};
use crate::preference::{
    preference_series, rolling_thresholds, PreferenceSeries, StdFlavor, ThresholdSeries,
};
use crate::report::{
    emit_bte_report, fmt_f64, parse_bte_report, render_plot, CategorySelection, PlotKind, PlotSpec,
    ReportFormat,
};
use crate::simloop::{parse_sim_config, run_simulation, trace_to_ratings, write_trace_jsonl};

/// Threshold parameters shared by every analysis run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisParams {
    /// Rolling window reach: thresholds at step t use steps t-nu ..= t.
    pub nu: usize,
    /// Band half-width in standard deviations.
    pub k: f64,
    pub mode: ThresholdMode,
    pub std_flavor: StdFlavor,
}

impl AnalysisParams {
    fn validate(&self) -> Result<()> {
        if self.nu == 0 {
            return Err(BteError::Config("nu must be at least 1".to_string()));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(BteError::Config(format!(
                "k must be finite and > 0 (got {})",
                self.k
            )));
        }
        Ok(())
    }
}

/// Which optional artifacts to write next to the JSON reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OutputOptions {
    /// Also emit each report as CSV.
    pub csv: bool,
    /// Export each user's series and thresholds as CSV.
    pub series: bool,
    /// Render SVG plots (ranked category bars, series with bands).
    pub plots: bool,
}

/// Inputs and switches for [`cmd_compute`].
#[derive(Debug, Clone)]
pub struct ComputeConfig {
    pub ratings: PathBuf,
    pub relevance: PathBuf,
    pub format: RatingsFormat,
    pub scale: RatingScale,
    pub strictness: Strictness,
    pub binning: BinningPolicy,
    pub analysis: AnalysisParams,
    /// Restrict to these user ids; ids absent from the data are an error.
    pub users: Option<Vec<u64>>,
    /// Restrict to these category labels, in this order.
    pub categories: Option<Vec<String>>,
    pub out_dir: PathBuf,
    pub outputs: OutputOptions,
}

/// Inputs and switches for [`cmd_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub sim_config: PathBuf,
    /// Replaces the seed from the config file when set.
    pub seed_override: Option<u64>,
    /// Write only the trace and dataset exports, skipping the analysis.
    pub trace_only: bool,
    pub analysis: AnalysisParams,
    pub out_dir: PathBuf,
    pub outputs: OutputOptions,
}

/// Inputs for [`cmd_report`].
#[derive(Debug, Clone)]
pub struct RenderConfig {
    pub report: PathBuf,
    pub out_dir: PathBuf,
    /// When both are false, both artifacts are produced.
    pub csv: bool,
    pub plots: bool,
}

/// What a command run produced. Warnings are non-fatal findings the caller
/// should surface; `outputs` lists every file written, manifest included.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub counts: BTreeMap<String, u64>,
}

impl RunSummary {
    fn count(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.to_string()).or_insert(0) += n;
    }
}

fn file_err(path: &Path, source: std::io::Error) -> BteError {
    BteError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn open_buffered(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| file_err(path, e))?,
    ))
}

/// Writes via a sibling temp file plus rename, so readers never observe a
/// half-written file and concurrent runs into distinct directories cannot
/// interleave.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| BteError::Config(format!("{} has no file name", path.display())))?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| file_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))?;
    Ok(())
}

/// Streaming sha256 of a file, as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| file_err(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| file_err(path, e))?;
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Everything the pipeline derives for one user.
#[derive(Debug, Clone)]
pub struct UserAnalysis {
    pub series: PreferenceSeries,
    pub thresholds: ThresholdSeries,
    pub windows: Vec<Vec<ExitWindow>>,
    pub report: BtEReport,
}

/// Runs preference, thresholds, detection, and report assembly for one
/// user's binned history. `binning_label` is only echoed into the report.
pub fn analyze_user(
    binned: &TimeBinnedRatings,
    relevance: &TagRelevanceMatrix,
    params: &AnalysisParams,
    binning_label: &str,
) -> Result<UserAnalysis> {
    let series = preference_series(binned, relevance);
    let thresholds = rolling_thresholds(&series, params.nu, params.k, params.std_flavor)?;
    let windows = detect_exit_windows(&series, &thresholds, params.mode);
    let report = build_report(
        &series,
        &windows,
        ReportSettings {
            binning: binning_label.to_string(),
            k: params.k,
            mode: params.mode.to_string(),
            nu: params.nu,
        },
    );
    Ok(UserAnalysis {
        series,
        thresholds,
        windows,
        report,
    })
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    counts: &'a BTreeMap<String, u64>,
    inputs: BTreeMap<&'a str, InputDigest>,
    outputs: Vec<String>,
    version: &'a str,
}

/// Writes `manifest.json` and records it in the summary. Output names are
/// sorted so the manifest does not depend on write order.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: &[(&str, &Path)],
    summary: &mut RunSummary,
) -> Result<()> {
    let mut digests = BTreeMap::new();
    for (name, path) in inputs {
        digests.insert(
            *name,
            InputDigest {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            },
        );
    }
    let mut outputs: Vec<String> = summary
        .outputs
        .iter()
        .filter_map(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outputs.sort();
    let manifest = Manifest {
        command,
        config,
        counts: &summary.counts,
        inputs: digests,
        outputs,
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = out_dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string(&manifest)?.as_bytes())?;
    summary.outputs.push(path);
    Ok(())
}

/// Writes one user's report plus any requested extras, updating counts and
/// warnings in place.
fn write_user_outputs(
    analysis: &UserAnalysis,
    out_dir: &Path,
    outputs: OutputOptions,
    summary: &mut RunSummary,
) -> Result<()> {
    let user = analysis.report.user_id;
    let path = out_dir.join(format!("user{user}_report.json"));
    write_atomic(
        &path,
        emit_bte_report(&analysis.report, ReportFormat::Json)?.as_bytes(),
    )?;
    summary.outputs.push(path);
    summary.count("reports_written", 1);
    let windows: u64 = analysis.windows.iter().map(|w| w.len() as u64).sum();
    summary.count("windows", windows);

    if outputs.csv {
        let path = out_dir.join(format!("user{user}_report.csv"));
        write_atomic(
            &path,
            emit_bte_report(&analysis.report, ReportFormat::Csv)?.as_bytes(),
        )?;
        summary.outputs.push(path);
    }
    if outputs.series {
        let mut buf = Vec::new();
        crate::preference::write_series_csv(
            &mut buf,
            &analysis.series,
            &analysis.thresholds,
            fmt_f64,
        )?;
        let path = out_dir.join(format!("user{user}_series.csv"));
        write_atomic(&path, &buf)?;
        summary.outputs.push(path);
    }
    if outputs.plots {
        let bars = PlotSpec {
            user_id: user,
            kind: PlotKind::CategoryBars,
            selection: CategorySelection::Top(16),
            out_path: out_dir.join(format!("user{user}_bars.svg")),
            width: 800,
            height: 320,
        };
        let bands = PlotSpec {
            user_id: user,
            kind: PlotKind::SeriesBands,
            selection: CategorySelection::Top(2),
            out_path: out_dir.join(format!("user{user}_bands.svg")),
            width: 800,
            height: 360,
        };
        for spec in [bars, bands] {
            let rendered = render_plot(
                &spec,
                &analysis.report,
                Some((&analysis.series, &analysis.thresholds)),
            )?;
            for label in rendered.skipped {
                summary.warnings.push(format!(
                    "user {user}: plot skipped unknown category {label:?}"
                ));
            }
            write_atomic(&spec.out_path, rendered.svg.as_bytes())?;
            summary.outputs.push(spec.out_path);
        }
    }
    Ok(())
}

/// Full dataset pipeline: parse, bin, analyze, and write one report per
/// user. Sparse users degrade to warnings; the run only fails when no user
/// at all can be analyzed.
pub fn cmd_compute(cfg: &ComputeConfig) -> Result<RunSummary> {
    cfg.analysis.validate()?;
    cfg.binning.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| file_err(&cfg.out_dir, e))?;
    let mut summary = RunSummary::default();

    let (events, ratings_summary) = parse_ratings(
        open_buffered(&cfg.ratings)?,
        cfg.format,
        cfg.scale,
        cfg.strictness,
    )?;
    summary.count("input_lines", ratings_summary.lines as u64);
    summary.count("accepted_events", ratings_summary.accepted as u64);
    summary.count("rejected_events", ratings_summary.rejected as u64);
    summary.warnings.extend(ratings_summary.warnings);

    let (relevance, relevance_summary) =
        parse_tag_relevance(open_buffered(&cfg.relevance)?, cfg.strictness)?;
    summary.count("relevance_pairs", relevance_summary.accepted as u64);
    summary.warnings.extend(relevance_summary.warnings);
    let relevance = match &cfg.categories {
        Some(labels) => relevance.subset(labels)?,
        None => relevance,
    };

    let mut binned = bin_events(&events, cfg.binning)?;
    if let Some(requested) = &cfg.users {
        let present: BTreeSet<u64> = binned.iter().map(|b| b.user_id).collect();
        let missing: Vec<String> = requested
            .iter()
            .filter(|id| !present.contains(id))
            .map(|id| id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(BteError::Data(format!(
                "user filter names ids absent from the ratings: {}",
                missing.join(", ")
            )));
        }
        let wanted: BTreeSet<u64> = requested.iter().copied().collect();
        binned.retain(|b| wanted.contains(&b.user_id));
    }
    if binned.is_empty() {
        return Err(BteError::Data("no users to analyze".to_string()));
    }
    summary.count("users", binned.len() as u64);
    summary.count(
        "bins",
        binned.iter().map(|b| b.bins.len() as u64).sum::<u64>(),
    );

    let binning_label = cfg.binning.to_string();
    let mut analyzed = Vec::with_capacity(binned.len());
    let mut short = 0u64;
    for user in &binned {
        let analysis = analyze_user(user, &relevance, &cfg.analysis, &binning_label)?;
        if analysis.series.len() <= cfg.analysis.nu {
            short += 1;
            summary.warnings.push(format!(
                "user {}: {} bins cannot fill the nu={} window; report has no windows",
                user.user_id,
                analysis.series.len(),
                cfg.analysis.nu
            ));
        }
        analyzed.push(analysis);
    }
    summary.count("users_short_series", short);
    if short == binned.len() as u64 {
        return Err(BteError::Config(format!(
            "nu={} exceeds every user's series; largest has {} bins",
            cfg.analysis.nu,
            binned.iter().map(|b| b.bins.len()).max().unwrap_or(0)
        )));
    }
    for analysis in &analyzed {
        write_user_outputs(analysis, &cfg.out_dir, cfg.outputs, &mut summary)?;
    }

    let config = json!({
        "binning": binning_label,
        "categories": cfg.categories,
        "format": cfg.format.to_string(),
        "k": cfg.analysis.k,
        "mode": cfg.analysis.mode.to_string(),
        "nu": cfg.analysis.nu,
        "outputs_requested": cfg.outputs,
        "scale": cfg.scale.to_string(),
        "std": cfg.analysis.std_flavor.to_string(),
        "strict": cfg.strictness == Strictness::Strict,
        "users": cfg.users,
    });
    write_manifest(
        &cfg.out_dir,
        "compute",
        config,
        &[("ratings", &cfg.ratings), ("relevance", &cfg.relevance)],
        &mut summary,
    )?;
    Ok(summary)
}

/// Simulator entry point: runs the loop, exports the trace plus dataset
/// files a later `compute` can consume, and unless `trace_only` is set runs
/// the analysis pipeline straight off the in-memory trace (one bin per
/// step).
pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<RunSummary> {
    cfg.analysis.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| file_err(&cfg.out_dir, e))?;
    let mut summary = RunSummary::default();

    let text = fs::read_to_string(&cfg.sim_config).map_err(|e| file_err(&cfg.sim_config, e))?;
    let mut sim_cfg = parse_sim_config(&text)?;
    if let Some(seed) = cfg.seed_override {
        sim_cfg.seed = seed;
    }
    let (trace, relevance) = run_simulation(&sim_cfg)?;
    summary.count("steps", trace.states.len() as u64);
    summary.count(
        "events",
        trace.states.iter().map(|s| s.feedback.len() as u64).sum(),
    );

    let user = trace.user_id;
    let mut buf = Vec::new();
    write_trace_jsonl(&mut buf, &trace)?;
    let path = cfg.out_dir.join(format!("user{user}_trace.jsonl"));
    write_atomic(&path, &buf)?;
    summary.outputs.push(path);

    let events: Vec<RatingEvent> = trace
        .states
        .iter()
        .flat_map(|s| {
            s.recommendations
                .iter()
                .zip(&s.feedback)
                .map(|(&item, &rating)| RatingEvent {
                    user_id: user,
                    item_id: item,
                    rating,
                    timestamp: s.step as u64,
                })
        })
        .collect();
    let mut buf = Vec::new();
    write_ratings_dat(&mut buf, &events)?;
    let path = cfg.out_dir.join("ratings.dat");
    write_atomic(&path, &buf)?;
    summary.outputs.push(path);

    let mut buf = Vec::new();
    write_relevance_csv(&mut buf, &relevance)?;
    let path = cfg.out_dir.join("relevance.csv");
    write_atomic(&path, &buf)?;
    summary.outputs.push(path);

    if !cfg.trace_only {
        let binned = trace_to_ratings(&trace);
        let analysis = analyze_user(&binned, &relevance, &cfg.analysis, "step")?;
        if analysis.series.len() <= cfg.analysis.nu {
            summary.warnings.push(format!(
                "horizon {} cannot fill the nu={} window; report has no windows",
                analysis.series.len(),
                cfg.analysis.nu
            ));
        }
        write_user_outputs(&analysis, &cfg.out_dir, cfg.outputs, &mut summary)?;
    }

    let config = json!({
        "analysis": {
            "binning": "step",
            "k": cfg.analysis.k,
            "mode": cfg.analysis.mode.to_string(),
            "nu": cfg.analysis.nu,
            "std": cfg.analysis.std_flavor.to_string(),
        },
        "outputs_requested": cfg.outputs,
        "sim": sim_cfg,
        "trace_only": cfg.trace_only,
    });
    write_manifest(
        &cfg.out_dir,
        "simulate",
        config,
        &[("sim_config", &cfg.sim_config)],
        &mut summary,
    )?;
    Ok(summary)
}

/// Re-emits artifacts from a saved JSON report: its CSV form and the ranked
/// bar chart. Band plots need the original series, so they are out of reach
/// here.
pub fn cmd_report(cfg: &RenderConfig) -> Result<RunSummary> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| file_err(&cfg.out_dir, e))?;
    let mut summary = RunSummary::default();
    let text = fs::read_to_string(&cfg.report).map_err(|e| file_err(&cfg.report, e))?;
    let report = parse_bte_report(&text)?;
    summary.count("categories", report.categories.len() as u64);
    summary.count(
        "windows",
        report
            .categories
            .iter()
            .map(|c| c.windows.len() as u64)
            .sum(),
    );

    let (csv, plots) = if cfg.csv || cfg.plots {
        (cfg.csv, cfg.plots)
    } else {
        (true, true)
    };
    let user = report.user_id;
    if csv {
        let path = cfg.out_dir.join(format!("user{user}_report.csv"));
        write_atomic(
            &path,
            emit_bte_report(&report, ReportFormat::Csv)?.as_bytes(),
        )?;
        summary.outputs.push(path);
    }
    if plots {
        let spec = PlotSpec {
            user_id: user,
            kind: PlotKind::CategoryBars,
            selection: CategorySelection::Top(16),
            out_path: cfg.out_dir.join(format!("user{user}_bars.svg")),
            width: 800,
            height: 320,
        };
        let rendered = render_plot(&spec, &report, None)?;
        write_atomic(&spec.out_path, rendered.svg.as_bytes())?;
        summary.outputs.push(spec.out_path);
    }

    let config = json!({ "csv": csv, "plots": plots });
    write_manifest(
        &cfg.out_dir,
        "report",
        config,
        &[("report", &cfg.report)],
        &mut summary,
    )?;
    Ok(summary)
}

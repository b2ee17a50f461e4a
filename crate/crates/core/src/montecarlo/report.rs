//! Report files. Every file starts with a metadata block (`#` lines in the
//! CSVs, a `metadata` object in the JSON) holding the crate version, the
//! seeds and the hash of the effective configuration. No timestamps are
//! written, so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::metrics::{CellMetrics, METRIC_NOTE};
use super::{ScenarioError, ScenarioRun};
use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub version: String,
    pub scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    pub iterations: Vec<usize>,
    pub config_sha256: String,
    pub metrics: String,
}

impl RunMetadata {
    pub fn new(runs: &[ScenarioRun]) -> Self {
        let configs: Vec<RunConfig> = runs.iter().map(|r| r.config.clone()).collect();
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            scenarios: runs.iter().map(|r| r.spec.id.clone()).collect(),
            seeds: runs.iter().map(|r| r.spec.seed).collect(),
            iterations: runs.iter().map(|r| r.spec.iterations).collect(),
            config_sha256: config_hash(&configs),
            metrics: METRIC_NOTE.into(),
        }
    }

    fn header(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "# multimode {}\n# scenarios: {}\n# seeds: {}\n# iterations: {}\n# config_sha256: {}\n# metrics: {}\n",
            self.version,
            self.scenarios.join(","),
            join(self.seeds.iter().map(u64::to_string).collect()),
            join(self.iterations.iter().map(usize::to_string).collect()),
            self.config_sha256,
            self.metrics
        )
    }
}

/// SHA-256 of the canonical TOML of the effective configurations. The
/// worker count is left out since it never changes results.
pub fn config_hash(configs: &[RunConfig]) -> String {
    let mut h = Sha256::new();
    for c in configs {
        let mut c = c.clone();
        c.run.jobs = 0;
        h.update(c.to_toml().as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `scenario, iteration, variable, estimator, point, variance, ci_low,
/// ci_high, covered, degenerate`
pub fn write_iterations_csv<W: Write>(mut w: W, runs: &[ScenarioRun], meta: &RunMetadata) -> std::io::Result<()> {
    w.write_all(meta.header().as_bytes())?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "scenario", "iteration", "variable", "estimator", "point", "variance", "ci_low", "ci_high", "covered",
        "degenerate",
    ])?;
    for run in runs {
        let labels = run.spec.estimator_labels();
        for res in &run.results {
            let it = res.iteration.to_string();
            for (k, var) in run.variables.iter().enumerate() {
                for (e, label) in labels.iter().enumerate() {
                    let c = res.cells[e][k];
                    let covered = if c.degenerate { "" } else if c.covered { "1" } else { "0" };
                    wtr.write_record([
                        run.spec.id.as_str(),
                        &it,
                        var,
                        label,
                        &num(c.point),
                        &num(c.variance),
                        &num(c.ci_low),
                        &num(c.ci_high),
                        covered,
                        if c.degenerate { "1" } else { "0" },
                    ])?;
                }
            }
        }
    }
    wtr.flush()
}

const SUMMARY_COLUMNS: [&str; 20] = [
    "scenario",
    "estimator",
    "variable",
    "n_valid",
    "degenerate",
    "mean_point",
    "rb",
    "rb_se",
    "abs_rb",
    "cv",
    "cv_se",
    "rrmse",
    "rrmse_se",
    "coverage",
    "coverage_se",
    "mean_cil",
    "norm_cil",
    "mean_variance",
    "empirical_variance",
    "variance_ratio",
];

fn metric_values(r: &CellMetrics) -> [(&'static str, Option<f64>); 15] {
    [
        ("mean_point", r.mean_point),
        ("rb", r.rb),
        ("rb_se", r.rb_se),
        ("abs_rb", r.abs_rb),
        ("cv", r.cv),
        ("cv_se", r.cv_se),
        ("rrmse", r.rrmse),
        ("rrmse_se", r.rrmse_se),
        ("coverage", r.coverage),
        ("coverage_se", r.coverage_se),
        ("mean_cil", r.mean_cil),
        ("norm_cil", r.norm_cil),
        ("mean_variance", r.mean_variance),
        ("empirical_variance", r.empirical_variance),
        ("variance_ratio", r.variance_ratio),
    ]
}

/// One row per scenario, estimator and variable, plus the `mean` rows.
pub fn write_summary_csv<W: Write>(mut w: W, runs: &[ScenarioRun], meta: &RunMetadata) -> std::io::Result<()> {
    w.write_all(meta.header().as_bytes())?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SUMMARY_COLUMNS)?;
    for run in runs {
        for r in &run.summary.rows {
            let mut rec = vec![
                run.spec.id.clone(),
                r.estimator.clone(),
                r.variable.clone(),
                r.n_valid.to_string(),
                r.degenerate.to_string(),
            ];
            rec.extend(metric_values(r).iter().map(|(_, v)| opt(*v)));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    metadata: &'a RunMetadata,
    scenarios: Vec<&'a super::ScenarioSummary>,
}

pub fn write_summary_json<W: Write>(mut w: W, runs: &[ScenarioRun], meta: &RunMetadata) -> std::io::Result<()> {
    let doc = SummaryDoc {
        metadata: meta,
        scenarios: runs.iter().map(|r| &r.summary).collect(),
    };
    serde_json::to_writer_pretty(&mut w, &doc).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Long format: `scenario, variable, estimator, metric, value`.
pub fn write_plot_data_csv<W: Write>(mut w: W, runs: &[ScenarioRun], meta: &RunMetadata) -> std::io::Result<()> {
    w.write_all(meta.header().as_bytes())?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scenario", "variable", "estimator", "metric", "value"])?;
    for run in runs {
        for r in &run.summary.rows {
            for (name, v) in metric_values(r) {
                if let Some(v) = v.filter(|v| v.is_finite()) {
                    wtr.write_record([run.spec.id.as_str(), &r.variable, &r.estimator, name, &num(v)])?;
                }
            }
        }
    }
    wtr.flush()
}

/// Writes `summary.csv`, `summary.json`, `plot_data.csv` and, when asked,
/// `iterations.csv` into `dir`.
pub fn write_outputs(dir: &Path, runs: &[ScenarioRun], per_iteration: bool) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = RunMetadata::new(runs);
    let mut written = Vec::new();
    type Writer = fn(BufWriter<File>, &[ScenarioRun], &RunMetadata) -> std::io::Result<()>;
    let mut jobs: Vec<(&str, Writer)> = vec![
        ("summary.csv", write_summary_csv),
        ("summary.json", write_summary_json),
        ("plot_data.csv", write_plot_data_csv),
    ];
    if per_iteration {
        jobs.push(("iterations.csv", write_iterations_csv));
    }
    for (name, f) in jobs {
        let path = dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        f(BufWriter::new(file), runs, &meta).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

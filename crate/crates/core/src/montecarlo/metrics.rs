//! Summary measures over iterations.

use serde::Serialize;

use super::{IterationResult, ScenarioError};

/// Definitions written into every report header.
pub const METRIC_NOTE: &str = "RB = mean of (t-Y)/Y; CV = mean of sqrt(v)/t; RRMSE = sqrt(mean (t-Y)^2)/Y; \
coverage = share of closed intervals containing Y; NormCIL = mean CI length / mean CIL of the variable across \
scenarios and estimators; degenerate iterations are excluded and counted";

/// Label of the row averaging a metric over the variables.
pub const AGGREGATE: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub estimator: String,
    pub variable: String,
    pub n_valid: usize,
    pub degenerate: usize,
    pub mean_point: Option<f64>,
    pub rb: Option<f64>,
    pub rb_se: Option<f64>,
    pub abs_rb: Option<f64>,
    pub cv: Option<f64>,
    pub cv_se: Option<f64>,
    pub rrmse: Option<f64>,
    pub rrmse_se: Option<f64>,
    pub coverage: Option<f64>,
    pub coverage_se: Option<f64>,
    pub mean_cil: Option<f64>,
    pub norm_cil: Option<f64>,
    pub mean_variance: Option<f64>,
    pub empirical_variance: Option<f64>,
    /// Mean estimated variance over empirical variance.
    pub variance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub iterations: usize,
    pub variables: Vec<String>,
    pub estimators: Vec<String>,
    pub truth: Vec<f64>,
    /// Per estimator: one row per variable followed by the aggregate row.
    pub rows: Vec<CellMetrics>,
}

impl ScenarioSummary {
    pub fn row(&self, estimator: &str, variable: &str) -> Option<&CellMetrics> {
        self.rows.iter().find(|r| r.estimator == estimator && r.variable == variable)
    }

    pub fn aggregate(&self, estimator: &str) -> Option<&CellMetrics> {
        self.row(estimator, AGGREGATE)
    }

    fn fill_aggregates(&mut self) {
        self.rows.retain(|r| r.variable != AGGREGATE);
        let mut out = Vec::with_capacity(self.rows.len() + self.estimators.len());
        for est in &self.estimators {
            let rows: Vec<CellMetrics> = self.rows.iter().filter(|r| &r.estimator == est).cloned().collect();
            let avg = |f: &dyn Fn(&CellMetrics) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(f).collect();
                (!v.is_empty() && v.len() == rows.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let agg = CellMetrics {
                estimator: est.clone(),
                variable: AGGREGATE.into(),
                n_valid: rows.iter().map(|r| r.n_valid).min().unwrap_or(0),
                degenerate: rows.iter().map(|r| r.degenerate).max().unwrap_or(0),
                mean_point: None,
                rb: avg(&|r| r.rb),
                rb_se: None,
                abs_rb: avg(&|r| r.abs_rb),
                cv: avg(&|r| r.cv),
                cv_se: None,
                rrmse: avg(&|r| r.rrmse),
                rrmse_se: None,
                coverage: avg(&|r| r.coverage),
                coverage_se: None,
                mean_cil: None,
                norm_cil: avg(&|r| r.norm_cil),
                mean_variance: None,
                empirical_variance: None,
                variance_ratio: avg(&|r| r.variance_ratio),
            };
            out.extend(rows);
            out.push(agg);
        }
        self.rows = out;
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with divisor `n − 1`.
fn sample_var(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

fn se_of_mean(v: &[f64]) -> Option<f64> {
    sample_var(v).map(|s| (s / v.len() as f64).sqrt())
}

/// Metrics for one estimator and variable from the non-degenerate cells.
fn cell_metrics(estimator: &str, variable: &str, truth: f64, cells: &[super::Cell]) -> CellMetrics {
    let valid: Vec<&super::Cell> = cells.iter().filter(|c| !c.degenerate).collect();
    let n = valid.len();
    let degenerate = cells.len() - n;
    let empty = CellMetrics {
        estimator: estimator.into(),
        variable: variable.into(),
        n_valid: n,
        degenerate,
        mean_point: None,
        rb: None,
        rb_se: None,
        abs_rb: None,
        cv: None,
        cv_se: None,
        rrmse: None,
        rrmse_se: None,
        coverage: None,
        coverage_se: None,
        mean_cil: None,
        norm_cil: None,
        mean_variance: None,
        empirical_variance: None,
        variance_ratio: None,
    };
    if n == 0 {
        return empty;
    }
    let points: Vec<f64> = valid.iter().map(|c| c.point).collect();
    let rel: Vec<f64> = points.iter().map(|t| (t - truth) / truth).collect();
    let cvs: Vec<f64> = valid.iter().map(|c| c.variance.sqrt() / c.point).collect();
    let sq: Vec<f64> = rel.iter().map(|r| r * r).collect();
    let cover: Vec<f64> = valid.iter().map(|c| f64::from(u8::from(c.covered))).collect();
    let cil: Vec<f64> = valid.iter().map(|c| c.ci_high - c.ci_low).collect();
    let vars: Vec<f64> = valid.iter().map(|c| c.variance).collect();

    let rb = mean(&rel);
    let mse = mean(&sq);
    let rrmse = mse.sqrt();
    let coverage = mean(&cover);
    let emp = sample_var(&points);
    let mean_var = mean(&vars);
    CellMetrics {
        mean_point: Some(mean(&points)),
        rb: Some(rb),
        rb_se: se_of_mean(&rel),
        abs_rb: Some(rb.abs()),
        cv: Some(mean(&cvs)),
        cv_se: se_of_mean(&cvs),
        rrmse: Some(rrmse),
        // delta method on sqrt
        rrmse_se: se_of_mean(&sq).map(|s| if rrmse > 0.0 { s / (2.0 * rrmse) } else { 0.0 }),
        coverage: Some(coverage),
        coverage_se: Some((coverage * (1.0 - coverage) / n as f64).sqrt()),
        mean_cil: Some(mean(&cil)),
        mean_variance: Some(mean_var),
        empirical_variance: emp,
        variance_ratio: emp.filter(|e| *e > 0.0).map(|e| mean_var / e),
        ..empty
    }
}

/// Summary rows for one scenario. Fails when no estimator has a single
/// non-degenerate iteration.
pub fn summarize(
    scenario: &str,
    variables: &[String],
    estimators: &[String],
    truth: &[f64],
    results: &[IterationResult],
) -> Result<ScenarioSummary, ScenarioError> {
    let mut rows = Vec::with_capacity(estimators.len() * (variables.len() + 1));
    let mut any_valid = false;
    for (e, est) in estimators.iter().enumerate() {
        for (k, var) in variables.iter().enumerate() {
            let cells: Vec<super::Cell> = results.iter().map(|r| r.cells[e][k]).collect();
            let m = cell_metrics(est, var, truth[k], &cells);
            any_valid |= m.n_valid > 0;
            rows.push(m);
        }
    }
    if !any_valid {
        return Err(ScenarioError::AllDegenerate {
            scenario: scenario.into(),
            iterations: results.len(),
        });
    }
    let mut s = ScenarioSummary {
        scenario: scenario.into(),
        iterations: results.len(),
        variables: variables.to_vec(),
        estimators: estimators.to_vec(),
        truth: truth.to_vec(),
        rows,
    };
    normalize_cil(std::slice::from_mut(&mut s));
    Ok(s)
}

/// Divides each mean CI length by the mean over all scenarios and
/// estimators of the same variable, then refreshes the aggregate rows.
pub fn normalize_cil(summaries: &mut [ScenarioSummary]) {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in summaries.iter() {
        for r in s.rows.iter().filter(|r| r.variable != AGGREGATE) {
            if let Some(c) = r.mean_cil {
                let e = acc.entry(r.variable.clone()).or_insert((0.0, 0));
                e.0 += c;
                e.1 += 1;
            }
        }
    }
    for s in summaries.iter_mut() {
        for r in s.rows.iter_mut().filter(|r| r.variable != AGGREGATE) {
            r.norm_cil = match (r.mean_cil, acc.get(&r.variable)) {
                (Some(c), Some(&(sum, n))) if sum > 0.0 => Some(c / (sum / n as f64)),
                _ => None,
            };
        }
        s.fill_aggregates();
    }
}

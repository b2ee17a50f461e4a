//! Scenario execution: seeded replication of a design over a
//! pseudopopulation and summary metrics across iterations.
//!
//! Each iteration draws its samples from counter-based streams keyed by
//! `(seed, scenario, iteration, stage)`, so results do not depend on the
//! number of worker threads or on the order in which iterations finish.

mod metrics;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, DesignKindConfig, EstimatorVariant, RuleChoice, RunConfig};
use crate::estimators::{estimate, resolve_factors, CompositeFactors, EstimatorId, FactorMode, Inputs, Undefined};
use crate::population::{
    build_pseudopopulation, generate_shared, load_microdata, Label, Population, PopulationError, Pseudopopulation,
    SplitMethod,
};
use crate::response::{apply_protocol_with, Protocol};
use crate::rng::{derive_key, seeded, Stage, StreamFactory};
use crate::sampling::{
    follow_up_all, srswor, subsample_nonrespondents_units, subsample_psus, two_stage_select, DrawnSample,
    SamplingError,
};
use crate::variance::{build_variance_units, first_stage_units, reduced_fraction, taylor_variance, var_estimate,
    z_for_level, VarianceUnitPlan};

pub use metrics::{normalize_cil, summarize, CellMetrics, ScenarioSummary, METRIC_NOTE};
pub use report::{
    config_hash, write_iterations_csv, write_outputs, write_plot_data_csv, write_summary_csv, write_summary_json,
    RunMetadata,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error("scenario {scenario}, iteration {iteration}: {source}")]
    Sampling {
        scenario: String,
        iteration: usize,
        #[source]
        source: SamplingError,
    },
    #[error("scenario {scenario}: all {iterations} iterations were degenerate for every estimator")]
    AllDegenerate { scenario: String, iterations: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Sample design of a scenario, with its sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    Hybrid {
        unclustered_n: usize,
        n_psus: usize,
        m_per_psu: usize,
    },
    UnitSubsampling {
        n_psus: usize,
        m_per_psu: usize,
        omega: f64,
    },
    PsuSubsampling {
        n_psus: usize,
        m_per_psu: usize,
        psus_followed: usize,
        variance_units: bool,
    },
    Unclustered {
        n: usize,
        omega: f64,
    },
}

impl DesignSpec {
    pub fn is_hybrid(&self) -> bool {
        matches!(self, DesignSpec::Hybrid { .. })
    }

    /// First-stage sample size of clustered designs.
    pub fn n_psus(&self) -> Option<usize> {
        match *self {
            DesignSpec::Hybrid { n_psus, .. }
            | DesignSpec::UnitSubsampling { n_psus, .. }
            | DesignSpec::PsuSubsampling { n_psus, .. } => Some(n_psus),
            DesignSpec::Unclustered { .. } => None,
        }
    }
}

/// Largest PSU selection probability above which the variance estimates,
/// which ignore first-stage finite population corrections, get a warning.
pub const FPC_WARNING_PI: f64 = 0.2;

/// Warnings about a design on a population that do not stop the run.
pub fn design_warnings(spec: &ScenarioSpec, raw: &Population) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(n) = spec.design.n_psus() {
        let sizes = raw.psu_sizes();
        let total: usize = sizes.iter().sum();
        let max = sizes.iter().copied().max().unwrap_or(0);
        let pi = n as f64 * max as f64 / total.max(1) as f64;
        if pi > FPC_WARNING_PI {
            out.push(format!(
                "{}: largest PSU selection probability is {pi:.3}; variances omit the first-stage finite population correction and will overstate",
                spec.id
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub rule: RuleChoice,
    pub split: SplitMethod,
    pub design: DesignSpec,
    pub estimators: Vec<EstimatorVariant>,
    pub planning_icc: f64,
    pub known_n: bool,
    pub confidence: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let d = &cfg.design;
        // validate() guarantees the fields needed by each kind
        let design = match d.kind {
            DesignKindConfig::Hybrid => DesignSpec::Hybrid {
                unclustered_n: d.unclustered_n.unwrap_or(0),
                n_psus: d.n_psus.unwrap_or(0),
                m_per_psu: d.m_per_psu.unwrap_or(0),
            },
            DesignKindConfig::UnitSubsampling => DesignSpec::UnitSubsampling {
                n_psus: d.n_psus.unwrap_or(0),
                m_per_psu: d.m_per_psu.unwrap_or(0),
                omega: d.omega.unwrap_or(1.0),
            },
            DesignKindConfig::PsuSubsampling => DesignSpec::PsuSubsampling {
                n_psus: d.n_psus.unwrap_or(0),
                m_per_psu: d.m_per_psu.unwrap_or(0),
                psus_followed: d.psus_followed.unwrap_or(0),
                variance_units: d.variance_units,
            },
            DesignKindConfig::Unclustered => DesignSpec::Unclustered {
                n: d.unclustered_n.unwrap_or(0),
                omega: d.omega.unwrap_or(1.0),
            },
        };
        let spec = ScenarioSpec {
            id: cfg.run.id.clone(),
            rule: cfg.rule()?,
            split: cfg.population.split,
            design,
            estimators: cfg.estimator_variants()?,
            planning_icc: cfg.estimators.planning_icc,
            known_n: cfg.estimators.known_n,
            confidence: cfg.estimators.confidence,
            iterations: cfg.run.iterations,
            seed: cfg.run.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, message: String| ConfigError::Invalid {
            field: field.into(),
            message,
        };
        if self.estimators.is_empty() {
            return Err(bad("estimators.list", "at least one estimator is required".into()));
        }
        if self.iterations == 0 {
            return Err(bad("run.iterations", "must be at least 1".into()));
        }
        for v in &self.estimators {
            if v.id.needs_unclustered() && !self.design.is_hybrid() {
                return Err(bad("estimators.list", format!("{} needs the hybrid design", v.id)));
            }
            if v.id.needs_psu_subsample() && !matches!(self.design, DesignSpec::PsuSubsampling { .. }) {
                return Err(bad("estimators.list", format!("{} needs PSU subsampling", v.id)));
            }
        }
        if let DesignSpec::PsuSubsampling {
            n_psus,
            psus_followed,
            variance_units: true,
            ..
        } = self.design
        {
            let (_, den) = reduced_fraction(psus_followed, n_psus);
            if n_psus / den < 2 {
                return Err(bad(
                    "design.psus_followed",
                    format!(
                        "{psus_followed} of {n_psus} PSUs leaves fewer than two balanced variance units; \
                         pick counts with a common factor of at least 2 or set variance_units = false"
                    ),
                ));
            }
        }
        z_for_level(self.confidence).map_err(|e| bad("estimators.confidence", e.to_string()))?;
        Ok(())
    }

    pub fn estimator_labels(&self) -> Vec<String> {
        self.estimators.iter().map(|v| v.label.clone()).collect()
    }
}

/// The population a scenario samples from: a shared roster plus either
/// fixed labels or per-iteration stochastic labels.
#[derive(Debug, Clone)]
pub struct ScenarioPopulation {
    raw: Arc<Population>,
    labels: Option<Pseudopopulation>,
    truth: Vec<f64>,
}

impl ScenarioPopulation {
    /// Labels `raw` by the scenario rule. Fixed-rule labels are drawn from a
    /// stream keyed by the seed and the rule only, so scenarios that share a
    /// seed and a rule share the pseudopopulation.
    pub fn build(raw: Arc<Population>, rule: RuleChoice, split: SplitMethod, seed: u64) -> Result<Self, PopulationError> {
        let truth = raw.totals();
        let labels = match rule {
            RuleChoice::Rule(r) => {
                let mut rng = seeded(derive_key(seed, &format!("pseudopopulation/{r:?}")));
                Some(build_pseudopopulation(raw.clone(), r, split, &mut rng)?)
            }
            RuleChoice::Stochastic => {
                if let Some(h) = raw.households().iter().find(|h| h.propensity.is_none()) {
                    return Err(PopulationError::Integrity(format!(
                        "household {} has no propensity; the stochastic rule needs one per household",
                        h.id
                    )));
                }
                None
            }
        };
        Ok(Self { raw, labels, truth })
    }

    pub fn from_pseudopopulation(p: Pseudopopulation) -> Self {
        let raw = p.shared_raw();
        Self {
            truth: raw.totals(),
            raw,
            labels: Some(p),
        }
    }

    pub fn raw(&self) -> &Population {
        &self.raw
    }

    pub fn pseudopopulation(&self) -> Option<&Pseudopopulation> {
        self.labels.as_ref()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }
}

/// Loads or generates the raw roster described by a config.
pub fn raw_population(cfg: &RunConfig) -> Result<Arc<Population>, PopulationError> {
    let p = &cfg.population;
    match (&p.synthetic, &p.microdata) {
        (Some(s), _) => generate_shared(s),
        (None, Some(m)) => load_microdata(&m.path, &m.schema).map(Arc::new),
        (None, None) => Err(PopulationError::Validation("no population source".into())),
    }
}

/// One estimator and variable in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub point: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Meaningful only when the cell is not degenerate.
    pub covered: bool,
    pub degenerate: bool,
}

impl Cell {
    fn degenerate() -> Self {
        Cell {
            point: f64::NAN,
            variance: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            covered: false,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationResult {
    pub iteration: usize,
    /// Indexed by estimator, then variable.
    pub cells: Vec<Vec<Cell>>,
}

/// Realised samples of one iteration.
#[derive(Debug, Clone)]
pub struct IterationSamples {
    pub a: Option<DrawnSample>,
    pub b: DrawnSample,
    pub plan: Option<VarianceUnitPlan>,
}

/// Draws the samples of one iteration and applies the protocol.
pub fn draw_samples(spec: &ScenarioSpec, pop: &ScenarioPopulation, iteration: usize) -> Result<IterationSamples, SamplingError> {
    let streams = StreamFactory::new(spec.seed, &spec.id);
    let it = iteration as u64;
    let raw = pop.raw();
    let (mut a, mut b) = match spec.design {
        DesignSpec::Hybrid {
            unclustered_n,
            n_psus,
            m_per_psu,
        } => {
            let b = two_stage_select(raw, n_psus, m_per_psu, &mut streams.stream(it, Stage::ClusteredSample))?;
            let a = srswor(raw, unclustered_n, &mut streams.stream(it, Stage::UnclusteredSample))?;
            (Some(a), b)
        }
        DesignSpec::UnitSubsampling { n_psus, m_per_psu, .. } | DesignSpec::PsuSubsampling { n_psus, m_per_psu, .. } => {
            let b = two_stage_select(raw, n_psus, m_per_psu, &mut streams.stream(it, Stage::ClusteredSample))?;
            (None, b)
        }
        DesignSpec::Unclustered { n, .. } => {
            let b = srswor(raw, n, &mut streams.stream(it, Stage::UnclusteredSample))?;
            (None, b)
        }
    };

    // labels: fixed by the pseudopopulation, or drawn once per sampled
    // household from its propensities
    let drawn: HashMap<usize, Label> = match pop.pseudopopulation() {
        Some(_) => HashMap::new(),
        None => {
            let mut rng = streams.stream(it, Stage::Labels);
            let mut m = HashMap::new();
            for u in b.units.iter().chain(a.iter().flat_map(|s| s.units.iter())) {
                m.entry(u.household).or_insert_with(|| {
                    raw.household(u.household)
                        .propensity
                        .expect("checked when the population was built")
                        .draw(&mut rng)
                });
            }
            m
        }
    };
    let label_of = |i: usize| match pop.pseudopopulation() {
        Some(p) => p.label(i),
        None => drawn[&i],
    };

    if let Some(a) = a.as_mut() {
        apply_protocol_with(a, label_of, Protocol::WebOnly);
        a.omega = None;
    }
    apply_protocol_with(&mut b, label_of, Protocol::WebOnly);
    let mut follow = streams.stream(it, Stage::FollowUp);
    let mut plan = None;
    match spec.design {
        DesignSpec::Hybrid { .. } => follow_up_all(&mut b),
        DesignSpec::UnitSubsampling { omega, .. } | DesignSpec::Unclustered { omega, .. } => {
            subsample_nonrespondents_units(&mut b, omega, &mut follow)?
        }
        DesignSpec::PsuSubsampling {
            n_psus,
            psus_followed,
            variance_units,
            ..
        } => {
            subsample_psus(&mut b, psus_followed, &mut follow)?;
            if variance_units {
                let sub = b.psu_subsample.as_ref().map(|s| s.psus.clone()).unwrap_or_default();
                let frac = reduced_fraction(psus_followed, n_psus);
                let mut rng = streams.stream(it, Stage::VarianceUnits);
                // an unbalanced draw (PSUs without sampled units) falls back
                // to PSU-level variance
                plan = build_variance_units(&b.psu_ids(), &sub, frac, &mut rng).ok();
            }
        }
    }
    apply_protocol_with(&mut b, label_of, Protocol::WebThenFtf);
    Ok(IterationSamples { a, b, plan })
}

fn needs_per_variable(v: &EstimatorVariant) -> bool {
    v.id.uses_factors() && (v.lambda == FactorMode::EstimatedIcc || v.kappa == FactorMode::EstimatedIcc)
}

/// Points, variances and intervals for one estimator.
fn evaluate(
    v: &EstimatorVariant,
    inputs: &Inputs,
    samples: &IterationSamples,
    spec: &ScenarioSpec,
    truth: &[f64],
    z: f64,
) -> Vec<Cell> {
    let k = truth.len();
    let run = |factors: &CompositeFactors| -> Option<(Vec<f64>, Vec<f64>)> {
        let r = estimate(v.id, inputs, factors).ok()?;
        let var = taylor_variance(&r, inputs, samples.plan.as_ref()).ok()?;
        Some((r.totals, var))
    };
    let factors_for = |var: usize| -> Result<CompositeFactors, Undefined> {
        if v.id.uses_factors() {
            resolve_factors(v.lambda, v.kappa, inputs, spec.planning_icc, var)
        } else {
            Ok(CompositeFactors::new(1.0, 1.0))
        }
    };
    let mut points = vec![f64::NAN; k];
    let mut vars = vec![f64::NAN; k];
    let mut ok = vec![false; k];
    if needs_per_variable(v) {
        for j in 0..k {
            if let Some((t, s)) = factors_for(j).ok().and_then(|f| run(&f)) {
                points[j] = t[j];
                vars[j] = s[j];
                ok[j] = true;
            }
        }
    } else if let Some((t, s)) = factors_for(0).ok().and_then(|f| run(&f)) {
        points = t;
        vars = s;
        ok = vec![true; k];
    }
    let units = first_stage_units(&samples.b, samples.plan.as_ref());
    (0..k)
        .map(|j| {
            if !ok[j] || !points[j].is_finite() {
                return Cell::degenerate();
            }
            match var_estimate(points[j], vars[j].max(0.0), units, z) {
                Ok(e) => Cell {
                    point: points[j],
                    variance: e.variance,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    covered: e.covers(truth[j]),
                    degenerate: false,
                },
                Err(_) => Cell::degenerate(),
            }
        })
        .collect()
}

/// Runs every estimator of the scenario on one iteration's samples.
pub fn run_iteration(spec: &ScenarioSpec, pop: &ScenarioPopulation, iteration: usize) -> Result<IterationResult, ScenarioError> {
    let samples = draw_samples(spec, pop, iteration).map_err(|source| ScenarioError::Sampling {
        scenario: spec.id.clone(),
        iteration,
        source,
    })?;
    let z = z_for_level(spec.confidence).map_err(|e| {
        ScenarioError::Config(ConfigError::Invalid {
            field: "estimators.confidence".into(),
            message: e.to_string(),
        })
    })?;
    let mut inputs = match &samples.a {
        Some(a) => Inputs::hybrid(pop.raw(), a, &samples.b),
        None => Inputs::single(pop.raw(), &samples.b),
    };
    if spec.known_n {
        inputs.known_n = Some(pop.raw().len() as f64);
    }
    let cells = spec
        .estimators
        .iter()
        .map(|v| evaluate(v, &inputs, &samples, spec, pop.truth(), z))
        .collect();
    Ok(IterationResult { iteration, cells })
}

/// Runs all iterations on `jobs` worker threads (0 = all cores). The output
/// is ordered by iteration and identical for every `jobs` value.
pub fn run_scenario(spec: &ScenarioSpec, pop: &ScenarioPopulation, jobs: usize) -> Result<Vec<IterationResult>, ScenarioError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ScenarioError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        (0..spec.iterations)
            .into_par_iter()
            .map(|i| run_iteration(spec, pop, i))
            .collect()
    })
}

/// A scenario with its results and summary.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub config: RunConfig,
    pub variables: Vec<String>,
    pub truth: Vec<f64>,
    pub results: Vec<IterationResult>,
    pub summary: ScenarioSummary,
    pub warnings: Vec<String>,
}

/// Runs several scenarios, sharing generated rosters and pseudopopulations
/// between scenarios with identical population sections, then normalises
/// interval lengths across them.
pub fn run_configs(configs: &[RunConfig], jobs: usize) -> Result<Vec<ScenarioRun>, ScenarioError> {
    let mut specs = Vec::with_capacity(configs.len());
    for cfg in configs {
        specs.push(ScenarioSpec::from_config(cfg)?);
    }
    let mut rosters: BTreeMap<String, Arc<Population>> = BTreeMap::new();
    let mut runs = Vec::with_capacity(configs.len());
    for (cfg, spec) in configs.iter().zip(specs) {
        let key = toml::to_string(&cfg.population).unwrap_or_default();
        let raw = match rosters.get(&key) {
            Some(r) => r.clone(),
            None => {
                let r = raw_population(cfg)?;
                rosters.insert(key, r.clone());
                r
            }
        };
        let warnings = design_warnings(&spec, &raw);
        let pop = ScenarioPopulation::build(raw, spec.rule, spec.split, spec.seed)?;
        let results = run_scenario(&spec, &pop, jobs)?;
        let variables = pop.raw().var_names().to_vec();
        let summary = summarize(&spec.id, &variables, &spec.estimator_labels(), pop.truth(), &results)?;
        runs.push(ScenarioRun {
            truth: pop.truth().to_vec(),
            config: cfg.clone(),
            spec,
            variables,
            results,
            summary,
            warnings,
        });
    }
    let mut summaries: Vec<ScenarioSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    normalize_cil(&mut summaries);
    for (r, s) in runs.iter_mut().zip(summaries) {
        r.summary = s;
    }
    Ok(runs)
}

/// Estimator ids of a scenario in list order.
pub fn estimator_ids(spec: &ScenarioSpec) -> Vec<EstimatorId> {
    spec.estimators.iter().map(|v| v.id).collect()
}

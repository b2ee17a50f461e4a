//! Total estimators and their respondent weights.
//!
//! Every estimator is computed through its weights: the reported total is
//! `Σ w_k y_k` over respondents, in sample order. The weights are built from
//! weighted response counts so that the total equals the estimator's closed
//! form.
//!
//! Notation used below, for one sample: `A = Σd δ_w` (web respondents),
//! `B = Σd (1 − δ_w)` (web nonrespondents), `B_sub` the part of `B` that was
//! followed up, `F = Σd δ_f` (ftf respondents) and `a` the inverse follow-up
//! rate. `N* = A + a B_sub` estimates the population size.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::designtools::{anova_icc, clustering_deff};
use crate::population::Population;
use crate::response::{response_rates, ResponseRates, WeightedCounts};
use crate::sampling::{DrawnSample, SampledUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorId {
    T1,
    T2,
    #[serde(rename = "T2_AltOmega")]
    T2AltOmega,
    TA,
    TB1,
    TDF1,
    TDF2,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::T1,
        EstimatorId::T2,
        EstimatorId::T2AltOmega,
        EstimatorId::TA,
        EstimatorId::TB1,
        EstimatorId::TDF1,
        EstimatorId::TDF2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::T1 => "T1",
            EstimatorId::T2 => "T2",
            EstimatorId::T2AltOmega => "T2_AltOmega",
            EstimatorId::TA => "TA",
            EstimatorId::TB1 => "TB1",
            EstimatorId::TDF1 => "TDF1",
            EstimatorId::TDF2 => "TDF2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Needs the unclustered web-only sample as well as the clustered one.
    pub fn needs_unclustered(self) -> bool {
        matches!(self, EstimatorId::TA | EstimatorId::TDF1 | EstimatorId::TDF2)
    }

    /// Needs PSU subsampling for follow-up.
    pub fn needs_psu_subsample(self) -> bool {
        self == EstimatorId::T2AltOmega
    }

    pub fn uses_factors(self) -> bool {
        matches!(self, EstimatorId::TDF1 | EstimatorId::TDF2)
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Why an estimate could not be formed for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Undefined {
    #[error("web nonrespondents present but none followed up")]
    NoFollowUp,
    #[error("no ftf respondents among followed-up units")]
    NoFtfRespondents,
    #[error("no web respondents")]
    NoWebRespondents,
    #[error("no respondents")]
    NoRespondents,
    #[error("estimator does not apply to this design")]
    NotApplicable,
}

/// How a compositing factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorMode {
    /// Effective relative sample size using the planning intraclass
    /// correlation.
    EffectiveSize,
    /// Effective relative sample size using the intraclass correlation
    /// estimated from the clustered respondents, per variable.
    EstimatedIcc,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeFactors {
    /// Weight of the unclustered sample in TDF1.
    pub lambda: f64,
    /// Weight of the unclustered web respondents in TDF2.
    pub kappa: f64,
}

impl CompositeFactors {
    pub fn new(lambda: f64, kappa: f64) -> Self {
        Self { lambda, kappa }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleTag {
    A,
    B,
}

impl SampleTag {
    pub fn code(self) -> &'static str {
        match self {
            SampleTag::A => "A",
            SampleTag::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitWeight {
    pub sample: SampleTag,
    /// Position in the sample's unit list.
    pub unit: usize,
    pub id: u64,
    pub weight: f64,
}

/// Respondent means by mode, `Σdy/Σd` over the respondents of each group.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ModeMeans {
    /// Web respondents of the clustered (or only) sample.
    pub web: Option<Vec<f64>>,
    /// Ftf respondents of the clustered (or only) sample.
    pub ftf: Option<Vec<f64>>,
    /// Web respondents of the unclustered sample.
    pub web_a: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub id: EstimatorId,
    /// One total per analysis variable.
    pub totals: Vec<f64>,
    /// Respondent weights; nonrespondents and zero weights are absent.
    pub weights: Vec<UnitWeight>,
    /// Rates of the clustered (or only) sample.
    pub rates: ResponseRates,
    /// Rates of the unclustered sample for hybrid estimators.
    pub rates_a: Option<ResponseRates>,
    pub mode_means: ModeMeans,
    /// The estimator applied to `y ≡ 1`.
    pub n_hat: f64,
    pub factors: Option<CompositeFactors>,
}

/// The sample(s) an estimator is applied to.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub pop: &'a Population,
    /// Unclustered web-only sample of the hybrid design.
    pub a: Option<&'a DrawnSample>,
    /// Clustered sample, or the only sample of single-sample designs.
    pub b: &'a DrawnSample,
    /// Known frame size used as `N̂` in TDF2 instead of the composite.
    pub known_n: Option<f64>,
}

impl<'a> Inputs<'a> {
    pub fn single(pop: &'a Population, sample: &'a DrawnSample) -> Self {
        Self {
            pop,
            a: None,
            b: sample,
            known_n: None,
        }
    }

    pub fn hybrid(pop: &'a Population, a: &'a DrawnSample, b: &'a DrawnSample) -> Self {
        Self {
            pop,
            a: Some(a),
            b,
            known_n: None,
        }
    }

    fn sample(&self, tag: SampleTag) -> &'a DrawnSample {
        match tag {
            SampleTag::A => self.a.expect("weights from sample A without sample A"),
            SampleTag::B => self.b,
        }
    }

    fn y(&self, tag: SampleTag, unit: usize) -> &'a [f64] {
        &self.pop.household(self.sample(tag).units[unit].household).y
    }
}

/// Weighted mean of `y` over the units selected by `keep`.
fn group_mean(pop: &Population, s: &DrawnSample, keep: impl Fn(&SampledUnit) -> bool) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; pop.n_vars()];
    let mut w = 0.0;
    for u in s.units.iter().filter(|u| keep(u)) {
        w += u.d;
        for (acc, y) in sum.iter_mut().zip(&pop.household(u.household).y) {
            *acc += u.d * y;
        }
    }
    (w > 0.0).then(|| sum.into_iter().map(|v| v / w).collect())
}

fn weights_of(
    tag: SampleTag,
    s: &DrawnSample,
    web: impl Fn(&SampledUnit) -> f64,
    ftf: impl Fn(&SampledUnit) -> f64,
) -> Vec<UnitWeight> {
    s.units
        .iter()
        .enumerate()
        .filter_map(|(i, u)| {
            let w = if u.delta_w {
                web(u)
            } else if u.delta_f {
                ftf(u)
            } else {
                return None;
            };
            (w != 0.0).then_some(UnitWeight {
                sample: tag,
                unit: i,
                id: u.id,
                weight: w,
            })
        })
        .collect()
}

fn finish(
    id: EstimatorId,
    inputs: &Inputs,
    weights: Vec<UnitWeight>,
    n_hat: f64,
    factors: Option<CompositeFactors>,
) -> EstimatorResult {
    let mut totals = vec![0.0; inputs.pop.n_vars()];
    for w in &weights {
        for (acc, y) in totals.iter_mut().zip(inputs.y(w.sample, w.unit)) {
            *acc += w.weight * y;
        }
    }
    let pop = inputs.pop;
    let mode_means = ModeMeans {
        web: group_mean(pop, inputs.b, |u| u.delta_w),
        ftf: group_mean(pop, inputs.b, |u| u.delta_f),
        web_a: inputs.a.and_then(|a| group_mean(pop, a, |u| u.delta_w)),
    };
    EstimatorResult {
        id,
        totals,
        weights,
        rates: response_rates(inputs.b),
        rates_a: inputs.a.map(response_rates),
        mode_means,
        n_hat,
        factors,
    }
}

fn check_rate(omega: f64) -> Result<f64, Undefined> {
    if omega > 0.0 && omega <= 1.0 {
        Ok(1.0 / omega)
    } else {
        Err(Undefined::NotApplicable)
    }
}

/// Overall response rate adjusted for follow-up subsampling,
/// `1 − (1 − A/N*)(1 − F/B_sub)`.
pub fn adjusted_response_rate(c: &WeightedCounts, inv_rate: f64) -> Result<f64, Undefined> {
    if c.follow_up_degenerate() {
        return Err(Undefined::NoFollowUp);
    }
    let n_star = c.web + inv_rate * c.followed;
    if n_star <= 0.0 {
        return Err(Undefined::NoRespondents);
    }
    let r_w = c.web / n_star;
    let r_f = if c.followed > 0.0 { c.ftf / c.followed } else { 0.0 };
    let r = 1.0 - (1.0 - r_w) * (1.0 - r_f);
    if r <= 0.0 {
        return Err(Undefined::NoRespondents);
    }
    Ok(r)
}

fn t1_weights(tag: SampleTag, s: &DrawnSample, omega: f64) -> Result<(Vec<UnitWeight>, f64), Undefined> {
    let inv = check_rate(omega)?;
    let c = WeightedCounts::of(s);
    let r = adjusted_response_rate(&c, inv)?;
    let w = weights_of(tag, s, |u| u.d / r, |u| u.d * inv / r);
    Ok((w, c.web + inv * c.followed))
}

fn t2_weights(tag: SampleTag, s: &DrawnSample, inv: f64) -> Result<(Vec<UnitWeight>, f64), Undefined> {
    let c = WeightedCounts::of(s);
    if c.follow_up_degenerate() {
        return Err(Undefined::NoFollowUp);
    }
    if c.followed > 0.0 && c.ftf <= 0.0 {
        return Err(Undefined::NoFtfRespondents);
    }
    let adj = if c.ftf > 0.0 { inv * c.followed / c.ftf } else { 0.0 };
    let w = weights_of(tag, s, |u| u.d, |u| u.d * adj);
    Ok((w, c.web + inv * c.followed))
}

fn ta_weights(tag: SampleTag, s: &DrawnSample) -> Result<(Vec<UnitWeight>, f64), Undefined> {
    let c = WeightedCounts::of(s);
    if c.web <= 0.0 {
        return Err(Undefined::NoWebRespondents);
    }
    let adj = c.total / c.web;
    Ok((weights_of(tag, s, |u| u.d * adj, |_| 0.0), c.total))
}

/// Weights `d/R̂` for web and `d ω⁻¹/R̂` for ftf respondents.
pub fn t1(pop: &Population, s: &DrawnSample, omega: f64) -> Result<EstimatorResult, Undefined> {
    let (w, n) = t1_weights(SampleTag::B, s, omega)?;
    Ok(finish(EstimatorId::T1, &Inputs::single(pop, s), w, n, None))
}

/// Weights `d` for web and `d ω⁻¹ R̂_F⁻¹` for ftf respondents.
pub fn t2(pop: &Population, s: &DrawnSample, omega: f64) -> Result<EstimatorResult, Undefined> {
    let (w, n) = t2_weights(SampleTag::B, s, check_rate(omega)?)?;
    Ok(finish(EstimatorId::T2, &Inputs::single(pop, s), w, n, None))
}

/// Inverse follow-up rate measured on the sample, `B / B_sub`.
pub fn alt_inverse_rate(s: &DrawnSample) -> Result<f64, Undefined> {
    let c = WeightedCounts::of(s);
    if c.followed > 0.0 {
        Ok(c.nonresp / c.followed)
    } else if c.nonresp > 0.0 {
        Err(Undefined::NoFollowUp)
    } else {
        Ok(1.0)
    }
}

/// T2 with the inverse rate `B / B_sub` of the realised PSU subsample.
pub fn t2_alt_omega(pop: &Population, s: &DrawnSample) -> Result<EstimatorResult, Undefined> {
    if s.psu_subsample.is_none() {
        return Err(Undefined::NotApplicable);
    }
    let (w, n) = t2_weights(SampleTag::B, s, alt_inverse_rate(s)?)?;
    Ok(finish(EstimatorId::T2AltOmega, &Inputs::single(pop, s), w, n, None))
}

/// `N̂_A ȳ_WA` from the web respondents of a web-only sample.
pub fn t_a(pop: &Population, sa: &DrawnSample) -> Result<EstimatorResult, Undefined> {
    let (w, n) = ta_weights(SampleTag::A, sa)?;
    let inputs = Inputs {
        pop,
        a: Some(sa),
        b: sa,
        known_n: None,
    };
    let mut r = finish(EstimatorId::TA, &inputs, w, n, None);
    r.mode_means = ModeMeans {
        web_a: r.mode_means.web.take(),
        ..ModeMeans::default()
    };
    r.rates_a = None;
    Ok(r)
}

/// T1 on the clustered sample.
pub fn t_b1(pop: &Population, sb: &DrawnSample) -> Result<EstimatorResult, Undefined> {
    let mut r = t1(pop, sb, sb.followup_rate())?;
    r.id = EstimatorId::TB1;
    Ok(r)
}

/// `λ t_A + (1 − λ) t_B1`.
pub fn t_df1(pop: &Population, sa: &DrawnSample, sb: &DrawnSample, lambda: f64) -> Result<EstimatorResult, Undefined> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Undefined::NotApplicable);
    }
    let (wa, na) = ta_weights(SampleTag::A, sa)?;
    let (wb, nb) = t1_weights(SampleTag::B, sb, sb.followup_rate())?;
    let scale = |ws: Vec<UnitWeight>, f: f64| {
        ws.into_iter()
            .map(move |w| UnitWeight {
                weight: f * w.weight,
                ..w
            })
            .filter(|w| w.weight != 0.0)
    };
    let weights = scale(wa, lambda).chain(scale(wb, 1.0 - lambda)).collect();
    let factors = CompositeFactors::new(lambda, lambda);
    Ok(finish(
        EstimatorId::TDF1,
        &Inputs::hybrid(pop, sa, sb),
        weights,
        lambda * na + (1.0 - lambda) * nb,
        Some(factors),
    ))
}

/// Ingredients of TDF2 shared by the weights and the variance scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tdf2Parts {
    pub a: WeightedCounts,
    pub b: WeightedCounts,
    pub inv_b: f64,
    pub kappa: f64,
    /// `N* ` of each sample.
    pub n_a: f64,
    pub n_b: f64,
    pub n_hat: f64,
    pub known_n: bool,
    /// Pooled web share `(A_A + A_B) / (N_A + N_B)`.
    pub gamma: f64,
}

pub fn tdf2_parts(sa: &DrawnSample, sb: &DrawnSample, kappa: f64, known_n: Option<f64>) -> Result<Tdf2Parts, Undefined> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Undefined::NotApplicable);
    }
    let a = WeightedCounts::of(sa);
    let b = WeightedCounts::of(sb);
    let inv_b = check_rate(sb.followup_rate())?;
    if b.follow_up_degenerate() {
        return Err(Undefined::NoFollowUp);
    }
    if (kappa > 0.0 && a.web <= 0.0) || (kappa < 1.0 && b.web <= 0.0) {
        return Err(Undefined::NoWebRespondents);
    }
    let n_a = a.total;
    let n_b = b.web + inv_b * b.followed;
    let gamma = (a.web + b.web) / (n_a + n_b);
    if gamma < 1.0 && b.ftf <= 0.0 {
        return Err(Undefined::NoFtfRespondents);
    }
    let n_hat = known_n.unwrap_or(kappa * n_a + (1.0 - kappa) * n_b);
    Ok(Tdf2Parts {
        a,
        b,
        inv_b,
        kappa,
        n_a,
        n_b,
        n_hat,
        known_n: known_n.is_some(),
        gamma,
    })
}

/// `N̂ γ̂ [κ ȳ_WA + (1 − κ) ȳ_WB] + N̂ (1 − γ̂) ȳ_FB` with the pooled web
/// share `γ̂` and `N̂ = κ N̂_A + (1 − κ) N̂_B` unless the frame size is given.
pub fn t_df2(
    pop: &Population,
    sa: &DrawnSample,
    sb: &DrawnSample,
    kappa: f64,
    known_n: Option<f64>,
) -> Result<EstimatorResult, Undefined> {
    let p = tdf2_parts(sa, sb, kappa, known_n)?;
    let web_a = if p.a.web > 0.0 { kappa * p.n_hat * p.gamma / p.a.web } else { 0.0 };
    let web_b = if p.b.web > 0.0 { (1.0 - kappa) * p.n_hat * p.gamma / p.b.web } else { 0.0 };
    let ftf_b = if p.b.ftf > 0.0 { p.n_hat * (1.0 - p.gamma) / p.b.ftf } else { 0.0 };
    let weights = weights_of(SampleTag::A, sa, |u| u.d * web_a, |_| 0.0)
        .into_iter()
        .chain(weights_of(SampleTag::B, sb, |u| u.d * web_b, |u| u.d * ftf_b))
        .collect();
    let inputs = Inputs {
        pop,
        a: Some(sa),
        b: sb,
        known_n,
    };
    Ok(finish(
        EstimatorId::TDF2,
        &inputs,
        weights,
        p.n_hat,
        Some(CompositeFactors::new(kappa, kappa)),
    ))
}

/// Runs one estimator on the inputs.
pub fn estimate(id: EstimatorId, inputs: &Inputs, factors: &CompositeFactors) -> Result<EstimatorResult, Undefined> {
    let pop = inputs.pop;
    let b = inputs.b;
    let a = || inputs.a.ok_or(Undefined::NotApplicable);
    let mut r = match id {
        EstimatorId::T1 => t1(pop, b, b.followup_rate()),
        EstimatorId::T2 => t2(pop, b, b.followup_rate()),
        EstimatorId::T2AltOmega => t2_alt_omega(pop, b),
        EstimatorId::TA => t_a(pop, a()?),
        EstimatorId::TB1 => t_b1(pop, b),
        EstimatorId::TDF1 => t_df1(pop, a()?, b, factors.lambda),
        EstimatorId::TDF2 => t_df2(pop, a()?, b, factors.kappa, inputs.known_n),
    }?;
    if let Some(f) = r.factors.as_mut() {
        *f = *factors;
    }
    Ok(r)
}

/// Same as [`estimate`] but returns only the weights.
pub fn build_weights(id: EstimatorId, inputs: &Inputs, factors: &CompositeFactors) -> Result<Vec<UnitWeight>, Undefined> {
    estimate(id, inputs, factors).map(|r| r.weights)
}

/// `n_a / (n_a + n_b / deff_b)` with `deff_b = 1 + δ(m̄ − 1)` and `m̄` the
/// clustered-sample count per PSU.
pub fn effective_size_factor(n_a: f64, n_b: f64, psus_b: usize, delta: f64) -> Result<f64, Undefined> {
    let m_bar = if psus_b > 0 { n_b / psus_b as f64 } else { 1.0 };
    let deff_b = clustering_deff(m_bar.max(1.0), delta);
    let eff_b = n_b / deff_b;
    if n_a + eff_b <= 0.0 {
        return Err(Undefined::NoRespondents);
    }
    Ok(n_a / (n_a + eff_b))
}

/// Compositing factors from effective respondent counts: all respondents
/// for `λ`, web respondents only for `κ`. The unclustered sample has no
/// clustering effect.
pub fn compute_factors(sa: &DrawnSample, sb: &DrawnSample, delta: f64) -> Result<CompositeFactors, Undefined> {
    let web_a = sa.units.iter().filter(|u| u.delta_w).count() as f64;
    let web_b = sb.units.iter().filter(|u| u.delta_w).count() as f64;
    let resp_b = sb.units.iter().filter(|u| u.delta_w || u.delta_f).count() as f64;
    let psus = sb.psu_ids().len();
    Ok(CompositeFactors {
        lambda: effective_size_factor(web_a, resp_b, psus, delta)?,
        kappa: effective_size_factor(web_a, web_b, psus, delta)?,
    })
}

/// Intraclass correlation of variable `k` among clustered-sample
/// respondents, clamped to `[0, 0.99]`.
pub fn estimated_icc(pop: &Population, sb: &DrawnSample, k: usize) -> Option<f64> {
    let resp: Vec<&SampledUnit> = sb.units.iter().filter(|u| u.delta_w || u.delta_f).collect();
    let values: Vec<f64> = resp.iter().map(|u| pop.household(u.household).y[k]).collect();
    let groups: Vec<usize> = resp.iter().map(|u| u.psu_id as usize).collect();
    anova_icc(&values, &groups).map(|v| v.clamp(0.0, 0.99))
}

/// Resolves the configured factor modes for variable `k`.
pub fn resolve_factors(
    lambda: FactorMode,
    kappa: FactorMode,
    inputs: &Inputs,
    planning_delta: f64,
    k: usize,
) -> Result<CompositeFactors, Undefined> {
    let Some(sa) = inputs.a else {
        return Ok(CompositeFactors::new(1.0, 1.0));
    };
    let needs_icc = matches!(lambda, FactorMode::EstimatedIcc) || matches!(kappa, FactorMode::EstimatedIcc);
    let est = if needs_icc {
        estimated_icc(inputs.pop, inputs.b, k).unwrap_or(0.0)
    } else {
        planning_delta
    };
    let plan = compute_factors(sa, inputs.b, planning_delta)?;
    let fitted = compute_factors(sa, inputs.b, est)?;
    let pick = |mode: FactorMode, from_plan: f64, from_est: f64| match mode {
        FactorMode::EffectiveSize => from_plan,
        FactorMode::EstimatedIcc => from_est,
        FactorMode::Fixed(v) => v,
    };
    Ok(CompositeFactors {
        lambda: pick(lambda, plan.lambda, fitted.lambda),
        kappa: pick(kappa, plan.kappa, fitted.kappa),
    })
}

/// Audit export: `estimator, sample, id, weight`.
pub fn write_weights<W: Write>(writer: W, results: &[EstimatorResult]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["estimator", "sample", "id", "weight"])?;
    for r in results {
        for w in &r.weights {
            wtr.write_record([
                r.id.name(),
                w.sample.code(),
                &w.id.to_string(),
                &w.weight.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

//! Taylor-linearization variances and normal-theory confidence intervals.
//!
//! Each estimator is written as a smooth function of weighted sample totals.
//! Its first-order expansion gives a score `z_k` for every sampled unit;
//! scores are summed within first-stage units (PSUs, variance units or
//! households) and the with-replacement formula
//! `g/(g−1) Σ (Z_i − Z̄)²` is applied. First-stage finite population
//! corrections are ignored. The two samples of the hybrid design are
//! independent, so their contributions add.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::estimators::{alt_inverse_rate, tdf2_parts, EstimatorId, EstimatorResult, Inputs, Undefined};
use crate::population::Population;
use crate::response::WeightedCounts;
use crate::sampling::{DesignKind, DrawnSample, SampledUnit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VarianceError {
    #[error("need at least 2 first-stage units for a variance, found {0}")]
    TooFewUnits(usize),
    #[error("{psus} PSUs cannot be split into variance units: the count must be a multiple of {multiple}")]
    Indivisible { psus: usize, multiple: usize },
    #[error("{subsampled} of {psus} PSUs subsampled does not match the fraction {num}/{den}")]
    Unbalanced {
        psus: usize,
        subsampled: usize,
        num: usize,
        den: usize,
    },
    #[error("negative variance {0}")]
    NegativeVariance(f64),
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("variance undefined: {0}")]
    Undefined(#[from] Undefined),
}

/// PSUs grouped into variance units, each with the same number of PSUs
/// subsampled for follow-up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceUnitPlan {
    pub groups: Vec<Vec<u64>>,
    pub subsample_balance: Vec<usize>,
}

impl VarianceUnitPlan {
    fn lookup(&self) -> BTreeMap<u64, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, ids)| ids.iter().map(move |&id| (id, g)))
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduces `count / total` to lowest terms.
pub fn reduced_fraction(count: usize, total: usize) -> (usize, usize) {
    let g = gcd(count, total).max(1);
    (count / g, total / g)
}

/// Forms variance units for a follow-up subsample of PSUs taken at the
/// fraction `num/den`: groups of `den` PSUs holding `num` subsampled PSUs
/// each, with PSUs assigned to groups at random.
pub fn build_variance_units<R: Rng + ?Sized>(
    psu_ids: &[u64],
    subsampled: &BTreeSet<u64>,
    fraction: (usize, usize),
    rng: &mut R,
) -> Result<VarianceUnitPlan, VarianceError> {
    let (num, den) = fraction;
    let n = psu_ids.len();
    if den == 0 || num > den || n % den != 0 {
        return Err(VarianceError::Indivisible {
            psus: n,
            multiple: den.max(1),
        });
    }
    let mut sub: Vec<u64> = psu_ids.iter().copied().filter(|id| subsampled.contains(id)).collect();
    let mut plain: Vec<u64> = psu_ids.iter().copied().filter(|id| !subsampled.contains(id)).collect();
    let n_groups = n / den;
    if sub.len() != n_groups * num {
        return Err(VarianceError::Unbalanced {
            psus: n,
            subsampled: sub.len(),
            num,
            den,
        });
    }
    if n_groups < 2 {
        return Err(VarianceError::TooFewUnits(n_groups));
    }
    sub.shuffle(rng);
    plain.shuffle(rng);
    let per_plain = den - num;
    let groups: Vec<Vec<u64>> = (0..n_groups)
        .map(|g| {
            let mut ids: Vec<u64> = sub[g * num..(g + 1) * num]
                .iter()
                .chain(&plain[g * per_plain..(g + 1) * per_plain])
                .copied()
                .collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok(VarianceUnitPlan {
        subsample_balance: vec![num; n_groups],
        groups,
    })
}

/// Per-unit scores, one vector of per-variable values for each sampled unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

fn y<'p>(pop: &'p Population, u: &SampledUnit) -> &'p [f64] {
    &pop.household(u.household).y
}

fn ratio_mean(pop: &Population, s: &DrawnSample, keep: impl Fn(&SampledUnit) -> bool) -> (f64, Vec<f64>) {
    let mut w = 0.0;
    let mut sum = vec![0.0; pop.n_vars()];
    for u in s.units.iter().filter(|u| keep(u)) {
        w += u.d;
        for (acc, v) in sum.iter_mut().zip(y(pop, u)) {
            *acc += u.d * v;
        }
    }
    let mean = if w > 0.0 { sum.iter().map(|v| v / w).collect() } else { sum };
    (w, mean)
}

fn scaled(scores: Vec<Vec<f64>>, f: f64) -> Vec<Vec<f64>> {
    scores
        .into_iter()
        .map(|z| z.into_iter().map(|v| v * f).collect())
        .collect()
}

/// T1: `N* P / Q` with `P = Σd(δ_w + a δ_f) y`, `Q = Σd(δ_w + a δ_f)`.
fn t1_scores(pop: &Population, s: &DrawnSample, inv: f64) -> Vec<Vec<f64>> {
    let c = WeightedCounts::of(s);
    let n_star = c.web + inv * c.followed;
    let resp_w = |u: &SampledUnit| u.d * (f64::from(u.delta_w) + inv * f64::from(u.delta_f));
    let q: f64 = s.units.iter().map(resp_w).sum();
    let mut p = vec![0.0; pop.n_vars()];
    for u in &s.units {
        let w = resp_w(u);
        for (acc, v) in p.iter_mut().zip(y(pop, u)) {
            *acc += w * v;
        }
    }
    let mean: Vec<f64> = p.iter().map(|v| v / q).collect();
    s.units
        .iter()
        .map(|u| {
            let n_k = u.d * (f64::from(u.delta_w) + inv * f64::from(u.in_ftf_subsample && !u.delta_w));
            let q_k = resp_w(u);
            y(pop, u)
                .iter()
                .zip(&mean)
                .map(|(v, m)| m * n_k + n_star / q * q_k * (v - m))
                .collect()
        })
        .collect()
}

/// T2: `A_y + Ñ ȳ_F` where `Ñ = Σ d c_k (1 − δ_w)` is the estimated number
/// of web nonrespondents and `c_k` the nonrespondent expansion of unit `k`.
fn t2_scores(pop: &Population, s: &DrawnSample, expand: impl Fn(&SampledUnit) -> f64) -> Vec<Vec<f64>> {
    let (f, ybar_f) = ratio_mean(pop, s, |u| u.delta_f);
    let n_tilde: f64 = s.units.iter().filter(|u| !u.delta_w).map(|u| u.d * expand(u)).sum();
    let slope = if f > 0.0 { n_tilde / f } else { 0.0 };
    s.units
        .iter()
        .map(|u| {
            let e = if u.delta_w { 0.0 } else { expand(u) };
            y(pop, u)
                .iter()
                .zip(&ybar_f)
                .map(|(v, m)| {
                    let mut z = u.d * e * m;
                    if u.delta_w {
                        z += u.d * v;
                    }
                    if u.delta_f {
                        z += slope * u.d * (v - m);
                    }
                    z
                })
                .collect()
        })
        .collect()
}

/// TA: `N̂_A ȳ_WA`.
fn ta_scores(pop: &Population, s: &DrawnSample) -> Vec<Vec<f64>> {
    let (a, ybar) = ratio_mean(pop, s, |u| u.delta_w);
    let n: f64 = s.units.iter().map(|u| u.d).sum();
    let slope = if a > 0.0 { n / a } else { 0.0 };
    s.units
        .iter()
        .map(|u| {
            y(pop, u)
                .iter()
                .zip(&ybar)
                .map(|(v, m)| {
                    let resid = if u.delta_w { v - m } else { 0.0 };
                    u.d * (m + slope * resid)
                })
                .collect()
        })
        .collect()
}

/// TDF2 expanded in `N̂`, the pooled web share `G/D` and the three
/// respondent means.
fn tdf2_scores(inputs: &Inputs, sa: &DrawnSample, kappa: f64) -> Result<Scores, Undefined> {
    let pop = inputs.pop;
    let sb = inputs.b;
    let p = tdf2_parts(sa, sb, kappa, inputs.known_n)?;
    let (_, y_wa) = ratio_mean(pop, sa, |u| u.delta_w);
    let (_, y_wb) = ratio_mean(pop, sb, |u| u.delta_w);
    let (_, y_fb) = ratio_mean(pop, sb, |u| u.delta_f);
    let n_hat = p.n_hat;
    let g = p.gamma;
    let d_tot = p.n_a + p.n_b;
    let k = pop.n_vars();
    let mix: Vec<f64> = (0..k).map(|j| kappa * y_wa[j] + (1.0 - kappa) * y_wb[j]).collect();
    let c_n: Vec<f64> = (0..k).map(|j| g * (mix[j] - y_fb[j]) + y_fb[j]).collect();
    let c_g: Vec<f64> = (0..k).map(|j| n_hat * (mix[j] - y_fb[j]) / d_tot).collect();
    let (kn_a, kn_b) = if p.known_n { (0.0, 0.0) } else { (kappa, 1.0 - kappa) };
    let s_wa = if p.a.web > 0.0 { n_hat * g * kappa / p.a.web } else { 0.0 };
    let s_wb = if p.b.web > 0.0 { n_hat * g * (1.0 - kappa) / p.b.web } else { 0.0 };
    let s_fb = if p.b.ftf > 0.0 { n_hat * (1.0 - g) / p.b.ftf } else { 0.0 };

    let za = sa
        .units
        .iter()
        .map(|u| {
            let yy = y(pop, u);
            let w = f64::from(u.delta_w);
            (0..k)
                .map(|j| {
                    c_n[j] * kn_a * u.d + c_g[j] * u.d * (w - g) + s_wa * u.d * w * (yy[j] - y_wa[j])
                })
                .collect()
        })
        .collect();
    let zb = sb
        .units
        .iter()
        .map(|u| {
            let yy = y(pop, u);
            let w = f64::from(u.delta_w);
            let n_k = u.d * (w + p.inv_b * f64::from(u.in_ftf_subsample && !u.delta_w));
            (0..k)
                .map(|j| {
                    let mut z = c_n[j] * kn_b * n_k + c_g[j] * (u.d * w - g * n_k);
                    if u.delta_w {
                        z += s_wb * u.d * (yy[j] - y_wb[j]);
                    }
                    if u.delta_f {
                        z += s_fb * u.d * (yy[j] - y_fb[j]);
                    }
                    z
                })
                .collect()
        })
        .collect();
    Ok(Scores { a: Some(za), b: zb })
}

/// Linearized scores of an estimator on its inputs.
pub fn scores(result: &EstimatorResult, inputs: &Inputs) -> Result<Scores, Undefined> {
    let pop = inputs.pop;
    let b = inputs.b;
    let inv_b = 1.0 / b.followup_rate();
    let need_a = || inputs.a.ok_or(Undefined::NotApplicable);
    let factors = result.factors.unwrap_or(crate::estimators::CompositeFactors::new(1.0, 1.0));
    Ok(match result.id {
        EstimatorId::T1 | EstimatorId::TB1 => Scores {
            a: None,
            b: t1_scores(pop, b, inv_b),
        },
        EstimatorId::T2 => Scores {
            a: None,
            b: t2_scores(pop, b, |u| if u.in_ftf_subsample { inv_b } else { 0.0 }),
        },
        EstimatorId::T2AltOmega => {
            alt_inverse_rate(b)?;
            Scores {
                a: None,
                b: t2_scores(pop, b, |_| 1.0),
            }
        }
        EstimatorId::TA => Scores {
            a: Some(ta_scores(pop, need_a()?)),
            b: Vec::new(),
        },
        EstimatorId::TDF1 => {
            let l = factors.lambda;
            Scores {
                a: Some(scaled(ta_scores(pop, need_a()?), l)),
                b: scaled(t1_scores(pop, b, inv_b), 1.0 - l),
            }
        }
        EstimatorId::TDF2 => tdf2_scores(inputs, need_a()?, factors.kappa)?,
    })
}

/// With-replacement variance of first-stage totals of the scores.
fn between_unit_variance(
    s: &DrawnSample,
    z: &[Vec<f64>],
    n_vars: usize,
    plan: Option<&VarianceUnitPlan>,
) -> Result<Vec<f64>, VarianceError> {
    let mut totals: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    match s.design {
        DesignKind::Unclustered => {
            for (i, zk) in z.iter().enumerate() {
                totals.insert(i as u64, zk.clone());
            }
        }
        DesignKind::TwoStage => {
            let lookup = plan.map(VarianceUnitPlan::lookup);
            let key = |psu: u64| lookup.as_ref().and_then(|m| m.get(&psu).map(|&g| g as u64)).unwrap_or(psu);
            // selected PSUs without sampled households still count as units
            for &psu in s.psu_selection_probs.keys() {
                totals.entry(key(psu)).or_insert_with(|| vec![0.0; n_vars]);
            }
            for (u, zk) in s.units.iter().zip(z) {
                let acc = totals.entry(key(u.psu_id)).or_insert_with(|| vec![0.0; n_vars]);
                for (a, v) in acc.iter_mut().zip(zk) {
                    *a += v;
                }
            }
        }
    }
    let g = totals.len();
    if g < 2 {
        return Err(VarianceError::TooFewUnits(g));
    }
    let gf = g as f64;
    Ok((0..n_vars)
        .map(|j| {
            let mean = totals.values().map(|t| t[j]).sum::<f64>() / gf;
            let ss: f64 = totals.values().map(|t| (t[j] - mean).powi(2)).sum();
            gf / (gf - 1.0) * ss
        })
        .collect())
}

/// Taylor variance per variable. `plan` groups the PSUs of the clustered
/// sample into variance units.
pub fn taylor_variance(
    result: &EstimatorResult,
    inputs: &Inputs,
    plan: Option<&VarianceUnitPlan>,
) -> Result<Vec<f64>, VarianceError> {
    let sc = scores(result, inputs)?;
    let k = inputs.pop.n_vars();
    let mut v = vec![0.0; k];
    if let (Some(za), Some(sa)) = (&sc.a, inputs.a) {
        for (acc, x) in v.iter_mut().zip(between_unit_variance(sa, za, k, None)?) {
            *acc += x;
        }
    }
    if !sc.b.is_empty() {
        for (acc, x) in v.iter_mut().zip(between_unit_variance(inputs.b, &sc.b, k, plan)?) {
            *acc += x;
        }
    }
    Ok(v)
}

/// Normal quantile for a two-sided interval; exactly 1.96 at 95%.
pub fn z_for_level(level: f64) -> Result<f64, VarianceError> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(level > 0.0 && level < 1.0) {
        return Err(VarianceError::BadLevel(level));
    }
    if level == 0.95 {
        return Ok(1.96);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarEstimate {
    pub variance: f64,
    pub df_proxy: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl VarEstimate {
    /// Closed-interval coverage.
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// `point ± z sqrt(variance)`.
pub fn confidence_interval(point: f64, variance: f64, z: f64) -> Result<(f64, f64), VarianceError> {
    if variance < 0.0 || variance.is_nan() {
        return Err(VarianceError::NegativeVariance(variance));
    }
    let h = z * variance.sqrt();
    Ok((point - h, point + h))
}

pub fn var_estimate(point: f64, variance: f64, units: usize, z: f64) -> Result<VarEstimate, VarianceError> {
    let (ci_low, ci_high) = confidence_interval(point, variance, z)?;
    Ok(VarEstimate {
        variance,
        df_proxy: units.saturating_sub(1),
        ci_low,
        ci_high,
    })
}

/// Number of first-stage units used for the clustered sample.
pub fn first_stage_units(s: &DrawnSample, plan: Option<&VarianceUnitPlan>) -> usize {
    match (s.design, plan) {
        (DesignKind::Unclustered, _) => s.units.len(),
        (DesignKind::TwoStage, Some(p)) => p.groups.len(),
        (DesignKind::TwoStage, None) => s.psu_selection_probs.len().max(s.psu_ids().len()),
    }
}

//! Closed-form planning calculators: weighting and clustering design effects,
//! effective sample sizes and expected completes by mode.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DesignError {
    #[error("{0} needs at least one value")]
    Empty(&'static str),
    #[error("weights must be positive and finite (got {0})")]
    BadWeight(f64),
    #[error("cluster sizes sum to zero")]
    ZeroClusterTotal,
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), DesignError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(DesignError::OutOfRange { name, value })
    }
}

/// Kish's design effect from unequal weighting, `n Σw² / (Σw)²`.
pub fn kish_weighting_deff(weights: &[f64]) -> Result<f64, DesignError> {
    if weights.is_empty() {
        return Err(DesignError::Empty("kish_weighting_deff"));
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(DesignError::BadWeight(w));
    }
    let n = weights.len() as f64;
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    Ok(n * s2 / (s * s))
}

/// Kish deff for groups given as `(count or share of units, relative weight)`.
pub fn kish_grouped_deff(groups: &[(f64, f64)]) -> Result<f64, DesignError> {
    if groups.is_empty() {
        return Err(DesignError::Empty("kish_grouped_deff"));
    }
    let mut s = 0.0;
    let mut s2 = 0.0;
    let mut p = 0.0;
    for &(share, w) in groups {
        check_range("group size", share, 0.0, f64::INFINITY)?;
        if !(w.is_finite() && w > 0.0) {
            return Err(DesignError::BadWeight(w));
        }
        p += share;
        s += share * w;
        s2 += share * w * w;
    }
    Ok(p * s2 / (s * s))
}

/// Holt's size-weighted cluster size `Σm² / Σm`.
pub fn holt_m_prime(m: &[f64]) -> Result<f64, DesignError> {
    if m.is_empty() {
        return Err(DesignError::Empty("holt_m_prime"));
    }
    if let Some(&v) = m.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(DesignError::OutOfRange { name: "m_i", value: v });
    }
    let s: f64 = m.iter().sum();
    if s <= 0.0 {
        return Err(DesignError::ZeroClusterTotal);
    }
    Ok(m.iter().map(|v| v * v).sum::<f64>() / s)
}

/// `1 + δ(m − 1)`.
pub fn clustering_deff(m: f64, delta: f64) -> f64 {
    1.0 + delta * (m - 1.0)
}

/// Effective size of the composite `λ t_a + (1−λ) t_b` of two independent
/// samples, `1 / (λ² deff_a/n_a + (1−λ)² deff_b/n_b)`.
pub fn composite_effective_n(lambda: f64, n_a: f64, deff_a: f64, n_b: f64, deff_b: f64) -> Result<f64, DesignError> {
    check_range("lambda", lambda, 0.0, 1.0)?;
    let part = |weight: f64, n: f64, deff: f64, name: &'static str| -> Result<f64, DesignError> {
        if weight == 0.0 {
            return Ok(0.0);
        }
        if !(n > 0.0) {
            return Err(DesignError::OutOfRange { name, value: n });
        }
        check_range("deff", deff, 1.0, f64::INFINITY)?;
        Ok(weight * weight * deff / n)
    };
    let v = part(lambda, n_a, deff_a, "n_a")? + part(1.0 - lambda, n_b, deff_b, "n_b")?;
    Ok(1.0 / v)
}

/// Compositing factor minimising the variance of the composite.
pub fn optimal_lambda(n_a: f64, deff_a: f64, n_b: f64, deff_b: f64) -> f64 {
    let a = n_a / deff_a;
    let b = n_b / deff_b;
    a / (a + b)
}

/// Expected completes for one design under web rate `r_w` and conditional
/// ftf rate `r_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedCompletes {
    pub sampled: f64,
    pub web: f64,
    pub followed_up: f64,
    pub ftf: f64,
}

impl ExpectedCompletes {
    pub fn total(&self) -> f64 {
        self.web + self.ftf
    }
}

/// `sampled` households pushed to web; a fraction `followup_rate` of the
/// web nonrespondents is followed up ftf.
pub fn expected_completes(sampled: f64, followup_rate: f64, r_w: f64, r_f: f64) -> Result<ExpectedCompletes, DesignError> {
    check_range("sample size", sampled, 0.0, f64::INFINITY)?;
    check_range("follow-up rate", followup_rate, 0.0, 1.0)?;
    check_range("r_w", r_w, 0.0, 1.0)?;
    check_range("r_f", r_f, 0.0, 1.0)?;
    let web = sampled * r_w;
    let followed_up = sampled * (1.0 - r_w) * followup_rate;
    Ok(ExpectedCompletes {
        sampled,
        web,
        followed_up,
        ftf: followed_up * r_f,
    })
}

/// One-way ANOVA estimate of the intraclass correlation. `None` when there
/// are fewer than two groups or no within-group variation to measure.
pub fn anova_icc(values: &[f64], groups: &[usize]) -> Option<f64> {
    use std::collections::BTreeMap;
    if values.len() != groups.len() {
        return None;
    }
    let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        let e = acc.entry(g).or_insert((0.0, 0.0));
        e.0 += 1.0;
        e.1 += v;
    }
    let k = acc.len() as f64;
    let n = values.len() as f64;
    if k < 2.0 || n <= k {
        return None;
    }
    let grand = values.iter().sum::<f64>() / n;
    let ssb: f64 = acc.values().map(|(c, s)| c * (s / c - grand).powi(2)).sum();
    let ssw: f64 = values
        .iter()
        .zip(groups)
        .map(|(&v, g)| {
            let (c, s) = acc[g];
            (v - s / c).powi(2)
        })
        .sum();
    let msb = ssb / (k - 1.0);
    let msw = ssw / (n - k);
    let n0 = (n - acc.values().map(|(c, _)| c * c).sum::<f64>() / n) / (k - 1.0);
    let denom = msb + (n0 - 1.0) * msw;
    (denom > 0.0).then(|| (msb - msw) / denom)
}

/// Inputs of the three-design planning comparison. All three designs follow
/// up ftf in the same number of PSUs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanInputs {
    pub r_w: f64,
    pub r_f: f64,
    pub delta: f64,
    /// Unit subsampling: PSUs, households per PSU and follow-up rate.
    pub unit_psus: f64,
    pub unit_per_psu: f64,
    pub omega: f64,
    /// PSU subsampling: PSUs, households per PSU, PSUs followed up.
    pub psu_psus: f64,
    pub psu_per_psu: f64,
    pub psu_followed: f64,
    /// Hybrid: unclustered sample size, clustered PSUs and households per PSU.
    pub hybrid_unclustered: f64,
    pub hybrid_psus: f64,
    pub hybrid_per_psu: f64,
    /// Compositing factor; proportional to completes when `None`.
    pub hybrid_lambda: Option<f64>,
}

impl PlanInputs {
    /// The worked illustration: 25% web and 50% ftf response, δ = .02 and
    /// about 10,000 completes per design.
    pub fn illustration() -> Self {
        Self {
            r_w: 0.25,
            r_f: 0.5,
            delta: 0.02,
            unit_psus: 200.0,
            unit_per_psu: 140.0,
            omega: 30.0 / 105.0,
            psu_psus: 700.0,
            psu_per_psu: 40.0,
            psu_followed: 200.0,
            hybrid_unclustered: 20_000.0,
            hybrid_psus: 200.0,
            hybrid_per_psu: 40.0,
            hybrid_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRow {
    pub design: &'static str,
    pub web_completes: f64,
    pub ftf_completes: f64,
    pub kish_deff: f64,
    pub cluster_size: f64,
    pub clustering_deff: f64,
    pub overall_deff: f64,
    pub effective_n: f64,
}

/// Design effects and effective sizes of the unit-subsampling,
/// PSU-subsampling and hybrid designs.
pub fn plan_designs(p: &PlanInputs) -> Result<Vec<PlanRow>, DesignError> {
    check_range("delta", p.delta, 0.0, 0.999_999)?;
    check_range("omega", p.omega, 1e-12, 1.0)?;
    if !(p.psu_followed > 0.0 && p.psu_followed <= p.psu_psus) {
        return Err(DesignError::OutOfRange {
            name: "psu_followed",
            value: p.psu_followed,
        });
    }

    // unit subsampling inside every PSU
    let per = expected_completes(p.unit_per_psu, p.omega, p.r_w, p.r_f)?;
    let kish_u = kish_grouped_deff(&[(per.web, 1.0), (per.ftf, 1.0 / p.omega)])?;
    let clus_u = clustering_deff(per.total(), p.delta);
    let n_u = p.unit_psus * per.total();
    let unit = PlanRow {
        design: "unit subsampling",
        web_completes: p.unit_psus * per.web,
        ftf_completes: p.unit_psus * per.ftf,
        kish_deff: kish_u,
        cluster_size: per.total(),
        clustering_deff: clus_u,
        overall_deff: kish_u * clus_u,
        effective_n: n_u / (kish_u * clus_u),
    };

    // PSU subsampling: completes per PSU differ between followed-up and
    // web-only PSUs
    let per_p = expected_completes(p.psu_per_psu, 1.0, p.r_w, p.r_f)?;
    let web_p = p.psu_psus * per_p.web;
    let ftf_p = p.psu_followed * per_p.ftf;
    let inv = p.psu_psus / p.psu_followed;
    let kish_p = kish_grouped_deff(&[(web_p, 1.0), (ftf_p, inv)])?;
    let mut sizes = vec![per_p.web; (p.psu_psus - p.psu_followed).round() as usize];
    sizes.extend(std::iter::repeat_n(per_p.total(), p.psu_followed.round() as usize));
    let m_prime = holt_m_prime(&sizes)?;
    let clus_p = clustering_deff(m_prime, p.delta);
    let psu = PlanRow {
        design: "PSU subsampling",
        web_completes: web_p,
        ftf_completes: ftf_p,
        kish_deff: kish_p,
        cluster_size: m_prime,
        clustering_deff: clus_p,
        overall_deff: kish_p * clus_p,
        effective_n: (web_p + ftf_p) / (kish_p * clus_p),
    };

    // hybrid: web completes from both samples are composited against the
    // ftf completes of the clustered sample
    let per_h = expected_completes(p.hybrid_per_psu, 1.0, p.r_w, p.r_f)?;
    let web_h = p.hybrid_unclustered * p.r_w + p.hybrid_psus * per_h.web;
    let ftf_h = p.hybrid_psus * per_h.ftf;
    let deff_b = clustering_deff(per_h.total(), p.delta);
    let lambda = p.hybrid_lambda.unwrap_or(web_h / (web_h + ftf_h));
    let eff_h = composite_effective_n(lambda, web_h, 1.0, ftf_h, deff_b)?;
    let hybrid = PlanRow {
        design: "hybrid",
        web_completes: web_h,
        ftf_completes: ftf_h,
        kish_deff: 1.0,
        cluster_size: per_h.total(),
        clustering_deff: deff_b,
        overall_deff: (web_h + ftf_h) / eff_h,
        effective_n: eff_h,
    };
    Ok(vec![unit, psu, hybrid])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kish_examples() {
        let mut w = vec![1.0; 35];
        w.extend(vec![3.5; 15]);
        assert_relative_eq!(kish_weighting_deff(&w).unwrap(), 1.428_571_428_571_4, epsilon = 1e-9);
        assert_eq!(kish_weighting_deff(&[2.0; 7]).unwrap(), 1.0);
        assert_relative_eq!(kish_weighting_deff(&[1.0, 3.0]).unwrap(), 1.25);
        assert!(kish_weighting_deff(&[]).is_err());
        assert!(kish_weighting_deff(&[1.0, 0.0]).is_err());
        assert_relative_eq!(
            kish_grouped_deff(&[(35.0, 1.0), (15.0, 3.5)]).unwrap(),
            kish_weighting_deff(&w).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn holt_examples() {
        let mut m = vec![10.0; 500];
        m.extend(vec![25.0; 200]);
        assert_relative_eq!(holt_m_prime(&m).unwrap(), 17.5, epsilon = 1e-12);
        assert_eq!(holt_m_prime(&[4.0; 3]).unwrap(), 4.0);
        assert_relative_eq!(holt_m_prime(&[1.0, 3.0]).unwrap(), 2.5);
        assert!(holt_m_prime(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn clustering_examples() {
        assert_relative_eq!(clustering_deff(50.0, 0.02), 1.98);
        assert_eq!(clustering_deff(50.0, 0.0), 1.0);
        assert_relative_eq!(clustering_deff(17.5, 0.02), 1.33, epsilon = 1e-12);
    }

    #[test]
    fn composite_examples() {
        let e = composite_effective_n(0.7, 7000.0, 1.0, 3000.0, 1.48).unwrap();
        assert!((e - 8741.0).abs() < 1.0, "{e}");
        assert_relative_eq!(10_000.0 / e, 1.144, epsilon = 1e-3);
        assert_relative_eq!(composite_effective_n(1.0, 7000.0, 1.2, 0.0, 1.0).unwrap(), 7000.0 / 1.2);
        assert_relative_eq!(composite_effective_n(0.0, 0.0, 1.0, 3000.0, 1.0).unwrap(), 3000.0);
    }

    #[test]
    fn optimal_lambda_maximises_effective_n() {
        let (na, da, nb, db) = (7000.0, 1.0, 3000.0, 1.48);
        let best = optimal_lambda(na, da, nb, db);
        let at_best = composite_effective_n(best, na, da, nb, db).unwrap();
        for i in 0..=1000 {
            let l = i as f64 / 1000.0;
            assert!(composite_effective_n(l, na, da, nb, db).unwrap() <= at_best + 1e-9);
        }
    }

    #[test]
    fn completes_examples() {
        let c = expected_completes(140.0, 30.0 / 105.0, 0.25, 0.5).unwrap();
        assert_relative_eq!(c.web, 35.0);
        assert_relative_eq!(c.ftf, 15.0, epsilon = 1e-12);
        assert_eq!(expected_completes(140.0, 0.0, 0.25, 0.5).unwrap().ftf, 0.0);
        assert!(expected_completes(140.0, 0.5, 1.5, 0.5).is_err());
    }

    #[test]
    fn anova_icc_of_constant_groups() {
        let v = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let g = [0, 0, 1, 1, 2, 2];
        assert_relative_eq!(anova_icc(&v, &g).unwrap(), 1.0);
        assert!(anova_icc(&[1.0, 2.0], &[0, 0]).is_none());
    }

    #[test]
    fn illustration_chain() {
        let rows = plan_designs(&PlanInputs::illustration()).unwrap();
        let unit = &rows[0];
        assert_relative_eq!(unit.web_completes, 7000.0);
        assert_relative_eq!(unit.ftf_completes, 3000.0, epsilon = 1e-9);
        assert!((unit.kish_deff - 1.4286).abs() < 0.001);
        assert!((unit.clustering_deff - 1.98).abs() < 1e-9);
        assert!(unit.overall_deff > 2.825 && unit.overall_deff < 2.90);
        assert!(unit.effective_n > 3400.0 && unit.effective_n < 3550.0);
        let psu = &rows[1];
        assert_relative_eq!(psu.cluster_size, 17.5, epsilon = 1e-9);
        assert!((psu.clustering_deff - 1.33).abs() < 0.005);
        assert!((psu.overall_deff - 1.9).abs() < 0.01);
        assert!(psu.effective_n > 5150.0 && psu.effective_n < 5300.0);
        let hyb = &rows[2];
        assert_relative_eq!(hyb.clustering_deff, 1.48, epsilon = 1e-12);
        assert!((hyb.overall_deff - 1.14).abs() < 0.01);
        assert!((hyb.effective_n - 8741.0).abs() < 1.0);
    }

    #[test]
    fn no_clustering_without_icc() {
        let mut p = PlanInputs::illustration();
        p.delta = 0.0;
        for row in plan_designs(&p).unwrap() {
            assert_eq!(row.clustering_deff, 1.0);
        }
    }
}

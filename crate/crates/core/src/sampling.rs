//! Sample selection and follow-up subsampling.
//!
//! Clustered samples are self-weighting two-stage samples: PSUs are drawn by
//! randomized systematic PPS and households are drawn within each selected
//! PSU at the rate that makes every household's overall inclusion
//! probability equal. Follow-up subsampling either takes a fraction of web
//! nonrespondents inside every PSU or takes all web nonrespondents in a
//! random subset of PSUs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::population::Population;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("sample size {n} exceeds population size {population}")]
    SampleTooLarge { n: usize, population: usize },
    #[error("sample size must be positive")]
    EmptySample,
    #[error("PSU {psu_id} would be a certainty selection (pi = {pi:.4}); reduce the number of PSUs or split large PSUs")]
    CertaintyPsu { psu_id: u64, pi: f64 },
    #[error("PSU {psu_id} needs a conditional sampling rate of {rate:.4} > 1 (size {size})")]
    RateAboveOne { psu_id: u64, rate: f64, size: usize },
    #[error("requested {count} PSUs for follow-up but only {available} are in the sample")]
    TooManyPsus { count: usize, available: usize },
    #[error("subsampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignKind {
    Unclustered,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledUnit {
    /// Position of the household in the population roster.
    pub household: usize,
    pub id: u64,
    pub psu_id: u64,
    /// Design weight: reciprocal of the overall selection probability.
    pub d: f64,
    pub in_ftf_subsample: bool,
    pub delta_w: bool,
    pub delta_f: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsuSubsample {
    pub psus: BTreeSet<u64>,
    /// Fraction of sampled PSUs kept for follow-up.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    pub units: Vec<SampledUnit>,
    pub design: DesignKind,
    pub psu_selection_probs: BTreeMap<u64, f64>,
    /// Unit-level follow-up subsampling rate.
    pub omega: Option<f64>,
    pub psu_subsample: Option<PsuSubsample>,
}

impl DrawnSample {
    /// Horvitz-Thompson estimate of the population size, `Σd`.
    pub fn n_hat(&self) -> f64 {
        self.units.iter().map(|u| u.d).sum()
    }

    /// Conditional probability that a web nonrespondent is followed up.
    pub fn followup_rate(&self) -> f64 {
        match (&self.psu_subsample, self.omega) {
            (Some(s), _) => s.rate,
            (None, Some(w)) => w,
            (None, None) => 1.0,
        }
    }

    /// Distinct PSU ids in ascending order.
    pub fn psu_ids(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.units.iter().map(|u| u.psu_id).collect();
        set.into_iter().collect()
    }

    pub fn clear_follow_up(&mut self) {
        for u in &mut self.units {
            u.in_ftf_subsample = false;
        }
        self.omega = None;
        self.psu_subsample = None;
    }

    /// Audit export: `id, psu, d, in_ftf_subsample, delta_w, delta_f`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["id", "psu", "d", "in_ftf_subsample", "delta_w", "delta_f"])?;
        for u in &self.units {
            wtr.write_record([
                u.id.to_string(),
                u.psu_id.to_string(),
                u.d.to_string(),
                (u.in_ftf_subsample as u8).to_string(),
                (u.delta_w as u8).to_string(),
                (u.delta_f as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Follow-up of web nonrespondents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowUp {
    None,
    AllUnits,
    UnitSubsample(f64),
    PsuSubsample(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    Unclustered { n: usize },
    TwoStage { n_psus: usize, m_per_psu: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDesignSpec {
    pub size: SampleSize,
    pub follow_up: FollowUp,
}

impl SampleDesignSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        match self.size {
            SampleSize::Unclustered { n } if n == 0 => return Err(SamplingError::EmptySample),
            SampleSize::TwoStage { n_psus, m_per_psu } if n_psus == 0 || m_per_psu == 0 => {
                return Err(SamplingError::EmptySample)
            }
            _ => {}
        }
        match (self.follow_up, self.size) {
            (FollowUp::UnitSubsample(w), _) if !(w > 0.0 && w <= 1.0) => Err(SamplingError::BadRate(w)),
            (FollowUp::PsuSubsample(c), SampleSize::TwoStage { n_psus, .. }) => {
                if c == 0 || c > n_psus {
                    Err(SamplingError::TooManyPsus {
                        count: c,
                        available: n_psus,
                    })
                } else {
                    Ok(())
                }
            }
            (FollowUp::PsuSubsample(_), SampleSize::Unclustered { .. }) => Err(
                SamplingError::InvalidDesign("PSU subsampling needs a two-stage sample".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Simple random sample without replacement of `n` households.
pub fn srswor<R: Rng + ?Sized>(pop: &Population, n: usize, rng: &mut R) -> Result<DrawnSample, SamplingError> {
    let big_n = pop.len();
    if n == 0 {
        return Err(SamplingError::EmptySample);
    }
    if n > big_n {
        return Err(SamplingError::SampleTooLarge { n, population: big_n });
    }
    let mut picked = index::sample(rng, big_n, n).into_vec();
    picked.sort_unstable();
    let d = big_n as f64 / n as f64;
    let units = picked
        .into_iter()
        .map(|i| {
            let h = pop.household(i);
            SampledUnit {
                household: i,
                id: h.id,
                psu_id: h.psu_id,
                d,
                in_ftf_subsample: false,
                delta_w: false,
                delta_f: false,
            }
        })
        .collect();
    Ok(DrawnSample {
        units,
        design: DesignKind::Unclustered,
        psu_selection_probs: BTreeMap::new(),
        omega: None,
        psu_subsample: None,
    })
}

/// PPS selection probabilities `n_psus * size_i / Σsize`. The first PSU
/// that would be a certainty selection is reported by position.
pub fn pps_probabilities(sizes: &[usize], n_psus: usize) -> Result<Vec<f64>, (usize, f64)> {
    let total: usize = sizes.iter().sum();
    let pis: Vec<f64> = sizes
        .iter()
        .map(|&s| n_psus as f64 * s as f64 / total as f64)
        .collect();
    match pis.iter().position(|&p| p >= 1.0) {
        Some(i) => Err((i, pis[i])),
        None => Ok(pis),
    }
}

/// Randomized systematic PPS: frame order is shuffled, then `n_psus`
/// equally spaced points with a random start pick the PSUs. Returns frame
/// positions (ascending) with their selection probabilities.
pub fn pps_select_psus<R: Rng + ?Sized>(
    sizes: &[usize],
    n_psus: usize,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>, SamplingError> {
    if n_psus == 0 || sizes.is_empty() {
        return Err(SamplingError::EmptySample);
    }
    if n_psus > sizes.len() {
        return Err(SamplingError::SampleTooLarge {
            n: n_psus,
            population: sizes.len(),
        });
    }
    if sizes.contains(&0) {
        return Err(SamplingError::InvalidDesign("PSU sizes must be positive".into()));
    }
    let pis = pps_probabilities(sizes, n_psus).map_err(|(i, pi)| SamplingError::CertaintyPsu {
        psu_id: i as u64,
        pi,
    })?;
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut picked = Vec::with_capacity(n_psus);
    let mut cum = 0.0;
    for &i in &order {
        let lo = cum;
        cum += pis[i];
        // number of points start + k lying in [lo, cum)
        let hits = (cum - start).ceil() - (lo - start).ceil();
        if hits >= 1.0 && picked.len() < n_psus {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| (i, pis[i])).collect())
}

/// Self-weighting two-stage sample with `n_psus` PSUs and an expected
/// `m_per_psu` households in each.
pub fn two_stage_select<R: Rng + ?Sized>(
    pop: &Population,
    n_psus: usize,
    m_per_psu: usize,
    rng: &mut R,
) -> Result<DrawnSample, SamplingError> {
    let sizes = pop.psu_sizes();
    let big_n = pop.len() as f64;
    let f = (n_psus * m_per_psu) as f64 / big_n;
    let chosen = pps_select_psus(&sizes, n_psus, rng).map_err(|e| match e {
        SamplingError::CertaintyPsu { psu_id, pi } => SamplingError::CertaintyPsu {
            psu_id: pop.psus()[psu_id as usize].id,
            pi,
        },
        other => other,
    })?;
    let d = 1.0 / f;
    let mut units = Vec::with_capacity(n_psus * m_per_psu);
    let mut probs = BTreeMap::new();
    for (pos, pi) in chosen {
        let psu = &pop.psus()[pos];
        let size = psu.members.len();
        let rate = f / pi;
        if rate > 1.0 + 1e-12 {
            return Err(SamplingError::RateAboveOne {
                psu_id: psu.id,
                rate,
                size,
            });
        }
        let expected = rate * size as f64;
        // randomized rounding keeps the expected take, hence the weight 1/f
        let take = if (expected - expected.round()).abs() < 1e-9 {
            expected.round() as usize
        } else {
            let base = expected.floor();
            base as usize + usize::from(rng.random::<f64>() < expected - base)
        }
        .min(size);
        let mut within = index::sample(rng, size, take).into_vec();
        within.sort_unstable();
        probs.insert(psu.id, pi);
        for w in within {
            let i = psu.members[w];
            let h = pop.household(i);
            units.push(SampledUnit {
                household: i,
                id: h.id,
                psu_id: psu.id,
                d,
                in_ftf_subsample: false,
                delta_w: false,
                delta_f: false,
            });
        }
    }
    Ok(DrawnSample {
        units,
        design: DesignKind::TwoStage,
        psu_selection_probs: probs,
        omega: None,
        psu_subsample: None,
    })
}

/// Unit positions grouped by PSU for two-stage samples; one group for
/// unclustered samples.
fn follow_up_groups(sample: &DrawnSample) -> Vec<Vec<usize>> {
    match sample.design {
        DesignKind::Unclustered => vec![(0..sample.units.len()).collect()],
        DesignKind::TwoStage => {
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, u) in sample.units.iter().enumerate() {
                groups.entry(u.psu_id).or_default().push(i);
            }
            groups.into_values().collect()
        }
    }
}

/// Flags every web nonrespondent for ftf follow-up.
pub fn follow_up_all(sample: &mut DrawnSample) {
    for u in &mut sample.units {
        u.in_ftf_subsample = !u.delta_w;
    }
    sample.omega = Some(1.0);
    sample.psu_subsample = None;
}

/// Within each PSU, flags a fraction `omega` of the web nonrespondents by
/// systematic selection from a randomly ordered list.
pub fn subsample_nonrespondents_units<R: Rng + ?Sized>(
    sample: &mut DrawnSample,
    omega: f64,
    rng: &mut R,
) -> Result<(), SamplingError> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(SamplingError::BadRate(omega));
    }
    for u in &mut sample.units {
        u.in_ftf_subsample = false;
    }
    for group in follow_up_groups(sample) {
        let mut nonresp: Vec<usize> = group.into_iter().filter(|&i| !sample.units[i].delta_w).collect();
        if nonresp.is_empty() {
            continue;
        }
        nonresp.shuffle(rng);
        let start: f64 = rng.random();
        for (j, &i) in nonresp.iter().enumerate() {
            let before = (start + j as f64 * omega).floor();
            let after = (start + (j + 1) as f64 * omega).floor();
            if after > before {
                sample.units[i].in_ftf_subsample = true;
            }
        }
    }
    sample.omega = Some(omega);
    sample.psu_subsample = None;
    Ok(())
}

/// Selects `count` of the sampled PSUs with equal probability and flags all
/// web nonrespondents inside them.
pub fn subsample_psus<R: Rng + ?Sized>(
    sample: &mut DrawnSample,
    count: usize,
    rng: &mut R,
) -> Result<(), SamplingError> {
    let ids = sample.psu_ids();
    if count == 0 || count > ids.len() {
        return Err(SamplingError::TooManyPsus {
            count,
            available: ids.len(),
        });
    }
    let chosen: BTreeSet<u64> = index::sample(rng, ids.len(), count)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    for u in &mut sample.units {
        u.in_ftf_subsample = !u.delta_w && chosen.contains(&u.psu_id);
    }
    sample.omega = None;
    sample.psu_subsample = Some(PsuSubsample {
        psus: chosen,
        rate: count as f64 / ids.len() as f64,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{AcsMode, Household};
    use crate::rng::seeded;

    fn pop_with_sizes(sizes: &[usize]) -> Population {
        let mut hs = Vec::new();
        let mut id = 0;
        for (j, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                id += 1;
                hs.push(Household {
                    id,
                    psu_id: j as u64 + 1,
                    y: vec![1.0],
                    acs_mode: Some(AcsMode::Web),
                    label: None,
                    propensity: None,
                });
            }
        }
        Population::new(vec!["v1".into()], hs).unwrap()
    }

    #[test]
    fn census_has_unit_weights() {
        let pop = pop_with_sizes(&[5, 7]);
        let s = srswor(&pop, 12, &mut seeded(1)).unwrap();
        assert_eq!(s.units.len(), 12);
        assert!(s.units.iter().all(|u| u.d == 1.0));
        assert!(srswor(&pop, 13, &mut seeded(1)).is_err());
    }

    #[test]
    fn srswor_weight_is_population_over_sample() {
        let pop = pop_with_sizes(&[1000; 1000]);
        let s = srswor(&pop, 2500, &mut seeded(2)).unwrap();
        assert!(s.units.iter().all(|u| u.d == 400.0));
        let ids: BTreeSet<u64> = s.units.iter().map(|u| u.id).collect();
        assert_eq!(ids.len(), 2500);
    }

    #[test]
    fn pps_probabilities_follow_sizes() {
        let p = pps_probabilities(&[10, 20, 30, 40], 2).unwrap();
        let expected = [0.2, 0.4, 0.6, 0.8];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let eq = pps_probabilities(&[5; 8], 3).unwrap();
        assert!(eq.iter().all(|&x| (x - 3.0 / 8.0).abs() < 1e-12));
    }

    #[test]
    fn certainty_psu_rejected() {
        let pop = pop_with_sizes(&[10, 10, 80]);
        match two_stage_select(&pop, 2, 2, &mut seeded(1)) {
            Err(SamplingError::CertaintyPsu { psu_id, .. }) => assert_eq!(psu_id, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pps_selects_fixed_size_distinct() {
        let mut rng = seeded(4);
        for _ in 0..200 {
            let s = pps_select_psus(&[10, 20, 30, 40], 2, &mut rng).unwrap();
            assert_eq!(s.len(), 2);
            assert_ne!(s[0].0, s[1].0);
        }
    }

    #[test]
    fn two_stage_equal_psus_take_m_each() {
        let pop = pop_with_sizes(&[60; 40]);
        let s = two_stage_select(&pop, 10, 20, &mut seeded(5)).unwrap();
        assert_eq!(s.units.len(), 200);
        assert_eq!(s.psu_ids().len(), 10);
        let f = 200.0 / 2400.0;
        assert!(s.units.iter().all(|u| (u.d * f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_stage_rate_above_one_names_psu() {
        // PSU sizes 4 and 40: small PSU cannot supply its share at m = 10
        let pop = pop_with_sizes(&[4, 40, 40, 40]);
        let mut rng = seeded(6);
        let mut saw = false;
        for _ in 0..50 {
            if let Err(SamplingError::RateAboveOne { psu_id, .. }) = two_stage_select(&pop, 2, 10, &mut rng) {
                assert_eq!(psu_id, 1);
                saw = true;
                break;
            }
        }
        assert!(saw);
    }

    fn web_flags(sample: &mut DrawnSample, respondents: &[usize]) {
        for (i, u) in sample.units.iter_mut().enumerate() {
            u.delta_w = respondents.contains(&i);
        }
    }

    #[test]
    fn unit_subsampling_full_rate_flags_all_nonrespondents() {
        let pop = pop_with_sizes(&[50; 4]);
        let mut s = two_stage_select(&pop, 2, 20, &mut seeded(7)).unwrap();
        web_flags(&mut s, &[0, 1, 2, 25]);
        subsample_nonrespondents_units(&mut s, 1.0, &mut seeded(8)).unwrap();
        for u in &s.units {
            assert_eq!(u.in_ftf_subsample, !u.delta_w);
        }
    }

    #[test]
    fn unit_subsampling_half_of_105() {
        let pop = pop_with_sizes(&[105]);
        let mut s = srswor(&pop, 105, &mut seeded(1)).unwrap();
        s.design = DesignKind::TwoStage;
        let mut rng = seeded(9);
        for _ in 0..100 {
            subsample_nonrespondents_units(&mut s, 0.5, &mut rng).unwrap();
            let k = s.units.iter().filter(|u| u.in_ftf_subsample).count();
            assert!(k == 52 || k == 53, "{k}");
        }
    }

    #[test]
    fn unit_subsampling_never_flags_respondents() {
        let pop = pop_with_sizes(&[30; 6]);
        let mut s = two_stage_select(&pop, 3, 10, &mut seeded(10)).unwrap();
        web_flags(&mut s, &[0, 3, 4, 11, 19, 29]);
        subsample_nonrespondents_units(&mut s, 0.3, &mut seeded(11)).unwrap();
        assert!(s.units.iter().all(|u| !(u.delta_w && u.in_ftf_subsample)));
        assert!(subsample_nonrespondents_units(&mut s, 0.0, &mut seeded(1)).is_err());
    }

    #[test]
    fn psu_subsampling_flags_only_chosen_psus() {
        let pop = pop_with_sizes(&[40; 20]);
        let mut s = two_stage_select(&pop, 8, 10, &mut seeded(12)).unwrap();
        web_flags(&mut s, &[0, 10, 20]);
        subsample_psus(&mut s, 3, &mut seeded(13)).unwrap();
        let sub = s.psu_subsample.clone().unwrap();
        assert_eq!(sub.psus.len(), 3);
        assert!((sub.rate - 3.0 / 8.0).abs() < 1e-15);
        for u in &s.units {
            let expected = !u.delta_w && sub.psus.contains(&u.psu_id);
            assert_eq!(u.in_ftf_subsample, expected);
        }
        assert!(subsample_psus(&mut s, 9, &mut seeded(1)).is_err());
    }

    #[test]
    fn psu_subsample_of_all_matches_all_units() {
        let pop = pop_with_sizes(&[40; 20]);
        let mut a = two_stage_select(&pop, 8, 10, &mut seeded(14)).unwrap();
        web_flags(&mut a, &[1, 2, 3, 40]);
        let mut b = a.clone();
        subsample_psus(&mut a, 8, &mut seeded(1)).unwrap();
        follow_up_all(&mut b);
        let fa: Vec<bool> = a.units.iter().map(|u| u.in_ftf_subsample).collect();
        let fb: Vec<bool> = b.units.iter().map(|u| u.in_ftf_subsample).collect();
        assert_eq!(fa, fb);
        assert_eq!(a.followup_rate(), 1.0);
    }

    #[test]
    fn psu_rate_adjustment_for_700_and_200() {
        let pop = pop_with_sizes(&[50; 1400]);
        let mut s = two_stage_select(&pop, 700, 5, &mut seeded(15)).unwrap();
        subsample_psus(&mut s, 200, &mut seeded(16)).unwrap();
        assert!((1.0 / s.followup_rate() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn design_spec_validation() {
        let bad = SampleDesignSpec {
            size: SampleSize::TwoStage { n_psus: 4, m_per_psu: 2 },
            follow_up: FollowUp::PsuSubsample(5),
        };
        assert!(bad.validate().is_err());
        let bad = SampleDesignSpec {
            size: SampleSize::Unclustered { n: 10 },
            follow_up: FollowUp::UnitSubsample(1.5),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_csv_export() {
        let pop = pop_with_sizes(&[3]);
        let s = srswor(&pop, 2, &mut seeded(1)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,psu,d,in_ftf_subsample,delta_w,delta_f\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

//! Synthetic household populations with clustered outcomes and response.
//!
//! Within-PSU correlation is induced by a shared-draw construction: every
//! household reuses its PSU's common uniform (or normal) draw with
//! probability `sqrt(icc)` and draws its own otherwise. The marginal
//! distribution of every household is untouched, so mode shares and per-mode
//! means are exact in expectation, and two households of the same PSU and
//! mode have correlation `icc`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AcsMode, Household, Population, PopulationError, PropensityVector};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariableKind {
    Binary,
    Continuous { sd: f64 },
}

/// One analysis variable. The three means apply to households whose source
/// mode is web, mail and ftf respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub mean_w: f64,
    pub mean_f: f64,
    pub mean_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPopSpec {
    pub n_psus: usize,
    /// Inclusive range of households per PSU.
    pub households_per_psu: (usize, usize),
    /// Share of households answering by web in the source survey.
    pub gamma_w: f64,
    /// Share answering by mail; the rest answered ftf.
    pub gamma_f: f64,
    /// Intraclass correlation of outcomes and of response mode within PSUs.
    pub icc: f64,
    pub variables: Vec<VariableSpec>,
    pub seed: u64,
    /// Attach smoothed PSU-level mode shares as response propensities.
    #[serde(default)]
    pub propensities: bool,
}

impl SyntheticPopSpec {
    pub fn validate(&self) -> Result<(), PopulationError> {
        let fail = |msg: String| Err(PopulationError::Validation(msg));
        if self.n_psus == 0 {
            return fail("n_psus must be positive".into());
        }
        let (lo, hi) = self.households_per_psu;
        if lo == 0 || lo > hi {
            return fail(format!("households_per_psu range ({lo}, {hi}) is empty"));
        }
        if !(self.gamma_w >= 0.0 && self.gamma_f >= 0.0 && self.gamma_w + self.gamma_f <= 1.0) {
            return fail(format!(
                "mode shares ({}, {}) are not in the simplex",
                self.gamma_w, self.gamma_f
            ));
        }
        if !(0.0..1.0).contains(&self.icc) {
            return fail(format!("icc {} outside [0, 1)", self.icc));
        }
        if self.propensities && self.gamma_w + self.gamma_f <= 0.0 {
            return fail("propensities need a positive response share".into());
        }
        if self.variables.is_empty() {
            return fail("at least one variable is required".into());
        }
        for v in &self.variables {
            let means = [v.mean_w, v.mean_f, v.mean_n];
            match v.kind {
                VariableKind::Binary => {
                    if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
                        return fail(format!("binary variable `{}` has a mean outside [0, 1]", v.name));
                    }
                }
                VariableKind::Continuous { sd } => {
                    if !(sd > 0.0) || means.iter().any(|m| !m.is_finite()) {
                        return fail(format!("continuous variable `{}` needs finite means and sd > 0", v.name));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticPopSpec) -> Result<Population, PopulationError> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let copy = spec.icc.sqrt();
    let own = (1.0 - spec.icc).sqrt();
    let (lo, hi) = spec.households_per_psu;
    let mode_of = |u: f64| {
        if u < spec.gamma_w {
            AcsMode::Web
        } else if u < spec.gamma_w + spec.gamma_f {
            AcsMode::Mail
        } else {
            AcsMode::FtfLike
        }
    };

    let mut households = Vec::new();
    let mut next_id = 1u64;
    for j in 0..spec.n_psus {
        let psu_id = j as u64 + 1;
        let size = rng.random_range(lo..=hi);
        let shared_mode: f64 = rng.random();
        let shared: Vec<f64> = spec
            .variables
            .iter()
            .map(|v| match v.kind {
                VariableKind::Binary => rng.random::<f64>(),
                VariableKind::Continuous { .. } => rng.sample(StandardNormal),
            })
            .collect();
        let start = households.len();
        for _ in 0..size {
            let u = if rng.random::<f64>() < copy {
                shared_mode
            } else {
                rng.random()
            };
            let mode = mode_of(u);
            let y = spec
                .variables
                .iter()
                .zip(&shared)
                .map(|(v, &s)| {
                    let mean = match mode {
                        AcsMode::Web => v.mean_w,
                        AcsMode::Mail => v.mean_f,
                        AcsMode::FtfLike => v.mean_n,
                    };
                    match v.kind {
                        VariableKind::Binary => {
                            let w = if rng.random::<f64>() < copy { s } else { rng.random() };
                            if w < mean {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        VariableKind::Continuous { sd } => {
                            let e: f64 = rng.sample(StandardNormal);
                            mean + sd * (copy * s + own * e)
                        }
                    }
                })
                .collect();
            households.push(Household {
                id: next_id,
                psu_id,
                y,
                acs_mode: Some(mode),
                label: None,
                propensity: None,
            });
            next_id += 1;
        }
        if spec.propensities {
            let members = &mut households[start..];
            let n = members.len() as f64;
            let web = members.iter().filter(|h| h.acs_mode == Some(AcsMode::Web)).count() as f64;
            let mail = members.iter().filter(|h| h.acs_mode == Some(AcsMode::Mail)).count() as f64;
            let phi = PropensityVector::new(
                (web + spec.gamma_w) / (n + 1.0),
                (mail + spec.gamma_f) / (n + 1.0),
            )?;
            for h in members {
                h.propensity = Some(phi);
            }
        }
    }
    let names = spec.variables.iter().map(|v| v.name.clone()).collect();
    Population::new(names, households)
}

/// Convenience wrapper returning a shareable roster.
pub fn generate_shared(spec: &SyntheticPopSpec) -> Result<Arc<Population>, PopulationError> {
    generate_synthetic(spec).map(Arc::new)
}

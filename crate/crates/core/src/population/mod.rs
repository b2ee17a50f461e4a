//! Finite pseudopopulations.
//!
//! A [`Population`] is the raw household roster: outcomes, PSU membership and
//! the mode in which the household answered the source survey. Applying a
//! labelling [`Rule`] (or drawing from response propensities) turns it into a
//! [`Pseudopopulation`] in which every household is a web respondent, an ftf
//! respondent or a nonrespondent under the simulated protocol.

mod microdata;
mod synthetic;

pub use microdata::{load_microdata, read_microdata, write_population, MicrodataSchema};
pub use synthetic::{generate_shared, generate_synthetic, SyntheticPopSpec, VariableKind, VariableSpec};

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PopulationError {
    #[error("schema error: column `{column}` not found")]
    MissingColumn { column: String },
    #[error("parse error at line {line}, column `{column}`: cannot read `{value}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid synthetic population spec: {0}")]
    Validation(String),
    #[error("population is empty")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mode in which a household answered the source survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AcsMode {
    Web,
    Mail,
    FtfLike,
}

impl AcsMode {
    pub fn code(self) -> &'static str {
        match self {
            AcsMode::Web => "WEB",
            AcsMode::Mail => "MAIL",
            AcsMode::FtfLike => "FTF",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WEB" => Some(AcsMode::Web),
            "MAIL" => Some(AcsMode::Mail),
            "FTF" => Some(AcsMode::FtfLike),
            _ => None,
        }
    }
}

/// Response category of a household under the simulated protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    WebResp,
    FtfResp,
    NonResp,
}

impl Label {
    pub fn code(self) -> &'static str {
        match self {
            Label::WebResp => "W",
            Label::FtfResp => "F",
            Label::NonResp => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "W" | "w" => Some(Label::WebResp),
            "F" | "f" => Some(Label::FtfResp),
            "N" | "n" => Some(Label::NonResp),
            _ => None,
        }
    }
}

/// Probabilities of responding by web, and by ftf without responding by web.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityVector {
    phi_w: f64,
    phi_f: f64,
}

impl PropensityVector {
    pub fn new(phi_w: f64, phi_f: f64) -> Result<Self, PopulationError> {
        let ok = (0.0..=1.0).contains(&phi_w)
            && (0.0..=1.0).contains(&phi_f)
            && phi_w + phi_f > 0.0
            && phi_w + phi_f <= 1.0 + 1e-12;
        if !ok {
            return Err(PopulationError::Integrity(format!(
                "invalid propensity vector ({phi_w}, {phi_f})"
            )));
        }
        Ok(Self { phi_w, phi_f })
    }

    pub fn phi_w(&self) -> f64 {
        self.phi_w
    }

    pub fn phi_f(&self) -> f64 {
        self.phi_f
    }

    /// Conditional ftf propensity given web nonresponse; undefined when
    /// `phi_w == 1`.
    pub fn phi_f_given_wc(&self) -> Option<f64> {
        (self.phi_w < 1.0).then(|| (self.phi_f / (1.0 - self.phi_w)).min(1.0))
    }

    /// Draws a response category: web with probability `phi_w`, otherwise ftf
    /// with the conditional propensity, otherwise nonresponse.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Label {
        if rng.random::<f64>() < self.phi_w {
            return Label::WebResp;
        }
        match self.phi_f_given_wc() {
            Some(p) if rng.random::<f64>() < p => Label::FtfResp,
            _ => Label::NonResp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: u64,
    pub psu_id: u64,
    pub y: Vec<f64>,
    pub acs_mode: Option<AcsMode>,
    pub label: Option<Label>,
    pub propensity: Option<PropensityVector>,
}

/// A PSU and the positions of its households in the roster.
#[derive(Debug, Clone, PartialEq)]
pub struct Psu {
    pub id: u64,
    pub members: Vec<usize>,
}

/// Raw household roster with its PSU frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    var_names: Vec<String>,
    households: Vec<Household>,
    psus: Vec<Psu>,
    psu_pos: Vec<usize>,
}

impl Population {
    pub fn new(var_names: Vec<String>, households: Vec<Household>) -> Result<Self, PopulationError> {
        let k = var_names.len();
        let mut seen = HashSet::with_capacity(households.len());
        let mut roster: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, h) in households.iter().enumerate() {
            if !seen.insert(h.id) {
                return Err(PopulationError::Integrity(format!(
                    "duplicate household id {}",
                    h.id
                )));
            }
            if h.y.len() != k {
                return Err(PopulationError::Integrity(format!(
                    "household {} has {} outcomes, expected {k}",
                    h.id,
                    h.y.len()
                )));
            }
            roster.entry(h.psu_id).or_default().push(i);
        }
        let psus: Vec<Psu> = roster
            .into_iter()
            .map(|(id, members)| Psu { id, members })
            .collect();
        let mut psu_pos = vec![0; households.len()];
        for (p, psu) in psus.iter().enumerate() {
            for &m in &psu.members {
                psu_pos[m] = p;
            }
        }
        Ok(Self {
            var_names,
            households,
            psus,
            psu_pos,
        })
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn households(&self) -> &[Household] {
        &self.households
    }

    pub fn household(&self, i: usize) -> &Household {
        &self.households[i]
    }

    pub fn psus(&self) -> &[Psu] {
        &self.psus
    }

    /// Position in [`Population::psus`] of the PSU holding household `i`.
    pub fn psu_of(&self, i: usize) -> usize {
        self.psu_pos[i]
    }

    /// PSU sizes in roster order.
    pub fn psu_sizes(&self) -> Vec<usize> {
        self.psus.iter().map(|p| p.members.len()).collect()
    }

    /// Per-variable population totals.
    pub fn totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_vars()];
        for h in &self.households {
            for (acc, v) in t.iter_mut().zip(&h.y) {
                *acc += v;
            }
        }
        t
    }
}

/// Labelling rules mapping source modes to response categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    A,
    B,
    C,
    D,
}

impl Rule {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Rule::A),
            "B" => Some(Rule::B),
            "C" => Some(Rule::C),
            "D" => Some(Rule::D),
            _ => None,
        }
    }
}

/// How the random 50/50 ftf/nonrespondent split of rules B and D is drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    /// Shuffle each pool and halve it; an odd pool gives the extra household
    /// to the nonrespondents.
    #[default]
    Exact,
    /// Independent fair coin per household.
    Bernoulli,
    /// Exact split followed by within-PSU swaps that shrink the difference
    /// between the ftf and nonrespondent totals of every variable, so the two
    /// halves have nearly equal means in the finite population.
    Balanced,
}

/// A population with one response category per household. Immutable once
/// built; the raw roster is shared, only the labels are owned.
#[derive(Debug, Clone)]
pub struct Pseudopopulation {
    raw: Arc<Population>,
    labels: Vec<Label>,
}

impl Pseudopopulation {
    /// Wraps a roster whose households already carry labels (for example one
    /// read back from an exported CSV).
    pub fn from_labelled(raw: Arc<Population>) -> Result<Self, PopulationError> {
        let labels = raw
            .households()
            .iter()
            .map(|h| {
                h.label.ok_or_else(|| {
                    PopulationError::Integrity(format!("household {} has no label", h.id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { raw, labels })
    }

    pub fn raw(&self) -> &Population {
        &self.raw
    }

    pub fn shared_raw(&self) -> Arc<Population> {
        Arc::clone(&self.raw)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Households with their labels filled in.
    pub fn to_households(&self) -> Vec<Household> {
        self.raw
            .households()
            .iter()
            .zip(&self.labels)
            .map(|(h, &l)| Household {
                label: Some(l),
                ..h.clone()
            })
            .collect()
    }
}

/// Applies a labelling rule to every household of a raw population.
pub fn build_pseudopopulation<R: Rng + ?Sized>(
    raw: Arc<Population>,
    rule: Rule,
    split: SplitMethod,
    rng: &mut R,
) -> Result<Pseudopopulation, PopulationError> {
    let modes = raw
        .households()
        .iter()
        .map(|h| {
            h.acs_mode.ok_or_else(|| {
                PopulationError::Integrity(format!("household {} has no source mode", h.id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut labels = vec![Label::NonResp; modes.len()];
    // pools to be split 50/50 between ftf respondents and nonrespondents
    let mut pools: Vec<AcsMode> = Vec::new();
    for (i, &m) in modes.iter().enumerate() {
        let fixed = match (rule, m) {
            (Rule::A, AcsMode::Web) => Some(Label::WebResp),
            (Rule::A, AcsMode::Mail) => Some(Label::FtfResp),
            (Rule::A, AcsMode::FtfLike) => Some(Label::NonResp),
            (Rule::B, AcsMode::Web) => Some(Label::WebResp),
            (Rule::C, AcsMode::Web) => Some(Label::WebResp),
            (Rule::C, _) => Some(Label::FtfResp),
            (Rule::D, AcsMode::Mail) => Some(Label::WebResp),
            _ => None,
        };
        if let Some(l) = fixed {
            labels[i] = l;
        } else if !pools.contains(&m) {
            pools.push(m);
        }
    }
    pools.sort_by_key(|m| m.code());

    for pool_mode in pools {
        let members: Vec<usize> = (0..modes.len()).filter(|&i| modes[i] == pool_mode).collect();
        match split {
            SplitMethod::Exact | SplitMethod::Balanced => {
                let mut shuffled = members.clone();
                shuffled.shuffle(rng);
                let half = shuffled.len() / 2;
                for (j, &i) in shuffled.iter().enumerate() {
                    labels[i] = if j < half {
                        Label::FtfResp
                    } else {
                        Label::NonResp
                    };
                }
            }
            SplitMethod::Bernoulli => {
                for &i in &members {
                    labels[i] = if rng.random_bool(0.5) {
                        Label::FtfResp
                    } else {
                        Label::NonResp
                    };
                }
            }
        }
        if split == SplitMethod::Balanced {
            balance_split(&raw, &members, &mut labels, rng);
        }
    }
    Ok(Pseudopopulation { raw, labels })
}

/// Random within-PSU swaps of an ftf respondent and a nonrespondent, kept
/// when they reduce the squared norm of the standardized total differences.
fn balance_split<R: Rng + ?Sized>(raw: &Population, members: &[usize], labels: &mut [Label], rng: &mut R) {
    if members.len() < 2 {
        return;
    }
    let p = raw.n_vars();
    let n = members.len() as f64;
    let mut scale = vec![0.0; p];
    for k in 0..p {
        let m = members.iter().map(|&i| raw.household(i).y[k]).sum::<f64>() / n;
        let v = members.iter().map(|&i| (raw.household(i).y[k] - m).powi(2)).sum::<f64>() / n;
        scale[k] = if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 };
    }
    let z = |i: usize, k: usize| raw.household(i).y[k] * scale[k];

    let mut by_psu: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
    let mut diff = vec![0.0; p];
    for &i in members {
        let side = usize::from(labels[i] == Label::NonResp);
        by_psu.entry(raw.psu_of(i)).or_default()[side].push(i);
        let sign = if side == 0 { 1.0 } else { -1.0 };
        for (k, d) in diff.iter_mut().enumerate() {
            *d += sign * z(i, k);
        }
    }
    let groups: Vec<[Vec<usize>; 2]> = by_psu.into_values().filter(|g| !g[0].is_empty() && !g[1].is_empty()).collect();
    if groups.is_empty() {
        return;
    }
    let weights: Vec<usize> = groups.iter().map(|g| g[0].len() + g[1].len()).collect();
    let pick = rand::distr::weighted::WeightedIndex::new(&weights).expect("positive group sizes");
    let mut groups = groups;
    let mut step = vec![0.0; p];
    for _ in 0..8 * members.len() {
        let g = &mut groups[rng.sample(&pick)];
        let a = rng.random_range(0..g[0].len());
        let b = rng.random_range(0..g[1].len());
        let (f, nr) = (g[0][a], g[1][b]);
        // moving f to the nonrespondents and nr to the respondents
        let mut gain = 0.0;
        for k in 0..p {
            step[k] = 2.0 * (z(f, k) - z(nr, k));
            gain += (diff[k] - step[k]).powi(2) - diff[k].powi(2);
        }
        if gain < 0.0 {
            for k in 0..p {
                diff[k] -= step[k];
            }
            g[0][a] = nr;
            g[1][b] = f;
            labels[f] = Label::NonResp;
            labels[nr] = Label::FtfResp;
        }
    }
}

/// Labels every household by a draw from its propensity vector.
pub fn draw_stochastic_labels<R: Rng + ?Sized>(
    raw: Arc<Population>,
    rng: &mut R,
) -> Result<Pseudopopulation, PopulationError> {
    let labels = raw
        .households()
        .iter()
        .map(|h| {
            h.propensity.map(|p| p.draw(rng)).ok_or_else(|| {
                PopulationError::Integrity(format!("household {} has no propensity", h.id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pseudopopulation { raw, labels })
}

/// Shares, group means and totals of a labelled population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub n_households: usize,
    pub gamma_w: f64,
    pub gamma_f: f64,
    /// `None` when no household carries the label.
    pub mean_w: Option<Vec<f64>>,
    pub mean_f: Option<Vec<f64>>,
    pub mean_n: Option<Vec<f64>>,
    pub total: Vec<f64>,
}

impl PopulationSummary {
    /// Total rebuilt from shares and group means.
    pub fn total_from_shares(&self) -> Vec<f64> {
        let n = self.n_households as f64;
        let gamma_n = 1.0 - self.gamma_w - self.gamma_f;
        (0..self.total.len())
            .map(|k| {
                let part = |share: f64, mean: &Option<Vec<f64>>| {
                    mean.as_ref().map_or(0.0, |m| share * m[k])
                };
                n * (part(self.gamma_w, &self.mean_w)
                    + part(self.gamma_f, &self.mean_f)
                    + part(gamma_n, &self.mean_n))
            })
            .collect()
    }
}

pub fn summarize(pop: &Pseudopopulation) -> Result<PopulationSummary, PopulationError> {
    if pop.is_empty() {
        return Err(PopulationError::Empty);
    }
    let k = pop.raw().n_vars();
    let mut sums = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut counts = [0usize; 3];
    for (h, &l) in pop.raw().households().iter().zip(pop.labels()) {
        let g = match l {
            Label::WebResp => 0,
            Label::FtfResp => 1,
            Label::NonResp => 2,
        };
        counts[g] += 1;
        for (acc, v) in sums[g].iter_mut().zip(&h.y) {
            *acc += v;
        }
    }
    let n = pop.len();
    let mean = |g: usize| {
        (counts[g] > 0).then(|| sums[g].iter().map(|s| s / counts[g] as f64).collect())
    };
    Ok(PopulationSummary {
        n_households: n,
        gamma_w: counts[0] as f64 / n as f64,
        gamma_f: counts[1] as f64 / n as f64,
        mean_w: mean(0),
        mean_f: mean(1),
        mean_n: mean(2),
        total: pop.raw().totals(),
    })
}

/// Source-mode shares, per-mode means and per-variable intraclass
/// correlation of a raw roster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawSummary {
    pub n_households: usize,
    pub n_psus: usize,
    pub var_names: Vec<String>,
    pub share_web: f64,
    pub share_mail: f64,
    pub share_ftf: f64,
    pub mean_web: Option<Vec<f64>>,
    pub mean_mail: Option<Vec<f64>>,
    pub mean_ftf: Option<Vec<f64>>,
    /// One-way ANOVA estimate over PSUs; `None` when not estimable.
    pub icc: Vec<Option<f64>>,
    pub total: Vec<f64>,
}

pub fn describe(pop: &Population) -> Result<RawSummary, PopulationError> {
    if pop.is_empty() {
        return Err(PopulationError::Empty);
    }
    let k = pop.n_vars();
    let mut sums = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut counts = [0usize; 3];
    for h in pop.households() {
        let g = match h.acs_mode {
            Some(AcsMode::Web) => 0,
            Some(AcsMode::Mail) => 1,
            Some(AcsMode::FtfLike) => 2,
            None => continue,
        };
        counts[g] += 1;
        for (acc, v) in sums[g].iter_mut().zip(&h.y) {
            *acc += v;
        }
    }
    let n = pop.len() as f64;
    let mean = |g: usize| (counts[g] > 0).then(|| sums[g].iter().map(|s| s / counts[g] as f64).collect());
    let groups: Vec<usize> = (0..pop.len()).map(|i| pop.psu_of(i)).collect();
    let icc = (0..k)
        .map(|j| {
            let values: Vec<f64> = pop.households().iter().map(|h| h.y[j]).collect();
            crate::designtools::anova_icc(&values, &groups)
        })
        .collect();
    Ok(RawSummary {
        n_households: pop.len(),
        n_psus: pop.psus().len(),
        var_names: pop.var_names().to_vec(),
        share_web: counts[0] as f64 / n,
        share_mail: counts[1] as f64 / n,
        share_ftf: counts[2] as f64 / n,
        mean_web: mean(0),
        mean_mail: mean(1),
        mean_ftf: mean(2),
        icc,
        total: pop.totals(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn hh(id: u64, psu: u64, y: f64, mode: AcsMode) -> Household {
        Household {
            id,
            psu_id: psu,
            y: vec![y],
            acs_mode: Some(mode),
            label: None,
            propensity: None,
        }
    }

    fn triple() -> Arc<Population> {
        Arc::new(
            Population::new(
                vec!["v1".into()],
                vec![
                    hh(1, 1, 1.0, AcsMode::Web),
                    hh(2, 1, 2.0, AcsMode::Mail),
                    hh(3, 2, 3.0, AcsMode::FtfLike),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn describe_counts_modes() {
        let d = describe(&triple()).unwrap();
        assert_eq!(d.n_psus, 2);
        assert!((d.share_web - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.mean_ftf, Some(vec![3.0]));
        assert_eq!(d.total, vec![6.0]);
    }

    #[test]
    fn rule_a_maps_modes_directly() {
        let p = build_pseudopopulation(triple(), Rule::A, SplitMethod::Exact, &mut seeded(1)).unwrap();
        assert_eq!(
            p.labels(),
            &[Label::WebResp, Label::FtfResp, Label::NonResp]
        );
        assert_eq!(p.raw().psus().len(), 2);
    }

    #[test]
    fn rule_c_has_no_nonrespondents() {
        let p = build_pseudopopulation(triple(), Rule::C, SplitMethod::Exact, &mut seeded(1)).unwrap();
        assert!(p.labels().iter().all(|&l| l != Label::NonResp));
    }

    #[test]
    fn rule_b_exact_split_halves_each_pool() {
        let hs: Vec<Household> = (0..10_000)
            .map(|i| hh(i, i / 100, i as f64, AcsMode::Mail))
            .collect();
        let raw = Arc::new(Population::new(vec!["v1".into()], hs).unwrap());
        let p = build_pseudopopulation(raw, Rule::B, SplitMethod::Exact, &mut seeded(3)).unwrap();
        let f = p.labels().iter().filter(|&&l| l == Label::FtfResp).count();
        // Binomial(10000, .5) has sd 50; exact split lands on the mean
        assert!((f as f64 - 5000.0).abs() <= 4.0 * 50.0);
        assert_eq!(f, 5000);
    }

    #[test]
    fn rule_b_odd_pool_gives_extra_to_nonrespondents() {
        let hs: Vec<Household> = (0..7).map(|i| hh(i, 1, 0.0, AcsMode::FtfLike)).collect();
        let raw = Arc::new(Population::new(vec!["v1".into()], hs).unwrap());
        let p = build_pseudopopulation(raw, Rule::B, SplitMethod::Exact, &mut seeded(3)).unwrap();
        let n = p.labels().iter().filter(|&&l| l == Label::NonResp).count();
        assert_eq!(n, 4);
    }

    #[test]
    fn balanced_split_narrows_mean_gap() {
        use rand::Rng;
        let mut rng = seeded(11);
        let hs: Vec<Household> = (0..6000)
            .map(|i| Household {
                id: i,
                psu_id: i % 40,
                y: vec![f64::from(u8::from(rng.random_bool(0.3))), rng.random_range(0.0..50.0)],
                acs_mode: Some(AcsMode::Mail),
                label: None,
                propensity: None,
            })
            .collect();
        let raw = Arc::new(Population::new(vec!["b".into(), "c".into()], hs).unwrap());
        let gap = |split| {
            let p = build_pseudopopulation(raw.clone(), Rule::B, split, &mut seeded(5)).unwrap();
            let s = summarize(&p).unwrap();
            let (f, n) = (s.mean_f.unwrap(), s.mean_n.unwrap());
            [(f[0] - n[0]).abs(), (f[1] - n[1]).abs() / 50.0]
        };
        let (exact, balanced) = (gap(SplitMethod::Exact), gap(SplitMethod::Balanced));
        // random halves differ by about 2 sd / sqrt(6000); swaps remove nearly all of it
        for k in 0..2 {
            assert!(balanced[k] < 1e-3, "{balanced:?}");
            assert!(balanced[k] < exact[k] / 5.0 || exact[k] < 1e-3, "{exact:?} {balanced:?}");
        }
    }

    #[test]
    fn rule_d_turns_mail_into_web() {
        let p = build_pseudopopulation(triple(), Rule::D, SplitMethod::Exact, &mut seeded(1)).unwrap();
        assert_eq!(p.label(1), Label::WebResp);
        assert_ne!(p.label(0), Label::WebResp);
    }

    #[test]
    fn missing_mode_is_an_integrity_error() {
        let mut h = hh(1, 1, 0.0, AcsMode::Web);
        h.acs_mode = None;
        let raw = Arc::new(Population::new(vec!["v1".into()], vec![h]).unwrap());
        let err = build_pseudopopulation(raw, Rule::A, SplitMethod::Exact, &mut seeded(1));
        assert!(matches!(err, Err(PopulationError::Integrity(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Population::new(
            vec!["v1".into()],
            vec![hh(1, 1, 0.0, AcsMode::Web), hh(1, 2, 0.0, AcsMode::Web)],
        );
        assert!(matches!(err, Err(PopulationError::Integrity(_))));
    }

    #[test]
    fn summary_of_hand_built_population() {
        // W: y=1,2  F: y=3,5  N: y=10,20
        let ys = [1.0, 2.0, 3.0, 5.0, 10.0, 20.0];
        let modes = [
            AcsMode::Web,
            AcsMode::Web,
            AcsMode::Mail,
            AcsMode::Mail,
            AcsMode::FtfLike,
            AcsMode::FtfLike,
        ];
        let hs = (0..6).map(|i| hh(i as u64, 1, ys[i], modes[i])).collect();
        let raw = Arc::new(Population::new(vec!["v1".into()], hs).unwrap());
        let p = build_pseudopopulation(raw, Rule::A, SplitMethod::Exact, &mut seeded(0)).unwrap();
        let s = summarize(&p).unwrap();
        assert_eq!(s.total, vec![41.0]);
        assert_eq!(s.mean_w, Some(vec![1.5]));
        assert_eq!(s.mean_f, Some(vec![4.0]));
        assert_eq!(s.mean_n, Some(vec![15.0]));
        assert!((s.gamma_w - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.total_from_shares()[0] - 41.0).abs() < 1e-9 * 41.0);
    }

    #[test]
    fn full_web_response_gives_gamma_one() {
        let hs = (0..5).map(|i| hh(i, 1, 1.0, AcsMode::Web)).collect();
        let raw = Arc::new(Population::new(vec!["v1".into()], hs).unwrap());
        let p = build_pseudopopulation(raw, Rule::C, SplitMethod::Exact, &mut seeded(0)).unwrap();
        let s = summarize(&p).unwrap();
        assert_eq!(s.gamma_w, 1.0);
        assert_eq!(s.total, vec![5.0]);
        assert!(s.mean_n.is_none());
    }

    #[test]
    fn full_response_total_has_no_nonrespondent_term() {
        let p = build_pseudopopulation(triple(), Rule::C, SplitMethod::Exact, &mut seeded(0)).unwrap();
        let s = summarize(&p).unwrap();
        let n = s.n_households as f64;
        let expected = n * (s.gamma_w * s.mean_w.as_ref().unwrap()[0]
            + s.gamma_f * s.mean_f.as_ref().unwrap()[0]);
        assert!((expected - s.total[0]).abs() < 1e-12);
    }

    #[test]
    fn empty_population_cannot_be_summarized() {
        let raw = Arc::new(Population::new(vec!["v1".into()], vec![]).unwrap());
        let p = build_pseudopopulation(raw, Rule::A, SplitMethod::Exact, &mut seeded(0)).unwrap();
        assert!(matches!(summarize(&p), Err(PopulationError::Empty)));
    }

    #[test]
    fn degenerate_propensities() {
        let mut rng = seeded(9);
        let web = PropensityVector::new(1.0, 0.0).unwrap();
        let ftf = PropensityVector::new(0.0, 1.0).unwrap();
        for _ in 0..200 {
            assert_eq!(web.draw(&mut rng), Label::WebResp);
            assert_eq!(ftf.draw(&mut rng), Label::FtfResp);
        }
        assert!(PropensityVector::new(0.0, 0.0).is_err());
        assert!(PropensityVector::new(0.7, 0.5).is_err());
        assert_eq!(web.phi_f_given_wc(), None);
    }

    #[test]
    fn stochastic_labels_match_propensities() {
        let phi = PropensityVector::new(0.3, 0.35).unwrap();
        let n = 100_000u64;
        let hs = (0..n)
            .map(|i| Household {
                propensity: Some(phi),
                ..hh(i, i / 500, 0.0, AcsMode::Web)
            })
            .collect();
        let raw = Arc::new(Population::new(vec!["v1".into()], hs).unwrap());
        let p = draw_stochastic_labels(raw, &mut seeded(11)).unwrap();
        let s = summarize(&p).unwrap();
        for (share, target) in [(s.gamma_w, 0.3), (s.gamma_f, 0.35)] {
            let sd = (target * (1.0 - target) / n as f64).sqrt();
            assert!((share - target).abs() <= 4.0 * sd, "{share} vs {target}");
        }
    }

    #[test]
    fn missing_propensity_is_an_integrity_error() {
        let err = draw_stochastic_labels(triple(), &mut seeded(1));
        assert!(matches!(err, Err(PopulationError::Integrity(_))));
    }
}

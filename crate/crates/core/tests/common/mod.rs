//! Independent oracles shared by the integration tests: closed-form
//! estimators written in mean form, a generator of small random inputs and
//! an exact enumeration of every sample and subsample outcome of the
//! designs on a tiny population.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use multimode::estimators::{estimate, CompositeFactors, EstimatorId, EstimatorResult, Inputs, SampleTag};
use multimode::population::AcsMode;
use multimode::sampling::{DesignKind, PsuSubsample};
use multimode::{DrawnSample, Household, Population, SampledUnit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// closed forms

/// Weighted sums of one sample in the notation of the mean-form estimators.
#[derive(Debug, Clone)]
pub struct Parts {
    /// Σd over the sample.
    pub n: f64,
    /// Σd δ_w
    pub web: f64,
    /// Σd (1 − δ_w)
    pub nonresp: f64,
    /// Σd (1 − δ_w) over followed-up units
    pub followed: f64,
    /// Σd δ_f
    pub ftf: f64,
    pub ybar_w: Vec<f64>,
    pub ybar_f: Vec<f64>,
}

pub fn parts(pop: &Population, s: &DrawnSample) -> Parts {
    let k = pop.n_vars();
    let (mut n, mut web, mut nonresp, mut followed, mut ftf) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut sw = vec![0.0; k];
    let mut sf = vec![0.0; k];
    for u in &s.units {
        let y = &pop.household(u.household).y;
        n += u.d;
        if u.delta_w {
            web += u.d;
            for j in 0..k {
                sw[j] += u.d * y[j];
            }
        } else {
            nonresp += u.d;
            if u.in_ftf_subsample {
                followed += u.d;
            }
        }
        if u.delta_f {
            ftf += u.d;
            for j in 0..k {
                sf[j] += u.d * y[j];
            }
        }
    }
    let mean = |v: Vec<f64>, w: f64| v.into_iter().map(|x| if w > 0.0 { x / w } else { 0.0 }).collect();
    Parts {
        n,
        web,
        nonresp,
        followed,
        ftf,
        ybar_w: mean(sw, web),
        ybar_f: mean(sf, ftf),
    }
}

fn inverse_rate(s: &DrawnSample) -> f64 {
    match (&s.psu_subsample, s.omega) {
        (Some(p), _) => 1.0 / p.rate,
        (None, Some(w)) => 1.0 / w,
        (None, None) => 1.0,
    }
}

/// N̂ [γ̂_W/(γ̂_W + γ̂_F) ȳ_W + γ̂_F/(γ̂_W + γ̂_F) ȳ_F]
pub fn closed_t1(pop: &Population, s: &DrawnSample, a: f64) -> Vec<f64> {
    let p = parts(pop, s);
    let n_hat = p.web + a * p.followed;
    let g_w = p.web / n_hat;
    let r_f = p.ftf / p.followed;
    let g_f = (1.0 - g_w) * r_f;
    (0..pop.n_vars())
        .map(|j| n_hat * (g_w / (g_w + g_f) * p.ybar_w[j] + g_f / (g_w + g_f) * p.ybar_f[j]))
        .collect()
}

/// N̂ [γ̂_W ȳ_W + (1 − γ̂_W) ȳ_F]
pub fn closed_t2(pop: &Population, s: &DrawnSample, a: f64) -> Vec<f64> {
    let p = parts(pop, s);
    let n_hat = p.web + a * p.followed;
    let g_w = p.web / n_hat;
    (0..pop.n_vars())
        .map(|j| n_hat * (g_w * p.ybar_w[j] + (1.0 - g_w) * p.ybar_f[j]))
        .collect()
}

/// N̂_A ȳ_WA
pub fn closed_ta(pop: &Population, sa: &DrawnSample) -> Vec<f64> {
    let p = parts(pop, sa);
    p.ybar_w.iter().map(|m| p.n * m).collect()
}

pub fn closed_tdf1(pop: &Population, sa: &DrawnSample, sb: &DrawnSample, lambda: f64) -> Vec<f64> {
    let ta = closed_ta(pop, sa);
    let tb = closed_t1(pop, sb, inverse_rate(sb));
    ta.iter().zip(&tb).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

/// N̂ γ̂_W [κ ȳ_WA + (1 − κ) ȳ_WB] + N̂ (1 − γ̂_W) ȳ_FB with γ̂_W pooled over
/// both samples.
pub fn closed_tdf2(pop: &Population, sa: &DrawnSample, sb: &DrawnSample, kappa: f64, known_n: Option<f64>) -> Vec<f64> {
    let pa = parts(pop, sa);
    let pb = parts(pop, sb);
    let n_a = pa.n;
    let n_b = pb.web + inverse_rate(sb) * pb.followed;
    let g_w = (pa.web + pb.web) / (n_a + n_b);
    let n_hat = known_n.unwrap_or(kappa * n_a + (1.0 - kappa) * n_b);
    (0..pop.n_vars())
        .map(|j| {
            n_hat * g_w * (kappa * pa.ybar_w[j] + (1.0 - kappa) * pb.ybar_w[j])
                + n_hat * (1.0 - g_w) * pb.ybar_f[j]
        })
        .collect()
}

/// Closed form of any estimator on the given inputs.
pub fn closed_form(id: EstimatorId, inputs: &Inputs, f: &CompositeFactors) -> Vec<f64> {
    let (pop, b) = (inputs.pop, inputs.b);
    match id {
        EstimatorId::T1 | EstimatorId::TB1 => closed_t1(pop, b, inverse_rate(b)),
        EstimatorId::T2 => closed_t2(pop, b, inverse_rate(b)),
        EstimatorId::T2AltOmega => {
            let p = parts(pop, b);
            closed_t2(pop, b, p.nonresp / p.followed)
        }
        EstimatorId::TA => closed_ta(pop, inputs.a.expect("sample A")),
        EstimatorId::TDF1 => closed_tdf1(pop, inputs.a.expect("sample A"), b, f.lambda),
        EstimatorId::TDF2 => closed_tdf2(pop, inputs.a.expect("sample A"), b, f.kappa, inputs.known_n),
    }
}

/// `Σ w_k y_k` recomputed from the reported respondent weights.
pub fn weighted_sum(inputs: &Inputs, r: &EstimatorResult) -> Vec<f64> {
    let mut out = vec![0.0; inputs.pop.n_vars()];
    for w in &r.weights {
        let s = match w.sample {
            SampleTag::A => inputs.a.expect("sample A"),
            SampleTag::B => inputs.b,
        };
        let y = &inputs.pop.household(s.units[w.unit].household).y;
        for (o, v) in out.iter_mut().zip(y) {
            *o += w.weight * v;
        }
    }
    out
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// random small inputs

/// A population and hand-built samples with arbitrary weights and response
/// patterns.
pub struct RandomCase {
    pub pop: Population,
    pub a: DrawnSample,
    pub b: DrawnSample,
    pub factors: CompositeFactors,
    pub known_n: Option<f64>,
}

impl RandomCase {
    pub fn inputs(&self) -> Inputs<'_> {
        Inputs {
            known_n: self.known_n,
            ..Inputs::hybrid(&self.pop, &self.a, &self.b)
        }
    }
}

fn household(id: u64, psu_id: u64, y: Vec<f64>) -> Household {
    Household {
        id,
        psu_id,
        y,
        acs_mode: Some(AcsMode::Web),
        label: None,
        propensity: None,
    }
}

/// Follow-up kinds of the random clustered sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FollowKind {
    All,
    Units,
    Psus,
}

/// One random case. Sample A is web-only; sample B has web respondents, a
/// followed-up part with at least one ftf respondent, and some unfollowed
/// nonrespondents unless everyone is followed up.
pub fn random_case(rng: &mut ChaCha8Rng, kind: FollowKind) -> RandomCase {
    let k = rng.random_range(1..=4);
    let n_a = rng.random_range(3..=20);
    let n_psus = rng.random_range(2..=5u64);
    let per_psu = rng.random_range(3..=8);
    let mut hs = Vec::new();
    let y = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..k)
            .map(|j| if j % 2 == 0 { f64::from(u8::from(rng.random_bool(0.4))) + 0.5 } else { rng.random_range(1.0..100.0) })
            .collect()
    };

    let mut a_units = Vec::new();
    for i in 0..n_a {
        let id = hs.len() as u64;
        hs.push(household(id, 1000, y(rng)));
        a_units.push(SampledUnit {
            household: hs.len() - 1,
            id,
            psu_id: 1000,
            d: rng.random_range(1.0..80.0),
            in_ftf_subsample: false,
            delta_w: i == 0 || rng.random_bool(0.4),
            delta_f: false,
        });
    }

    let followed_psus: BTreeSet<u64> = match kind {
        FollowKind::Psus => {
            let c = rng.random_range(1..n_psus);
            rand::seq::index::sample(rng, n_psus as usize, c as usize).into_iter().map(|i| i as u64).collect()
        }
        _ => (0..n_psus).collect(),
    };
    let omega = match kind {
        FollowKind::Units => rng.random_range(0.2..1.0),
        _ => 1.0,
    };
    let mut b_units = Vec::new();
    for p in 0..n_psus {
        for _ in 0..per_psu {
            let id = hs.len() as u64;
            hs.push(household(id, p, y(rng)));
            let web = rng.random_bool(0.35);
            let followed = !web
                && followed_psus.contains(&p)
                && match kind {
                    FollowKind::Units => rng.random_bool(omega),
                    _ => true,
                };
            b_units.push(SampledUnit {
                household: hs.len() - 1,
                id,
                psu_id: p,
                d: rng.random_range(1.0..80.0),
                in_ftf_subsample: followed,
                delta_w: web,
                delta_f: followed && rng.random_bool(0.6),
            });
        }
    }
    // guarantee a web respondent and an ftf respondent in B
    let first_followed = *followed_psus.iter().next().expect("one followed PSU") as usize * per_psu;
    let u = &mut b_units[first_followed];
    (u.delta_w, u.in_ftf_subsample, u.delta_f) = (false, true, true);
    let other = b_units.iter().position(|u| u.household != b_units[first_followed].household).expect("two units");
    if !b_units.iter().any(|u| u.delta_w) {
        let u = &mut b_units[other];
        (u.delta_w, u.in_ftf_subsample, u.delta_f) = (true, false, false);
    }

    let pop = Population::new((0..k).map(|j| format!("y{j}")).collect(), hs).expect("valid roster");
    let a = DrawnSample {
        units: a_units,
        design: DesignKind::Unclustered,
        psu_selection_probs: BTreeMap::new(),
        omega: None,
        psu_subsample: None,
    };
    let b = DrawnSample {
        units: b_units,
        design: DesignKind::TwoStage,
        psu_selection_probs: (0..n_psus).map(|p| (p, 0.5)).collect(),
        omega: (kind == FollowKind::Units).then_some(omega),
        psu_subsample: (kind == FollowKind::Psus).then(|| PsuSubsample {
            rate: followed_psus.len() as f64 / n_psus as f64,
            psus: followed_psus,
        }),
    };
    let factors = CompositeFactors::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
    let known_n = rng.random_bool(0.3).then(|| rng.random_range(100.0..5000.0));
    RandomCase { pop, a, b, factors, known_n }
}

/// Largest relative gap between the weight-based total, the reported total
/// and the closed form over all variables.
pub fn duality_gap(case: &RandomCase, id: EstimatorId) -> Result<f64, String> {
    let inputs = case.inputs();
    let r = estimate(id, &inputs, &case.factors).map_err(|e| format!("{id:?}: {e}"))?;
    let closed = closed_form(id, &inputs, &case.factors);
    let by_weights = weighted_sum(&inputs, &r);
    let mut worst: f64 = 0.0;
    for j in 0..closed.len() {
        worst = worst.max(rel_diff(by_weights[j], closed[j])).max(rel_diff(r.totals[j], closed[j]));
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// enumeration

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact distribution of the PSU sets chosen by randomized systematic PPS:
/// every frame order is equally likely and the start is uniform on [0, 1).
pub fn pps_outcomes(pis: &[f64]) -> Vec<(BTreeSet<usize>, f64)> {
    let perms = permutations(pis.len());
    let mut acc: BTreeMap<BTreeSet<usize>, f64> = BTreeMap::new();
    for order in &perms {
        let mut cuts = vec![0.0, 1.0];
        let mut cum = 0.0;
        for &i in order {
            cum += pis[i];
            cuts.push(cum - cum.floor());
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 1e-15 {
                continue;
            }
            let start = 0.5 * (w[0] + w[1]);
            let mut set = BTreeSet::new();
            let mut lo = 0.0;
            for &i in order {
                let hi = lo + pis[i];
                // a point start + j lies in [lo, hi)
                if (hi - start).ceil() > (lo - start).ceil() {
                    set.insert(i);
                }
                lo = hi;
            }
            *acc.entry(set).or_default() += len / perms.len() as f64;
        }
    }
    acc.into_iter().collect()
}

/// Distribution of the follow-up flags among `b` web nonrespondents when a
/// fraction `omega` is taken: the count is ⌊bω⌋ or ⌈bω⌉ with mean bω and the
/// subset is uniform given the count.
pub fn unit_subsample_outcomes(b: usize, omega: f64) -> Vec<(Vec<usize>, f64)> {
    let exp = b as f64 * omega;
    let lo = exp.floor();
    let frac = exp - lo;
    let mut out = Vec::new();
    let mut add = |k: usize, p: f64| {
        if p <= 0.0 {
            return;
        }
        let subs = subsets(b, k);
        let each = p / subs.len() as f64;
        for s in subs {
            out.push((s, each));
        }
    };
    if frac < 1e-12 {
        add(lo as usize, 1.0);
    } else {
        add(lo as usize, 1.0 - frac);
        add(lo as usize + 1, frac);
    }
    out
}

/// A twelve-household population in three PSUs of sizes 3, 4 and 5 with one
/// web respondent per PSU and every other household responding by ftf.
pub struct TinyWorld {
    pub pop: Population,
    pub web: Vec<bool>,
    pub truth: Vec<f64>,
}

pub fn tiny_world() -> TinyWorld {
    let sizes = [3usize, 4, 5];
    let ys: [[f64; 2]; 12] = [
        [3.0, 1.0],
        [7.5, 0.0],
        [1.25, 1.0],
        [12.0, 1.0],
        [0.5, 0.0],
        [9.0, 0.0],
        [4.0, 1.0],
        [2.0, 1.0],
        [15.0, 0.0],
        [6.5, 1.0],
        [0.75, 0.0],
        [11.0, 1.0],
    ];
    let mut hs = Vec::new();
    let mut web = Vec::new();
    let mut i = 0;
    for (p, &s) in sizes.iter().enumerate() {
        for j in 0..s {
            hs.push(household(i as u64 + 1, p as u64 + 1, ys[i].to_vec()));
            web.push(j == 0);
            i += 1;
        }
    }
    let truth = (0..2).map(|k| ys.iter().map(|y| y[k]).sum()).collect();
    TinyWorld {
        pop: Population::new(vec!["y".into(), "z".into()], hs).expect("valid roster"),
        web,
        truth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TinyDesign {
    /// Simple random sample of `n` households, unit follow-up rate `omega`.
    Unclustered { n: usize, omega: f64 },
    /// Two PSUs by PPS and three households in each, unit follow-up rate
    /// `omega` inside every PSU.
    TwoStage { omega: f64 },
    /// Two PSUs and three households in each; all nonrespondents of
    /// `followed` PSUs are followed up.
    PsuSubsample { followed: usize },
}

fn tiny_sample(w: &TinyWorld, picked: &[usize], d: f64, kind: DesignKind, probs: BTreeMap<u64, f64>) -> DrawnSample {
    let units = picked
        .iter()
        .map(|&i| {
            let h = w.pop.household(i);
            SampledUnit {
                household: i,
                id: h.id,
                psu_id: h.psu_id,
                d,
                in_ftf_subsample: false,
                delta_w: w.web[i],
                delta_f: false,
            }
        })
        .collect();
    DrawnSample {
        units,
        design: kind,
        psu_selection_probs: probs,
        omega: None,
        psu_subsample: None,
    }
}

/// Every first-phase sample with its probability.
fn first_phase(w: &TinyWorld, design: TinyDesign) -> Vec<(DrawnSample, f64)> {
    let big_n = w.pop.len();
    match design {
        TinyDesign::Unclustered { n, .. } => {
            let all = subsets(big_n, n);
            let p = 1.0 / all.len() as f64;
            all.into_iter()
                .map(|s| (tiny_sample(w, &s, big_n as f64 / n as f64, DesignKind::Unclustered, BTreeMap::new()), p))
                .collect()
        }
        TinyDesign::TwoStage { .. } | TinyDesign::PsuSubsample { .. } => {
            let (n_psus, m) = (2usize, 3usize);
            let sizes: Vec<usize> = w.pop.psus().iter().map(|p| p.members.len()).collect();
            let total: usize = sizes.iter().sum();
            let pis: Vec<f64> = sizes.iter().map(|&s| (n_psus * s) as f64 / total as f64).collect();
            let f = (n_psus * m) as f64 / total as f64;
            let mut out = Vec::new();
            for (set, p_set) in pps_outcomes(&pis) {
                // fixed take of m households per selected PSU
                let per_psu: Vec<Vec<Vec<usize>>> = set
                    .iter()
                    .map(|&q| {
                        let members = &w.pop.psus()[q].members;
                        assert!((f / pis[q] * members.len() as f64 - m as f64).abs() < 1e-9);
                        subsets(members.len(), m)
                            .into_iter()
                            .map(|s| s.into_iter().map(|j| members[j]).collect())
                            .collect()
                    })
                    .collect();
                let n_combos: usize = per_psu.iter().map(Vec::len).product();
                let probs: BTreeMap<u64, f64> = set.iter().map(|&q| (w.pop.psus()[q].id, pis[q])).collect();
                for combo in 0..n_combos {
                    let mut rest = combo;
                    let mut picked = Vec::new();
                    for options in &per_psu {
                        picked.extend(&options[rest % options.len()]);
                        rest /= options.len();
                    }
                    picked.sort_unstable();
                    out.push((
                        tiny_sample(w, &picked, 1.0 / f, DesignKind::TwoStage, probs.clone()),
                        p_set / n_combos as f64,
                    ));
                }
            }
            out
        }
    }
}

/// Applies follow-up and full ftf response to the flagged units.
fn respond(mut s: DrawnSample, flagged: &[usize]) -> DrawnSample {
    for &i in flagged {
        s.units[i].in_ftf_subsample = true;
        s.units[i].delta_f = true;
    }
    s
}

/// Every complete outcome (sample, follow-up and response) with its
/// probability.
pub fn tiny_outcomes(w: &TinyWorld, design: TinyDesign) -> Vec<(DrawnSample, f64)> {
    let mut out = Vec::new();
    for (s, p) in first_phase(w, design) {
        match design {
            TinyDesign::Unclustered { omega, .. } | TinyDesign::TwoStage { omega } => {
                // unclustered samples form one group; clustered ones subsample
                // inside every PSU independently
                let groups: Vec<Vec<usize>> = if s.design == DesignKind::Unclustered {
                    vec![(0..s.units.len()).filter(|&i| !s.units[i].delta_w).collect()]
                } else {
                    let mut g: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
                    for (i, u) in s.units.iter().enumerate() {
                        if !u.delta_w {
                            g.entry(u.psu_id).or_default().push(i);
                        }
                    }
                    g.into_values().collect()
                };
                let mut partial: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), p)];
                for g in &groups {
                    let options = unit_subsample_outcomes(g.len(), omega);
                    partial = partial
                        .into_iter()
                        .flat_map(|(flags, q)| {
                            options.iter().map(move |(sub, r)| {
                                let mut f = flags.clone();
                                f.extend(sub.iter().map(|&j| g[j]));
                                (f, q * r)
                            })
                        })
                        .collect();
                }
                for (flags, q) in partial {
                    let mut t = respond(s.clone(), &flags);
                    t.omega = Some(omega);
                    out.push((t, q));
                }
            }
            TinyDesign::PsuSubsample { followed } => {
                let ids = s.psu_ids();
                let choices = subsets(ids.len(), followed);
                for c in &choices {
                    let chosen: BTreeSet<u64> = c.iter().map(|&j| ids[j]).collect();
                    let flags: Vec<usize> = (0..s.units.len())
                        .filter(|&i| !s.units[i].delta_w && chosen.contains(&s.units[i].psu_id))
                        .collect();
                    let mut t = respond(s.clone(), &flags);
                    t.psu_subsample = Some(PsuSubsample {
                        psus: chosen,
                        rate: followed as f64 / ids.len() as f64,
                    });
                    out.push((t, p / choices.len() as f64));
                }
            }
        }
    }
    out
}

/// Exact expectation of T2 under a design, with the total outcome
/// probability (which must be one).
pub fn t2_expectation(w: &TinyWorld, design: TinyDesign) -> (Vec<f64>, f64, usize) {
    let outcomes = tiny_outcomes(w, design);
    let mut e = vec![0.0; w.pop.n_vars()];
    let mut mass = 0.0;
    for (s, p) in &outcomes {
        let r = estimate(EstimatorId::T2, &Inputs::single(&w.pop, s), &CompositeFactors::new(1.0, 1.0))
            .expect("T2 defined under full ftf response");
        for (acc, t) in e.iter_mut().zip(&r.totals) {
            *acc += p * t;
        }
        mass += p;
    }
    (e, mass, outcomes.len())
}

pub fn tiny_designs() -> Vec<(&'static str, TinyDesign)> {
    vec![
        ("unclustered, all followed", TinyDesign::Unclustered { n: 6, omega: 1.0 }),
        ("unclustered, half followed", TinyDesign::Unclustered { n: 6, omega: 0.5 }),
        ("unclustered n=5, half followed", TinyDesign::Unclustered { n: 5, omega: 0.5 }),
        ("two-stage / hybrid clustered part, all followed", TinyDesign::TwoStage { omega: 1.0 }),
        ("two-stage, half followed", TinyDesign::TwoStage { omega: 0.5 }),
        ("PSU subsampling, 1 of 2 PSUs", TinyDesign::PsuSubsample { followed: 1 }),
        ("PSU subsampling, 2 of 2 PSUs", TinyDesign::PsuSubsample { followed: 2 }),
    ]
}

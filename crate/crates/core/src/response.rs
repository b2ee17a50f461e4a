//! Data-collection protocol and weighted response rates.

use serde::{Deserialize, Serialize};

use crate::population::{Label, Pseudopopulation};
use crate::sampling::DrawnSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    WebOnly,
    WebThenFtf,
}

/// Sets the response indicators from the pseudopopulation labels. Ftf
/// response is only observed for units flagged for follow-up.
pub fn apply_protocol(sample: &mut DrawnSample, pop: &Pseudopopulation, protocol: Protocol) {
    apply_protocol_with(sample, |i| pop.label(i), protocol);
}

/// Same as [`apply_protocol`] with labels looked up by household position.
pub fn apply_protocol_with(sample: &mut DrawnSample, label_of: impl Fn(usize) -> Label, protocol: Protocol) {
    for u in &mut sample.units {
        let label = label_of(u.household);
        u.delta_w = label == Label::WebResp;
        u.delta_f = protocol == Protocol::WebThenFtf && label == Label::FtfResp && u.in_ftf_subsample;
    }
}

/// Weighted counts behind the response rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct WeightedCounts {
    /// `Σd`
    pub total: f64,
    /// `Σd δ_w`
    pub web: f64,
    /// `Σd (1 − δ_w)`
    pub nonresp: f64,
    /// `Σd (1 − δ_w)` over units followed up
    pub followed: f64,
    /// `Σd δ_f`
    pub ftf: f64,
}

impl WeightedCounts {
    pub fn of(sample: &DrawnSample) -> Self {
        let mut c = Self::default();
        for u in &sample.units {
            c.total += u.d;
            if u.delta_w {
                c.web += u.d;
            } else {
                c.nonresp += u.d;
                if u.in_ftf_subsample {
                    c.followed += u.d;
                }
            }
            if u.delta_f {
                c.ftf += u.d;
            }
        }
        c
    }

    /// Web nonrespondents exist but none was followed up.
    pub fn follow_up_degenerate(&self) -> bool {
        self.nonresp > 0.0 && self.followed <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResponseRates {
    pub r_w: f64,
    /// Conditional ftf rate among followed-up web nonrespondents; `None`
    /// when nobody was followed up.
    pub r_f: Option<f64>,
    pub r: f64,
    pub gamma_w_hat: f64,
    pub gamma_f_hat: f64,
    pub n_hat: f64,
    pub counts: WeightedCounts,
}

impl ResponseRates {
    /// Web nonrespondents were present but no follow-up denominator exists.
    pub fn is_degenerate(&self) -> bool {
        self.counts.follow_up_degenerate()
    }
}

pub fn response_rates(sample: &DrawnSample) -> ResponseRates {
    let c = WeightedCounts::of(sample);
    let r_w = if c.total > 0.0 { c.web / c.total } else { 0.0 };
    let r_f = (c.followed > 0.0).then(|| c.ftf / c.followed);
    let gamma_f = (1.0 - r_w) * r_f.unwrap_or(0.0);
    ResponseRates {
        r_w,
        r_f,
        r: 1.0 - (1.0 - r_w) * (1.0 - r_f.unwrap_or(0.0)),
        gamma_w_hat: r_w,
        gamma_f_hat: gamma_f,
        n_hat: c.total,
        counts: c,
    }
}

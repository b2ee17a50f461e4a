//! CSV household microdata.
//!
//! Layout: a header row, then one household per row with columns
//! `id, psu, mode, v1..vK`. `mode` takes `WEB`, `MAIL` or `FTF`. Exported
//! populations append a `label` column (`W`/`F`/`N`) and, when present, the
//! propensity columns `phi_w, phi_f`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcsMode, Household, Label, Population, PopulationError, PropensityVector};

/// Column mapping for a microdata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrodataSchema {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_psu")]
    pub psu: String,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub variables: Vec<String>,
    /// Optional label column; read when the header has it.
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_id() -> String {
    "id".into()
}
fn default_psu() -> String {
    "psu".into()
}
fn default_mode() -> String {
    "mode".into()
}
fn default_label() -> String {
    "label".into()
}

impl MicrodataSchema {
    pub fn with_variables<I, S>(variables: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: default_id(),
            psu: default_psu(),
            mode: default_mode(),
            variables: variables.into_iter().map(Into::into).collect(),
            label: default_label(),
        }
    }
}

pub fn load_microdata(path: &Path, schema: &MicrodataSchema) -> Result<Population, PopulationError> {
    let file = std::fs::File::open(path)?;
    read_microdata(file, schema)
}

pub fn read_microdata<R: Read>(reader: R, schema: &MicrodataSchema) -> Result<Population, PopulationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PopulationError::MissingColumn {
                column: name.to_string(),
            })
    };
    let id_col = find(&schema.id)?;
    let psu_col = find(&schema.psu)?;
    let mode_col = find(&schema.mode)?;
    let var_cols = schema
        .variables
        .iter()
        .map(|v| find(v))
        .collect::<Result<Vec<_>, _>>()?;
    let label_col = headers.iter().position(|h| h == schema.label);
    let phi_cols = match (
        headers.iter().position(|h| h == "phi_w"),
        headers.iter().position(|h| h == "phi_f"),
    ) {
        (Some(w), Some(f)) => Some((w, f)),
        _ => None,
    };

    let mut households = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize| record.get(col).unwrap_or("");
        let parse_err = |col: usize| PopulationError::Parse {
            line,
            column: headers.get(col).unwrap_or("").to_string(),
            value: field(col).to_string(),
        };
        let id: u64 = field(id_col).parse().map_err(|_| parse_err(id_col))?;
        let psu_id: u64 = field(psu_col).parse().map_err(|_| parse_err(psu_col))?;
        let acs_mode = match field(mode_col) {
            "" => None,
            s => Some(AcsMode::parse(s).ok_or_else(|| parse_err(mode_col))?),
        };
        let y = var_cols
            .iter()
            .map(|&c| {
                field(c)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(c))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let label = match label_col.map(field) {
            None | Some("") => None,
            Some(s) => Some(Label::parse(s).ok_or_else(|| parse_err(label_col.unwrap()))?),
        };
        let propensity = match phi_cols {
            Some((w, f)) if !field(w).is_empty() => {
                let pw: f64 = field(w).parse().map_err(|_| parse_err(w))?;
                let pf: f64 = field(f).parse().map_err(|_| parse_err(f))?;
                Some(PropensityVector::new(pw, pf).map_err(|_| parse_err(w))?)
            }
            _ => None,
        };
        households.push(Household {
            id,
            psu_id,
            y,
            acs_mode,
            label,
            propensity,
        });
    }
    Population::new(schema.variables.clone(), households)
}

/// Writes households in the microdata layout. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_population<W: Write>(
    writer: W,
    var_names: &[String],
    households: &[Household],
) -> Result<(), PopulationError> {
    let with_label = households.iter().any(|h| h.label.is_some());
    let with_phi = households.iter().any(|h| h.propensity.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["id".into(), "psu".into(), "mode".into()];
    header.extend(var_names.iter().cloned());
    if with_label {
        header.push("label".into());
    }
    if with_phi {
        header.push("phi_w".into());
        header.push("phi_f".into());
    }
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for h in households {
        row.clear();
        row.push(h.id.to_string());
        row.push(h.psu_id.to_string());
        row.push(h.acs_mode.map_or("", AcsMode::code).to_string());
        row.extend(h.y.iter().map(|v| v.to_string()));
        if with_label {
            row.push(h.label.map_or("", Label::code).to_string());
        }
        if with_phi {
            match h.propensity {
                Some(p) => {
                    row.push(p.phi_w().to_string());
                    row.push(p.phi_f().to_string());
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

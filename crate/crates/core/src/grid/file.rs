//! On-disk JSON schema for feeders.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};

use super::{invalid, Branch, Bus, GridError, GridModel, Phase, Transformer};

/// Bus identifiers may be written as strings or integers.
fn bus_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(i64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::N(n) => n.to_string(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<BusFile>,
    pub branches: Vec<BranchFile>,
    pub source: SourceFile,
    #[serde(default)]
    pub transformer: Option<TransformerFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusFile {
    #[serde(deserialize_with = "bus_id")]
    pub id: String,
    pub phases: Vec<Phase>,
}

/// `y_block` is in siemens; entries are `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchFile {
    #[serde(deserialize_with = "bus_id")]
    pub from: String,
    #[serde(deserialize_with = "bus_id")]
    pub to: String,
    pub y_block: Vec<Vec<[f64; 2]>>,
}

/// Source phase voltages in p.u.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    #[serde(deserialize_with = "bus_id")]
    pub bus: String,
    pub v: [[f64; 2]; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerFile {
    #[serde(deserialize_with = "bus_id")]
    pub primary: String,
    #[serde(deserialize_with = "bus_id")]
    pub secondary: String,
    pub tap_min: f64,
    pub tap_max: f64,
    #[serde(default = "default_tap_step")]
    pub tap_step: f64,
}

fn default_tap_step() -> f64 {
    0.0125
}

pub(super) fn convert(file: &GridFile) -> Result<GridModel, GridError> {
    if !(file.base_mva > 0.0 && file.base_mva.is_finite()) {
        return Err(invalid("base_mva", "must be positive"));
    }
    if !(file.base_kv > 0.0 && file.base_kv.is_finite()) {
        return Err(invalid("base_kv", "must be positive"));
    }
    // Z_base = kV^2 / MVA; y_pu = y_siemens * Z_base.
    let z_base = file.base_kv * file.base_kv / file.base_mva;

    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(file.buses.len());
    for (k, b) in file.buses.iter().enumerate() {
        if ids.insert(b.id.as_str(), k).is_some() {
            return Err(invalid(format!("buses[{k}].id"), format!("duplicate id `{}`", b.id)));
        }
        let mut phases = b.phases.clone();
        phases.sort();
        phases.dedup();
        if phases.is_empty() || phases.len() != b.phases.len() {
            return Err(invalid(
                format!("buses[{k}].phases"),
                "must be a non-empty set of distinct phases",
            ));
        }
        buses.push(Bus {
            id: b.id.clone(),
            phases,
        });
    }
    let lookup = |id: &str| ids.get(id).copied().ok_or_else(|| GridError::UnknownBus(id.to_string()));

    let source = lookup(&file.source.bus)?;
    if buses[source].phases.len() != 3 {
        return Err(invalid("source.bus", "source bus must carry all three phases"));
    }
    let mut v_source = [Complex64::new(0.0, 0.0); 3];
    for (v, raw) in v_source.iter_mut().zip(&file.source.v) {
        if !raw.iter().all(|x| x.is_finite()) {
            return Err(invalid("source.v", "non-finite entry"));
        }
        *v = Complex64::new(raw[0], raw[1]);
        if v.norm() <= 0.0 {
            return Err(invalid("source.v", "zero phase voltage"));
        }
    }

    let mut branches = Vec::with_capacity(file.branches.len());
    for (k, br) in file.branches.iter().enumerate() {
        let from = lookup(&br.from)?;
        let to = lookup(&br.to)?;
        if from == to {
            return Err(invalid(format!("branches[{k}]"), "self loop"));
        }
        let (pf, pt) = (&buses[from].phases, &buses[to].phases);
        let phases = if pf.len() <= pt.len() { pf.clone() } else { pt.clone() };
        let wider = if pf.len() <= pt.len() { pt } else { pf };
        if !phases.iter().all(|p| wider.contains(p)) {
            return Err(invalid(
                format!("branches[{k}]"),
                "phases of the narrower bus must be a subset of the wider bus",
            ));
        }
        let m = phases.len();
        if br.y_block.len() != m || br.y_block.iter().any(|r| r.len() != m) {
            return Err(invalid(
                format!("branches[{k}].y_block"),
                format!("expected a {m}x{m} block"),
            ));
        }
        let y = DMatrix::from_fn(m, m, |r, c| {
            let [re, im] = br.y_block[r][c];
            Complex64::new(re, im) * z_base
        });
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid(format!("branches[{k}].y_block"), "non-finite entry"));
        }
        let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        for r in 0..m {
            for c in 0..r {
                if (y[(r, c)] - y[(c, r)]).norm() > 1e-9 * scale {
                    return Err(invalid(format!("branches[{k}].y_block"), "block must be symmetric"));
                }
            }
        }
        branches.push(Branch {
            from,
            to,
            phases,
            admittance: y,
        });
    }

    let transformer = match &file.transformer {
        None => None,
        Some(t) => {
            let primary = lookup(&t.primary)?;
            let secondary = lookup(&t.secondary)?;
            if primary == source || secondary == source {
                return Err(invalid("transformer", "transformer buses must differ from the source bus"));
            }
            if primary == secondary {
                return Err(invalid("transformer", "primary and secondary must differ"));
            }
            if buses[primary].phases.len() != 3 || buses[secondary].phases != buses[primary].phases {
                return Err(invalid(
                    "transformer",
                    "primary and secondary must both carry phases a, b, c",
                ));
            }
            if !(t.tap_min > 0.0 && t.tap_min.is_finite()) {
                return Err(invalid("transformer.tap_min", "must be positive"));
            }
            if !(t.tap_min <= t.tap_max && t.tap_max.is_finite()) {
                return Err(invalid("transformer.tap_min", "must not exceed tap_max"));
            }
            if !(t.tap_step > 0.0 && t.tap_step.is_finite()) {
                return Err(invalid("transformer.tap_step", "must be positive"));
            }
            Some(Transformer {
                primary,
                secondary,
                tap_min: t.tap_min,
                tap_max: t.tap_max,
                tap_step: t.tap_step,
            })
        }
    };

    GridModel::assemble(
        file.base_mva,
        file.base_kv,
        buses,
        branches,
        source,
        v_source,
        transformer,
    )
}

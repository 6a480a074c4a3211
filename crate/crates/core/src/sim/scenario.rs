use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::estimation::{Location, MeasurementKind, MeasurementPlan, NoiseShape, Placement};
use crate::grid::{GridModel, Phase, TapVector};
use crate::opf::{DgLimits, ThermalLimit};

/// Whether the voltage tightening uses the estimation covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CaseMode {
    #[default]
    WithCov,
    NoCov,
}

impl CaseMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::WithCov => "with-cov",
            Self::NoCov => "no-cov",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadFile {
    pub bus: String,
    pub phases: Vec<Phase>,
    /// Peak active power per phase, p.u.
    pub p: f64,
    pub q: f64,
    pub profile: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorFile {
    pub bus: String,
    pub phases: Vec<Phase>,
    /// Rated apparent power per phase, p.u.
    pub s_max: f64,
    pub profile: String,
    #[serde(default)]
    pub p_min: f64,
    /// Reactive limit as a fraction of the available apparent power.
    #[serde(default = "default_q_frac")]
    pub q_max_frac: f64,
}

fn default_q_frac() -> f64 {
    0.44
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub kind: MeasurementKind,
    #[serde(default)]
    pub bus: Option<String>,
    #[serde(default)]
    pub branch: Option<[String; 2]>,
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalFile {
    pub branch: [String; 2],
    pub phases: Vec<Phase>,
    pub i_max: f64,
}

fn default_step_minutes() -> f64 {
    15.0
}

fn default_weight() -> f64 {
    1.0
}

fn default_pseudo() -> f64 {
    0.5
}

/// On-disk scenario schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Grid file, relative to the scenario file.
    #[serde(default)]
    pub grid: Option<PathBuf>,
    pub horizon: usize,
    #[serde(default = "default_step_minutes")]
    pub step_minutes: f64,
    pub seed: u64,
    pub beta: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub case: CaseMode,
    #[serde(default)]
    pub initial_tap: Option<[f64; 3]>,
    #[serde(default)]
    pub free_source_voltage: bool,
    #[serde(default = "default_weight")]
    pub reactive_weight: f64,
    #[serde(default)]
    pub soft_penalty: Option<f64>,
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub loads: Vec<LoadFile>,
    #[serde(default)]
    pub generators: Vec<GeneratorFile>,
    pub measurements: Vec<MeasurementFile>,
    #[serde(default = "default_pseudo")]
    pub pseudo_sigma_frac: f64,
    #[serde(default)]
    pub pseudo_noise: NoiseShape,
    #[serde(default)]
    pub thermal_limits: Vec<ThermalFile>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub beta: Option<f64>,
    pub case: Option<CaseMode>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
}

/// Per-phase load time series at one node-phase.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSeries {
    pub row: usize,
    pub s: Vec<Complex64>,
}

/// Availability of one generator node-phase.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSeries {
    pub row: usize,
    pub s_avail: Vec<f64>,
    pub p_min: f64,
    pub q_max_frac: f64,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: GridModel,
    pub horizon: usize,
    pub step_minutes: f64,
    pub seed: u64,
    pub beta: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub case: CaseMode,
    pub initial_tap: TapVector,
    pub free_source: bool,
    pub reactive_weight: f64,
    pub soft_penalty: Option<f64>,
    pub loads: Vec<LoadSeries>,
    pub generators: Vec<GeneratorSeries>,
    pub plan: MeasurementPlan,
    pub thermal: Vec<ThermalLimit>,
}

impl Scenario {
    /// True loads per non-source node-phase at step `t`.
    pub fn loads_at(&self, t: usize) -> nalgebra::DVector<Complex64> {
        let mut v = nalgebra::DVector::from_element(self.grid.n(), Complex64::new(0.0, 0.0));
        for l in &self.loads {
            v[l.row - 3] += l.s[t];
        }
        v
    }

    pub fn dg_limits_at(&self, t: usize) -> Vec<DgLimits> {
        self.generators
            .iter()
            .map(|g| {
                let s = g.s_avail[t];
                DgLimits {
                    row: g.row,
                    p_min: g.p_min.min(s),
                    p_max: s,
                    q_min: -g.q_max_frac * s,
                    q_max: g.q_max_frac * s,
                    s_max: s,
                }
            })
            .collect()
    }

    pub fn step_hours(&self) -> f64 {
        self.step_minutes / 60.0
    }
}

fn field(path: &Path, name: &str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        path: path.to_path_buf(),
        field: name.to_string(),
        reason: reason.into(),
    }
}

/// Read and validate a scenario. `grid_path` overrides the file's reference.
pub fn load_inputs(grid_path: Option<&Path>, scenario_path: &Path, ov: &Overrides) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(scenario_path).map_err(|e| SimError::Io {
        path: scenario_path.to_path_buf(),
        source: e,
    })?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| field(scenario_path, "<root>", e.to_string()))?;
    let grid_file = match (grid_path, &file.grid) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => scenario_path.parent().unwrap_or(Path::new(".")).join(p),
        (None, None) => return Err(field(scenario_path, "grid", "no grid file given")),
    };
    let grid = GridModel::from_file(&grid_file).map_err(|e| SimError::Grid {
        path: grid_file.clone(),
        source: e,
    })?;
    build_scenario(grid, file, scenario_path, ov)
}

pub fn build_scenario(grid: GridModel, file: ScenarioFile, path: &Path, ov: &Overrides) -> Result<Scenario, SimError> {
    let f = |name: &str, reason: String| field(path, name, reason);
    if file.horizon == 0 {
        return Err(f("horizon", "must be positive".into()));
    }
    for (name, prof) in &file.profiles {
        if prof.len() != file.horizon {
            return Err(f(
                &format!("profiles.{name}"),
                format!("length {} does not match horizon {}", prof.len(), file.horizon),
            ));
        }
        if prof.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(f(&format!("profiles.{name}"), "values must be finite and non-negative".into()));
        }
    }
    let horizon = match ov.horizon {
        Some(h) if h == 0 || h > file.horizon => {
            return Err(f("horizon", format!("override {h} must lie in 1..={}", file.horizon)))
        }
        Some(h) => h,
        None => file.horizon,
    };
    let beta = ov.beta.unwrap_or(file.beta);
    if !(beta > 0.0 && beta < 1.0) {
        return Err(f("beta", format!("{beta} outside (0, 1)")));
    }
    if !(file.v_min > 0.0 && file.v_min < file.v_max) {
        return Err(f("v_min", "need 0 < v_min < v_max".into()));
    }
    if !(file.step_minutes > 0.0) {
        return Err(f("step_minutes", "must be positive".into()));
    }
    if !(file.pseudo_sigma_frac > 0.0 && file.pseudo_sigma_frac.is_finite()) {
        return Err(f("pseudo_sigma_frac", "must be positive".into()));
    }
    if !file.reactive_weight.is_finite() {
        return Err(f("reactive_weight", "must be finite".into()));
    }
    if let Some(w) = file.soft_penalty {
        if !(w > 0.0 && w.is_finite()) {
            return Err(f("soft_penalty", "must be positive".into()));
        }
    }

    let idx = grid.index().clone();
    let bus = |name: &str, id: &str| grid.bus_by_id(id).ok_or_else(|| f(name, format!("bus '{id}' not in grid")));
    let row = |name: &str, b: usize, id: &str, ph: Phase| {
        idx.row(b, ph).ok_or_else(|| f(name, format!("bus '{id}' has no phase {ph}")))
    };
    let profile = |name: &str, p: &str| {
        file.profiles
            .get(p)
            .map(|v| v[..horizon].to_vec())
            .ok_or_else(|| f(name, format!("unknown profile '{p}'")))
    };

    let mut loads = Vec::new();
    for (i, l) in file.loads.iter().enumerate() {
        let name = format!("loads[{i}]");
        let b = bus(&name, &l.bus)?;
        let prof = profile(&name, &l.profile)?;
        for &ph in &l.phases {
            let r = row(&name, b, &l.bus, ph)?;
            if idx.is_transformer_row(r) {
                return Err(f(&name, format!("bus '{}' is a transformer terminal", l.bus)));
            }
            loads.push(LoadSeries {
                row: r,
                s: prof.iter().map(|k| Complex64::new(l.p * k, l.q * k)).collect(),
            });
        }
    }

    let mut generators: Vec<GeneratorSeries> = Vec::new();
    for (i, g) in file.generators.iter().enumerate() {
        let name = format!("generators[{i}]");
        let b = bus(&name, &g.bus)?;
        let prof = profile(&name, &g.profile)?;
        if !(g.s_max >= 0.0 && g.p_min >= 0.0 && g.q_max_frac >= 0.0) {
            return Err(f(&name, "limits must be non-negative".into()));
        }
        for &ph in &g.phases {
            let r = row(&name, b, &g.bus, ph)?;
            if idx.is_transformer_row(r) {
                return Err(f(&name, format!("bus '{}' is a transformer terminal", g.bus)));
            }
            if generators.iter().any(|x| x.row == r) {
                return Err(f(&name, format!("duplicate generator at {}", grid.row_label(r))));
            }
            generators.push(GeneratorSeries {
                row: r,
                s_avail: prof.iter().map(|k| g.s_max * k).collect(),
                p_min: g.p_min,
                q_max_frac: g.q_max_frac,
            });
        }
    }

    let mut placements = Vec::new();
    for (i, m) in file.measurements.iter().enumerate() {
        let name = format!("measurements[{i}]");
        let sigma = m.sigma.unwrap_or(m.kind.default_sigma());
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(f(&name, "sigma must be positive".into()));
        }
        for &ph in &m.phases {
            let location = match (m.kind, &m.bus, &m.branch) {
                (MeasurementKind::BranchCurrentPhasor, _, Some([a, b])) => {
                    let (ia, ib) = (bus(&name, a)?, bus(&name, b)?);
                    let br = grid
                        .branch_between(ia, ib)
                        .ok_or_else(|| f(&name, format!("no branch between '{a}' and '{b}'")))?;
                    Location::Branch { branch: br, phase: ph }
                }
                (MeasurementKind::BranchCurrentPhasor, _, None) => {
                    return Err(f(&name, "branch current needs 'branch'".into()))
                }
                (MeasurementKind::LoadPseudo, ..) => {
                    return Err(f(&name, "pseudo-measurements are derived from loads".into()))
                }
                (_, Some(id), _) => Location::Node(row(&name, bus(&name, id)?, id, ph)?),
                (_, None, _) => return Err(f(&name, "node measurement needs 'bus'".into())),
            };
            crate::estimation::check_location(&grid, m.kind, location).map_err(|r| f(&name, r))?;
            placements.push(Placement {
                kind: m.kind,
                location,
                sigma,
            });
        }
    }

    let mut thermal = Vec::new();
    for (i, t) in file.thermal_limits.iter().enumerate() {
        let name = format!("thermal_limits[{i}]");
        let (a, b) = (bus(&name, &t.branch[0])?, bus(&name, &t.branch[1])?);
        let br = grid
            .branch_between(a, b)
            .ok_or_else(|| f(&name, format!("no branch between '{}' and '{}'", t.branch[0], t.branch[1])))?;
        if t.i_max.is_nan() || t.i_max <= 0.0 {
            return Err(f(&name, "i_max must be positive".into()));
        }
        for &ph in &t.phases {
            thermal.push(ThermalLimit {
                branch: br,
                phase: ph,
                i_max: t.i_max,
            });
        }
    }

    let initial_tap = match (file.initial_tap, &grid.transformer) {
        (Some(a), Some(tf)) => {
            if a.iter().any(|&v| v < tf.tap_min || v > tf.tap_max) {
                return Err(f("initial_tap", "outside transformer tap range".into()));
            }
            TapVector::new(a).map_err(|e| f("initial_tap", e.to_string()))?
        }
        (Some(_), None) => return Err(f("initial_tap", "grid has no transformer".into())),
        (None, _) => TapVector::NOMINAL,
    };

    Ok(Scenario {
        grid,
        horizon,
        step_minutes: file.step_minutes,
        seed: ov.seed.unwrap_or(file.seed),
        beta,
        v_min: file.v_min,
        v_max: file.v_max,
        case: ov.case.unwrap_or(file.case),
        initial_tap,
        free_source: file.free_source_voltage,
        reactive_weight: file.reactive_weight,
        soft_penalty: file.soft_penalty,
        loads,
        generators,
        plan: MeasurementPlan {
            placements,
            pseudo_sigma_frac: file.pseudo_sigma_frac,
            pseudo_noise: file.pseudo_noise,
        },
        thermal,
    })
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::svg::{LinePlot, Series};
use super::{Scenario, SimError, StepRecord, StepStatus, ACTIVE_DUAL};

pub const STEPS_HEADER: &str =
    "t,node,phase,v_true_mag,v_est_mag,sigma_re,sigma_im,v_real_mag,violation,p_dg,q_dg,tap_a,tap_b,tap_c,objective,status";

/// Aggregate of one run. Contains no timing so that it is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub case: String,
    pub horizon: usize,
    pub beta: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Realized node-phase magnitudes outside the band, over all steps.
    pub violations: usize,
    pub violating_steps: usize,
    /// Largest realized distance outside the band, p.u.
    pub worst_excursion: f64,
    pub dg_energy_used: f64,
    pub dg_energy_available: f64,
    pub curtailed_steps: usize,
    /// Curtailed steps without any binding voltage constraint.
    pub curtailed_without_active_voltage: usize,
    pub taps_within_bounds: bool,
    pub max_predicted_gap: f64,
    pub min_v_real: f64,
    pub max_v_real: f64,
    pub status_counts: BTreeMap<String, usize>,
    pub objective: Vec<Option<f64>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Summary {
    pub fn from_records(scn: &Scenario, records: &[StepRecord]) -> Self {
        let h = scn.step_hours();
        let (lo, hi) = scn.grid.transformer.as_ref().map_or((1.0, 1.0), |t| (t.tap_min, t.tap_max));
        let mut status_counts = BTreeMap::new();
        for r in records {
            *status_counts.entry(r.status.label().to_string()).or_insert(0) += 1;
        }
        let reals = records.iter().flat_map(|r| r.v_real.iter().copied()).filter(|v| v.is_finite());
        Self {
            case: scn.case.label().to_string(),
            horizon: records.len(),
            beta: scn.beta,
            v_min: scn.v_min,
            v_max: scn.v_max,
            violations: records.iter().map(StepRecord::violations).sum(),
            violating_steps: records.iter().filter(|r| r.violations() > 0).count(),
            worst_excursion: records
                .iter()
                .map(|r| r.worst_excursion(scn.v_min, scn.v_max))
                .fold(0.0, f64::max),
            dg_energy_used: records.iter().map(|r| r.dg_used() * h).sum(),
            dg_energy_available: records.iter().map(|r| r.dg_available.iter().sum::<f64>() * h).sum(),
            curtailed_steps: records.iter().filter(|r| r.curtailed).count(),
            curtailed_without_active_voltage: records
                .iter()
                .filter(|r| r.curtailed && !(r.max_voltage_dual > ACTIVE_DUAL))
                .count(),
            taps_within_bounds: records
                .iter()
                .all(|r| r.setpoints.tap.0.iter().all(|&a| a >= lo - 1e-12 && a <= hi + 1e-12)),
            max_predicted_gap: records
                .iter()
                .map(|r| r.predicted_gap)
                .filter(|g| g.is_finite())
                .fold(0.0, f64::max),
            min_v_real: reals.clone().fold(f64::INFINITY, f64::min),
            max_v_real: reals.fold(f64::NEG_INFINITY, f64::max),
            status_counts,
            objective: records.iter().map(|r| finite(r.objective)).collect(),
        }
    }

    pub fn all_applied(&self) -> bool {
        self.status_counts
            .iter()
            .all(|(k, _)| k == StepStatus::Optimal.label() || k == StepStatus::OptimalSoft.label())
    }
}

/// Both case summaries side by side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub with_cov: Summary,
    pub no_cov: Summary,
}

/// One line per (step, node-phase).
pub fn write_steps_csv(scn: &Scenario, records: &[StepRecord]) -> String {
    let grid = &scn.grid;
    let idx = grid.index();
    let mut s = String::with_capacity(records.len() * grid.n() * 160);
    s.push_str(STEPS_HEADER);
    s.push('\n');
    for r in records {
        let tap = r.setpoints.tap.0;
        for i in 0..grid.n() {
            let row = i + 3;
            let np = idx.entry(row);
            let (p, q) = r
                .setpoints
                .dg
                .iter()
                .find(|d| d.row == row)
                .map_or((0.0, 0.0), |d| (d.p, d.q));
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{},{:.9},{:.9},{:.6},{:.6},{:.6},{:.9},{}",
                r.t,
                grid.buses[np.bus].id,
                np.phase,
                r.v_true[i],
                r.v_est[i],
                r.sigma_re[i],
                r.sigma_im[i],
                r.v_real[i],
                u8::from(r.violation[i]),
                p,
                q,
                tap[0],
                tap[1],
                tap[2],
                r.objective,
                r.status.label()
            );
        }
    }
    s
}

fn plots(scn: &Scenario, records: &[StepRecord]) -> [(&'static str, LinePlot); 3] {
    let grid = &scn.grid;
    let h = scn.step_hours();
    let time = |r: &StepRecord| r.t as f64 * h;
    let voltage = LinePlot {
        title: format!("Realized voltage magnitudes ({})", scn.case.label()),
        x_label: "time [h]".into(),
        y_label: "|V| [p.u.]".into(),
        series: (0..grid.n())
            .map(|i| Series {
                name: grid.row_label(i + 3),
                points: records.iter().map(|r| (time(r), r.v_real[i])).collect(),
            })
            .collect(),
        levels: vec![(scn.v_min, "v_min".into()), (scn.v_max, "v_max".into())],
    };
    let mut levels = Vec::new();
    if let Some(tf) = &grid.transformer {
        levels = vec![(tf.tap_min, "tap_min".into()), (tf.tap_max, "tap_max".into())];
    }
    let taps = LinePlot {
        title: "Tap ratios".into(),
        x_label: "time [h]".into(),
        y_label: "ratio".into(),
        series: ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(p, name)| Series {
                name: format!("phase {name}"),
                points: records.iter().map(|r| (time(r), r.setpoints.tap.0[p])).collect(),
            })
            .collect(),
        levels,
    };
    let dg = LinePlot {
        title: "Distributed generation".into(),
        x_label: "time [h]".into(),
        y_label: "power [p.u.]".into(),
        series: vec![
            Series {
                name: "available".into(),
                points: records.iter().map(|r| (time(r), r.dg_available.iter().sum())).collect(),
            },
            Series {
                name: "used".into(),
                points: records.iter().map(|r| (time(r), r.dg_apparent_used())).collect(),
            },
        ],
        levels: Vec::new(),
    };
    [("voltage.svg", voltage), ("taps.svg", taps), ("dg.svg", dg)]
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    std::fs::write(path, text).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `steps.csv`, `summary.json` and the three plots into `dir`, plus
/// `programs/tNNN.json` for records that carry a program dump.
pub fn emit_outputs(scn: &Scenario, records: &[StepRecord], dir: &Path) -> Result<Summary, SimError> {
    std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join("steps.csv"), &write_steps_csv(scn, records))?;
    let summary = Summary::from_records(scn, records);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&dir.join("summary.json"), &(json + "\n"))?;
    for (name, plot) in plots(scn, records) {
        write(&dir.join(name), &plot.render())?;
    }
    let dumps: Vec<_> = records.iter().filter_map(|r| r.program_dump.as_ref().map(|d| (r.t, d))).collect();
    if !dumps.is_empty() {
        let sub = dir.join("programs");
        std::fs::create_dir_all(&sub).map_err(|source| SimError::Io {
            path: sub.clone(),
            source,
        })?;
        for (t, d) in dumps {
            let text = serde_json::to_string_pretty(d).expect("dump serializes");
            write(&sub.join(format!("t{t:03}.json")), &(text + "\n"))?;
        }
    }
    Ok(summary)
}

pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let json = serde_json::to_string_pretty(cmp).expect("comparison serializes");
    write(&dir.join("comparison.json"), &(json + "\n"))
}

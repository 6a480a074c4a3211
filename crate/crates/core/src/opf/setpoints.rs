use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use super::{ConvexProgram, OpfError, OpfSolution, SolveStatus};
use crate::grid::TapVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DgSetpoint {
    /// Admittance row of the node-phase.
    pub row: usize,
    pub p: f64,
    pub q: f64,
}

/// Absolute control state applied to the feeder.
#[derive(Clone, Debug, PartialEq)]
pub struct Setpoints {
    /// Tap before rounding.
    pub tap_continuous: TapVector,
    /// Applied, rounded tap.
    pub tap: TapVector,
    pub dg: Vec<DgSetpoint>,
    pub v_source: [Complex64; 3],
}

impl Setpoints {
    pub fn new(tap: TapVector, dg: Vec<DgSetpoint>, v_source: [Complex64; 3]) -> Self {
        Self {
            tap_continuous: tap,
            tap,
            dg,
            v_source,
        }
    }

    /// Generation vector over the `n` non-source node-phases.
    pub fn generation(&self, n: usize) -> DVector<Complex64> {
        let mut g = DVector::from_element(n, Complex64::new(0.0, 0.0));
        for d in &self.dg {
            g[d.row - 3] += Complex64::new(d.p, d.q);
        }
        g
    }
}

/// Nearest multiple of `step` per phase, exact midpoints toward 1, then
/// clamped to `bounds`.
pub fn round_taps(a: &TapVector, step: f64, bounds: (f64, f64)) -> TapVector {
    assert!(step > 0.0, "tap step must be positive");
    // Divide by an integral reciprocal when possible so grid points come out
    // as the nearest doubles, e.g. 82 / 80 rather than 82 * 0.0125.
    let inv = 1.0 / step;
    let grid_point = |k: f64| if (inv - inv.round()).abs() < 1e-9 { k / inv.round() } else { k * step };
    TapVector(a.0.map(|v| {
        let k = (v / step).floor();
        let (lo, hi) = (grid_point(k), grid_point(k + 1.0));
        let (dl, dh) = (v - lo, hi - v);
        let r = if (dl - dh).abs() <= 1e-12 {
            if (lo - 1.0).abs() <= (hi - 1.0).abs() {
                lo
            } else {
                hi
            }
        } else if dl < dh {
            lo
        } else {
            hi
        };
        let r = if (r - v).abs() <= 1e-12 { v } else { r };
        r.clamp(bounds.0, bounds.1)
    }))
}

/// Absolute setpoints `prev + Δ`, with rounded taps and generator values
/// projected onto their limits to absorb solver tolerance.
pub fn extract_setpoints(sol: &OpfSolution, prog: &ConvexProgram) -> Result<Setpoints, OpfError> {
    if sol.status != SolveStatus::Optimal {
        return Err(OpfError::NotOptimal(sol.status));
    }
    let layout = &prog.layout;
    let prev = &prog.prev;
    let mut cont = prev.tap.0;
    for (p, a) in cont.iter_mut().enumerate() {
        if let Some(c) = layout.tap(p) {
            *a += sol.x[c];
        }
    }
    let (lo, hi) = prog.tap_bounds;
    let tap_continuous = TapVector(cont.map(|a| a.clamp(lo, hi)));
    let tap = if layout.has_tap {
        round_taps(&tap_continuous, prog.tap_step, prog.tap_bounds)
    } else {
        prev.tap
    };
    let dg = prog
        .dg_limits
        .iter()
        .zip(&prev.dg)
        .map(|(l, d)| {
            let mut p = (d.p + sol.x[layout.p(l.row)]).clamp(l.p_min, l.p_max);
            let mut q = (d.q + sol.x[layout.q(l.row)]).clamp(l.q_min, l.q_max);
            let s = p.hypot(q);
            if s > l.s_max {
                let k = if s > 0.0 { l.s_max / s } else { 0.0 };
                p *= k;
                q *= k;
            }
            DgSetpoint { row: l.row, p, q }
        })
        .collect();
    let dvs = layout.delta_v_source(&sol.x);
    let v_source = std::array::from_fn(|r| prev.v_source[r] + dvs[r]);
    Ok(Setpoints {
        tap_continuous,
        tap,
        dg,
        v_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: (f64, f64) = (0.9, 1.1);

    #[test]
    fn nearest_multiple() {
        assert_eq!(round_taps(&TapVector([1.03, 1.0, 1.0]), 0.0125, B).0[0], 1.025);
    }

    #[test]
    fn on_grid_is_fixed_point() {
        for v in [0.9, 0.9625, 1.0, 1.0375, 1.1] {
            assert_eq!(round_taps(&TapVector([v; 3]), 0.0125, B).0, [v; 3]);
        }
    }

    #[test]
    fn midpoint_goes_toward_nominal_then_clamps() {
        let r = round_taps(&TapVector([1.10625, 0.98125, 1.01875]), 0.0125, B).0;
        assert_eq!(r[0], 1.1);
        assert!((r[1] - 0.9875).abs() < 1e-12);
        assert!((r[2] - 1.0125).abs() < 1e-12);
    }
}

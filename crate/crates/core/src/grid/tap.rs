use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::GridError;

/// Per-phase transformer ratio, secondary over primary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapVector(pub [f64; 3]);

impl TapVector {
    pub const NOMINAL: TapVector = TapVector([1.0; 3]);

    pub fn new(ratios: [f64; 3]) -> Result<Self, GridError> {
        for r in ratios {
            if !(r > 0.0 && r.is_finite()) {
                return Err(GridError::NonPositiveTap(r));
            }
        }
        Ok(Self(ratios))
    }

    pub fn clamp(self, min: f64, max: f64) -> Self {
        Self(self.0.map(|a| a.clamp(min, max)))
    }

    pub fn delta(&self, prev: &TapVector) -> [f64; 3] {
        [self.0[0] - prev.0[0], self.0[1] - prev.0[1], self.0[2] - prev.0[2]]
    }
}

/// `V_secondary = diag(tap) V_primary`, one entry per phase.
pub fn apply_tap(v_primary: &[Complex64], tap: &TapVector) -> Result<Vec<Complex64>, GridError> {
    if v_primary.len() != 3 {
        return Err(GridError::Dimension {
            expected: 3,
            got: v_primary.len(),
        });
    }
    TapVector::new(tap.0)?;
    Ok(v_primary.iter().zip(tap.0).map(|(v, a)| v * a).collect())
}

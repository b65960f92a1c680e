use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Fixed,
    Linear,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Fixed => "fixed",
            ScheduleMode::Linear => "linear",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" => Ok(ScheduleMode::Fixed),
            "linear" => Ok(ScheduleMode::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule '{other}' (expected fixed or linear)"
            ))),
        }
    }
}

/// Retention ratio over training: constant, or affine from `r0` to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnfreezeSchedule {
    mode: ScheduleMode,
    r0: f64,
    horizon: usize,
}

impl UnfreezeSchedule {
    pub fn new(mode: ScheduleMode, r0: f64, horizon: usize) -> Result<Self> {
        if !(r0 > 0.0 && r0 <= 1.0) {
            return Err(Error::InvalidArgument(format!("retention r0 must lie in (0, 1], got {r0}")));
        }
        if mode == ScheduleMode::Linear && horizon == 0 {
            return Err(Error::InvalidArgument("linear schedule needs a horizon >= 1".into()));
        }
        Ok(UnfreezeSchedule { mode, r0, horizon })
    }

    pub fn fixed(r0: f64) -> Result<Self> {
        UnfreezeSchedule::new(ScheduleMode::Fixed, r0, 0)
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn initial(&self) -> f64 {
        self.r0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `r_t`, for `0 ≤ t ≤ T`.
    pub fn retention_at(&self, t: usize) -> Result<f64> {
        match self.mode {
            ScheduleMode::Fixed => Ok(self.r0),
            ScheduleMode::Linear => {
                if t > self.horizon {
                    return Err(Error::ScheduleOutOfRange {
                        t,
                        horizon: self.horizon,
                    });
                }
                let r = self.r0 + (1.0 - self.r0) * t as f64 / self.horizon as f64;
                Ok(r.min(1.0))
            }
        }
    }
}

//! Wall-time breakdown of attack and training steps.

use std::ops::AddAssign;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Seconds spent per category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub solver_forward: f64,
    pub student_forward: f64,
    pub backward: f64,
    pub update: f64,
    /// Measured wall time of the enclosing steps.
    pub total: f64,
}

impl Timings {
    pub fn categorized(&self) -> f64 {
        self.solver_forward + self.student_forward + self.backward + self.update
    }

    /// `categorized / total`, or 1 when nothing was measured.
    pub fn coverage(&self) -> f64 {
        if self.total > 0.0 {
            self.categorized() / self.total
        } else {
            1.0
        }
    }
}

impl AddAssign for Timings {
    fn add_assign(&mut self, o: Timings) {
        self.solver_forward += o.solver_forward;
        self.student_forward += o.student_forward;
        self.backward += o.backward;
        self.update += o.update;
        self.total += o.total;
    }
}

/// Run `f` and add its wall time to `slot`.
pub(crate) fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot += secs(t.elapsed());
    out
}

pub(crate) fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

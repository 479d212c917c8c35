//! Loss-weight schedules for the semi-supervised combination, as functions
//! of training progress `t` in `[0, 1]`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Supervised weight held at 1; self weight Gaussian-ramps up over the
    /// first fifth of training and back down over the last fifth.
    Ramp,
    /// Pure self-supervision for the first half; pure supervision after.
    /// The classifier reads the shared difficulty encoder, so the switch
    /// hands it fully pretrained features.
    Pretrain,
    /// Smoothstep crossfade from self to supervised over `t` in
    /// `[0.2, 0.8]`.
    Smooth,
    /// Supervised loss only; the label-efficiency baseline.
    SupervisedOnly,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ramp" => Ok(Schedule::Ramp),
            "pretrain" => Ok(Schedule::Pretrain),
            "smooth" => Ok(Schedule::Smooth),
            "supervised" => Ok(Schedule::SupervisedOnly),
            other => Err(format!("unknown schedule {other:?} (ramp|pretrain|smooth|supervised)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub w_self: f64,
    pub w_sup: f64,
}

fn gaussian_ramp(x: f64) -> f64 {
    // 0 -> exp(-5), 1 -> 1
    (-5.0 * (1.0 - x).powi(2)).exp()
}

/// Weights at progress `t`; out-of-range `t` is clamped.
pub fn schedule_weights(schedule: Schedule, t: f64) -> Weights {
    let t = t.clamp(0.0, 1.0);
    match schedule {
        Schedule::Ramp => {
            let w_self = if t < 0.2 {
                gaussian_ramp(t / 0.2)
            } else if t <= 0.8 {
                1.0
            } else {
                gaussian_ramp((1.0 - t) / 0.2)
            };
            Weights { w_self, w_sup: 1.0 }
        }
        Schedule::Pretrain => {
            if t < 0.5 {
                Weights { w_self: 1.0, w_sup: 0.0 }
            } else {
                Weights { w_self: 0.0, w_sup: 1.0 }
            }
        }
        Schedule::Smooth => {
            let u = ((t - 0.2) / 0.6).clamp(0.0, 1.0);
            let s = u * u * (3.0 - 2.0 * u);
            Weights { w_self: 1.0 - s, w_sup: s }
        }
        Schedule::SupervisedOnly => Weights { w_self: 0.0, w_sup: 1.0 },
    }
}

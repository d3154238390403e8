use serde::{Deserialize, Serialize};

use crate::pour_sim::{ButterworthLowPass, PLATE_CUTOFF_HZ, PLATE_HZ};
use crate::units::GRAVITY;

/// How far ahead of each sample the plate signal is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "delay_s")]
pub enum ShiftMode {
    /// Free-fall time of the spout height at each sample.
    FreeFall,
    /// Free fall plus the plate filter's DC group delay.
    FreeFallWithFilterLag,
    /// One fixed delay [s].
    Constant(f64),
}

impl Default for ShiftMode {
    fn default() -> Self {
        ShiftMode::FreeFallWithFilterLag
    }
}

impl ShiftMode {
    fn delay(&self, spout_height: f64) -> f64 {
        let fall = (2.0 * spout_height.max(0.0) / GRAVITY).sqrt();
        match self {
            ShiftMode::FreeFall => fall,
            ShiftMode::FreeFallWithFilterLag => {
                fall + ButterworthLowPass::new(PLATE_CUTOFF_HZ, PLATE_HZ).dc_group_delay()
            }
            ShiftMode::Constant(d) => *d,
        }
    }
}

/// `gt(t) = plate(t + delay(t))` with linear interpolation between samples
/// and the last value held past the end, followed by a suffix minimum so the
/// result is non-decreasing and filter overshoot at the end of a pour is not
/// counted as poured weight.
pub fn shift_ground_truth(plate: &[f64], spout_height: &[f64], mode: ShiftMode, period: f64) -> Vec<f64> {
    assert_eq!(plate.len(), spout_height.len(), "series must share a grid");
    let n = plate.len();
    if n == 0 {
        return Vec::new();
    }
    let mut gt: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 + mode.delay(spout_height[i]) / period;
            let j = x.floor() as usize;
            if j + 1 >= n {
                plate[n - 1]
            } else {
                let frac = x - j as f64;
                plate[j] + frac * (plate[j + 1] - plate[j])
            }
        })
        .collect();
    for i in (0..n - 1).rev() {
        gt[i] = gt[i].min(gt[i + 1]);
    }
    gt
}

//! Lip-overflow model for an upright cylinder tilted about a horizontal axis.
//!
//! Container coordinates: `z` along the axis from the inner bottom, `y` across
//! the section pointing at the spout. Tilting by `θ` puts a point `(y, z)` at
//! height `w = z·cosθ − y·sinθ`; the spout sits on the rim at `(r, H)`. The
//! free surface is the level `s` whose sub-level set holds the liquid volume,
//! and the head is `s − w_spout`. Outflow is Torricelli-like,
//! `Q = C·A · sqrt(2·g·max(0, head))`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use super::ContainerSpec;
use crate::units::GRAVITY;

/// Tilt beyond which the model saturates [rad].
pub const MAX_MODEL_TILT: f64 = 2.0;

const QUAD_NODES: usize = 256;
const BISECTION_STEPS: usize = 64;

/// Calibration point: a 320 ml fill at π/3 discharges ≈ 80 ml/s.
const CALIBRATION_VOLUME_ML: f64 = 320.0;
const CALIBRATION_TILT: f64 = FRAC_PI_3;
const CALIBRATION_RATE_ML_S: f64 = 80.0;

#[derive(Debug, Clone, Copy)]
struct Cylinder {
    radius: f64,
    height: f64,
}

impl Cylinder {
    fn full_volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }

    fn level_bounds(&self, tilt: f64) -> (f64, f64) {
        let (s, c) = tilt.sin_cos();
        let lo = (self.height * c).min(0.0) - self.radius * s.abs();
        let hi = (self.height * c).max(0.0) + self.radius * s.abs();
        (lo, hi)
    }

    /// Liquid volume [m³] below world level `level` at `tilt`.
    fn volume_below(&self, level: f64, tilt: f64) -> f64 {
        let (sin_t, cos_t) = tilt.sin_cos();
        let r = self.radius;
        let h = self.height;
        let dphi = PI / QUAD_NODES as f64;
        let mut acc = 0.0;
        for k in 0..QUAD_NODES {
            let phi = -FRAC_PI_2 + (k as f64 + 0.5) * dphi;
            let y = r * phi.sin();
            let rhs = level + y * sin_t;
            let len = if cos_t > 1e-12 {
                (rhs / cos_t).clamp(0.0, h)
            } else if cos_t < -1e-12 {
                h - (rhs / cos_t).clamp(0.0, h)
            } else if rhs >= 0.0 {
                h
            } else {
                0.0
            };
            let c = phi.cos();
            acc += 2.0 * r * r * c * c * len;
        }
        acc * dphi
    }

    fn spout_level(&self, tilt: f64) -> f64 {
        let (s, c) = tilt.sin_cos();
        self.height * c - self.radius * s
    }

    /// Head of the free surface above the spout [m], by bisection.
    fn head(&self, volume_m3: f64, tilt: f64) -> f64 {
        let (mut lo, mut hi) = self.level_bounds(tilt);
        let spout = self.spout_level(tilt);
        if volume_m3 <= 0.0 {
            return lo - spout;
        }
        let target = volume_m3.min(self.full_volume());
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if self.volume_below(mid, tilt) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) - spout
    }
}

fn cylinder_of(spec: &ContainerSpec) -> Cylinder {
    Cylinder {
        radius: spec.inner_radius_m,
        height: spec.height_m,
    }
}

/// Free-surface head above the spout lip [m] for `volume_ml` at `tilt`,
/// computed directly from the geometry.
pub fn free_surface_head(spec: &ContainerSpec, volume_ml: f64, tilt: f64) -> f64 {
    let tilt = tilt.clamp(0.0, MAX_MODEL_TILT);
    cylinder_of(spec).head(volume_ml.max(0.0) * 1e-6, tilt)
}

/// Effective `C·A_lip` [m²] for `spec`, fixed by the calibration point.
pub fn discharge_area(spec: &ContainerSpec) -> f64 {
    let head = free_surface_head(spec, CALIBRATION_VOLUME_ML, CALIBRATION_TILT);
    assert!(head > 0.0, "container does not overflow at the calibration point");
    CALIBRATION_RATE_ML_S * 1e-6 / (2.0 * GRAVITY * head).sqrt()
}

fn torricelli_ml_s(discharge_area: f64, head: f64) -> f64 {
    if head <= 0.0 {
        0.0
    } else {
        discharge_area * (2.0 * GRAVITY * head).sqrt() * 1e6
    }
}

/// Outflow [ml/s] from the exact geometry. Slow; the simulator uses
/// [`OutflowModel`], which tabulates this function.
pub fn outflow_rate(spec: &ContainerSpec, volume_ml: f64, tilt: f64) -> f64 {
    if volume_ml <= 0.0 {
        return 0.0;
    }
    torricelli_ml_s(discharge_area(spec), free_surface_head(spec, volume_ml, tilt))
}

/// Tabulated head over (volume, tilt) with bilinear interpolation. Linear
/// interpolation of a table that is monotone in tilt stays monotone and
/// continuous, and the tilt-0 row is exact.
#[derive(Debug, Clone)]
pub struct OutflowModel {
    discharge_area: f64,
    max_volume_ml: f64,
    volume_step: f64,
    tilt_step: f64,
    n_volume: usize,
    n_tilt: usize,
    heads: Vec<f64>,
}

impl OutflowModel {
    const N_VOLUME: usize = 161;
    const N_TILT: usize = 201;
    const N_LEVEL: usize = 1025;

    pub fn new(spec: &ContainerSpec) -> Self {
        let cyl = cylinder_of(spec);
        let max_volume_ml = cyl.full_volume() * 1e6;
        let n_volume = Self::N_VOLUME;
        let n_tilt = Self::N_TILT;
        let volume_step = max_volume_ml / (n_volume - 1) as f64;
        let tilt_step = MAX_MODEL_TILT / (n_tilt - 1) as f64;
        let mut heads = vec![0.0; n_volume * n_tilt];
        let mut levels = vec![0.0; Self::N_LEVEL];
        let mut volumes = vec![0.0; Self::N_LEVEL];
        for it in 0..n_tilt {
            let tilt = it as f64 * tilt_step;
            let spout = cyl.spout_level(tilt);
            if it == 0 {
                // Upright: the surface is flat in container coordinates.
                for iv in 0..n_volume {
                    let v = iv as f64 * volume_step * 1e-6;
                    heads[iv * n_tilt] = v / (PI * cyl.radius * cyl.radius) - cyl.height;
                }
                continue;
            }
            let (lo, hi) = cyl.level_bounds(tilt);
            for k in 0..Self::N_LEVEL {
                let s = lo + (hi - lo) * k as f64 / (Self::N_LEVEL - 1) as f64;
                levels[k] = s;
                volumes[k] = cyl.volume_below(s, tilt);
            }
            // The quadrature can flatten tiny steps; force monotone samples.
            for k in 1..Self::N_LEVEL {
                volumes[k] = volumes[k].max(volumes[k - 1]);
            }
            let mut k = 0;
            for iv in 0..n_volume {
                let v = iv as f64 * volume_step * 1e-6;
                let level = if iv == 0 {
                    lo
                } else {
                    while k + 2 < Self::N_LEVEL && volumes[k + 1] < v {
                        k += 1;
                    }
                    let (v0, v1) = (volumes[k], volumes[k + 1]);
                    let frac = if v1 > v0 { ((v - v0) / (v1 - v0)).clamp(0.0, 1.0) } else { 1.0 };
                    levels[k] + frac * (levels[k + 1] - levels[k])
                };
                heads[iv * n_tilt + it] = level - spout;
            }
        }
        OutflowModel {
            discharge_area: discharge_area(spec),
            max_volume_ml,
            volume_step,
            tilt_step,
            n_volume,
            n_tilt,
            heads,
        }
    }

    pub fn head(&self, volume_ml: f64, tilt: f64) -> f64 {
        let v = volume_ml.clamp(0.0, self.max_volume_ml) / self.volume_step;
        let t = tilt.clamp(0.0, MAX_MODEL_TILT) / self.tilt_step;
        let iv = (v.floor() as usize).min(self.n_volume - 2);
        let it = (t.floor() as usize).min(self.n_tilt - 2);
        let fv = v - iv as f64;
        let ft = t - it as f64;
        let at = |i: usize, j: usize| self.heads[i * self.n_tilt + j];
        let h0 = at(iv, it) * (1.0 - ft) + at(iv, it + 1) * ft;
        let h1 = at(iv + 1, it) * (1.0 - ft) + at(iv + 1, it + 1) * ft;
        h0 * (1.0 - fv) + h1 * fv
    }

    /// Outflow [ml/s]; zero for an empty container.
    pub fn rate(&self, volume_ml: f64, tilt: f64) -> f64 {
        if volume_ml <= 0.0 {
            return 0.0;
        }
        torricelli_ml_s(self.discharge_area, self.head(volume_ml, tilt))
    }

    pub fn discharge_area(&self) -> f64 {
        self.discharge_area
    }

    /// Smallest tilt at which `volume_ml` starts to overflow, by bisection on
    /// the table.
    pub fn onset_tilt(&self, volume_ml: f64) -> Option<f64> {
        if self.head(volume_ml, MAX_MODEL_TILT) <= 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (0.0, MAX_MODEL_TILT);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.head(volume_ml, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

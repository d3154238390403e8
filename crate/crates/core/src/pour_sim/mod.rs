//! Ground-truth pouring physics.
//!
//! A [`SimWorld`] is a plain value. [`PourSim::step`] advances it by one
//! explicit-Euler step: liquid leaves the source through the lip, travels as
//! a parcel for the free-fall time of the current spout height, and lands in
//! the receiver, which sits on a force plate with a 1.3 Hz second-order
//! Butterworth filter sampled at 200 Hz.

mod filter;
mod outflow;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

pub use filter::ButterworthLowPass;
pub use outflow::{discharge_area, free_surface_head, outflow_rate, OutflowModel, MAX_MODEL_TILT};

use crate::scene::Scene;
use crate::units::{ml_to_newtons, GRAVITY};
use crate::{Error, Result};

pub const SIM_DT: f64 = 1e-3;
pub const PLATE_HZ: f64 = 200.0;
pub const PLATE_CUTOFF_HZ: f64 = 1.3;
const PLATE_PERIOD: f64 = 1.0 / PLATE_HZ;
/// Slack when comparing float clocks against sample grids.
const CLOCK_EPS: f64 = 1e-9;

fn default_empty_mass() -> f64 {
    0.12
}

fn default_com_offset() -> [f64; 3] {
    [0.01, 0.0, 0.0]
}

/// Source container geometry, expressed in the grasp (tool) frame. The
/// container axis points along `-x` of the tool frame, the grasp is at
/// mid-height and the spout sits on the rim on the `-y` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerSpec {
    pub capacity_ml: f64,
    pub inner_radius_m: f64,
    pub height_m: f64,
    pub spout_offset_m: [f64; 3],
    #[serde(default = "default_empty_mass")]
    pub empty_mass_kg: f64,
    /// Centre of mass of container plus contents, tool frame.
    #[serde(default = "default_com_offset")]
    pub com_offset_m: [f64; 3],
}

impl Default for ContainerSpec {
    fn default() -> Self {
        ContainerSpec {
            capacity_ml: 400.0,
            inner_radius_m: 0.036,
            height_m: 0.10,
            spout_offset_m: [-0.05, -0.036, 0.0],
            empty_mass_kg: default_empty_mass(),
            com_offset_m: default_com_offset(),
        }
    }
}

impl ContainerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("capacity_ml", self.capacity_ml),
            ("inner_radius_m", self.inner_radius_m),
            ("height_m", self.height_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    path: format!("container.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.empty_mass_kg >= 0.0) {
            return Err(Error::Config {
                path: "container.empty_mass_kg".into(),
                message: "must be non-negative".into(),
            });
        }
        let geometric = std::f64::consts::PI * self.inner_radius_m.powi(2) * self.height_m * 1e6;
        if self.capacity_ml > geometric + 1e-9 {
            return Err(Error::Config {
                path: "container.capacity_ml".into(),
                message: format!("exceeds the cylinder volume {geometric:.1} ml"),
            });
        }
        Ok(())
    }
}

/// Liquid between spout and receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parcel {
    pub arrival_time: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateReading {
    pub force: f64,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub t: f64,
    pub initial_volume: f64,
    pub source_volume: f64,
    pub tilt_angle: f64,
    pub in_flight: VecDeque<Parcel>,
    pub received_volume: f64,
    pub plate_filter: ButterworthLowPass,
    pub spout_height: f64,
    plate_force: f64,
    plate_t: f64,
    next_plate_t: f64,
    tare: f64,
}

impl SimWorld {
    /// Upright container holding `source_volume` ml, empty receiver, plate
    /// at rest and tared.
    pub fn new(source_volume: f64, spout_height: f64) -> Self {
        let mut plate_filter = ButterworthLowPass::new(PLATE_CUTOFF_HZ, PLATE_HZ);
        plate_filter.settle_at(0.0);
        SimWorld {
            t: 0.0,
            initial_volume: source_volume,
            source_volume,
            tilt_angle: 0.0,
            in_flight: VecDeque::new(),
            received_volume: 0.0,
            plate_filter,
            spout_height,
            plate_force: 0.0,
            plate_t: 0.0,
            next_plate_t: PLATE_PERIOD,
            tare: 0.0,
        }
    }

    pub fn in_flight_volume(&self) -> f64 {
        self.in_flight.iter().fold(0.0, |acc, p| acc + p.volume)
    }

    /// `source₀ − (source + in flight + received)` [ml].
    pub fn mass_residual(&self) -> f64 {
        self.initial_volume - (self.source_volume + self.in_flight_volume() + self.received_volume)
    }

    /// Volume that has left the source so far [ml].
    pub fn source_loss(&self) -> f64 {
        self.initial_volume - self.source_volume
    }

    /// Zeroes the plate at its current reading.
    pub fn tare_plate(&mut self) {
        self.tare += self.plate_force;
        self.plate_force = 0.0;
    }
}

/// `sqrt(2h/g)`.
pub fn free_fall_delay(spout_height: f64) -> Result<f64> {
    if !(spout_height >= 0.0) {
        return Err(Error::Argument(format!(
            "spout height must be non-negative, got {spout_height}"
        )));
    }
    Ok((2.0 * spout_height / GRAVITY).sqrt())
}

pub fn plate_read(world: &SimWorld) -> PlateReading {
    PlateReading {
        force: world.plate_force,
        t: world.plate_t,
    }
}

#[derive(Debug, Clone)]
pub enum Outflow {
    Geometric(Arc<OutflowModel>),
    /// Fixed rate [ml/s] regardless of tilt, until the source is empty.
    Constant(f64),
}

impl Outflow {
    pub fn rate(&self, volume: f64, tilt: f64) -> f64 {
        match self {
            Outflow::Geometric(m) => m.rate(volume, tilt),
            Outflow::Constant(r) => {
                if volume > 0.0 {
                    *r
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum SpoutModel {
    /// Constant spout-to-receiver height [m].
    Fixed(f64),
    /// Height from the arm's forward kinematics at the current tilt.
    Arm(Arc<Scene>),
}

impl SpoutModel {
    pub fn height(&self, tilt: f64) -> f64 {
        match self {
            SpoutModel::Fixed(h) => *h,
            SpoutModel::Arm(scene) => scene.spout_height(tilt),
        }
    }
}

/// Tabulating the outflow is the costly part of building a simulator, so
/// tables are shared between simulators of the same container.
fn shared_outflow(spec: &ContainerSpec) -> Arc<OutflowModel> {
    static CACHE: OnceLock<Mutex<Vec<(ContainerSpec, Arc<OutflowModel>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut entries = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((_, m)) = entries.iter().find(|(s, _)| s == spec) {
        return m.clone();
    }
    let model = Arc::new(OutflowModel::new(spec));
    entries.push((spec.clone(), model.clone()));
    model
}

#[derive(Debug, Clone)]
pub struct PourSim {
    outflow: Outflow,
    spout: SpoutModel,
}

impl PourSim {
    pub fn new(container: &ContainerSpec, spout: SpoutModel) -> Self {
        PourSim {
            outflow: Outflow::Geometric(shared_outflow(container)),
            spout,
        }
    }

    pub fn with_outflow(outflow: Outflow, spout: SpoutModel) -> Self {
        PourSim { outflow, spout }
    }

    pub fn spout(&self) -> &SpoutModel {
        &self.spout
    }

    pub fn outflow(&self) -> &Outflow {
        &self.outflow
    }

    pub fn initial_world(&self, source_volume: f64) -> SimWorld {
        SimWorld::new(source_volume, self.spout.height(0.0))
    }

    pub fn step(&self, mut world: SimWorld, wrist_velocity: f64, dt: f64) -> SimWorld {
        debug_assert!(dt > 0.0);
        let rate = self.outflow.rate(world.source_volume, world.tilt_angle);
        let dv = (rate * dt).min(world.source_volume).max(0.0);
        world.source_volume -= dv;
        world.tilt_angle += wrist_velocity * dt;
        world.t += dt;
        if wrist_velocity != 0.0 {
            world.spout_height = self.spout.height(world.tilt_angle);
        }
        if dv > 0.0 {
            let delay = (2.0 * world.spout_height.max(0.0) / GRAVITY).sqrt();
            world.in_flight.push_back(Parcel {
                arrival_time: world.t + delay,
                volume: dv,
            });
        }
        // Arrival times are not monotone when the spout height changes, so
        // scan the whole queue.
        if world.in_flight.iter().any(|p| p.arrival_time <= world.t) {
            let now = world.t;
            let mut landed = 0.0;
            world.in_flight.retain(|p| {
                if p.arrival_time <= now {
                    landed += p.volume;
                    false
                } else {
                    true
                }
            });
            world.received_volume += landed;
        }
        while world.t + CLOCK_EPS >= world.next_plate_t {
            let force = world.plate_filter.update(ml_to_newtons(world.received_volume));
            world.plate_force = force - world.tare;
            world.plate_t = world.next_plate_t;
            world.next_plate_t += PLATE_PERIOD;
        }
        world
    }
}

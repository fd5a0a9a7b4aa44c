//! Static intersection configuration, per-vehicle state and the geometric
//! and timing predicates shared by the rest of the crate.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::planner::TrajectoryPlan;

/// Tolerance used when checking that a duration is an integer multiple of
/// the sampling time.
const GRID_TOL: f64 = 1e-9;

/// Static geometry, speed limits, IDM parameters and timing constants.
///
/// Field names in configuration files are the serde names below (`L_C`,
/// `T_RL`, ...). Lanes are numbered from 1 in `non_conflicting_pairs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionConfig {
    pub n_lanes: usize,
    #[serde(rename = "L_M")]
    pub l_m: f64,
    #[serde(rename = "L_C")]
    pub l_c: f64,
    #[serde(rename = "L_E")]
    pub l_e: f64,
    pub v_max: f64,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub non_conflicting_pairs: Vec<(usize, usize)>,
    #[serde(rename = "T_S")]
    pub t_s: f64,
    #[serde(rename = "T_RL")]
    pub t_rl: f64,
    #[serde(rename = "T_alert")]
    pub t_alert: f64,
    pub d_a: usize,
    pub d_follow: f64,
    pub delta_a: f64,
    pub s0: f64,
    #[serde(rename = "T_headway")]
    pub t_headway: f64,
    pub epsilon_idm: f64,
    pub u_max: f64,
    pub u_min: f64,
    /// Physical deceleration cap applied after the IDM formula.
    pub u_min_hard: f64,
    /// Arrival rate in vehicles/hour.
    pub lambda_arrival: f64,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            n_lanes: 4,
            l_m: 30.0,
            l_c: 400.0,
            l_e: 400.0,
            v_max: 13.0,
            n_max: 100,
            non_conflicting_pairs: vec![(1, 3), (2, 4)],
            t_s: 0.5,
            t_rl: 15.0,
            t_alert: 3.0,
            d_a: 2,
            d_follow: 5.0,
            delta_a: 12.0,
            s0: 2.0,
            t_headway: 5.0,
            epsilon_idm: 1.6,
            u_max: 1.5,
            u_min: 2.0,
            u_min_hard: 6.0,
            lambda_arrival: 450.0,
            w: vec![1.0; 4],
        }
    }
}

fn grid_multiple(duration: f64, step: f64) -> Option<usize> {
    let ratio = duration / step;
    let rounded = ratio.round();
    if rounded >= 0.0 && (ratio - rounded).abs() <= GRID_TOL * ratio.abs().max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

impl IntersectionConfig {
    /// Checks every invariant and reports the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, reason: String| {
            Err(ConfigError::InvalidField {
                field: field.to_string(),
                reason,
            })
        };

        if self.n_lanes != 4 {
            return invalid("n_lanes", format!("must be 4, got {}", self.n_lanes));
        }
        let positive = [
            ("L_M", self.l_m),
            ("L_C", self.l_c),
            ("L_E", self.l_e),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("u_min", self.u_min),
            ("u_min_hard", self.u_min_hard),
            ("s0", self.s0),
            ("T_headway", self.t_headway),
            ("epsilon_idm", self.epsilon_idm),
            ("delta_a", self.delta_a),
            ("d_follow", self.d_follow),
            ("T_S", self.t_s),
            ("T_RL", self.t_rl),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return invalid(name, format!("must be finite and > 0, got {value}"));
            }
        }
        if !(self.t_alert.is_finite() && self.t_alert >= 0.0) {
            return invalid("T_alert", format!("must be finite and >= 0, got {}", self.t_alert));
        }
        if !(self.lambda_arrival.is_finite() && self.lambda_arrival >= 0.0) {
            return invalid(
                "lambda_arrival",
                format!("must be finite and >= 0, got {}", self.lambda_arrival),
            );
        }
        if self.n_max == 0 {
            return invalid("N_max", "must be >= 1".into());
        }
        if self.d_a == 0 {
            return invalid("d_a", "must be >= 1".into());
        }
        let n = match grid_multiple(self.t_rl, self.t_s) {
            Some(n) if n >= 1 => n,
            _ => return invalid("T_RL", format!("{} is not an integer multiple of T_S={}", self.t_rl, self.t_s)),
        };
        match grid_multiple(self.t_alert, self.t_s) {
            Some(m) if m < n => {}
            Some(m) => return invalid("T_alert", format!("{m} steps is not shorter than T_RL ({n} steps)")),
            None => {
                return invalid(
                    "T_alert",
                    format!("{} is not an integer multiple of T_S={}", self.t_alert, self.t_s),
                )
            }
        }
        if self.delta_a >= self.l_c {
            return invalid("delta_a", format!("must be < L_C ({})", self.l_c));
        }
        if self.d_follow >= self.l_c {
            return invalid("d_follow", format!("must be < L_C ({})", self.l_c));
        }
        if self.u_min_hard < self.u_min {
            return invalid("u_min_hard", format!("must be >= u_min ({})", self.u_min));
        }
        if self.w.len() != self.n_lanes {
            return invalid("W", format!("expected {} weights, got {}", self.n_lanes, self.w.len()));
        }
        if let Some(bad) = self.w.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return invalid("W", format!("weights must be finite and >= 0, got {bad}"));
        }
        let mut pairs: Vec<(usize, usize)> = self
            .non_conflicting_pairs
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        pairs.sort_unstable();
        if pairs != [(1, 3), (2, 4)] {
            return invalid(
                "non_conflicting_pairs",
                format!("must be {{(1,3),(2,4)}}, got {:?}", self.non_conflicting_pairs),
            );
        }
        Ok(())
    }

    /// Number of sampling steps in one traffic-light block.
    pub fn steps_per_block(&self) -> usize {
        (self.t_rl / self.t_s).round() as usize
    }

    /// Number of sampling steps of an amber phase.
    pub fn alert_steps(&self) -> usize {
        (self.t_alert / self.t_s).round() as usize
    }

    /// `T_delay = d_a · T_RL`.
    pub fn t_delay(&self) -> f64 {
        self.d_a as f64 * self.t_rl
    }

    /// Position at which a vehicle leaves the system.
    pub fn total_length(&self) -> f64 {
        self.l_c + self.l_m + self.l_e
    }

    /// Position of the AV stopping point ahead of a red light.
    pub fn stop_point(&self) -> f64 {
        self.l_c - self.delta_a
    }
}

/// Time a vehicle entering at `t_entry` would reach the merging zone at free flow.
pub fn free_flow_merge_time(t_entry: f64, cfg: &IntersectionConfig) -> f64 {
    t_entry + cfg.l_c / cfg.v_max
}

/// Time a vehicle entering at `t_entry` would leave the merging zone at free flow.
pub fn free_flow_exit_time(t_entry: f64, cfg: &IntersectionConfig) -> f64 {
    t_entry + (cfg.l_c + cfg.l_m) / cfg.v_max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Control,
    Merging,
    Exiting,
    Exited,
}

/// Zone containing `position`. Intervals are left-closed, so a vehicle at
/// exactly `L_C` is already in the merging zone.
pub fn zone_of(position: f64, cfg: &IntersectionConfig) -> Result<Zone, ConfigError> {
    if !(position >= 0.0) {
        return Err(ConfigError::NegativePosition(position));
    }
    let zone = if position < cfg.l_c {
        Zone::Control
    } else if position < cfg.l_c + cfg.l_m {
        Zone::Merging
    } else if position < cfg.total_length() {
        Zone::Exiting
    } else {
        Zone::Exited
    };
    Ok(zone)
}

/// Whether lanes `lane_a` and `lane_b` (numbered from 1) conflict.
pub fn are_conflicting(
    lane_a: usize,
    lane_b: usize,
    cfg: &IntersectionConfig,
) -> Result<bool, ConfigError> {
    for lane in [lane_a, lane_b] {
        if lane == 0 || lane > cfg.n_lanes {
            return Err(ConfigError::LaneOutOfRange {
                lane,
                n_lanes: cfg.n_lanes,
            });
        }
    }
    if lane_a == lane_b {
        return Ok(false);
    }
    let compatible = cfg
        .non_conflicting_pairs
        .iter()
        .any(|&(j, l)| (j, l) == (lane_a, lane_b) || (l, j) == (lane_a, lane_b));
    Ok(!compatible)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleKind {
    #[serde(rename = "HDV")]
    Hdv,
    #[serde(rename = "AV")]
    Av,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Hdv => "HDV",
            VehicleKind::Av => "AV",
        }
    }
}

/// Kinematic record of one vehicle. `lane` is a 0-based index.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub lane: usize,
    pub kind: VehicleKind,
    /// Meters from the control-zone entry.
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub t_entry: f64,
    pub plan: Option<TrajectoryPlan>,
    /// Latched: once an AV falls back to IDM it never plans again.
    pub fallback_engaged: bool,
}

impl VehicleState {
    pub fn new(id: u64, lane: usize, kind: VehicleKind, speed: f64, accel: f64, t_entry: f64) -> Self {
        Self {
            id,
            lane,
            kind,
            position: 0.0,
            speed,
            accel,
            t_entry,
            plan: None,
            fallback_engaged: false,
        }
    }

    pub fn engage_fallback(&mut self) {
        self.fallback_engaged = true;
        self.plan = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Green,
    Red,
    Amber,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Green => "green",
            Phase::Red => "red",
            Phase::Amber => "amber",
        }
    }
}

/// Light state of one lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePhase {
    pub phase: Phase,
    pub phase_entered_at: f64,
}

//! Time-stepped world: arrivals, acceleration selection, integration, light
//! actuation with delayed actions, metrics.

pub mod metrics;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::ActionId;
use crate::error::{EngineError, PlanError, StatsError};
use crate::geometry::{free_flow_exit_time, IntersectionConfig, LanePhase, Phase, VehicleKind, VehicleState};
use crate::idm::{hdv_accel, IdmContext, LeaderObs};
use crate::planner::{should_fallback, Announcement, PlanKind, PlanRequest, Planner, TrajectoryPlan};
use crate::rng::{stream, Stream};

pub use metrics::{BlockRecord, MetricsLog, RedEntry, VehicleRecord};

pub type QueueVector = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub p_av: f64,
    pub horizon_s: f64,
    /// Read the arrival rate as per lane instead of total.
    pub lambda_per_lane: bool,
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    /// Actions pending at the first boundary.
    pub initial_action: ActionId,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            p_av: 0.5,
            horizon_s: 3600.0,
            lambda_per_lane: false,
            speed_min: 9.0,
            speed_max: 11.0,
            accel_min: 0.0,
            accel_max: 0.5,
            initial_action: ActionId::OpenPair13,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, cfg: &IntersectionConfig) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError::InvalidField;
        let bad = |field: &str, reason: &str| InvalidField {
            field: field.into(),
            reason: reason.into(),
        };
        if !(0.0..=1.0).contains(&self.p_av) {
            return Err(bad("p_av", "must lie in [0, 1]"));
        }
        if !(self.horizon_s.is_finite() && self.horizon_s >= 0.0) {
            return Err(bad("horizon_s", "must be finite and nonnegative"));
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max && self.speed_max <= cfg.v_max) {
            return Err(bad("speed_min", "need 0 ≤ speed_min ≤ speed_max ≤ v_max"));
        }
        if !(self.accel_min.is_finite() && self.accel_min <= self.accel_max && self.accel_max.is_finite()) {
            return Err(bad("accel_min", "need accel_min ≤ accel_max"));
        }
        Ok(())
    }
}

/// Deterministic arrival replacing the Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedArrival {
    pub t: f64,
    /// 0-based lane.
    pub lane: usize,
    pub kind: VehicleKind,
    pub speed: f64,
    pub accel: f64,
}

/// `‖W∘X_k‖₁ − ‖W∘X_{k+1}‖₁`.
pub fn compute_reward(x_k: &[u32], x_k1: &[u32], w: &[f64]) -> Result<f64, StatsError> {
    if x_k.len() != x_k1.len() {
        return Err(StatsError::LengthMismatch(x_k.len(), x_k1.len()));
    }
    if w.len() != x_k.len() {
        return Err(StatsError::LengthMismatch(w.len(), x_k.len()));
    }
    let weigh = |x: &[u32]| x.iter().zip(w).map(|(&q, &wi)| wi * q as f64).sum::<f64>();
    Ok(weigh(x_k) - weigh(x_k1))
}

#[derive(Debug, Clone, PartialEq)]
struct Tracked {
    state: VehicleState,
    energy: f64,
    t_mz_exit: Option<f64>,
    /// Block in which a stop could not be planned; IDM drives until it ends.
    idm_block: Option<u64>,
    stop_plans: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcome {
    pub k: u64,
    pub x_before: QueueVector,
    pub x_after: QueueVector,
    pub reward: f64,
}

pub struct Engine {
    cfg: IntersectionConfig,
    sim: SimConfig,
    planner: Planner,
    step_index: u64,
    total_steps: u64,
    lanes: Vec<Vec<Tracked>>,
    pending: VecDeque<ActionId>,
    block_action: Option<ActionId>,
    block_amber: Vec<bool>,
    actuated: Option<u64>,
    arrivals_rng: ChaCha8Rng,
    kinds_rng: ChaCha8Rng,
    speeds_rng: ChaCha8Rng,
    poisson: Option<Poisson<f64>>,
    script: Option<VecDeque<ScriptedArrival>>,
    next_id: u64,
    metrics: MetricsLog,
}

impl Engine {
    pub fn new(cfg: IntersectionConfig, sim: SimConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        sim.validate(&cfg)?;
        let per_step = cfg.lambda_arrival / 3600.0 * cfg.t_s;
        let poisson = if per_step > 0.0 {
            Some(Poisson::new(per_step).map_err(|e| crate::error::ConfigError::InvalidField {
                field: "lambda".into(),
                reason: e.to_string(),
            })?)
        } else {
            None
        };
        let total_steps = (sim.horizon_s / cfg.t_s).round() as u64;
        let n = cfg.n_lanes;
        Ok(Self {
            planner: Planner::new(cfg.clone()),
            pending: std::iter::repeat_n(sim.initial_action, cfg.d_a).collect(),
            lanes: vec![Vec::new(); n],
            block_action: None,
            block_amber: vec![false; n],
            actuated: None,
            arrivals_rng: stream(sim.seed, Stream::Arrivals),
            kinds_rng: stream(sim.seed, Stream::Kinds),
            speeds_rng: stream(sim.seed, Stream::Speeds),
            poisson,
            script: None,
            next_id: 0,
            metrics: MetricsLog::default(),
            step_index: 0,
            total_steps,
            cfg,
            sim,
        })
    }

    /// Engine whose arrivals come only from `script`.
    pub fn with_script(cfg: IntersectionConfig, sim: SimConfig, mut script: Vec<ScriptedArrival>) -> Result<Self, EngineError> {
        let mut engine = Self::new(cfg, sim)?;
        script.sort_by(|a, b| a.t.total_cmp(&b.t));
        engine.script = Some(script.into());
        Ok(engine)
    }

    pub fn planner_mut(&mut self) -> &mut Planner {
        &mut self.planner
    }

    pub fn config(&self) -> &IntersectionConfig {
        &self.cfg
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn clock(&self) -> f64 {
        self.step_index as f64 * self.cfg.t_s
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.total_steps
    }

    pub fn is_boundary(&self) -> bool {
        self.step_index % self.cfg.steps_per_block() as u64 == 0
    }

    pub fn current_block(&self) -> u64 {
        self.step_index / self.cfg.steps_per_block() as u64
    }

    pub fn pending_actions(&self) -> Vec<ActionId> {
        self.pending.iter().copied().collect()
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.lanes.iter().flatten().map(|t| &t.state)
    }

    pub fn lane_vehicles(&self, lane: usize) -> Vec<&VehicleState> {
        self.lanes[lane].iter().map(|t| &t.state).collect()
    }

    pub fn vehicle_count(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    /// Counts of vehicles in each lane's control zone.
    pub fn observe_state(&self) -> QueueVector {
        self.lanes
            .iter()
            .map(|lane| lane.iter().filter(|t| t.state.position < self.cfg.l_c).count() as u32)
            .collect()
    }

    /// Light state of `lane` during the current step.
    pub fn lane_phase(&self, lane: usize) -> LanePhase {
        let per_block = self.cfg.steps_per_block() as u64;
        let block_start = self.current_block() as f64 * self.cfg.t_rl;
        let in_block = self.step_index % per_block;
        let green = self.block_action.is_some_and(|a| a.is_green(lane));
        let color = if green { Phase::Green } else { Phase::Red };
        if self.block_amber[lane] {
            if in_block < self.cfg.alert_steps() as u64 {
                LanePhase {
                    phase: Phase::Amber,
                    phase_entered_at: block_start,
                }
            } else {
                LanePhase {
                    phase: color,
                    phase_entered_at: block_start + self.cfg.t_alert,
                }
            }
        } else {
            LanePhase {
                phase: color,
                phase_entered_at: block_start,
            }
        }
    }

    fn close_previous_block(&mut self, x_now: &QueueVector) {
        if let Some(last) = self.metrics.blocks.last_mut() {
            if last.reward.is_none() {
                let r = compute_reward(&last.queues, x_now, &self.cfg.w).expect("lane counts agree");
                last.reward = Some(r);
            }
        }
    }

    /// Starts block `k`: applies the oldest pending action and queues `new_action`.
    pub fn actuate_block_boundary(&mut self, new_action: ActionId) -> Result<(), EngineError> {
        if !self.is_boundary() {
            return Err(EngineError::NotOnBoundary { step: self.step_index });
        }
        let k = self.current_block();
        if self.actuated == Some(k) {
            return Err(EngineError::AlreadyActuated { block: k });
        }
        let x = self.observe_state();
        self.close_previous_block(&x);
        let applied = self.pending.pop_front().expect("pending holds d_a actions");
        let n = self.cfg.n_lanes;
        self.block_amber = match self.block_action {
            Some(prev) => (0..n).map(|l| prev.is_green(l) != applied.is_green(l)).collect(),
            None => vec![false; n],
        };
        self.block_action = Some(applied);
        self.pending.push_back(new_action);
        self.actuated = Some(k);
        self.metrics.blocks.push(BlockRecord {
            k,
            t: self.clock(),
            queues: x,
            action: new_action,
            applied,
            reward: None,
            phases: (0..n)
                .map(|l| if applied.is_green(l) { Phase::Green } else { Phase::Red })
                .collect(),
            amber: self.block_amber.clone(),
        });
        self.broadcast(k, new_action, applied);
        Ok(())
    }

    fn broadcast(&mut self, k: u64, announced: ActionId, applied: ActionId) {
        let d_a = self.cfg.d_a;
        let before = if d_a >= 2 { self.pending[d_a - 2] } else { applied };
        let t_now = self.clock();
        let t_at = t_now + self.cfg.t_delay();
        let l_c = self.cfg.l_c;
        let mut jobs: Vec<(usize, usize, PlanRequest, Option<TrajectoryPlan>)> = Vec::new();
        for lane in 0..self.lanes.len() {
            let green = announced.is_green(lane);
            let amber_applies = green != before.is_green(lane);
            for i in 0..self.lanes[lane].len() {
                let leader = if i == 0 { None } else { Some(self.lanes[lane][i - 1].state.clone()) };
                let t = &mut self.lanes[lane][i];
                let s = &t.state;
                if s.kind != VehicleKind::Av || s.fallback_engaged || s.position >= l_c {
                    continue;
                }
                if should_fallback(s, leader.as_ref(), &self.cfg) {
                    t.state.engage_fallback();
                    self.metrics.fallbacks += 1;
                    continue;
                }
                let req = PlanRequest {
                    t_now,
                    p_now: s.position,
                    v_now: s.speed.min(self.cfg.v_max),
                    announced: if green {
                        Announcement::GreenAt(t_at)
                    } else {
                        Announcement::RedAt(t_at)
                    },
                    amber_applies,
                };
                match (&s.plan, green) {
                    (Some(p), true) if p.kind == PlanKind::Stop => jobs.push((lane, i, req, Some(p.clone()))),
                    (None, _) => jobs.push((lane, i, req, None)),
                    _ => {}
                }
            }
        }
        let planner = &self.planner;
        let results: Vec<Result<TrajectoryPlan, PlanError>> = jobs
            .par_iter()
            .map(|(_, _, req, old)| match old {
                Some(plan) => planner.replan_on_green(plan, req),
                None => planner.plan(req),
            })
            .collect();
        for ((lane, i, _, _), result) in jobs.into_iter().zip(results) {
            let t = &mut self.lanes[lane][i];
            match result {
                Ok(plan) => {
                    if plan.kind == PlanKind::Stop {
                        t.stop_plans += 1;
                    }
                    t.state.plan = Some(plan);
                }
                Err(PlanError::AlreadyPastStopPoint { .. }) => t.idm_block = Some(k),
                Err(_) => {
                    t.state.engage_fallback();
                    self.metrics.plan_failures += 1;
                    self.metrics.fallbacks += 1;
                }
            }
        }
    }

    fn spawn(&mut self, lane: usize, kind: VehicleKind, speed: f64, accel: f64) {
        self.metrics.spawned += 1;
        if self.vehicle_count() >= self.cfg.n_max {
            self.metrics.dropped_capacity += 1;
            return;
        }
        if let Some(last) = self.lanes[lane].last() {
            let gap = last.state.position;
            if gap <= crate::idm::interaction_distance(speed, last.state.speed, &self.cfg) {
                self.metrics.dropped_jam += 1;
                return;
            }
        }
        let state = VehicleState::new(self.next_id, lane, kind, speed, accel, self.clock());
        self.next_id += 1;
        self.lanes[lane].push(Tracked {
            state,
            energy: 0.0,
            t_mz_exit: None,
            idm_block: None,
            stop_plans: 0,
        });
    }

    fn spawn_arrivals(&mut self) {
        let h = self.cfg.t_s;
        let now = self.clock();
        if let Some(script) = self.script.as_mut() {
            let mut due = Vec::new();
            while script.front().is_some_and(|a| a.t < now + h - 1e-9) {
                due.push(script.pop_front().expect("front checked"));
            }
            for a in due {
                self.spawn(a.lane, a.kind, a.speed, a.accel);
            }
            return;
        }
        let Some(poisson) = self.poisson else { return };
        let n = self.cfg.n_lanes;
        let lanes: Vec<usize> = if self.sim.lambda_per_lane {
            (0..n)
                .flat_map(|lane| {
                    let count = poisson.sample(&mut self.arrivals_rng) as usize;
                    std::iter::repeat_n(lane, count)
                })
                .collect()
        } else {
            let count = poisson.sample(&mut self.arrivals_rng) as usize;
            (0..count).map(|_| self.arrivals_rng.random_range(0..n)).collect()
        };
        for lane in lanes {
            let is_av = self.kinds_rng.random::<f64>() < self.sim.p_av;
            let speed = self.speeds_rng.random_range(self.sim.speed_min..=self.sim.speed_max);
            let accel = self.speeds_rng.random_range(self.sim.accel_min..=self.sim.accel_max);
            let kind = if is_av { VehicleKind::Av } else { VehicleKind::Hdv };
            self.spawn(lane, kind, speed, accel);
        }
    }

    fn choose_accel(&self, lane: usize, i: usize, phase: LanePhase) -> Result<(f64, bool), EngineError> {
        let t = &self.lanes[lane][i];
        let s = &t.state;
        let leader = if i == 0 { None } else { Some(&self.lanes[lane][i - 1].state) };
        let idm = || {
            hdv_accel(&IdmContext {
                self_speed: s.speed,
                self_position: s.position,
                desired_speed: self.cfg.v_max,
                leader: leader.map(|l| LeaderObs {
                    position: l.position,
                    speed: l.speed,
                }),
                lane_phase: phase.phase,
                amber_left: phase.phase_entered_at + self.cfg.t_alert - self.clock(),
                cfg: &self.cfg,
            })
        };
        if s.kind == VehicleKind::Hdv || s.fallback_engaged {
            return Ok((idm()?, false));
        }
        if should_fallback(s, leader, &self.cfg) {
            return Ok((idm()?, true));
        }
        if t.idm_block == Some(self.current_block()) {
            return Ok((idm()?, false));
        }
        let h = self.cfg.t_s;
        let u = match &s.plan {
            Some(plan) => match plan.control_at(self.clock()) {
                Some(u) => u,
                None => match plan.kind {
                    PlanKind::Cross => (self.cfg.v_max - s.speed) / h,
                    PlanKind::Stop => -s.speed / h,
                },
            },
            None if s.position >= self.cfg.l_c => idm()?,
            None => 0.0,
        };
        Ok((u, false))
    }

    /// Advances one sampling step.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.is_boundary() && self.actuated != Some(self.current_block()) {
            return Err(EngineError::BoundaryNotActuated {
                block: self.current_block(),
            });
        }
        self.spawn_arrivals();
        let h = self.cfg.t_s;
        let now = self.clock();
        let n = self.lanes.len();
        let phases: Vec<LanePhase> = (0..n).map(|l| self.lane_phase(l)).collect();
        let mut decisions = Vec::with_capacity(n);
        for lane in 0..n {
            let mut lane_dec = Vec::with_capacity(self.lanes[lane].len());
            for i in 0..self.lanes[lane].len() {
                lane_dec.push(self.choose_accel(lane, i, phases[lane])?);
            }
            decisions.push(lane_dec);
        }
        let (l_c, mz_end, exit) = (self.cfg.l_c, self.cfg.l_c + self.cfg.l_m, self.cfg.total_length());
        for lane in 0..n {
            for (t, &(u, fallback)) in self.lanes[lane].iter_mut().zip(&decisions[lane]) {
                if fallback {
                    t.state.engage_fallback();
                    self.metrics.fallbacks += 1;
                }
                let v = t.state.speed;
                let u_eff = u.max(-v / h);
                let v_new = (v + u_eff * h).max(0.0);
                let p_old = t.state.position;
                let p_new = p_old + 0.5 * (v + v_new) * h;
                let frac = |mark: f64| now + h * (mark - p_old) / (p_new - p_old);
                if p_old < l_c && p_new >= l_c && phases[lane].phase == Phase::Red {
                    self.metrics.red_entries.push(RedEntry {
                        t: frac(l_c),
                        id: t.state.id,
                        lane: lane + 1,
                    });
                }
                if p_old < mz_end && p_new >= mz_end {
                    t.t_mz_exit = Some(frac(mz_end));
                }
                t.state.position = p_new;
                t.state.speed = v_new;
                t.state.accel = u_eff;
                t.energy += u_eff * u_eff * h;
            }
            while self.lanes[lane].first().is_some_and(|t| t.state.position >= exit) {
                let t = self.lanes[lane].remove(0);
                let t_exit = t.t_mz_exit.unwrap_or(now + h);
                self.metrics.vehicles.push(VehicleRecord {
                    id: t.state.id,
                    lane: lane + 1,
                    kind: t.state.kind,
                    t_entry: t.state.t_entry,
                    t_exit,
                    wait_time: t_exit - free_flow_exit_time(t.state.t_entry, &self.cfg),
                    energy: t.energy,
                    fallback: t.state.fallback_engaged,
                    stops: t.stop_plans,
                });
            }
            for pair in self.lanes[lane].windows(2) {
                let (front, rear) = (&pair[0].state, &pair[1].state);
                if front.position <= rear.position {
                    return Err(EngineError::Collision {
                        t: now + h,
                        lane: lane + 1,
                        front: front.id,
                        rear: rear.id,
                        front_position: front.position,
                        rear_position: rear.position,
                    });
                }
            }
        }
        self.step_index += 1;
        self.metrics.in_system = self.vehicle_count() as u64;
        Ok(())
    }

    /// Actuates the boundary and runs the whole block (or what remains of the horizon).
    pub fn run_block(&mut self, new_action: ActionId) -> Result<BlockOutcome, EngineError> {
        let k = self.current_block();
        self.actuate_block_boundary(new_action)?;
        let x_before = self.metrics.blocks.last().expect("block just recorded").queues.clone();
        let per_block = self.cfg.steps_per_block();
        for _ in 0..per_block {
            if self.is_done() {
                break;
            }
            self.step()?;
        }
        let x_after = self.observe_state();
        let reward = compute_reward(&x_before, &x_after, &self.cfg.w).expect("lane counts agree");
        Ok(BlockOutcome {
            k,
            x_before,
            x_after,
            reward,
        })
    }

    /// Closes the last block's reward and returns the log.
    pub fn finish(mut self) -> MetricsLog {
        let x = self.observe_state();
        self.close_previous_block(&x);
        self.metrics.in_system = self.vehicle_count() as u64;
        self.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sim(p_av: f64, horizon: f64) -> SimConfig {
        SimConfig {
            p_av,
            horizon_s: horizon,
            ..SimConfig::default()
        }
    }

    fn scripted(arrivals: Vec<ScriptedArrival>, horizon: f64) -> Engine {
        Engine::with_script(IntersectionConfig::default(), sim(0.0, horizon), arrivals).unwrap()
    }

    #[test]
    fn reward_examples() {
        let ones = [1.0; 4];
        assert_eq!(compute_reward(&[1, 2, 3, 4], &[1, 2, 3, 4], &ones).unwrap(), 0.0);
        assert_eq!(compute_reward(&[4, 0, 4, 0], &[0, 0, 0, 0], &ones).unwrap(), 8.0);
        assert_eq!(compute_reward(&[2, 1, 0, 0], &[0, 3, 0, 0], &[2.0, 1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert!(compute_reward(&[1, 2], &[1, 2, 3], &ones).is_err());
    }

    #[test]
    fn empty_intersection_only_advances_clock() {
        let mut e = scripted(vec![], 30.0);
        e.run_block(ActionId::OpenPair13).unwrap();
        assert_abs_diff_eq!(e.clock(), 15.0);
        assert_eq!(e.observe_state(), vec![0, 0, 0, 0]);
        assert_eq!(e.vehicle_count(), 0);
    }

    #[test]
    fn cruising_hdv_holds_speed() {
        let mut e = scripted(
            vec![ScriptedArrival {
                t: 0.0,
                lane: 0,
                kind: VehicleKind::Hdv,
                speed: 13.0,
                accel: 0.0,
            }],
            60.0,
        );
        e.actuate_block_boundary(ActionId::OpenPair13).unwrap();
        e.step().unwrap();
        let v = e.lane_vehicles(0)[0];
        assert_abs_diff_eq!(v.position, 13.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.speed, 13.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_must_be_actuated() {
        let mut e = scripted(vec![], 30.0);
        assert!(matches!(e.step(), Err(EngineError::BoundaryNotActuated { block: 0 })));
        e.actuate_block_boundary(ActionId::OpenPair13).unwrap();
        assert!(matches!(
            e.actuate_block_boundary(ActionId::OpenPair13),
            Err(EngineError::AlreadyActuated { block: 0 })
        ));
        e.step().unwrap();
        assert!(matches!(
            e.actuate_block_boundary(ActionId::OpenPair13),
            Err(EngineError::NotOnBoundary { step: 1 })
        ));
    }

    #[test]
    fn amber_only_on_color_change() {
        let mut e = scripted(vec![], 120.0);
        e.run_block(ActionId::OpenPair24).unwrap(); // block 0 applies the initial open13
        assert_eq!(e.lane_phase(0).phase, Phase::Green);
        e.run_block(ActionId::OpenPair13).unwrap(); // block 1: open13 again
        e.actuate_block_boundary(ActionId::OpenPair13).unwrap(); // block 2: open24
        assert_eq!(e.lane_phase(0).phase, Phase::Amber);
        assert_eq!(e.lane_phase(1).phase, Phase::Amber);
        for _ in 0..6 {
            e.step().unwrap();
        }
        assert_eq!(e.lane_phase(0).phase, Phase::Red);
        assert_eq!(e.lane_phase(1).phase, Phase::Green);
        let blocks = &e.metrics().blocks;
        assert_eq!(blocks[1].amber, vec![false; 4]);
        assert_eq!(blocks[2].applied, ActionId::OpenPair24);
    }

    #[test]
    fn observe_counts_control_zone_only() {
        let mut e = scripted(vec![], 30.0);
        e.actuate_block_boundary(ActionId::OpenPair13).unwrap();
        for (id, pos) in [(0u64, 400.0), (1, 100.0), (2, 50.0), (3, 10.0)] {
            let lane = if id == 0 { 0 } else { 1 };
            let mut s = VehicleState::new(id, lane, VehicleKind::Hdv, 5.0, 0.0, 0.0);
            s.position = pos;
            e.lanes[lane].push(Tracked {
                state: s,
                energy: 0.0,
                t_mz_exit: None,
                idm_block: None,
                stop_plans: 0,
            });
        }
        assert_eq!(e.observe_state(), vec![0, 3, 0, 0]);
    }

    #[test]
    fn capacity_suppresses_arrivals() {
        let mut cfg = IntersectionConfig::default();
        cfg.n_max = 1;
        let arrivals = (0..3)
            .map(|i| ScriptedArrival {
                t: i as f64 * 10.0,
                lane: i,
                kind: VehicleKind::Hdv,
                speed: 10.0,
                accel: 0.0,
            })
            .collect();
        let mut e = Engine::with_script(cfg, sim(0.0, 30.0), arrivals).unwrap();
        while !e.is_done() {
            e.run_block(ActionId::OpenPair13).unwrap();
        }
        let m = e.finish();
        assert_eq!(m.spawned, 3);
        assert_eq!(m.dropped_capacity, 2);
    }

    #[test]
    fn hdv_only_spawns_no_avs() {
        let mut e = Engine::new(IntersectionConfig::default(), sim(0.0, 600.0)).unwrap();
        let mut saw = 0;
        while !e.is_done() {
            e.run_block(ActionId::OpenPair13).unwrap();
            saw += e.vehicle_count();
            assert!(e.vehicles().all(|v| v.kind == VehicleKind::Hdv));
        }
        assert!(saw > 0);
    }

    #[test]
    fn free_flow_exit_has_no_wait() {
        let mut e = scripted(
            vec![ScriptedArrival {
                t: 0.0,
                lane: 0,
                kind: VehicleKind::Hdv,
                speed: 13.0,
                accel: 0.0,
            }],
            120.0,
        );
        while !e.is_done() {
            e.run_block(ActionId::OpenPair13).unwrap();
        }
        let m = e.finish();
        assert_eq!(m.vehicles.len(), 1);
        assert!(m.vehicles[0].wait_time.abs() <= 0.5);
        assert_abs_diff_eq!(m.vehicles[0].t_exit, 430.0 / 13.0, epsilon = 0.5);
    }
}

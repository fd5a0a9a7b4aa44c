//! Minimum-energy trajectory planning for AVs ahead of an announced light.

pub mod analytic;
pub mod solver;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::geometry::{IntersectionConfig, VehicleState};
use crate::idm::interaction_distance;

pub use analytic::{analytic_min_energy, AnalyticSolution};
pub use solver::{FixedEndpoint, SolverSettings};

/// Light status the controller broadcasts `T_delay` ahead of implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Announcement {
    GreenAt(f64),
    RedAt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRequest {
    pub t_now: f64,
    pub p_now: f64,
    pub v_now: f64,
    pub announced: Announcement,
    pub amber_applies: bool,
}

impl PlanRequest {
    /// Admissible crossing window `[start, end]` for a green announcement.
    pub fn crossing_window(&self, cfg: &IntersectionConfig) -> (f64, f64) {
        let base = self.t_now + cfg.t_delay();
        let start = base + if self.amber_applies { cfg.t_alert } else { 0.0 };
        (start, base + cfg.t_rl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    Cross,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub k_vmax: f64,
    pub k_vmin: f64,
    pub k1_tcross: f64,
    pub k2_tcross: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            k_vmax: 1e3,
            k_vmin: 1e3,
            k1_tcross: 1e4,
            k2_tcross: 1e4,
        }
    }
}

impl PenaltyWeights {
    pub fn validate(&self) -> Result<(), PlanError> {
        for (name, value) in [
            ("K_vmax", self.k_vmax),
            ("K_vmin", self.k_vmin),
            ("K1_tcross", self.k1_tcross),
            ("K2_tcross", self.k2_tcross),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PlanError::InvalidRequest(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant control sequence, one entry per sampling step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPlan {
    pub t_start: f64,
    pub p_start: f64,
    pub v_start: f64,
    pub step: f64,
    pub controls: Vec<f64>,
    /// Crossing time for `Cross`, stopping time for `Stop`.
    pub t_terminal: f64,
    pub kind: PlanKind,
    pub objective_value: f64,
    /// `½∑u²·T_S`.
    pub energy: f64,
    /// `∑ max(0, v − v_max)·T_S`.
    pub speed_excess: f64,
    /// `∑ max(0, −v)·T_S`.
    pub speed_deficit: f64,
    /// Largest pointwise violation of `[0, v_max]`.
    pub max_violation: f64,
}

/// One row of the tabular plan export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanRow {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

impl TrajectoryPlan {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Control for the step starting at `t`, `None` once the plan is exhausted.
    pub fn control_at(&self, t: f64) -> Option<f64> {
        let k = ((t - self.t_start) / self.step).round();
        if k < 0.0 {
            return None;
        }
        self.controls.get(k as usize).copied()
    }

    /// States at every step boundary, integrated with the engine's scheme.
    pub fn simulate(&self) -> Vec<PlanRow> {
        let mut rows = Vec::with_capacity(self.controls.len() + 1);
        let (mut p, mut v) = (self.p_start, self.v_start);
        for (i, &u) in self.controls.iter().enumerate() {
            rows.push(PlanRow {
                t: self.t_start + i as f64 * self.step,
                u,
                v,
                p,
            });
            let nv = v + u * self.step;
            p += 0.5 * (v + nv) * self.step;
            v = nv;
        }
        rows.push(PlanRow {
            t: self.t_terminal,
            u: 0.0,
            v,
            p,
        });
        rows
    }

    pub fn terminal_state(&self) -> (f64, f64) {
        let last = *self.simulate().last().expect("simulate yields at least one row");
        (last.p, last.v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.simulate() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step_count(duration: f64, h: f64) -> usize {
    (duration / h).round().max(0.0) as usize
}

/// `½∑u²·T_S` plus speed hinge penalties, plus crossing-window penalties for
/// `Cross` plans.
pub fn penalty_objective(
    plan: &TrajectoryPlan,
    req: &PlanRequest,
    cfg: &IntersectionConfig,
    w: &PenaltyWeights,
) -> f64 {
    let h = plan.step;
    let mut v = plan.v_start;
    let mut total = 0.0;
    for &u in &plan.controls {
        v += u * h;
        total += 0.5 * u * u * h + w.k_vmax * (v - cfg.v_max).max(0.0) * h + w.k_vmin * (-v).max(0.0) * h;
    }
    if plan.kind == PlanKind::Cross {
        let (start, end) = req.crossing_window(cfg);
        total += w.k1_tcross * (start - plan.t_terminal).max(0.0);
        total += w.k2_tcross * (plan.t_terminal - end).max(0.0);
    }
    total
}

/// Gradient of [`penalty_objective`] with respect to each control.
pub fn penalty_gradient(plan: &TrajectoryPlan, cfg: &IntersectionConfig, w: &PenaltyWeights) -> Vec<f64> {
    let problem = FixedEndpoint {
        p0: plan.p_start,
        v0: plan.v_start,
        pf: 0.0,
        vf: 0.0,
        n: plan.controls.len(),
        h: plan.step,
        v_max: cfg.v_max,
        k_vmax: w.k_vmax,
        k_vmin: w.k_vmin,
    };
    let mut g = vec![0.0; plan.controls.len()];
    problem.gradient(&plan.controls, &mut g);
    g
}

/// True iff a leader is within interaction range; the caller latches fallback.
pub fn should_fallback(me: &VehicleState, leader: Option<&VehicleState>, cfg: &IntersectionConfig) -> bool {
    match leader {
        Some(l) => l.position - me.position <= interaction_distance(me.speed, l.speed, cfg),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Planner {
    pub cfg: IntersectionConfig,
    pub weights: PenaltyWeights,
    pub settings: SolverSettings,
}

impl Planner {
    pub fn new(cfg: IntersectionConfig) -> Self {
        Self {
            cfg,
            weights: PenaltyWeights::default(),
            settings: SolverSettings::default(),
        }
    }

    fn check_request(&self, req: &PlanRequest) -> Result<(), PlanError> {
        self.weights.validate()?;
        if !(req.t_now.is_finite() && req.p_now.is_finite() && req.v_now.is_finite()) {
            return Err(PlanError::InvalidRequest("non-finite state".into()));
        }
        if req.p_now < 0.0 || req.p_now >= self.cfg.l_c {
            return Err(PlanError::InvalidRequest(format!(
                "position {} outside the control zone",
                req.p_now
            )));
        }
        if req.v_now < 0.0 {
            return Err(PlanError::InvalidRequest(format!("negative speed {}", req.v_now)));
        }
        Ok(())
    }

    fn problem(&self, req: &PlanRequest, pf: f64, vf: f64, n: usize) -> FixedEndpoint {
        FixedEndpoint {
            p0: req.p_now,
            v0: req.v_now,
            pf,
            vf,
            n,
            h: self.cfg.t_s,
            v_max: self.cfg.v_max,
            k_vmax: self.weights.k_vmax,
            k_vmin: self.weights.k_vmin,
        }
    }

    fn finish(&self, req: &PlanRequest, controls: Vec<f64>, kind: PlanKind, t_terminal: f64) -> TrajectoryPlan {
        let h = self.cfg.t_s;
        let (mut excess, mut deficit, mut worst) = (0.0, 0.0, 0.0f64);
        let mut v = req.v_now;
        for &u in &controls {
            v += u * h;
            let over = (v - self.cfg.v_max).max(0.0);
            let under = (-v).max(0.0);
            excess += over * h;
            deficit += under * h;
            worst = worst.max(over).max(under);
        }
        let mut plan = TrajectoryPlan {
            t_start: req.t_now,
            p_start: req.p_now,
            v_start: req.v_now,
            step: h,
            energy: 0.5 * h * controls.iter().map(|u| u * u).sum::<f64>(),
            controls,
            t_terminal,
            kind,
            objective_value: 0.0,
            speed_excess: excess,
            speed_deficit: deficit,
            max_violation: worst,
        };
        plan.objective_value = penalty_objective(&plan, req, &self.cfg, &self.weights);
        plan
    }

    /// Candidate crossing times on the sampling grid, block end excluded.
    pub fn crossing_grid(&self, req: &PlanRequest) -> Vec<f64> {
        let h = self.cfg.t_s;
        let (start, end) = req.crossing_window(&self.cfg);
        let first = step_count(start - req.t_now, h);
        let last = step_count(end - req.t_now, h).saturating_sub(1);
        (first.max(1)..=last).map(|k| req.t_now + k as f64 * h).collect()
    }

    /// Cheapest `Cross` plan reaching the stop line at `v_max` inside the window.
    pub fn plan_green(&self, req: &PlanRequest) -> Result<TrajectoryPlan, PlanError> {
        self.check_request(req)?;
        if !matches!(req.announced, Announcement::GreenAt(_)) {
            return Err(PlanError::InvalidRequest("plan_green needs a green announcement".into()));
        }
        let h = self.cfg.t_s;
        let mut candidates: Vec<(f64, usize, AnalyticSolution)> = self
            .crossing_grid(req)
            .into_iter()
            .map(|t| {
                let n = step_count(t - req.t_now, h);
                let a = analytic_min_energy(req.p_now, req.v_now, self.cfg.l_c, self.cfg.v_max, n as f64 * h)?;
                Ok((t, n, a))
            })
            .collect::<Result<_, PlanError>>()?;
        if candidates.is_empty() {
            let (s, e) = req.crossing_window(&self.cfg);
            return Err(PlanError::InfeasibleWindow {
                window_start: s,
                window_end: e,
                violation: f64::INFINITY,
            });
        }
        // visit cheapest lower bounds first so the rest can be pruned
        candidates.sort_by(|x, y| x.2.objective.total_cmp(&y.2.objective).then(x.0.total_cmp(&y.0)));
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for (t, n, a) in candidates {
            if let Some((best_obj, best_t, _)) = &best {
                if a.objective > *best_obj + 1e-12 || (a.objective >= *best_obj - 1e-12 && t > *best_t) {
                    continue;
                }
            }
            let sol = self.problem(req, self.cfg.l_c, self.cfg.v_max, n).solve(&a, &self.settings);
            let better = match &best {
                None => true,
                Some((bo, bt, _)) => sol.objective < bo - 1e-12 || (sol.objective <= bo + 1e-12 && t < *bt),
            };
            if better {
                best = Some((sol.objective, t, sol.controls));
            }
        }
        let (_, t_cross, controls) = best.expect("at least one candidate");
        let plan = self.finish(req, controls, PlanKind::Cross, t_cross);
        if plan.max_violation > self.settings.tol_v {
            let (s, e) = req.crossing_window(&self.cfg);
            return Err(PlanError::InfeasibleWindow {
                window_start: s,
                window_end: e,
                violation: plan.max_violation,
            });
        }
        Ok(plan)
    }

    /// Minimum-energy stop at `L_C − δ_a` reached exactly at `t_now + T_delay`.
    pub fn plan_red(&self, req: &PlanRequest) -> Result<TrajectoryPlan, PlanError> {
        self.check_request(req)?;
        if !matches!(req.announced, Announcement::RedAt(_)) {
            return Err(PlanError::InvalidRequest("plan_red needs a red announcement".into()));
        }
        let stop_point = self.cfg.stop_point();
        if req.p_now >= stop_point {
            return Err(PlanError::AlreadyPastStopPoint {
                position: req.p_now,
                stop_point,
            });
        }
        let h = self.cfg.t_s;
        let n = self.cfg.d_a * self.cfg.steps_per_block();
        let horizon = n as f64 * h;
        let a = analytic_min_energy(req.p_now, req.v_now, stop_point, 0.0, horizon)?;
        let sol = self.problem(req, stop_point, 0.0, n).solve(&a, &self.settings);
        Ok(self.finish(req, sol.controls, PlanKind::Stop, req.t_now + horizon))
    }

    /// Dispatches on the announcement.
    pub fn plan(&self, req: &PlanRequest) -> Result<TrajectoryPlan, PlanError> {
        match req.announced {
            Announcement::GreenAt(_) => self.plan_green(req),
            Announcement::RedAt(_) => self.plan_red(req),
        }
    }

    /// Replaces a stop plan by a crossing plan once green is announced.
    pub fn replan_on_green(&self, plan: &TrajectoryPlan, req: &PlanRequest) -> Result<TrajectoryPlan, PlanError> {
        match req.announced {
            Announcement::RedAt(_) => Ok(plan.clone()),
            Announcement::GreenAt(_) => {
                if plan.kind != PlanKind::Stop {
                    return Err(PlanError::InvalidRequest("only stop plans are replanned".into()));
                }
                if req.t_now <= plan.t_start {
                    return Err(PlanError::InvalidRequest("replanning must happen after the stop plan started".into()));
                }
                self.plan_green(req)
            }
        }
    }
}

//! Intelligent Driver Model accelerations for human-driven vehicles and for
//! AVs that have fallen back to car-following.
//!
//! The interaction term uses `(s*)² / (s² + ε²)` and the desired gap
//! `s* = s0 + max(0, T·v + v·(v − v_front) / (2·√(u_max·u_min)))`, so that
//! closing in on a slower obstacle enlarges `s*`. A red light is a static
//! obstacle at the stop line `L_C`.
//!
//! Obstacles are sensed within fixed ranges ([`leader_range`],
//! [`stop_line_range`]); beyond them the driver is on a free road.

use crate::error::IdmError;
use crate::geometry::{zone_of, IntersectionConfig, Phase, Zone};

fn finite(value: f64, name: &'static str) -> Result<f64, IdmError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IdmError::NonFinite(name))
    }
}

fn clamp_accel(accel: f64, cfg: &IntersectionConfig) -> f64 {
    accel.clamp(-cfg.u_min_hard, cfg.u_max)
}

/// Desired inter-vehicle distance for speed `v` closing at `approach_rate`
/// (`v − v_front`) on the obstacle ahead.
pub fn desired_gap(v: f64, approach_rate: f64, cfg: &IntersectionConfig) -> f64 {
    let braking = v * approach_rate / (2.0 * (cfg.u_max * cfg.u_min).sqrt());
    cfg.s0 + (cfg.t_headway * v + braking).max(0.0)
}

/// Gap below which an AV abandons its plan for car-following.
///
/// At least `d_follow`; otherwise `s0 + v·T_S + max(0, v² − v_front²)/(2·u_min)`:
/// one sampling step of travel before reacting, plus the distance needed to
/// shed the speed difference at comfortable deceleration.
pub fn interaction_distance(v: f64, v_front: f64, cfg: &IntersectionConfig) -> f64 {
    let closing = (v * v - v_front * v_front).max(0.0) / (2.0 * cfg.u_min);
    cfg.d_follow.max(cfg.s0 + v * cfg.t_s + closing)
}

/// Range within which the vehicle ahead enters the dynamics.
pub fn leader_range(cfg: &IntersectionConfig) -> f64 {
    cfg.d_follow.max(2.0 * (cfg.s0 + cfg.t_headway * cfg.v_max))
}

/// Range within which a binding stop line enters the dynamics.
pub fn stop_line_range(cfg: &IntersectionConfig) -> f64 {
    cfg.d_follow.max(cfg.s0 + cfg.t_headway * cfg.v_max)
}

/// Free-road acceleration `u_max·(1 − (v/v̄)⁴)`, clamped.
pub fn free_road_accel(v: f64, v_bar: f64, cfg: &IntersectionConfig) -> f64 {
    clamp_accel(cfg.u_max * (1.0 - (v / v_bar).powi(4)), cfg)
}

/// Car-following acceleration. `gap = f64::INFINITY` selects the free road.
pub fn idm_accel_follow(
    v: f64,
    v_bar: f64,
    gap: f64,
    approach_rate: f64,
    cfg: &IntersectionConfig,
) -> Result<f64, IdmError> {
    finite(v, "v")?;
    finite(v_bar, "v_bar")?;
    finite(approach_rate, "approach_rate")?;
    if gap.is_nan() || gap == f64::NEG_INFINITY {
        return Err(IdmError::NonFinite("gap"));
    }
    if gap <= 0.0 {
        return Err(IdmError::NonPositiveGap(gap));
    }
    let speed_term = (v / v_bar).powi(4);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        let s_star = desired_gap(v, approach_rate, cfg);
        s_star * s_star / (gap * gap + cfg.epsilon_idm * cfg.epsilon_idm)
    };
    Ok(clamp_accel(cfg.u_max * (1.0 - speed_term - interaction), cfg))
}

/// Acceleration toward a red light treated as a stopped vehicle at `L_C`.
pub fn idm_accel_red_light(
    v: f64,
    v_bar: f64,
    position: f64,
    cfg: &IntersectionConfig,
) -> Result<f64, IdmError> {
    finite(position, "position")?;
    if position >= cfg.l_c {
        return Err(IdmError::PastStopLine {
            position,
            stop_line: cfg.l_c,
        });
    }
    idm_accel_follow(v, v_bar, cfg.l_c - position, v, cfg)
}

/// Position and speed of the vehicle immediately ahead in the same lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderObs {
    pub position: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IdmContext<'a> {
    pub self_speed: f64,
    pub self_position: f64,
    pub desired_speed: f64,
    pub leader: Option<LeaderObs>,
    pub lane_phase: Phase,
    /// Seconds of amber left; ignored outside amber.
    pub amber_left: f64,
    pub cfg: &'a IntersectionConfig,
}

/// Whether the stop line binds a driver at `position` moving at `v` under `phase`.
///
/// Red always binds. Amber binds unless the driver is within `d_follow` of
/// the line or cannot stop before it at the hard deceleration cap, and in
/// either case still reaches the line at its current speed before amber ends.
pub fn stop_line_binds(phase: Phase, v: f64, position: f64, amber_left: f64, cfg: &IntersectionConfig) -> bool {
    match phase {
        Phase::Green => false,
        Phase::Red => true,
        Phase::Amber => {
            let to_line = cfg.l_c - position;
            let cannot_stop = v * v / (2.0 * cfg.u_min_hard) + v * cfg.t_s;
            let makes_it = to_line <= v * amber_left.max(0.0);
            !(makes_it && to_line <= cfg.d_follow.max(cannot_stop))
        }
    }
}

/// HDV acceleration with the full green/red/amber and car-following case logic.
///
/// Every sensed obstacle (the leader, and the stop line when it binds) yields
/// an IDM acceleration; the most restrictive one wins. With no engaged obstacle the driver is on a free road. Vehicles past
/// the stop line always see green.
pub fn hdv_accel(ctx: &IdmContext<'_>) -> Result<f64, IdmError> {
    let cfg = ctx.cfg;
    let v = finite(ctx.self_speed, "self_speed")?;
    let position = finite(ctx.self_position, "self_position")?;
    let v_bar = finite(ctx.desired_speed, "desired_speed")?;
    let phase = match zone_of(position, cfg)? {
        Zone::Control => ctx.lane_phase,
        _ => Phase::Green,
    };

    let mut engaged: Option<f64> = None;
    let mut take = |accel: f64| {
        engaged = Some(engaged.map_or(accel, |a: f64| a.min(accel)));
    };

    if let Some(leader) = ctx.leader {
        let gap = leader.position - position;
        if gap <= leader_range(cfg) {
            take(idm_accel_follow(v, v_bar, gap, v - leader.speed, cfg)?);
        }
    }
    if stop_line_binds(phase, v, position, ctx.amber_left, cfg) && cfg.l_c - position <= stop_line_range(cfg) {
        take(idm_accel_red_light(v, v_bar, position, cfg)?);
    }

    match engaged {
        Some(accel) => Ok(accel),
        None => idm_accel_follow(v, v_bar, f64::INFINITY, 0.0, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> IntersectionConfig {
        IntersectionConfig::default()
    }

    fn c_amber(cfg: &IntersectionConfig) -> f64 {
        cfg.t_alert
    }

    fn ctx<'a>(cfg: &'a IntersectionConfig, v: f64, position: f64, leader: Option<LeaderObs>, phase: Phase) -> IdmContext<'a> {
        IdmContext {
            self_speed: v,
            self_position: position,
            desired_speed: cfg.v_max,
            leader,
            lane_phase: phase,
            amber_left: c_amber(cfg),
            cfg,
        }
    }

    #[test]
    fn free_road_limits() {
        let c = cfg();
        assert_abs_diff_eq!(idm_accel_follow(0.0, 13.0, f64::INFINITY, 0.0, &c).unwrap(), c.u_max);
        assert_abs_diff_eq!(idm_accel_follow(13.0, 13.0, f64::INFINITY, 0.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn follow_matches_closed_form() {
        // 1.5·(1 − (10/13)⁴ − 52²/(50² + 1.6²)), evaluated by hand
        let c = cfg();
        let a = idm_accel_follow(10.0, 13.0, 50.0, 0.0, &c).unwrap();
        assert_abs_diff_eq!(a, -0.645_932_056_838_109_5, epsilon = 1e-12);
    }

    #[test]
    fn red_light_creep_from_rest() {
        let c = cfg();
        // v = 0, gap s0: u_max·(1 − 4/(4 + 2.56)) ≈ 0.39·u_max
        let a = idm_accel_red_light(0.0, 13.0, c.l_c - 2.0, &c).unwrap();
        assert_abs_diff_eq!(a, 0.585_365_853_658_536_7, epsilon = 1e-12);
        // far away at rest: only the jam term remains
        let far = idm_accel_red_light(0.0, 13.0, c.l_c - 80.0, &c).unwrap();
        assert_abs_diff_eq!(far, c.u_max * (1.0 - 4.0 / (6400.0 + 2.56)), epsilon = 1e-12);
    }

    #[test]
    fn red_light_at_desired_speed_brakes() {
        let c = cfg();
        for gap in [1.0, 5.0, 50.0, 300.0] {
            assert!(idm_accel_red_light(13.0, 13.0, c.l_c - gap, &c).unwrap() < 0.0);
        }
        assert!(idm_accel_red_light(5.0, 13.0, c.l_c, &c).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cfg();
        assert!(idm_accel_follow(f64::NAN, 13.0, 10.0, 0.0, &c).is_err());
        assert!(idm_accel_follow(1.0, 13.0, f64::NAN, 0.0, &c).is_err());
        assert!(idm_accel_follow(1.0, 13.0, 0.0, 0.0, &c).is_err());
        assert!(idm_accel_follow(1.0, 13.0, 10.0, f64::INFINITY, &c).is_err());
    }

    #[test]
    fn close_leader_dominates_far_red_light() {
        let c = cfg();
        let leader = LeaderObs { position: 203.0, speed: 4.0 };
        let a = hdv_accel(&ctx(&c, 4.0, 200.0, Some(leader), Phase::Red)).unwrap();
        let expected = idm_accel_follow(4.0, 13.0, 3.0, 0.0, &c).unwrap();
        assert_abs_diff_eq!(a, expected);
    }

    #[test]
    fn far_red_light_is_free_road() {
        let c = cfg();
        let a = hdv_accel(&ctx(&c, 5.0, c.l_c - 100.0, None, Phase::Red)).unwrap();
        assert_abs_diff_eq!(a, c.u_max * (1.0 - (5.0f64 / 13.0).powi(4)));
    }

    #[test]
    fn near_red_light_uses_light_term() {
        let c = cfg();
        let a = hdv_accel(&ctx(&c, 2.0, c.l_c - 4.0, None, Phase::Red)).unwrap();
        assert_abs_diff_eq!(a, idm_accel_red_light(2.0, 13.0, c.l_c - 4.0, &c).unwrap());
    }

    #[test]
    fn amber_close_to_line_proceeds() {
        let c = cfg();
        let green = hdv_accel(&ctx(&c, 8.0, c.l_c - 2.0, None, Phase::Green)).unwrap();
        let amber = hdv_accel(&ctx(&c, 8.0, c.l_c - 2.0, None, Phase::Amber)).unwrap();
        assert_abs_diff_eq!(amber, green);
        assert_abs_diff_eq!(green, c.u_max * (1.0 - (8.0f64 / 13.0).powi(4)));
    }

    #[test]
    fn amber_with_room_to_stop_is_red() {
        let c = cfg();
        let pos = c.l_c - 20.0;
        let amber = hdv_accel(&ctx(&c, 8.0, pos, None, Phase::Amber)).unwrap();
        let red = hdv_accel(&ctx(&c, 8.0, pos, None, Phase::Red)).unwrap();
        assert_abs_diff_eq!(amber, red);
        assert!(red < 0.0);
    }

    #[test]
    fn amber_too_fast_to_stop_proceeds() {
        let c = cfg();
        // 13 m/s needs ~14 m at the hard cap, plus one step of travel
        let pos = c.l_c - 15.0;
        let amber = hdv_accel(&ctx(&c, 13.0, pos, None, Phase::Amber)).unwrap();
        assert_abs_diff_eq!(amber, 0.0);
    }

    #[test]
    fn amber_near_line_without_time_left_is_red() {
        let c = cfg();
        let mut cx = ctx(&c, 0.26, c.l_c - 4.25, None, Phase::Amber);
        cx.amber_left = 2.0;
        let red = hdv_accel(&ctx(&c, 0.26, c.l_c - 4.25, None, Phase::Red)).unwrap();
        assert_abs_diff_eq!(hdv_accel(&cx).unwrap(), red);
        cx.self_speed = 8.0;
        let green = hdv_accel(&ctx(&c, 8.0, c.l_c - 4.25, None, Phase::Green)).unwrap();
        assert_abs_diff_eq!(hdv_accel(&cx).unwrap(), green);
    }

    #[test]
    fn merging_zone_ignores_red() {
        let c = cfg();
        let a = hdv_accel(&ctx(&c, 10.0, c.l_c + 1.0, None, Phase::Red)).unwrap();
        assert_abs_diff_eq!(a, free_road_accel(10.0, 13.0, &c));
    }

    #[test]
    fn red_light_from_jam_distance_does_not_overshoot() {
        let c = cfg();
        let mut p = c.l_c - c.s0;
        let mut v = 0.0f64;
        for _ in 0..200 {
            let a = hdv_accel(&ctx(&c, v, p, None, Phase::Red)).unwrap();
            let a = a.max(-v / c.t_s);
            let v_new = v + a * c.t_s;
            p += 0.5 * (v + v_new) * c.t_s;
            v = v_new;
            assert!(p < c.l_c, "overshoot to {p}");
        }
    }

    #[test]
    fn interaction_distance_floor_is_d_follow() {
        let c = cfg();
        assert_abs_diff_eq!(interaction_distance(4.0, 4.0, &c), c.d_follow);
        assert_abs_diff_eq!(interaction_distance(0.0, 5.0, &c), c.d_follow);
        assert_abs_diff_eq!(interaction_distance(10.0, 10.0, &c), 2.0 + 5.0);
        assert_abs_diff_eq!(interaction_distance(13.0, 0.0, &c), 2.0 + 6.5 + 169.0 / 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_is_clamped(
                v in 0.0f64..20.0,
                pos in 0.0f64..800.0,
                gap in 0.01f64..500.0,
                lv in 0.0f64..20.0,
                phase in prop_oneof![Just(Phase::Green), Just(Phase::Red), Just(Phase::Amber)],
                has_leader: bool,
            ) {
                let c = cfg();
                let leader = has_leader.then_some(LeaderObs { position: pos + gap, speed: lv });
                let a = hdv_accel(&ctx(&c, v, pos, leader, phase)).unwrap();
                prop_assert!(a >= -c.u_min_hard - 1e-12 && a <= c.u_max + 1e-12);
            }

            #[test]
            fn free_road_decreasing_in_speed(v1 in 0.001f64..13.0, v2 in 0.001f64..13.0) {
                prop_assume!((v1 - v2).abs() > 1e-6);
                let c = cfg();
                let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
                prop_assert!(free_road_accel(lo, 13.0, &c) > free_road_accel(hi, 13.0, &c));
            }
        }
    }
}

use serde::Serialize;

use crate::error::PlanError;

/// Unconstrained minimum-energy control for the double integrator with both
/// endpoints fixed: `u(t) = accel + jerk·t` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticSolution {
    pub accel: f64,
    pub jerk: f64,
    pub horizon: f64,
    pub v0: f64,
    /// `½∫u²`.
    pub objective: f64,
}

impl AnalyticSolution {
    pub fn control_at(&self, t: f64) -> f64 {
        self.accel + self.jerk * t
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        self.v0 + self.accel * t + 0.5 * self.jerk * t * t
    }

    /// Minimum and maximum speed over the horizon.
    pub fn speed_range(&self) -> (f64, f64) {
        let mut lo = self.v0.min(self.speed_at(self.horizon));
        let mut hi = self.v0.max(self.speed_at(self.horizon));
        if self.jerk != 0.0 {
            let t_star = -self.accel / self.jerk;
            if t_star > 0.0 && t_star < self.horizon {
                let v = self.speed_at(t_star);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

/// Exact minimizer of `½∫₀ᵀ u²` taking `(p0, v0)` to `(pf, vf)` in time `horizon`.
pub fn analytic_min_energy(
    p0: f64,
    v0: f64,
    pf: f64,
    vf: f64,
    horizon: f64,
) -> Result<AnalyticSolution, PlanError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(PlanError::NonPositiveHorizon(horizon));
    }
    let t = horizon;
    // [ t      t²/2 ] [a]   [ vf − v0        ]
    // [ t²/2   t³/6 ] [b] = [ pf − p0 − v0·t ]
    let (m11, m12, m22) = (t, 0.5 * t * t, t * t * t / 6.0);
    let r1 = vf - v0;
    let r2 = pf - p0 - v0 * t;
    let det = m11 * m22 - m12 * m12;
    let accel = (r1 * m22 - m12 * r2) / det;
    let jerk = (m11 * r2 - m12 * r1) / det;
    let objective = 0.5 * (accel * accel * t + accel * jerk * t * t + jerk * jerk * t * t * t / 3.0);
    Ok(AnalyticSolution {
        accel,
        jerk,
        horizon,
        v0,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn at_rest_on_target_is_zero() {
        let s = analytic_min_energy(5.0, 0.0, 5.0, 0.0, 7.0).unwrap();
        assert_abs_diff_eq!(s.objective, 0.0);
        assert_abs_diff_eq!(s.accel, 0.0);
        assert_abs_diff_eq!(s.jerk, 0.0);
    }

    #[test]
    fn cruising_is_stationary() {
        let s = analytic_min_energy(0.0, 8.0, 8.0 * 12.0, 8.0, 12.0).unwrap();
        assert_abs_diff_eq!(s.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stop_case_matches_symbolic_solution() {
        // (0,10) → (388,0) over 30 s, solved symbolically ahead of time:
        // a = 94/75, b = −119/1125, ½∫u² = 16036/1125
        let s = analytic_min_energy(0.0, 10.0, 388.0, 0.0, 30.0).unwrap();
        assert_abs_diff_eq!(s.accel, 94.0 / 75.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.jerk, -119.0 / 1125.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective, 16036.0 / 1125.0, epsilon = 1e-9);
        // the unconstrained optimum overshoots 13 m/s around t ≈ 11.85 s
        let (_, hi) = s.speed_range();
        assert!(hi > 17.0);
    }

    #[test]
    fn rejects_non_positive_horizon() {
        assert!(analytic_min_energy(0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(analytic_min_energy(0.0, 0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn reaches_endpoints() {
        let s = analytic_min_energy(3.0, 4.0, 120.0, 9.0, 17.0).unwrap();
        let t = s.horizon;
        let v = s.speed_at(t);
        let p = 3.0 + 4.0 * t + 0.5 * s.accel * t * t + s.jerk * t * t * t / 6.0;
        assert_abs_diff_eq!(v, 9.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p, 120.0, epsilon = 1e-9);
    }
}

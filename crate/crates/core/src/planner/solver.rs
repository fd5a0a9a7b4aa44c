//! Fixed-endpoint energy problem over piecewise-constant controls.
//!
//! Bound-feasible instances are solved exactly by an active-set method on the
//! speed profile; the rest by projected gradient descent on the penalty
//! objective.

use super::analytic::AnalyticSolution;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub tol_v: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            tol_v: 0.05,
        }
    }
}

/// `n` controls of length `h` taking `(p0, v0)` to `(pf, vf)`.
#[derive(Debug, Clone, Copy)]
pub struct FixedEndpoint {
    pub p0: f64,
    pub v0: f64,
    pub pf: f64,
    pub vf: f64,
    pub n: usize,
    pub h: f64,
    pub v_max: f64,
    pub k_vmax: f64,
    pub k_vmin: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub controls: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl FixedEndpoint {
    /// Speeds after each step, `v_1..=v_n`.
    pub fn speeds(&self, u: &[f64]) -> Vec<f64> {
        let mut v = self.v0;
        u.iter()
            .map(|&ui| {
                v += ui * self.h;
                v
            })
            .collect()
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.h * u.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let mut v = self.v0;
        let mut total = 0.0;
        for &ui in u {
            v += ui * self.h;
            total += 0.5 * ui * ui + self.k_vmax * (v - self.v_max).max(0.0) + self.k_vmin * (-v).max(0.0);
        }
        total * self.h
    }

    pub fn gradient(&self, u: &[f64], out: &mut [f64]) {
        let h = self.h;
        let speeds = self.speeds(u);
        let mut suffix = 0.0;
        for m in (0..u.len()).rev() {
            let v = speeds[m];
            if v > self.v_max {
                suffix += self.k_vmax;
            } else if v < 0.0 {
                suffix -= self.k_vmin;
            }
            out[m] = h * u[m] + h * h * suffix;
        }
    }

    fn rows(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.h;
        let n = self.n as f64;
        let r1 = vec![h; self.n];
        let r2 = (0..self.n).map(|i| h * h * (n - i as f64 - 0.5)).collect();
        (r1, r2)
    }

    fn targets(&self) -> (f64, f64) {
        (self.vf - self.v0, self.pf - self.p0 - self.n as f64 * self.h * self.v0)
    }

    /// Removes the component of `x` in the row space, optionally shifting to `A x = b`.
    fn project(&self, x: &mut [f64], rows: &(Vec<f64>, Vec<f64>), gram_inv: &[[f64; 2]; 2], b: Option<(f64, f64)>) {
        let (r1, r2) = rows;
        let dot = |r: &[f64]| r.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
        let (mut e1, mut e2) = (dot(r1), dot(r2));
        if let Some((b1, b2)) = b {
            e1 -= b1;
            e2 -= b2;
        }
        let l1 = gram_inv[0][0] * e1 + gram_inv[0][1] * e2;
        let l2 = gram_inv[1][0] * e1 + gram_inv[1][1] * e2;
        for i in 0..x.len() {
            x[i] -= l1 * r1[i] + l2 * r2[i];
        }
    }

    fn gram_inverse(rows: &(Vec<f64>, Vec<f64>)) -> [[f64; 2]; 2] {
        let (r1, r2) = rows;
        let g11: f64 = r1.iter().map(|a| a * a).sum();
        let g12: f64 = r1.iter().zip(r2).map(|(a, b)| a * b).sum();
        let g22: f64 = r2.iter().map(|a| a * a).sum();
        let det = g11 * g22 - g12 * g12;
        [[g22 / det, -g12 / det], [-g12 / det, g11 / det]]
    }

    /// Exact minimum of the energy term alone over the affine set.
    pub fn discrete_min_energy(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        if self.n == 0 {
            return u;
        }
        let rows = self.rows();
        if self.n == 1 {
            u[0] = (self.vf - self.v0) / self.h;
            return u;
        }
        let g = Self::gram_inverse(&rows);
        self.project(&mut u, &rows, &g, Some(self.targets()));
        u
    }

    fn within_bounds(&self, u: &[f64]) -> bool {
        self.speeds(u).iter().all(|&v| (-1e-12..=self.v_max + 1e-12).contains(&v))
    }

    /// Exact minimizer with hard speed bounds, by primal-dual active sets on
    /// the interior speeds `v_1..v_{n−1}`. `None` if the bounds admit no
    /// solution, the iteration cycles, or a bound multiplier exceeds what the
    /// penalty weight would pay for.
    pub fn active_set(&self, hint: &[f64]) -> Option<Vec<f64>> {
        let m = self.n.checked_sub(1).filter(|&m| m > 0)?;
        let h = self.h;
        let (lo, hi) = (0.0, self.v_max);
        let d = self.pf - self.p0 - 0.5 * h * (self.v0 + self.vf);
        if d < h * lo * m as f64 - 1e-12 || d > h * hi * m as f64 + 1e-12 {
            return None;
        }
        // 0 free, 1 at lower bound, 2 at upper bound
        let mut state: Vec<u8> = (0..m)
            .map(|i| {
                let v = hint.get(i + 1).copied().unwrap_or(0.0);
                if v < lo {
                    1
                } else if v > hi {
                    2
                } else {
                    0
                }
            })
            .collect();
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut sub = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut idx: Vec<usize> = Vec::with_capacity(m);
        let mut lambda;
        let mut rhs_y = vec![0.0; m];
        for _ in 0..(4 * m + 10) {
            idx.clear();
            for i in 0..m {
                match state[i] {
                    1 => x[i] = lo,
                    2 => x[i] = hi,
                    _ => idx.push(i),
                }
            }
            let fixed_sum: f64 = (0..m).filter(|&i| state[i] != 0).map(|i| h * x[i]).sum();
            if idx.is_empty() {
                if (fixed_sum - d).abs() > 1e-9 {
                    return None;
                }
                lambda = 0.0;
            } else {
                // tridiagonal (1/h)(2, −1) restricted to the free indices
                let k = idx.len();
                for (r, &i) in idx.iter().enumerate() {
                    let left = if i == 0 { self.v0 } else if state[i - 1] != 0 { x[i - 1] } else { 0.0 };
                    let right = if i + 1 == m { self.vf } else if state[i + 1] != 0 { x[i + 1] } else { 0.0 };
                    rhs_y[r] = (left + right) / h;
                    diag[r] = 2.0 / h;
                    sub[r] = if r > 0 && idx[r - 1] + 1 == i { -1.0 / h } else { 0.0 };
                    z[r] = h;
                }
                thomas(&sub[..k], &diag[..k], &mut rhs_y[..k]);
                y[..k].copy_from_slice(&rhs_y[..k]);
                thomas(&sub[..k], &diag[..k], &mut z[..k]);
                let cy: f64 = y[..k].iter().map(|v| h * v).sum();
                let cz: f64 = z[..k].iter().map(|v| h * v).sum();
                lambda = (cy + fixed_sum - d) / cz;
                for (r, &i) in idx.iter().enumerate() {
                    x[i] = y[r] - lambda * z[r];
                }
            }
            let mut changed = false;
            for i in 0..m {
                let left = if i == 0 { self.v0 } else { x[i - 1] };
                let right = if i + 1 == m { self.vf } else { x[i + 1] };
                let g = (2.0 * x[i] - left - right) / h + lambda * h;
                let next = match state[i] {
                    0 if x[i] < lo - 1e-12 => 1,
                    0 if x[i] > hi + 1e-12 => 2,
                    1 if g < -1e-12 => 0,
                    2 if g > 1e-12 => 0,
                    s => s,
                };
                if next != state[i] {
                    state[i] = next;
                    changed = true;
                }
            }
            if !changed {
                for i in 0..m {
                    let left = if i == 0 { self.v0 } else { x[i - 1] };
                    let right = if i + 1 == m { self.vf } else { x[i + 1] };
                    let g = (2.0 * x[i] - left - right) / h + lambda * h;
                    let weight = if state[i] == 1 { self.k_vmin } else { self.k_vmax };
                    if state[i] != 0 && g.abs() > weight * h {
                        return None;
                    }
                }
                let mut u = Vec::with_capacity(self.n);
                let mut prev = self.v0;
                for &v in x.iter().chain(std::iter::once(&self.vf)) {
                    u.push((v - prev) / h);
                    prev = v;
                }
                return Some(u);
            }
        }
        None
    }

    pub fn solve(&self, init: &AnalyticSolution, settings: &SolverSettings) -> Solution {
        let n = self.n;
        if n <= 1 {
            let controls = self.discrete_min_energy();
            let objective = self.objective(&controls);
            return Solution {
                controls,
                objective,
                iterations: 0,
            };
        }
        let unconstrained = self.discrete_min_energy();
        if self.within_bounds(&unconstrained) {
            let objective = self.objective(&unconstrained);
            return Solution {
                controls: unconstrained,
                objective,
                iterations: 0,
            };
        }
        let mut hint = vec![self.v0];
        hint.extend(self.speeds(&unconstrained));
        if let Some(controls) = self.active_set(&hint) {
            let objective = self.objective(&controls);
            return Solution {
                controls,
                objective,
                iterations: 1,
            };
        }
        self.descend(init, settings)
    }

    /// Projected gradient descent on the penalty objective from the analytic
    /// control sampled at step midpoints.
    pub fn descend(&self, init: &AnalyticSolution, settings: &SolverSettings) -> Solution {
        let n = self.n;
        let rows = self.rows();
        let gram_inv = Self::gram_inverse(&rows);
        let targets = self.targets();
        let mut u: Vec<f64> = (0..n).map(|i| init.control_at((i as f64 + 0.5) * self.h)).collect();
        self.project(&mut u, &rows, &gram_inv, Some(targets));
        let mut f = self.objective(&u);
        let mut grad = vec![0.0; n];
        let mut cand = vec![0.0; n];
        let mut step = 1.0 / self.h;
        let mut iterations = 0;
        while iterations < settings.max_iter {
            iterations += 1;
            self.gradient(&u, &mut grad);
            self.project(&mut grad, &rows, &gram_inv, None);
            let dn2: f64 = grad.iter().map(|g| g * g).sum();
            if dn2 <= 1e-28 {
                break;
            }
            let mut t = step;
            let mut accepted = None;
            while t > 1e-12 {
                for i in 0..n {
                    cand[i] = u[i] - t * grad[i];
                }
                let fc = self.objective(&cand);
                if fc <= f - 1e-4 * t * dn2 {
                    accepted = Some(fc);
                    break;
                }
                t *= 0.5;
            }
            let Some(fc) = accepted else { break };
            // keep the iterate on the affine set despite rounding drift
            self.project(&mut cand, &rows, &gram_inv, Some(targets));
            let fc = fc.min(self.objective(&cand));
            let rel = (f - fc) / f.abs().max(1e-12);
            std::mem::swap(&mut u, &mut cand);
            f = fc;
            step = (2.0 * t).min(1.0 / self.h);
            if rel < settings.rel_tol {
                break;
            }
        }
        Solution {
            controls: u,
            objective: f,
            iterations,
        }
    }
}

/// In-place Thomas solve of a symmetric tridiagonal system; `sub[0]` unused.
fn thomas(sub: &[f64], diag: &[f64], rhs: &mut [f64]) {
    let k = diag.len();
    let mut c = vec![0.0; k];
    let mut b = diag[0];
    rhs[0] /= b;
    for i in 1..k {
        c[i - 1] = sub[i] / b;
        b = diag[i] - sub[i] * c[i - 1];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / b;
    }
    for i in (0..k.saturating_sub(1)).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::analytic::analytic_min_energy;

    fn problem(p0: f64, v0: f64, pf: f64, vf: f64, n: usize) -> FixedEndpoint {
        FixedEndpoint {
            p0,
            v0,
            pf,
            vf,
            n,
            h: 0.5,
            v_max: 13.0,
            k_vmax: 1e3,
            k_vmin: 1e3,
        }
    }

    fn terminal(p: &FixedEndpoint, u: &[f64]) -> (f64, f64) {
        let (mut pos, mut v) = (p.p0, p.v0);
        for &ui in u {
            let nv = v + ui * p.h;
            pos += 0.5 * (v + nv) * p.h;
            v = nv;
        }
        (pos, v)
    }

    #[test]
    fn hits_endpoints_and_lower_bound() {
        let p = problem(0.0, 10.0, 400.0, 13.0, 70);
        let a = analytic_min_energy(0.0, 10.0, 400.0, 13.0, 35.0).unwrap();
        let s = p.solve(&a, &SolverSettings::default());
        let (pos, v) = terminal(&p, &s.controls);
        assert!((pos - 400.0).abs() < 1e-8);
        assert!((v - 13.0).abs() < 1e-10);
        assert!(s.objective >= a.objective - 1e-9);
        assert!((s.objective - a.objective) / a.objective < 0.02);
    }

    #[test]
    fn restart_respects_bounds() {
        let p = problem(388.0, 0.0, 400.0, 13.0, 10);
        let a = analytic_min_energy(388.0, 0.0, 400.0, 13.0, 5.0).unwrap();
        let s = p.solve(&a, &SolverSettings::default());
        let speeds = p.speeds(&s.controls);
        assert!(speeds.iter().all(|&v| v > -0.05 && v < 13.05), "{speeds:?}");
        let first = s.controls.iter().find(|u| u.abs() > 1e-9).unwrap();
        assert!(*first > 0.0);
        assert!(s.controls.iter().all(|&u| u >= -1e-9));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = problem(0.0, 12.03, 420.0, 13.0, 30);
        let u: Vec<f64> = (0..30).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.4).collect();
        assert!(p.speeds(&u).iter().all(|v| (v - 13.0).abs() > 1e-3 && v.abs() > 1e-3));
        let mut g = vec![0.0; 30];
        p.gradient(&u, &mut g);
        let d = 1e-6;
        for i in 0..30 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += d;
            dn[i] -= d;
            let fd = (p.objective(&up) - p.objective(&dn)) / (2.0 * d);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }
}

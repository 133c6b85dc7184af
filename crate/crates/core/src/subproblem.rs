//! Trust-region direction subproblem
//!
//! ```text
//! min_{tau, d}  tau   s.t.  ||d||_2 <= radius,  b_a + g_a . d <= tau  for all a
//! ```
//!
//! Any minimizer can be moved into the row space of `G` without changing
//! `G d` or increasing `||d||`, so the solver works in an orthonormal basis
//! of that space obtained from the `m x m` Gram matrix `G G^T`. The reduced
//! problem has `rank(G) + 1` unknowns and is solved by a log-barrier
//! interior-point method. Central-path multipliers give a dual certificate
//! `b . lambda - radius * ||G^T lambda||` that lower-bounds the optimum.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Generator rows `g_a`, offsets `b_a` and trust-region radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemInstance {
    pub gradients: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    /// `max_a (b_a + g_a . direction)`, recomputed at the returned direction.
    pub tau: f64,
    pub direction: Vec<f64>,
    /// Simplex weights over the generators.
    pub multipliers: Vec<f64>,
    /// `b . multipliers - radius * ||G^T multipliers||`.
    pub dual_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;

impl SubproblemInstance {
    pub fn dim(&self) -> usize {
        self.gradients.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.gradients.is_empty() {
            return Err(Error::invalid("subproblem needs at least one generator"));
        }
        if self.gradients.len() != self.offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.gradients.len(),
                got: self.offsets.len(),
            });
        }
        let n = self.dim();
        if let Some(g) = self.gradients.iter().find(|g| g.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: g.len() });
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {}", self.radius)));
        }
        let finite = self.offsets.iter().chain(self.gradients.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("subproblem data must be finite"));
        }
        Ok(())
    }

    /// `max_a (b_a + g_a . d)`.
    pub fn primal_value(&self, d: &[f64]) -> f64 {
        self.gradients
            .iter()
            .zip(&self.offsets)
            .map(|(g, b)| b + dot(g, d))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dual objective `b . lambda - radius * ||G^T lambda||` for simplex weights.
    pub fn dual_value(&self, lambda: &[f64]) -> f64 {
        let mut v = vec![0.0; self.dim()];
        for (g, &l) in self.gradients.iter().zip(lambda) {
            axpy(l, g, &mut v);
        }
        dot(&self.offsets, lambda) - self.radius * norm(&v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solve the subproblem to a certified primal-dual gap of `tol * (1 + |tau|)`.
///
/// Hitting `max_iter` Newton steps returns the best iterate with
/// `converged == false`.
pub fn solve_minmax_ball(inst: &SubproblemInstance, tol: f64, max_iter: usize) -> Result<SubproblemSolution> {
    inst.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let m = inst.gradients.len();
    let n = inst.dim();
    let radius = inst.radius;

    if m == 1 {
        let g = &inst.gradients[0];
        let gn = norm(g);
        let direction = if gn > 0.0 {
            g.iter().map(|v| -radius * v / gn).collect()
        } else {
            vec![0.0; n]
        };
        return Ok(finish(inst, direction, vec![1.0], true, 0));
    }

    let gram = DMatrix::from_fn(m, m, |a, b| dot(&inst.gradients[a], &inst.gradients[b]));
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..m)
        .filter(|&k| lmax > 0.0 && eig.eigenvalues[k] > 1e-12 * lmax)
        .collect();
    if keep.is_empty() {
        // All generators vanish: d = 0 and the dual puts its mass on max b.
        let best = argmax(&inst.offsets);
        let mut lambda = vec![0.0; m];
        lambda[best] = 1.0;
        return Ok(finish(inst, vec![0.0; n], lambda, true, 0));
    }
    let r = keep.len();
    // Reduced generator rows c_a = (V sqrt(Lambda))_a, so C C^T = G G^T.
    let mut reduced = Vec::with_capacity(m * r);
    for a in 0..m {
        reduced.extend(keep.iter().map(|&col| eig.eigenvectors[(a, col)] * eig.eigenvalues[col].sqrt()));
    }

    let barrier = Barrier {
        c: &reduced,
        r,
        b: &inst.offsets,
        radius,
    };
    let (z, lambda, converged, iterations) = barrier.solve(inst, tol, max_iter);

    // d = G^T V Lambda^{-1/2} z
    let mut coef = vec![0.0; m];
    for (k, &col) in keep.iter().enumerate() {
        let s = z[k] / eig.eigenvalues[col].sqrt();
        for (a, ca) in coef.iter_mut().enumerate() {
            *ca += eig.eigenvectors[(a, col)] * s;
        }
    }
    let mut direction = vec![0.0; n];
    for (g, &ca) in inst.gradients.iter().zip(&coef) {
        axpy(ca, g, &mut direction);
    }
    let dn = norm(&direction);
    if dn > radius {
        let s = radius / dn;
        direction.iter_mut().for_each(|v| *v *= s);
    }
    // d = 0 is always feasible with value max b; never return worse.
    if inst.primal_value(&direction) > inst.offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max) {
        direction = vec![0.0; n];
    }
    Ok(finish(inst, direction, lambda, converged, iterations))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn finish(
    inst: &SubproblemInstance,
    direction: Vec<f64>,
    multipliers: Vec<f64>,
    converged: bool,
    iterations: usize,
) -> SubproblemSolution {
    let tau = inst.primal_value(&direction);
    let dual_value = inst.dual_value(&multipliers);
    SubproblemSolution {
        tau,
        direction,
        multipliers,
        dual_value,
        converged,
        iterations,
    }
}

const MAX_CENTERING_STEPS: usize = 100;

/// Solves `H x = -g` for symmetric positive definite row-major `H`, using
/// `h` as factor storage and adding a small ridge if needed.
fn newton_solve(hess: &[f64], g: &[f64], x: &mut [f64], h: &mut [f64], n: usize) -> bool {
    let scale = (0..n).map(|i| hess[i * n + i].abs()).fold(1.0, f64::max);
    for ridge in [0.0, 1e-12 * scale, 1e-8 * scale] {
        h.copy_from_slice(hess);
        if cholesky_in_place(h, n, ridge) {
            for i in 0..n {
                let mut v = -g[i];
                for k in 0..i {
                    v -= h[i * n + k] * x[k];
                }
                x[i] = v / h[i * n + i];
            }
            for i in (0..n).rev() {
                let mut v = x[i];
                for k in i + 1..n {
                    v -= h[k * n + i] * x[k];
                }
                x[i] = v / h[i * n + i];
            }
            return true;
        }
    }
    false
}

/// Lower-triangular factor written over the lower triangle of `h`.
fn cholesky_in_place(h: &mut [f64], n: usize, ridge: f64) -> bool {
    for j in 0..n {
        let mut d = h[j * n + j] + ridge;
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        h[j * n + j] = d;
        for i in j + 1..n {
            let mut v = h[i * n + j];
            for k in 0..j {
                v -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = v / d;
        }
    }
    true
}

/// Log barrier for `min t` over `c_a . z + b_a <= t`, `||z||^2 <= radius^2`.
/// `c` is row-major `m x r`.
struct Barrier<'a> {
    c: &'a [f64],
    r: usize,
    b: &'a [f64],
    radius: f64,
}

impl Barrier<'_> {
    fn row(&self, a: usize) -> &[f64] {
        &self.c[a * self.r..(a + 1) * self.r]
    }

    /// Fills `u` with constraint slacks and returns the ball slack, or
    /// `None` when the point is not strictly feasible.
    fn slacks(&self, t: f64, z: &[f64], u: &mut [f64]) -> Option<f64> {
        let mut ok = true;
        for (a, ua) in u.iter_mut().enumerate() {
            *ua = t - self.b[a] - dot(self.row(a), z);
            ok &= *ua > 0.0;
        }
        let v = self.radius * self.radius - dot(z, z);
        (ok && v > 0.0).then_some(v)
    }

    fn multipliers(&self, s: f64, u: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = u.iter().map(|x| 1.0 / (s * x)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|x| x / total).collect()
    }

    fn primal(&self, z: &[f64]) -> f64 {
        (0..self.b.len())
            .map(|a| self.b[a] + dot(self.row(a), z))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Returns reduced direction, simplex multipliers, convergence flag and
    /// Newton step count.
    fn solve(&self, inst: &SubproblemInstance, tol: f64, max_iter: usize) -> (Vec<f64>, Vec<f64>, bool, usize) {
        let m = self.b.len();
        let r = self.r;
        let bmax = self.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cmax = (0..m).map(|a| norm(self.row(a))).fold(0.0, f64::max);
        let scale = 1.0f64.max(bmax.abs()).max(self.radius * cmax);

        let mut t = bmax + scale;
        let mut z = vec![0.0; r];
        let mut s = 1.0 / scale;
        let mut iterations = 0;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;

        let mut u = vec![0.0; m];
        let mut u_trial = vec![0.0; m];
        let mut z_trial = vec![0.0; r];
        let mut grad = vec![0.0; r + 1];
        let mut hess = vec![0.0; (r + 1) * (r + 1)];
        let mut step = vec![0.0; r + 1];
        let mut factor = vec![0.0; (r + 1) * (r + 1)];
        let mut v = self.slacks(t, &z, &mut u).expect("start is strictly feasible");

        loop {
            // Centering by damped Newton.
            let mut inner = 0;
            loop {
                if iterations >= max_iter {
                    return match best {
                        Some((_, z, l)) => (z, l, false, iterations),
                        None => (z, self.multipliers(s, &u), false, iterations),
                    };
                }
                let w = r + 1;
                grad.fill(0.0);
                hess.fill(0.0);
                grad[0] = s;
                for a in 0..m {
                    let inv = 1.0 / u[a];
                    let inv2 = inv * inv;
                    grad[0] -= inv;
                    // d(-log u_a) with u_a = t - b_a - c_a z
                    let ca = self.row(a);
                    hess[0] += inv2;
                    for k in 0..r {
                        grad[k + 1] += ca[k] * inv;
                        hess[k + 1] -= ca[k] * inv2;
                        for l in k..r {
                            hess[(k + 1) * w + l + 1] += ca[k] * ca[l] * inv2;
                        }
                    }
                }
                for k in 0..r {
                    grad[k + 1] += 2.0 * z[k] / v;
                    hess[(k + 1) * w + k + 1] += 2.0 / v;
                    for l in k..r {
                        hess[(k + 1) * w + l + 1] += 4.0 * z[k] * z[l] / (v * v);
                    }
                }
                for i in 0..=r {
                    for j in 0..i {
                        hess[i * w + j] = hess[j * w + i];
                    }
                }
                if !newton_solve(&hess, &grad, &mut step, &mut factor, r + 1) {
                    break;
                }
                iterations += 1;
                inner += 1;
                let decrement = -dot(&grad, &step);
                if decrement / 2.0 <= 1e-24 || inner > MAX_CENTERING_STEPS {
                    break;
                }
                // Inside the quadratic region of a self-concordant barrier
                // the full step is safe, and the decrease is too small for a
                // line search to resolve.
                let full_step = decrement < 0.01;
                let mut alpha = 1.0;
                let mut moved = false;
                while alpha > 1e-20 {
                    let t_trial = t + alpha * step[0];
                    for k in 0..r {
                        z_trial[k] = z[k] + alpha * step[k + 1];
                    }
                    if let Some(v_trial) = self.slacks(t_trial, &z_trial, &mut u_trial) {
                        // Change in the barrier, taken term by term so large
                        // `s * t` values do not swamp the decrease.
                        let logs: f64 = u_trial.iter().zip(&u).map(|(a, b)| (a / b).ln()).sum();
                        let change = s * (t_trial - t) - logs - (v_trial / v).ln();
                        if full_step || change <= -0.25 * alpha * decrement {
                            t = t_trial;
                            std::mem::swap(&mut z, &mut z_trial);
                            std::mem::swap(&mut u, &mut u_trial);
                            v = v_trial;
                            moved = true;
                            break;
                        }
                    }
                    if full_step {
                        break;
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    break;
                }
            }

            let lambda = self.multipliers(s, &u);
            let tau = self.primal(&z);
            let gap = tau - inst.dual_value(&lambda);
            if gap <= tol * (1.0 + tau.abs()) {
                return (z, lambda, true, iterations);
            }
            let best_gap = best.as_ref().map_or(f64::INFINITY, |(g, _, _)| *g);
            if gap < best_gap {
                best = Some((gap, z.clone(), lambda));
            }
            // Once slacks near zero lose precision the multipliers get
            // noisier and the gap grows again.
            let stalled = gap > 10.0 * best_gap || (m + 1) as f64 / s < 1e-3 * tol * (1.0 + tau.abs());
            if stalled {
                let (_, z, l) = best.expect("set above");
                return (z, l, false, iterations);
            }
            s *= if gap > 1e3 * tol * (1.0 + tau.abs()) { 20.0 } else { 4.0 };
        }
    }
}

/// Exhaustive grid search over the ball for `n <= 3`, refined once around
/// the incumbent. Test oracle only.
pub fn brute_force_oracle(inst: &SubproblemInstance, grid_points_per_axis: usize) -> Result<SubproblemSolution> {
    inst.validate()?;
    let n = inst.dim();
    if n == 0 || n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    if grid_points_per_axis < 2 {
        return Err(Error::invalid("grid needs at least 2 points per axis"));
    }
    let k = grid_points_per_axis;
    let radius = inst.radius;
    let h = 2.0 * radius / (k - 1) as f64;
    let zero = vec![0.0; n];
    let (mut best_d, mut best_tau) = (zero.clone(), inst.primal_value(&zero));
    scan_grid(inst, &vec![0.0; n], radius, k, &mut best_d, &mut best_tau);
    let center = best_d.clone();
    scan_grid(inst, &center, h, k, &mut best_d, &mut best_tau);
    let m = inst.gradients.len();
    Ok(SubproblemSolution {
        tau: best_tau,
        direction: best_d,
        multipliers: vec![1.0 / m as f64; m],
        dual_value: f64::NEG_INFINITY,
        converged: true,
        iterations: 0,
    })
}

/// Upper bound on `oracle tau - optimal tau` for the coarse grid:
/// `max_a ||g_a|| * h * sqrt(n)` with spacing `h = 2 radius / (k - 1)`.
pub fn grid_resolution_bound(inst: &SubproblemInstance, grid_points_per_axis: usize) -> f64 {
    let n = inst.dim() as f64;
    let lip = inst.gradients.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let h = 2.0 * inst.radius / (grid_points_per_axis.max(2) - 1) as f64;
    lip * h * n.sqrt()
}

fn scan_grid(inst: &SubproblemInstance, center: &[f64], half_width: f64, k: usize, best_d: &mut Vec<f64>, best_tau: &mut f64) {
    let n = center.len();
    let coord = |i: usize, axis: usize| center[axis] - half_width + 2.0 * half_width * i as f64 / (k - 1) as f64;
    let r2 = inst.radius * inst.radius;
    let total = k.pow(n as u32);
    let mut d = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for (axis, di) in d.iter_mut().enumerate() {
            *di = coord(rem % k, axis);
            rem /= k;
        }
        if dot(&d, &d) > r2 {
            continue;
        }
        let tau = inst.primal_value(&d);
        if tau < *best_tau {
            *best_tau = tau;
            best_d.copy_from_slice(&d);
        }
    }
}

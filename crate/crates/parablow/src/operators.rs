//! Discrete Laplacian stencil, the monotone nonlinearity u ↦ |u|^{q−1}u, and
//! the damped-Newton resolvent solve that realizes one implicit-Euler step of
//! the semigroup: given `u_prev`, solve u + τ(−Δ_h u + |u|^{q−1}u) = u_prev.
//!
//! The Newton matrix I + τ(−Δ_h) + τq·diag(|u|^{q−1}) is a symmetric
//! M-matrix, so each step inherits the contraction and order-preservation
//! structure of the continuous resolvent exactly (up to solver tolerances).
//! Linear solves go through a matrix-action contract: preconditioned CG with
//! diagonal scaling in general, a direct tridiagonal sweep on 1-d masked
//! grids.

use crate::geometry::{Field, Grid, NodeClass};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("grid mismatch between operator and field")]
    GridMismatch,
    #[error("negative input: interior minimum {0} below tolerance")]
    NegativeInput(f64),
    #[error("newton divergence: {0}")]
    NewtonDivergence(String),
    #[error("linear solver did not converge within {iters} iterations (residual {residual:e})")]
    LinearNoConvergence { iters: usize, residual: f64 },
    #[error("invalid stepper config: {0}")]
    InvalidConfig(String),
}

/// Time-step schedule: fixed step, or geometric refinement near t = 0
/// (τ_j = τ₀·ρ^j capped at τ_max) to resolve the initial layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSchedule {
    Fixed { tau: f64 },
    Geometric { tau0: f64, ratio: f64, tau_max: f64 },
}

impl TimeSchedule {
    pub fn step(&self, index: usize) -> f64 {
        match *self {
            TimeSchedule::Fixed { tau } => tau,
            TimeSchedule::Geometric { tau0, ratio, tau_max } => {
                (tau0 * ratio.powi(index as i32)).min(tau_max)
            }
        }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let ok = match *self {
            TimeSchedule::Fixed { tau } => tau > 0.0,
            TimeSchedule::Geometric { tau0, ratio, tau_max } => {
                tau0 > 0.0 && ratio >= 1.0 && tau_max >= tau0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(OperatorError::InvalidConfig(format!("bad time schedule {self:?}")))
        }
    }

    /// Schedule with every step multiplied by `factor` (time rescaling).
    pub fn scaled(&self, factor: f64) -> TimeSchedule {
        match *self {
            TimeSchedule::Fixed { tau } => TimeSchedule::Fixed { tau: tau * factor },
            TimeSchedule::Geometric { tau0, ratio, tau_max } => TimeSchedule::Geometric {
                tau0: tau0 * factor,
                ratio,
                tau_max: tau_max * factor,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    pub schedule: TimeSchedule,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub max_newton_iters: usize,
    /// Initial damping factor in (0, 1]; the line search halves from here.
    pub damping: f64,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            schedule: TimeSchedule::Geometric { tau0: 1e-5, ratio: 1.005, tau_max: 5e-4 },
            newton_abs_tol: 1e-14,
            newton_rel_tol: 1e-13,
            max_newton_iters: 60,
            damping: 1.0,
            linear_tol: 1e-13,
            max_linear_iters: 50_000,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<(), OperatorError> {
        self.schedule.validate()?;
        if self.newton_abs_tol <= 0.0 || self.newton_rel_tol <= 0.0 || self.linear_tol <= 0.0 {
            return Err(OperatorError::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(OperatorError::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_newton_iters == 0 || self.max_linear_iters == 0 {
            return Err(OperatorError::InvalidConfig("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Signed power |u|^{q-1} u, with an integer fast path.
#[inline]
pub fn signed_power(u: f64, q: f64) -> f64 {
    if q == q.trunc() && q <= 16.0 {
        let p = q as i32;
        let a = u.abs().powi(p);
        if u < 0.0 {
            -a
        } else {
            a
        }
    } else {
        u.signum() * u.abs().powf(q)
    }
}

/// q |u|^{q-1}, the derivative of the signed power.
#[inline]
pub fn signed_power_deriv(u: f64, q: f64) -> f64 {
    if q == q.trunc() && q <= 16.0 {
        q * u.abs().powi(q as i32 - 1)
    } else {
        q * u.abs().powf(q - 1.0)
    }
}

/// The 2·dim+1-point Laplacian stencil on a masked grid, together with the
/// Dirichlet boundary-value vector (one entry per Dirichlet node).
pub struct StencilOperator {
    grid: Arc<Grid>,
    /// Values at Dirichlet nodes, parallel to `grid.dirichlet_nodes()`.
    boundary: Vec<f64>,
}

impl StencilOperator {
    pub fn new(grid: Arc<Grid>, boundary: Vec<f64>) -> StencilOperator {
        assert_eq!(boundary.len(), grid.dirichlet_nodes().len());
        StencilOperator { grid, boundary }
    }

    pub fn zero_boundary(grid: &Arc<Grid>) -> StencilOperator {
        StencilOperator { grid: grid.clone(), boundary: vec![0.0; grid.dirichlet_nodes().len()] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary
    }

    pub fn set_boundary(&mut self, boundary: Vec<f64>) {
        assert_eq!(boundary.len(), self.grid.dirichlet_nodes().len());
        self.boundary = boundary;
    }

    /// Dense boundary lookup: value at a flat node index (0 if not Dirichlet).
    fn boundary_at(&self, flat: usize) -> f64 {
        // dirichlet_nodes is sorted by construction
        match self.grid.dirichlet_nodes().binary_search(&(flat as u32)) {
            Ok(pos) => self.boundary[pos],
            Err(_) => 0.0,
        }
    }

    /// Central-difference Laplacian Δ_h u at interior nodes (0 elsewhere),
    /// reading Dirichlet neighbor values from the operator.
    pub fn apply_laplacian(&self, u: &Field) -> Result<Field, OperatorError> {
        if !Arc::ptr_eq(u.grid(), &self.grid) {
            return Err(OperatorError::GridMismatch);
        }
        let g = &self.grid;
        let inv_h2 = 1.0 / (g.h * g.h);
        let mut out = Field::zeros(g);
        for &fl in g.interior_nodes() {
            let flat = fl as usize;
            let c = u.values()[flat];
            let mut acc = 0.0;
            for ax in 0..g.dim {
                for st in [-1i64, 1] {
                    let nb = g.neighbor(flat, ax, st).expect("stencil neighbor");
                    let v = match g.class(nb) {
                        NodeClass::Interior => u.values()[nb],
                        NodeClass::Dirichlet => self.boundary_at(nb),
                        NodeClass::Exterior => unreachable!("mask invariant"),
                    };
                    acc += v - c;
                }
            }
            out.values_mut()[flat] = acc * inv_h2;
        }
        Ok(out)
    }
}

/// Matrix-action contract for the symmetric positive definite inner solves.
pub trait LinearAction {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self, d: &mut [f64]);
}

/// Action of I·mass + τ(−Δ_h) + diag(extra) on packed interior unknowns,
/// with zero Dirichlet coupling (boundary data lives in the residual).
pub struct ShiftedLaplacian<'a> {
    pub grid: &'a Grid,
    /// coefficient of the identity (1 for resolvent steps, 0 for stationary solves)
    pub mass: f64,
    /// coefficient of −Δ_h
    pub tau: f64,
    /// nonnegative diagonal from the nonlinearity, packed (length = #interior)
    pub extra_diag: &'a [f64],
}

impl LinearAction for ShiftedLaplacian<'_> {
    fn len(&self) -> usize {
        self.grid.interior_nodes().len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.grid;
        let inv_h2 = self.tau / (g.h * g.h);
        for (r, &fl) in g.interior_nodes().iter().enumerate() {
            let flat = fl as usize;
            let c = x[r];
            let mut acc = (self.mass + self.extra_diag[r]) * c;
            for ax in 0..g.dim {
                for st in [-1i64, 1] {
                    let nb = g.neighbor(flat, ax, st).expect("stencil neighbor");
                    let nb_rank = g.rank(nb);
                    let v = if nb_rank >= 0 { x[nb_rank as usize] } else { 0.0 };
                    acc += inv_h2 * (c - v);
                }
            }
            y[r] = acc;
        }
    }

    fn diagonal(&self, d: &mut [f64]) {
        let g = self.grid;
        let inv_h2 = self.tau / (g.h * g.h);
        for (r, _) in g.interior_nodes().iter().enumerate() {
            d[r] = self.mass + self.extra_diag[r] + 2.0 * g.dim as f64 * inv_h2;
        }
    }
}

/// Preconditioned conjugate gradients with diagonal scaling. Relative
/// residual ≤ `tol` on exit.
pub fn solve_linear(
    action: &dyn LinearAction,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, OperatorError> {
    let n = action.len();
    assert_eq!(rhs.len(), n);
    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut diag = vec![0.0; n];
    action.diagonal(&mut diag);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iters {
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tol * b_norm {
            return Ok(x);
        }
        action.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(OperatorError::LinearNoConvergence { iters: 0, residual: r_norm / b_norm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r_norm <= tol * b_norm {
        Ok(x)
    } else {
        Err(OperatorError::LinearNoConvergence { iters: max_iters, residual: r_norm / b_norm })
    }
}

/// Direct tridiagonal sweep for 1-d masked grids. Interior nodes are sorted
/// by position; couplings across mask gaps are zero, so disjoint segments
/// factor independently within one pass.
fn solve_tridiagonal(
    grid: &Grid,
    mass: f64,
    tau: f64,
    extra_diag: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    let n = rhs.len();
    let inv_h2 = tau / (grid.h * grid.h);
    let interior = grid.interior_nodes();
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for (r, &fl) in interior.iter().enumerate() {
        let flat = fl as usize;
        diag[r] = mass + extra_diag[r] + 2.0 * inv_h2;
        if let Some(nb) = grid.neighbor(flat, 0, -1) {
            if grid.rank(nb) >= 0 {
                sub[r] = -inv_h2;
            }
        }
        if let Some(nb) = grid.neighbor(flat, 0, 1) {
            if grid.rank(nb) >= 0 {
                sup[r] = -inv_h2;
            }
        }
    }
    // Thomas sweep
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn solve_newton_system(
    grid: &Grid,
    mass: f64,
    tau: f64,
    extra_diag: &[f64],
    rhs: &[f64],
    cfg: &StepperConfig,
) -> Result<Vec<f64>, OperatorError> {
    if grid.dim == 1 && !grid.periodic {
        Ok(solve_tridiagonal(grid, mass, tau, extra_diag, rhs))
    } else {
        let action = ShiftedLaplacian { grid, mass, tau, extra_diag };
        solve_linear(&action, rhs, cfg.linear_tol, cfg.max_linear_iters)
    }
}

/// Direct 1-d solve of (mass·I + tau·(−Δ_h) + diag(extra))x = rhs on packed
/// interior unknowns; exposed for the stationary Newton solves.
pub fn solve_tridiagonal_pub(
    grid: &Grid,
    mass: f64,
    tau: f64,
    extra_diag: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    solve_tridiagonal(grid, mass, tau, extra_diag, rhs)
}

pub struct StepResult {
    pub field: Field,
    pub newton_iters: usize,
    pub final_residual: f64,
    /// Residual norms per Newton iterate; decreasing under damping.
    pub residual_history: Vec<f64>,
}

/// One implicit-Euler step: the resolvent (I + τ∂J)⁻¹ applied to `u_prev`.
/// Newton starts from `u_prev`, damps on residual increase, and returns the
/// unique nonnegative solution.
pub fn implicit_step(
    u_prev: &Field,
    tau: f64,
    q: f64,
    op: &StencilOperator,
    cfg: &StepperConfig,
) -> Result<StepResult, OperatorError> {
    if !Arc::ptr_eq(u_prev.grid(), op.grid()) {
        return Err(OperatorError::GridMismatch);
    }
    if tau <= 0.0 || q <= 1.0 {
        return Err(OperatorError::InvalidConfig(format!("need tau > 0, q > 1; got tau={tau}, q={q}")));
    }
    cfg.validate()?;
    let grid = op.grid().clone();
    let w_sqrt = grid.cell_weight().sqrt();
    let interior = grid.interior_nodes();
    let n = interior.len();

    let min_prev = u_prev.min_interior();
    if min_prev < -cfg.newton_abs_tol.max(1e-12) {
        return Err(OperatorError::NegativeInput(min_prev));
    }

    // packed previous values and boundary contribution of −Δ
    let prev: Vec<f64> = interior.iter().map(|&i| u_prev.values()[i as usize]).collect();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut bdry_term = vec![0.0; n];
    if !grid.periodic {
        for (r, &fl) in interior.iter().enumerate() {
            let flat = fl as usize;
            let mut acc = 0.0;
            for ax in 0..grid.dim {
                for st in [-1i64, 1] {
                    let nb = grid.neighbor(flat, ax, st).expect("stencil neighbor");
                    if grid.class(nb) == NodeClass::Dirichlet {
                        acc += op.boundary_at(nb);
                    }
                }
            }
            bdry_term[r] = acc * inv_h2;
        }
    }

    let prev_norm = {
        let s: f64 = prev.iter().map(|v| v * v).sum();
        s.sqrt() * w_sqrt
    };
    let tol = cfg.newton_abs_tol + cfg.newton_rel_tol * prev_norm;

    // residual G(x) = x - prev + τ(−Δx + s(x)); −Δx = (2d x − Σ nb)/h² − bdry
    let residual = |x: &[f64], g_out: &mut [f64]| {
        for (r, &fl) in interior.iter().enumerate() {
            let flat = fl as usize;
            let c = x[r];
            let mut lap_acc = 0.0;
            for ax in 0..grid.dim {
                for st in [-1i64, 1] {
                    let nb = grid.neighbor(flat, ax, st).expect("stencil neighbor");
                    let nb_rank = grid.rank(nb);
                    if nb_rank >= 0 {
                        lap_acc += c - x[nb_rank as usize];
                    } else {
                        lap_acc += c;
                    }
                }
            }
            g_out[r] = c - prev[r] + tau * (lap_acc * inv_h2 - bdry_term[r] + signed_power(c, q));
        }
    };
    let norm = |v: &[f64]| -> f64 {
        let s: f64 = v.iter().map(|a| a * a).sum();
        s.sqrt() * w_sqrt
    };

    let mut x = prev.clone();
    let mut g = vec![0.0; n];
    residual(&x, &mut g);
    let mut g_norm = norm(&g);
    let mut history = vec![g_norm];
    let mut iters = 0;

    while g_norm > tol {
        if iters >= cfg.max_newton_iters {
            return Err(OperatorError::NewtonDivergence(format!(
                "iteration cap {} hit with residual {:e} (tol {:e}); reduce tau or loosen tolerances",
                cfg.max_newton_iters, g_norm, tol
            )));
        }
        let extra: Vec<f64> = x.iter().map(|&u| tau * signed_power_deriv(u, q)).collect();
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = solve_newton_system(&grid, 1.0, tau, &extra, &neg_g, cfg)?;

        // damped line search: accept the first step with a residual decrease
        let mut alpha = cfg.damping;
        let mut accepted = false;
        let mut x_try = vec![0.0; n];
        let mut g_try = vec![0.0; n];
        for _ in 0..30 {
            for i in 0..n {
                x_try[i] = x[i] + alpha * delta[i];
            }
            residual(&x_try, &mut g_try);
            let g_try_norm = norm(&g_try);
            if g_try_norm < g_norm {
                x.copy_from_slice(&x_try);
                g.copy_from_slice(&g_try);
                g_norm = g_try_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(OperatorError::NewtonDivergence(format!(
                "line search stalled at residual {g_norm:e} (tol {tol:e})"
            )));
        }
        history.push(g_norm);
        iters += 1;
    }

    // nonnegativity: the M-matrix solve keeps the iterate above -O(tol)
    let mut min_x: f64 = 0.0;
    for &v in &x {
        min_x = min_x.min(v);
    }
    if min_x < -1e3 * tol.max(1e-14) {
        return Err(OperatorError::NewtonDivergence(format!(
            "resolvent produced a negative value {min_x:e}"
        )));
    }

    let mut field = Field::zeros(&grid);
    for (r, &fl) in interior.iter().enumerate() {
        field.values_mut()[fl as usize] = x[r].max(0.0);
    }
    for (idx, &fl) in grid.dirichlet_nodes().iter().enumerate() {
        field.values_mut()[fl as usize] = op.boundary_values()[idx];
    }
    Ok(StepResult { field, newton_iters: iters, final_residual: g_norm, residual_history: history })
}

/// Scalar resolvent: the root y ≥ 0 of y + τ·y^q = x for x ≥ 0. Newton from
/// y = x converges monotonically (the map is convex).
pub fn scalar_resolvent(x: f64, tau: f64, q: f64) -> f64 {
    assert!(x >= 0.0 && tau > 0.0 && q > 1.0);
    if x == 0.0 {
        return 0.0;
    }
    let mut y = x;
    for _ in 0..200 {
        let g = y + tau * signed_power(y, q) - x;
        let gp = 1.0 + tau * signed_power_deriv(y, q);
        let step = g / gp;
        y -= step;
        if step.abs() <= 1e-16 * y.max(1.0) {
            break;
        }
    }
    y.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, build_periodic_grid, DomainSpec, Field};
    use crate::oracle;

    fn interval_grid(h: f64) -> Arc<Grid> {
        build_grid(&DomainSpec::Interval { a: -1.0, b: 1.0 }, h).unwrap()
    }

    #[test]
    fn laplacian_zero_field() {
        let g = interval_grid(0.25);
        let op = StencilOperator::zero_boundary(&g);
        let out = op.apply_laplacian(&Field::zeros(&g)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = interval_grid(0.25);
        let mut u = Field::zeros(&g);
        for i in 0..g.n_nodes() {
            let x = g.position(i)[0];
            u.values_mut()[i] = x * x;
        }
        // boundary values from the same quadratic at the Dirichlet nodes
        let bvals: Vec<f64> = g
            .dirichlet_nodes()
            .iter()
            .map(|&fl| {
                let x = g.position(fl as usize)[0];
                x * x
            })
            .collect();
        let op = StencilOperator::new(g.clone(), bvals);
        let out = op.apply_laplacian(&u).unwrap();
        for &fl in g.interior_nodes() {
            assert!((out.values()[fl as usize] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_sine_taylor_bound() {
        use std::f64::consts::PI;
        let h = 1.0 / 64.0;
        let g = interval_grid(h);
        let mut u = Field::zeros(&g);
        for i in 0..g.n_nodes() {
            u.values_mut()[i] = (PI * g.position(i)[0]).sin();
        }
        let bvals: Vec<f64> = g
            .dirichlet_nodes()
            .iter()
            .map(|&fl| (PI * g.position(fl as usize)[0]).sin())
            .collect();
        let op = StencilOperator::new(g.clone(), bvals);
        let out = op.apply_laplacian(&u).unwrap();
        // |δ²u − u''| ≤ (h²/12)·max|u⁗| = (π⁴/12)h²
        let bound = PI.powi(4) / 12.0 * h * h + 1e-12;
        for &fl in g.interior_nodes() {
            let x = g.position(fl as usize)[0];
            let err = (out.values()[fl as usize] + PI * PI * (PI * x).sin()).abs();
            assert!(err <= bound, "taylor bound violated at x={x}: {err} > {bound}");
        }
    }

    #[test]
    fn implicit_step_fixes_zero() {
        let g = interval_grid(0.25);
        let op = StencilOperator::zero_boundary(&g);
        let cfg = StepperConfig::default();
        let out = implicit_step(&Field::zeros(&g), 0.1, 2.0, &op, &cfg).unwrap();
        assert!(out.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn implicit_step_constant_golden_root() {
        // q=2, τ=1, data 1, no boundary: root of u² + u = 1 is (√5−1)/2
        let g = build_periodic_grid(-1.0, 1.0, 0.25).unwrap();
        let op = StencilOperator::zero_boundary(&g);
        let cfg = StepperConfig::default();
        let out = implicit_step(&Field::constant(&g, 1.0), 1.0, 2.0, &op, &cfg).unwrap();
        let golden = 0.618_033_988_749_894_9_f64;
        for &fl in g.interior_nodes() {
            assert!((out.field.values()[fl as usize] - golden).abs() < 1e-12);
        }
    }

    #[test]
    fn implicit_step_constant_matches_bisection_oracle() {
        let g = build_periodic_grid(0.0, 1.0, 0.125).unwrap();
        let op = StencilOperator::zero_boundary(&g);
        let cfg = StepperConfig::default();
        for (k, q, tau) in [(3.0, 2.5, 0.37), (10.0, 1.5, 0.02), (0.7, 3.0, 5.0)] {
            let out = implicit_step(&Field::constant(&g, k), tau, q, &op, &cfg).unwrap();
            let oracle_root = oracle::scalar_resolvent_bisection(k, tau, q);
            for &fl in g.interior_nodes() {
                assert!(
                    (out.field.values()[fl as usize] - oracle_root).abs() < 1e-10 * (1.0 + k),
                    "k={k} q={q} tau={tau}"
                );
            }
            assert!((scalar_resolvent(k, tau, q) - oracle_root).abs() < 1e-12 * (1.0 + k));
        }
    }

    #[test]
    fn implicit_step_rejects_negative_input() {
        let g = interval_grid(0.25);
        let op = StencilOperator::zero_boundary(&g);
        let cfg = StepperConfig::default();
        let mut u = Field::constant(&g, 1.0);
        let fl = g.interior_nodes()[1] as usize;
        u.values_mut()[fl] = -0.5;
        assert!(matches!(
            implicit_step(&u, 0.1, 2.0, &op, &cfg),
            Err(OperatorError::NegativeInput(_))
        ));
    }

    #[test]
    fn newton_residuals_decrease() {
        let g = interval_grid(1.0 / 32.0);
        let op = StencilOperator::zero_boundary(&g);
        let cfg = StepperConfig::default();
        let out = implicit_step(&Field::constant(&g, 50.0), 0.05, 3.0, &op, &cfg).unwrap();
        for w in out.residual_history.windows(2) {
            assert!(w[1] < w[0], "residual history not decreasing: {:?}", out.residual_history);
        }
    }

    #[test]
    fn solve_linear_trivial_cases() {
        let g = interval_grid(0.25);
        let extra = vec![0.0; g.interior_nodes().len()];
        let action = ShiftedLaplacian { grid: &g, mass: 1.0, tau: 0.0, extra_diag: &extra };
        let rhs = vec![0.0; action.len()];
        assert!(solve_linear(&action, &rhs, 1e-12, 100).unwrap().iter().all(|&v| v == 0.0));
        // identity action (τ=0) returns rhs unchanged
        let rhs: Vec<f64> = (0..action.len()).map(|i| (i as f64).sin()).collect();
        let x = solve_linear(&action, &rhs, 1e-14, 100).unwrap();
        for (a, b) in x.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_solve_matches_dense_oracle() {
        // 17 interior nodes; CG and the tridiagonal sweep against dense elimination
        let g = build_grid(&DomainSpec::Interval { a: 0.0, b: 1.0 }, 1.0 / 18.0).unwrap();
        let n = g.interior_nodes().len();
        assert_eq!(n, 17);
        let extra = vec![0.0; n];
        let action = ShiftedLaplacian { grid: &g, mass: 1.0, tau: 0.3, extra_diag: &extra };
        let rhs: Vec<f64> = (0..n).map(|i| (0.3 + 1.7 * i as f64).cos()).collect();

        let mut dense = vec![vec![0.0; n]; n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            action.apply(&e, &mut col);
            for i in 0..n {
                dense[i][j] = col[i];
            }
        }
        let x_dense = oracle::dense_solve(dense, rhs.clone());

        let x_cg = solve_linear(&action, &rhs, 1e-14, 10_000).unwrap();
        let x_tri = solve_tridiagonal(&g, 1.0, 0.3, &extra, &rhs);
        for i in 0..n {
            assert!((x_cg[i] - x_dense[i]).abs() <= 1e-10);
            assert!((x_tri[i] - x_dense[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn stencil_negative_semidefinite_and_row_sums() {
        use rand::{Rng, SeedableRng};
        let g = build_grid(&DomainSpec::Ball { radius: 1.0, dim: 2 }, 0.2).unwrap();
        let op = StencilOperator::zero_boundary(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut u = Field::zeros(&g);
            for &fl in g.interior_nodes() {
                u.values_mut()[fl as usize] = rng.gen_range(-1.0..1.0);
            }
            let lap = op.apply_laplacian(&u).unwrap();
            let quad: f64 = g
                .interior_nodes()
                .iter()
                .map(|&fl| u.values()[fl as usize] * lap.values()[fl as usize])
                .sum();
            assert!(quad <= 1e-12, "quadratic form must be ≤ 0, got {quad}");
        }
        // row sums vanish away from the boundary: Δ of a constant is 0 there
        let ones = Field::constant(&g, 1.0);
        let lap = op.apply_laplacian(&ones).unwrap();
        for &fl in g.interior_nodes() {
            let flat = fl as usize;
            let away = (0..g.dim).all(|ax| {
                [-1i64, 1].iter().all(|&st| {
                    let nb = g.neighbor(flat, ax, st).unwrap();
                    g.class(nb) == NodeClass::Interior
                })
            });
            if away {
                assert!(lap.values()[flat].abs() < 1e-12);
            }
        }
    }
}

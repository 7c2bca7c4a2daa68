//! Time evolution by repeated resolvent steps, the discrete energy, and the
//! quantitative diagnostics attached to every run: the spatially constant
//! scalar majorant, the universal cap φ_q, and the time-derivative bound.

use crate::geometry::{Field, Grid, GeometryError, NodeClass};
use crate::operators::{
    implicit_step, scalar_resolvent, OperatorError, StencilOperator, StepperConfig,
};
use crate::problem::{InitialMode, LateralData, ProblemSpec};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemigroupError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("newton divergence at t = {t}: {source}")]
    StepFailed { t: f64, source: OperatorError },
    #[error("grid incommensurate: {0}")]
    GridIncommensurate(String),
    #[error("invalid evolve request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Construction(#[from] Box<crate::constructions::ConstructionError>),
}

/// The universal spatially constant supersolution cap
/// φ_q(t) = ((q−1)t)^{−1/(q−1)}.
pub fn phi_q(q: f64, t: f64) -> f64 {
    ((q - 1.0) * t).powf(-1.0 / (q - 1.0))
}

/// Initial-layer amplitude c_q = (1/(q−1))^{1/(q−1)}; equals t^{1/(q−1)}φ_q(t).
pub fn c_q(q: f64) -> f64 {
    (1.0 / (q - 1.0)).powf(1.0 / (q - 1.0))
}

/// Discrete energy: edge-summed gradient plus |u|^{q+1}/(q+1) quadrature.
/// This is the exact potential of the stencil operator, so each resolvent
/// step decreases it (for time-constant boundary data). Dirichlet nodes get
/// trapezoidal half weight; exterior values are the zero extension.
pub fn energy(u: &Field, q: f64) -> f64 {
    let g = u.grid();
    let w = g.cell_weight();
    let inv_h2 = 1.0 / (g.h * g.h);
    let vals = u.values();
    let mut grad = 0.0;
    for flat in 0..g.n_nodes() {
        for ax in 0..g.dim {
            if let Some(nb) = g.neighbor(flat, ax, 1) {
                if g.periodic && nb <= flat {
                    // wrapped edge; counted when leaving the last node
                    if nb != flat {
                        let d = vals[nb] - vals[flat];
                        grad += 0.5 * d * d * inv_h2 * w;
                    }
                    continue;
                }
                let li = g.class(flat) == NodeClass::Interior;
                let ri = g.class(nb) == NodeClass::Interior;
                if li || ri {
                    let d = vals[nb] - vals[flat];
                    grad += 0.5 * d * d * inv_h2 * w;
                }
            }
        }
    }
    let mut pot = 0.0;
    for flat in 0..g.n_nodes() {
        match g.class(flat) {
            NodeClass::Interior => pot += vals[flat].abs().powf(q + 1.0) * w,
            NodeClass::Dirichlet => pot += 0.5 * vals[flat].abs().powf(q + 1.0) * w,
            NodeClass::Exterior => {}
        }
    }
    grad + pot / (q + 1.0)
}

#[derive(Clone, Debug)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub tau: f64,
    pub energy: f64,
    pub l2: f64,
    pub max: f64,
    pub dt_norm: f64,
    pub psi: f64,
    pub psi_margin: f64,
    pub phi_margin: f64,
    pub newton_iters: usize,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub requested_t: f64,
    pub t: f64,
    pub field: Field,
}

/// Worst-case margins accumulated over a run (or merged over many runs).
#[derive(Clone, Copy, Debug)]
pub struct Monitors {
    /// max over steps of (max_x u − ψ)/ψ against the scalar majorant
    pub max_psi_margin: f64,
    /// max over steps of relative energy increase (only for time-constant f)
    pub max_energy_increase: f64,
    /// max over steps of ‖(uⁿ⁺¹−uⁿ)/τ‖·t·√2/‖u₀‖
    pub max_dt_ratio: f64,
    /// max over snapshots of (max_x u − (φ_q + sup f))/(φ_q + sup f)
    pub max_phi_margin: f64,
    pub runs: usize,
}

impl Default for Monitors {
    fn default() -> Self {
        Monitors {
            max_psi_margin: f64::NEG_INFINITY,
            max_energy_increase: f64::NEG_INFINITY,
            max_dt_ratio: f64::NEG_INFINITY,
            max_phi_margin: f64::NEG_INFINITY,
            runs: 0,
        }
    }
}

impl Monitors {
    pub fn merge(&mut self, other: &Monitors) {
        self.max_psi_margin = self.max_psi_margin.max(other.max_psi_margin);
        self.max_energy_increase = self.max_energy_increase.max(other.max_energy_increase);
        self.max_dt_ratio = self.max_dt_ratio.max(other.max_dt_ratio);
        self.max_phi_margin = self.max_phi_margin.max(other.max_phi_margin);
        self.runs += other.runs;
    }
}

#[derive(Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub u0_l2: f64,
    pub q: f64,
    pub start_time: f64,
    pub f_sup: f64,
    pub monitors: Monitors,
}

fn rel_margin(value: f64, cap: f64) -> f64 {
    if cap <= 0.0 {
        if value <= 0.0 {
            -1.0
        } else {
            f64::INFINITY
        }
    } else {
        (value - cap) / cap
    }
}

/// Evolve `u0` under the implicit scheme from `start_time`, producing
/// snapshots at the requested absolute times (taken at the nearest step
/// boundary ≤ the request) and per-step diagnostics.
pub fn evolve(
    u0: &Field,
    problem: &ProblemSpec,
    cfg: &StepperConfig,
    output_times: &[f64],
    start_time: f64,
) -> Result<Trajectory, SemigroupError> {
    problem.validate().map_err(|e| SemigroupError::Invalid(e.to_string()))?;
    cfg.validate()?;
    if output_times.is_empty() {
        return Err(SemigroupError::Invalid("no output times requested".into()));
    }
    if output_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SemigroupError::Invalid("output times must be strictly increasing".into()));
    }
    if output_times[0] < start_time {
        return Err(SemigroupError::Invalid("output times precede the start time".into()));
    }
    let grid = u0.grid().clone();
    if grid.periodic != problem.no_boundary {
        return Err(SemigroupError::Invalid(
            "no-boundary mode and grid periodicity must agree".into(),
        ));
    }
    let min0 = u0.min_interior();
    if min0 < 0.0 {
        return Err(SemigroupError::Invalid(format!("initial data must be ≥ 0, got min {min0}")));
    }
    let q = problem.q;
    let f = &problem.lateral;
    let f_sup = f.sup();
    let monitor_energy = f.is_time_constant();

    let mut cur = u0.clone();
    let bvals_at = |t: f64| -> Vec<f64> {
        let v = f.value_at(t);
        vec![v; grid.dirichlet_nodes().len()]
    };
    cur.set_dirichlet_values(&bvals_at(start_time));

    let mut op = StencilOperator::new(grid.clone(), bvals_at(start_time));
    let f_constant = matches!(f, LateralData::Zero | LateralData::Constant { .. });

    let u0_l2 = cur.l2_norm();
    let mut psi = cur.max_interior().max(f_sup).max(0.0);
    let mut energy_cur = energy(&cur, q);

    let mut monitors = Monitors { runs: 1, ..Monitors::default() };
    let mut diagnostics = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut pending = output_times.iter().copied().peekable();

    let mut t = start_time;
    let mut step_index = 0usize;
    let max_steps = 20_000_000usize;

    let capture = |snapshots: &mut Vec<Snapshot>,
                   monitors: &mut Monitors,
                   requested: f64,
                   t_actual: f64,
                   field: &Field| {
        let elapsed = t_actual - start_time;
        if elapsed > 0.0 {
            let cap = phi_q(q, elapsed) + f_sup;
            let m = rel_margin(field.max_interior(), cap);
            monitors.max_phi_margin = monitors.max_phi_margin.max(m);
        }
        snapshots.push(Snapshot { requested_t: requested, t: t_actual, field: field.clone() });
    };

    while pending.peek().is_some() {
        if step_index >= max_steps {
            return Err(SemigroupError::Invalid("step budget exceeded".into()));
        }
        let tau = cfg.schedule.step(step_index);
        let t_next = t + tau;
        // requests strictly inside (t, t_next) resolve to the boundary at t
        while let Some(&r) = pending.peek() {
            if r < t_next - 1e-12 * (1.0 + t_next.abs()) {
                capture(&mut snapshots, &mut monitors, r, t, &cur);
                pending.next();
            } else {
                break;
            }
        }
        if pending.peek().is_none() {
            break;
        }

        if !f_constant {
            op.set_boundary(bvals_at(t_next));
        }
        let step = implicit_step(&cur, tau, q, &op, cfg)
            .map_err(|e| SemigroupError::StepFailed { t: t_next, source: e })?;
        let next = step.field;

        // diagnostics
        let elapsed_next = t_next - start_time;
        let dt_norm = {
            let w = grid.cell_weight();
            let s: f64 = grid
                .interior_nodes()
                .iter()
                .map(|&i| {
                    let d = next.values()[i as usize] - cur.values()[i as usize];
                    d * d
                })
                .sum();
            (s * w).sqrt() / tau
        };
        psi = scalar_resolvent(psi, tau, q).max(f_sup);
        let max_u = next.max_interior();
        let psi_margin = rel_margin(max_u, psi);
        let phi_margin = rel_margin(max_u, phi_q(q, elapsed_next) + f_sup);
        let energy_next = energy(&next, q);
        if monitor_energy {
            let scale = energy_cur.abs().max(energy_next.abs()).max(1e-300);
            monitors.max_energy_increase =
                monitors.max_energy_increase.max((energy_next - energy_cur) / scale);
        }
        monitors.max_psi_margin = monitors.max_psi_margin.max(psi_margin);
        let dt_ratio = if u0_l2 > 0.0 {
            dt_norm * elapsed_next * std::f64::consts::SQRT_2 / u0_l2
        } else if dt_norm > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        monitors.max_dt_ratio = monitors.max_dt_ratio.max(dt_ratio);
        diagnostics.push(DiagnosticsRow {
            t: t_next,
            tau,
            energy: energy_next,
            l2: next.l2_norm(),
            max: max_u,
            dt_norm,
            psi,
            psi_margin,
            phi_margin,
            newton_iters: step.newton_iters,
        });

        cur = next;
        energy_cur = energy_next;
        t = t_next;
        step_index += 1;

        // requests that land on this step boundary
        while let Some(&r) = pending.peek() {
            if (r - t).abs() <= 1e-12 * (1.0 + t.abs()) {
                capture(&mut snapshots, &mut monitors, r, t, &cur);
                pending.next();
            } else {
                break;
            }
        }
    }

    Ok(Trajectory { snapshots, diagnostics, u0_l2, q, start_time, f_sup, monitors })
}

#[derive(Clone, Debug)]
pub struct MarginReport {
    /// max over snapshots of (max_x u − φ_q(t))/φ_q(t) (with sup f added for
    /// nonzero lateral data)
    pub max_phi_margin: f64,
    /// max over steps against the implicit scalar majorant
    pub max_psi_margin: f64,
    pub per_snapshot: Vec<(f64, f64)>,
}

/// Bound-violation margins of a trajectory against the universal cap and the
/// discrete scalar majorant.
pub fn check_universal_bound(traj: &Trajectory, q: f64) -> MarginReport {
    let mut per = Vec::new();
    let mut max_phi = f64::NEG_INFINITY;
    for s in &traj.snapshots {
        let elapsed = s.t - traj.start_time;
        if elapsed <= 0.0 {
            continue;
        }
        let cap = phi_q(q, elapsed) + traj.f_sup;
        let m = rel_margin(s.field.max_interior(), cap);
        per.push((s.t, m));
        max_phi = max_phi.max(m);
    }
    if per.is_empty() {
        max_phi = -1.0;
    }
    MarginReport { max_phi_margin: max_phi, max_psi_margin: traj.monitors.max_psi_margin, per_snapshot: per }
}

/// Discrete counterpart of the time-derivative estimate: the largest value of
/// ‖(uⁿ⁺¹−uⁿ)/τ‖·t_{n+1}·√2/‖u₀‖ over the run. A value ≤ 1 + slack confirms
/// the continuous-bound analog; the discretization slack is monitored, not
/// proved.
pub fn check_derivative_bound(traj: &Trajectory, u0_norm: f64) -> f64 {
    if u0_norm <= 0.0 {
        return if traj.diagnostics.iter().all(|d| d.dt_norm == 0.0) { 0.0 } else { f64::INFINITY };
    }
    traj.diagnostics
        .iter()
        .map(|d| d.dt_norm * (d.t - traj.start_time) * std::f64::consts::SQRT_2 / u0_norm)
        .fold(0.0, f64::max)
}

/// Rescaling invariance: solutions on Ω and λ⁻¹Ω with data and clocks scaled
/// by λ^{2/(q−1)} and λ² must coincide at matched nodes and times. Returns
/// the max relative deviation.
pub fn check_scaling_invariance(
    problem: &ProblemSpec,
    lambda: f64,
    h: f64,
    h_scaled: f64,
    stepper: &StepperConfig,
    ccfg: &crate::constructions::ConstructionConfig,
    output_times: &[f64],
) -> Result<f64, SemigroupError> {
    use crate::geometry::{build_grid, DomainSpec};
    if lambda <= 0.0 {
        return Err(SemigroupError::Invalid("scale must be positive".into()));
    }
    if (h_scaled * lambda - h).abs() > 1e-12 * h {
        return Err(SemigroupError::GridIncommensurate(format!(
            "scaled spacing {h_scaled} times lambda {lambda} does not reproduce {h}"
        )));
    }
    let scaled_domain = match problem.domain {
        DomainSpec::Interval { a, b } if (a + b).abs() < 1e-12 => {
            DomainSpec::Interval { a: a / lambda, b: b / lambda }
        }
        DomainSpec::Ball { radius, dim } => DomainSpec::Ball { radius: radius / lambda, dim },
        _ => {
            return Err(SemigroupError::Invalid(
                "scaling check requires an origin-centered interval or ball".into(),
            ))
        }
    };
    let q = problem.q;
    let power = 2.0 / (q - 1.0);
    let amp = lambda.powf(power);

    let scaled_problem = ProblemSpec {
        q,
        domain: scaled_domain,
        lateral: problem.lateral.clone(),
        initial: match problem.initial {
            InitialMode::Constant { k } => InitialMode::Constant { k: k * amp },
            InitialMode::BlowUp => InitialMode::BlowUp,
        },
        horizon: problem.horizon / (lambda * lambda),
        no_boundary: problem.no_boundary,
    };
    let scaled_stepper = StepperConfig {
        schedule: stepper.schedule.scaled(1.0 / (lambda * lambda)),
        ..stepper.clone()
    };
    let scaled_times: Vec<f64> = output_times.iter().map(|t| t / (lambda * lambda)).collect();

    let base_grid = build_grid(&problem.domain, h)?;
    let scaled_grid = build_grid(&scaled_problem.domain, h_scaled)?;

    let solve = |grid: &Arc<Grid>,
                 prob: &ProblemSpec,
                 cfg: &StepperConfig,
                 times: &[f64],
                 kcfg: &crate::constructions::ConstructionConfig|
     -> Result<Vec<Snapshot>, SemigroupError> {
        match prob.initial {
            InitialMode::Constant { k } => {
                let u0 = Field::constant(grid, k);
                Ok(evolve(&u0, prob, cfg, times, 0.0)?.snapshots)
            }
            InitialMode::BlowUp => {
                let lim = crate::constructions::blowup_limit(grid, prob, cfg, times, 0.0, kcfg, None)
                    .map_err(|e| SemigroupError::Construction(Box::new(e)))?;
                Ok(lim.snapshots)
            }
        }
    };

    let base_ccfg = ccfg.clone();
    let scaled_ccfg =
        crate::constructions::ConstructionConfig { k_start: ccfg.k_start * amp, ..ccfg.clone() };

    let base = solve(&base_grid, problem, stepper, output_times, &base_ccfg)?;
    let scaled = solve(&scaled_grid, &scaled_problem, &scaled_stepper, &scaled_times, &scaled_ccfg)?;
    if base.len() != scaled.len() {
        return Err(SemigroupError::Invalid("snapshot counts differ between the pair".into()));
    }

    let mut dev = 0.0_f64;
    for (bs, ss) in base.iter().zip(&scaled) {
        for &fl in scaled_grid.interior_nodes() {
            let y = scaled_grid.position(fl as usize);
            let target = [y[0] * lambda, y[1] * lambda];
            let Some(bn) = base_grid.node_at(&target) else {
                return Err(SemigroupError::GridIncommensurate(format!(
                    "no base node at {target:?}"
                )));
            };
            let bp = base_grid.position(bn);
            if (bp[0] - target[0]).abs() > 1e-9 * h || (bp[1] - target[1]).abs() > 1e-9 * h {
                return Err(SemigroupError::GridIncommensurate(format!(
                    "base node {bp:?} does not match scaled position {target:?}"
                )));
            }
            if base_grid.class(bn) != NodeClass::Interior {
                continue;
            }
            let predicted = amp * bs.field.values()[bn];
            let actual = ss.field.values()[fl as usize];
            let scale = predicted.abs().max(1e-12);
            dev = dev.max((actual - predicted).abs() / scale);
        }
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, build_periodic_grid, DomainSpec};
    use crate::oracle;

    #[test]
    fn energy_zero_and_symmetry() {
        let g = build_grid(&DomainSpec::Interval { a: 0.0, b: 1.0 }, 1.0 / 16.0).unwrap();
        assert_eq!(energy(&Field::zeros(&g), 2.0), 0.0);
        let mut u = Field::zeros(&g);
        for &fl in g.interior_nodes() {
            let x = g.position(fl as usize)[0];
            u.values_mut()[fl as usize] = (3.0 * x).sin();
        }
        let mut neg = u.clone();
        for v in neg.values_mut() {
            *v = -*v;
        }
        assert!((energy(&u, 2.0) - energy(&neg, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn energy_hat_function_golden() {
        // peak-1 hat on (0,1): ∫|∇v|²/2 = 2, ∫v³/3 = 1/12, total 25/12
        let h = 1.0 / 256.0;
        let g = build_grid(&DomainSpec::Interval { a: 0.0, b: 1.0 }, h).unwrap();
        let mut u = Field::zeros(&g);
        for &fl in g.interior_nodes() {
            let x = g.position(fl as usize)[0];
            u.values_mut()[fl as usize] = 1.0 - 2.0 * (x - 0.5).abs();
        }
        let golden = 25.0 / 12.0;
        let e = energy(&u, 2.0);
        assert!((e - golden).abs() / golden < 0.02, "hat energy {e} vs {golden}");
    }

    #[test]
    fn evolve_zero_stays_zero() {
        let g = build_grid(&DomainSpec::Interval { a: -1.0, b: 1.0 }, 1.0 / 16.0).unwrap();
        let p = ProblemSpec {
            q: 2.0,
            domain: g.domain.clone(),
            lateral: LateralData::Zero,
            initial: InitialMode::Constant { k: 0.0 },
            horizon: 1.0,
            no_boundary: false,
        };
        let cfg = StepperConfig {
            schedule: crate::operators::TimeSchedule::Fixed { tau: 0.05 },
            ..Default::default()
        };
        let traj = evolve(&Field::zeros(&g), &p, &cfg, &[0.25, 0.5], 0.0).unwrap();
        for s in &traj.snapshots {
            assert!(s.field.values().iter().all(|&v| v == 0.0));
        }
        let rep = check_universal_bound(&traj, 2.0);
        assert_eq!(rep.max_phi_margin, -1.0);
        assert_eq!(check_derivative_bound(&traj, traj.u0_l2), 0.0);
    }

    #[test]
    fn phi_and_c_goldens() {
        assert!((phi_q(2.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((phi_q(3.0, 1.0) - 0.707_106_781_186_547_6).abs() < 1e-15);
        assert!((c_q(2.0) - 1.0).abs() < 1e-15);
        assert!((c_q(3.0) - 0.707_106_781_186_547_6).abs() < 1e-15);
    }

    #[test]
    fn ode_oracle_first_order() {
        // constant data in no-boundary mode follows the scalar flow
        let g = build_periodic_grid(-1.0, 1.0, 0.25).unwrap();
        let p = ProblemSpec {
            q: 2.0,
            domain: g.domain.clone(),
            lateral: LateralData::Zero,
            initial: InitialMode::Constant { k: 1.0 },
            horizon: 1.0,
            no_boundary: true,
        };
        let run = |tau: f64| -> f64 {
            let cfg = StepperConfig {
                schedule: crate::operators::TimeSchedule::Fixed { tau },
                ..Default::default()
            };
            let traj = evolve(&Field::constant(&g, 1.0), &p, &cfg, &[1.0], 0.0).unwrap();
            traj.diagnostics
                .iter()
                .map(|d| {
                    let exact = oracle::ode_exact(1.0, 2.0, d.t);
                    (d.max - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = run(2e-3);
        let e2 = run(1e-3);
        assert!(e1 < 1e-3);
        let ratio = e1 / e2;
        assert!((1.8..=2.2).contains(&ratio), "halving ratio {ratio}");
    }

    #[test]
    fn constant_data_below_two_supersolutions() {
        // u ≤ min(scalar flow, linear heat) nodewise
        let h = 1.0 / 64.0;
        let g = build_grid(&DomainSpec::Interval { a: -1.0, b: 1.0 }, h).unwrap();
        let k = 1.5;
        let p = ProblemSpec {
            q: 2.0,
            domain: g.domain.clone(),
            lateral: LateralData::Zero,
            initial: InitialMode::Constant { k },
            horizon: 1.0,
            no_boundary: false,
        };
        let cfg = StepperConfig {
            schedule: crate::operators::TimeSchedule::Fixed { tau: 1e-3 },
            ..Default::default()
        };
        let traj = evolve(&Field::constant(&g, k), &p, &cfg, &[0.1, 0.5], 0.0).unwrap();
        for s in &traj.snapshots {
            let ode = oracle::ode_exact(k, 2.0, s.t);
            for &fl in g.interior_nodes() {
                let x = g.position(fl as usize)[0];
                let v = s.field.values()[fl as usize];
                assert!(v <= ode + 1e-10, "above scalar flow at x={x}, t={}", s.t);
                let lin = oracle::linear_heat_constant_data(-1.0, 1.0, k, x, s.t, 400);
                assert!(v <= lin + 0.01 * k, "above linear heat at x={x}, t={}: {v} vs {lin}", s.t);
            }
        }
        // margins are strictly negative for modest data
        let rep = check_universal_bound(&traj, 2.0);
        assert!(rep.max_phi_margin < 0.0);
        assert!(rep.max_psi_margin < 1e-10);
        assert!(traj.monitors.max_energy_increase <= 1e-8);
    }

    #[test]
    fn derivative_bound_on_ode_oracle() {
        // analytic: sup_t |v'(t)|·t·√2/k = sup √2·t·v^q/k ≤ 1 for the exact flow
        let k = 1.0;
        let q = 2.0;
        let mut analytic: f64 = 0.0;
        for i in 1..=1000 {
            let t = i as f64 * 1e-3;
            let v = oracle::ode_exact(k, q, t);
            analytic = analytic.max(v.powf(q) * t * std::f64::consts::SQRT_2 / k);
        }
        assert!(analytic <= 1.0, "analytic ratio {analytic}");

        let g = build_periodic_grid(-1.0, 1.0, 0.5).unwrap();
        let p = ProblemSpec {
            q,
            domain: g.domain.clone(),
            lateral: LateralData::Zero,
            initial: InitialMode::Constant { k },
            horizon: 1.0,
            no_boundary: true,
        };
        let cfg = StepperConfig {
            schedule: crate::operators::TimeSchedule::Fixed { tau: 1e-3 },
            ..Default::default()
        };
        let traj = evolve(&Field::constant(&g, k), &p, &cfg, &[1.0], 0.0).unwrap();
        let ratio = check_derivative_bound(&traj, traj.u0_l2);
        assert!(ratio <= 1.0 + 1e-2, "discrete ratio {ratio}");
    }

    #[test]
    fn scaling_identity_and_incommensurate() {
        let p = ProblemSpec {
            q: 2.0,
            domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
            lateral: LateralData::Zero,
            initial: InitialMode::Constant { k: 1.0 },
            horizon: 0.5,
            no_boundary: false,
        };
        let cfg = StepperConfig {
            schedule: crate::operators::TimeSchedule::Fixed { tau: 1e-2 },
            ..Default::default()
        };
        let ccfg = crate::constructions::ConstructionConfig::default();
        let dev =
            check_scaling_invariance(&p, 1.0, 1.0 / 16.0, 1.0 / 16.0, &cfg, &ccfg, &[0.25, 0.5])
                .unwrap();
        assert_eq!(dev, 0.0);
        assert!(matches!(
            check_scaling_invariance(&p, 2.0, 1.0 / 16.0, 1.0 / 16.0, &cfg, &ccfg, &[0.25]),
            Err(SemigroupError::GridIncommensurate(_))
        ));
    }
}

//! The limit constructions: the stationary boundary-blow-up barrier W_R on a
//! ball, the minimal solution by interior exhaustion, the maximal solution by
//! k → ∞ (and truncation continuation on exterior domains), the lateral-data
//! solution by the two-schedule construction, and the asymptote fits.
//!
//! "k = ∞" is realized as k-doubling until the probe-set change stalls below
//! a declared tolerance. Every k-, m-, n- and τ-continuation records its
//! convergence table so limit claims can be audited.

use crate::geometry::{
    build_grid, extend_by_zero, exhaustion, DomainSpec, ExhaustionPlan, Field, GeometryError, Grid,
    NodeClass,
};
use crate::operators::{
    signed_power, signed_power_deriv, solve_linear, OperatorError, ShiftedLaplacian,
    StencilOperator, StepperConfig,
};
use crate::problem::{LateralData, ProblemSpec};
use crate::semigroup::{evolve, phi_q, Monitors, SemigroupError, Snapshot};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("non-monotone sequence: {0}")]
    NonMonotone(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("unresolved layer: {0}")]
    UnresolvedLayer(String),
    #[error("schedules disagree: {0}")]
    SchedulesDisagree(String),
    #[error("invalid construction request: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticConfig {
    pub k_start: f64,
    /// Shell-increment level below which the stall detector is armed.
    pub arm_threshold: f64,
    /// Stop once armed and the increment decay ratio exceeds this; the
    /// continuation has left the deficit phase and further boundary data
    /// only feeds the divergent nodal layer.
    pub ratio_stop: f64,
    pub hard_tol: f64,
    pub max_doublings: usize,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub max_newton_iters: usize,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        EllipticConfig {
            k_start: 1.0,
            arm_threshold: 0.05,
            ratio_stop: 0.85,
            hard_tol: 1e-10,
            max_doublings: 120,
            newton_abs_tol: 1e-9,
            newton_rel_tol: 1e-12,
            max_newton_iters: 200,
            linear_tol: 1e-10,
            max_linear_iters: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructionConfig {
    pub k_start: f64,
    /// Relative probe-set stall tolerance for k-doubling.
    pub k_tol: f64,
    pub max_doublings: usize,
    /// Declared tolerance for the exhaustion (margin) table.
    pub m_tol: f64,
    /// Declared tolerance for truncation-radius tables.
    pub n_tol: f64,
    /// Declared tolerance for the lateral τ-continuation table.
    pub tau_tol: f64,
    /// Probe set: interior nodes at least this fraction of the diameter
    /// scale away from the boundary.
    pub probe_margin_factor: f64,
    /// Cross-check start time for the cap-data path (data φ_q(t₀) at t₀).
    pub phi_start_t0: Option<f64>,
    /// Lateral schedule A start times, strictly decreasing.
    pub tau_list: Vec<f64>,
    /// Lateral schedule B start time.
    pub b_start: f64,
    /// Allowed A/B discrepancy before the construction errors.
    pub ab_tol: f64,
    pub elliptic: EllipticConfig,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            k_start: 1.0,
            k_tol: 1e-4,
            max_doublings: 60,
            m_tol: 0.05,
            n_tol: 0.05,
            tau_tol: 0.02,
            probe_margin_factor: 0.25,
            phi_start_t0: None,
            tau_list: vec![2e-3, 1e-3],
            b_start: 5e-4,
            ab_tol: 0.02,
            elliptic: EllipticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceEntry {
    pub parameter: f64,
    pub sup_change: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub axis: String,
    pub declared_tol: f64,
    pub entries: Vec<ConvergenceEntry>,
}

impl ConvergenceTable {
    pub fn converged(&self) -> bool {
        self.entries
            .last()
            .map(|e| e.sup_change.is_finite() && e.sup_change <= self.declared_tol)
            .unwrap_or(false)
    }
}

#[derive(Debug)]
pub struct ConstructionResult {
    pub label: String,
    pub grid: Arc<Grid>,
    pub snapshots: Vec<Snapshot>,
    pub tables: Vec<ConvergenceTable>,
    pub monitors: Monitors,
    pub k_final: f64,
    pub phi_start_deviation: Option<f64>,
    pub ab_discrepancy: Option<f64>,
    pub barrier_violation: Option<f64>,
}

/// Interior nodes at least `margin` from the boundary of the grid's domain.
pub fn probe_nodes(grid: &Grid, margin: f64) -> Vec<usize> {
    grid.interior_nodes()
        .iter()
        .map(|&f| f as usize)
        .filter(|&f| grid.domain.boundary_distance(&grid.position(f)) >= margin)
        .collect()
}

/// Map probe nodes (flat indices on `src`) onto `dst` by lattice position,
/// keeping only those that are interior there.
pub fn map_probes(src: &Grid, probes: &[usize], dst: &Grid) -> Vec<usize> {
    probes
        .iter()
        .filter_map(|&p| dst.find_lattice(src.lattice_of(p)))
        .filter(|&f| dst.class(f) == NodeClass::Interior)
        .collect()
}

/// How far `a` rises above `b`, max over interior nodes of a shared layout.
pub fn max_exceedance(a: &Field, b: &Field) -> f64 {
    let g = a.grid();
    assert!(same_layout(g, b.grid()), "fields on different layouts");
    g.interior_nodes()
        .iter()
        .map(|&i| a.values()[i as usize] - b.values()[i as usize])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn same_layout(a: &Grid, b: &Grid) -> bool {
    a.h == b.h && a.dim == b.dim && a.shape() == b.shape() && {
        let la = a.lattice_of(0);
        let lb = b.lattice_of(0);
        la == lb
    }
}

/// Max relative difference between two matched snapshot lists at probe nodes.
pub fn sup_rel_diff(a: &[Snapshot], b: &[Snapshot], probes: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "snapshot lists must match");
    let mut dev = 0.0_f64;
    for (sa, sb) in a.iter().zip(b) {
        for &p in probes {
            let va = sa.field.values()[p];
            let vb = sb.field.values()[p];
            let scale = va.abs().max(vb.abs()).max(1e-30);
            dev = dev.max((va - vb).abs() / scale);
        }
    }
    dev
}

fn field_scale(a: &Field, b: &Field) -> f64 {
    1.0 + a.max_interior().abs().max(b.max_interior().abs())
}

pub(crate) struct BlowupLimit {
    pub snapshots: Vec<Snapshot>,
    pub table: ConvergenceTable,
    pub monitors: Monitors,
    pub k_final: f64,
}

/// k-doubling limit of constant-data runs on one grid: doubles the initial
/// constant until the probe-set change at the output times falls below the
/// stall tolerance. Monotonicity in k is asserted nodewise at every doubling.
pub(crate) fn blowup_limit(
    grid: &Arc<Grid>,
    problem: &ProblemSpec,
    stepper: &StepperConfig,
    output_times: &[f64],
    start_time: f64,
    cfg: &ConstructionConfig,
    probes: Option<&[usize]>,
) -> Result<BlowupLimit, ConstructionError> {
    // The stall decision must stay away from this grid's own boundary: the
    // nodal k-limit creeps logarithmically at boundary-adjacent nodes, while
    // compact sets stall geometrically.
    let own_margin = cfg.probe_margin_factor * grid.domain.diameter_scale();
    let probes: Vec<usize> = {
        let compact: Vec<usize> = match probes {
            Some(p) => p
                .iter()
                .copied()
                .filter(|&f| grid.domain.boundary_distance(&grid.position(f)) >= own_margin)
                .collect(),
            None => Vec::new(),
        };
        if compact.is_empty() {
            probe_nodes(grid, own_margin)
        } else {
            compact
        }
    };
    if probes.is_empty() {
        return Err(ConstructionError::Invalid("empty probe set for the k-limit".into()));
    }
    let mut monitors = Monitors::default();
    let mut table = ConvergenceTable {
        axis: "k".into(),
        declared_tol: cfg.k_tol,
        entries: Vec::new(),
    };
    let mut k = cfg.k_start;
    let mut prev: Option<(Vec<Snapshot>, f64)> = None;
    for _ in 0..cfg.max_doublings {
        let t0 = Instant::now();
        let traj = evolve_from_constant(grid, problem, stepper, output_times, start_time, k)?;
        monitors.merge(&traj.monitors);
        let snaps = traj.snapshots;
        if let Some((old, old_k)) = &prev {
            // order preservation in the initial constant, nodewise
            for (sn, so) in snaps.iter().zip(old.iter()) {
                let slack = 1e-10 * field_scale(&sn.field, &so.field);
                let exceed = max_exceedance(&so.field, &sn.field);
                if exceed > slack {
                    return Err(ConstructionError::NonMonotone(format!(
                        "k-continuation lost monotonicity between k={old_k} and k={k} \
                         at t={} (exceedance {exceed:e})",
                        sn.t
                    )));
                }
            }
            let change = sup_rel_diff(&snaps, old, &probes);
            table.entries.push(ConvergenceEntry {
                parameter: k,
                sup_change: change,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
            if change < cfg.k_tol {
                return Ok(BlowupLimit { snapshots: snaps, table, monitors, k_final: k });
            }
        } else {
            table.entries.push(ConvergenceEntry {
                parameter: k,
                sup_change: f64::INFINITY,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        prev = Some((snaps, k));
        k *= 2.0;
    }
    Err(ConstructionError::BudgetExceeded(format!(
        "k-doubling did not stall after {} doublings (last k = {k})",
        cfg.max_doublings
    )))
}

// evolve() with a constant-k initial field.
fn evolve_from_constant(
    grid: &Arc<Grid>,
    problem: &ProblemSpec,
    stepper: &StepperConfig,
    output_times: &[f64],
    start_time: f64,
    k: f64,
) -> Result<crate::semigroup::Trajectory, SemigroupError> {
    let u0 = Field::constant(grid, k);
    evolve(&u0, problem, stepper, output_times, start_time)
}

/// Minimal solution by interior exhaustion: for each member, the k → ∞ limit
/// with zero lateral data, extended by zero and required to increase in m.
pub fn construct_minimal(
    problem: &ProblemSpec,
    plan: &ExhaustionPlan,
    h: f64,
    stepper: &StepperConfig,
    cfg: &ConstructionConfig,
    output_times: &[f64],
) -> Result<ConstructionResult, ConstructionError> {
    if !problem.lateral.is_zero() {
        return Err(ConstructionError::Invalid(
            "the minimal construction requires zero lateral data".into(),
        ));
    }
    if !matches!(plan, ExhaustionPlan::Interior { .. }) {
        return Err(ConstructionError::Invalid(
            "the minimal construction requires an interior exhaustion plan".into(),
        ));
    }
    plan.validate()?;
    let full_grid = build_grid(&problem.domain, h)?;
    let margin = cfg.probe_margin_factor * problem.domain.diameter_scale();
    let probes_full = probe_nodes(&full_grid, margin);
    if probes_full.is_empty() {
        return Err(ConstructionError::Invalid("empty probe set on the full grid".into()));
    }

    let mut tables = Vec::new();
    let mut m_table = ConvergenceTable {
        axis: "margin".into(),
        declared_tol: cfg.m_tol,
        entries: Vec::new(),
    };
    let mut monitors = Monitors::default();
    let mut prev_ext: Option<Vec<Snapshot>> = None;
    let mut k_final = 0.0;

    for m in 0..plan.count() {
        let t0 = Instant::now();
        let dom_m = exhaustion(&problem.domain, plan, m)?;
        let grid_m = build_grid(&dom_m, h)?;
        let member_problem = ProblemSpec { domain: dom_m.clone(), ..problem.clone() };
        let member_probes = map_probes(&full_grid, &probes_full, &grid_m);
        if member_probes.is_empty() {
            return Err(ConstructionError::Invalid(format!(
                "probe set does not reach exhaustion member {m}; shrink the probe margin"
            )));
        }
        let lim = blowup_limit(
            &grid_m,
            &member_problem,
            stepper,
            output_times,
            0.0,
            cfg,
            Some(&member_probes),
        )?;
        monitors.merge(&lim.monitors);
        k_final = lim.k_final;
        let mut ktab = lim.table;
        ktab.axis = format!("k (member {m})");
        tables.push(ktab);

        let ext: Vec<Snapshot> = lim
            .snapshots
            .iter()
            .map(|s| {
                Ok(Snapshot {
                    requested_t: s.requested_t,
                    t: s.t,
                    field: extend_by_zero(&s.field, &full_grid)?,
                })
            })
            .collect::<Result<_, GeometryError>>()?;

        let margin_m = match plan {
            ExhaustionPlan::Interior { margins } => margins[m],
            _ => unreachable!(),
        };
        if let Some(old) = &prev_ext {
            for (sn, so) in ext.iter().zip(old.iter()) {
                let slack = 1e-10 * field_scale(&sn.field, &so.field);
                let exceed = max_exceedance(&so.field, &sn.field);
                if exceed > slack {
                    return Err(ConstructionError::NonMonotone(format!(
                        "exhaustion member {m} fell below its predecessor at t={} \
                         (exceedance {exceed:e}); this signals a discretization bug",
                        sn.t
                    )));
                }
            }
            let change = sup_rel_diff(&ext, old, &probes_full);
            m_table.entries.push(ConvergenceEntry {
                parameter: margin_m,
                sup_change: change,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        } else {
            m_table.entries.push(ConvergenceEntry {
                parameter: margin_m,
                sup_change: f64::INFINITY,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        prev_ext = Some(ext);
    }
    if plan.count() > 1 && !m_table.converged() {
        return Err(ConstructionError::NoConvergence(format!(
            "exhaustion table did not reach the declared tolerance {}: {:?}",
            cfg.m_tol,
            m_table.entries.last()
        )));
    }
    tables.push(m_table);

    Ok(ConstructionResult {
        label: "minimal-exhaustion".into(),
        grid: full_grid,
        snapshots: prev_ext.unwrap_or_default(),
        tables,
        monitors,
        k_final,
        phi_start_deviation: None,
        ab_discrepancy: None,
        barrier_violation: None,
    })
}

/// Maximal solution: k → ∞ on the domain itself (bounded kinds) or on an
/// increasing truncation sequence (exterior kinds), plus the optional
/// cap-data cross-check run started from the constant φ_q(t₀).
pub fn construct_maximal(
    problem: &ProblemSpec,
    h: f64,
    stepper: &StepperConfig,
    cfg: &ConstructionConfig,
    output_times: &[f64],
    truncation_radii: Option<&[f64]>,
) -> Result<ConstructionResult, ConstructionError> {
    if !problem.lateral.is_zero() {
        return Err(ConstructionError::Invalid(
            "the maximal construction requires zero lateral data; use the lateral path".into(),
        ));
    }
    let full_grid = build_grid(&problem.domain, h)?;
    let margin = cfg.probe_margin_factor * problem.domain.diameter_scale();
    let probes_full = probe_nodes(&full_grid, margin);
    if probes_full.is_empty() {
        return Err(ConstructionError::Invalid("empty probe set on the full grid".into()));
    }

    let mut tables = Vec::new();
    let mut monitors = Monitors::default();
    let mut k_final = 0.0;

    let snapshots = if let DomainSpec::ExteriorOfBall { inner, truncation, .. } = problem.domain {
        let default_radii: Vec<f64> = {
            let mut v = Vec::new();
            let mut r = (2.0 * inner).min(truncation / 4.0).max(inner * 1.5);
            while r < truncation {
                v.push(r);
                r *= 2.0;
            }
            v.push(truncation);
            v
        };
        let radii: Vec<f64> = truncation_radii.map(|r| r.to_vec()).unwrap_or(default_radii);
        let plan = ExhaustionPlan::Truncation { radii: radii.clone() };
        plan.validate()?;
        let mut n_table = ConvergenceTable {
            axis: "radius".into(),
            declared_tol: cfg.n_tol,
            entries: Vec::new(),
        };
        // radius-continuation changes are judged on nodes compact in the
        // smallest member, where the receding truncation sphere converges
        let probes_n: Vec<usize> = {
            let dom0 = problem.domain.truncate(radii[0])?;
            let margin0 = cfg.probe_margin_factor * dom0.diameter_scale();
            full_grid
                .interior_nodes()
                .iter()
                .map(|&f| f as usize)
                .filter(|&f| {
                    let x = full_grid.position(f);
                    dom0.contains(&x) && dom0.boundary_distance(&x) >= margin0
                })
                .collect()
        };
        if probes_n.is_empty() {
            return Err(ConstructionError::Invalid(
                "probe set does not reach the smallest truncation member".into(),
            ));
        }
        let mut prev_ext: Option<Vec<Snapshot>> = None;
        for (i, &r) in radii.iter().enumerate() {
            let t0 = Instant::now();
            let dom_n = problem.domain.truncate(r)?;
            let grid_n = build_grid(&dom_n, h)?;
            let member_problem = ProblemSpec { domain: dom_n, ..problem.clone() };
            // small truncation members fall back to their own compact probes
            let member_probes = map_probes(&full_grid, &probes_full, &grid_n);
            let probe_arg = if member_probes.is_empty() { None } else { Some(&member_probes[..]) };
            let _ = i;
            let lim =
                blowup_limit(&grid_n, &member_problem, stepper, output_times, 0.0, cfg, probe_arg)?;
            monitors.merge(&lim.monitors);
            k_final = lim.k_final;
            let mut ktab = lim.table;
            ktab.axis = format!("k (radius {r})");
            tables.push(ktab);
            let ext: Vec<Snapshot> = lim
                .snapshots
                .iter()
                .map(|s| {
                    Ok(Snapshot {
                        requested_t: s.requested_t,
                        t: s.t,
                        field: extend_by_zero(&s.field, &full_grid)?,
                    })
                })
                .collect::<Result<_, GeometryError>>()?;
            if let Some(old) = &prev_ext {
                for (sn, so) in ext.iter().zip(old.iter()) {
                    let slack = 1e-10 * field_scale(&sn.field, &so.field);
                    if max_exceedance(&so.field, &sn.field) > slack {
                        return Err(ConstructionError::NonMonotone(format!(
                            "truncation member r={r} fell below its predecessor at t={}",
                            sn.t
                        )));
                    }
                }
                let change = sup_rel_diff(&ext, old, &probes_n);
                n_table.entries.push(ConvergenceEntry {
                    parameter: r,
                    sup_change: change,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                });
            } else {
                n_table.entries.push(ConvergenceEntry {
                    parameter: r,
                    sup_change: f64::INFINITY,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                });
            }
            prev_ext = Some(ext);
        }
        if radii.len() > 1 && !n_table.converged() {
            return Err(ConstructionError::NoConvergence(format!(
                "truncation table did not reach the declared tolerance {}: {:?}",
                cfg.n_tol,
                n_table.entries.last()
            )));
        }
        tables.push(n_table);
        prev_ext.unwrap_or_default()
    } else {
        let lim =
            blowup_limit(&full_grid, problem, stepper, output_times, 0.0, cfg, Some(&probes_full))?;
        monitors.merge(&lim.monitors);
        k_final = lim.k_final;
        tables.push(lim.table);
        lim.snapshots
    };

    // cap-data cross-check: start at t₀ from the spatial constant φ_q(t₀)
    let mut phi_dev = None;
    if let Some(t0) = cfg.phi_start_t0 {
        if t0 >= output_times[0] {
            return Err(ConstructionError::Invalid(
                "cap-data start time must precede the first output".into(),
            ));
        }
        let cap = phi_q(problem.q, t0);
        let u0 = Field::constant(&full_grid, cap);
        let traj = evolve(&u0, problem, stepper, output_times, t0)?;
        monitors.merge(&traj.monitors);
        phi_dev = Some(sup_rel_diff(&traj.snapshots, &snapshots, &probes_full));
    }

    Ok(ConstructionResult {
        label: "maximal-truncation".into(),
        grid: full_grid,
        snapshots,
        tables,
        monitors,
        k_final,
        phi_start_deviation: phi_dev,
        ab_discrepancy: None,
        barrier_violation: None,
    })
}

/// Lateral-data solution by two schedules. Schedule A fixes a start time τ,
/// takes k → ∞, and sends τ ↓ 0; member snapshots are anchored to the time
/// since blow-up, so the limit estimates the canonical blow-up-at-zero
/// object (and reduces to the maximal construction when f ≡ 0). Schedule B
/// is a direct large-k run on the absolute clock from a small start time.
pub fn construct_lateral(
    problem: &ProblemSpec,
    h: f64,
    stepper: &StepperConfig,
    cfg: &ConstructionConfig,
    output_times: &[f64],
) -> Result<ConstructionResult, ConstructionError> {
    if cfg.tau_list.is_empty() || cfg.tau_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConstructionError::Invalid(
            "schedule A needs a strictly decreasing, nonempty start-time list".into(),
        ));
    }
    if cfg.b_start <= 0.0 || cfg.b_start >= output_times[0] {
        return Err(ConstructionError::Invalid(
            "schedule B start time must lie in (0, first output)".into(),
        ));
    }
    let full_grid = build_grid(&problem.domain, h)?;
    let margin = cfg.probe_margin_factor * problem.domain.diameter_scale();
    let probes = probe_nodes(&full_grid, margin);
    if probes.is_empty() {
        return Err(ConstructionError::Invalid("empty probe set".into()));
    }

    let mut tables = Vec::new();
    let mut monitors = Monitors::default();
    let mut tau_table = ConvergenceTable {
        axis: "tau".into(),
        declared_tol: cfg.tau_tol,
        entries: Vec::new(),
    };
    let mut members: Option<Vec<Snapshot>> = None;
    let mut k_final = 0.0;
    for (i, &tau_s) in cfg.tau_list.iter().enumerate() {
        let t0 = Instant::now();
        // anchored output times: requested offsets after the blow-up time
        let abs_times: Vec<f64> = output_times.iter().map(|t| t + tau_s).collect();
        let lim =
            blowup_limit(&full_grid, problem, stepper, &abs_times, tau_s, cfg, Some(&probes))?;
        monitors.merge(&lim.monitors);
        k_final = lim.k_final;
        let mut ktab = lim.table;
        ktab.axis = format!("k (tau {tau_s})");
        tables.push(ktab);
        // relabel snapshots by time since blow-up
        let snaps: Vec<Snapshot> = lim
            .snapshots
            .into_iter()
            .zip(output_times)
            .map(|(s, &rt)| Snapshot { requested_t: rt, t: s.t - tau_s, field: s.field })
            .collect();
        if let Some(old) = &members {
            let change = sup_rel_diff(&snaps, old, &probes);
            tau_table.entries.push(ConvergenceEntry {
                parameter: tau_s,
                sup_change: change,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        } else {
            tau_table.entries.push(ConvergenceEntry {
                parameter: tau_s,
                sup_change: f64::INFINITY,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        let _ = i;
        members = Some(snaps);
    }
    if cfg.tau_list.len() > 1 && !tau_table.converged() {
        return Err(ConstructionError::NoConvergence(format!(
            "schedule A start-time continuation did not reach tolerance {}: {:?}",
            cfg.tau_tol,
            tau_table.entries.last()
        )));
    }
    tables.push(tau_table);
    let schedule_a = members.unwrap();

    // schedule B: absolute clock from a small positive start time
    let lim_b =
        blowup_limit(&full_grid, problem, stepper, output_times, cfg.b_start, cfg, Some(&probes))?;
    monitors.merge(&lim_b.monitors);
    let mut btab = lim_b.table;
    btab.axis = format!("k (direct, start {})", cfg.b_start);
    tables.push(btab);

    let ab = sup_rel_diff(&schedule_a, &lim_b.snapshots, &probes);
    if ab > cfg.ab_tol {
        return Err(ConstructionError::SchedulesDisagree(format!(
            "schedules A and B differ by {ab:.4} > {} at the probes; refine the run",
            cfg.ab_tol
        )));
    }

    // barrier: a finite-k lateral run is dominated nodewise by the sum of
    // the zero-data run from the same k and the zero-initial lateral run
    let tau_last = *cfg.tau_list.last().unwrap();
    let abs_times: Vec<f64> = output_times.iter().map(|t| t + tau_last).collect();
    let k = k_final;
    let zero_lateral = ProblemSpec { lateral: LateralData::Zero, ..problem.clone() };
    let run_kf =
        evolve_from_constant(&full_grid, problem, stepper, &abs_times, tau_last, k)?.snapshots;
    let run_k0 =
        evolve_from_constant(&full_grid, &zero_lateral, stepper, &abs_times, tau_last, k)?.snapshots;
    let run_0f =
        evolve_from_constant(&full_grid, problem, stepper, &abs_times, tau_last, 0.0)?.snapshots;
    let mut barrier = f64::NEG_INFINITY;
    for ((kf, k0), zf) in run_kf.iter().zip(&run_k0).zip(&run_0f) {
        let scale = 1.0 + kf.field.max_interior().abs();
        for &fl in full_grid.interior_nodes() {
            let lhs = kf.field.values()[fl as usize];
            let rhs = k0.field.values()[fl as usize] + zf.field.values()[fl as usize];
            barrier = barrier.max((lhs - rhs) / scale);
        }
    }

    Ok(ConstructionResult {
        label: "lateral-data".into(),
        grid: full_grid,
        snapshots: schedule_a,
        tables,
        monitors,
        k_final,
        phi_start_deviation: None,
        ab_discrepancy: Some(ab),
        barrier_violation: Some(barrier),
    })
}

/// Stationary solve −Δw + |w|^{q−1}w = 0 with fixed Dirichlet data by damped
/// Newton. Used directly for moderate boundary data (the long-time oracle)
/// and as the inner solve of the boundary-blow-up continuation.
pub fn elliptic_solve(
    grid: &Arc<Grid>,
    q: f64,
    boundary_value: f64,
    init: Option<&Field>,
    cfg: &EllipticConfig,
) -> Result<Field, ConstructionError> {
    let n = grid.interior_nodes().len();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut bdry_term = vec![0.0; n];
    for (r, &fl) in grid.interior_nodes().iter().enumerate() {
        let flat = fl as usize;
        let mut acc = 0.0;
        for ax in 0..grid.dim {
            for st in [-1i64, 1] {
                let nb = grid.neighbor(flat, ax, st).expect("stencil neighbor");
                if grid.class(nb) == NodeClass::Dirichlet {
                    acc += boundary_value;
                }
            }
        }
        bdry_term[r] = acc * inv_h2;
    }
    let mut w: Vec<f64> = match init {
        Some(f) => grid.interior_nodes().iter().map(|&i| f.values()[i as usize]).collect(),
        None => vec![0.0; n],
    };
    let residual = |x: &[f64], g_out: &mut [f64]| {
        for (r, &fl) in grid.interior_nodes().iter().enumerate() {
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
            g_out[r] = lap_acc * inv_h2 - bdry_term[r] + signed_power(c, q);
        }
    };
    let mut g = vec![0.0; n];
    residual(&w, &mut g);
    let mut g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let converged = |x: &[f64], g: &[f64]| -> bool {
        let base = 2.0 * grid.dim as f64 * inv_h2;
        g.iter().zip(x).all(|(&gi, &xi)| {
            let diag = base + signed_power_deriv(xi, q);
            gi.abs() <= cfg.newton_abs_tol + cfg.newton_rel_tol * diag * (1.0 + xi.abs())
        })
    };
    let mut iters = 0;
    while !converged(&w, &g) {
        if iters >= cfg.max_newton_iters {
            return Err(ConstructionError::Operator(OperatorError::NewtonDivergence(format!(
                "stationary solve stalled at residual {g_norm:e}"
            ))));
        }
        let extra: Vec<f64> = w.iter().map(|&u| signed_power_deriv(u, q)).collect();
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = if grid.dim == 1 && !grid.periodic {
            // reuse the shifted solve with zero mass: (−Δ + diag) δ = −G
            crate::operators::solve_tridiagonal_pub(grid, 0.0, 1.0, &extra, &neg_g)
        } else {
            let action = ShiftedLaplacian { grid, mass: 0.0, tau: 1.0, extra_diag: &extra };
            solve_linear(&action, &neg_g, cfg.linear_tol, cfg.max_linear_iters)?
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut w_try = vec![0.0; n];
        let mut g_try = vec![0.0; n];
        for _ in 0..40 {
            for i in 0..n {
                w_try[i] = w[i] + alpha * delta[i];
            }
            residual(&w_try, &mut g_try);
            let g_try_norm = g_try.iter().map(|v| v * v).sum::<f64>().sqrt();
            if g_try_norm < g_norm {
                w.copy_from_slice(&w_try);
                g.copy_from_slice(&g_try);
                g_norm = g_try_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(ConstructionError::Operator(OperatorError::NewtonDivergence(format!(
                "stationary line search stalled at residual {g_norm:e}"
            ))));
        }
        iters += 1;
    }
    let mut out = Field::zeros(grid);
    for (r, &fl) in grid.interior_nodes().iter().enumerate() {
        out.values_mut()[fl as usize] = w[r];
    }
    for (idx, &fl) in grid.dirichlet_nodes().iter().enumerate() {
        let _ = idx;
        out.values_mut()[fl as usize] = boundary_value;
    }
    Ok(out)
}

/// Max-norm of the stationary residual −Δ_h w + |w|^{q−1}w at interior nodes,
/// with the given boundary value at Dirichlet neighbors.
pub fn elliptic_residual_inf(w: &Field, q: f64, boundary_value: f64) -> f64 {
    let grid = w.grid();
    let bvals = vec![boundary_value; grid.dirichlet_nodes().len()];
    let op = StencilOperator::new(grid.clone(), bvals);
    let lap = op.apply_laplacian(w).expect("same grid");
    grid.interior_nodes()
        .iter()
        .map(|&fl| {
            let i = fl as usize;
            (-lap.values()[i] + signed_power(w.values()[i], q)).abs()
        })
        .fold(0.0, f64::max)
}

/// Boundary-blow-up barrier: the k → ∞ continuation of stationary solves
/// with boundary data k. At fixed spacing the nodal k-limit diverges
/// logarithmically through the first few boundary layers, so the
/// continuation stops at the matched k where the monitor-shell increments
/// (depth 4h–8h) switch from geometric deficit decay to the slow creep
/// regime; the core has stalled long before.
pub fn solve_elliptic_maximal(
    radius: f64,
    q: f64,
    grid: &Arc<Grid>,
    cfg: &EllipticConfig,
) -> Result<(Field, ConvergenceTable), ConstructionError> {
    let h = grid.h;
    if radius <= 0.0 {
        return Err(ConstructionError::Invalid("radius must be positive".into()));
    }
    let shell: Vec<usize> = grid
        .interior_nodes()
        .iter()
        .map(|&f| f as usize)
        .filter(|&f| {
            let d = grid.domain.boundary_distance(&grid.position(f));
            d >= 4.0 * h - 1e-12 && d <= 8.0 * h + 1e-12
        })
        .collect();
    if shell.is_empty() {
        return Err(ConstructionError::Invalid(
            "grid too coarse: no interior nodes in the matched-k monitor shell".into(),
        ));
    }
    let mut table = ConvergenceTable {
        axis: "k".into(),
        declared_tol: 2.0 * cfg.arm_threshold,
        entries: Vec::new(),
    };
    let mut w = Field::zeros(grid);
    let mut k = cfg.k_start;
    let mut prev_shell: Option<Vec<f64>> = None;
    let mut prev_delta: Option<f64> = None;
    for _ in 0..cfg.max_doublings {
        let t0 = Instant::now();
        w = elliptic_solve(grid, q, k, Some(&w), cfg)?;
        let cur: Vec<f64> = shell.iter().map(|&f| w.values()[f]).collect();
        if let Some(old) = &prev_shell {
            let delta = cur
                .iter()
                .zip(old)
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-30))
                .fold(0.0, f64::max);
            table.entries.push(ConvergenceEntry {
                parameter: k,
                sup_change: delta,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
            if delta < cfg.hard_tol {
                return Ok((w, table));
            }
            if let Some(dp) = prev_delta {
                if dp < cfg.arm_threshold && delta / dp > cfg.ratio_stop {
                    return Ok((w, table));
                }
            }
            prev_delta = Some(delta);
        } else {
            table.entries.push(ConvergenceEntry {
                parameter: k,
                sup_change: f64::INFINITY,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        prev_shell = Some(cur);
        k *= 2.0;
    }
    Err(ConstructionError::NoConvergence(format!(
        "doubling k still moves the monitor shell after {} doublings",
        cfg.max_doublings
    )))
}

/// Least-squares fit of log W against log(depth) at the given depths, sampled
/// on the coordinate axes. Returns (exponent, constant).
pub fn fit_boundary_asymptote(
    w: &Field,
    radius: f64,
    q: f64,
    depths: &[f64],
) -> Result<(f64, f64), ConstructionError> {
    let _ = q;
    let grid = w.grid();
    let h = grid.h;
    let usable: Vec<f64> = depths
        .iter()
        .copied()
        .filter(|&d| d >= 8.0 * h - 1e-12 && d <= radius / 4.0 + 1e-12)
        .collect();
    if usable.len() < 4 {
        return Err(ConstructionError::InsufficientSamples(format!(
            "need at least 4 sample depths in [8h, R/4] = [{:.3e}, {:.3e}], have {}",
            8.0 * h,
            radius / 4.0,
            usable.len()
        )));
    }
    let mut pts = Vec::new();
    for &d in &usable {
        let r = radius - d;
        let mut acc = 0.0;
        let mut count = 0;
        let candidates: Vec<[f64; 2]> = if grid.dim == 1 {
            vec![[r, 0.0], [-r, 0.0]]
        } else {
            vec![[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]]
        };
        for c in candidates {
            if let Some(flat) = grid.node_at(&c) {
                let p = grid.position(flat);
                let close = (p[0] - c[0]).abs() <= 1e-9 * h.max(1.0)
                    && (p[1] - c[1]).abs() <= 1e-9 * h.max(1.0);
                if close && grid.class(flat) == NodeClass::Interior && w.values()[flat] > 0.0 {
                    acc += w.values()[flat];
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(ConstructionError::InsufficientSamples(format!(
                "no interior axis node at depth {d}"
            )));
        }
        pts.push((d.ln(), (acc / count as f64).ln()));
    }
    // least squares on y = intercept + slope·x
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept.exp()))
}

#[derive(Clone, Debug)]
pub struct InitialFit {
    /// max over probes of |t^{1/(q−1)} u − c_q| / c_q at the smallest time
    pub deviation: f64,
    /// (t, deviation) over the supplied small-time snapshots
    pub trend: Vec<(f64, f64)>,
    /// deviations shrink toward small t inside the resolved window
    pub trend_monotone: bool,
}

/// Initial-layer amplitude check: t^{1/(q−1)} u(x, t) → c_q on compact probe
/// sets. `snapshots` must be ordered by time, smallest first, and resolved
/// (smallest time at least 10 τ₀).
pub fn fit_initial_asymptote(
    snapshots: &[Snapshot],
    q: f64,
    probes: &[usize],
    tau0: f64,
) -> Result<InitialFit, ConstructionError> {
    if snapshots.is_empty() || probes.is_empty() {
        return Err(ConstructionError::InsufficientSamples(
            "need snapshots and a nonempty probe set".into(),
        ));
    }
    let t_min = snapshots[0].t;
    if t_min < 10.0 * tau0 {
        return Err(ConstructionError::UnresolvedLayer(format!(
            "smallest time {t_min:e} is below 10·τ₀ = {:e}",
            10.0 * tau0
        )));
    }
    let cq = crate::semigroup::c_q(q);
    let mut trend = Vec::new();
    for s in snapshots {
        let mut dev = 0.0_f64;
        let factor = s.t.powf(1.0 / (q - 1.0));
        for &p in probes {
            let v = factor * s.field.values()[p];
            dev = dev.max((v - cq).abs() / cq);
        }
        trend.push((s.t, dev));
    }
    let trend_monotone = trend.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12);
    Ok(InitialFit { deviation: trend[0].1, trend, trend_monotone })
}

/// Flat-boundary balance constant: C_q with C_q^{q−1} = 2(q+1)/(q−1)², the
/// amplitude of the boundary asymptote C_q·depth^{−2/(q−1)}.
pub fn ko_constant(q: f64) -> f64 {
    (2.0 * (q + 1.0) / ((q - 1.0) * (q - 1.0))).powf(1.0 / (q - 1.0))
}

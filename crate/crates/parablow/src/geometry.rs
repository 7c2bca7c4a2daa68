//! Domain descriptions, uniform-grid discretization with node classification,
//! and the exhaustion/truncation sequences used by the limit constructions.
//!
//! All grids live on the global lattice `{ i*h : i ∈ ℤ }^dim`, so grids with
//! the same spacing embed into each other exactly. Nodes are classified as
//! interior (strictly inside the domain), Dirichlet (outside or on the
//! boundary, but lattice-adjacent to an interior node) or exterior. Fields
//! carry one value per stored node; exterior nodes hold the sentinel 0, which
//! is the extension-by-zero convention used throughout.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("infeasible resolution: {0}")]
    InfeasibleResolution(String),
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),
    #[error("exhaustion index {index} out of range (count {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid exhaustion plan: {0}")]
    InvalidPlan(String),
}

/// Symbolic description of the spatial domain. Every kind has a compact
/// boundary; exterior domains carry an explicit truncation radius at which a
/// homogeneous Dirichlet condition stands in for decay at infinity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Ball { radius: f64, dim: usize },
    Annulus { inner: f64, outer: f64, dim: usize },
    ExteriorOfBall { inner: f64, truncation: f64, dim: usize },
    RectangleWithHole { half_width: f64, half_height: f64, hole_radius: f64 },
}

fn norm2(x: &[f64; 2], dim: usize) -> f64 {
    if dim == 1 {
        x[0].abs()
    } else {
        x[0].hypot(x[1])
    }
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            DomainSpec::Ball { dim, .. }
            | DomainSpec::Annulus { dim, .. }
            | DomainSpec::ExteriorOfBall { dim, .. } => *dim,
            DomainSpec::RectangleWithHole { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidDomain(m));
        match *self {
            DomainSpec::Interval { a, b } => {
                if !(a < b) {
                    return bad(format!("interval requires a < b, got [{a}, {b}]"));
                }
            }
            DomainSpec::Ball { radius, dim } => {
                if radius <= 0.0 {
                    return bad(format!("ball radius must be positive, got {radius}"));
                }
                if dim != 1 && dim != 2 {
                    return Err(GeometryError::UnsupportedDomain(format!(
                        "ball supports dim 1 or 2, got {dim}"
                    )));
                }
            }
            DomainSpec::Annulus { inner, outer, dim } => {
                if !(0.0 < inner && inner < outer) {
                    return bad(format!("annulus requires 0 < inner < outer, got ({inner}, {outer})"));
                }
                if dim != 1 && dim != 2 {
                    return Err(GeometryError::UnsupportedDomain(format!(
                        "annulus supports dim 1 or 2, got {dim}"
                    )));
                }
            }
            DomainSpec::ExteriorOfBall { inner, truncation, dim } => {
                // the complement ball must sit strictly inside the truncation radius
                if !(0.0 < inner && inner < truncation) {
                    return bad(format!(
                        "exterior-of-ball requires 0 < inner < truncation, got ({inner}, {truncation})"
                    ));
                }
                if dim != 1 && dim != 2 {
                    return Err(GeometryError::UnsupportedDomain(format!(
                        "exterior-of-ball supports dim 1 or 2, got {dim}"
                    )));
                }
            }
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                if !(half_width > 0.0 && half_height > 0.0 && hole_radius > 0.0) {
                    return bad("rectangle-with-hole requires positive extents".into());
                }
                if hole_radius >= half_width.min(half_height) {
                    return bad(format!(
                        "hole radius {hole_radius} must be smaller than the rectangle half-extents"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Strict interior membership.
    pub fn contains(&self, x: &[f64; 2]) -> bool {
        match *self {
            DomainSpec::Interval { a, b } => a < x[0] && x[0] < b,
            DomainSpec::Ball { radius, dim } => norm2(x, dim) < radius,
            DomainSpec::Annulus { inner, outer, dim } => {
                let r = norm2(x, dim);
                inner < r && r < outer
            }
            DomainSpec::ExteriorOfBall { inner, truncation, dim } => {
                let r = norm2(x, dim);
                inner < r && r < truncation
            }
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                x[0].abs() < half_width
                    && x[1].abs() < half_height
                    && x[0].hypot(x[1]) > hole_radius
            }
        }
    }

    /// Distance to the boundary of the computational domain (truncation
    /// spheres included for exterior kinds).
    pub fn boundary_distance(&self, x: &[f64; 2]) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => (x[0] - a).abs().min((b - x[0]).abs()),
            DomainSpec::Ball { radius, dim } => (radius - norm2(x, dim)).abs(),
            DomainSpec::Annulus { inner, outer, dim }
            | DomainSpec::ExteriorOfBall { inner, truncation: outer, dim } => {
                let r = norm2(x, dim);
                (r - inner).abs().min((outer - r).abs())
            }
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                let dx = (half_width - x[0].abs()).abs();
                let dy = (half_height - x[1].abs()).abs();
                let dh = (x[0].hypot(x[1]) - hole_radius).abs();
                dx.min(dy).min(dh)
            }
        }
    }

    /// Nearest point of the boundary, used to evaluate lateral data at a
    /// Dirichlet node (first-order boundary fitting).
    pub fn boundary_trace(&self, x: &[f64; 2]) -> [f64; 2] {
        match *self {
            DomainSpec::Interval { a, b } => {
                if (x[0] - a).abs() <= (b - x[0]).abs() {
                    [a, 0.0]
                } else {
                    [b, 0.0]
                }
            }
            DomainSpec::Ball { radius, dim } => project_to_sphere(x, radius, dim),
            DomainSpec::Annulus { inner, outer, dim }
            | DomainSpec::ExteriorOfBall { inner, truncation: outer, dim } => {
                let r = norm2(x, dim);
                let target = if (r - inner).abs() <= (outer - r).abs() { inner } else { outer };
                project_to_sphere(x, target, dim)
            }
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                let dx = (half_width - x[0].abs()).abs();
                let dy = (half_height - x[1].abs()).abs();
                let dh = (x[0].hypot(x[1]) - hole_radius).abs();
                if dh <= dx.min(dy) {
                    project_to_sphere(x, hole_radius, 2)
                } else if dx <= dy {
                    [half_width.copysign(x[0]), x[1].clamp(-half_height, half_height)]
                } else {
                    [x[0].clamp(-half_width, half_width), half_height.copysign(x[1])]
                }
            }
        }
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            DomainSpec::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            DomainSpec::Ball { radius, dim } => {
                if dim == 1 {
                    ([-radius, 0.0], [radius, 0.0])
                } else {
                    ([-radius, -radius], [radius, radius])
                }
            }
            DomainSpec::Annulus { outer, dim, .. }
            | DomainSpec::ExteriorOfBall { truncation: outer, dim, .. } => {
                if dim == 1 {
                    ([-outer, 0.0], [outer, 0.0])
                } else {
                    ([-outer, -outer], [outer, outer])
                }
            }
            DomainSpec::RectangleWithHole { half_width, half_height, .. } => {
                ([-half_width, -half_height], [half_width, half_height])
            }
        }
    }

    /// Thinnest geometric feature; the grid spacing must resolve it.
    pub fn thinnest_feature(&self) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => b - a,
            DomainSpec::Ball { radius, .. } => radius,
            DomainSpec::Annulus { inner, outer, .. }
            | DomainSpec::ExteriorOfBall { inner, truncation: outer, .. } => outer - inner,
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                half_width.min(half_height) - hole_radius
            }
        }
    }

    /// Characteristic diameter used to size compact probe sets.
    pub fn diameter_scale(&self) -> f64 {
        match *self {
            DomainSpec::Interval { a, b } => b - a,
            DomainSpec::Ball { radius, .. } => 2.0 * radius,
            DomainSpec::Annulus { inner, outer, .. }
            | DomainSpec::ExteriorOfBall { inner, truncation: outer, .. } => outer - inner,
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                2.0 * (half_width.min(half_height) - hole_radius)
            }
        }
    }

    /// Inward offset by `margin`, the interior-exhaustion member shape.
    pub fn shrink(&self, margin: f64) -> Result<DomainSpec, GeometryError> {
        if margin <= 0.0 {
            return Err(GeometryError::InvalidPlan(format!("margin must be positive, got {margin}")));
        }
        let out = match *self {
            DomainSpec::Interval { a, b } => DomainSpec::Interval { a: a + margin, b: b - margin },
            DomainSpec::Ball { radius, dim } => DomainSpec::Ball { radius: radius - margin, dim },
            DomainSpec::Annulus { inner, outer, dim } => {
                DomainSpec::Annulus { inner: inner + margin, outer: outer - margin, dim }
            }
            // exterior domains exhaust through bounded annular shells
            DomainSpec::ExteriorOfBall { inner, truncation, dim } => {
                DomainSpec::Annulus { inner: inner + margin, outer: truncation - margin, dim }
            }
            DomainSpec::RectangleWithHole { half_width, half_height, hole_radius } => {
                DomainSpec::RectangleWithHole {
                    half_width: half_width - margin,
                    half_height: half_height - margin,
                    hole_radius: hole_radius + margin,
                }
            }
        };
        out.validate()?;
        Ok(out)
    }

    /// Intersection with the ball of the given radius.
    pub fn truncate(&self, radius: f64) -> Result<DomainSpec, GeometryError> {
        let out = match *self {
            DomainSpec::ExteriorOfBall { inner, truncation, dim } => DomainSpec::Annulus {
                inner,
                outer: radius.min(truncation),
                dim,
            },
            DomainSpec::Ball { radius: r, dim } => DomainSpec::Ball { radius: r.min(radius), dim },
            DomainSpec::Interval { a, b } => {
                DomainSpec::Interval { a: a.max(-radius), b: b.min(radius) }
            }
            DomainSpec::Annulus { inner, outer, dim } => {
                DomainSpec::Annulus { inner, outer: outer.min(radius), dim }
            }
            _ => {
                return Err(GeometryError::UnsupportedDomain(
                    "truncation is only defined for radially bounded kinds".into(),
                ))
            }
        };
        out.validate()?;
        Ok(out)
    }
}

fn project_to_sphere(x: &[f64; 2], radius: f64, dim: usize) -> [f64; 2] {
    if dim == 1 {
        [radius.copysign(x[0]), 0.0]
    } else {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            [radius, 0.0]
        } else {
            [x[0] * radius / r, x[1] * radius / r]
        }
    }
}

/// Increasing family of subdomains used by the limit constructions:
/// `Interior` shrinks the domain inward by a decreasing margin sequence,
/// `Truncation` intersects with balls of increasing radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExhaustionPlan {
    Interior { margins: Vec<f64> },
    Truncation { radii: Vec<f64> },
}

impl ExhaustionPlan {
    pub fn count(&self) -> usize {
        match self {
            ExhaustionPlan::Interior { margins } => margins.len(),
            ExhaustionPlan::Truncation { radii } => radii.len(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            ExhaustionPlan::Interior { margins } => {
                if margins.is_empty() {
                    return Err(GeometryError::InvalidPlan("empty margin sequence".into()));
                }
                if margins.windows(2).any(|w| w[1] >= w[0]) || margins.iter().any(|&m| m <= 0.0) {
                    return Err(GeometryError::InvalidPlan(
                        "margins must be positive and strictly decreasing".into(),
                    ));
                }
            }
            ExhaustionPlan::Truncation { radii } => {
                if radii.is_empty() {
                    return Err(GeometryError::InvalidPlan("empty radius sequence".into()));
                }
                if radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|&r| r <= 0.0) {
                    return Err(GeometryError::InvalidPlan(
                        "radii must be positive and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The `m`-th member of the exhaustion family.
pub fn exhaustion(
    domain: &DomainSpec,
    plan: &ExhaustionPlan,
    m: usize,
) -> Result<DomainSpec, GeometryError> {
    plan.validate()?;
    if m >= plan.count() {
        return Err(GeometryError::IndexOutOfRange { index: m, count: plan.count() });
    }
    match plan {
        ExhaustionPlan::Interior { margins } => domain.shrink(margins[m]),
        ExhaustionPlan::Truncation { radii } => domain.truncate(radii[m]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Dirichlet,
    Exterior,
}

/// Uniform tensor mesh over the bounding box of a domain, with an
/// interior/Dirichlet/exterior mask. Node positions are exact lattice
/// multiples of `h`, shared across all grids of the same spacing.
#[derive(Debug)]
pub struct Grid {
    pub domain: DomainSpec,
    pub h: f64,
    pub dim: usize,
    pub periodic: bool,
    base: [i64; 2],
    shape: [usize; 2],
    mask: Vec<NodeClass>,
    interior: Vec<u32>,
    rank: Vec<i32>,
    dirichlet: Vec<u32>,
    trace: Vec<[f64; 2]>,
}

impl Grid {
    pub fn n_nodes(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn class(&self, flat: usize) -> NodeClass {
        self.mask[flat]
    }

    pub fn interior_nodes(&self) -> &[u32] {
        &self.interior
    }

    pub fn dirichlet_nodes(&self) -> &[u32] {
        &self.dirichlet
    }

    /// Rank of a node among interior nodes, or -1.
    pub fn rank(&self, flat: usize) -> i32 {
        self.rank[flat]
    }

    /// Nearest boundary point for the i-th Dirichlet node (parallel to
    /// `dirichlet_nodes`).
    pub fn trace_point(&self, dirichlet_index: usize) -> [f64; 2] {
        self.trace[dirichlet_index]
    }

    pub fn lattice_of(&self, flat: usize) -> [i64; 2] {
        let i = (flat % self.shape[0]) as i64;
        let j = (flat / self.shape[0]) as i64;
        [self.base[0] + i, self.base[1] + j]
    }

    pub fn position(&self, flat: usize) -> [f64; 2] {
        let l = self.lattice_of(flat);
        [l[0] as f64 * self.h, l[1] as f64 * self.h]
    }

    /// Flat index of the node with the given global lattice coordinates.
    pub fn find_lattice(&self, lat: [i64; 2]) -> Option<usize> {
        let i = lat[0] - self.base[0];
        let j = lat[1] - self.base[1];
        if i < 0 || j < 0 || i >= self.shape[0] as i64 || j >= self.shape[1] as i64 {
            return None;
        }
        Some(i as usize + self.shape[0] * j as usize)
    }

    /// Node nearest to the given position, if it is stored.
    pub fn node_at(&self, x: &[f64; 2]) -> Option<usize> {
        let li = (x[0] / self.h).round() as i64;
        let lj = if self.dim == 2 { (x[1] / self.h).round() as i64 } else { self.base[1] };
        self.find_lattice([li, lj])
    }

    /// Neighbor along an axis; periodic grids wrap.
    pub fn neighbor(&self, flat: usize, axis: usize, step: i64) -> Option<usize> {
        let i = (flat % self.shape[0]) as i64;
        let j = (flat / self.shape[0]) as i64;
        let (mut ni, mut nj) = if axis == 0 { (i + step, j) } else { (i, j + step) };
        if self.periodic {
            let n = if axis == 0 { self.shape[0] as i64 } else { self.shape[1] as i64 };
            if axis == 0 {
                ni = ni.rem_euclid(n);
            } else {
                nj = nj.rem_euclid(n);
            }
        }
        if ni < 0 || nj < 0 || ni >= self.shape[0] as i64 || nj >= self.shape[1] as i64 {
            return None;
        }
        Some(ni as usize + self.shape[0] * nj as usize)
    }

    /// Quadrature weight of one node.
    pub fn cell_weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
}

/// Build the masked grid for a domain. Fails when the spacing cannot resolve
/// the thinnest feature or no interior node exists.
pub fn build_grid(domain: &DomainSpec, h: f64) -> Result<Arc<Grid>, GeometryError> {
    domain.validate()?;
    if h <= 0.0 {
        return Err(GeometryError::InfeasibleResolution(format!("spacing must be positive, got {h}")));
    }
    if h > domain.thinnest_feature() {
        return Err(GeometryError::InfeasibleResolution(format!(
            "spacing {h} exceeds the thinnest feature {} of {domain:?}",
            domain.thinnest_feature()
        )));
    }
    let dim = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let mut base = [0i64; 2];
    let mut shape = [1usize; 2];
    for ax in 0..dim {
        let lo_i = (lo[ax] / h).floor() as i64 - 1;
        let hi_i = (hi[ax] / h).ceil() as i64 + 1;
        base[ax] = lo_i;
        shape[ax] = (hi_i - lo_i + 1) as usize;
    }
    let n = shape[0] * shape[1];
    let mut mask = vec![NodeClass::Exterior; n];
    let mut interior = Vec::new();
    let pos = |flat: usize| -> [f64; 2] {
        let i = (flat % shape[0]) as i64;
        let j = (flat / shape[0]) as i64;
        [(base[0] + i) as f64 * h, if dim == 2 { (base[1] + j) as f64 * h } else { 0.0 }]
    };
    for flat in 0..n {
        if domain.contains(&pos(flat)) {
            mask[flat] = NodeClass::Interior;
            interior.push(flat as u32);
        }
    }
    if interior.is_empty() {
        return Err(GeometryError::InfeasibleResolution(format!(
            "no interior node fits in {domain:?} at spacing {h}"
        )));
    }
    // Dirichlet nodes: non-interior lattice neighbors of interior nodes.
    let mut dirichlet = Vec::new();
    let mut trace = Vec::new();
    for &fl in &interior {
        let flat = fl as usize;
        let i = (flat % shape[0]) as i64;
        let j = (flat / shape[0]) as i64;
        for ax in 0..dim {
            for step in [-1i64, 1] {
                let (ni, nj) = if ax == 0 { (i + step, j) } else { (i, j + step) };
                if ni < 0 || nj < 0 || ni >= shape[0] as i64 || nj >= shape[1] as i64 {
                    return Err(GeometryError::InfeasibleResolution(
                        "interior node at the box edge; bounding box too tight".into(),
                    ));
                }
                let nf = ni as usize + shape[0] * nj as usize;
                if mask[nf] == NodeClass::Exterior {
                    mask[nf] = NodeClass::Dirichlet;
                }
            }
        }
    }
    for (flat, class) in mask.iter().enumerate() {
        if *class == NodeClass::Dirichlet {
            dirichlet.push(flat as u32);
            trace.push(domain.boundary_trace(&pos(flat)));
        }
    }
    let mut rank = vec![-1i32; n];
    for (r, &fl) in interior.iter().enumerate() {
        rank[fl as usize] = r as i32;
    }
    Ok(Arc::new(Grid {
        domain: domain.clone(),
        h,
        dim,
        periodic: false,
        base,
        shape,
        mask,
        interior,
        rank,
        dirichlet,
        trace,
    }))
}

/// Periodic interval grid with no boundary nodes; exists for the
/// spatially-constant semigroup oracles.
pub fn build_periodic_grid(a: f64, b: f64, h: f64) -> Result<Arc<Grid>, GeometryError> {
    if !(a < b) || h <= 0.0 {
        return Err(GeometryError::InvalidDomain(format!("bad periodic interval [{a}, {b}], h={h}")));
    }
    let n = ((b - a) / h).round();
    if ((b - a) / h - n).abs() > 1e-9 || n < 2.0 {
        return Err(GeometryError::InfeasibleResolution(format!(
            "periodic interval length {} is not an integer multiple of h={h}",
            b - a
        )));
    }
    let n = n as usize;
    let base = [(a / h).round() as i64, 0];
    let mask = vec![NodeClass::Interior; n];
    let interior: Vec<u32> = (0..n as u32).collect();
    let rank: Vec<i32> = (0..n as i32).collect();
    Ok(Arc::new(Grid {
        domain: DomainSpec::Interval { a, b },
        h,
        dim: 1,
        periodic: true,
        base,
        shape: [n, 1],
        mask,
        interior,
        rank,
        dirichlet: Vec::new(),
        trace: Vec::new(),
    }))
}

/// One real value per grid node; exterior nodes always hold 0.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field { grid: grid.clone(), values: vec![0.0; grid.n_nodes()] }
    }

    /// Constant value at interior nodes, zero elsewhere.
    pub fn constant(grid: &Arc<Grid>, c: f64) -> Field {
        let mut f = Field::zeros(grid);
        for &i in grid.interior_nodes() {
            f.values[i as usize] = c;
        }
        f
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_dirichlet_values(&mut self, values: &[f64]) {
        for (idx, &fl) in self.grid.dirichlet_nodes().iter().enumerate() {
            self.values[fl as usize] = values[idx];
        }
    }

    /// Weighted L² norm over interior nodes.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.cell_weight();
        let s: f64 = self
            .grid
            .interior_nodes()
            .iter()
            .map(|&i| {
                let v = self.values[i as usize];
                v * v
            })
            .sum();
        (s * w).sqrt()
    }

    pub fn max_interior(&self) -> f64 {
        self.grid
            .interior_nodes()
            .iter()
            .map(|&i| self.values[i as usize])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_interior(&self) -> f64 {
        self.grid
            .interior_nodes()
            .iter()
            .map(|&i| self.values[i as usize])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Copy a field onto a larger grid of the same spacing, zero outside.
pub fn extend_by_zero(u: &Field, target: &Arc<Grid>) -> Result<Field, GeometryError> {
    let sub = u.grid();
    if (sub.h - target.h).abs() > 1e-12 * target.h {
        return Err(GeometryError::IncompatibleGrids(format!(
            "spacings are not nested: {} vs {}",
            sub.h, target.h
        )));
    }
    if sub.periodic || target.periodic {
        return Err(GeometryError::IncompatibleGrids("cannot extend periodic grids".into()));
    }
    let mut out = Field::zeros(target);
    for &fl in sub.interior_nodes() {
        let lat = sub.lattice_of(fl as usize);
        let tgt = target.find_lattice(lat).ok_or_else(|| {
            GeometryError::IncompatibleGrids("sub-grid interior node missing from target".into())
        })?;
        out.values_mut()[tgt] = u.values()[fl as usize];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positions(grid: &Grid, class: NodeClass) -> Vec<[f64; 2]> {
        (0..grid.n_nodes())
            .filter(|&i| grid.class(i) == class)
            .map(|i| grid.position(i))
            .collect()
    }

    #[test]
    fn interval_grid_h_half() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let g = build_grid(&dom, 0.5).unwrap();
        let mut xs: Vec<f64> = positions(&g, NodeClass::Interior).iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-0.5, 0.0, 0.5]);
        let mut bs: Vec<f64> = positions(&g, NodeClass::Dirichlet).iter().map(|p| p[0]).collect();
        bs.sort_by(f64::total_cmp);
        assert_eq!(bs, vec![-1.0, 1.0]);
    }

    #[test]
    fn ball_2d_mask_matches_lattice_enumeration() {
        let dom = DomainSpec::Ball { radius: 1.0, dim: 2 };
        let g = build_grid(&dom, 0.5).unwrap();
        // oracle: enumerate lattice nodes and compare |x| to 1
        let mut expect_interior = Vec::new();
        for i in -4i64..=4 {
            for j in -4i64..=4 {
                let x = [i as f64 * 0.5, j as f64 * 0.5];
                if x[0].hypot(x[1]) < 1.0 {
                    expect_interior.push(x);
                }
            }
        }
        let got = positions(&g, NodeClass::Interior);
        assert_eq!(got.len(), expect_interior.len());
        for p in expect_interior {
            assert!(got.iter().any(|q| q[0] == p[0] && q[1] == p[1]), "missing interior {p:?}");
        }
        // every Dirichlet node is a lattice neighbor of an interior node and
        // sits within h*sqrt(2) of the circle
        for (idx, &fl) in g.dirichlet_nodes().iter().enumerate() {
            let p = g.position(fl as usize);
            let d = dom.boundary_distance(&p);
            assert!(d <= 0.5 * 2.0f64.sqrt() + 1e-12, "dirichlet node too far: {p:?} d={d}");
            let t = g.trace_point(idx);
            assert!((t[0].hypot(t[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_coarse_interval_errors() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        match build_grid(&dom, 3.0) {
            Err(GeometryError::InfeasibleResolution(_)) => {}
            other => panic!("expected infeasible-resolution, got {other:?}"),
        }
    }

    #[test]
    fn interior_stencil_closure() {
        for dom in [
            DomainSpec::Ball { radius: 1.0, dim: 2 },
            DomainSpec::Annulus { inner: 0.4, outer: 1.0, dim: 2 },
            DomainSpec::RectangleWithHole { half_width: 1.0, half_height: 0.8, hole_radius: 0.3 },
        ] {
            let g = build_grid(&dom, 1.0 / 16.0).unwrap();
            for &fl in g.interior_nodes() {
                for ax in 0..g.dim {
                    for st in [-1, 1] {
                        let nb = g.neighbor(fl as usize, ax, st).expect("neighbor in box");
                        assert_ne!(g.class(nb), NodeClass::Exterior, "stencil leaks to exterior");
                    }
                }
            }
            // interior nodes really are inside, Dirichlet nodes near the boundary
            for i in 0..g.n_nodes() {
                match g.class(i) {
                    NodeClass::Interior => assert!(dom.contains(&g.position(i))),
                    NodeClass::Dirichlet => {
                        let d = dom.boundary_distance(&g.position(i));
                        assert!(d <= g.h * (g.dim as f64).sqrt() + 1e-12);
                    }
                    NodeClass::Exterior => {}
                }
            }
        }
    }

    #[test]
    fn exhaustion_examples() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let plan = ExhaustionPlan::Interior { margins: vec![0.2, 0.1, 0.05] };
        assert_eq!(
            exhaustion(&dom, &plan, 0).unwrap(),
            DomainSpec::Interval { a: -0.8, b: 0.8 }
        );
        let ext = DomainSpec::ExteriorOfBall { inner: 1.0, truncation: 8.0, dim: 1 };
        let tplan = ExhaustionPlan::Truncation { radii: vec![2.0, 4.0, 8.0] };
        assert_eq!(
            exhaustion(&ext, &tplan, 1).unwrap(),
            DomainSpec::Annulus { inner: 1.0, outer: 4.0, dim: 1 }
        );
        match exhaustion(&dom, &plan, 3) {
            Err(GeometryError::IndexOutOfRange { index: 3, count: 3 }) => {}
            other => panic!("expected index-out-of-range, got {other:?}"),
        }
    }

    #[test]
    fn nested_members_node_sets() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let plan = ExhaustionPlan::Interior { margins: vec![0.25, 0.125, 0.0625] };
        let h = 1.0 / 32.0;
        let grids: Vec<_> = (0..3)
            .map(|m| build_grid(&exhaustion(&dom, &plan, m).unwrap(), h).unwrap())
            .collect();
        for w in grids.windows(2) {
            for &fl in w[0].interior_nodes() {
                let lat = w[0].lattice_of(fl as usize);
                let in_next = w[1]
                    .find_lattice(lat)
                    .map(|f| w[1].class(f) == NodeClass::Interior)
                    .unwrap_or(false);
                assert!(in_next, "member interior not nested");
            }
        }
    }

    #[test]
    fn extend_by_zero_examples() {
        let big = build_grid(&DomainSpec::Interval { a: -1.0, b: 1.0 }, 0.25).unwrap();
        let small = build_grid(&DomainSpec::Interval { a: -0.5, b: 0.5 }, 0.25).unwrap();
        let z = Field::zeros(&small);
        let ez = extend_by_zero(&z, &big).unwrap();
        assert!(ez.values().iter().all(|&v| v == 0.0));

        let one = Field::constant(&small, 1.0);
        let eo = extend_by_zero(&one, &big).unwrap();
        for i in 0..big.n_nodes() {
            let x = big.position(i)[0];
            let expect = if x.abs() < 0.5 && big.class(i) == NodeClass::Interior { 1.0 } else { 0.0 };
            assert_eq!(eo.values()[i], expect, "at x={x}");
        }
        assert!((eo.l2_norm() - one.l2_norm()).abs() < 1e-15);

        let mismatched = build_grid(&DomainSpec::Interval { a: -1.0, b: 1.0 }, 0.3).unwrap();
        assert!(matches!(
            extend_by_zero(&one, &mismatched),
            Err(GeometryError::IncompatibleGrids(_))
        ));
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(DomainSpec::Ball { radius: 1.0, dim: 3 }.validate().is_err());
        assert!(DomainSpec::Annulus { inner: 1.0, outer: 0.5, dim: 2 }.validate().is_err());
        assert!(DomainSpec::ExteriorOfBall { inner: 2.0, truncation: 1.0, dim: 2 }
            .validate()
            .is_err());
        assert!(DomainSpec::RectangleWithHole {
            half_width: 0.4,
            half_height: 1.0,
            hole_radius: 0.5
        }
        .validate()
        .is_err());
    }
}

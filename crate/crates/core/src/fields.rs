//! Cell-averaged fields on a [`SectorMesh`] and the integral functionals of
//! the system: mass, entropy, the Lyapunov energy, the Trudinger-Moser gap
//! and the Jensen-chain entropy estimate.
//!
//! Gradient terms use the same two-point face differences as the
//! finite-volume scheme (`|grad f|^2` integrates to
//! `sum_faces length/distance * (f_a - f_b)^2`), so the energy tracked here
//! is the natural discrete energy of the scheme.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{PolarPoint, SectorMesh};
use crate::graph::CellGraph;

/// Values below this are treated as zero inside logarithms (`0 ln 0 = 0`).
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("fields live on different meshes")]
    MeshMismatch,
    #[error("field has zero mass")]
    ZeroMass,
    #[error("target mass must be positive and finite, got {0}")]
    Target(f64),
    #[error("density field has a negative value {value} in cell {cell}")]
    Negative { cell: usize, value: f64 },
    #[error("effective angle must lie in (0, pi], got {0}")]
    Angle(f64),
    #[error("(1 + eta) m / (8 theta) = {ratio} must be < 1/2 (eta = {eta}, m = {mass})")]
    Inadmissible { eta: f64, mass: f64, ratio: f64 },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

/// One value per cell of a shared mesh.
#[derive(Debug, Clone)]
pub struct Field {
    mesh: Arc<SectorMesh>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(mesh: Arc<SectorMesh>, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != mesh.n_cells() {
            return Err(FieldError::Length { expected: mesh.n_cells(), got: values.len() });
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<SectorMesh>) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: Arc<SectorMesh>, c: f64) -> Self {
        let values = vec![c; mesh.n_cells()];
        Self { mesh, values }
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(mesh: Arc<SectorMesh>, f: impl Fn(PolarPoint) -> f64) -> Self {
        let values = mesh.cell_centers().iter().map(|&p| f(p)).collect();
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<SectorMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_mesh(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.same_layout(&other.mesh)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field, FieldError> {
        if !self.same_mesh(other) {
            return Err(FieldError::MeshMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Field { mesh: self.mesh.clone(), values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Maximum value and the cell holding it; ties go to the lowest index.
    pub fn argmax(&self) -> (f64, usize) {
        argmax(&self.values)
    }

    pub fn check_density(&self) -> Result<(), FieldError> {
        match self.values.iter().position(|&x| x < 0.0 || x.is_nan()) {
            Some(cell) => Err(FieldError::Negative { cell, value: self.values[cell] }),
            None => Ok(()),
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &x) in values.iter().enumerate() {
        if x > best.0 {
            best = (x, i);
        }
    }
    best
}

/// `x ln x` with `0 ln 0 = 0`.
pub(crate) fn x_ln_x(x: f64) -> f64 {
    if x < LOG_FLOOR {
        0.0
    } else {
        x * x.ln()
    }
}

/// `ln(sum_i area_i * exp(x_i))` evaluated with the maximum factored out.
pub(crate) fn log_integral_exp(area: &[f64], x: &[f64]) -> f64 {
    let shift = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = area.iter().zip(x).map(|(a, xi)| a * (xi - shift).exp()).sum();
    shift + s.ln()
}

// Graph-level functionals shared with the radial solver.

pub(crate) fn entropy_on(graph: &CellGraph, u: &[f64]) -> f64 {
    graph.area.iter().zip(u).map(|(a, &x)| a * x_ln_x(x)).sum()
}

pub(crate) fn energy_on(graph: &CellGraph, u: &[f64], v: &[f64]) -> f64 {
    let local: f64 = graph
        .area
        .iter()
        .zip(u.iter().zip(v))
        .map(|(a, (&ui, &vi))| a * (x_ln_x(ui) - ui * vi + 0.5 * vi * vi))
        .sum();
    local + 0.5 * graph.dirichlet(v)
}

pub fn mass(f: &Field) -> f64 {
    f.mesh.graph().integrate(&f.values)
}

/// `int u ln u`.
pub fn entropy(u: &Field) -> f64 {
    entropy_on(u.mesh.graph(), &u.values)
}

/// `int |grad f|^2` from two-point face differences.
pub fn dirichlet_energy(f: &Field) -> f64 {
    f.mesh.graph().dirichlet(&f.values)
}

/// `int u ln u - int u v + 1/2 int v^2 + 1/2 int |grad v|^2`.
pub fn energy(u: &Field, v: &Field) -> Result<f64, FieldError> {
    if !u.same_mesh(v) {
        return Err(FieldError::MeshMismatch);
    }
    u.check_density()?;
    Ok(energy_on(u.mesh.graph(), &u.values, &v.values))
}

/// Trudinger-Moser gap
/// `G(phi) = ln int e^|phi| - 1/(8 theta_eff) int |grad phi|^2 - 1/|Omega| int |phi|`.
///
/// The inequality says `G(phi) <= ln C_Omega` for every `phi`, with an
/// unknown constant; only boundedness over families can be checked.
pub fn tm_gap(phi: &Field, theta_eff: f64) -> Result<f64, FieldError> {
    if !(theta_eff > 0.0 && theta_eff <= std::f64::consts::PI) {
        return Err(FieldError::Angle(theta_eff));
    }
    let graph = phi.mesh.graph();
    let abs: Vec<f64> = phi.values.iter().map(|x| x.abs()).collect();
    let log_int = log_integral_exp(&graph.area, &abs);
    let area = graph.total_area();
    let mean_abs = graph.integrate(&abs) / area;
    Ok(log_int - graph.dirichlet(&phi.values) / (8.0 * theta_eff) - mean_abs)
}

/// The three stages of the entropy estimate for a pair `(u, v)` of mass `m`:
///
/// `lhs = (1+eta) int uv - int u ln u`
/// `<= jensen = m ln(1/m int e^{(1+eta) v})`
/// `<= m ln C_Omega + rhs`, with
/// `rhs = 1/2 int |grad v|^2 + (1+eta) m / |Omega| int v - m ln m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBound {
    pub mass: f64,
    pub lhs: f64,
    pub jensen: f64,
    pub rhs: f64,
}

impl EntropyBound {
    /// `lhs - rhs`; bounded above by `m ln C_Omega` along admissible families.
    pub fn gap(&self) -> f64 {
        self.lhs - self.rhs
    }
}

pub fn entropy_bound_check(
    u: &Field,
    v: &Field,
    theta_eff: f64,
    eta: f64,
) -> Result<EntropyBound, FieldError> {
    if !u.same_mesh(v) {
        return Err(FieldError::MeshMismatch);
    }
    if !(theta_eff > 0.0 && theta_eff <= std::f64::consts::PI) {
        return Err(FieldError::Angle(theta_eff));
    }
    u.check_density()?;
    let m = mass(u);
    if m <= 0.0 {
        return Err(FieldError::ZeroMass);
    }
    let ratio = (1.0 + eta) * m / (8.0 * theta_eff);
    if !(eta > 0.0) || !(ratio < 0.5) {
        return Err(FieldError::Inadmissible { eta, mass: m, ratio });
    }
    let graph = u.mesh.graph();
    let uv: f64 = graph.area.iter().zip(u.values.iter().zip(&v.values)).map(|(a, (x, y))| a * x * y).sum();
    let lhs = (1.0 + eta) * uv - entropy(u);
    let scaled: Vec<f64> = v.values.iter().map(|x| (1.0 + eta) * x).collect();
    let jensen = m * (log_integral_exp(&graph.area, &scaled) - m.ln());
    let area = graph.total_area();
    let rhs = 0.5 * graph.dirichlet(&v.values) + (1.0 + eta) * m / area * graph.integrate(&v.values)
        - m * m.ln();
    Ok(EntropyBound { mass: m, lhs, jensen, rhs })
}

/// Scales `f` so that its mass equals `target` exactly.
pub fn normalize_to_mass(f: &Field, target: f64) -> Result<Field, FieldError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(FieldError::Target(target));
    }
    let m = mass(f);
    if !(m > 0.0) {
        return Err(FieldError::ZeroMass);
    }
    let s = target / m;
    Ok(Field { mesh: f.mesh.clone(), values: f.values.iter().map(|x| x * s).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalReport {
    pub mass_u: f64,
    pub mass_v: f64,
    pub entropy: f64,
    pub energy: f64,
    /// Gap of the signal, `G(v)`, with the domain's minimal interior angle.
    pub tm_gap: f64,
    pub linf_u: f64,
    pub argmax_location: PolarPoint,
}

pub fn functional_report(u: &Field, v: &Field) -> Result<FunctionalReport, FieldError> {
    let energy = energy(u, v)?;
    let (linf_u, cell) = u.argmax();
    Ok(FunctionalReport {
        mass_u: mass(u),
        mass_v: mass(v),
        entropy: entropy(u),
        energy,
        tm_gap: tm_gap(v, u.mesh.domain().min_interior_angle())?,
        linf_u,
        argmax_location: u.mesh.cell_centers()[cell],
    })
}

/// Plain-text snapshot: `# theta R nr nphi t`, a commented value line, then
/// rows `i r phi u v`.
pub fn write_snapshot(u: &Field, v: &Field, t: f64) -> Result<String, FieldError> {
    if !u.same_mesh(v) {
        return Err(FieldError::MeshMismatch);
    }
    let m = &u.mesh;
    let mut out = String::new();
    let _ = writeln!(out, "# theta R nr nphi t");
    let _ = writeln!(
        out,
        "# {:.16e} {:.16e} {} {} {:.16e}",
        m.domain().theta(),
        m.domain().radius(),
        m.nr(),
        m.nphi(),
        t
    );
    for (i, p) in m.cell_centers().iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {:.16e} {:.16e} {:.16e} {:.16e}",
            i, p.r, p.phi, u.values[i], v.values[i]
        );
    }
    Ok(out)
}

/// Parsed snapshot contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub theta: f64,
    pub radius: f64,
    pub nr: usize,
    pub nphi: usize,
    pub t: f64,
    pub rows: Vec<(usize, PolarPoint, f64, f64)>,
}

pub fn read_snapshot(text: &str) -> Result<Snapshot, FieldError> {
    let bad = |msg: &str| FieldError::Snapshot(msg.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("# theta R nr nphi t") {
        return Err(bad("missing header"));
    }
    let head = lines.next().ok_or_else(|| bad("missing header values"))?;
    let parts: Vec<&str> = head.trim_start_matches('#').split_whitespace().collect();
    if parts.len() != 5 {
        return Err(bad("header must hold 5 values"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
    let mut snap = Snapshot {
        theta: num(parts[0])?,
        radius: num(parts[1])?,
        nr: int(parts[2])?,
        nphi: int(parts[3])?,
        t: num(parts[4])?,
        rows: Vec::new(),
    };
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let c: Vec<&str> = line.split_whitespace().collect();
        if c.len() != 5 {
            return Err(bad(line));
        }
        snap.rows.push((int(c[0])?, PolarPoint { r: num(c[1])?, phi: num(c[2])? }, num(c[3])?, num(c[4])?));
    }
    if snap.rows.len() != snap.nr * snap.nphi {
        return Err(bad("row count does not match nr * nphi"));
    }
    Ok(snap)
}

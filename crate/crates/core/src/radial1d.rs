//! Radially symmetric solutions on a disc, reduced to one dimension in `r`.
//!
//! The radial cells are full annuli, so the reduced problem uses the same
//! two-point scheme as the sector solver on a chain graph: annulus areas
//! `pi (b^2 - a^2)` and face transmissibilities `2 pi r / dr`. A sector run
//! with angularly constant data on the same rings differs only by the common
//! factor `theta / 2 pi` in every area and transmissibility, so both produce
//! the same trajectory. The chain systems are solved directly.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::fields::Field;
use crate::geometry::{ring_boundaries, GeometryError, PolarPoint, SectorMesh};
use crate::graph::{CellGraph, GraphFace};
use crate::linalg::{solve_chain, LinearSolveError, SolveStats, SpdOperator};
use crate::scheme::{self, advance, Discretization, RunControl, RunOutcome, SchemeConfig, StepError, StepStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadialError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("disc mass must be positive and finite, got {0}")]
    Mass(f64),
    #[error("concentration width must be positive and finite, got {0}")]
    Concentration(f64),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("profile radius {profile} does not match mesh radius {mesh}")]
    RadiusMismatch { profile: f64, mesh: f64 },
    #[error("profiles live on different radial meshes")]
    MeshMismatch,
}

/// Annular cells `[r_i, r_{i+1}]` of a disc of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialMesh {
    radius: f64,
    grading: f64,
    ring_faces: Vec<f64>,
    centers: Vec<f64>,
    graph: CellGraph,
}

impl RadialMesh {
    pub fn new(radius: f64, nr: usize, grading: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::Radius(radius));
        }
        if nr < 2 {
            return Err(GeometryError::Count { name: "nr", value: nr });
        }
        if !(grading >= 1.0 && grading.is_finite()) {
            return Err(GeometryError::Grading(grading));
        }
        let ring_faces = ring_boundaries(nr, radius, grading);
        let centers: Vec<f64> = ring_faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let area = ring_faces.windows(2).map(|w| PI * (w[1] * w[1] - w[0] * w[0])).collect();
        let faces = (0..nr - 1)
            .map(|k| {
                let length = 2.0 * PI * ring_faces[k + 1];
                let distance = centers[k + 1] - centers[k];
                GraphFace { a: k, b: k + 1, length, distance, trans: length / distance }
            })
            .collect();
        Ok(Self { radius, grading, ring_faces, centers, graph: CellGraph { area, faces } })
    }

    /// Same rings as the radial direction of `mesh`.
    pub fn matching(mesh: &SectorMesh) -> Self {
        Self::new(mesh.domain().radius(), mesh.nr(), mesh.grading()).expect("sector mesh is valid")
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn nr(&self) -> usize {
        self.centers.len()
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn ring_faces(&self) -> &[f64] {
        &self.ring_faces
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn graph(&self) -> &CellGraph {
        &self.graph
    }
}

impl Discretization for RadialMesh {
    fn graph(&self) -> &CellGraph {
        &self.graph
    }

    fn locate(&self, cell: usize) -> PolarPoint {
        PolarPoint { r: self.centers[cell], phi: 0.0 }
    }

    fn solve(
        &self,
        op: &SpdOperator,
        b: &[f64],
        x: &mut [f64],
        _tol: f64,
    ) -> Result<SolveStats, LinearSolveError> {
        solve_chain(op, b, x)
    }
}

/// Radial density and signal, one value per annulus.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub mesh: Arc<RadialMesh>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl RadialProfile {
    pub fn new(mesh: Arc<RadialMesh>, u: Vec<f64>, v: Vec<f64>) -> Result<Self, RadialError> {
        for f in [&u, &v] {
            if f.len() != mesh.nr() {
                return Err(RadialError::Length { expected: mesh.nr(), got: f.len() });
            }
        }
        Ok(Self { mesh, u, v, t: 0.0 })
    }

    pub fn constant(mesh: Arc<RadialMesh>, u: f64, v: f64) -> Self {
        let n = mesh.nr();
        Self { mesh, u: vec![u; n], v: vec![v; n], t: 0.0 }
    }

    /// `int_disc u`.
    pub fn disc_mass(&self) -> f64 {
        self.mesh.graph.integrate(&self.u)
    }

    pub fn signal_integral(&self) -> f64 {
        self.mesh.graph.integrate(&self.v)
    }

    /// Rows `r u v` after a `# t` header line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# t {:.16e}", self.t);
        let _ = writeln!(out, "# r u v");
        for ((r, u), v) in self.mesh.centers.iter().zip(&self.u).zip(&self.v) {
            let _ = writeln!(out, "{r:.16e} {u:.16e} {v:.16e}");
        }
        out
    }
}

/// One step of size `dt` with the same scheme as the sector solver.
pub fn radial_step(
    profile: &RadialProfile,
    dt: f64,
    scheme: &SchemeConfig,
) -> Result<(RadialProfile, StepStats), StepError> {
    let adv = advance(profile.mesh.as_ref(), &profile.u, &profile.v, dt, scheme)?;
    Ok((
        RadialProfile { mesh: profile.mesh.clone(), u: adv.u, v: adv.v, t: profile.t + dt },
        adv.stats,
    ))
}

/// Runs the radial problem; records report `argmax_phi = 0`.
pub fn run_radial(profile: &RadialProfile, scheme: &SchemeConfig, control: &RunControl) -> RunOutcome {
    scheme::integrate(profile.mesh.as_ref(), profile.u.clone(), profile.v.clone(), scheme, control)
}

/// Solution of `-Lap v + v = u` with zero flux at `r = R`.
pub fn quasi_stationary_signal(mesh: &RadialMesh, u: &[f64]) -> Vec<f64> {
    let g = &mesh.graph;
    let op = SpdOperator::new(g, g.area.clone(), g.faces.iter().map(|f| f.trans).collect());
    let b: Vec<f64> = g.area.iter().zip(u).map(|(a, x)| a * x).collect();
    let mut v = vec![0.0; u.len()];
    solve_chain(&op, &b, &mut v).expect("Helmholtz chain is SPD");
    op.constant_mode_correction(&b, &mut v);
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

/// Cell averages of `exp(-r^2 / w^2)` over each annulus.
fn gaussian_cell_averages(mesh: &RadialMesh, width: f64) -> Vec<f64> {
    let s = width * width;
    mesh.ring_faces
        .windows(2)
        .map(|w| {
            let (a2, b2) = (w[0] * w[0], w[1] * w[1]);
            // int_a^b e^{-r^2/s} 2 pi r dr / (pi (b^2 - a^2))
            let integral = -s * (-a2 / s).exp() * (-(b2 - a2) / s).exp_m1();
            integral / (b2 - a2)
        })
        .collect()
}

/// Vertex-centred Gaussian bump `u0 ~ exp(-r^2 / concentration^2)` with the
/// given disc mass and the quasi-stationary signal as `v0`. Values are
/// floored at `1e-14` of the peak.
pub fn make_blowup_candidate(
    mesh: Arc<RadialMesh>,
    disc_mass: f64,
    concentration: f64,
) -> Result<RadialProfile, RadialError> {
    if !(disc_mass > 0.0 && disc_mass.is_finite()) {
        return Err(RadialError::Mass(disc_mass));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(RadialError::Concentration(concentration));
    }
    let mut u = gaussian_cell_averages(&mesh, concentration);
    let m = mesh.graph.integrate(&u);
    if !(m > 0.0) {
        // Width far below the innermost ring: all mass sits in cell 0.
        u.iter_mut().for_each(|x| *x = 0.0);
        u[0] = 1.0;
    }
    // A faint floor keeps the far field strictly positive where the
    // Gaussian underflows.
    let peak = u.iter().copied().fold(0.0, f64::max);
    u.iter_mut().for_each(|x| *x = x.max(1e-14 * peak));
    let scale = disc_mass / mesh.graph.integrate(&u);
    u.iter_mut().for_each(|x| *x *= scale);
    let v = quasi_stationary_signal(&mesh, &u);
    Ok(RadialProfile { mesh, u, v, t: 0.0 })
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes),
/// constant beyond the end knots.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two knots.
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 < 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            d[0] = end(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x: x.to_vec(), y: y.to_vec(), d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&xk| xk <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// Samples the profile at each sector cell radius. The density is rescaled
/// so that its sector mass is exactly `theta / 2 pi` times the disc mass.
pub fn restrict_to_sector(
    profile: &RadialProfile,
    mesh: Arc<SectorMesh>,
) -> Result<(Field, Field), RadialError> {
    let radius = mesh.domain().radius();
    if (radius - profile.mesh.radius).abs() > 1e-12 * radius {
        return Err(RadialError::RadiusMismatch { profile: profile.mesh.radius, mesh: radius });
    }
    let centers = &profile.mesh.centers;
    let iu = Pchip::new(centers, &profile.u);
    let iv = Pchip::new(centers, &profile.v);
    let mut u = Field::from_fn(mesh.clone(), |p| iu.eval(p.r).max(0.0));
    let v = Field::from_fn(mesh.clone(), |p| iv.eval(p.r).max(0.0));
    let target = mesh.domain().theta() / (2.0 * PI) * profile.disc_mass();
    let m = crate::fields::mass(&u);
    if m > 0.0 {
        let s = target / m;
        u.values_mut().iter_mut().for_each(|x| *x *= s);
    }
    Ok((u, v))
}

/// Piecewise-cubic interpolation of a radial field at arbitrary radii.
pub fn sample(profile_r: &[f64], values: &[f64], at: &[f64]) -> Vec<f64> {
    let p = Pchip::new(profile_r, values);
    at.iter().map(|&r| p.eval(r)).collect()
}

//! Time marching on a [`SectorMesh`].

use std::sync::Arc;

use thiserror::Error;

use crate::config::SimConfig;
use crate::fields::{Field, FieldError};
use crate::geometry::GeometryError;
use crate::initial::InitError;
use crate::geometry::{FaceKind, PolarPoint, SectorMesh};
use crate::graph::CellGraph;
use crate::linalg::{pcg_with, LinearSolveError, Preconditioner, SolveStats, SpdOperator};
use crate::scheme::{self, advance, dt_limit, Discretization, RunControl};

pub use crate::scheme::{
    detect_blowup, detect_blowup_with_dt, trajectory_csv, BlowupDecision, BlowupReason,
    DiagnosticsRecord, OutcomeKind, RunOutcome, SchemeConfig, SchemeConfigError, StepError,
    StepStats, CSV_HEADER,
};

impl Discretization for SectorMesh {
    fn graph(&self) -> &CellGraph {
        SectorMesh::graph(self)
    }

    fn locate(&self, cell: usize) -> PolarPoint {
        self.cell_centers()[cell]
    }

    fn solve(
        &self,
        op: &SpdOperator,
        b: &[f64],
        x: &mut [f64],
        tol: f64,
    ) -> Result<SolveStats, LinearSolveError> {
        let precond = RingLines::new(self, op);
        pcg_with(op, &precond, b, x, tol, 20 * self.n_cells() + 100)
    }
}

/// Block preconditioner that solves exactly along each ring: the operator's
/// full diagonal plus its angular couplings, closed periodically on the disc.
/// Angular couplings dominate on wedge cells, so this removes most of the
/// stiffness, and it maps angularly constant residuals to angularly constant
/// corrections.
struct RingLines {
    nphi: usize,
    /// `off[c]` couples cell `c` with the next slot of its ring.
    off: Vec<f64>,
    /// Thomas factors of the open chains.
    lower: Vec<f64>,
    pivot: Vec<f64>,
    /// Sherman-Morrison data for periodic rings: `gamma`, the corner
    /// coupling and the chain solution for the rank-one spike.
    periodic: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl RingLines {
    fn new(mesh: &SectorMesh, op: &SpdOperator) -> Self {
        let nphi = mesh.nphi();
        let n = mesh.n_cells();
        let rings = n / nphi;
        let mut diag = op.full_diagonal();
        let mut off = vec![0.0; n];
        for (f, w) in mesh.faces().iter().zip(op.weights()) {
            if f.kind != FaceKind::Angular {
                continue;
            }
            let (a, b) = f.cells;
            let (_, sa) = mesh.cell_position(a);
            let (_, sb) = mesh.cell_position(b);
            if sb == (sa + 1) % nphi {
                off[a] += w;
            } else {
                off[b] += w;
            }
        }

        let cyclic = mesh.domain().is_disc() && nphi > 2;
        let mut gamma = vec![0.0; rings];
        let mut corner = vec![0.0; rings];
        if mesh.domain().is_disc() {
            for k in 0..rings {
                let (first, last) = (k * nphi, k * nphi + nphi - 1);
                if cyclic {
                    // A = T + w w^T with w = (gamma, 0, .., corner / gamma).
                    let alpha = -off[last];
                    let g = -diag[first];
                    diag[first] -= g;
                    diag[last] -= alpha * alpha / g;
                    gamma[k] = g;
                    corner[k] = alpha;
                } else {
                    // Two slots: both faces join the same pair.
                    off[first] += off[last];
                }
                off[last] = 0.0;
            }
        }

        let mut lower = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        for k in 0..rings {
            let base = k * nphi;
            pivot[base] = diag[base];
            for j in base + 1..base + nphi {
                let l = -off[j - 1] / pivot[j - 1];
                lower[j] = l;
                pivot[j] = diag[j] + l * off[j - 1];
            }
        }
        let mut lines = Self { nphi, off, lower, pivot, periodic: None };
        if cyclic {
            let mut w = vec![0.0; n];
            for k in 0..rings {
                w[k * nphi] = gamma[k];
                w[k * nphi + nphi - 1] = corner[k];
            }
            let mut spike = vec![0.0; n];
            lines.chain_solve(&w, &mut spike);
            lines.periodic = Some((gamma, corner, spike));
        }
        lines
    }

    fn chain_solve(&self, r: &[f64], z: &mut [f64]) {
        let nphi = self.nphi;
        for base in (0..r.len()).step_by(nphi) {
            z[base] = r[base];
            for j in base + 1..base + nphi {
                z[j] = r[j] - self.lower[j] * z[j - 1];
            }
            let last = base + nphi - 1;
            z[last] /= self.pivot[last];
            for j in (base..last).rev() {
                z[j] = (z[j] + self.off[j] * z[j + 1]) / self.pivot[j];
            }
        }
    }
}

impl Preconditioner for RingLines {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.chain_solve(r, z);
        if let Some((gamma, corner, spike)) = &self.periodic {
            let nphi = self.nphi;
            for (k, base) in (0..r.len()).step_by(nphi).enumerate() {
                let last = base + nphi - 1;
                let (g, c) = (gamma[k], corner[k]);
                let num = z[base] + c * z[last] / g;
                let den = 1.0 + spike[base] + c * spike[last] / g;
                let f = num / den;
                for j in base..=last {
                    z[j] -= f * spike[j];
                }
            }
        }
    }
}

/// Density, signal and stepping state of one simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    /// Size of the next step to attempt.
    pub dt: f64,
    pub step_count: usize,
    pub last_linf_u: f64,
    /// The previous attempt was rejected; [`adapt_dt`] halves.
    pub rejected: bool,
}

impl SimState {
    pub fn new(u: Field, v: Field, dt: f64) -> Result<Self, FieldError> {
        if !u.same_mesh(&v) {
            return Err(FieldError::MeshMismatch);
        }
        u.check_density()?;
        let last_linf_u = u.argmax().0;
        Ok(Self { u, v, t: 0.0, dt, step_count: 0, last_linf_u, rejected: false })
    }

    pub fn mesh(&self) -> &Arc<SectorMesh> {
        self.u.mesh()
    }
}

/// Advances one step of size `state.dt`.
pub fn step(state: &SimState, scheme: &SchemeConfig) -> Result<(SimState, StepStats), StepError> {
    let mesh = state.mesh().clone();
    let adv = advance(mesh.as_ref(), state.u.values(), state.v.values(), state.dt, scheme)?;
    let linf = adv.u.iter().copied().fold(0.0, f64::max);
    let u = Field::new(mesh.clone(), adv.u).expect("scheme keeps the layout");
    let v = Field::new(mesh, adv.v).expect("scheme keeps the layout");
    Ok((
        SimState {
            u,
            v,
            t: state.t + state.dt,
            dt: state.dt,
            step_count: state.step_count + 1,
            last_linf_u: linf,
            rejected: false,
        },
        adv.stats,
    ))
}

/// Step size for the next attempt: the drift and diffusion limits capped by
/// `dt_max`, and at most half the previous step after a rejection. The
/// result may fall below `dt_min`; [`run_fields`] reports that.
pub fn adapt_dt(state: &SimState, scheme: &SchemeConfig) -> f64 {
    let limit = dt_limit(state.mesh().graph(), state.v.values(), scheme);
    if state.rejected {
        limit.min(0.5 * state.dt)
    } else {
        limit
    }
}

/// Runs from the given initial fields until `scheme.t_end`, blow-up or
/// failure.
pub fn run_fields(u0: &Field, v0: &Field, scheme: &SchemeConfig, control: &RunControl) -> Result<RunOutcome, FieldError> {
    if !u0.same_mesh(v0) {
        return Err(FieldError::MeshMismatch);
    }
    u0.check_density()?;
    let mesh = u0.mesh().clone();
    Ok(scheme::integrate(
        mesh.as_ref(),
        u0.values().to_vec(),
        v0.values().to_vec(),
        scheme,
        control,
    ))
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("scheme: {0}")]
    Scheme(#[from] SchemeConfigError),
}

/// Output times `k * interval` up to `t_end`; empty for a zero interval.
pub fn snapshot_times(interval: f64, t_end: f64) -> Vec<f64> {
    if !(interval > 0.0) {
        return Vec::new();
    }
    let n = (t_end / interval * (1.0 + 1e-12)).floor() as usize;
    (1..=n).map(|k| (k as f64 * interval).min(t_end)).collect()
}

/// Builds the mesh and initial data of `config` and runs to its horizon.
pub fn run(config: &SimConfig) -> Result<(Arc<SectorMesh>, RunOutcome), RunError> {
    config.scheme.validate()?;
    let mesh = config.mesh()?;
    let (u0, v0) = config.initial_fields(mesh.clone())?;
    let control = RunControl {
        record_every: config.output.csv_every,
        output_times: snapshot_times(config.output.snapshot_interval, config.scheme.t_end),
        ..Default::default()
    };
    let outcome = run_fields(&u0, &v0, &config.scheme, &control)?;
    Ok((mesh, outcome))
}

/// `max_phi u - min_phi u` over all rings, the largest angular variation.
pub fn angular_variation(f: &Field) -> f64 {
    let mesh = f.mesh();
    let nphi = mesh.nphi();
    f.values()
        .chunks(nphi)
        .map(|ring| {
            let hi = ring.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ring.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    fn quarter(nr: usize, nphi: usize, g: f64) -> Arc<SectorMesh> {
        Arc::new(SectorMesh::new(DomainSpec::quarter_disc(1.0).unwrap(), nr, nphi, g).unwrap())
    }

    fn check_ring_lines(mesh: &SectorMesh) {
        // The preconditioner must invert the ring blocks exactly: applying
        // the block operator to M^{-1} r gives back r.
        let g = mesh.graph();
        let n = mesh.n_cells();
        let diag: Vec<f64> = (0..n).map(|i| 0.3 + (i % 5) as f64 * 0.1).collect();
        let w: Vec<f64> = (0..g.faces.len()).map(|k| 1.0 + (k % 3) as f64).collect();
        let op = SpdOperator::new(g, diag, w.clone());
        let pre = RingLines::new(mesh, &op);
        let r: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut z = vec![0.0; n];
        pre.apply(&r, &mut z);
        let radial_only: Vec<f64> = mesh
            .faces()
            .iter()
            .zip(&w)
            .map(|(f, w)| if f.kind == FaceKind::Radial { *w } else { 0.0 })
            .collect();
        // Block = full operator minus the radial off-diagonal couplings.
        let mut y = vec![0.0; n];
        op.apply(&z, &mut y);
        for (f, w) in g.faces.iter().zip(&radial_only) {
            y[f.a] += w * z[f.b];
            y[f.b] += w * z[f.a];
        }
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn ring_lines_invert_ring_blocks() {
        check_ring_lines(&quarter(5, 6, 1.2));
        for nphi in [2, 3, 8] {
            let disc = SectorMesh::new(DomainSpec::disc(1.0).unwrap(), 4, nphi, 1.0).unwrap();
            check_ring_lines(&disc);
        }
    }

    #[test]
    fn constant_state_is_fixed() {
        let mesh = quarter(12, 8, 1.1);
        for c in [1e-3, 1.0, 1e3] {
            let u = Field::constant(mesh.clone(), c);
            let mut state = SimState::new(u.clone(), u, 0.37).unwrap();
            for _ in 0..3 {
                state = step(&state, &SchemeConfig::default()).unwrap().0;
            }
            for (a, b) in state.u.values().iter().zip(state.v.values()) {
                assert!((a - c).abs() <= 4.0 * f64::EPSILON * c);
                assert!((b - c).abs() <= 4.0 * f64::EPSILON * c);
            }
        }
    }

    #[test]
    fn zero_density_stays_zero() {
        let mesh = quarter(8, 8, 1.0);
        let u = Field::zeros(mesh.clone());
        let v = Field::from_fn(mesh, |p| 1.0 + p.r * p.phi.cos());
        let scheme = SchemeConfig { t_end: 0.5, ..Default::default() };
        let out = run_fields(&u, &v, &scheme, &RunControl::default()).unwrap();
        assert_eq!(out.kind, OutcomeKind::GlobalUpToHorizon);
        assert!(out.final_u.iter().all(|&x| x == 0.0));
        assert!(out.trajectory.iter().all(|r| r.linf_u == 0.0));
    }

    #[test]
    fn snapshot_grid() {
        assert!(snapshot_times(0.0, 1.0).is_empty());
        assert_eq!(snapshot_times(0.25, 1.0), vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(snapshot_times(0.1, 0.3).len(), 3);
    }

    #[test]
    fn adapt_dt_rules() {
        let mesh = quarter(10, 10, 1.0);
        let scheme = SchemeConfig::default();
        let u = Field::constant(mesh.clone(), 1.0);
        let flat = SimState::new(u.clone(), Field::constant(mesh.clone(), 2.0), 1e-3).unwrap();
        assert_eq!(adapt_dt(&flat, &scheme), scheme.dt_max);

        let slope = |k: f64| Field::from_fn(mesh.clone(), move |p| 100.0 * k * p.r * p.phi.cos());
        let s1 = SimState::new(u.clone(), slope(1.0), 1e-3).unwrap();
        let s2 = SimState::new(u.clone(), slope(2.0), 1e-3).unwrap();
        let (d1, d2) = (adapt_dt(&s1, &scheme), adapt_dt(&s2, &scheme));
        assert!(d1 < scheme.dt_max);
        assert!((d1 / d2 - 2.0).abs() < 1e-12);

        let mut rej = flat.clone();
        rej.rejected = true;
        assert_eq!(adapt_dt(&rej, &scheme), 0.5e-3);
    }

    #[test]
    fn step_conserves_and_stays_positive() {
        let mesh = quarter(16, 12, 1.05);
        let u = Field::from_fn(mesh.clone(), |p| 3.0 * (-(p.r * p.r) / 0.05).exp() + 1e-3);
        let v = Field::zeros(mesh.clone());
        let m0 = crate::fields::mass(&u);
        let mut state = SimState::new(u, v, 1e-3).unwrap();
        for _ in 0..20 {
            state = step(&state, &SchemeConfig::default()).unwrap().0;
            assert!(state.u.min() >= 0.0);
            assert!(state.v.min() >= 0.0);
        }
        let m1 = crate::fields::mass(&state.u);
        assert!(((m1 - m0) / m0).abs() < 1e-12);
    }
}

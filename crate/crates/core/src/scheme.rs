//! Decoupled semi-implicit finite-volume scheme on a [`CellGraph`].
//!
//! One step first solves the signal equation
//! `(v' - v)/dt = Lap v^theta - v^theta + u` with the current density, then
//! the density equation with Scharfetter-Gummel fluxes built from the fresh
//! signal. The SG flux across a face from cell `a` to `b` is
//!
//! `F_ab = T * (B(-dv) u_a - B(dv) u_b)`, `dv = v_b - v_a`, `B(x) = x / (e^x - 1)`,
//!
//! which in the Slotboom variable `w = u e^{-v}` reads
//! `F_ab = T_s (w_a - w_b)` with the symmetric weight
//! `T_s = T * dv / (e^{-v_a} - e^{-v_b})`. Both solves are therefore SPD
//! systems `diag + graph Laplacian`; for `theta = 1` they are M-matrices,
//! which gives positivity, and column sums vanish, which gives conservation.
//! Boundary faces carry no flux and never appear in the graph.

use std::collections::VecDeque;

use thiserror::Error;

use crate::fields::{argmax, energy_on, entropy_on, LOG_FLOOR};
use crate::geometry::PolarPoint;
use crate::graph::CellGraph;
use crate::linalg::{LinearSolveError, SolveStats, SpdOperator};

/// Time-stepping controls and blow-up thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub dt0: f64,
    /// Steps shorter than this count as a time-step collapse.
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
    /// Blow-up is declared once `max u` reaches this value.
    pub linf_blowup: f64,
    pub t_end: f64,
    /// Relative residual tolerance of the iterative solves.
    pub linear_tol: f64,
    /// Implicitness weight in `[1/2, 1]`; 1 is backward Euler.
    pub theta_scheme: f64,
    /// Number of trailing records examined by the collapse rule.
    pub blowup_window: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt0: 1e-5,
            dt_min: 1e-13,
            dt_max: 0.1,
            cfl_safety: 0.5,
            linf_blowup: 1e8,
            t_end: 1.0,
            linear_tol: 1e-10,
            theta_scheme: 1.0,
            blowup_window: 10,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeConfigError {
    #[error("need 0 < dt_min < dt0 <= dt_max (got dt_min = {dt_min}, dt0 = {dt0}, dt_max = {dt_max})")]
    Steps { dt_min: f64, dt0: f64, dt_max: f64 },
    #[error("cfl_safety must lie in (0, 1], got {0}")]
    Cfl(f64),
    #[error("linf_blowup must be positive, got {0}")]
    Blowup(f64),
    #[error("t_end must be positive, got {0}")]
    Horizon(f64),
    #[error("linear_tol must lie in (0, 1), got {0}")]
    Tolerance(f64),
    #[error("theta_scheme must lie in [0.5, 1], got {0}")]
    Implicitness(f64),
    #[error("blowup_window must be at least 2, got {0}")]
    Window(usize),
}

impl SchemeConfig {
    /// Every violated constraint, in declaration order.
    pub fn problems(&self) -> Vec<SchemeConfigError> {
        let mut out = Vec::new();
        if !(self.dt_min > 0.0 && self.dt_min < self.dt0 && self.dt0 <= self.dt_max) {
            out.push(SchemeConfigError::Steps { dt_min: self.dt_min, dt0: self.dt0, dt_max: self.dt_max });
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            out.push(SchemeConfigError::Cfl(self.cfl_safety));
        }
        if !(self.linf_blowup > 0.0) {
            out.push(SchemeConfigError::Blowup(self.linf_blowup));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(SchemeConfigError::Horizon(self.t_end));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            out.push(SchemeConfigError::Tolerance(self.linear_tol));
        }
        if !(0.5..=1.0).contains(&self.theta_scheme) {
            out.push(SchemeConfigError::Implicitness(self.theta_scheme));
        }
        if self.blowup_window < 2 {
            out.push(SchemeConfigError::Window(self.blowup_window));
        }
        out
    }

    pub fn validate(&self) -> Result<(), SchemeConfigError> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("signal solve failed: {0}")]
    Signal(LinearSolveError),
    #[error("density solve failed: {0}")]
    Density(LinearSolveError),
    #[error("non-finite value after step")]
    NonFinite,
    #[error("{field} lost positivity: min {min:.3e}")]
    Negative { field: &'static str, min: f64 },
}

/// Bookkeeping for one accepted step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub iterations_v: usize,
    pub iterations_u: usize,
    /// Relative mass change removed by the constant-mode correction, i.e.
    /// the conservation defect left behind by the iterative solve.
    pub mass_defect: f64,
    /// Cells whose solver noise pushed a value below zero.
    pub clamped: usize,
    /// `sum_faces F (mu_a - mu_b)` with `mu = ln u - v`; nonnegative.
    pub flux_dissipation: f64,
    /// `int ((v' - v)/dt)^2`.
    pub vt_sq: f64,
}

/// Something the scheme can run on: cell graph, cell locations and a linear
/// solver suited to the graph.
pub(crate) trait Discretization {
    fn graph(&self) -> &CellGraph;
    fn locate(&self, cell: usize) -> PolarPoint;
    fn solve(
        &self,
        op: &SpdOperator,
        b: &[f64],
        x: &mut [f64],
        tol: f64,
    ) -> Result<SolveStats, LinearSolveError>;
}

pub(crate) struct Advanced {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub stats: StepStats,
}

/// `y / (1 - e^{-y})` for `y >= 0`, i.e. `B(-y)`.
fn bernoulli_neg(y: f64) -> f64 {
    if y < 1e-10 {
        1.0 + 0.5 * y
    } else {
        y / -(-y).exp_m1()
    }
}

/// Solver noise below this fraction of the field maximum may be clamped.
const NOISE: f64 = 1e-10;

fn clamp_noise(x: &mut [f64], field: &'static str) -> Result<usize, StepError> {
    let top = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut clamped = 0;
    let mut worst = 0.0f64;
    for xi in x.iter_mut() {
        if *xi < 0.0 {
            worst = worst.min(*xi);
            *xi = 0.0;
            clamped += 1;
        }
    }
    if worst < -NOISE * top {
        return Err(StepError::Negative { field, min: worst });
    }
    Ok(clamped)
}

/// Graph Laplacian `(L x)_i = sum_f w_f (x_i - x_k)`.
fn laplacian(graph: &CellGraph, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (f, wf) in graph.faces.iter().zip(w) {
        let q = wf * (x[f.a] - x[f.b]);
        y[f.a] += q;
        y[f.b] -= q;
    }
    y
}

pub(crate) fn advance<D: Discretization + ?Sized>(
    disc: &D,
    u: &[f64],
    v: &[f64],
    dt: f64,
    scheme: &SchemeConfig,
) -> Result<Advanced, StepError> {
    let graph = disc.graph();
    let n = graph.n_cells();
    let th = scheme.theta_scheme;
    let area = &graph.area;
    let trans: Vec<f64> = graph.faces.iter().map(|f| f.trans).collect();
    let mut stats = StepStats::default();

    // Signal: (A/dt + th A) v' + th L v' = A v/dt - (1-th)(A v + L v) + A u.
    let diag_v: Vec<f64> = area.iter().map(|a| a * (1.0 / dt + th)).collect();
    let w_v: Vec<f64> = trans.iter().map(|t| th * t).collect();
    let mut rhs_v: Vec<f64> = (0..n).map(|i| area[i] * (v[i] / dt + u[i])).collect();
    if th < 1.0 {
        let lv = laplacian(graph, &trans, v);
        for i in 0..n {
            rhs_v[i] -= (1.0 - th) * (area[i] * v[i] + lv[i]);
        }
    }
    let op_v = SpdOperator::new(graph, diag_v, w_v);
    let mut v_new = v.to_vec();
    let sv = disc.solve(&op_v, &rhs_v, &mut v_new, scheme.linear_tol).map_err(StepError::Signal)?;
    op_v.constant_mode_correction(&rhs_v, &mut v_new);
    if v_new.iter().any(|x| !x.is_finite()) {
        return Err(StepError::NonFinite);
    }
    stats.iterations_v = sv.iterations;
    stats.clamped += clamp_noise(&mut v_new, "v")?;

    // Density in Slotboom form, scaled by e^{-vmax} to stay in range.
    let vmax = v_new.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let boltz: Vec<f64> = v_new.iter().map(|&x| (x - vmax).max(-700.0).exp()).collect();
    let w_sg: Vec<f64> = graph
        .faces
        .iter()
        .map(|f| {
            let (va, vb) = (v_new[f.a], v_new[f.b]);
            let lo = va.min(vb);
            f.trans * bernoulli_neg((va - vb).abs()) * (lo - vmax).max(-700.0).exp()
        })
        .collect();
    let slot_old: Vec<f64> = u.iter().zip(&boltz).map(|(x, e)| x / e).collect();
    let diag_u: Vec<f64> = (0..n).map(|i| area[i] * boltz[i] / dt).collect();
    let mut rhs_u: Vec<f64> = (0..n).map(|i| area[i] * u[i] / dt).collect();
    if th < 1.0 {
        let lw = laplacian(graph, &w_sg, &slot_old);
        for i in 0..n {
            rhs_u[i] -= (1.0 - th) * lw[i];
        }
    }
    let w_u: Vec<f64> = w_sg.iter().map(|w| th * w).collect();
    let op_u = SpdOperator::new(graph, diag_u, w_u);
    let mut slot = slot_old.clone();
    let su = disc.solve(&op_u, &rhs_u, &mut slot, scheme.linear_tol).map_err(StepError::Density)?;
    let shift = op_u.constant_mode_correction(&rhs_u, &mut slot);
    stats.iterations_u = su.iterations;

    let mut u_new: Vec<f64> = slot.iter().zip(&boltz).map(|(w, e)| w * e).collect();
    if u_new.iter().any(|x| !x.is_finite()) {
        return Err(StepError::NonFinite);
    }
    let mass_old = graph.integrate(u);
    if mass_old > 0.0 {
        let moved: f64 = (0..n).map(|i| area[i] * boltz[i]).sum::<f64>() * shift;
        stats.mass_defect = moved.abs() / mass_old;
    }
    let clamped_u = clamp_noise(&mut u_new, "u")?;
    if clamped_u > 0 && mass_old > 0.0 {
        // Only noise-level values were zeroed; restore the conserved mass.
        let s = mass_old / graph.integrate(&u_new);
        u_new.iter_mut().for_each(|x| *x *= s);
    }
    stats.clamped += clamped_u;

    // Dissipation: sum_f F (mu_a - mu_b) with F = w_sg (slot_a - slot_b).
    stats.flux_dissipation = graph
        .faces
        .iter()
        .zip(&w_sg)
        .map(|(f, w)| {
            let (a, b) = (slot[f.a].max(LOG_FLOOR), slot[f.b].max(LOG_FLOOR));
            w * (a - b) * (a.ln() - b.ln())
        })
        .sum();
    stats.vt_sq = (0..n).map(|i| area[i] * ((v_new[i] - v[i]) / dt).powi(2)).sum();

    Ok(Advanced { u: u_new, v: v_new, stats })
}

/// Step-size limit from the current signal: a drift limit
/// `cfl * min_f d_f / |grad_f v|` and, for `theta_scheme < 1`, an explicit
/// diffusion limit `cfl * h^2 / (4 (1 - theta))`. Capped by `dt_max`.
pub(crate) fn dt_limit(graph: &CellGraph, v: &[f64], scheme: &SchemeConfig) -> f64 {
    let mut dt = scheme.dt_max;
    for f in &graph.faces {
        let dv = (v[f.a] - v[f.b]).abs();
        if dv > 0.0 {
            dt = dt.min(scheme.cfl_safety * f.distance * f.distance / dv);
        }
    }
    if scheme.theta_scheme < 1.0 {
        let h = graph.min_distance();
        dt = dt.min(scheme.cfl_safety * h * h / (4.0 * (1.0 - scheme.theta_scheme)));
    }
    dt
}

/// Per-step scalars. `ext_quantity` is `int u ln u + sum_k dt_k int v_t^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub linf_u: f64,
    pub min_u: f64,
    pub energy: f64,
    /// Discrete dissipation rate of the last step (zero for the initial record).
    pub dissipation: f64,
    pub vmean: f64,
    pub ext_quantity: f64,
    pub argmax: PolarPoint,
    pub mass_defect: f64,
}

pub const CSV_HEADER: &str = "t,dt,mass_u,mass_v,linf_u,energy,vmean,ext_quantity,argmax_r,argmax_phi";

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.dt,
            self.mass_u,
            self.mass_v,
            self.linf_u,
            self.energy,
            self.vmean,
            self.ext_quantity,
            self.argmax.r,
            self.argmax.phi
        )
    }
}

pub fn trajectory_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(200 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    GlobalUpToHorizon,
    BlowUp,
    SolverFailure,
}

impl OutcomeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::GlobalUpToHorizon => "GlobalUpToHorizon",
            OutcomeKind::BlowUp => "BlowUp",
            OutcomeKind::SolverFailure => "SolverFailure",
        }
    }
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlowupReason {
    /// `max u` crossed `linf_blowup`.
    Threshold,
    /// The step size fell below `dt_min` while `max u` kept growing.
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupDecision {
    pub reason: Option<BlowupReason>,
    /// Extensibility quantity at the latest record.
    pub ext_quantity: f64,
}

impl BlowupDecision {
    pub fn is_blowup(&self) -> bool {
        self.reason.is_some()
    }
}

/// Blow-up rule over the trailing records: threshold crossing, or a step size
/// (`next_dt`) below `dt_min` while `max u` increased strictly across the last
/// `blowup_window` records.
pub fn detect_blowup_with_dt(
    history: &[DiagnosticsRecord],
    scheme: &SchemeConfig,
    next_dt: f64,
) -> BlowupDecision {
    let Some(last) = history.last() else {
        return BlowupDecision { reason: None, ext_quantity: f64::NAN };
    };
    let ext_quantity = last.ext_quantity;
    if last.linf_u >= scheme.linf_blowup {
        return BlowupDecision { reason: Some(BlowupReason::Threshold), ext_quantity };
    }
    let k = scheme.blowup_window;
    if next_dt < scheme.dt_min && history.len() >= k {
        let tail = &history[history.len() - k..];
        if tail.windows(2).all(|w| w[1].linf_u > w[0].linf_u) {
            return BlowupDecision { reason: Some(BlowupReason::StepCollapse), ext_quantity };
        }
    }
    BlowupDecision { reason: None, ext_quantity }
}

/// [`detect_blowup_with_dt`] using the step size of the latest record.
pub fn detect_blowup(history: &[DiagnosticsRecord], scheme: &SchemeConfig) -> BlowupDecision {
    let dt = history.last().map_or(f64::INFINITY, |r| r.dt);
    detect_blowup_with_dt(history, scheme, dt)
}

/// Result of a maximal-solution emulation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: OutcomeKind,
    pub t_final: f64,
    /// Cell center holding `max u` when blow-up fired.
    pub blowup_location: Option<PolarPoint>,
    pub blowup_reason: Option<BlowupReason>,
    pub trajectory: Vec<DiagnosticsRecord>,
    pub final_u: Vec<f64>,
    pub final_v: Vec<f64>,
    /// Fields at the requested output times, `(t, u, v)`.
    pub snapshots: Vec<(f64, Vec<f64>, Vec<f64>)>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn last_record(&self) -> &DiagnosticsRecord {
        self.trajectory.last().expect("trajectory holds at least the initial record")
    }

    /// Largest relative deviation of `mass_u` from its initial value.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.trajectory[0].mass_u;
        if m0 == 0.0 {
            return self.trajectory.iter().map(|r| r.mass_u.abs()).fold(0.0, f64::max);
        }
        self.trajectory.iter().map(|r| ((r.mass_u - m0) / m0).abs()).fold(0.0, f64::max)
    }

    pub fn min_density(&self) -> f64 {
        self.trajectory.iter().map(|r| r.min_u).fold(f64::INFINITY, f64::min)
    }
}

/// Recording and output-time controls for [`integrate`].
#[derive(Debug, Clone)]
pub struct RunControl {
    /// Keep every n-th accepted step in the trajectory (the first and last
    /// records are always kept).
    pub record_every: usize,
    /// Times the integrator lands on exactly and stores fields for.
    pub output_times: Vec<f64>,
    pub max_steps: usize,
}

impl Default for RunControl {
    fn default() -> Self {
        Self { record_every: 1, output_times: Vec::new(), max_steps: 5_000_000 }
    }
}

/// Growth cap on consecutive step sizes.
const DT_GROWTH: f64 = 2.0;
/// A step that multiplies `max u` by more than this is redone with half the step.
const LINF_JUMP: f64 = 2.0;

pub(crate) fn make_record<D: Discretization + ?Sized>(
    disc: &D,
    step: usize,
    t: f64,
    dt: f64,
    u: &[f64],
    v: &[f64],
    ext_integral: f64,
    stats: &StepStats,
) -> DiagnosticsRecord {
    let graph = disc.graph();
    let (linf_u, cell) = argmax(u);
    let mass_v = graph.integrate(v);
    DiagnosticsRecord {
        step,
        t,
        dt,
        mass_u: graph.integrate(u),
        mass_v,
        linf_u,
        min_u: u.iter().copied().fold(f64::INFINITY, f64::min),
        energy: energy_on(graph, u, v),
        dissipation: stats.flux_dissipation + stats.vt_sq,
        vmean: mass_v / graph.total_area(),
        ext_quantity: entropy_on(graph, u) + ext_integral,
        argmax: disc.locate(cell),
        mass_defect: stats.mass_defect,
    }
}

/// Integrates from `(u0, v0)` at `t = 0` until `scheme.t_end`, detected
/// blow-up, or solver failure.
pub(crate) fn integrate<D: Discretization + ?Sized>(
    disc: &D,
    u0: Vec<f64>,
    v0: Vec<f64>,
    scheme: &SchemeConfig,
    control: &RunControl,
) -> RunOutcome {
    let mut u = u0;
    let mut v = v0;
    let mut t = 0.0;
    let mut ext_integral = 0.0;
    let mut step = 0usize;
    let mut rejected_steps = 0usize;
    let mut dt_prev = scheme.dt0;
    let mut rejected = false;

    let first = make_record(disc, 0, 0.0, 0.0, &u, &v, 0.0, &StepStats::default());
    let mut trajectory = vec![first];
    let window = scheme.blowup_window.max(2);
    let mut history: VecDeque<DiagnosticsRecord> = VecDeque::with_capacity(window + 1);
    history.push_back(first);

    let mut outputs: Vec<f64> = control
        .output_times
        .iter()
        .copied()
        .filter(|&s| s >= 0.0 && s <= scheme.t_end)
        .collect();
    outputs.sort_by(f64::total_cmp);
    let mut snapshots = Vec::new();
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= 0.0 {
        snapshots.push((0.0, u.clone(), v.clone()));
        next_out += 1;
    }

    let finish = |kind: OutcomeKind,
                  t: f64,
                  reason: Option<BlowupReason>,
                  mut trajectory: Vec<DiagnosticsRecord>,
                  last: DiagnosticsRecord,
                  u: Vec<f64>,
                  v: Vec<f64>,
                  snapshots,
                  steps,
                  rejected_steps,
                  failure: Option<String>| {
        if trajectory.last().map(|r| r.step) != Some(last.step) {
            trajectory.push(last);
        }
        let blowup_location = (kind == OutcomeKind::BlowUp).then_some(last.argmax);
        RunOutcome {
            kind,
            t_final: t,
            blowup_location,
            blowup_reason: reason,
            trajectory,
            final_u: u,
            final_v: v,
            snapshots,
            steps,
            rejected_steps,
            failure,
        }
    };

    loop {
        let last = *history.back().unwrap();
        if t >= scheme.t_end {
            return finish(
                OutcomeKind::GlobalUpToHorizon,
                t,
                None,
                trajectory,
                last,
                u,
                v,
                snapshots,
                step,
                rejected_steps,
                None,
            );
        }
        if step >= control.max_steps {
            return finish(
                OutcomeKind::SolverFailure,
                t,
                None,
                trajectory,
                last,
                u,
                v,
                snapshots,
                step,
                rejected_steps,
                Some(format!("step budget of {} exhausted", control.max_steps)),
            );
        }

        let limit = dt_limit(disc.graph(), &v, scheme);
        let mut dt = if rejected { limit.min(0.5 * dt_prev) } else { limit.min(DT_GROWTH * dt_prev) };
        if step == 0 && !rejected {
            dt = dt.min(scheme.dt0);
        }
        if dt < scheme.dt_min {
            let hist: Vec<DiagnosticsRecord> = history.iter().copied().collect();
            let decision = detect_blowup_with_dt(&hist, scheme, dt);
            let (kind, failure) = if decision.is_blowup() {
                (OutcomeKind::BlowUp, None)
            } else {
                (
                    OutcomeKind::SolverFailure,
                    Some(format!("time step collapsed to {dt:.3e} without growth of max u")),
                )
            };
            return finish(
                kind,
                t,
                decision.reason,
                trajectory,
                last,
                u,
                v,
                snapshots,
                step,
                rejected_steps,
                failure,
            );
        }

        // Land exactly on the next output time or the horizon.
        let target = if next_out < outputs.len() { outputs[next_out].min(scheme.t_end) } else { scheme.t_end };
        let remaining = target - t;
        let hits_target = dt >= remaining * (1.0 - 1e-12);
        let dt_step = if hits_target { remaining } else { dt };

        match advance(disc, &u, &v, dt_step, scheme) {
            Ok(adv) if adv.u.iter().copied().fold(0.0, f64::max) <= LINF_JUMP * last.linf_u.max(f64::MIN_POSITIVE)
                || last.linf_u == 0.0 =>
            {
                ext_integral += adv.stats.vt_sq * dt_step;
                u = adv.u;
                v = adv.v;
                t = if hits_target { target } else { t + dt_step };
                step += 1;
                if !hits_target {
                    dt_prev = dt_step;
                }
                rejected = false;
                let rec = make_record(disc, step, t, dt_step, &u, &v, ext_integral, &adv.stats);
                if history.len() == window {
                    history.pop_front();
                }
                history.push_back(rec);
                if step.is_multiple_of(control.record_every.max(1)) {
                    trajectory.push(rec);
                }
                while next_out < outputs.len() && outputs[next_out] <= t {
                    snapshots.push((t, u.clone(), v.clone()));
                    next_out += 1;
                }
                let hist: Vec<DiagnosticsRecord> = history.iter().copied().collect();
                let decision = detect_blowup(&hist, scheme);
                if decision.is_blowup() {
                    return finish(
                        OutcomeKind::BlowUp,
                        t,
                        decision.reason,
                        trajectory,
                        rec,
                        u,
                        v,
                        snapshots,
                        step,
                        rejected_steps,
                        None,
                    );
                }
            }
            _ => {
                rejected = true;
                rejected_steps += 1;
                dt_prev = dt_step;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(linf: f64, dt: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            step: 0,
            t: 0.0,
            dt,
            mass_u: 1.0,
            mass_v: 1.0,
            linf_u: linf,
            min_u: 0.0,
            energy: 0.0,
            dissipation: 0.0,
            vmean: 0.0,
            ext_quantity: 3.0,
            argmax: PolarPoint { r: 0.0, phi: 0.0 },
            mass_defect: 0.0,
        }
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli_neg(0.0), 1.0);
        assert!((bernoulli_neg(1e-6) - (1.0 + 5e-7)).abs() < 1e-12);
        assert!((bernoulli_neg(50.0) - 50.0).abs() < 1e-12);
        // B(-y) = B(y) e^y.
        let y: f64 = 0.7;
        let b = y / y.exp_m1();
        assert!((bernoulli_neg(y) - b * y.exp()).abs() < 1e-14);
    }

    #[test]
    fn threshold_rule() {
        let scheme = SchemeConfig { linf_blowup: 1e6, ..Default::default() };
        let hist = vec![rec(1e6 * 1.1, 1e-3)];
        let d = detect_blowup(&hist, &scheme);
        assert_eq!(d.reason, Some(BlowupReason::Threshold));
        assert_eq!(d.ext_quantity, 3.0);
    }

    #[test]
    fn flat_history_is_not_blowup() {
        let scheme = SchemeConfig::default();
        let hist: Vec<_> = (0..12).map(|_| rec(5.0, scheme.dt_max)).collect();
        assert!(!detect_blowup(&hist, &scheme).is_blowup());
        // Collapse without growth is not blow-up either.
        assert!(!detect_blowup_with_dt(&hist, &scheme, 1e-20).is_blowup());
    }

    #[test]
    fn collapse_with_growth_is_blowup() {
        let scheme = SchemeConfig::default();
        let hist: Vec<_> = (0..10).map(|k| rec(10.0 + k as f64, 1e-9)).collect();
        assert!(!detect_blowup(&hist, &scheme).is_blowup());
        let d = detect_blowup_with_dt(&hist, &scheme, scheme.dt_min * 0.5);
        assert_eq!(d.reason, Some(BlowupReason::StepCollapse));
        // Needs a full window.
        let d = detect_blowup_with_dt(&hist[..5], &scheme, scheme.dt_min * 0.5);
        assert!(!d.is_blowup());
    }

    #[test]
    fn validation() {
        assert!(SchemeConfig::default().validate().is_ok());
        let bad = SchemeConfig { dt_min: 1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(SchemeConfigError::Steps { .. })));
        let bad = SchemeConfig { theta_scheme: 0.3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SchemeConfig { cfl_safety: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

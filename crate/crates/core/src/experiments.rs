//! Critical-mass bracketing, extensibility monitoring, sector-versus-disc
//! restriction runs and Trudinger-Moser gap sweeps.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::fields::{dirichlet_energy, tm_gap, Field, FieldError};
use crate::geometry::SectorMesh;
use crate::initial::{initial_fields, InitError, InitialData, SignalInit};
use crate::radial1d::{make_blowup_candidate, restrict_to_sector, run_radial, sample, RadialError, RadialMesh};
use crate::scheme::{OutcomeKind, RunControl, RunOutcome, SchemeConfig};
use crate::solver2d::run_fields;

/// Initial-data family parametrized by mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    pub data: InitialData,
    pub signal: SignalInit,
}

impl Family {
    /// Restricted radial bumps with the quasi-stationary signal.
    pub fn vertex_concentrated(concentration: f64) -> Self {
        Self {
            data: InitialData::RestrictedRadial { concentration },
            signal: SignalInit::QuasiStationary,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub mesh: Arc<SectorMesh>,
    pub family: Family,
    pub scheme: SchemeConfig,
    /// Total number of simulations, seeds included.
    pub budget: usize,
    pub seed_lower: f64,
    pub seed_upper: f64,
    /// Stop once `mass_upper - mass_lower` is at most this.
    pub target_width: f64,
    pub record_every: usize,
}

impl SweepSpec {
    /// Seeds at `0.5 * 4 theta` and `1.5 * 4 theta`, target width `0.4 * 4 theta`.
    pub fn around_prediction(mesh: Arc<SectorMesh>, family: Family, scheme: SchemeConfig, budget: usize) -> Self {
        let m = 4.0 * mesh.domain().theta();
        Self {
            mesh,
            family,
            scheme,
            budget,
            seed_lower: 0.5 * m,
            seed_upper: 1.5 * m,
            target_width: 0.4 * m,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub mass: f64,
    pub outcome: RunOutcome,
}

impl SweepRun {
    pub fn kind(&self) -> OutcomeKind {
        self.outcome.kind
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub theta: f64,
    /// Largest tested mass that stayed global up to the horizon.
    pub mass_lower: f64,
    /// Smallest tested mass that blew up.
    pub mass_upper: f64,
    pub runs: Vec<SweepRun>,
    pub predicted_critical: f64,
    /// Bracket after the seeds and after each bisection run.
    pub history: Vec<(f64, f64)>,
    pub horizon: f64,
    /// Budget ran out before the target width, or a run failed, or the seeds
    /// did not bracket.
    pub partial: bool,
    pub note: Option<String>,
}

impl SweepResult {
    pub fn width(&self) -> f64 {
        self.mass_upper - self.mass_lower
    }

    /// Position of `4 theta` in the bracket: 0 at `mass_lower`, 1 at `mass_upper`.
    pub fn relative_position(&self) -> f64 {
        (self.predicted_critical - self.mass_lower) / self.width()
    }

    /// `mass_lower < 4 theta < mass_upper`.
    pub fn brackets_prediction(&self) -> bool {
        self.mass_lower < self.predicted_critical && self.predicted_critical < self.mass_upper
    }

    /// `mass,outcome,t_final,linf_final,ext_final` rows plus a commented summary.
    pub fn csv(&self) -> String {
        let mut out = String::from("mass,outcome,t_final,linf_final,ext_final\n");
        for run in &self.runs {
            let last = run.outcome.last_record();
            let _ = writeln!(
                out,
                "{:.16e},{},{:.16e},{:.16e},{:.16e}",
                run.mass, run.outcome.kind, run.outcome.t_final, last.linf_u, last.ext_quantity
            );
        }
        out.push_str(&self.summary());
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# theta {:.16e}", self.theta);
        let _ = writeln!(out, "# horizon {:.16e} (global means global up to this time)", self.horizon);
        let _ = writeln!(out, "# bracket [{:.16e}, {:.16e}] width {:.16e}", self.mass_lower, self.mass_upper, self.width());
        let _ = writeln!(out, "# predicted 4*theta {:.16e} relative position {:.6}", self.predicted_critical, self.relative_position());
        let _ = writeln!(out, "# runs {} partial {}", self.runs.len(), self.partial);
        if let Some(note) = &self.note {
            let _ = writeln!(out, "# note {note}");
        }
        out
    }
}

fn run_mass(spec: &SweepSpec, mass: f64) -> Result<SweepRun, InitError> {
    let (u, v) = initial_fields(spec.mesh.clone(), &spec.family.data, &spec.family.signal, mass)?;
    let control = RunControl { record_every: spec.record_every, ..Default::default() };
    let outcome = run_fields(&u, &v, &spec.scheme, &control)?;
    Ok(SweepRun { mass, outcome })
}

/// Bisects on mass between a global seed and a blow-up seed. The two seeds
/// run concurrently; midpoints are geometric means. A global outcome is
/// evidence below the threshold and a blow-up outcome above it; a global run
/// above `4 theta` only says that this datum did not blow up.
pub fn critical_mass_bisect(spec: &SweepSpec) -> Result<SweepResult, InitError> {
    let theta = spec.mesh.domain().theta();
    let mut result = SweepResult {
        theta,
        mass_lower: spec.seed_lower,
        mass_upper: spec.seed_upper,
        runs: Vec::new(),
        predicted_critical: 4.0 * theta,
        history: Vec::new(),
        horizon: spec.scheme.t_end,
        partial: true,
        note: None,
    };
    if spec.budget < 2 {
        result.note = Some("budget too small to run the seeds".into());
        return Ok(result);
    }
    let (lo, hi) = rayon::join(|| run_mass(spec, spec.seed_lower), || run_mass(spec, spec.seed_upper));
    let (lo, hi) = (lo?, hi?);
    let seeds_ok = lo.kind() == OutcomeKind::GlobalUpToHorizon && hi.kind() == OutcomeKind::BlowUp;
    let seed_note = format!("seeds gave {} at {} and {} at {}", lo.kind(), lo.mass, hi.kind(), hi.mass);
    result.runs.push(lo);
    result.runs.push(hi);
    result.history.push((result.mass_lower, result.mass_upper));
    if !seeds_ok {
        result.note = Some(seed_note);
        return Ok(result);
    }

    while result.width() > spec.target_width && result.runs.len() < spec.budget {
        let mid = (result.mass_lower * result.mass_upper).sqrt();
        let run = run_mass(spec, mid)?;
        let kind = run.kind();
        result.runs.push(run);
        match kind {
            OutcomeKind::GlobalUpToHorizon => result.mass_lower = mid,
            OutcomeKind::BlowUp => result.mass_upper = mid,
            OutcomeKind::SolverFailure => {
                result.note = Some(format!("solver failure at mass {mid}"));
                return Ok(result);
            }
        }
        result.history.push((result.mass_lower, result.mass_upper));
    }
    result.partial = result.width() > spec.target_width;
    if result.partial {
        result.note = Some("budget exhausted before the target width".into());
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensibilityFlag {
    /// Blow-up fired while the quantity stayed below twice its initial value.
    BlowUpWithoutGrowth,
    /// A run reported global kept accelerating over its last records.
    GlobalButDiverging,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensibilityReport {
    pub initial: f64,
    pub max: f64,
    pub final_value: f64,
    pub flag: Option<ExtensibilityFlag>,
}

/// Number of trailing records checked for divergence of a global run.
const DIVERGENCE_WINDOW: usize = 10;

/// Cross-checks the outcome against `int u ln u + int int v_t^2`.
pub fn monitor_extensibility(outcome: &RunOutcome) -> ExtensibilityReport {
    let q: Vec<f64> = outcome.trajectory.iter().map(|r| r.ext_quantity).collect();
    let initial = q[0];
    let final_value = *q.last().unwrap();
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flag = match outcome.kind {
        OutcomeKind::BlowUp if final_value < initial + initial.abs() => Some(ExtensibilityFlag::BlowUpWithoutGrowth),
        OutcomeKind::GlobalUpToHorizon if q.len() > DIVERGENCE_WINDOW => {
            let tail = &q[q.len() - DIVERGENCE_WINDOW - 1..];
            let inc: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
            let accelerating = inc.iter().all(|&d| d > 0.0) && inc.windows(2).all(|w| w[1] >= w[0]);
            accelerating.then_some(ExtensibilityFlag::GlobalButDiverging)
        }
        _ => None,
    };
    ExtensibilityReport { initial, max, final_value, flag }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Init(#[from] InitError),
}

#[derive(Debug, Clone)]
pub struct RestrictionSpec {
    pub sector: Arc<SectorMesh>,
    pub radial: Arc<RadialMesh>,
    pub disc_mass: f64,
    pub concentration: f64,
    pub scheme: SchemeConfig,
    pub output_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotDiff {
    pub t: f64,
    /// `max |u_sector - u_radial|` with the radial solution sampled at the
    /// sector cell radii.
    pub linf: f64,
    /// `linf / max u_radial`.
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct RestrictionReport {
    pub sector: RunOutcome,
    pub radial: RunOutcome,
    pub diffs: Vec<SnapshotDiff>,
    pub sector_mass: f64,
}

impl RestrictionReport {
    pub fn same_kind(&self) -> bool {
        self.sector.kind == self.radial.kind
    }

    /// Ring index of the final sector argmax.
    pub fn sector_argmax_ring(&self, mesh: &SectorMesh) -> usize {
        let (_, cell) = crate::fields::argmax(&self.sector.final_u);
        mesh.cell_position(cell).0
    }

    pub fn max_linf(&self) -> f64 {
        self.diffs.iter().map(|d| d.linf).fold(0.0, f64::max)
    }
}

/// Runs the radial problem with the given disc mass and the sector problem
/// with its restriction, and compares them at the shared output times.
pub fn restriction_experiment(spec: &RestrictionSpec) -> Result<RestrictionReport, ExperimentError> {
    let profile = make_blowup_candidate(spec.radial.clone(), spec.disc_mass, spec.concentration)?;
    let (u0, v0) = restrict_to_sector(&profile, spec.sector.clone())?;
    let sector_mass = crate::fields::mass(&u0);
    let control = RunControl { output_times: spec.output_times.clone(), ..Default::default() };
    let (sector, radial) = rayon::join(
        || run_fields(&u0, &v0, &spec.scheme, &control),
        || run_radial(&profile, &spec.scheme, &control),
    );
    let sector = sector?;
    let radii: Vec<f64> = spec.sector.cell_centers().iter().map(|p| p.r).collect();
    let mut diffs = Vec::new();
    for (t, u2, _) in &sector.snapshots {
        let Some((_, u1, _)) = radial.snapshots.iter().find(|(s, _, _)| s == t) else {
            continue;
        };
        let sampled = sample(spec.radial.centers(), u1, &radii);
        let linf = u2.iter().zip(&sampled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let top = u1.iter().copied().fold(0.0, f64::max);
        diffs.push(SnapshotDiff { t: *t, linf, relative: linf / top });
    }
    Ok(RestrictionReport { sector, radial, diffs, sector_mass })
}

/// `2 ln((R^2 + eps^2) / (r^2 + eps^2))`, a Moser bubble centred at the vertex.
pub fn bubble(mesh: Arc<SectorMesh>, eps: f64) -> Field {
    let r2 = mesh.domain().radius().powi(2);
    let e2 = eps * eps;
    Field::from_fn(mesh, |p| 2.0 * ((r2 + e2) / (p.r * p.r + e2)).ln())
}

/// Closed form of the gap of [`bubble`] on the sector with opening `theta`
/// when the effective angle equals `theta`.
pub fn bubble_gap(theta: f64, radius: f64, eps: f64) -> f64 {
    let h2 = (eps / radius).powi(2);
    (theta * radius * radius / 2.0).ln() + 1.0 / (1.0 + h2) - 2.0 + 2.0 * h2 * (1.0 / h2).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmMember {
    pub eps: f64,
    pub dirichlet: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct TmSweep {
    pub theta_eff: f64,
    /// Ordered from flat to concentrated.
    pub members: Vec<TmMember>,
}

impl TmSweep {
    pub fn max_gap(&self) -> f64 {
        self.members.iter().map(|m| m.gap).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_{j <= k} G_j` for each member.
    pub fn running_sup(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.members
            .iter()
            .map(|m| {
                best = best.max(m.gap);
                best
            })
            .collect()
    }

    /// Least-squares slope of the gap against `ln D` over the last `k` members.
    pub fn tail_slope(&self, k: usize) -> f64 {
        let tail = &self.members[self.members.len().saturating_sub(k)..];
        let n = tail.len() as f64;
        let xs: Vec<f64> = tail.iter().map(|m| m.dirichlet.ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = tail.iter().map(|m| m.gap).sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(tail).map(|(x, m)| (x - mx) * (m.gap - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("eps,dirichlet,gap\n");
        for m in &self.members {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", m.eps, m.dirichlet, m.gap);
        }
        let _ = writeln!(out, "# theta_eff {:.16e}", self.theta_eff);
        let _ = writeln!(out, "# max_gap {:.16e}", self.max_gap());
        let _ = writeln!(out, "# tail_slope_5 {:.16e}", self.tail_slope(5));
        out
    }
}

/// Gap over bubbles with widths log-spaced from `eps_max` down to `eps_min`.
pub fn tm_family_sweep(
    mesh: Arc<SectorMesh>,
    members: usize,
    eps_max: f64,
    eps_min: f64,
    theta_eff: f64,
) -> Result<TmSweep, FieldError> {
    let ratio = (eps_min / eps_max).ln();
    let members = (0..members)
        .map(|k| {
            let s = if members > 1 { k as f64 / (members - 1) as f64 } else { 0.0 };
            let eps = eps_max * (ratio * s).exp();
            let phi = bubble(mesh.clone(), eps);
            Ok(TmMember { eps, dirichlet: dirichlet_energy(&phi), gap: tm_gap(&phi, theta_eff)? })
        })
        .collect::<Result<Vec<_>, FieldError>>()?;
    Ok(TmSweep { theta_eff, members })
}

/// Dirichlet energy of the bubble on the sector, `8 theta (ln(1 + R^2/eps^2) - R^2/(R^2 + eps^2))`.
pub fn bubble_dirichlet(theta: f64, radius: f64, eps: f64) -> f64 {
    let h2 = (eps / radius).powi(2);
    8.0 * theta * ((1.0 / h2).ln_1p() - 1.0 / (1.0 + h2))
}

/// Radial mass for a sector mass, `(2 pi / theta) m`.
pub fn disc_mass_for(theta: f64, sector_mass: f64) -> f64 {
    2.0 * PI / theta * sector_mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    #[test]
    fn zero_budget_returns_seeds() {
        let mesh = Arc::new(SectorMesh::new(DomainSpec::quarter_disc(1.0).unwrap(), 8, 4, 1.0).unwrap());
        let spec = SweepSpec::around_prediction(mesh, Family::vertex_concentrated(0.1), SchemeConfig::default(), 0);
        let r = critical_mass_bisect(&spec).unwrap();
        assert!(r.runs.is_empty());
        assert_eq!((r.mass_lower, r.mass_upper), (PI, 3.0 * PI));
        assert!(r.partial);
    }

    #[test]
    fn predicted_critical_is_four_theta() {
        let mesh = Arc::new(SectorMesh::new(DomainSpec::new(PI / 4.0, 1.0).unwrap(), 8, 4, 1.0).unwrap());
        let spec = SweepSpec::around_prediction(mesh, Family::vertex_concentrated(0.1), SchemeConfig::default(), 0);
        let r = critical_mass_bisect(&spec).unwrap();
        assert!((r.predicted_critical - PI).abs() < 1e-15);
        assert!((r.relative_position() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bubble_closed_forms_limits() {
        let area = (PI / 4.0f64).ln();
        assert!((bubble_gap(PI / 2.0, 1.0, 1e3) - area).abs() < 1e-9);
        assert!((bubble_gap(PI / 2.0, 1.0, 1e-6) - (area - 1.0)).abs() < 1e-9);
        // Scale invariance in R.
        assert!((bubble_gap(1.0, 2.0, 0.2) - bubble_gap(1.0, 1.0, 0.1) - 4f64.ln()).abs() < 1e-12);
        assert!((bubble_dirichlet(1.0, 3.0, 0.3) - bubble_dirichlet(1.0, 1.0, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn tail_slope_of_a_line() {
        let members = (1..=6)
            .map(|k| TmMember { eps: 1.0, dirichlet: (k as f64).exp(), gap: 0.5 * k as f64 + 1.0 })
            .collect();
        let s = TmSweep { theta_eff: 1.0, members };
        assert!((s.tail_slope(5) - 0.5).abs() < 1e-12);
        assert_eq!(s.running_sup().last().copied(), Some(4.0));
    }
}

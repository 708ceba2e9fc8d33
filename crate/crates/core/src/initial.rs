//! Initial data families.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::fields::{normalize_to_mass, Field, FieldError};
use crate::geometry::SectorMesh;
use crate::linalg::{LinearSolveError, SpdOperator};
use crate::radial1d::{make_blowup_candidate, restrict_to_sector, RadialError, RadialMesh};
use crate::scheme::Discretization;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    /// `u0 = mass / |Omega|`.
    Constant,
    /// `u0 ~ exp(-|x - x_c|^2 / width^2)` sampled at cell centers.
    Gaussian { center_r: f64, center_phi: f64, width: f64 },
    /// Vertex-centred radial bump on the full disc with disc mass
    /// `(2 pi / theta) * mass`, restricted to the sector.
    RestrictedRadial { concentration: f64 },
}

impl InitialData {
    pub fn kind(&self) -> &'static str {
        match self {
            InitialData::Constant => "constant",
            InitialData::Gaussian { .. } => "gaussian",
            InitialData::RestrictedRadial { .. } => "restricted_radial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalInit {
    Zero,
    Constant(f64),
    /// Solution of `-Lap v + v = u0` with zero flux.
    QuasiStationary,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error("quasi-stationary signal: {0}")]
    Signal(#[from] LinearSolveError),
    #[error("mass must be positive, got {0}")]
    Mass(f64),
}

/// Solution of `-Lap v + v = u` on the sector mesh.
pub fn quasi_stationary(u: &Field) -> Result<Field, InitError> {
    let mesh = u.mesh().clone();
    let g = mesh.graph();
    let op = SpdOperator::new(g, g.area.clone(), g.faces.iter().map(|f| f.trans).collect());
    let b: Vec<f64> = g.area.iter().zip(u.values()).map(|(a, x)| a * x).collect();
    let mut v = vec![0.0; b.len()];
    mesh.as_ref().solve(&op, &b, &mut v, 1e-13)?;
    op.constant_mode_correction(&b, &mut v);
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(Field::new(mesh, v)?)
}

/// Initial `(u0, v0)` with `int u0 = mass`.
pub fn initial_fields(
    mesh: Arc<SectorMesh>,
    data: &InitialData,
    signal: &SignalInit,
    mass: f64,
) -> Result<(Field, Field), InitError> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(InitError::Mass(mass));
    }
    let theta = mesh.domain().theta();
    let (u, restricted_v) = match *data {
        InitialData::Constant => (Field::constant(mesh.clone(), mass / mesh.total_area()), None),
        InitialData::Gaussian { center_r, center_phi, width } => {
            let c = [center_r * center_phi.cos(), center_r * center_phi.sin()];
            let bump = Field::from_fn(mesh.clone(), |p| {
                let x = p.to_cartesian();
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (-d2 / (width * width)).exp()
            });
            (normalize_to_mass(&bump, mass)?, None)
        }
        InitialData::RestrictedRadial { concentration } => {
            let radial = Arc::new(RadialMesh::matching(&mesh));
            let profile = make_blowup_candidate(radial, 2.0 * PI / theta * mass, concentration)?;
            let (u, v) = restrict_to_sector(&profile, mesh.clone())?;
            (u, Some(v))
        }
    };
    let v = match *signal {
        SignalInit::Zero => Field::zeros(mesh),
        SignalInit::Constant(c) => Field::constant(mesh, c),
        SignalInit::QuasiStationary => match restricted_v {
            Some(v) => v,
            None => quasi_stationary(&u)?,
        },
    };
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::mass;
    use crate::geometry::DomainSpec;

    fn quarter() -> Arc<SectorMesh> {
        Arc::new(SectorMesh::new(DomainSpec::quarter_disc(1.0).unwrap(), 24, 16, 1.1).unwrap())
    }

    #[test]
    fn every_family_hits_the_mass() {
        let mesh = quarter();
        let families = [
            InitialData::Constant,
            InitialData::Gaussian { center_r: 0.4, center_phi: 0.7, width: 0.2 },
            InitialData::RestrictedRadial { concentration: 0.1 },
        ];
        for d in &families {
            let (u, v) = initial_fields(mesh.clone(), d, &SignalInit::QuasiStationary, 3.0 * PI).unwrap();
            assert!((mass(&u) - 3.0 * PI).abs() < 1e-12 * 3.0 * PI, "{}", d.kind());
            assert!(u.min() >= 0.0 && v.min() >= 0.0);
            // The quasi-stationary signal carries the same integral.
            assert!((mass(&v) - 3.0 * PI).abs() < 1e-9, "{}", d.kind());
        }
    }

    #[test]
    fn constant_data_with_matching_signal() {
        let (u, v) = initial_fields(quarter(), &InitialData::Constant, &SignalInit::Constant(2.0), PI / 2.0).unwrap();
        assert!(u.values().iter().all(|&x| (x - 2.0).abs() < 1e-14));
        assert!(v.values().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn rejects_bad_mass() {
        assert!(matches!(
            initial_fields(quarter(), &InitialData::Constant, &SignalInit::Zero, -1.0),
            Err(InitError::Mass(_))
        ));
    }
}

//! Structured polar meshes of circular sectors and discs.
//!
//! Cells are annular wedges `[r_i, r_{i+1}] x [phi_j, phi_{j+1}]` with exact
//! areas `(r_{i+1}^2 - r_i^2) / 2 * dphi`. The innermost ring reaches down to
//! the vertex `r = 0`, so the vertex itself is never a degree of freedom.
//! Cell `(i, j)` (ring `i`, angular slot `j`) has linear index `i * nphi + j`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{CellGraph, GraphFace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("theta must lie in (0, 2*pi], got {0}")]
    Theta(f64),
    #[error("radius must be positive, got {0}")]
    Radius(f64),
    #[error("{name} must be at least 2, got {value}")]
    Count { name: &'static str, value: usize },
    #[error("grading must be >= 1, got {0}")]
    Grading(f64),
}

/// A circular sector `{0 < r < radius, 0 < phi < theta}`; `theta = 2*pi` is
/// the full disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    theta: f64,
    radius: f64,
}

impl DomainSpec {
    pub fn new(theta: f64, radius: f64) -> Result<Self, GeometryError> {
        // Accept a few ulps above 2*pi so that values printed with 17 digits
        // still denote the disc.
        if !(theta > 0.0 && theta <= TAU * (1.0 + 4.0 * f64::EPSILON)) {
            return Err(GeometryError::Theta(theta));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::Radius(radius));
        }
        let theta = if theta > TAU { TAU } else { theta };
        Ok(Self { theta, radius })
    }

    pub fn quarter_disc(radius: f64) -> Result<Self, GeometryError> {
        Self::new(FRAC_PI_2, radius)
    }

    pub fn disc(radius: f64) -> Result<Self, GeometryError> {
        Self::new(TAU, radius)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn is_disc(&self) -> bool {
        self.theta == TAU
    }

    /// `theta * R^2 / 2`.
    pub fn area(&self) -> f64 {
        0.5 * self.theta * self.radius * self.radius
    }

    pub fn min_interior_angle(&self) -> f64 {
        min_interior_angle(self)
    }
}

/// Smallest corner angle of the domain.
///
/// A sector has a corner of angle `theta` at the vertex and two right-angle
/// corners where the straight edges meet the arc; the disc has no corners and
/// reports `pi`.
pub fn min_interior_angle(domain: &DomainSpec) -> f64 {
    if domain.is_disc() {
        PI
    } else {
        domain.theta.min(FRAC_PI_2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// The straight edge `phi = 0`.
    RadialEdgeLow,
    /// The straight edge `phi = theta`.
    RadialEdgeHigh,
    /// The circular arc `r = R`.
    Arc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    pub r: f64,
    pub phi: f64,
}

impl PolarPoint {
    pub fn to_cartesian(self) -> [f64; 2] {
        [self.r * self.phi.cos(), self.r * self.phi.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceKind {
    /// Constant-radius face between consecutive rings.
    Radial,
    /// Constant-angle face between consecutive angular slots.
    Angular,
}

/// Interior face geometry. `normal` is the Cartesian unit normal at the face
/// midpoint, pointing from `cells.0` into `cells.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub cells: (usize, usize),
    pub kind: FaceKind,
    pub length: f64,
    pub distance: f64,
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub tag: BoundaryTag,
    pub length: f64,
}

/// Radii of the `nr + 1` ring boundaries, `0 = r_0 < ... < r_nr = radius`,
/// with ring widths growing geometrically by `grading` away from the vertex.
pub fn ring_boundaries(nr: usize, radius: f64, grading: f64) -> Vec<f64> {
    let first = if grading == 1.0 {
        radius / nr as f64
    } else {
        radius * (grading - 1.0) / (grading.powi(nr as i32) - 1.0)
    };
    let mut faces = Vec::with_capacity(nr + 1);
    faces.push(0.0);
    let mut width = first;
    let mut r = 0.0;
    for i in 0..nr {
        r = if i + 1 == nr { radius } else { r + width };
        faces.push(r);
        width *= grading;
    }
    faces
}

/// Structured annular-wedge mesh. Immutable once built.
#[derive(Debug, Clone)]
pub struct SectorMesh {
    domain: DomainSpec,
    nr: usize,
    nphi: usize,
    grading: f64,
    ring_faces: Vec<f64>,
    dphi: f64,
    cell_area: Vec<f64>,
    cell_centers: Vec<PolarPoint>,
    faces: Vec<Face>,
    boundary: Vec<BoundaryFace>,
    graph: CellGraph,
}

pub fn build_sector_mesh(
    domain: DomainSpec,
    nr: usize,
    nphi: usize,
    grading: f64,
) -> Result<SectorMesh, GeometryError> {
    SectorMesh::new(domain, nr, nphi, grading)
}

impl SectorMesh {
    pub fn new(
        domain: DomainSpec,
        nr: usize,
        nphi: usize,
        grading: f64,
    ) -> Result<Self, GeometryError> {
        if nr < 2 {
            return Err(GeometryError::Count { name: "nr", value: nr });
        }
        if nphi < 2 {
            return Err(GeometryError::Count { name: "nphi", value: nphi });
        }
        if !(grading >= 1.0 && grading.is_finite()) {
            return Err(GeometryError::Grading(grading));
        }
        // Re-validate in case the caller built the spec by hand.
        let domain = DomainSpec::new(domain.theta, domain.radius)?;

        let radius = domain.radius;
        let ring_faces = ring_boundaries(nr, radius, grading);
        let dphi = domain.theta / nphi as f64;
        let periodic = domain.is_disc();
        let idx = |i: usize, j: usize| i * nphi + j;

        let ring_center: Vec<f64> = ring_faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let slot_center: Vec<f64> = (0..nphi).map(|j| (j as f64 + 0.5) * dphi).collect();

        let mut cell_area = Vec::with_capacity(nr * nphi);
        let mut cell_centers = Vec::with_capacity(nr * nphi);
        for i in 0..nr {
            let (a, b) = (ring_faces[i], ring_faces[i + 1]);
            let area = 0.5 * (b * b - a * a) * dphi;
            for &phi in &slot_center {
                cell_area.push(area);
                cell_centers.push(PolarPoint { r: ring_center[i], phi });
            }
        }

        let mut faces = Vec::new();
        // Faces between consecutive rings.
        for i in 1..nr {
            let r = ring_faces[i];
            let distance = ring_center[i] - ring_center[i - 1];
            for (j, &phi) in slot_center.iter().enumerate() {
                faces.push(Face {
                    cells: (idx(i - 1, j), idx(i, j)),
                    kind: FaceKind::Radial,
                    length: r * dphi,
                    distance,
                    normal: [phi.cos(), phi.sin()],
                });
            }
        }
        // Faces between consecutive angular slots, plus the seam for discs.
        for i in 0..nr {
            let length = ring_faces[i + 1] - ring_faces[i];
            let distance = ring_center[i] * dphi;
            for j in 1..nphi {
                let phi = j as f64 * dphi;
                faces.push(Face {
                    cells: (idx(i, j - 1), idx(i, j)),
                    kind: FaceKind::Angular,
                    length,
                    distance,
                    normal: [-phi.sin(), phi.cos()],
                });
            }
            if periodic {
                faces.push(Face {
                    cells: (idx(i, nphi - 1), idx(i, 0)),
                    kind: FaceKind::Angular,
                    length,
                    distance,
                    normal: [0.0, 1.0],
                });
            }
        }

        let mut boundary = Vec::new();
        for j in 0..nphi {
            boundary.push(BoundaryFace {
                cell: idx(nr - 1, j),
                tag: BoundaryTag::Arc,
                length: radius * dphi,
            });
        }
        if !periodic {
            for i in 0..nr {
                let length = ring_faces[i + 1] - ring_faces[i];
                boundary.push(BoundaryFace {
                    cell: idx(i, 0),
                    tag: BoundaryTag::RadialEdgeLow,
                    length,
                });
                boundary.push(BoundaryFace {
                    cell: idx(i, nphi - 1),
                    tag: BoundaryTag::RadialEdgeHigh,
                    length,
                });
            }
        }

        let graph = CellGraph {
            area: cell_area.clone(),
            faces: faces
                .iter()
                .map(|f| GraphFace {
                    a: f.cells.0,
                    b: f.cells.1,
                    length: f.length,
                    distance: f.distance,
                    trans: f.length / f.distance,
                })
                .collect(),
        };

        Ok(Self {
            domain,
            nr,
            nphi,
            grading,
            ring_faces,
            dphi,
            cell_area,
            cell_centers,
            faces,
            boundary,
            graph,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nphi(&self) -> usize {
        self.nphi
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn n_cells(&self) -> usize {
        self.cell_area.len()
    }

    pub fn cell_index(&self, ring: usize, slot: usize) -> usize {
        ring * self.nphi + slot
    }

    /// `(ring, slot)` of a linear cell index.
    pub fn cell_position(&self, cell: usize) -> (usize, usize) {
        (cell / self.nphi, cell % self.nphi)
    }

    pub fn ring_faces(&self) -> &[f64] {
        &self.ring_faces
    }

    pub fn dphi(&self) -> f64 {
        self.dphi
    }

    pub fn cell_area(&self) -> &[f64] {
        &self.cell_area
    }

    pub fn cell_centers(&self) -> &[PolarPoint] {
        &self.cell_centers
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    pub fn graph(&self) -> &CellGraph {
        &self.graph
    }

    pub fn total_area(&self) -> f64 {
        self.cell_area.iter().sum()
    }

    pub fn max_face_length(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| f.length)
            .chain(self.boundary.iter().map(|b| b.length))
            .fold(0.0, f64::max)
    }

    /// Same domain, resolution and grading. Used to check that two fields
    /// live on compatible meshes without requiring pointer identity.
    pub fn same_layout(&self, other: &SectorMesh) -> bool {
        self.domain == other.domain
            && self.nr == other.nr
            && self.nphi == other.nphi
            && self.grading == other.grading
    }

    /// Plain-text dump: a commented header followed by one row per cell
    /// (`index r phi area`).
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# theta R nr nphi grading");
        let _ = writeln!(
            out,
            "# {:.16e} {:.16e} {} {} {:.16e}",
            self.domain.theta, self.domain.radius, self.nr, self.nphi, self.grading
        );
        let _ = writeln!(out, "# total_area {:.16e}", self.total_area());
        let _ = writeln!(out, "# index r phi area");
        for (c, (p, a)) in self.cell_centers.iter().zip(&self.cell_area).enumerate() {
            let _ = writeln!(out, "{} {:.16e} {:.16e} {:.16e}", c, p.r, p.phi, a);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn quarter(nr: usize, nphi: usize, g: f64) -> SectorMesh {
        SectorMesh::new(DomainSpec::quarter_disc(1.0).unwrap(), nr, nphi, g).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn quarter_disc_area() {
        let m = quarter(4, 4, 1.0);
        assert!(rel(m.total_area(), std::f64::consts::FRAC_PI_4) < 1e-12);
    }

    #[test]
    fn disc_area_and_tags() {
        let m = SectorMesh::new(DomainSpec::disc(2.0).unwrap(), 8, 16, 1.0).unwrap();
        assert!(rel(m.total_area(), 4.0 * PI) < 1e-12);
        assert!(m
            .boundary_faces()
            .iter()
            .all(|b| b.tag == BoundaryTag::Arc));
        assert_eq!(m.boundary_faces().len(), 16);
    }

    #[test]
    fn graded_mesh_areas() {
        let m = quarter(32, 32, 1.1);
        let inner = m.cell_area()[0];
        let outer = *m.cell_area().last().unwrap();
        assert!(inner < outer);
        // Independent sum of annular wedges: sum over rings of (b^2 - a^2)/2 * theta.
        let rf = m.ring_faces();
        let by_rings: f64 = rf
            .windows(2)
            .map(|w| 0.5 * (w[1] * w[1] - w[0] * w[0]) * FRAC_PI_2)
            .sum();
        assert!(rel(m.total_area(), FRAC_PI_2 / 2.0) < 1e-12);
        assert!(rel(by_rings, FRAC_PI_2 / 2.0) < 1e-12);
    }

    #[test]
    fn ring_boundaries_grow_geometrically() {
        let rf = ring_boundaries(10, 3.0, 1.2);
        assert_eq!(rf[0], 0.0);
        assert_eq!(*rf.last().unwrap(), 3.0);
        for i in 1..9 {
            let w0 = rf[i] - rf[i - 1];
            let w1 = rf[i + 1] - rf[i];
            assert!((w1 / w0 - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn min_angles() {
        let d = |t: f64| DomainSpec::new(t, 1.0).unwrap();
        assert_eq!(min_interior_angle(&d(FRAC_PI_2)), FRAC_PI_2);
        assert_eq!(min_interior_angle(&d(1.5 * PI)), FRAC_PI_2);
        assert_eq!(min_interior_angle(&d(TAU)), PI);
        assert_eq!(min_interior_angle(&d(0.3)), 0.3);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(DomainSpec::new(0.0, 1.0), Err(GeometryError::Theta(0.0)));
        assert!(DomainSpec::new(7.0, 1.0).is_err());
        assert!(DomainSpec::new(1.0, 0.0).is_err());
        let d = DomainSpec::quarter_disc(1.0).unwrap();
        assert!(SectorMesh::new(d, 1, 4, 1.0).is_err());
        assert!(SectorMesh::new(d, 4, 0, 1.0).is_err());
        assert!(SectorMesh::new(d, 4, 4, 0.9).is_err());
    }

    #[test]
    fn centers_inside_domain() {
        for m in [quarter(8, 6, 1.3), quarter(3, 2, 1.0)] {
            for p in m.cell_centers() {
                assert!(p.r > 0.0 && p.r < 1.0);
                assert!(p.phi > 0.0 && p.phi < FRAC_PI_2);
            }
        }
    }

    #[test]
    fn boundary_tags_are_unique_per_face() {
        let m = quarter(5, 7, 1.0);
        let mut count: HashMap<BoundaryTag, usize> = HashMap::new();
        for b in m.boundary_faces() {
            *count.entry(b.tag).or_default() += 1;
        }
        assert_eq!(count[&BoundaryTag::Arc], 7);
        assert_eq!(count[&BoundaryTag::RadialEdgeLow], 5);
        assert_eq!(count[&BoundaryTag::RadialEdgeHigh], 5);
        // Boundary length equals the perimeter (two edges plus the arc).
        let perimeter: f64 = m.boundary_faces().iter().map(|b| b.length).sum();
        assert!(rel(perimeter, 2.0 + FRAC_PI_2) < 1e-12);
        // No interior face wraps from the last slot back to the first.
        assert!(m.faces().iter().all(|f| {
            !(m.cell_position(f.cells.0).1 == 6 && m.cell_position(f.cells.1).1 == 0)
        }));
    }

    #[test]
    fn disc_is_periodic() {
        let m = SectorMesh::new(DomainSpec::disc(1.0).unwrap(), 3, 5, 1.0).unwrap();
        let seam = m
            .faces()
            .iter()
            .filter(|f| f.cells == (m.cell_index(1, 4), m.cell_index(1, 0)))
            .count();
        assert_eq!(seam, 1);
        // Every cell has exactly two angular neighbours.
        let mut deg = vec![0; m.n_cells()];
        for f in m.faces().iter().filter(|f| f.kind == FaceKind::Angular) {
            deg[f.cells.0] += 1;
            deg[f.cells.1] += 1;
        }
        assert!(deg.iter().all(|&d| d == 2));
    }

    #[test]
    fn discrete_divergence_sums_to_zero() {
        let m = quarter(6, 5, 1.2);
        let flux: Vec<f64> = (0..m.graph().faces.len())
            .map(|k| ((k * 7919) % 113) as f64 - 56.3)
            .collect();
        let total: f64 = m.graph().divergence(&flux).iter().sum();
        let scale: f64 = flux.iter().map(|q| q.abs()).sum();
        assert!(total.abs() <= 1e-14 * scale);
    }

    #[test]
    fn refinement_halves_face_length() {
        let coarse = quarter(8, 8, 1.0);
        let fine = quarter(16, 16, 1.0);
        assert!(rel(fine.total_area(), coarse.total_area()) < 1e-12);
        assert!(rel(fine.max_face_length(), 0.5 * coarse.max_face_length()) < 1e-12);
    }

    #[test]
    fn normals_are_unit() {
        let m = SectorMesh::new(DomainSpec::new(2.0, 1.5).unwrap(), 4, 4, 1.1).unwrap();
        for f in m.faces() {
            let n = f.normal[0].hypot(f.normal[1]);
            assert!((n - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn summary_lists_every_cell() {
        let m = quarter(4, 4, 1.0);
        let s = m.summary();
        let rows = s.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 16);
        assert!(s.contains("7.8539816339744"));
    }
}

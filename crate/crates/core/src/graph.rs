//! Two-point finite-volume connectivity shared by the sector and radial meshes.

/// An interior face joining two cells.
///
/// `trans` is the two-point transmissibility `length / distance`; fluxes
/// across the face are `trans * (value[a] - value[b])` for pure diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphFace {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub distance: f64,
    pub trans: f64,
}

/// Cell measures plus interior faces. Boundary faces carry zero flux and are
/// therefore absent.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub area: Vec<f64>,
    pub faces: Vec<GraphFace>,
}

impl CellGraph {
    pub fn n_cells(&self) -> usize {
        self.area.len()
    }

    pub fn total_area(&self) -> f64 {
        self.area.iter().sum()
    }

    /// `sum_i area_i * f_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.area.len());
        self.area.iter().zip(values).map(|(a, f)| a * f).sum()
    }

    /// Discrete Dirichlet energy `sum_faces trans * (f_a - f_b)^2`.
    pub fn dirichlet(&self, values: &[f64]) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let d = values[f.a] - values[f.b];
                f.trans * d * d
            })
            .sum()
    }

    /// Net outflow per cell for a face flux oriented from `a` to `b`.
    pub fn divergence(&self, face_flux: &[f64]) -> Vec<f64> {
        debug_assert_eq!(face_flux.len(), self.faces.len());
        let mut div = vec![0.0; self.n_cells()];
        for (f, q) in self.faces.iter().zip(face_flux) {
            div[f.a] += q;
            div[f.b] -= q;
        }
        div
    }

    /// Smallest center-to-center distance across any interior face.
    pub fn min_distance(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| f.distance)
            .fold(f64::INFINITY, f64::min)
    }
}

//! Bilinear quadrilateral in the (x, z) plane with generalized plane strain:
//! fields are independent of y but carry all three displacement components.
//!
//! Voigt strain with ∂/∂y = 0:
//! `S = [∂x ux, 0, ∂z uz, ∂z uy, ∂z ux + ∂x uz, ∂x uy]`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::materials::MaterialTensors;

pub type BMatrix = SMatrix<f64, 6, 12>;
pub type GradMatrix = SMatrix<f64, 3, 4>;

const NAT: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Shape functions and physical gradients at one point, with its weight × det J.
#[derive(Debug, Clone, Copy)]
pub struct ShapePoint {
    pub n: [f64; 4],
    pub dndx: [f64; 4],
    pub dndz: [f64; 4],
    pub det: f64,
    pub weight: f64,
}

pub fn shape_at(p: &[[f64; 2]; 4], xi: f64, eta: f64) -> ShapePoint {
    let mut n = [0.0; 4];
    let mut dxi = [0.0; 4];
    let mut deta = [0.0; 4];
    for a in 0..4 {
        let (xa, ea) = (NAT[a][0], NAT[a][1]);
        n[a] = 0.25 * (1.0 + xa * xi) * (1.0 + ea * eta);
        dxi[a] = 0.25 * xa * (1.0 + ea * eta);
        deta[a] = 0.25 * ea * (1.0 + xa * xi);
    }
    let (mut j11, mut j12, mut j21, mut j22) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..4 {
        j11 += dxi[a] * p[a][0];
        j12 += dxi[a] * p[a][1];
        j21 += deta[a] * p[a][0];
        j22 += deta[a] * p[a][1];
    }
    let det = j11 * j22 - j12 * j21;
    let mut dndx = [0.0; 4];
    let mut dndz = [0.0; 4];
    for a in 0..4 {
        dndx[a] = (j22 * dxi[a] - j12 * deta[a]) / det;
        dndz[a] = (-j21 * dxi[a] + j11 * deta[a]) / det;
    }
    ShapePoint {
        n,
        dndx,
        dndz,
        det,
        weight: 1.0,
    }
}

/// 2×2 Gauss points; fails on a non-positive Jacobian.
pub fn gauss_points(p: &[[f64; 2]; 4], element: usize) -> Result<[ShapePoint; 4]> {
    let g = 1.0 / 3f64.sqrt();
    let pts = [[-g, -g], [g, -g], [g, g], [-g, g]];
    let mut out = [shape_at(p, 0.0, 0.0); 4];
    for (k, q) in pts.iter().enumerate() {
        let sp = shape_at(p, q[0], q[1]);
        if sp.det <= 0.0 {
            return Err(Error::SingularElement(element));
        }
        out[k] = sp;
    }
    Ok(out)
}

pub fn strain_matrix(sp: &ShapePoint) -> BMatrix {
    let mut b = BMatrix::zeros();
    for a in 0..4 {
        let (dx, dz) = (sp.dndx[a], sp.dndz[a]);
        let c = 3 * a;
        b[(0, c)] = dx;
        b[(2, c + 2)] = dz;
        b[(3, c + 1)] = dz;
        b[(4, c)] = dz;
        b[(4, c + 2)] = dx;
        b[(5, c + 1)] = dx;
    }
    b
}

pub fn gradient_matrix(sp: &ShapePoint) -> GradMatrix {
    let mut g = GradMatrix::zeros();
    for a in 0..4 {
        g[(0, a)] = sp.dndx[a];
        g[(2, a)] = sp.dndz[a];
    }
    g
}

/// Element blocks. `k_phiphi` is negative semidefinite: the coupled system
/// reads `[K_uu K_uφ; K_uφᵀ K_φφ]`.
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    pub k_uu: SMatrix<f64, 12, 12>,
    pub k_uphi: SMatrix<f64, 12, 4>,
    pub k_phiphi: SMatrix<f64, 4, 4>,
    /// Scalar consistent mass, applied to each displacement component.
    pub mass: SMatrix<f64, 4, 4>,
}

pub fn element_matrices(p: &[[f64; 2]; 4], mat: &MaterialTensors, element: usize) -> Result<ElementMatrices> {
    let mut out = ElementMatrices {
        k_uu: SMatrix::zeros(),
        k_uphi: SMatrix::zeros(),
        k_phiphi: SMatrix::zeros(),
        mass: SMatrix::zeros(),
    };
    let et = mat.e.transpose();
    for sp in gauss_points(p, element)? {
        let w = sp.det * sp.weight;
        let b = strain_matrix(&sp);
        let g = gradient_matrix(&sp);
        out.k_uu += b.transpose() * mat.c_e * b * w;
        out.k_uphi += b.transpose() * et * g * w;
        out.k_phiphi -= g.transpose() * mat.eps_s * g * w;
        let n = SVector::<f64, 4>::from(sp.n);
        out.mass += n * n.transpose() * (mat.rho * w);
    }
    Ok(out)
}

/// Strain and potential gradient at a point from element nodal values.
pub fn fields_at(sp: &ShapePoint, u: &[f64; 12], phi: &[f64; 4]) -> (SVector<f64, 6>, SVector<f64, 3>) {
    let s = strain_matrix(sp) * SVector::<f64, 12>::from_column_slice(u);
    let g = gradient_matrix(sp) * SVector::<f64, 4>::from_column_slice(phi);
    (s, g)
}

/// Mechanical stress `T = c S + eᵀ ∇φ` (E = -∇φ).
pub fn stress(mat: &MaterialTensors, strain: &SVector<f64, 6>, grad_phi: &SVector<f64, 3>) -> SVector<f64, 6> {
    mat.c_e * strain + mat.e.transpose() * grad_phi
}

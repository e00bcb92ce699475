use super::element::{fields_at, gauss_points};
use super::modes::ModeSolution;
use super::SystemMatrices;
use crate::error::Result;
use crate::mesh::Region;

/// Elastic strain energy `½ ∫ Sᵀ c S dA` of one element for displacement `u`.
pub fn element_strain_energy(sys: &SystemMatrices, element: usize, u: &[f64]) -> Result<f64> {
    let coords = sys.element_coords(element);
    let zero_phi = vec![0.0; sys.dofs.n_phi()];
    let (ue, pe) = sys.element_fields(element, u, &zero_phi);
    let c = &sys.material(element).c_e;
    let mut energy = 0.0;
    for sp in gauss_points(&coords, element)? {
        let (s, _) = fields_at(&sp, &ue, &pe);
        energy += 0.5 * (s.transpose() * c * s)[(0, 0)] * sp.det * sp.weight;
    }
    Ok(energy)
}

/// Fraction of modal strain energy stored in the piezoelectric region:
/// `η = U_piezo / (U_piezo + U_electrodes)`.
pub fn energy_partition(mode: &ModeSolution, sys: &SystemMatrices) -> Result<f64> {
    let mut piezo = 0.0;
    let mut metal = 0.0;
    for e in 0..sys.mesh.elements.len() {
        let u = element_strain_energy(sys, e, &mode.u)?;
        if sys.mesh.region[e] == Region::Piezo {
            piezo += u;
        } else {
            metal += u;
        }
    }
    if metal == 0.0 {
        return Ok(1.0);
    }
    Ok(piezo / (piezo + metal))
}

//! Coupled piezoelectric finite-element model of one periodic IDT cell.
//!
//! Nodal unknowns are `(u_x, u_y, u_z, φ)` on a (x, z) cross-section with
//! ∂/∂y = 0. The cell is periodic in x (right edge tied to left edge). Nodes
//! touching an electrode share that electrode's potential (one master DOF per
//! net). Top and bottom surfaces are traction- and charge-free.
//!
//! Sign convention: `K_φφ = -∫ ∇Nᵀ ε ∇N` is negative semidefinite, so the
//! electrically condensed stiffness is `K* = K_uu - K_uφ K_φφ⁻¹ K_uφᵀ`.

pub mod element;
mod energy;
mod modes;
mod pairing;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Triplets};
use crate::materials::MaterialTensors;
use crate::mesh::{Mesh, Region};

pub use energy::{element_strain_energy, energy_partition};
pub use modes::{classify, mode_shape_csv, sign_changes, solve_modes, solve_spectrum, Electrical, ModeKind, ModeLabel, ModeSolution, RIGID_BODY_CUTOFF_HZ};
pub use pairing::{mac, pair_modes, ModePair, Pairing};

/// Materials assigned to mesh regions.
pub type MaterialMap = BTreeMap<Region, MaterialTensors>;

/// Piezoelectric film plus one metal shared by both electrode nets.
pub fn material_map(piezo: &MaterialTensors, electrode: &MaterialTensors) -> MaterialMap {
    let mut m = MaterialMap::new();
    m.insert(Region::Piezo, piezo.clone());
    m.insert(Region::ElectrodeA, electrode.clone());
    m.insert(Region::ElectrodeB, electrode.clone());
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    A,
    B,
}

/// Where a periodic node's potential lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    Free(usize),
    Net(Net),
}

/// Degree-of-freedom bookkeeping after periodic identification.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Mesh node → periodic node.
    pub node_to_pnode: Vec<usize>,
    pub n_pnodes: usize,
    /// Nodes per column.
    pub nzp: usize,
    /// Periodic columns.
    pub ncols: usize,
    pub potential: Vec<Potential>,
    pub n_free_phi: usize,
    pub has_nets: bool,
}

impl DofMap {
    pub fn n_u(&self) -> usize {
        3 * self.n_pnodes
    }

    pub fn n_phi(&self) -> usize {
        self.n_free_phi + if self.has_nets { 2 } else { 0 }
    }

    /// Four unknowns per periodic node, counting tied potentials once per node.
    pub fn nodal_dof_count(&self) -> usize {
        4 * self.n_pnodes
    }

    pub fn u_dof(&self, pnode: usize, comp: usize) -> usize {
        3 * pnode + comp
    }

    pub fn phi_dof(&self, pnode: usize) -> usize {
        match self.potential[pnode] {
            Potential::Free(k) => k,
            Potential::Net(Net::A) => self.n_free_phi,
            Potential::Net(Net::B) => self.n_free_phi + 1,
        }
    }

    pub fn net_dof(&self, net: Net) -> Option<usize> {
        self.has_nets.then(|| match net {
            Net::A => self.n_free_phi,
            Net::B => self.n_free_phi + 1,
        })
    }

    fn build(mesh: &Mesh) -> Self {
        let nzp = mesh.zs.len();
        let ncols = mesh.nx();
        let n_nodes = mesh.nodes.len();
        let node_to_pnode: Vec<usize> = (0..n_nodes)
            .map(|n| {
                let (i, j) = (n / nzp, n % nzp);
                (i % ncols) * nzp + j
            })
            .collect();
        let n_pnodes = ncols * nzp;
        let mut potential = vec![Potential::Free(usize::MAX); n_pnodes];
        for &n in &mesh.electrode_a_nodes {
            potential[node_to_pnode[n]] = Potential::Net(Net::A);
        }
        for &n in &mesh.electrode_b_nodes {
            potential[node_to_pnode[n]] = Potential::Net(Net::B);
        }
        let mut k = 0;
        for p in potential.iter_mut() {
            if let Potential::Free(_) = p {
                *p = Potential::Free(k);
                k += 1;
            }
        }
        DofMap {
            node_to_pnode,
            n_pnodes,
            nzp,
            ncols,
            potential,
            n_free_phi: k,
            has_nets: mesh.has_electrodes(),
        }
    }
}

/// Assembled unit-cell matrices (periodic ties already applied).
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub k_uu: CsrMatrix,
    pub k_uphi: CsrMatrix,
    /// Negative semidefinite dielectric block.
    pub k_phiphi: CsrMatrix,
    pub mass: CsrMatrix,
    pub dofs: DofMap,
    pub mesh: Mesh,
    pub materials: MaterialMap,
}

impl SystemMatrices {
    pub fn material(&self, element: usize) -> &MaterialTensors {
        &self.materials[&self.mesh.region[element]]
    }

    /// Element nodal displacements (12) and potentials (4) from global vectors.
    pub fn element_fields(&self, element: usize, u: &[f64], phi: &[f64]) -> ([f64; 12], [f64; 4]) {
        let mut ue = [0.0; 12];
        let mut pe = [0.0; 4];
        for (a, &node) in self.mesh.elements[element].iter().enumerate() {
            let p = self.dofs.node_to_pnode[node];
            for c in 0..3 {
                ue[3 * a + c] = u[self.dofs.u_dof(p, c)];
            }
            pe[a] = phi[self.dofs.phi_dof(p)];
        }
        (ue, pe)
    }

    pub fn element_coords(&self, element: usize) -> [[f64; 2]; 4] {
        self.mesh.elements[element].map(|n| self.mesh.nodes[n])
    }
}

/// Assemble the coupled system for `mesh` with `materials` per region.
pub fn assemble(mesh: &Mesh, materials: &MaterialMap) -> Result<SystemMatrices> {
    for r in &mesh.region {
        if !materials.contains_key(r) {
            return Err(Error::MissingMaterial(r.tag().to_string()));
        }
    }
    for (r, m) in materials {
        if r.is_electrode() && m.is_piezoelectric() {
            return Err(Error::InvalidMaterial(format!(
                "electrode material `{}` must have zero piezoelectric constants",
                m.name
            )));
        }
    }

    let dofs = DofMap::build(mesh);
    let (n_u, n_phi) = (dofs.n_u(), dofs.n_phi());
    let mut kuu = Triplets::new(n_u, n_u);
    let mut kup = Triplets::new(n_u, n_phi);
    let mut kpp = Triplets::new(n_phi, n_phi);
    let mut mass = Triplets::new(n_u, n_u);

    for (e, el) in mesh.elements.iter().enumerate() {
        let coords = el.map(|n| mesh.nodes[n]);
        let mat = &materials[&mesh.region[e]];
        let em = element::element_matrices(&coords, mat, e)?;
        let pn = el.map(|n| dofs.node_to_pnode[n]);
        for a in 0..4 {
            let pa = dofs.phi_dof(pn[a]);
            for b in 0..4 {
                let pb = dofs.phi_dof(pn[b]);
                kpp.push(pa, pb, em.k_phiphi[(a, b)]);
                for c in 0..3 {
                    mass.push(dofs.u_dof(pn[a], c), dofs.u_dof(pn[b], c), em.mass[(a, b)]);
                }
            }
            for ca in 0..3 {
                let ra = dofs.u_dof(pn[a], ca);
                for b in 0..4 {
                    kup.push(ra, dofs.phi_dof(pn[b]), em.k_uphi[(3 * a + ca, b)]);
                    for cb in 0..3 {
                        kuu.push(ra, dofs.u_dof(pn[b], cb), em.k_uu[(3 * a + ca, 3 * b + cb)]);
                    }
                }
            }
        }
    }

    Ok(SystemMatrices {
        k_uu: kuu.to_csr(),
        k_uphi: kup.to_csr(),
        k_phiphi: kpp.to_csr(),
        mass: mass.to_csr(),
        dofs,
        mesh: mesh.clone(),
        materials: materials.clone(),
    })
}

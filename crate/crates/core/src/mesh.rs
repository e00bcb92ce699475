//! Structured quadrilateral mesh of one electrical period of the recessed-IDT
//! cross-section.
//!
//! Layout along x over one period `[0, 2 (w_p + w_m)]`:
//! electrode A `[0, w_m]`, gap, electrode B `[w_m + w_p, 2 w_m + w_p]`, gap.
//! Electrodes fill `z in [t_film - t_recess, t_film]` under their footprint;
//! the film underneath them stays piezoelectric.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCellGeometry {
    /// Film thickness (m).
    pub t_film: f64,
    /// Electrode recess depth measured from the top surface (m).
    pub t_recess: f64,
    /// Piezoelectric gap between adjacent electrode edges (m).
    pub w_p: f64,
    /// Electrode width (m).
    pub w_m: f64,
}

impl UnitCellGeometry {
    /// 100 nm film, 80 nm recess, 2 µm gap, electrode width `ratio * w_p`.
    pub fn reference(ratio: f64) -> Self {
        UnitCellGeometry {
            t_film: 100e-9,
            t_recess: 80e-9,
            w_p: 2e-6,
            w_m: ratio * 2e-6,
        }
    }

    /// Electrical period (two electrodes of opposite polarity).
    pub fn period(&self) -> f64 {
        2.0 * (self.w_p + self.w_m)
    }

    pub fn ratio(&self) -> f64 {
        self.w_m / self.w_p
    }

    pub fn check(&self) -> Result<()> {
        let all_finite = [self.t_film, self.t_recess, self.w_p, self.w_m]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::DegenerateGeometry("non-finite dimension".into()));
        }
        if !(self.t_recess > 0.0 && self.t_recess < self.t_film) {
            return Err(Error::DegenerateGeometry(format!(
                "need 0 < t_recess ({:e}) < t_film ({:e})",
                self.t_recess, self.t_film
            )));
        }
        if self.w_p <= 0.0 {
            return Err(Error::DegenerateGeometry("w_p must be positive".into()));
        }
        if self.w_m < 0.0 {
            return Err(Error::DegenerateGeometry("w_m must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Piezo,
    ElectrodeA,
    ElectrodeB,
}

impl Region {
    pub fn tag(&self) -> &'static str {
        match self {
            Region::Piezo => "piezo",
            Region::ElectrodeA => "electrode_a",
            Region::ElectrodeB => "electrode_b",
        }
    }

    pub fn is_electrode(&self) -> bool {
        !matches!(self, Region::Piezo)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub geometry: UnitCellGeometry,
    /// Node coordinates (x, z) in metres.
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node indices.
    pub elements: Vec<[usize; 4]>,
    pub region: Vec<Region>,
    /// Grid lines; node `(i, j)` has index `i * (zs.len()) + j`.
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub electrode_a_nodes: Vec<usize>,
    pub electrode_b_nodes: Vec<usize>,
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn nz(&self) -> usize {
        self.zs.len() - 1
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i * self.zs.len() + j
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        i * self.nz() + j
    }

    pub fn element_area(&self, el: usize) -> f64 {
        let p = self.elements[el].map(|n| self.nodes[n]);
        let mut a = 0.0;
        for k in 0..4 {
            let (x0, z0) = (p[k][0], p[k][1]);
            let (x1, z1) = (p[(k + 1) % 4][0], p[(k + 1) % 4][1]);
            a += x0 * z1 - x1 * z0;
        }
        0.5 * a
    }

    pub fn region_area(&self, r: Region) -> f64 {
        (0..self.elements.len())
            .filter(|&e| self.region[e] == r)
            .map(|e| self.element_area(e))
            .sum()
    }

    pub fn has_electrodes(&self) -> bool {
        !self.electrode_a_nodes.is_empty()
    }

    /// `id,x_m,z_m` per node.
    pub fn nodes_csv(&self) -> String {
        let mut s = String::from("id,x_m,z_m\n");
        for (i, p) in self.nodes.iter().enumerate() {
            s.push_str(&format!("{},{:e},{:e}\n", i, p[0], p[1]));
        }
        s
    }

    /// `id,n0,n1,n2,n3,region` per element.
    pub fn elements_csv(&self) -> String {
        let mut s = String::from("id,n0,n1,n2,n3,region\n");
        for (i, el) in self.elements.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i,
                el[0],
                el[1],
                el[2],
                el[3],
                self.region[i].tag()
            ));
        }
        s
    }
}

fn subdivide(out: &mut Vec<f64>, start: f64, end: f64, n: usize) {
    for k in 1..=n {
        out.push(if k == n {
            end
        } else {
            start + (end - start) * k as f64 / n as f64
        });
    }
}

fn count_for(length_m: f64, per_micron: f64) -> usize {
    ((length_m * 1e6 * per_micron) - 1e-9).ceil().max(1.0) as usize
}

/// Mesh one period. `nx_per_micron` sets the lateral element density of every
/// segment; `nz` is the number of element layers through the film.
pub fn build_unit_cell(geom: &UnitCellGeometry, nx_per_micron: f64, nz: usize) -> Result<Mesh> {
    geom.check()?;
    if nz < 5 {
        return Err(Error::ResolutionTooCoarse(format!(
            "need at least 5 layers through the thickness, got {nz}"
        )));
    }
    if !(nx_per_micron.is_finite() && nx_per_micron > 0.0) {
        return Err(Error::ResolutionTooCoarse("lateral density must be positive".into()));
    }

    let (w_p, w_m) = (geom.w_p, geom.w_m);
    let electrodes = w_m > 0.0;
    // (end x, region of the segment's upper layer)
    let segments: Vec<(f64, Region)> = if electrodes {
        vec![
            (w_m, Region::ElectrodeA),
            (w_m + w_p, Region::Piezo),
            (2.0 * w_m + w_p, Region::ElectrodeB),
            (geom.period(), Region::Piezo),
        ]
    } else {
        vec![(w_p, Region::Piezo), (2.0 * w_p, Region::Piezo)]
    };

    let mut xs = vec![0.0];
    let mut seg_of_column = Vec::new();
    let mut start = 0.0;
    for (k, &(end, _)) in segments.iter().enumerate() {
        let n = count_for(end - start, nx_per_micron);
        if electrodes && n < 4 {
            return Err(Error::ResolutionTooCoarse(format!(
                "segment {k} of width {:e} m gets {n} elements; need at least 4",
                end - start
            )));
        }
        subdivide(&mut xs, start, end, n);
        seg_of_column.extend(std::iter::repeat_n(k, n));
        start = end;
    }

    let z_split = geom.t_film - geom.t_recess;
    let n_top = ((nz as f64 * geom.t_recess / geom.t_film).round() as usize).clamp(1, nz - 1);
    let n_bot = nz - n_top;
    let mut zs = vec![0.0];
    subdivide(&mut zs, 0.0, z_split, n_bot);
    subdivide(&mut zs, z_split, geom.t_film, n_top);

    let nzp = zs.len();
    let mut nodes = Vec::with_capacity(xs.len() * nzp);
    for &x in &xs {
        for &z in &zs {
            nodes.push([x, z]);
        }
    }
    let nx = xs.len() - 1;
    let mut elements = Vec::with_capacity(nx * nz);
    let mut region = Vec::with_capacity(nx * nz);
    for (i, &seg) in seg_of_column.iter().enumerate() {
        for j in 0..nz {
            let n0 = i * nzp + j;
            elements.push([n0, n0 + nzp, n0 + nzp + 1, n0 + 1]);
            let upper = j >= n_bot;
            region.push(if upper { segments[seg].1 } else { Region::Piezo });
        }
    }

    let mut electrode_a_nodes = Vec::new();
    let mut electrode_b_nodes = Vec::new();
    for (e, el) in elements.iter().enumerate() {
        match region[e] {
            Region::ElectrodeA => electrode_a_nodes.extend_from_slice(el),
            Region::ElectrodeB => electrode_b_nodes.extend_from_slice(el),
            Region::Piezo => {}
        }
    }
    for v in [&mut electrode_a_nodes, &mut electrode_b_nodes] {
        v.sort_unstable();
        v.dedup();
    }

    Ok(Mesh {
        geometry: *geom,
        left: (0..nzp).collect(),
        right: (nx * nzp..(nx + 1) * nzp).collect(),
        nodes,
        elements,
        region,
        xs,
        zs,
        electrode_a_nodes,
        electrode_b_nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    pub min_jacobian: f64,
    pub max_aspect_ratio: f64,
}

/// Aspect ratios above this trigger a warning in the CLI.
pub const ASPECT_WARNING: f64 = 50.0;

/// Jacobian determinant of the bilinear map at each corner of a quad.
pub fn corner_jacobians(p: &[[f64; 2]; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for k in 0..4 {
        let prev = p[(k + 3) % 4];
        let next = p[(k + 1) % 4];
        let here = p[k];
        let a = [next[0] - here[0], next[1] - here[1]];
        let b = [prev[0] - here[0], prev[1] - here[1]];
        // quarter of the parallelogram spanned at the corner
        out[k] = 0.25 * (a[0] * b[1] - a[1] * b[0]);
    }
    out
}

pub fn mesh_quality(mesh: &Mesh) -> MeshQuality {
    let mut min_j = f64::INFINITY;
    let mut max_ar: f64 = 0.0;
    for el in &mesh.elements {
        let p = el.map(|n| mesh.nodes[n]);
        for j in corner_jacobians(&p) {
            min_j = min_j.min(j);
        }
        let lens: Vec<f64> = (0..4)
            .map(|k| {
                let a = p[k];
                let b = p[(k + 1) % 4];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .collect();
        let lmax = lens.iter().cloned().fold(0.0, f64::max);
        let lmin = lens.iter().cloned().fold(f64::INFINITY, f64::min);
        max_ar = max_ar.max(lmax / lmin);
    }
    MeshQuality {
        min_jacobian: min_j,
        max_aspect_ratio: max_ar,
    }
}

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::element::{fields_at, shape_at, stress};
use super::{Net, Potential, SystemMatrices};
use crate::error::{Error, Result};
use crate::linalg::{eigs_in_interval, BorderedBandLu, EigenPair, KrylovOptions, ShiftInvert, Triplets};

/// Modes below this frequency are treated as rigid-body motion.
pub const RIGID_BODY_CUTOFF_HZ: f64 = 1e6;

/// Electrode boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Electrical {
    /// Both nets grounded: resonance.
    Short,
    /// Nets left floating with zero net charge: antiresonance.
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeKind {
    S0,
    SH0,
    Flexural,
    Other,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::S0 => "S0",
            ModeKind::SH0 => "SH0",
            ModeKind::Flexural => "Flexural",
            ModeKind::Other => "Other",
        })
    }
}

impl std::str::FromStr for ModeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S0" => Ok(ModeKind::S0),
            "SH0" => Ok(ModeKind::SH0),
            "Flexural" => Ok(ModeKind::Flexural),
            "Other" => Ok(ModeKind::Other),
            _ => Err(Error::Config(format!("unknown mode kind `{s}`"))),
        }
    }
}

/// Mode family and harmonic order (1 = fundamental, 3 = first odd overtone).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeLabel {
    pub kind: ModeKind,
    pub order: u32,
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.order <= 1 {
            write!(f, "{} fundamental", self.kind)
        } else {
            write!(f, "{} overtone-{}", self.kind, self.order)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub frequency: f64,
    pub electrical: Electrical,
    /// Mass-normalized displacement over periodic nodes (3 per node).
    pub u: Vec<f64>,
    /// Potential over the system's φ unknowns (V per unit modal amplitude).
    pub phi: Vec<f64>,
    /// Kinetic-energy fractions along x, y, z.
    pub polarization: [f64; 3],
    pub midline_x: Vec<f64>,
    pub sigma_xx_midline: Vec<f64>,
    pub sigma_xy_midline: Vec<f64>,
    pub label: ModeLabel,
}

struct PiezoOperator<'a> {
    sys: &'a SystemMatrices,
    lu: BorderedBandLu,
    /// Full unknown (u then active φ) → permuted slot.
    perm: Vec<usize>,
    n_band: usize,
    /// φ dof → index among active φ unknowns.
    phi_active: Vec<Option<usize>>,
    n_active: usize,
    scale: f64,
}

fn ring_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    if n == 0 {
        return order;
    }
    order.push(0);
    let (mut lo, mut hi) = (1, n - 1);
    while lo <= hi {
        order.push(lo);
        if hi != lo {
            order.push(hi);
        }
        lo += 1;
        hi -= 1;
    }
    order
}

impl<'a> PiezoOperator<'a> {
    fn new(sys: &'a SystemMatrices, electrical: Electrical, sigma: f64) -> Result<Self> {
        let d = &sys.dofs;
        let n_u = d.n_u();
        let n_phi = d.n_phi();

        let mut grounded = vec![false; n_phi];
        if let (Some(a), Some(b)) = (d.net_dof(Net::A), d.net_dof(Net::B)) {
            grounded[a] = true;
            if electrical == Electrical::Short {
                grounded[b] = true;
            }
        } else if n_phi > 0 {
            // no electrodes: fix the undetermined potential level
            grounded[0] = true;
        }
        let mut phi_active = vec![None; n_phi];
        let mut n_active = 0;
        for (k, g) in grounded.iter().enumerate() {
            if !g {
                phi_active[k] = Some(n_active);
                n_active += 1;
            }
        }
        let border_phi = match electrical {
            Electrical::Float => d.net_dof(Net::B),
            Electrical::Short => None,
        };

        // band positions: columns in ring order, nodes bottom-up, (ux, uy, uz, φ)
        let total = n_u + n_active;
        let mut perm = vec![usize::MAX; total];
        let mut next = 0;
        for col in ring_order(d.ncols) {
            for j in 0..d.nzp {
                let p = col * d.nzp + j;
                for c in 0..3 {
                    perm[d.u_dof(p, c)] = next;
                    next += 1;
                }
                if let Potential::Free(k) = d.potential[p] {
                    if let Some(a) = phi_active[k] {
                        perm[n_u + a] = next;
                        next += 1;
                    }
                }
            }
        }
        let n_band = next;
        if let Some(b) = border_phi {
            perm[n_u + phi_active[b].expect("floating net is active")] = n_band;
        }
        debug_assert!(perm.iter().all(|&p| p != usize::MAX));

        let kdiag = (0..n_u).map(|i| sys.k_uu.get(i, i).abs()).fold(0.0, f64::max);
        let pdiag = (0..n_phi).map(|i| sys.k_phiphi.get(i, i).abs()).fold(0.0, f64::max);
        let scale = if pdiag > 0.0 { (kdiag / pdiag).sqrt() } else { 1.0 };

        let mut t = Triplets::new(total, total);
        for r in 0..n_u {
            for (c, v) in sys.k_uu.row(r) {
                t.push(r, c, v);
            }
            for (c, v) in sys.mass.row(r) {
                t.push(r, c, -sigma * v);
            }
            for (c, v) in sys.k_uphi.row(r) {
                if let Some(a) = phi_active[c] {
                    t.push(r, n_u + a, v * scale);
                    t.push(n_u + a, r, v * scale);
                }
            }
        }
        for r in 0..n_phi {
            let Some(ar) = phi_active[r] else { continue };
            for (c, v) in sys.k_phiphi.row(r) {
                if let Some(ac) = phi_active[c] {
                    t.push(n_u + ar, n_u + ac, v * scale * scale);
                }
            }
        }
        let lu = BorderedBandLu::factor(&t.to_csr(), &perm, n_band)?;
        Ok(PiezoOperator {
            sys,
            lu,
            perm,
            n_band,
            phi_active,
            n_active,
            scale,
        })
    }
}

impl ShiftInvert for PiezoOperator<'_> {
    fn dim(&self) -> usize {
        self.sys.dofs.n_u()
    }

    fn apply(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n_u = self.dim();
        let total = n_u + self.n_active;
        let mx = self.sys.mass.mul_vec(x);
        let mut band = vec![0.0; self.n_band];
        let mut border = vec![0.0; total - self.n_band];
        for (i, v) in mx.iter().enumerate() {
            let p = self.perm[i];
            if p < self.n_band {
                band[p] = *v;
            } else {
                border[p - self.n_band] = *v;
            }
        }
        let (yb, yr) = self.lu.solve(&band, &border);
        let pick = |i: usize| {
            let p = self.perm[i];
            if p < self.n_band {
                yb[p]
            } else {
                yr[p - self.n_band]
            }
        };
        let u: Vec<f64> = (0..n_u).map(pick).collect();
        let phi: Vec<f64> = self
            .phi_active
            .iter()
            .map(|a| a.map_or(0.0, |a| pick(n_u + a) * self.scale))
            .collect();
        (u, phi)
    }

    fn mass_mul(&self, x: &[f64]) -> Vec<f64> {
        self.sys.mass.mul_vec(x)
    }
}

/// Raw eigenpairs `ω²` of the condensed pencil in `[lambda_lo, lambda_hi]`,
/// rigid-body modes included.
pub fn solve_spectrum(
    sys: &SystemMatrices,
    electrical: Electrical,
    lambda_lo: f64,
    lambda_hi: f64,
) -> Result<Vec<EigenPair>> {
    if !(lambda_hi > lambda_lo) {
        return Err(Error::Domain("empty eigenvalue interval".into()));
    }
    // shift slightly off-centre so it never sits on a symmetric-cell eigenvalue
    let sigma = lambda_lo + 0.4837 * (lambda_hi - lambda_lo);
    let op = PiezoOperator::new(sys, electrical, sigma)?;
    eigs_in_interval(&op, sigma, lambda_lo, lambda_hi, &KrylovOptions::default())
}

/// Modes of the cell with frequencies in `f_window` (Hz), lowest first, at
/// most `n_modes`. Rigid-body modes are removed.
pub fn solve_modes(
    sys: &SystemMatrices,
    electrical: Electrical,
    f_window: (f64, f64),
    n_modes: usize,
) -> Result<Vec<ModeSolution>> {
    let (f_min, f_max) = f_window;
    if !(f_max > f_min && f_max > 0.0) {
        return Err(Error::Domain(format!("bad frequency window {f_min}..{f_max}")));
    }
    let w = |f: f64| (2.0 * PI * f).powi(2);
    let lo = if f_min < RIGID_BODY_CUTOFF_HZ {
        -w(RIGID_BODY_CUTOFF_HZ)
    } else {
        w(f_min)
    };
    let hi = w(f_max);
    let pairs = solve_spectrum(sys, electrical, lo, hi)?;
    let scale = pairs.iter().map(|p| p.lambda.abs()).fold(hi, f64::max);
    if let Some(bad) = pairs.iter().find(|p| p.lambda < -1e-6 * scale) {
        return Err(Error::EigSolverFailure(format!(
            "negative eigenvalue {:e} in a definite pencil",
            bad.lambda
        )));
    }
    let mut out = Vec::new();
    for p in pairs {
        let f = p.lambda.max(0.0).sqrt() / (2.0 * PI);
        if f < RIGID_BODY_CUTOFF_HZ || f < f_min || f > f_max {
            continue;
        }
        out.push(build_mode(sys, electrical, f, p.vector, p.secondary));
        if out.len() == n_modes {
            break;
        }
    }
    Ok(out)
}

fn build_mode(sys: &SystemMatrices, electrical: Electrical, f: f64, u: Vec<f64>, phi: Vec<f64>) -> ModeSolution {
    let mu = sys.mass.mul_vec(&u);
    let mut pol = [0.0; 3];
    for (i, (a, b)) in u.iter().zip(&mu).enumerate() {
        pol[i % 3] += a * b;
    }
    let total: f64 = pol.iter().sum();
    pol.iter_mut().for_each(|p| *p /= total);
    let (midline_x, sxx, sxy) = midline_stress(sys, &u, &phi);
    let mut mode = ModeSolution {
        frequency: f,
        electrical,
        u,
        phi,
        polarization: pol,
        midline_x,
        sigma_xx_midline: sxx,
        sigma_xy_midline: sxy,
        label: ModeLabel {
            kind: ModeKind::Other,
            order: 0,
        },
    };
    mode.label = classify(&mode);
    mode
}

/// σxx and σxy sampled at z = t/2, one sample per element column.
pub(crate) fn midline_stress(sys: &SystemMatrices, u: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mesh = &sys.mesh;
    let zmid = 0.5 * mesh.geometry.t_film;
    let j = (0..mesh.nz())
        .find(|&j| mesh.zs[j] <= zmid && zmid <= mesh.zs[j + 1])
        .unwrap_or(0);
    let eta = 2.0 * (zmid - mesh.zs[j]) / (mesh.zs[j + 1] - mesh.zs[j]) - 1.0;
    let mut xs = Vec::with_capacity(mesh.nx());
    let mut sxx = Vec::with_capacity(mesh.nx());
    let mut sxy = Vec::with_capacity(mesh.nx());
    for i in 0..mesh.nx() {
        let e = mesh.element_index(i, j);
        let coords = sys.element_coords(e);
        let sp = shape_at(&coords, 0.0, eta);
        let (ue, pe) = sys.element_fields(e, u, phi);
        let (s, g) = fields_at(&sp, &ue, &pe);
        let t = stress(sys.material(e), &s, &g);
        xs.push(0.5 * (mesh.xs[i] + mesh.xs[i + 1]));
        sxx.push(t[0]);
        sxy.push(t[5]);
    }
    (xs, sxx, sxy)
}

/// Cyclic sign changes of a periodic sample sequence, ignoring samples below
/// 1e-3 of its peak magnitude.
pub fn sign_changes(samples: &[f64]) -> usize {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0;
    }
    let signs: Vec<bool> = samples
        .iter()
        .filter(|v| v.abs() >= 1e-3 * peak)
        .map(|v| *v > 0.0)
        .collect();
    if signs.len() < 2 {
        return 0;
    }
    (0..signs.len())
        .filter(|&k| signs[k] != signs[(k + 1) % signs.len()])
        .count()
}

/// Label from polarization and the midline stress pattern.
pub fn classify(mode: &ModeSolution) -> ModeLabel {
    let [px, py, pz] = mode.polarization;
    let kind = if py > 0.5 {
        ModeKind::SH0
    } else if px > 0.5 && px > pz {
        ModeKind::S0
    } else if pz > 0.5 {
        ModeKind::Flexural
    } else {
        ModeKind::Other
    };
    // shear-horizontal modes carry their wave pattern in σxy; σxx is parasitic
    let samples = if kind == ModeKind::SH0 {
        &mode.sigma_xy_midline
    } else {
        &mode.sigma_xx_midline
    };
    let changes = sign_changes(samples);
    let order = if changes <= 2 { 1 } else { changes.div_ceil(2) as u32 };
    ModeLabel { kind, order }
}

/// Nodal CSV of a mode: `x_m,z_m,u_x,u_y,u_z,phi_v,sigma_xx_pa,midline`.
/// `sigma_xx_pa` averages the element corner values; `midline` is 1 on the
/// node row at z = t/2, when the grid has one.
pub fn mode_shape_csv(sys: &SystemMatrices, mode: &ModeSolution) -> String {
    let mesh = &sys.mesh;
    let mut acc = vec![0.0; mesh.nodes.len()];
    let mut cnt = vec![0usize; mesh.nodes.len()];
    let corners = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    for (e, el) in mesh.elements.iter().enumerate() {
        let coords = sys.element_coords(e);
        let (ue, pe) = sys.element_fields(e, &mode.u, &mode.phi);
        for (a, &node) in el.iter().enumerate() {
            let sp = shape_at(&coords, corners[a][0], corners[a][1]);
            let (s, g) = fields_at(&sp, &ue, &pe);
            acc[node] += stress(sys.material(e), &s, &g)[0];
            cnt[node] += 1;
        }
    }
    let zmid = 0.5 * mesh.geometry.t_film;
    let tol = 1e-9 * mesh.geometry.t_film;
    let mut out = String::from("x_m,z_m,u_x,u_y,u_z,phi_v,sigma_xx_pa,midline\n");
    for (n, p) in mesh.nodes.iter().enumerate() {
        let pn = sys.dofs.node_to_pnode[n];
        let u = |c| mode.u[sys.dofs.u_dof(pn, c)];
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
            p[0],
            p[1],
            u(0),
            u(1),
            u(2),
            mode.phi[sys.dofs.phi_dof(pn)],
            acc[n] / cnt[n].max(1) as f64,
            u8::from((p[1] - zmid).abs() < tol)
        ));
    }
    out
}

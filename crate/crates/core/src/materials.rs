//! Anisotropic material constants and their rotation into a device frame.
//!
//! Tensors are stored in Voigt notation (index order xx, yy, zz, yz, xz, xy).
//! Orientation uses Z-X-Z Euler angles: the device axes are obtained from the
//! crystal axes by rotating `phi` about Z, then `theta` about the new X, then
//! `psi` about the new Z. [`rotation_matrix`] returns the active matrix whose
//! columns are the device axes expressed in crystal coordinates; tensors are
//! transformed with its transpose (a passive change of basis).

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen};

use crate::error::{Error, Result};

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.8541878128e-12;

const SYMMETRY_TOL: f64 = 1e-9;

/// Constants of one material in its own (crystal) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTensors {
    pub name: String,
    /// Stiffness at constant electric field (Pa).
    pub c_e: Matrix6<f64>,
    /// Piezoelectric stress constants (C/m²).
    pub e: Matrix3x6<f64>,
    /// Clamped permittivity (F/m).
    pub eps_s: Matrix3<f64>,
    /// Mass density (kg/m³).
    pub rho: f64,
    pub source: Option<String>,
}

impl MaterialTensors {
    /// Isotropic, non-piezoelectric solid from Young's modulus and Poisson ratio.
    pub fn isotropic(name: &str, youngs: f64, poisson: f64, rho: f64) -> Self {
        let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = youngs / (2.0 * (1.0 + poisson));
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = lambda;
            }
            c[(i, i)] = lambda + 2.0 * mu;
            c[(i + 3, i + 3)] = mu;
        }
        MaterialTensors {
            name: name.to_string(),
            c_e: c,
            e: Matrix3x6::zeros(),
            eps_s: Matrix3::identity() * EPS0,
            rho,
            source: None,
        }
    }

    pub fn is_piezoelectric(&self) -> bool {
        self.e.iter().any(|v| *v != 0.0)
    }

    /// Copy with every piezoelectric coefficient multiplied by `s`.
    pub fn with_piezo_scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.e *= s;
        out
    }
}

/// One broken invariant reported by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite(&'static str),
    NonPositiveDensity(f64),
    StiffnessAsymmetric { row: usize, col: usize },
    StiffnessNotPositiveDefinite { min_eigenvalue: f64 },
    PermittivityAsymmetric { row: usize, col: usize },
    PermittivityNotPositiveDefinite { min_eigenvalue: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite(what) => write!(f, "{what} has non-finite entries"),
            Violation::NonPositiveDensity(rho) => write!(f, "density {rho} is not positive"),
            Violation::StiffnessAsymmetric { row, col } => {
                write!(f, "cE not symmetric at ({}, {})", row + 1, col + 1)
            }
            Violation::StiffnessNotPositiveDefinite { min_eigenvalue } => {
                write!(f, "cE not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::PermittivityAsymmetric { row, col } => {
                write!(f, "epsS not symmetric at ({}, {})", row + 1, col + 1)
            }
            Violation::PermittivityNotPositiveDefinite { min_eigenvalue } => {
                write!(f, "epsS not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
        }
    }
}

/// Z-X-Z Euler angles in degrees, normalized to (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

fn normalize_deg(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r <= -180.0 {
        r += 360.0;
    } else if r > 180.0 {
        r -= 360.0;
    }
    r
}

impl EulerAngles {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Result<Self> {
        if !(phi.is_finite() && theta.is_finite() && psi.is_finite()) {
            return Err(Error::Domain("Euler angles must be finite".into()));
        }
        Ok(EulerAngles {
            phi: normalize_deg(phi),
            theta: normalize_deg(theta),
            psi: normalize_deg(psi),
        })
    }

    pub fn zero() -> Self {
        EulerAngles {
            phi: 0.0,
            theta: 0.0,
            psi: 0.0,
        }
    }

    /// Angles undoing this rotation: (-psi, -theta, -phi).
    pub fn inverse(&self) -> Self {
        EulerAngles {
            phi: normalize_deg(-self.psi),
            theta: normalize_deg(-self.theta),
            psi: normalize_deg(-self.phi),
        }
    }
}

fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Active rotation `Rz(phi) Rx(theta) Rz(psi)`; column k is device axis k in
/// crystal coordinates.
pub fn rotation_matrix(angles: EulerAngles) -> Matrix3<f64> {
    rot_z(angles.phi) * rot_x(angles.theta) * rot_z(angles.psi)
}

const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Bond stress-transformation matrix for the passive direction-cosine matrix `a`
/// (rows are new axes in old coordinates).
pub fn bond_matrix(a: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for (r, &(i, j)) in VOIGT.iter().enumerate() {
        for (c, &(k, l)) in VOIGT.iter().enumerate() {
            m[(r, c)] = if k == l {
                a[(i, k)] * a[(j, k)]
            } else {
                a[(i, k)] * a[(j, l)] + a[(i, l)] * a[(j, k)]
            };
        }
    }
    m
}

/// Express the tensors in the device frame given by `angles`.
pub fn rotate_tensors(mat: &MaterialTensors, angles: EulerAngles) -> Result<MaterialTensors> {
    let violations = validate(mat);
    if !violations.is_empty() {
        return Err(Error::InvalidMaterial(format!(
            "{}: {}",
            mat.name,
            join_violations(&violations)
        )));
    }
    let a = rotation_matrix(angles).transpose();
    let m = bond_matrix(&a);
    let mut c = m * mat.c_e * m.transpose();
    let mut eps = a * mat.eps_s * a.transpose();
    symmetrize6(&mut c);
    symmetrize3(&mut eps);
    Ok(MaterialTensors {
        name: mat.name.clone(),
        c_e: c,
        e: a * mat.e * m.transpose(),
        eps_s: eps,
        rho: mat.rho,
        source: mat.source.clone(),
    })
}

fn symmetrize6(m: &mut Matrix6<f64>) {
    *m = (*m + m.transpose()) * 0.5;
}

fn symmetrize3(m: &mut Matrix3<f64>) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Check the material invariants; an empty list means the material is usable.
pub fn validate(mat: &MaterialTensors) -> Vec<Violation> {
    let mut out = Vec::new();
    if !mat.c_e.iter().all(|v| v.is_finite()) {
        out.push(Violation::NonFinite("cE"));
    }
    if !mat.e.iter().all(|v| v.is_finite()) {
        out.push(Violation::NonFinite("e"));
    }
    if !mat.eps_s.iter().all(|v| v.is_finite()) {
        out.push(Violation::NonFinite("epsS"));
    }
    if !mat.rho.is_finite() {
        out.push(Violation::NonFinite("rho"));
    } else if mat.rho <= 0.0 {
        out.push(Violation::NonPositiveDensity(mat.rho));
    }
    if !out.is_empty() {
        return out;
    }

    let cmax = mat.c_e.amax();
    for i in 0..6 {
        for j in (i + 1)..6 {
            if (mat.c_e[(i, j)] - mat.c_e[(j, i)]).abs() > SYMMETRY_TOL * cmax {
                out.push(Violation::StiffnessAsymmetric { row: i, col: j });
            }
        }
    }
    let cmin = SymmetricEigen::new((mat.c_e + mat.c_e.transpose()) * 0.5).eigenvalues.min();
    if cmin <= 0.0 {
        out.push(Violation::StiffnessNotPositiveDefinite {
            min_eigenvalue: cmin,
        });
    }

    let emax = mat.eps_s.amax();
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (mat.eps_s[(i, j)] - mat.eps_s[(j, i)]).abs() > SYMMETRY_TOL * emax {
                out.push(Violation::PermittivityAsymmetric { row: i, col: j });
            }
        }
    }
    let emin = SymmetricEigen::new((mat.eps_s + mat.eps_s.transpose()) * 0.5).eigenvalues.min();
    if emin <= 0.0 {
        out.push(Violation::PermittivityNotPositiveDefinite {
            min_eigenvalue: emin,
        });
    }
    out
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Materials keyed by name.
pub type MaterialDb = BTreeMap<String, MaterialTensors>;

const BUNDLED: &str = include_str!("../data/materials.txt");

/// The constant sets shipped with the crate (`linbo3`, `alsicu`).
pub fn bundled_materials() -> MaterialDb {
    load_material_db(BUNDLED).expect("bundled material file is valid")
}

#[derive(Default)]
struct Pending {
    name: String,
    line: usize,
    rho: Option<f64>,
    c_e: Option<Vec<f64>>,
    e: Option<Vec<f64>>,
    eps_rel: Option<Vec<f64>>,
    youngs: Option<f64>,
    poisson: Option<f64>,
    source: Option<String>,
}

impl Pending {
    fn finish(self) -> Result<MaterialTensors> {
        let bad = |msg: String| Error::parse(self.line, format!("material `{}`: {msg}", self.name));
        let rho = self.rho.ok_or_else(|| bad("missing `rho`".into()))?;
        let mut mat = match (&self.c_e, self.youngs, self.poisson) {
            (Some(c), _, _) => {
                let mut m = MaterialTensors::isotropic(&self.name, 1.0, 0.25, rho);
                m.c_e = Matrix6::from_row_slice(c);
                m
            }
            (None, Some(y), Some(p)) => MaterialTensors::isotropic(&self.name, y, p, rho),
            _ => return Err(bad("needs either `cE` or both `E` and `nu`".into())),
        };
        if let Some(e) = &self.e {
            mat.e = Matrix3x6::from_row_slice(e);
        }
        if let Some(eps) = &self.eps_rel {
            mat.eps_s = Matrix3::from_row_slice(eps) * EPS0;
        }
        mat.source = self.source;
        let violations = validate(&mat);
        if !violations.is_empty() {
            return Err(Error::Validation {
                name: mat.name,
                violations: join_violations(&violations),
            });
        }
        Ok(mat)
    }
}

fn expected_len(key: &str) -> Option<usize> {
    match key {
        "cE" => Some(36),
        "e" => Some(18),
        "epsS_rel" => Some(9),
        "rho" | "E" | "nu" => Some(1),
        _ => None,
    }
}

fn store(p: &mut Pending, key: &str, vals: Vec<f64>, line: usize) -> Result<()> {
    let want = expected_len(key).ok_or_else(|| Error::parse(line, format!("unknown key `{key}`")))?;
    if vals.len() != want {
        return Err(Error::parse(
            line,
            format!("`{key}` expects {want} numbers, found {}", vals.len()),
        ));
    }
    match key {
        "cE" => p.c_e = Some(vals),
        "e" => p.e = Some(vals),
        "epsS_rel" => p.eps_rel = Some(vals),
        "rho" => p.rho = Some(vals[0]),
        "E" => p.youngs = Some(vals[0]),
        "nu" => p.poisson = Some(vals[0]),
        _ => unreachable!(),
    }
    Ok(())
}

fn starts_numeric(tok: &str) -> bool {
    tok.parse::<f64>().is_ok()
}

/// Parse the line-oriented material format.
///
/// Each record starts with `name <label>`; numeric lists (`cE`, `e`,
/// `epsS_rel`) may wrap onto following lines that begin with a number.
/// `E` and `nu` may replace `cE` for isotropic solids. `#` starts a comment.
pub fn load_material_db(text: &str) -> Result<MaterialDb> {
    let mut db = MaterialDb::new();
    let mut current: Option<Pending> = None;
    // key being filled, its values and the line it started on
    let mut open: Option<(String, Vec<f64>, usize)> = None;

    let flush_key = |cur: &mut Option<Pending>, open: &mut Option<(String, Vec<f64>, usize)>| -> Result<()> {
        if let Some((key, vals, line)) = open.take() {
            let p = cur
                .as_mut()
                .ok_or_else(|| Error::parse(line, format!("`{key}` before any `name`")))?;
            store(p, &key, vals, line)?;
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap();

        if starts_numeric(first) {
            let (_, vals, _) = open
                .as_mut()
                .ok_or_else(|| Error::parse(lineno, "numbers without a key"))?;
            for t in line.split_whitespace() {
                vals.push(
                    t.parse()
                        .map_err(|_| Error::parse(lineno, format!("bad number `{t}`")))?,
                );
            }
            continue;
        }

        flush_key(&mut current, &mut open)?;
        match first {
            "name" => {
                if let Some(p) = current.take() {
                    let m = p.finish()?;
                    db.insert(m.name.clone(), m);
                }
                let name = toks.collect::<Vec<_>>().join(" ");
                if name.is_empty() {
                    return Err(Error::parse(lineno, "empty material name"));
                }
                if db.contains_key(&name) {
                    return Err(Error::parse(lineno, format!("duplicate material `{name}`")));
                }
                current = Some(Pending {
                    name,
                    line: lineno,
                    ..Default::default()
                });
            }
            "source" => {
                let p = current
                    .as_mut()
                    .ok_or_else(|| Error::parse(lineno, "`source` before any `name`"))?;
                p.source = Some(toks.collect::<Vec<_>>().join(" "));
            }
            key => {
                if expected_len(key).is_none() {
                    return Err(Error::parse(lineno, format!("unknown key `{key}`")));
                }
                let mut vals = Vec::new();
                for t in toks {
                    vals.push(
                        t.parse()
                            .map_err(|_| Error::parse(lineno, format!("bad number `{t}`")))?,
                    );
                }
                open = Some((key.to_string(), vals, lineno));
            }
        }
    }
    flush_key(&mut current, &mut open)?;
    if let Some(p) = current.take() {
        let m = p.finish()?;
        db.insert(m.name.clone(), m);
    }
    Ok(db)
}

/// Serialize materials in the format read by [`load_material_db`].
pub fn write_material_db<'a>(mats: impl IntoIterator<Item = &'a MaterialTensors>) -> String {
    let mut s = String::new();
    for m in mats {
        s.push_str(&format!("name {}\n", m.name));
        if let Some(src) = &m.source {
            s.push_str(&format!("source {src}\n"));
        }
        s.push_str(&format!("rho {:e}\n", m.rho));
        s.push_str("cE\n");
        for r in 0..6 {
            let row: Vec<String> = (0..6).map(|c| format!("{:e}", m.c_e[(r, c)])).collect();
            s.push_str(&format!("  {}\n", row.join(" ")));
        }
        s.push_str("e\n");
        for r in 0..3 {
            let row: Vec<String> = (0..6).map(|c| format!("{:e}", m.e[(r, c)])).collect();
            s.push_str(&format!("  {}\n", row.join(" ")));
        }
        s.push_str("epsS_rel\n");
        for r in 0..3 {
            let row: Vec<String> = (0..3).map(|c| format!("{:e}", m.eps_s[(r, c)] / EPS0)).collect();
            s.push_str(&format!("  {}\n", row.join(" ")));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linbo3() -> MaterialTensors {
        bundled_materials()["linbo3"].clone()
    }

    fn max_rel(a: &Matrix6<f64>, b: &Matrix6<f64>) -> f64 {
        (a - b).amax() / a.amax()
    }

    #[test]
    fn identity_angles_give_identity_matrix() {
        let r = rotation_matrix(EulerAngles::zero());
        assert!((r - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_matrix(EulerAngles::new(90.0, 0.0, 0.0).unwrap());
        let x = r * nalgebra::Vector3::x();
        let y = r * nalgebra::Vector3::y();
        let z = r * nalgebra::Vector3::z();
        assert!((x - nalgebra::Vector3::y()).amax() < 1e-15);
        assert!((y + nalgebra::Vector3::x()).amax() < 1e-15);
        assert!((z - nalgebra::Vector3::z()).amax() < 1e-15);
    }

    #[test]
    fn xcut_orientation_is_orthogonal_and_normal_is_crystal_x() {
        let r = rotation_matrix(EulerAngles::new(-90.0, -90.0, 30.0).unwrap());
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        // device z (plate normal) along crystal X
        let n = r.column(2);
        assert!((n[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angles_are_normalized() {
        let a = EulerAngles::new(270.0, -180.0, 540.0).unwrap();
        assert_eq!(a.phi, -90.0);
        assert_eq!(a.theta, 180.0);
        assert_eq!(a.psi, 180.0);
        assert!(EulerAngles::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_rotation_leaves_material_unchanged() {
        let m = linbo3();
        let r = rotate_tensors(&m, EulerAngles::zero()).unwrap();
        assert!(max_rel(&m.c_e, &r.c_e) < 1e-14);
        assert!((m.e - r.e).amax() / m.e.amax() < 1e-14);
        assert!((m.eps_s - r.eps_s).amax() / m.eps_s.amax() < 1e-14);
        assert_eq!(m.rho, r.rho);
    }

    #[test]
    fn isotropic_is_rotation_invariant() {
        let m = MaterialTensors::isotropic("al", 70e9, 0.33, 2700.0);
        let r = rotate_tensors(&m, EulerAngles::new(12.0, 57.0, -33.0).unwrap()).unwrap();
        assert!(max_rel(&m.c_e, &r.c_e) < 1e-10);
    }

    #[test]
    fn bundled_linbo3_validates() {
        let m = linbo3();
        assert!(validate(&m).is_empty());
        assert!(m.is_piezoelectric());
        assert!(m.source.is_some());
        let al = &bundled_materials()["alsicu"];
        assert!(validate(al).is_empty());
        assert!(!al.is_piezoelectric());
    }

    #[test]
    fn asymmetric_stiffness_is_reported() {
        let mut m = linbo3();
        m.c_e[(0, 1)] *= 1.01;
        let v = validate(&m);
        assert!(v.contains(&Violation::StiffnessAsymmetric { row: 0, col: 1 }));
    }

    #[test]
    fn indefinite_permittivity_is_reported() {
        let mut m = linbo3();
        m.eps_s[(2, 2)] = -m.eps_s[(2, 2)];
        let v = validate(&m);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::PermittivityNotPositiveDefinite { .. })));
        assert!(rotate_tensors(&m, EulerAngles::zero()).is_err());
    }

    const ONE: &str = "# test\nname foo\nrho 1000\nE 100e9\nnu 0.3\n";

    #[test]
    fn parse_single_entry() {
        let db = load_material_db(ONE).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db["foo"].rho, 1000.0);
    }

    #[test]
    fn parse_rejects_short_stiffness_block() {
        let mut nums: Vec<String> = (0..35).map(|_| "1e9".to_string()).collect();
        nums[0] = "2e9".into();
        let text = format!("name bad\nrho 1\ncE {}\n", nums.join(" "));
        match load_material_db(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_duplicates() {
        let text = format!("{ONE}{ONE}");
        assert!(matches!(load_material_db(&text), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn parse_reports_invalid_material_by_name() {
        let text = "name neg\nrho 1000\nE -1e9\nnu 0.3\n";
        match load_material_db(text) {
            Err(Error::Validation { name, .. }) => assert_eq!(name, "neg"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn written_db_reads_back() {
        let m = linbo3();
        let rotated = rotate_tensors(&m, EulerAngles::new(-90.0, -90.0, -10.0).unwrap()).unwrap();
        let text = write_material_db([&rotated]);
        let back = load_material_db(&text).unwrap();
        let b = &back["linbo3"];
        assert_eq!(b.c_e, rotated.c_e);
        assert_eq!(b.e, rotated.e);
        assert!((b.eps_s - rotated.eps_s).amax() / rotated.eps_s.amax() < 1e-15);
    }
}

//! Sweeps of the electrode-to-gap ratio `w_m / w_p`: resonance and
//! antiresonance frequencies, coupling and energy confinement per mode family.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, energy_partition, material_map, pair_modes, solve_modes, Electrical, ModeKind, ModeLabel,
    SystemMatrices,
};
use crate::materials::{rotate_tensors, EulerAngles, MaterialDb};
use crate::mesh::{build_unit_cell, UnitCellGeometry};
use crate::parallel::par_map;

/// Minimum shape correlation for a branch to continue from one ratio to the next.
pub const TRACK_MAC: f64 = 0.6;

const MAX_MODES: usize = 400;
const SAMPLE_NX: usize = 64;
const SAMPLE_Z: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionPoint {
    pub wm_wp: f64,
    pub mode: ModeLabel,
    pub fs: f64,
    pub fp: f64,
    pub kt2: f64,
    pub eta: f64,
    /// Short/float shape correlation of the pair.
    pub mac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CouplingFormula {
    /// `1 - (fs/fp)²`
    #[default]
    Effective,
    /// `(π²/8)(1 - (fs/fp)²)`
    Berlincourt,
}

impl FromStr for CouplingFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "effective" => Ok(CouplingFormula::Effective),
            "berlincourt" => Ok(CouplingFormula::Berlincourt),
            _ => Err(Error::Config(format!("unknown coupling formula `{s}`"))),
        }
    }
}

impl fmt::Display for CouplingFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingFormula::Effective => "effective",
            CouplingFormula::Berlincourt => "berlincourt",
        })
    }
}

/// A tracked family and the crystal orientation it is evaluated in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilySpec {
    pub label: ModeLabel,
    pub euler: EulerAngles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// `w_m` is ignored; it is set from each ratio.
    pub geometry: UnitCellGeometry,
    pub piezo: String,
    pub electrode: String,
    pub families: Vec<FamilySpec>,
    pub ratios: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Base in-plane resolution; raised where needed to keep 4 elements on
    /// the narrowest segment.
    pub nx_per_micron: f64,
    pub nz: usize,
    pub coupling: CouplingFormula,
    /// Multiplies the piezoelectric constants (1 = physical material).
    pub piezo_scale: f64,
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}

fn linbo3_family(kind: ModeKind, order: u32) -> FamilySpec {
    let psi = if kind == ModeKind::S0 { 30.0 } else { -10.0 };
    FamilySpec {
        label: ModeLabel { kind, order },
        euler: EulerAngles::new(-90.0, -90.0, psi).expect("finite angles"),
    }
}

impl Default for SweepConfig {
    /// X-cut LiNbO₃ cell with AlSiCu electrodes; S0 and SH0 fundamentals and
    /// first odd overtones at their preferred in-plane orientations.
    fn default() -> Self {
        SweepConfig {
            geometry: UnitCellGeometry::reference(0.1),
            piezo: "linbo3".into(),
            electrode: "alsicu".into(),
            families: vec![
                linbo3_family(ModeKind::S0, 1),
                linbo3_family(ModeKind::SH0, 1),
                linbo3_family(ModeKind::S0, 3),
                linbo3_family(ModeKind::SH0, 3),
            ],
            ratios: log_grid(0.05, 1.5, 30),
            f_min: 1e8,
            f_max: 4e9,
            nx_per_micron: 20.0,
            nz: 5,
            coupling: CouplingFormula::Effective,
            piezo_scale: 1.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut g = self.geometry;
        g.w_m = 0.0;
        g.check()?;
        if self.ratios.is_empty() {
            return Err(Error::Config("empty ratio grid".into()));
        }
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("ratios must be finite and non-negative".into()));
        }
        let mut sorted = self.ratios.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate ratio in grid".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("no mode family requested".into()));
        }
        if !(self.f_min >= 0.0 && self.f_max > self.f_min) {
            return Err(Error::Config(format!("bad frequency window {}..{}", self.f_min, self.f_max)));
        }
        if !(self.nx_per_micron > 0.0 && self.nx_per_micron.is_finite()) {
            return Err(Error::Config("nx_per_micron must be positive".into()));
        }
        if self.nz < 5 {
            return Err(Error::Config("nz must be at least 5".into()));
        }
        if !self.piezo_scale.is_finite() {
            return Err(Error::Config("piezo_scale must be finite".into()));
        }
        Ok(())
    }

    /// Parse the line-oriented `key = value` format written by [`SweepConfig::to_text`].
    /// Keys not given keep their [`Default`] values, except `family` lines,
    /// which replace the default family list when present.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        let mut families = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("`{v}` is not a number")))
            };
            let nums = |v: &str| -> Result<Vec<f64>> { v.split_whitespace().map(num).collect() };
            match key {
                "t_film" => cfg.geometry.t_film = num(value)?,
                "t_recess" => cfg.geometry.t_recess = num(value)?,
                "w_p" => cfg.geometry.w_p = num(value)?,
                "piezo" => cfg.piezo = value.to_string(),
                "electrode" => cfg.electrode = value.to_string(),
                "f_min" => cfg.f_min = num(value)?,
                "f_max" => cfg.f_max = num(value)?,
                "nx_per_micron" => cfg.nx_per_micron = num(value)?,
                "nz" => {
                    cfg.nz = value
                        .parse()
                        .map_err(|_| Error::parse(line_no, format!("`{value}` is not a count")))?
                }
                "coupling" => {
                    cfg.coupling = value.parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?
                }
                "piezo_scale" => cfg.piezo_scale = num(value)?,
                "ratios" => cfg.ratios = nums(value)?,
                "ratio_grid" => {
                    let mut it = value.split_whitespace();
                    let spacing = it.next().unwrap_or("");
                    let rest: Vec<&str> = it.collect();
                    if rest.len() != 3 {
                        return Err(Error::parse(line_no, "ratio_grid needs `log|lin lo hi n`"));
                    }
                    let (lo, hi) = (num(rest[0])?, num(rest[1])?);
                    let n: usize = rest[2]
                        .parse()
                        .map_err(|_| Error::parse(line_no, "grid size must be a count"))?;
                    cfg.ratios = match spacing {
                        "log" if lo > 0.0 => log_grid(lo, hi, n),
                        "lin" => (0..n)
                            .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
                            .collect(),
                        _ => return Err(Error::parse(line_no, "grid spacing must be `log` (lo > 0) or `lin`")),
                    };
                }
                "family" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 5 {
                        return Err(Error::parse(line_no, "family needs `KIND ORDER phi theta psi`"));
                    }
                    let kind: ModeKind = parts[0].parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
                    let order: u32 = parts[1]
                        .parse()
                        .map_err(|_| Error::parse(line_no, "order must be a positive integer"))?;
                    let euler = EulerAngles::new(num(parts[2])?, num(parts[3])?, num(parts[4])?)
                        .map_err(|e| Error::parse(line_no, e.to_string()))?;
                    families.push(FamilySpec {
                        label: ModeLabel { kind, order },
                        euler,
                    });
                }
                _ => return Err(Error::parse(line_no, format!("unknown key `{key}`"))),
            }
        }
        if !families.is_empty() {
            cfg.families = families;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut s = String::new();
        s += &format!("t_film = {:e}\nt_recess = {:e}\nw_p = {:e}\n", g.t_film, g.t_recess, g.w_p);
        s += &format!("piezo = {}\nelectrode = {}\n", self.piezo, self.electrode);
        s += &format!("f_min = {:e}\nf_max = {:e}\n", self.f_min, self.f_max);
        s += &format!("nx_per_micron = {}\nnz = {}\n", self.nx_per_micron, self.nz);
        s += &format!("coupling = {}\npiezo_scale = {}\n", self.coupling, self.piezo_scale);
        let r: Vec<String> = self.ratios.iter().map(|r| r.to_string()).collect();
        s += &format!("ratios = {}\n", r.join(" "));
        for f in &self.families {
            s += &format!(
                "family = {} {} {} {} {}\n",
                f.label.kind, f.label.order, f.euler.phi, f.euler.theta, f.euler.psi
            );
        }
        s
    }
}

/// Coupling from a resonance/antiresonance pair.
pub fn kt2_from_pair(fs: f64, fp: f64, formula: CouplingFormula) -> Result<f64> {
    if !(fs > 0.0 && fp.is_finite()) || fs > fp {
        return Err(Error::Domain(format!("need 0 < fs <= fp, got fs={fs} fp={fp}")));
    }
    let k = 1.0 - (fs / fp).powi(2);
    Ok(match formula {
        CouplingFormula::Effective => k,
        CouplingFormula::Berlincourt => std::f64::consts::PI.powi(2) / 8.0 * k,
    })
}

/// A ratio at which a family produced no point.
#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub wm_wp: f64,
    pub mode: ModeLabel,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    /// Grouped by family in config order, sorted by ratio within a family.
    pub points: Vec<DispersionPoint>,
    pub gaps: Vec<Gap>,
}

impl SweepResult {
    pub fn family(&self, label: ModeLabel) -> Vec<DispersionPoint> {
        self.points.iter().copied().filter(|p| p.mode == label).collect()
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    label: ModeLabel,
    fs: f64,
    fp: f64,
    kt2: f64,
    eta: f64,
    mac: f64,
    shape: Vec<f64>,
}

/// Displacement sampled on a grid normalized to the cell (x/Λ, z/t), so
/// shapes from different ratios can be compared.
fn sample_shape(sys: &SystemMatrices, u: &[f64]) -> Vec<f64> {
    let mesh = &sys.mesh;
    let lam = mesh.geometry.period();
    let t = mesh.geometry.t_film;
    let locate = |grid: &[f64], v: f64| {
        let k = grid.partition_point(|g| *g <= v).clamp(1, grid.len() - 1) - 1;
        (k, (v - grid[k]) / (grid[k + 1] - grid[k]))
    };
    let mut out = Vec::with_capacity(3 * SAMPLE_NX * SAMPLE_Z.len());
    for ix in 0..SAMPLE_NX {
        let x = lam * (ix as f64 + 0.5) / SAMPLE_NX as f64;
        let (i, a) = locate(&mesh.xs, x);
        for zf in SAMPLE_Z {
            let (j, b) = locate(&mesh.zs, zf * t);
            let corners = [
                (mesh.node_index(i, j), (1.0 - a) * (1.0 - b)),
                (mesh.node_index(i + 1, j), a * (1.0 - b)),
                (mesh.node_index(i + 1, j + 1), a * b),
                (mesh.node_index(i, j + 1), (1.0 - a) * b),
            ];
            for c in 0..3 {
                out.push(
                    corners
                        .iter()
                        .map(|(n, w)| w * u[sys.dofs.u_dof(sys.dofs.node_to_pnode[*n], c)])
                        .sum(),
                );
            }
        }
    }
    out
}

fn shape_mac(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (ab, aa, bb) = (dot(a, b), dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab * ab / (aa * bb)
    }
}

/// Resolution that keeps at least four elements across the narrowest segment.
pub fn effective_resolution(geometry: &UnitCellGeometry, base: f64) -> f64 {
    let narrow = if geometry.w_m > 0.0 {
        geometry.w_m.min(geometry.w_p)
    } else {
        geometry.w_p
    };
    base.max(4.0 / (narrow * 1e6) * (1.0 + 1e-9))
}

fn evaluate_point(cfg: &SweepConfig, db: &MaterialDb, euler: EulerAngles, ratio: f64) -> Result<Vec<Candidate>> {
    let piezo = rotate_tensors(&db[&cfg.piezo], euler)?.with_piezo_scaled(cfg.piezo_scale);
    let mut g = cfg.geometry;
    g.w_m = ratio * g.w_p;
    let mesh = build_unit_cell(&g, effective_resolution(&g, cfg.nx_per_micron), cfg.nz)?;
    let sys = assemble(&mesh, &material_map(&piezo, &db[&cfg.electrode]))?;
    let short = solve_modes(&sys, Electrical::Short, (cfg.f_min, cfg.f_max), MAX_MODES)?;
    // antiresonances sit above their resonances
    let float = solve_modes(&sys, Electrical::Float, (cfg.f_min, 1.5 * cfg.f_max), MAX_MODES)?;
    let pairing = pair_modes(&short, &float, &sys.mass);
    let mut out = Vec::new();
    for p in &pairing.pairs {
        let m = &short[p.short];
        out.push(Candidate {
            label: m.label,
            fs: p.fs,
            fp: p.fp,
            kt2: kt2_from_pair(p.fs, p.fp, cfg.coupling)?,
            eta: energy_partition(m, &sys)?,
            mac: p.mac,
            shape: sample_shape(&sys, &m.u),
        });
    }
    Ok(out)
}

/// Run the sweep with up to `jobs` workers (`0` = all cores).
///
/// Point failures become [`Gap`]s; only configuration problems are errors.
/// The output does not depend on the order of `config.ratios`.
pub fn run_sweep(config: &SweepConfig, db: &MaterialDb, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    for name in [&config.piezo, &config.electrode] {
        if !db.contains_key(name) {
            return Err(Error::Config(format!("material `{name}` not in database")));
        }
    }
    let mut ratios = config.ratios.clone();
    ratios.sort_by(f64::total_cmp);

    let mut orientations: Vec<EulerAngles> = Vec::new();
    for f in &config.families {
        if !orientations.contains(&f.euler) {
            orientations.push(f.euler);
        }
    }
    let tasks: Vec<(usize, usize)> = (0..orientations.len())
        .flat_map(|o| (0..ratios.len()).map(move |r| (o, r)))
        .collect();
    let results = par_map(&tasks, jobs, |&(o, r)| {
        evaluate_point(config, db, orientations[o], ratios[r]).map_err(|e| e.to_string())
    });
    let table: BTreeMap<(usize, usize), std::result::Result<Vec<Candidate>, String>> =
        tasks.into_iter().zip(results).collect();

    let mut out = SweepResult::default();
    for fam in &config.families {
        let o = orientations.iter().position(|e| *e == fam.euler).expect("orientation listed");
        let per_ratio: Vec<std::result::Result<Vec<&Candidate>, String>> = (0..ratios.len())
            .map(|r| match &table[&(o, r)] {
                Err(msg) => Err(msg.clone()),
                Ok(c) => {
                    let same: Vec<&Candidate> = c.iter().filter(|c| c.label == fam.label).collect();
                    if same.is_empty() {
                        Err(format!("no paired mode classified as {}", fam.label))
                    } else {
                        Ok(same)
                    }
                }
            })
            .collect();
        let (points, gaps) = track_family(fam.label, &ratios, &per_ratio);
        out.points.extend(points);
        out.gaps.extend(gaps);
    }
    Ok(out)
}

/// Seed the branch at its most strongly coupled candidate over all ratios,
/// then follow shape continuity outward in both directions. A ratio with no
/// candidate continuing the branch becomes a gap and the branch keeps its
/// last accepted shape.
fn track_family(
    label: ModeLabel,
    ratios: &[f64],
    per_ratio: &[std::result::Result<Vec<&Candidate>, String>],
) -> (Vec<DispersionPoint>, Vec<Gap>) {
    let mut chosen: Vec<std::result::Result<&Candidate, String>> = per_ratio
        .iter()
        .map(|r| match r {
            Err(e) => Err(e.clone()),
            // every solvable ratio is visited from the seed below
            Ok(_) => Err(String::new()),
        })
        .collect();
    let seed = per_ratio
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.as_ref().ok().map(|c| (r, c)))
        .flat_map(|(r, c)| c.iter().map(move |c| (r, *c)))
        .max_by(|a, b| a.1.kt2.total_cmp(&b.1.kt2).then(b.0.cmp(&a.0)));
    let Some((seed_r, seed_c)) = seed else {
        let gaps = chosen
            .into_iter()
            .zip(ratios)
            .filter_map(|(c, r)| c.err().map(|reason| Gap { wm_wp: *r, mode: label, reason }))
            .collect();
        return (vec![], gaps);
    };
    chosen[seed_r] = Ok(seed_c);
    for dir in [1isize, -1] {
        let mut prev = &seed_c.shape;
        let mut r = seed_r as isize + dir;
        while r >= 0 && (r as usize) < ratios.len() {
            let k = r as usize;
            if let Ok(cands) = &per_ratio[k] {
                let cont = cands
                    .iter()
                    .map(|c| (shape_mac(prev, &c.shape), *c))
                    .filter(|(m, _)| *m >= TRACK_MAC)
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                chosen[k] = match cont {
                    Some((_, c)) => {
                        prev = &c.shape;
                        Ok(c)
                    }
                    None => Err(format!("no {label} candidate continues the branch")),
                };
            }
            r += dir;
        }
    }
    let mut points = Vec::new();
    let mut gaps = Vec::new();
    for (c, &ratio) in chosen.into_iter().zip(ratios) {
        match c {
            Ok(c) => points.push(DispersionPoint {
                wm_wp: ratio,
                mode: label,
                fs: c.fs,
                fp: c.fp,
                kt2: c.kt2,
                eta: c.eta,
                mac: c.mac,
            }),
            Err(reason) => gaps.push(Gap {
                wm_wp: ratio,
                mode: label,
                reason,
            }),
        }
    }
    (points, gaps)
}

/// Point of maximal kt²; ties go to larger η, then to the smaller ratio.
pub fn find_optimum(points: &[DispersionPoint]) -> Result<DispersionPoint> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "optimum needs at least 3 points, got {}",
            points.len()
        )));
    }
    let best = points
        .iter()
        .max_by(|a, b| {
            a.kt2
                .total_cmp(&b.kt2)
                .then(a.eta.total_cmp(&b.eta))
                .then(b.wm_wp.total_cmp(&a.wm_wp))
        })
        .expect("non-empty");
    Ok(*best)
}

/// Local maximum of the η curve (endpoints included) closest to `ratio`.
/// Points must belong to one family and be sorted by ratio.
pub fn nearest_eta_peak(points: &[DispersionPoint], ratio: f64) -> Option<DispersionPoint> {
    let n = points.len();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || points[i - 1].eta <= points[i].eta;
            let right = i + 1 == n || points[i + 1].eta <= points[i].eta;
            left && right
        })
        .map(|i| points[i])
        .min_by(|a, b| (a.wm_wp - ratio).abs().total_cmp(&(b.wm_wp - ratio).abs()))
}

pub const CSV_HEADER: &str = "wm_wp,mode,order,fs_hz,fp_hz,kt2,eta,mac";

/// CSV with shortest round-trip float formatting.
pub fn export_csv(points: &[DispersionPoint]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in points {
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            p.wm_wp, p.mode.kind, p.mode.order, p.fs, p.fp, p.kt2, p.eta, p.mac
        );
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<DispersionPoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(k + 1, "expected 8 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::parse(k + 1, format!("bad number `{s}`")));
        let kind: ModeKind = f[1].trim().parse().map_err(|e: Error| Error::parse(k + 1, e.to_string()))?;
        let order: u32 = f[2].trim().parse().map_err(|_| Error::parse(k + 1, "bad order"))?;
        out.push(DispersionPoint {
            wm_wp: num(f[0])?,
            mode: ModeLabel { kind, order },
            fs: num(f[3])?,
            fp: num(f[4])?,
            kt2: num(f[5])?,
            eta: num(f[6])?,
            mac: num(f[7])?,
        });
    }
    Ok(out)
}

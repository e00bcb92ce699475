//! Modified Butterworth–Van Dyke circuit: synthesis, metrics and fitting.
//!
//! Topology: `Rs` in series with the parallel combination of the motional
//! branch `Rm + jωLm + 1/(jωCm)` and the static branch `R0 + 1/(jωC0)`.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbvdParams {
    #[serde(rename = "Rm")]
    pub rm: f64,
    #[serde(rename = "Lm")]
    pub lm: f64,
    #[serde(rename = "Cm")]
    pub cm: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "Rs")]
    pub rs: f64,
}

impl MbvdParams {
    pub fn check(&self) -> Result<()> {
        let pos = [self.lm, self.cm, self.c0].iter().all(|v| *v > 0.0 && v.is_finite());
        let nonneg = [self.rm, self.r0, self.rs].iter().all(|v| *v >= 0.0 && v.is_finite());
        if pos && nonneg {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid mBVD parameters {self:?}")))
        }
    }

    /// Parameters giving series resonance `fs`, coupling `kt2` and `Qs`
    /// for the given static branch and series resistance.
    pub fn from_targets(fs: f64, kt2: f64, qs: f64, c0: f64, r0: f64, rs: f64) -> Result<Self> {
        if !(fs > 0.0 && kt2 > 0.0 && kt2 < 1.0 && qs > 0.0 && c0 > 0.0) {
            return Err(Error::Domain("targets out of range".into()));
        }
        let cm = c0 * kt2 / (1.0 - kt2);
        let ws = 2.0 * PI * fs;
        let lm = 1.0 / (ws * ws * cm);
        let rm = ws * lm / qs - rs;
        if rm < 0.0 {
            return Err(Error::Domain("Rs alone exceeds the loss budget for this Qs".into()));
        }
        let p = MbvdParams { rm, lm, cm, c0, r0, rs };
        p.check()?;
        Ok(p)
    }

    fn to_array(self) -> [f64; 6] {
        [self.rm, self.lm, self.cm, self.c0, self.r0, self.rs]
    }

    fn from_array(a: [f64; 6]) -> Self {
        MbvdParams {
            rm: a[0],
            lm: a[1],
            cm: a[2],
            c0: a[3],
            r0: a[4],
            rs: a[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub fs: f64,
    pub fp: f64,
    #[serde(rename = "kt2")]
    pub kt2_eff: f64,
    #[serde(rename = "Qs")]
    pub qs: f64,
    #[serde(rename = "Qp")]
    pub qp: f64,
    #[serde(rename = "FoM")]
    pub fom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceSpectrum {
    pub frequencies: Vec<f64>,
    pub y: Vec<Complex64>,
}

impl AdmittanceSpectrum {
    pub fn new(frequencies: Vec<f64>, y: Vec<Complex64>) -> Result<Self> {
        if frequencies.len() != y.len() {
            return Err(Error::Domain("frequency and admittance lengths differ".into()));
        }
        if let Some(i) = frequencies.iter().position(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::Domain(format!("non-positive frequency at index {i}")));
        }
        if let Some(i) = frequencies.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneFrequency { index: i + 1 });
        }
        Ok(AdmittanceSpectrum { frequencies, y })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

struct Branches {
    zm: Complex64,
    zs: Complex64,
    y: Complex64,
}

fn branches(p: &MbvdParams, f: f64) -> Branches {
    let w = 2.0 * PI * f;
    let j = Complex64::i();
    let zm = p.rm + j * w * p.lm + 1.0 / (j * w * p.cm);
    let zs = p.r0 + 1.0 / (j * w * p.c0);
    let z = p.rs + zm * zs / (zm + zs);
    Branches { zm, zs, y: 1.0 / z }
}

pub fn admittance(p: &MbvdParams, f: f64) -> Complex64 {
    branches(p, f).y
}

pub fn synthesize(p: &MbvdParams, frequencies: &[f64]) -> Result<AdmittanceSpectrum> {
    AdmittanceSpectrum::new(frequencies.to_vec(), frequencies.iter().map(|f| admittance(p, *f)).collect())
}

/// `n` evenly spaced frequencies over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect()
}

pub fn derive_metrics(p: &MbvdParams) -> DerivedMetrics {
    let fs = 1.0 / (2.0 * PI * (p.lm * p.cm).sqrt());
    let fp = fs * (1.0 + p.cm / p.c0).sqrt();
    let kt2_eff = p.cm / (p.cm + p.c0);
    let qs = 2.0 * PI * fs * p.lm / (p.rm + p.rs);
    let qp = 2.0 * PI * fp * p.lm / (p.rm + p.r0);
    DerivedMetrics {
        fs,
        fp,
        kt2_eff,
        qs,
        qp,
        fom: kt2_eff * qs,
    }
}

/// Multiply each point by `1 + level·(a + jb)` with `a, b ~ N(0, 1)`.
pub fn add_noise(s: &AdmittanceSpectrum, level: f64, seed: u64) -> AdmittanceSpectrum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = s
        .y
        .iter()
        .map(|y| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            y * Complex64::new(1.0 + level * a, level * b)
        })
        .collect();
    AdmittanceSpectrum {
        frequencies: s.frequencies.clone(),
        y,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting point read off the |Y| peak and dip.
pub fn initial_guess(s: &AdmittanceSpectrum) -> Result<MbvdParams> {
    let n = s.len();
    if n < 5 {
        return Err(Error::NoResonanceFound("need at least 5 points".into()));
    }
    let mag: Vec<f64> = s.y.iter().map(|y| y.norm()).collect();
    let i_s = (0..n).max_by(|a, b| mag[*a].total_cmp(&mag[*b])).expect("non-empty");
    if i_s == 0 || i_s + 1 >= n {
        return Err(Error::NoResonanceFound("|Y| has no interior maximum".into()));
    }
    let i_p = (i_s + 1..n).min_by(|a, b| mag[*a].total_cmp(&mag[*b])).expect("non-empty");
    if i_p + 1 >= n && mag[i_p] >= mag[i_p - 1] {
        return Err(Error::NoResonanceFound("|Y| has no minimum above the maximum".into()));
    }
    let (fs, fp) = (s.frequencies[i_s], s.frequencies[i_p]);
    let cap = |i: usize| s.y[i].im / (2.0 * PI * s.frequencies[i]);
    // off-resonance capacitance; the exclusion band narrows if the span is tight
    let mut c0 = f64::NAN;
    for k in [3.0, 1.5, 1.0, 0.5] {
        let pts: Vec<f64> = (0..n)
            .filter(|&i| (s.frequencies[i] - fs).abs() > k * (fp - fs))
            .map(cap)
            .collect();
        if pts.len() >= 5 {
            c0 = median(pts);
            break;
        }
    }
    if !(c0 > 0.0) {
        c0 = median((0..n).map(cap).collect());
    }
    if !(c0 > 0.0) {
        return Err(Error::NoResonanceFound("no capacitive background".into()));
    }
    let cm = (c0 * ((fp / fs).powi(2) - 1.0)).max(1e-6 * c0);
    let lm = 1.0 / ((2.0 * PI * fs).powi(2) * cm);
    let rm = 1.0 / mag[i_s];
    Ok(MbvdParams {
        rm,
        lm,
        cm,
        c0,
        r0: 0.0,
        rs: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MbvdParams,
    /// RMS relative admittance error `sqrt(Σ |ΔY/Y|² / N)`.
    pub residual: f64,
    pub metrics: DerivedMetrics,
    pub iterations: usize,
}

pub const MAX_ITERATIONS: usize = 500;
pub const STEP_TOLERANCE: f64 = 1e-9;

type Jac = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

/// Weighted residual `(Ymodel − Ydata)/|Ydata|` and its Jacobian with
/// respect to the log-parameters, accumulated into normal equations.
const RESISTORS: [usize; 3] = [0, 4, 5];

/// Per-parameter step scale: reactive elements move in log space, resistors
/// linearly in units of `r_ref` so they can reach and leave zero.
fn step_scale(p: &MbvdParams, r_ref: f64) -> [f64; 6] {
    let mut a = p.to_array();
    for k in RESISTORS {
        a[k] = r_ref;
    }
    a
}

fn apply_step(p: &MbvdParams, step: &Vec6, r_ref: f64) -> MbvdParams {
    let mut a = p.to_array();
    for k in 0..6 {
        if RESISTORS.contains(&k) {
            a[k] = (a[k] + step[k] * r_ref).max(0.0);
        } else {
            a[k] *= step[k].exp();
        }
    }
    MbvdParams::from_array(a)
}

fn normal_equations(s: &AdmittanceSpectrum, p: &MbvdParams, r_ref: f64) -> (f64, Jac, Vec6) {
    let a = step_scale(p, r_ref);
    let j = Complex64::i();
    let mut jtj = Jac::zeros();
    let mut jtr = Vec6::zeros();
    let mut cost = 0.0;
    for (f, yd) in s.frequencies.iter().zip(&s.y) {
        let w = 2.0 * PI * f;
        let b = branches(p, *f);
        let inv_w = 1.0 / yd.norm();
        let r = (b.y - yd) * inv_w;
        cost += r.norm_sqr();
        let sum = b.zm + b.zs;
        let dy_dz = -b.y * b.y;
        let dz_dzm = b.zs * b.zs / (sum * sum);
        let dz_dzs = b.zm * b.zm / (sum * sum);
        let dz = [
            dz_dzm,
            dz_dzm * j * w,
            dz_dzm * (-1.0 / (j * w * p.cm * p.cm)),
            dz_dzs * (-1.0 / (j * w * p.c0 * p.c0)),
            dz_dzs,
            Complex64::new(1.0, 0.0),
        ];
        let mut g = [Complex64::new(0.0, 0.0); 6];
        for k in 0..6 {
            g[k] = dy_dz * dz[k] * a[k] * inv_w;
        }
        for k in 0..6 {
            jtr[k] += g[k].re * r.re + g[k].im * r.im;
            for l in 0..=k {
                let v = g[k].re * g[l].re + g[k].im * g[l].im;
                jtj[(k, l)] += v;
                if l != k {
                    jtj[(l, k)] += v;
                }
            }
        }
    }
    (cost, jtj, jtr)
}

fn cost_of(s: &AdmittanceSpectrum, p: &MbvdParams) -> f64 {
    s.frequencies
        .iter()
        .zip(&s.y)
        .map(|(f, yd)| ((admittance(p, *f) - yd) / yd.norm()).norm_sqr())
        .sum()
}

/// Weighted complex least squares over log-parameters (Levenberg–Marquardt).
pub fn fit(s: &AdmittanceSpectrum, guess: Option<MbvdParams>) -> Result<FitResult> {
    let start = match guess {
        Some(g) => {
            g.check()?;
            g
        }
        None => initial_guess(s)?,
    };
    if s.y.iter().any(|y| y.norm() == 0.0 || !y.norm().is_finite()) {
        return Err(Error::Domain("admittance data must be finite and non-zero".into()));
    }
    let r_ref = start.rm.max(start.r0).max(start.rs).max(1e-6);
    let mut p = start;
    let initial_cost = cost_of(s, &p);
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (c, jtj, jtr) = normal_equations(s, &p, r_ref);
        cost = c;
        let mut accepted = false;
        while lambda < 1e20 {
            let mut h = jtj;
            for k in 0..6 {
                h[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(ch) = h.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-jtr));
            let tp = apply_step(&p, &step, r_ref);
            let tc = cost_of(s, &tp);
            if tc.is_finite() && tc <= cost {
                p = tp;
                cost = tc;
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if step.amax() < STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            break;
        }
    }
    if !converged && cost >= initial_cost {
        return Err(Error::FitDiverged(format!(
            "weighted residual did not decrease from {initial_cost:e} after {iterations} iterations"
        )));
    }
    Ok(FitResult {
        params: p,
        residual: (cost / s.len() as f64).sqrt(),
        metrics: derive_metrics(&p),
        iterations,
    })
}

/// `Q(f) = (f/2)|dφ_Z/df|` from the measured phase, by central difference
/// at the grid point nearest `f`.
pub fn phase_q(s: &AdmittanceSpectrum, f: f64) -> Option<f64> {
    let n = s.len();
    if n < 3 {
        return None;
    }
    let i = s.frequencies.partition_point(|x| *x < f).clamp(1, n - 2);
    let i = if (s.frequencies[i - 1] - f).abs() < (s.frequencies[i] - f).abs() {
        (i - 1).max(1)
    } else {
        i
    };
    let phase = |k: usize| -s.y[k].arg();
    let mut d = phase(i + 1) - phase(i - 1);
    // unwrap
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    let df = s.frequencies[i + 1] - s.frequencies[i - 1];
    Some(0.5 * s.frequencies[i] * (d / df).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseQ {
    pub qs: Option<f64>,
    pub qp: Option<f64>,
}

/// JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: MbvdParams,
    pub metrics: DerivedMetrics,
    pub residual: f64,
    pub n_points: usize,
    pub input_file: Option<String>,
    pub iterations: usize,
    pub phase_q: PhaseQ,
}

impl FitReport {
    pub fn new(s: &AdmittanceSpectrum, fit: &FitResult, input_file: Option<String>) -> Self {
        FitReport {
            params: fit.params,
            metrics: fit.metrics,
            residual: fit.residual,
            n_points: s.len(),
            input_file,
            iterations: fit.iterations,
            phase_q: PhaseQ {
                qs: phase_q(s, fit.metrics.fs),
                qp: phase_q(s, fit.metrics.fp),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> MbvdParams {
        MbvdParams {
            rm: 2.0,
            lm: 80e-6,
            cm: 0.7e-15,
            c0: 2e-12,
            r0: 1.0,
            rs: 3.0,
        }
    }

    /// Fundamental SH0 resonator scale: FoM 437 at 673 MHz.
    fn lbaw() -> MbvdParams {
        MbvdParams::from_targets(673e6, 0.43, 1016.3, 0.1e-12, 2.0, 1.0).unwrap()
    }

    #[test]
    fn ladder_oracle_at_673_mhz() {
        let p = reference();
        let w = 2.0 * PI * 673e6;
        // step by step, separate real/imag bookkeeping
        let xm = w * p.lm - 1.0 / (w * p.cm);
        let zm = Complex64::new(p.rm, xm);
        let z0 = Complex64::new(p.r0, -1.0 / (w * p.c0));
        let par = (zm * z0) / (zm + z0);
        let want = Complex64::new(1.0, 0.0) / (Complex64::new(p.rs, 0.0) + par);
        let got = admittance(&p, 673e6);
        assert!((got - want).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn low_frequency_capacitive_limit() {
        let p = MbvdParams {
            rm: 0.0,
            r0: 0.0,
            rs: 0.0,
            ..reference()
        };
        let f = 1e6;
        let y = admittance(&p, f);
        let want = 2.0 * PI * f * (p.c0 + p.cm);
        assert!((y.im / want - 1.0).abs() < 1e-3 && y.re.abs() < 1e-3 * want);
    }

    #[test]
    fn series_resonance_is_a_local_maximum() {
        let p = MbvdParams {
            r0: 0.0,
            rs: 0.0,
            ..reference()
        };
        let m = derive_metrics(&p);
        let b = branches(&p, m.fs);
        assert!((b.zm.im).abs() < 1e-6 * p.rm.max(1.0));
        let peak = admittance(&p, m.fs).norm();
        for d in [-1e-4, -1e-5, 1e-5, 1e-4] {
            assert!(admittance(&p, m.fs * (1.0 + d)).norm() <= peak);
        }
    }

    #[test]
    fn metric_closed_forms() {
        let p = reference();
        let m = derive_metrics(&p);
        let fs = 1.0 / (2.0 * PI * (80e-6f64 * 0.7e-15).sqrt());
        assert!((m.fs / fs - 1.0).abs() < 1e-14);
        assert!((m.fp / m.fs - (1.0 + 0.7e-15 / 2e-12f64).sqrt()).abs() < 1e-14);
        assert!((m.kt2_eff - (1.0 - (m.fs / m.fp).powi(2))).abs() < 1e-14);
        assert!(m.fp > m.fs);
    }

    #[test]
    fn targets_give_requested_fom() {
        let m = derive_metrics(&lbaw());
        assert!((m.fom - 437.0).abs() < 0.01);
        assert!((m.fs / 673e6 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_motional_capacitance() {
        let p = MbvdParams::from_targets(673e6, 1e-12, 1000.0, 0.1e-12, 2.0, 1.0).unwrap();
        let m = derive_metrics(&p);
        assert!(m.kt2_eff < 1e-11 && (m.fp / m.fs - 1.0) < 1e-11 && m.fom < 1e-8);
    }

    #[test]
    fn scaling_lm_and_cm_scales_qs() {
        let p = reference();
        let a = 3.7;
        let q = MbvdParams {
            lm: p.lm * a,
            cm: p.cm / a,
            ..p
        };
        let (m, n) = (derive_metrics(&p), derive_metrics(&q));
        assert!((m.fs / n.fs - 1.0).abs() < 1e-14);
        assert!((n.qs / m.qs - a).abs() < 1e-12);
    }

    #[test]
    fn conjugate_symmetry() {
        let p = reference();
        for f in [1e8, 3.3e8, 6.73e8, 6.74e8, 1e9, 2.2e9, 5e6, 7e8, 8.1e8, 9.9e8] {
            let w = -2.0 * PI * f;
            let j = Complex64::i();
            let zm = p.rm + j * w * p.lm + 1.0 / (j * w * p.cm);
            let z0 = p.r0 + 1.0 / (j * w * p.c0);
            let neg = 1.0 / (p.rs + zm * z0 / (zm + z0));
            assert!((admittance(&p, f) - neg.conj()).norm() < 1e-14 * neg.norm());
        }
    }

    #[test]
    fn guess_finds_peak_and_is_within_factor_three() {
        // the grid must resolve the fs/Qs ≈ 10 kHz resonance of this circuit
        let p = reference();
        let m = derive_metrics(&p);
        let f = linspace(m.fs - 5e5, m.fp + 5e5, 2001);
        let step = f[1] - f[0];
        let s = synthesize(&p, &f).unwrap();
        let g = initial_guess(&s).unwrap();
        let gm = derive_metrics(&g);
        assert!((gm.fs - m.fs).abs() <= step);
        for (a, b) in [(g.rm, p.rm), (g.lm, p.lm), (g.cm, p.cm), (g.c0, p.c0)] {
            assert!(a / b < 3.0 && b / a < 3.0, "{a} vs {b}");
        }
    }

    #[test]
    fn pure_capacitor_has_no_resonance() {
        let f = linspace(1e8, 2e9, 500);
        let y = f.iter().map(|f| Complex64::new(0.0, 2.0 * PI * f * 1e-12)).collect();
        let s = AdmittanceSpectrum::new(f, y).unwrap();
        assert!(matches!(initial_guess(&s), Err(Error::NoResonanceFound(_))));
    }

    #[test]
    fn noiseless_round_trip() {
        let p = lbaw();
        let m = derive_metrics(&p);
        let s = synthesize(&p, &linspace(0.8 * m.fs, 1.2 * m.fp, 2001)).unwrap();
        let r = fit(&s, None).unwrap();
        for (a, b) in r.params.to_array().iter().zip(p.to_array()) {
            assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn phase_q_of_a_lossy_series_resonance() {
        // near fs the phase slope of a high-Q series RLC gives its Q
        let p = MbvdParams {
            r0: 0.0,
            rs: 0.0,
            c0: 1e-18,
            ..reference()
        };
        let m = derive_metrics(&p);
        let f = linspace(0.999 * m.fs, 1.001 * m.fs, 4001);
        let s = synthesize(&p, &f).unwrap();
        let q = phase_q(&s, m.fs).unwrap();
        assert!((q / m.qs - 1.0).abs() < 0.01, "{q} vs {}", m.qs);
    }

    #[test]
    fn report_json_has_required_blocks() {
        let p = lbaw();
        let m = derive_metrics(&p);
        let s = synthesize(&p, &linspace(0.8 * m.fs, 1.2 * m.fp, 401)).unwrap();
        let r = fit(&s, None).unwrap();
        let json = FitReport::new(&s, &r, Some("x.s2p".into())).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for k in ["params", "metrics", "residual", "n_points", "input_file"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v["params"].get("Rm").is_some() && v["metrics"].get("FoM").is_some());
    }
}

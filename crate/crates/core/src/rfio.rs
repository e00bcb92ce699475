//! Two-port Touchstone (v1) input/output and S ↔ Y conversion.

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mbvd::AdmittanceSpectrum;

pub type CMatrix2 = Matrix2<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPortData {
    /// Hz, strictly increasing.
    pub frequencies: Vec<f64>,
    pub s: Vec<CMatrix2>,
    /// Reference impedance (Ω).
    pub z0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NumberFormat {
    Ri,
    Ma,
    Db,
}

fn pair_to_complex(fmt: NumberFormat, a: f64, b: f64) -> Complex64 {
    match fmt {
        NumberFormat::Ri => Complex64::new(a, b),
        NumberFormat::Ma => Complex64::from_polar(a, b.to_radians()),
        NumberFormat::Db => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

/// Parse a 2-port Touchstone v1 file. The option line defaults to
/// `# GHZ S MA R 50` when absent; only the first option line counts.
pub fn parse_touchstone(text: &str) -> Result<TwoPortData> {
    let mut unit = 1e9;
    let mut fmt = NumberFormat::Ma;
    let mut z0 = 50.0;
    let mut seen_options = false;
    let mut tokens: Vec<(usize, f64)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            return Err(Error::parse(
                line_no,
                "Touchstone v2 keywords are not supported; export the file as Touchstone v1",
            ));
        }
        if let Some(opts) = line.strip_prefix('#') {
            if seen_options {
                continue;
            }
            seen_options = true;
            let words: Vec<String> = opts.split_whitespace().map(|w| w.to_ascii_uppercase()).collect();
            let mut i = 0;
            while i < words.len() {
                match words[i].as_str() {
                    "HZ" => unit = 1.0,
                    "KHZ" => unit = 1e3,
                    "MHZ" => unit = 1e6,
                    "GHZ" => unit = 1e9,
                    "S" => {}
                    "Y" | "Z" | "G" | "H" => {
                        return Err(Error::parse(line_no, format!("parameter type {} not supported, need S", words[i])))
                    }
                    "RI" => fmt = NumberFormat::Ri,
                    "MA" => fmt = NumberFormat::Ma,
                    "DB" => fmt = NumberFormat::Db,
                    "R" => {
                        i += 1;
                        z0 = words
                            .get(i)
                            .and_then(|w| w.parse::<f64>().ok())
                            .filter(|v| *v > 0.0 && v.is_finite())
                            .ok_or_else(|| Error::parse(line_no, "R must be followed by a positive impedance"))?;
                    }
                    other => return Err(Error::parse(line_no, format!("unknown option `{other}`"))),
                }
                i += 1;
            }
            continue;
        }
        for w in line.split_whitespace() {
            let v = w
                .parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("`{w}` is not a number")))?;
            tokens.push((line_no, v));
        }
    }
    if !tokens.len().is_multiple_of(9) {
        let line = tokens[tokens.len() - tokens.len() % 9].0;
        return Err(Error::parse(line, "incomplete 2-port record (need 9 numbers)"));
    }
    let mut frequencies = Vec::with_capacity(tokens.len() / 9);
    let mut s = Vec::with_capacity(tokens.len() / 9);
    for rec in tokens.chunks(9) {
        let v: Vec<f64> = rec.iter().map(|t| t.1).collect();
        let f = v[0] * unit;
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::parse(rec[0].0, "frequency must be positive"));
        }
        if let Some(&last) = frequencies.last() {
            if f <= last {
                return Err(Error::NonMonotoneFrequency { index: frequencies.len() });
            }
        }
        let c = |i: usize| pair_to_complex(fmt, v[1 + 2 * i], v[2 + 2 * i]);
        // record order is S11 S21 S12 S22
        s.push(CMatrix2::new(c(0), c(2), c(1), c(3)));
        frequencies.push(f);
    }
    Ok(TwoPortData { frequencies, s, z0 })
}

/// Write as `# HZ S RI R z0` with 17 significant digits.
pub fn write_touchstone(d: &TwoPortData) -> String {
    let mut out = format!("! 2-port S-parameters\n# HZ S RI R {}\n", d.z0);
    for (f, s) in d.frequencies.iter().zip(&d.s) {
        out += &format!("{:.16e}", f);
        for v in [s[(0, 0)], s[(1, 0)], s[(0, 1)], s[(1, 1)]] {
            out += &format!(" {:.16e} {:.16e}", v.re, v.im);
        }
        out.push('\n');
    }
    out
}

/// `Y = (1/Z0)(I − S)(I + S)⁻¹`.
pub fn s_to_y_matrix(s: &CMatrix2, z0: f64, index: usize) -> Result<CMatrix2> {
    let id = CMatrix2::identity();
    let a = id + s;
    let scale = 1.0 + s.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if a.determinant().norm() <= 1e-12 * scale * scale {
        return Err(Error::SingularConversion { index });
    }
    let inv = a.try_inverse().ok_or(Error::SingularConversion { index })?;
    Ok((id - s) * inv / Complex64::new(z0, 0.0))
}

/// `S = (I − Z0 Y)(I + Z0 Y)⁻¹`.
pub fn y_to_s_matrix(y: &CMatrix2, z0: f64) -> Option<CMatrix2> {
    let id = CMatrix2::identity();
    let zy = y * Complex64::new(z0, 0.0);
    (id + zy).try_inverse().map(|inv| (id - zy) * inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YData {
    pub frequencies: Vec<f64>,
    pub y: Vec<CMatrix2>,
    /// Indices (into the input) of points dropped as singular.
    pub dropped: Vec<usize>,
}

/// Convert every point; singular points are dropped and listed.
pub fn s_to_y(d: &TwoPortData) -> YData {
    let mut out = YData {
        frequencies: vec![],
        y: vec![],
        dropped: vec![],
    };
    for (i, (f, s)) in d.frequencies.iter().zip(&d.s).enumerate() {
        match s_to_y_matrix(s, d.z0, i) {
            Ok(y) => {
                out.frequencies.push(*f);
                out.y.push(y);
            }
            Err(_) => out.dropped.push(i),
        }
    }
    out
}

pub fn y_to_s(y: &YData, z0: f64) -> Result<TwoPortData> {
    let s = y
        .y
        .iter()
        .enumerate()
        .map(|(i, m)| y_to_s_matrix(m, z0).ok_or(Error::SingularConversion { index: i }))
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoPortData {
        frequencies: y.frequencies.clone(),
        s,
        z0,
    })
}

/// Resonator admittance `−Y12` of a series two-port, plus the reciprocity
/// mismatch `max |Y12 − Y21| / max |Y12|`.
pub fn extract_y12(y: &YData) -> Result<(AdmittanceSpectrum, f64)> {
    if y.y.is_empty() {
        return Err(Error::InsufficientData("no convertible S-parameter points".into()));
    }
    let peak = y.y.iter().map(|m| m[(0, 1)].norm()).fold(0.0, f64::max);
    let dev = y.y.iter().map(|m| (m[(0, 1)] - m[(1, 0)]).norm()).fold(0.0, f64::max);
    let mismatch = if peak > 0.0 { dev / peak } else { 0.0 };
    let spec = AdmittanceSpectrum::new(y.frequencies.clone(), y.y.iter().map(|m| -m[(0, 1)]).collect())?;
    Ok((spec, mismatch))
}

/// Two-port of a single series element with admittance `y`.
pub fn series_two_port(y: Complex64) -> CMatrix2 {
    CMatrix2::new(y, -y, -y, y)
}

pub const ADMITTANCE_CSV_HEADER: &str = "f_hz,re_y,im_y";

pub fn write_admittance_csv(s: &AdmittanceSpectrum) -> String {
    let mut out = format!("{ADMITTANCE_CSV_HEADER}\n");
    for (f, y) in s.frequencies.iter().zip(&s.y) {
        out += &format!("{},{},{}\n", f, y.re, y.im);
    }
    out
}

pub fn parse_admittance_csv(text: &str) -> Result<AdmittanceSpectrum> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ADMITTANCE_CSV_HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{ADMITTANCE_CSV_HEADER}`"))),
    }
    let mut f = vec![];
    let mut y = vec![];
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(k + 1, "bad number"))?;
        if v.len() != 3 {
            return Err(Error::parse(k + 1, "expected 3 fields"));
        }
        f.push(v[0]);
        y.push(Complex64::new(v[1], v[2]));
    }
    AdmittanceSpectrum::new(f, y)
}

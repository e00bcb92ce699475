use super::modes::ModeSolution;
use crate::linalg::{dot, CsrMatrix};

/// Modal assurance criterion in the mass inner product.
pub fn mac(a: &[f64], b: &[f64], mass: &CsrMatrix) -> f64 {
    let mb = mass.mul_vec(b);
    let ma = mass.mul_vec(a);
    let ab = dot(a, &mb);
    let aa = dot(a, &ma);
    let bb = dot(b, &mb);
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab * ab / (aa * bb)
}

/// Minimum MAC for a short/float pair.
pub const PAIR_MAC: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePair {
    pub short: usize,
    pub float: usize,
    pub fs: f64,
    pub fp: f64,
    pub mac: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub pairs: Vec<ModePair>,
    pub unpaired_short: Vec<usize>,
    pub unpaired_float: Vec<usize>,
}

/// Match short-circuit (resonance) modes to floating (antiresonance) modes by
/// greedy maximum MAC, one-to-one. Pairs need MAC ≥ 0.8 and fp ≥ fs; an fp
/// below fs by less than 1e-9 relative is treated as equal.
pub fn pair_modes(short: &[ModeSolution], float: &[ModeSolution], mass: &CsrMatrix) -> Pairing {
    let mass_float: Vec<Vec<f64>> = float.iter().map(|m| mass.mul_vec(&m.u)).collect();
    let norm = |u: &[f64], mu: &[f64]| dot(u, mu);
    let float_norms: Vec<f64> = float.iter().zip(&mass_float).map(|(m, mu)| norm(&m.u, mu)).collect();

    let mut candidates = Vec::new();
    for (i, s) in short.iter().enumerate() {
        let ms = mass.mul_vec(&s.u);
        let ss = norm(&s.u, &ms);
        for (j, f) in float.iter().enumerate() {
            let sf = dot(&s.u, &mass_float[j]);
            let m = if ss > 0.0 && float_norms[j] > 0.0 {
                sf * sf / (ss * float_norms[j])
            } else {
                0.0
            };
            if m >= PAIR_MAC && f.frequency >= s.frequency * (1.0 - 1e-9) {
                candidates.push((m, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_s = vec![false; short.len()];
    let mut used_f = vec![false; float.len()];
    let mut pairs = Vec::new();
    for (m, i, j) in candidates {
        if used_s[i] || used_f[j] {
            continue;
        }
        used_s[i] = true;
        used_f[j] = true;
        let fs = short[i].frequency;
        pairs.push(ModePair {
            short: i,
            float: j,
            fs,
            fp: float[j].frequency.max(fs),
            mac: m,
        });
    }
    pairs.sort_by_key(|p| p.short);
    Pairing {
        pairs,
        unpaired_short: (0..short.len()).filter(|&i| !used_s[i]).collect(),
        unpaired_float: (0..float.len()).filter(|&j| !used_f[j]).collect(),
    }
}

//! Sparse storage, banded LU and a shift-invert block Krylov eigensolver for
//! the symmetric definite pencils produced by the unit-cell model.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Triplet accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Triplets::new(nrows, ncols).to_csr()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `selfᵀ x`.
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (r, xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Banded LU with partial pivoting, plus an optional dense border of a few
/// trailing unknowns eliminated through a Schur complement.
#[derive(Debug, Clone)]
pub struct BorderedBandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` stores columns `i - kl ..= i + kl + ku` (fill from pivoting).
    ab: Vec<f64>,
    width: usize,
    piv: Vec<usize>,
    /// Border columns `B` (n x nb), rows `C` (nb x n), corner `D` (nb x nb).
    border_cols: Vec<Vec<f64>>,
    border_rows: Vec<Vec<f64>>,
    /// `A⁻¹ B`, computed once.
    ainv_b: Vec<Vec<f64>>,
    schur_lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BorderedBandLu {
    /// Factor the matrix `m` (square, size `n + nb`) where unknown `k` is
    /// placed at banded position `perm[k]` if `perm[k] < n`, otherwise at border
    /// slot `perm[k] - n`.
    pub fn factor(m: &CsrMatrix, perm: &[usize], n: usize) -> Result<Self> {
        let total = m.nrows;
        let nb = total - n;
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..total {
            let pr = perm[r];
            if pr >= n {
                continue;
            }
            for (c, _) in m.row(r) {
                let pc = perm[c];
                if pc >= n {
                    continue;
                }
                if pc < pr {
                    kl = kl.max(pr - pc);
                } else {
                    ku = ku.max(pc - pr);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * width];
        let mut border_cols = vec![vec![0.0; n]; nb];
        let mut border_rows = vec![vec![0.0; n]; nb];
        let mut corner = DMatrix::zeros(nb, nb);
        for r in 0..total {
            let pr = perm[r];
            for (c, v) in m.row(r) {
                let pc = perm[c];
                match (pr < n, pc < n) {
                    (true, true) => ab[pr * width + (pc + kl - pr)] += v,
                    (true, false) => border_cols[pc - n][pr] += v,
                    (false, true) => border_rows[pr - n][pc] += v,
                    (false, false) => corner[(pr - n, pc - n)] += v,
                }
            }
        }
        let mut lu = BorderedBandLu {
            n,
            kl,
            ku,
            ab,
            width,
            piv: vec![0; n],
            border_cols,
            border_rows,
            ainv_b: Vec::new(),
            schur_lu: None,
        };
        lu.factor_band()?;
        if nb > 0 {
            let ainv_b: Vec<Vec<f64>> = lu.border_cols.iter().map(|b| lu.solve_band(b)).collect();
            let mut s = corner;
            for i in 0..nb {
                for j in 0..nb {
                    s[(i, j)] -= dot(&lu.border_rows[i], &ainv_b[j]);
                }
            }
            let slu = s.lu();
            if !slu.is_invertible() {
                return Err(Error::EigSolverFailure("singular border block".into()));
            }
            lu.ainv_b = ainv_b;
            lu.schur_lu = Some(slu);
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        // column j of row i, valid for i - kl <= j <= i + kl + ku
        i * self.width + (j + self.kl - i)
    }

    fn factor_band(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let kup = self.kl + self.ku;
        let scale = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.at(k, k)].abs();
            for i in (k + 1)..=last {
                let v = self.ab[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || best == 0.0 {
                return Err(Error::EigSolverFailure(format!("zero pivot at row {k}")));
            }
            self.piv[k] = p;
            let cmax = (k + kup).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    let a = self.at(k, j);
                    let b = self.at(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.at(k, k)];
            for i in (k + 1)..=last {
                let ik = self.at(i, k);
                let f = self.ab[ik] / pivot;
                if f == 0.0 {
                    continue;
                }
                self.ab[ik] = f;
                let (ki0, ii0) = (self.at(k, k + 1), self.at(i, k + 1));
                let len = cmax - k;
                for t in 0..len {
                    self.ab[ii0 + t] -= f * self.ab[ki0 + t];
                }
            }
        }
        Ok(())
    }

    fn solve_band(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let kl = self.kl;
        let kup = self.kl + self.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in (k + 1)..=(k + kl).min(n - 1) {
                    x[i] -= self.ab[self.at(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in (k + 1)..=(k + kup).min(n - 1) {
                s -= self.ab[self.at(k, j)] * x[j];
            }
            x[k] = s / self.ab[self.at(k, k)];
        }
        x
    }

    /// Solve in permuted coordinates: `rhs` = (band part, border part).
    pub fn solve(&self, band_rhs: &[f64], border_rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = self.solve_band(band_rhs);
        let Some(slu) = &self.schur_lu else {
            return (y, Vec::new());
        };
        let nb = self.border_cols.len();
        let mut r = nalgebra::DVector::from_column_slice(border_rhs);
        for i in 0..nb {
            r[i] -= dot(&self.border_rows[i], &y);
        }
        let xb = slu.solve(&r).expect("schur complement checked invertible");
        for j in 0..nb {
            axpy(-xb[j], &self.ainv_b[j], &mut y);
        }
        (y, xb.iter().copied().collect())
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }
}

/// One eigenpair of `K u = λ M u`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    /// M-normalized.
    pub vector: Vec<f64>,
    /// Secondary (condensed) unknowns reconstructed for this vector.
    pub secondary: Vec<f64>,
}

/// Operator `x -> (K - σM)⁻¹ M x` restricted to the primary unknowns, also
/// returning the secondary unknowns produced by the solve.
pub trait ShiftInvert {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn mass_mul(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct KrylovOptions {
    pub block: usize,
    pub max_dim: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            block: 4,
            max_dim: 1500,
            tol: 1e-9,
            seed: 0x5eed,
        }
    }
}

/// All eigenvalues of the pencil in `[lo, hi]`, found by block Krylov
/// iteration on the shift-inverted operator with shift `sigma` and full
/// M-reorthogonalization.
pub fn eigs_in_interval(
    op: &dyn ShiftInvert,
    sigma: f64,
    lo: f64,
    hi: f64,
    opts: &KrylovOptions,
) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    let b = opts.block.max(1).min(n);
    let max_dim = opts.max_dim.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Ritz values of interest: λ within the interval padded by a quarter of
    // its half-width, mapped to θ = 1/(λ - σ).
    let half = 0.5 * (hi - lo);
    let pad = 0.25 * half.max(f64::MIN_POSITIVE);
    let in_guard = |lam: f64| lam >= lo - pad && lam <= hi + pad;

    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut mq: Vec<Vec<f64>> = Vec::new();
    let mut w: Vec<Vec<f64>> = Vec::new();
    let mut wsec: Vec<Vec<f64>> = Vec::new();

    let mut block: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let mut stable_rounds = 0;
    let mut last_count = usize::MAX;
    let mut iteration = 0usize;

    loop {
        iteration += 1;
        let (kept, _) = orthonormalize(&mut block, &q, &mq, op);
        if kept.is_empty() {
            // invariant subspace reached
            break;
        }
        let added = kept.len();
        for v in kept {
            let mv = op.mass_mul(&v);
            let (wv, sec) = op.apply(&v);
            q.push(v);
            mq.push(mv);
            w.push(wv);
            wsec.push(sec);
        }
        let m = q.len();
        let newest = m - added;
        block = w[newest..].to_vec();

        let at_limit = m + b > max_dim;
        if !(iteration.is_multiple_of(2) || at_limit) {
            continue;
        }

        // W_last - Q QᵀM W_last = V C; the Ritz residual of s is ||C s_last||.
        let mut residual = block.clone();
        let (_, coupling) = orthonormalize(&mut residual, &q, &mq, op);
        let eig = SymmetricEigen::new(rayleigh_matrix(&mq, &w));

        let mut all_ok = true;
        let mut any_beyond = false;
        let mut count = 0;
        for (i, &theta) in eig.eigenvalues.iter().enumerate() {
            if theta.abs() < 1e-300 {
                any_beyond = true;
                continue;
            }
            let lam = sigma + 1.0 / theta;
            if !in_guard(lam) {
                any_beyond = true;
                continue;
            }
            let s = eig.eigenvectors.column(i);
            let mut rn = 0.0;
            for r in 0..coupling.nrows() {
                let acc: f64 = (0..added).map(|c| coupling[(r, c)] * s[newest + c]).sum();
                rn += acc * acc;
            }
            if rn.sqrt() > opts.tol * theta.abs() {
                all_ok = false;
            }
            if lam >= lo && lam <= hi {
                count += 1;
            }
        }
        if all_ok && any_beyond {
            stable_rounds = if count == last_count { stable_rounds + 1 } else { 0 };
            if stable_rounds >= 1 {
                break;
            }
        } else {
            stable_rounds = 0;
        }
        last_count = count;
        if at_limit {
            if all_ok {
                break;
            }
            return Err(Error::EigSolverFailure(format!(
                "no convergence within {max_dim} Krylov vectors"
            )));
        }
    }

    let t = rayleigh_matrix(&mq, &w);
    let eig = SymmetricEigen::new(t);
    let mut out = Vec::new();
    for (i, &theta) in eig.eigenvalues.iter().enumerate() {
        if theta.abs() < 1e-300 {
            continue;
        }
        let lam = sigma + 1.0 / theta;
        if lam < lo || lam > hi {
            continue;
        }
        let s = eig.eigenvectors.column(i);
        // one extra inverse-iteration step: y = W s / θ
        let mut v = vec![0.0; n];
        let mut sec = vec![0.0; wsec.first().map_or(0, |x| x.len())];
        for (k, sk) in s.iter().enumerate() {
            axpy(*sk / theta, &w[k], &mut v);
            axpy(*sk / theta, &wsec[k], &mut sec);
        }
        let norm = dot(&v, &op.mass_mul(&v)).sqrt();
        let sign = if v.iter().fold(0.0, |a: f64, x| if x.abs() > a.abs() { *x } else { a }) < 0.0 {
            -1.0
        } else {
            1.0
        };
        v.iter_mut().for_each(|x| *x *= sign / norm);
        sec.iter_mut().for_each(|x| *x *= sign / norm);
        out.push(EigenPair {
            lambda: lam,
            vector: v,
            secondary: sec,
        });
    }
    out.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(out)
}

fn rayleigh_matrix(mq: &[Vec<f64>], w: &[Vec<f64>]) -> DMatrix<f64> {
    let m = mq.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let a = 0.5 * (dot(&mq[i], &w[j]) + dot(&mq[j], &w[i]));
            t[(i, j)] = a;
            t[(j, i)] = a;
        }
    }
    t
}

/// Two-pass block Gram–Schmidt in the M inner product. Returns the kept
/// orthonormal vectors and the (kept x input) upper-triangular coefficients.
fn orthonormalize(
    block: &mut [Vec<f64>],
    q: &[Vec<f64>],
    mq: &[Vec<f64>],
    op: &dyn ShiftInvert,
) -> (Vec<Vec<f64>>, DMatrix<f64>) {
    let nb = block.len();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut kept_m: Vec<Vec<f64>> = Vec::new();
    let mut coeffs = DMatrix::zeros(nb, nb);
    for (j, v) in block.iter_mut().enumerate() {
        let norm0 = dot(v, &op.mass_mul(v)).sqrt();
        for _ in 0..2 {
            for (qi, mqi) in q.iter().zip(mq) {
                let c = dot(mqi, v);
                axpy(-c, qi, v);
            }
            for (k, (qi, mqi)) in kept.iter().zip(&kept_m).enumerate() {
                let c = dot(mqi, v);
                coeffs[(k, j)] += c;
                axpy(-c, qi, v);
            }
        }
        let mv = op.mass_mul(v);
        let norm = dot(v, &mv).sqrt();
        if norm > 1e-10 * norm0 && norm > 0.0 {
            coeffs[(kept.len(), j)] = norm;
            let inv = 1.0 / norm;
            kept.push(v.iter().map(|x| x * inv).collect());
            kept_m.push(mv.iter().map(|x| x * inv).collect());
        }
    }
    let rows = kept.len();
    let c = coeffs.rows(0, rows).into_owned();
    (kept, c)
}

/// Dense reference solver: all eigenpairs of `K x = λ M x` via Cholesky of M.
pub fn dense_generalized_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<(f64, Vec<f64>)>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::EigSolverFailure("mass matrix not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EigSolverFailure("singular Cholesky factor".into()))?;
    let mut a = &linv * k * linv.transpose();
    a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut out: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lam)| {
            let y = eig.eigenvectors.column(i);
            let x = linv.transpose() * y;
            (lam, x.iter().copied().collect())
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

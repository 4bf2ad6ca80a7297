//! Dense linear-algebra helpers shared by the cocycle and geometry modules.
//!
//! The central piece is [`log_svd`], a one-sided Jacobi SVD that works on
//! matrices given column-wise as `exp(scale_j) * dir_j`. Long cocycle
//! products and far-away points of the SPD space have singular values well
//! outside the range of `f64`; keeping the column scales in log form lets the
//! rotations be computed from scale *ratios*, which never overflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Householder QR with the sign convention `R_ii >= 0`.
pub fn qr_positive(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis of the column span of `frame` (which must have full column rank).
pub fn orthonormalize(frame: &DMatrix<f64>) -> DMatrix<f64> {
    if frame.ncols() == 0 {
        return frame.clone();
    }
    qr_positive(frame).0
}

/// A square or tall matrix stored column by column as `exp(scale) * dir`.
#[derive(Debug, Clone)]
pub struct ScaledColumns {
    pub scales: Vec<f64>,
    pub dirs: Vec<DVector<f64>>,
}

impl ScaledColumns {
    /// Builds the columns from entries given as `(sign, log|entry|)`.
    ///
    /// Zero entries are encoded with `log|entry| = -inf`.
    pub fn from_log_entries<F>(nrows: usize, ncols: usize, entry: F) -> Self
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let mut scales = Vec::with_capacity(ncols);
        let mut dirs = Vec::with_capacity(ncols);
        for j in 0..ncols {
            let raw: Vec<(f64, f64)> = (0..nrows).map(|i| entry(i, j)).collect();
            let m = raw
                .iter()
                .filter(|(s, _)| *s != 0.0)
                .map(|&(_, l)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            let v = DVector::from_iterator(
                nrows,
                raw.iter().map(|&(s, l)| if s == 0.0 || l == f64::NEG_INFINITY { 0.0 } else { s * (l - m).exp() }),
            );
            let (scale, dir) = normalize_scaled(m, v);
            scales.push(scale);
            dirs.push(dir);
        }
        Self { scales, dirs }
    }

    /// Columns of an ordinary matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self::from_log_entries(m.nrows(), m.ncols(), |i, j| {
            let x = m[(i, j)];
            (x.signum() * (x != 0.0) as u8 as f64, x.abs().ln())
        })
    }

    /// The product `M * diag(exp(col_log))`.
    pub fn scale_columns(mut self, col_log: &[f64]) -> Self {
        for (s, c) in self.scales.iter_mut().zip(col_log) {
            *s += c;
        }
        self
    }
}

fn normalize_scaled(scale: f64, v: DVector<f64>) -> (f64, DVector<f64>) {
    let n = v.norm();
    if n == 0.0 || !scale.is_finite() {
        (f64::NEG_INFINITY, v)
    } else {
        (scale + n.ln(), v / n)
    }
}

/// Singular value decomposition in log scale: `M = U diag(exp(log_sv)) V^T`.
#[derive(Debug, Clone)]
pub struct LogSvd {
    /// Logarithms of the singular values, descending.
    pub log_sv: Vec<f64>,
    /// Left singular vectors (columns), matched to `log_sv`.
    pub left: DMatrix<f64>,
    /// Right singular vectors (columns), matched to `log_sv`.
    pub right: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD on log-scaled columns.
///
/// For a pair of columns with scale ratio `r = exp(t_q - t_p) <= 1` the
/// rotation tangent is `r * tau` with `tau = O(1)`, so both updated columns can
/// be written relative to their own scale without ever forming `1/r`.
pub fn log_svd(cols: ScaledColumns) -> LogSvd {
    let ScaledColumns { mut scales, mut dirs } = cols;
    let n = dirs.len();
    let m = dirs.first().map(|d| d.len()).unwrap_or(0);
    let mut rot = DMatrix::<f64>::identity(n, n);

    for _sweep in 0..80 {
        let mut max_cos = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                if scales[a] == f64::NEG_INFINITY || scales[b] == f64::NEG_INFINITY {
                    continue;
                }
                let c = dirs[a].dot(&dirs[b]);
                max_cos = max_cos.max(c.abs());
                if c.abs() < 1e-15 {
                    continue;
                }
                // p = larger column, q = smaller column.
                let (p, q) = if scales[a] >= scales[b] { (a, b) } else { (b, a) };
                let r = (scales[q] - scales[p]).exp();
                let w = (1.0 - r * r) / (2.0 * c.abs());
                let tau = -c.signum() / (w + (r * r + w * w).sqrt());
                let t_rot = r * tau;
                let cth = 1.0 / (1.0 + t_rot * t_rot).sqrt();
                let sth = cth * t_rot;

                let new_p = &dirs[p] * cth - &dirs[q] * (cth * tau * r * r);
                let new_q = &dirs[p] * (cth * tau) + &dirs[q] * cth;
                let (sp, dp) = normalize_scaled(scales[p], new_p);
                let (sq, dq) = normalize_scaled(scales[q], new_q);
                scales[p] = sp;
                dirs[p] = dp;
                scales[q] = sq;
                dirs[q] = dq;

                let zp = rot.column(p).clone_owned();
                let zq = rot.column(q).clone_owned();
                rot.set_column(p, &(&zp * cth - &zq * sth));
                rot.set_column(q, &(&zp * sth + &zq * cth));
            }
        }
        if max_cos < 1e-15 {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scales[j].partial_cmp(&scales[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut left = DMatrix::zeros(m, n);
    let mut right = DMatrix::zeros(n, n);
    let mut log_sv = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        left.set_column(k, &dirs[i]);
        right.set_column(k, &rot.column(i));
        log_sv.push(scales[i]);
    }
    LogSvd { log_sv, left, right }
}

/// Symmetric eigen-decomposition with eigenvalues sorted descending.
pub fn sym_eig_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Applies a scalar function to a symmetric matrix through its eigenvalues.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig_desc(m);
    let fv = DMatrix::from_diagonal(&vals.map(f));
    &vecs * fv * vecs.transpose()
}

/// Matrix logarithm of an SPD matrix; eigenvalues are clamped at `1e-300`.
pub fn spd_log(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| x.max(1e-300).ln())
}

pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::exp)
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Operator (spectral) norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Cosines of the principal angles between the spans of two orthonormal frames, descending.
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    singular_values(&(a.transpose() * b)).into_iter().map(|c| c.min(1.0)).collect()
}

/// Largest principal angle between two subspaces of the same dimension.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let proj = &qb * qb.transpose();
    // sin of the largest angle = norm of the part of span(a) outside span(b)
    let resid = &qa - &proj * &qa;
    op_norm(&resid).min(1.0).asin()
}

/// Orthonormalizes the columns of `new` against the orthonormal columns of `basis`
/// and each other (modified Gram-Schmidt, two passes).
pub fn gram_schmidt_against(basis: &DMatrix<f64>, new: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(new.nrows(), new.ncols());
    for j in 0..new.ncols() {
        let mut v = new.column(j).into_owned();
        for _ in 0..2 {
            for b in basis.column_iter().chain(out.columns(0, j).column_iter()) {
                let c = b.dot(&v);
                if c != 0.0 {
                    v -= b * c;
                }
            }
        }
        let n = v.norm();
        out.set_column(j, &(v / n));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of span(frame) in R^n.
pub fn orthogonal_complement(frame: &DMatrix<f64>) -> DMatrix<f64> {
    let n = frame.nrows();
    let k = frame.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = frame.clone().svd(true, false);
    let u = svd.u.expect("svd u");
    let full = if u.ncols() == n {
        u
    } else {
        // complete the basis with a full QR of [u | I]
        let mut aug = DMatrix::zeros(n, u.ncols() + n);
        aug.view_mut((0, 0), (n, u.ncols())).copy_from(&u);
        aug.view_mut((0, u.ncols()), (n, n)).copy_from(&DMatrix::identity(n, n));
        let q = aug.qr().q();
        q.columns(0, n).into_owned()
    };
    let mut order: Vec<usize> = (0..full.ncols()).collect();
    let weights: Vec<f64> = (0..full.ncols())
        .map(|j| (frame.transpose() * full.column(j)).norm())
        .collect();
    order.sort_by(|&i, &j| weights[i].partial_cmp(&weights[j]).unwrap());
    let mut out = DMatrix::zeros(n, n - k);
    for (c, &j) in order.iter().take(n - k).enumerate() {
        out.set_column(c, &full.column(j));
    }
    orthonormalize(&out)
}

/// All k-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// k-th compound matrix: entry `(I, J)` is the minor on rows `I`, columns `J`,
/// with index sets in lexicographic order.
pub fn compound(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let rows = combinations(m.nrows(), k);
    let cols = combinations(m.ncols(), k);
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        let sub = DMatrix::from_fn(k, k, |i, j| m[(rows[a][i], cols[b][j])]);
        sub.determinant()
    })
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Standard symplectic form `[[0, I], [-I, 0]]` on R^{2g}.
pub fn symplectic_form(g: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * g, 2 * g);
    for i in 0..g {
        j[(i, g + i)] = 1.0;
        j[(g + i, i)] = -1.0;
    }
    j
}

/// `diag(I_p, -I_q)`.
pub fn indefinite_form(p: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        p + q,
        (0..p + q).map(|i| if i < p { 1.0 } else { -1.0 }),
    ))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

/// Haar-ish random orthogonal matrix (QR of a Gaussian matrix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    qr_positive(&gaussian_matrix(rng, n, n)).0
}

/// Random symmetric positive-definite matrix `exp(S)` with `S` symmetric of the given scale.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n) * scale;
    sym_exp(&((&g + g.transpose()) * 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_svd_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..6 {
            let m = gaussian_matrix(&mut rng, n, n);
            let ls = log_svd(ScaledColumns::from_matrix(&m));
            let dense = singular_values(&m);
            for (a, b) in ls.log_sv.iter().zip(&dense) {
                assert!((a.exp() - b).abs() < 1e-12 * b.max(1.0), "{a} {b}");
            }
            let recon = &ls.left * DMatrix::from_diagonal(&DVector::from_iterator(n, ls.log_sv.iter().map(|l| l.exp()))) * ls.right.transpose();
            assert!((recon - &m).norm() < 1e-11);
        }
    }

    #[test]
    fn log_svd_handles_scales_beyond_f64() {
        // diag(e^2000, e^-2000) rotated: the dense matrix is not representable
        let th: f64 = 0.3;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let cols = ScaledColumns::from_matrix(&rot).scale_columns(&[2000.0, -2000.0]);
        let ls = log_svd(cols);
        assert!((ls.log_sv[0] - 2000.0).abs() < 1e-9);
        assert!((ls.log_sv[1] + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn compound_of_diagonal_is_diagonal_of_products() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let c = compound(&m, 2);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![6.0, 10.0, 15.0]));
        assert!((c - want).norm() < 1e-14);
    }

    #[test]
    fn complement_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = orthonormalize(&gaussian_matrix(&mut rng, 5, 2));
        let c = orthogonal_complement(&f);
        assert_eq!(c.ncols(), 3);
        assert!((f.transpose() * &c).norm() < 1e-12);
    }
}

//! The symmetric space of determinant-one SPD matrices.
//!
//! Distance is `d(p, q) = ||log(p^{-1/2} q p^{-1/2})||_F` (trace form). With the
//! embedding `g -> g g^T` this gives `d(I, g g^T) = 2 ||r(g)||`, where `r(g)` is
//! the vector of log singular values of `g`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cocycle::{CocycleProduct, MatrixCocycle};
use crate::dynsys::{dyadic_indices, State};
use crate::error::{Error, Result};
use crate::linalg::{self, LogSvd, ScaledColumns};

const SYMMETRY_TOL: f64 = 1e-12;

/// A point of `P_n`: symmetric positive definite with determinant one.
///
/// Stored as `V diag(exp(l)) V^T` with orthogonal `V` and `sum l = 0`, so points
/// far from the identity are represented without overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdPoint {
    vecs: DMatrix<f64>,
    log_eigs: DVector<f64>,
}

impl SpdPoint {
    /// Validates and det-normalizes an SPD matrix.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let asym = (m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(Error::Domain(format!("matrix is not symmetric (asymmetry {asym:.3e})")));
        }
        let (vals, vecs) = linalg::sym_eig_desc(m);
        if vals.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("matrix is not positive definite".into()));
        }
        Ok(Self::from_log_eigen(vecs, vals.map(f64::ln)))
    }

    /// `V diag(exp(l)) V^T`, with `l` shifted to mean zero.
    pub fn from_log_eigen(vecs: DMatrix<f64>, log_eigs: DVector<f64>) -> Self {
        let mean = log_eigs.mean();
        Self { vecs, log_eigs: log_eigs.map(|l| l - mean) }
    }

    pub fn identity(n: usize) -> Self {
        Self { vecs: DMatrix::identity(n, n), log_eigs: DVector::zeros(n) }
    }

    /// `exp(x)` for symmetric `x` (the trace part is dropped).
    pub fn exp_sym(x: &DMatrix<f64>) -> Self {
        let (vals, vecs) = linalg::sym_eig_desc(x);
        Self::from_log_eigen(vecs, vals)
    }

    /// `diag(exp(l))` normalized.
    pub fn diagonal_exp(log_diag: &[f64]) -> Self {
        let n = log_diag.len();
        Self::from_log_eigen(DMatrix::identity(n, n), DVector::from_row_slice(log_diag))
    }

    pub fn dim(&self) -> usize {
        self.log_eigs.len()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vecs
    }

    pub fn log_eigenvalues(&self) -> &DVector<f64> {
        &self.log_eigs
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.fn_of_eigs(f64::exp)
    }

    pub fn log(&self) -> DMatrix<f64> {
        self.fn_of_eigs(|l| l)
    }

    /// `p^{1/2}` (symmetric square root).
    pub fn sqrt(&self) -> DMatrix<f64> {
        self.fn_of_eigs(|l| (0.5 * l).exp())
    }

    fn fn_of_eigs(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.log_eigs.map(f));
        &self.vecs * d * self.vecs.transpose()
    }

    /// Sorted eigenvalues of `log p` (equal to `2 r(g)` when `p = g g^T`).
    pub fn radius_vector(&self) -> CartanVector {
        CartanVector::from_unsorted(self.log_eigs.iter().copied().collect())
    }

    /// `g . p = g p g^T`, det-normalized.
    pub fn congruence(&self, g: &DMatrix<f64>) -> SpdPoint {
        let gv = g * &self.vecs;
        let cols = ScaledColumns::from_matrix(&gv).scale_columns(&(&self.log_eigs * 0.5).as_slice().to_vec());
        let ls = linalg::log_svd(cols);
        SpdPoint::from_log_eigen(ls.left, DVector::from_iterator(ls.log_sv.len(), ls.log_sv.iter().map(|l| 2.0 * l)))
    }

    /// Spread of the log-eigenvalues, used to orient pairwise computations.
    fn spread(&self) -> f64 {
        self.log_eigs.max() - self.log_eigs.min()
    }
}

/// SVD of `C = exp(l_b/2) V_b^T V_a exp(-l_a/2)`, whose singular values are
/// the square roots of the eigenvalues of `a^{-1} b`.
fn relative_svd(a: &SpdPoint, b: &SpdPoint) -> LogSvd {
    let x = b.vecs.transpose() * &a.vecs;
    let (la, lb) = (&a.log_eigs, &b.log_eigs);
    let n = a.dim();
    linalg::log_svd(ScaledColumns::from_log_entries(n, n, |i, j| {
        let v = x[(i, j)];
        (v.signum() * (v != 0.0) as u8 as f64, 0.5 * lb[i] + v.abs().ln() - 0.5 * la[j])
    }))
}

fn check_dims(p: &SpdPoint, q: &SpdPoint) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    Ok(())
}

/// `2 log sigma(C(a -> b))`: the eigenvalues of `log(a^{-1/2} b a^{-1/2})`, unsorted.
///
/// `C(b -> a) = C(a -> b)^{-1}`, so the side with the larger spread is always
/// the column-scaled one.
fn relative_log_eigs(a: &SpdPoint, b: &SpdPoint) -> Vec<f64> {
    if a.spread() >= b.spread() {
        relative_svd(a, b).log_sv.iter().map(|l| 2.0 * l).collect()
    } else {
        relative_svd(b, a).log_sv.iter().map(|l| -2.0 * l).collect()
    }
}

pub fn spd_distance(p: &SpdPoint, q: &SpdPoint) -> Result<f64> {
    check_dims(p, q)?;
    Ok(relative_log_eigs(p, q).iter().map(|l| l * l).sum::<f64>().sqrt())
}

/// Point at fraction `t` of the geodesic from `p` to `q`; `t` outside `[0, 1]` extends it.
pub fn spd_geodesic(p: &SpdPoint, q: &SpdPoint, t: f64) -> Result<SpdPoint> {
    check_dims(p, q)?;
    if p.spread() > q.spread() {
        return spd_geodesic(q, p, 1.0 - t);
    }
    let n = p.dim();
    // C(p -> q) = U S Z^T and C(q -> p) = Z S^{-1} U^T
    let ls = relative_svd(q, p);
    // gamma(t) = B B^T with B = V_p exp(l_p/2) Z S^t
    let half = DMatrix::from_diagonal(&p.log_eigs.map(|l| (0.5 * l).exp()));
    let w = &p.vecs * half * &ls.left;
    let col_log: Vec<f64> = ls.log_sv.iter().map(|l| -t * l).collect();
    let b = linalg::log_svd(ScaledColumns::from_matrix(&w).scale_columns(&col_log));
    Ok(SpdPoint::from_log_eigen(
        b.left,
        DVector::from_iterator(n, b.log_sv.iter().map(|l| 2.0 * l)),
    ))
}

pub fn spd_midpoint(p: &SpdPoint, q: &SpdPoint) -> Result<SpdPoint> {
    spd_geodesic(p, q, 0.5)
}

/// Descending vector summing to zero: a point of the closed Weyl chamber.
#[derive(Debug, Clone, PartialEq)]
pub struct CartanVector(Vec<f64>);

impl CartanVector {
    /// Sorts descending; the caller is responsible for the zero sum.
    pub fn from_unsorted(mut v: Vec<f64>) -> Self {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Self(v)
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Sorted log singular values of `g / |det g|^{1/n}`.
pub fn cartan_projection(g: &DMatrix<f64>) -> Result<CartanVector> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
    }
    let ls = linalg::log_svd(ScaledColumns::from_matrix(g));
    if ls.log_sv.iter().any(|l| !l.is_finite()) {
        return Err(Error::Singular { step: 0, log_abs_det: f64::NEG_INFINITY });
    }
    let mean = ls.log_sv.iter().sum::<f64>() / ls.log_sv.len() as f64;
    Ok(CartanVector(ls.log_sv.iter().map(|l| l - mean).collect()))
}

/// `g = k1 diag(a) k2` with orthogonal `k1`, `k2` and `a` weakly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Kak {
    pub k1: DMatrix<f64>,
    pub a: DVector<f64>,
    pub k2: DMatrix<f64>,
}

impl Kak {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.k1 * DMatrix::from_diagonal(&self.a) * &self.k2
    }
}

/// KAK decomposition from the SVD; `k1` is not canonical on Weyl-chamber walls.
pub fn kak_decompose(g: &DMatrix<f64>) -> Result<Kak> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
    }
    let n = g.nrows();
    let svd = g.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    if svd.singular_values[order[n - 1]] <= f64::EPSILON * n as f64 * svd.singular_values[order[0]] {
        return Err(Error::Singular { step: 0, log_abs_det: f64::NEG_INFINITY });
    }
    let mut k1 = DMatrix::zeros(n, n);
    let mut k2 = DMatrix::zeros(n, n);
    let mut a = DVector::zeros(n);
    for (pos, &i) in order.iter().enumerate() {
        k1.set_column(pos, &u.column(i));
        k2.set_row(pos, &vt.row(i));
        a[pos] = svd.singular_values[i];
    }
    Ok(Kak { k1, a, k2 })
}

/// `K(x, y) = -1/2 ||[x, y]||_F^2` after Gram-Schmidt normalization of `(x, y)`.
pub fn sectional_curvature(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != y.shape() || !x.is_square() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
    }
    let nx = x.norm();
    if nx < 1e-12 {
        return Err(Error::Domain("x is zero".into()));
    }
    let xu = x / nx;
    let yo = y - &xu * xu.dot(y);
    let ny = yo.norm();
    if ny < 1e-12 * y.norm().max(1.0) {
        return Err(Error::Domain("x and y are linearly dependent".into()));
    }
    let yu = yo / ny;
    let c = &xu * &yu - &yu * &xu;
    Ok(-0.5 * c.norm_squared())
}

/// Diagonal traceless `alpha` with weakly decreasing entries and its block partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BusemannData {
    alpha: Vec<f64>,
    partition: Vec<usize>,
}

impl BusemannData {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Domain("alpha is empty".into()));
        }
        if alpha.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Domain("alpha entries must be weakly decreasing".into()));
        }
        let tr: f64 = alpha.iter().sum();
        if tr.abs() > 1e-12 * (1.0 + alpha.iter().map(|a| a.abs()).sum::<f64>()) {
            return Err(Error::Domain(format!("alpha has trace {tr}, not 0")));
        }
        let mut partition = vec![1usize];
        for w in alpha.windows(2) {
            if w[0] == w[1] {
                *partition.last_mut().unwrap() += 1;
            } else {
                partition.push(1);
            }
        }
        Ok(Self { alpha, partition })
    }

    /// Unit-norm `alpha` with the given block sizes and strictly decreasing block values.
    pub fn from_block_values(partition: &[usize], values: &[f64]) -> Result<Self> {
        if partition.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: partition.len(), got: values.len() });
        }
        let mut alpha: Vec<f64> = partition
            .iter()
            .zip(values)
            .flat_map(|(&m, &v)| std::iter::repeat_n(v, m))
            .collect();
        let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
        alpha.iter_mut().for_each(|a| *a -= mean);
        let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("alpha is zero".into()));
        }
        alpha.iter_mut().for_each(|a| *a /= norm);
        // normalization can split equal entries by rounding; rebuild block-constant
        let mut out = Vec::with_capacity(alpha.len());
        let mut pos = 0;
        for &m in partition {
            out.extend(std::iter::repeat_n(alpha[pos], m));
            pos += m;
        }
        Self::new(out)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn norm(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// `exp(t alpha)`.
    pub fn ray_point(&self, t: f64) -> SpdPoint {
        let l: Vec<f64> = self.alpha.iter().map(|a| a * t).collect();
        SpdPoint::diagonal_exp(&l)
    }

    fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.partition
            .iter()
            .map(|&m| {
                let r = start..start + m;
                start += m;
                r
            })
            .collect()
    }
}

/// `p = n f n^T` with `n` block upper unipotent and `f` block diagonal SPD.
#[derive(Debug, Clone, PartialEq)]
pub struct NAlphaDecomposition {
    pub n: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

/// Block `U D U^T` factorization, eliminating from the trailing block.
pub fn nalpha_decompose(p: &SpdPoint, b: &BusemannData) -> Result<NAlphaDecomposition> {
    if p.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: b.dim(), got: p.dim() });
    }
    let dim = p.dim();
    let mut s = p.matrix();
    let mut n = DMatrix::identity(dim, dim);
    let mut f = DMatrix::zeros(dim, dim);
    for r in b.block_ranges().into_iter().rev() {
        let (lo, m) = (r.start, r.len());
        let fk = s.view((lo, lo), (m, m)).into_owned();
        let fk_inv = fk
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("trailing block is not positive definite".into()))?
            .inverse();
        f.view_mut((lo, lo), (m, m)).copy_from(&fk);
        if lo > 0 {
            let upper = s.view((0, lo), (lo, m)).into_owned();
            let col = &upper * &fk_inv;
            n.view_mut((0, lo), (lo, m)).copy_from(&col);
            let schur = s.view((0, 0), (lo, lo)) - &col * upper.transpose();
            s.view_mut((0, 0), (lo, lo)).copy_from(&schur);
        }
    }
    Ok(NAlphaDecomposition { n, f })
}

fn check_unit(b: &BusemannData) -> Result<()> {
    if (b.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("alpha must have unit norm, has {}", b.norm())));
    }
    Ok(())
}

/// Closed form `h(n f) = -tr(alpha log f)`.
pub fn busemann_value(b: &BusemannData, p: &SpdPoint) -> Result<f64> {
    check_unit(b)?;
    let dec = nalpha_decompose(p, b)?;
    let mut h = 0.0;
    for r in b.block_ranges() {
        let m = r.len();
        let block = dec.f.view((r.start, r.start), (m, m)).into_owned();
        let chol = block
            .cholesky()
            .ok_or_else(|| Error::Domain("diagonal block is not positive definite".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        h -= b.alpha[r.start] * log_det;
    }
    Ok(h)
}

/// Limit oracle `d(exp(t alpha), p) - t` at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusemannOracle {
    /// `d(exp(t_max alpha), p) - t_max`.
    pub value: f64,
    /// `value(t_max) - value(t_max / 2)`, a convergence bound.
    pub increment: f64,
    /// Richardson extrapolation from `t_max`, `t_max/2`, `t_max/4`.
    ///
    /// Components of `p` in flat directions orthogonal to `alpha` make the raw
    /// value converge like `1/t`; the expansion is analytic in `1/t`, so two
    /// Richardson levels remove the `1/t` and `1/t^2` terms.
    pub extrapolated: f64,
}

pub fn busemann_limit_oracle(b: &BusemannData, p: &SpdPoint, t_max: f64) -> Result<BusemannOracle> {
    check_unit(b)?;
    let d0 = spd_distance(&SpdPoint::identity(p.dim()), p)?;
    if t_max < 10.0 * d0 {
        return Err(Error::Precondition(format!("t_max = {t_max} is below 10 d(I, p) = {}", 10.0 * d0)));
    }
    let raw = |t: f64| -> Result<f64> { Ok(spd_distance(&b.ray_point(t), p)? - t) };
    let (r1, r2, r4) = (raw(t_max)?, raw(t_max / 2.0)?, raw(t_max / 4.0)?);
    let (a, c) = (2.0 * r1 - r2, 2.0 * r2 - r4);
    Ok(BusemannOracle { value: r1, increment: r1 - r2, extrapolated: (4.0 * a - c) / 3.0 })
}

/// Unit-speed geodesic ray `gamma(t) = b^{1/2} exp(t X) b^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicRay {
    base: SpdPoint,
    direction: DMatrix<f64>,
}

impl GeodesicRay {
    /// `direction` must be symmetric and traceless; it is normalized to unit Frobenius norm.
    pub fn new(base: SpdPoint, direction: DMatrix<f64>) -> Result<Self> {
        if direction.nrows() != base.dim() || !direction.is_square() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: direction.nrows() });
        }
        let norm = direction.norm();
        if norm == 0.0 {
            return Err(Error::Domain("ray direction is zero".into()));
        }
        if (&direction - direction.transpose()).amax() > SYMMETRY_TOL * norm {
            return Err(Error::Domain("ray direction is not symmetric".into()));
        }
        if direction.trace().abs() > 1e-12 * norm {
            return Err(Error::Domain("ray direction is not traceless".into()));
        }
        Ok(Self { base, direction: direction / norm })
    }

    /// Ray through `I` in direction `k alpha k^T`: the orbit of `I` under `k exp(t alpha / 2)`.
    pub fn from_group_data(k: &DMatrix<f64>, alpha: &[f64]) -> Result<Self> {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(alpha));
        Self::new(SpdPoint::identity(alpha.len()), k * a * k.transpose())
    }

    pub fn base(&self) -> &SpdPoint {
        &self.base
    }

    pub fn direction(&self) -> &DMatrix<f64> {
        &self.direction
    }

    pub fn at(&self, t: f64) -> SpdPoint {
        let e = SpdPoint::exp_sym(&(&self.direction * t));
        if self.base.log_eigs.iter().all(|&l| l == 0.0) {
            e
        } else {
            e.congruence(&self.base.sqrt())
        }
    }
}

/// `G_n = (T^n)^T T^n`, det-normalized, for `n = 1..=N`.
pub fn pullback_metric_sequence(c: &MatrixCocycle, w: &State, n: usize) -> Result<Vec<SpdPoint>> {
    let ns: Vec<usize> = (1..=n).collect();
    let products = c.products_at(w, &ns)?;
    Ok(products.iter().map(gram_of_product).collect())
}

fn gram_of_product(p: &CocycleProduct) -> SpdPoint {
    let svd = p.svd();
    let d = svd.log_sv.len();
    SpdPoint::from_log_eigen(svd.right, DVector::from_iterator(d, svd.log_sv.iter().map(|l| 2.0 * l)))
}

/// Sequence given to [`regularity_report`].
pub enum RegularityInput<'a> {
    /// Points `x_0, ..., x_N`.
    Points(&'a [SpdPoint]),
    /// The pullback metrics `x_n = G_n` of a cocycle (`x_0 = I`).
    Cocycle { cocycle: &'a MatrixCocycle, start: State, horizon: usize },
}

/// Regularity diagnostics of a sequence in `P_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub horizon: usize,
    /// `(n, d(x_n, x_{n+1}) / n)`.
    pub step_ratios: Vec<(usize, f64)>,
    /// `(n, ||R(x_n)/n - R(x_N)/N||)`.
    pub cartan_oscillation: Vec<(usize, f64)>,
    /// `d(x_0, x_N) / N`.
    pub theta: f64,
    /// Candidate ray from `x_0` through `x_N`; `None` when `theta = 0`.
    pub ray: Option<GeodesicRay>,
    /// `(n, d(x_n, gamma(theta n)) / n)`.
    pub tracking_errors: Vec<(usize, f64)>,
}

impl RegularityReport {
    fn value_at(trace: &[(usize, f64)], n: usize) -> Option<f64> {
        trace.iter().find(|t| t.0 == n).map(|t| t.1)
    }

    pub fn step_ratio_at(&self, n: usize) -> Option<f64> {
        Self::value_at(&self.step_ratios, n)
    }

    pub fn cartan_oscillation_at(&self, n: usize) -> Option<f64> {
        Self::value_at(&self.cartan_oscillation, n)
    }

    pub fn tracking_error_at(&self, n: usize) -> Option<f64> {
        Self::value_at(&self.tracking_errors, n)
    }
}

fn probe_indices(n: usize, extra: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = dyadic_indices(n).into_iter().chain(extra.iter().copied().filter(|&k| k >= 1 && k <= n)).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

fn cartan_diff(a: &CartanVector, an: usize, b: &CartanVector, bn: usize) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (x / an as f64 - y / bn as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Step ratios, Cartan convergence, candidate ray and tracking errors at dyadic
/// `n` (plus any `extra_indices`).
pub fn regularity_report(input: RegularityInput<'_>, extra_indices: &[usize]) -> Result<RegularityReport> {
    match input {
        RegularityInput::Points(points) => regularity_of_points(points, extra_indices),
        RegularityInput::Cocycle { cocycle, start, horizon } => regularity_of_cocycle(cocycle, &start, horizon, extra_indices),
    }
}

fn regularity_of_points(points: &[SpdPoint], extra: &[usize]) -> Result<RegularityReport> {
    let n = points.len().saturating_sub(1);
    if n < 10 {
        return Err(Error::Horizon(format!("regularity needs N >= 10, got {n}")));
    }
    let x0 = &points[0];
    let xn = &points[n];
    let idx = probe_indices(n, extra);
    let radius = |p: &SpdPoint| -> Result<CartanVector> {
        // R relative to x_0: eigenvalues of log(x_0^{-1/2} p x_0^{-1/2})
        Ok(CartanVector::from_unsorted(relative_log_eigs(x0, p)))
    };
    let rn = radius(xn)?;
    let theta = rn.norm() / n as f64;
    let mut step_ratios = Vec::new();
    let mut cartan_oscillation = Vec::new();
    let mut tracking_errors = Vec::new();
    for &k in &idx {
        if k < n {
            step_ratios.push((k, spd_distance(&points[k], &points[k + 1])? / k as f64));
        }
        cartan_oscillation.push((k, cartan_diff(&radius(&points[k])?, k, &rn, n)));
        let target = if theta > 0.0 { spd_geodesic(x0, xn, k as f64 / n as f64)? } else { x0.clone() };
        tracking_errors.push((k, spd_distance(&points[k], &target)? / k as f64));
    }
    let ray = if theta > 0.0 {
        let dir = ray_direction(x0, xn);
        Some(GeodesicRay::new(x0.clone(), dir)?)
    } else {
        None
    };
    Ok(RegularityReport { horizon: n, step_ratios, cartan_oscillation, theta, ray, tracking_errors })
}

/// Direction at `x_0` of the geodesic towards `x_n`, in the `x_0^{1/2} exp(tX) x_0^{1/2}` convention.
fn ray_direction(x0: &SpdPoint, xn: &SpdPoint) -> DMatrix<f64> {
    let s = x0.fn_of_eigs(|l| (-0.5 * l).exp());
    let rel = SpdPoint::new(&(&s * xn.matrix() * &s)).map(|p| p.log()).unwrap_or_else(|_| xn.log());
    let d = rel.nrows();
    let tr = rel.trace() / d as f64;
    rel - DMatrix::identity(d, d) * tr
}

/// Cocycle route: every distance is evaluated without forming `G_n`.
///
/// Steps use invariance, `d(G_n, G_{n+1}) = d(I, A^T A)`. With `T^n = Q_n R_n`,
/// `T^N = Q_N R_N`, `R_N = X S Y^T` and `R''` the triangular factor of the
/// product from `n` to `N` started in the frame `Q_n`,
/// `d(G_n, G_N^{n/N}) = 2 || log sigma(R''^T X S^{n/N - 1}) ||`.
/// Every factor is graded, so nothing of size `exp(lambda N)` is cancelled.
fn regularity_of_cocycle(c: &MatrixCocycle, w: &State, n: usize, extra: &[usize]) -> Result<RegularityReport> {
    if n < 10 {
        return Err(Error::Horizon(format!("regularity needs N >= 10, got {n}")));
    }
    let d = c.dim();
    let idx = probe_indices(n, extra);
    let mut checkpoints = idx.clone();
    if checkpoints.last() != Some(&n) {
        checkpoints.push(n);
    }
    let products = c.products_at(w, &checkpoints)?;
    let last = products.last().unwrap();
    let two_r = |p: &CocycleProduct| -> CartanVector {
        let ls = p.log_singular_values();
        let mean = ls.iter().sum::<f64>() / ls.len() as f64;
        CartanVector::from_unsorted(ls.iter().map(|l| 2.0 * (l - mean)).collect())
    };
    let rn = two_r(last);
    let theta = rn.norm() / n as f64;

    // R_N^T = Y S X^T: `left` is Y, `right` is X
    let (row_log, unit) = last.r_factor_scaled();
    let final_svd = linalg::log_svd(ScaledColumns {
        scales: row_log.iter().copied().collect(),
        dirs: (0..d).map(|i| unit.row(i).transpose()).collect(),
    });
    let x = &final_svd.right;
    let log_x = x.map(|v| v.abs().ln());

    let base = c.base();
    let mut s = *w;
    let mut step_ratios = Vec::new();
    let mut cartan_oscillation = Vec::new();
    let mut tracking_errors = Vec::new();
    for (pos, &k) in idx.iter().enumerate() {
        let from = if pos == 0 { 0 } else { idx[pos - 1] };
        for _ in from..k {
            s = base.step(&s);
        }
        if k < n {
            let step = cartan_projection(&c.matrix_at(&s))?;
            step_ratios.push((k, 2.0 * step.norm() / k as f64));
        }
        cartan_oscillation.push((k, cartan_diff(&two_r(&products[pos]), k, &rn, n)));

        let mut tail = CocycleProduct::with_frame(s, products[pos].q().clone());
        let mut t = s;
        for step in k..n {
            tail.push(&c.matrix_at(&t), step)?;
            t = base.step(&t);
        }
        let (tail_log, tail_unit) = tail.r_factor_scaled();
        let power = k as f64 / n as f64 - 1.0;
        // Z_{ij} = sum_m R''_{mi} X_{mj} S_j^{power}
        let z = ScaledColumns::from_log_entries(d, d, |i, j| {
            let terms: Vec<(f64, f64)> = (0..=i)
                .filter(|&m| tail_unit[(m, i)] != 0.0 && x[(m, j)] != 0.0)
                .map(|m| {
                    let sign = tail_unit[(m, i)].signum() * x[(m, j)].signum();
                    (sign, tail_log[m] + tail_unit[(m, i)].abs().ln() + log_x[(m, j)])
                })
                .collect();
            let (sign, log) = signed_log_sum(&terms);
            (sign, log + power * final_svd.log_sv[j])
        });
        let ls = linalg::log_svd(z);
        let mean = ls.log_sv.iter().sum::<f64>() / d as f64;
        let dist = 2.0 * ls.log_sv.iter().map(|l| (l - mean).powi(2)).sum::<f64>().sqrt();
        tracking_errors.push((k, dist / k as f64));
    }
    let ray = if theta > 0.0 {
        let mean_log = final_svd.log_sv.iter().sum::<f64>() / d as f64;
        let ell = DVector::from_iterator(d, final_svd.log_sv.iter().map(|l| 2.0 * (l - mean_log)));
        let v = &final_svd.left;
        let dir = v * DMatrix::from_diagonal(&ell) * v.transpose();
        Some(GeodesicRay::new(SpdPoint::identity(d), dir)?)
    } else {
        None
    };
    Ok(RegularityReport { horizon: n, step_ratios, cartan_oscillation, theta, ray, tracking_errors })
}

/// `(sign, log|sum sign_i exp(l_i)|)`.
fn signed_log_sum(terms: &[(f64, f64)]) -> (f64, f64) {
    let m = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (0.0, f64::NEG_INFINITY);
    }
    let s: f64 = terms.iter().map(|(sg, l)| sg * (l - m).exp()).sum();
    if s == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (s.signum(), m + s.abs().ln())
    }
}

/// Random point `exp(S)` with `S` symmetric Gaussian of the given scale.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> SpdPoint {
    let g = linalg::gaussian_matrix(rng, n, n) * scale;
    SpdPoint::exp_sym(&((&g + g.transpose()) * 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_point(l: &[f64]) -> SpdPoint {
        SpdPoint::diagonal_exp(l)
    }

    #[test]
    fn distance_examples() {
        let i = SpdPoint::identity(2);
        assert_eq!(spd_distance(&i, &i).unwrap(), 0.0);
        let q = diag_point(&[2.0, -2.0]);
        assert!((spd_distance(&i, &q).unwrap() - 8f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn new_normalizes_determinant() {
        let p = SpdPoint::new(&DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(SpdPoint::new(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(SpdPoint::new(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn cartan_examples() {
        let c = cartan_projection(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((c.entries()[0] - phi.ln()).abs() < 1e-14);
        assert!((c.entries()[0] - 0.48121).abs() < 1e-5);
        let e2 = 2f64.exp();
        let c = cartan_projection(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / e2, 1.0, e2]))).unwrap();
        assert!((c.entries()[0] - 2.0).abs() < 1e-14 && c.entries()[1].abs() < 1e-14);
    }

    #[test]
    fn curvature_examples() {
        let s = 0.5f64.sqrt();
        let x = DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, -s]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]);
        let comm = &x * &y - &y * &x;
        let k = sectional_curvature(&x, &y).unwrap();
        assert!((k + 0.5 * comm.norm_squared()).abs() < 1e-14);
        assert!((k + 1.0).abs() < 1e-14);
        let d2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert!(sectional_curvature(&x, &(x.clone() * 2.0)).is_err());
        let x3 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(sectional_curvature(&x3, &d2).unwrap(), 0.0);
    }

    #[test]
    fn nalpha_round_trip_of_unipotent() {
        let c = 0.7;
        let p = SpdPoint::new(&DMatrix::from_row_slice(2, 2, &[1.0 + c * c, c, c, 1.0])).unwrap();
        let b = BusemannData::from_block_values(&[1, 1], &[1.0, -1.0]).unwrap();
        let dec = nalpha_decompose(&p, &b).unwrap();
        assert!((dec.n[(0, 1)] - c).abs() < 1e-12);
        assert!((dec.f.clone() - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn busemann_on_the_ray() {
        let b = BusemannData::from_block_values(&[2, 1], &[1.0, -2.0]).unwrap();
        for s in [0.0, 0.5, 3.0] {
            let p = b.ray_point(s);
            assert!((busemann_value(&b, &p).unwrap() + s).abs() < 1e-12);
        }
        let o = busemann_limit_oracle(&b, &b.ray_point(2.0), 100.0).unwrap();
        assert!((o.value + 2.0).abs() < 1e-10);
        let unnormalized = BusemannData::new(vec![1.0, -1.0]).unwrap();
        assert!(busemann_value(&unnormalized, &SpdPoint::identity(2)).is_err());
    }

    #[test]
    fn geodesic_is_unit_speed_and_hits_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_point(&mut rng, 3, 1.0);
        let q = random_point(&mut rng, 3, 1.0);
        let d = spd_distance(&p, &q).unwrap();
        let g1 = spd_geodesic(&p, &q, 1.0).unwrap();
        assert!(spd_distance(&g1, &q).unwrap() < 1e-10);
        let m = spd_midpoint(&p, &q).unwrap();
        assert!((spd_distance(&p, &m).unwrap() - d / 2.0).abs() < 1e-10);
        let far = spd_geodesic(&p, &q, 3.0).unwrap();
        assert!((spd_distance(&p, &far).unwrap() - 3.0 * d).abs() < 1e-9);
    }

    #[test]
    fn kak_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = linalg::gaussian_matrix(&mut rng, 3, 3);
        let kak = kak_decompose(&g).unwrap();
        assert!((kak.reconstruct() - &g).norm() < 1e-10 * g.norm());
        assert!(kak.a[0] >= kak.a[1] && kak.a[1] >= kak.a[2]);
    }

    #[test]
    fn ray_from_group_data_matches_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = linalg::random_orthogonal(&mut rng, 3);
        let alpha = [0.5f64.sqrt(), 0.0, -(0.5f64.sqrt())];
        let ray = GeodesicRay::from_group_data(&k, &alpha).unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&alpha));
        for t in [0.5, 2.0, 7.0] {
            let by_group = SpdPoint::new(&(&k * (&a * t).map(f64::exp).component_mul(&DMatrix::identity(3, 3)) * k.transpose()))
                .unwrap();
            assert!(spd_distance(&ray.at(t), &by_group).unwrap() < 1e-9);
        }
    }

    #[test]
    fn regularity_of_a_geodesic() {
        let x = DMatrix::from_row_slice(2, 2, &[0.6, 0.3, 0.3, -0.6]);
        let x = &x / x.norm() * 0.25;
        let pts: Vec<SpdPoint> = (0..=64).map(|n| SpdPoint::exp_sym(&(&x * n as f64))).collect();
        let rep = regularity_report(RegularityInput::Points(&pts), &[]).unwrap();
        assert!((rep.theta - 0.25).abs() < 1e-12);
        assert!(rep.tracking_errors.iter().all(|t| t.1 < 1e-10));
        let flat = vec![SpdPoint::identity(2); 20];
        let rep = regularity_report(RegularityInput::Points(&flat), &[]).unwrap();
        assert_eq!(rep.theta, 0.0);
        assert!(rep.ray.is_none());
    }

    #[test]
    fn cocycle_route_matches_points_route() {
        use crate::dynsys::ErgodicSystem;
        let base = ErgodicSystem::bernoulli(vec![0.5, 0.5], 3).unwrap();
        let mats = vec![
            DMatrix::from_row_slice(2, 2, &[1.05, 0.1, 0.02, 0.96]),
            DMatrix::from_row_slice(2, 2, &[0.97, -0.05, 0.08, 1.04]),
        ];
        let c = MatrixCocycle::by_symbol(base, mats).unwrap();
        let w = c.base().generic_state();
        let n = 80;
        let mut pts = vec![SpdPoint::identity(2)];
        pts.extend(pullback_metric_sequence(&c, &w, n).unwrap());
        let by_points = regularity_report(RegularityInput::Points(&pts), &[40]).unwrap();
        let by_cocycle =
            regularity_report(RegularityInput::Cocycle { cocycle: &c, start: w, horizon: n }, &[40]).unwrap();
        assert!((by_points.theta - by_cocycle.theta).abs() < 1e-12);
        for (a, b) in by_points.tracking_errors.iter().zip(&by_cocycle.tracking_errors) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-9, "{a:?} {b:?}");
        }
        for (a, b) in by_points.step_ratios.iter().zip(&by_cocycle.step_ratios) {
            assert!((a.1 - b.1).abs() < 1e-9, "{a:?} {b:?}");
        }
        for (a, b) in by_points.cartan_oscillation.iter().zip(&by_cocycle.cartan_oscillation) {
            assert!((a.1 - b.1).abs() < 1e-9, "{a:?} {b:?}");
        }
    }
}

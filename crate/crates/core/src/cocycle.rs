//! Matrix cocycles over a base system and their long products.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynsys::{ErgodicSystem, Estimate, State};
use crate::error::{Error, Result};
use crate::linalg::{self, LogSvd, ScaledColumns};

/// `ln(1e-300)`: generators with smaller `|det|` count as singular.
const LOG_DET_FLOOR: f64 = -690.7755278982137;
const STRUCTURE_TOL: f64 = 1e-10;
const VALIDATION_SAMPLES: usize = 64;

/// Extra structure preserved by every generator matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureTag {
    None,
    /// `A^T J A = J` for the standard symplectic form on `R^{2g}`.
    Symplectic(usize),
    /// `A^T Q A = Q` for `Q = diag(I_p, -I_q)`.
    Orthogonal(usize, usize),
    DeterminantOne,
}

pub type Generator = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// `w -> A(w)`, an invertible `d x d` matrix for each base state.
#[derive(Clone)]
pub struct MatrixCocycle {
    dim: usize,
    base: ErgodicSystem,
    generator: Generator,
    tag: StructureTag,
}

impl fmt::Debug for MatrixCocycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixCocycle")
            .field("dim", &self.dim)
            .field("base", &self.base)
            .field("tag", &self.tag)
            .finish_non_exhaustive()
    }
}

/// Derived cocycles.
#[derive(Debug, Clone)]
pub enum Functorial<'a> {
    Dual,
    Tensor(&'a MatrixCocycle),
    Hom(&'a MatrixCocycle),
    Wedge(usize),
}

/// Monte-Carlo estimates of `E log+ ||A||` and `E log+ ||A^{-1}||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrabilityReport {
    pub log_norm: Estimate,
    pub log_inverse_norm: Estimate,
}

impl MatrixCocycle {
    /// Builds a cocycle and validates it on sampled base states.
    pub fn new<F>(base: ErgodicSystem, dim: usize, tag: StructureTag, generator: F) -> Result<Self>
    where
        F: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::Domain("cocycle dimension must be at least 1".into()));
        }
        let c = Self { dim, base, generator: Arc::new(generator), tag };
        c.validate(VALIDATION_SAMPLES)?;
        Ok(c)
    }

    /// `A(w) = a` for every `w`.
    pub fn constant(base: ErgodicSystem, a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        let dim = a.nrows();
        Self::new(base, dim, StructureTag::None, move |_| a.clone())
    }

    /// `A(w) = matrices[w_0]` over a shift.
    pub fn by_symbol(base: ErgodicSystem, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = base
            .alphabet_size()
            .ok_or_else(|| Error::Domain("symbol-indexed cocycles need a shift base".into()))?;
        if matrices.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: matrices.len() });
        }
        let dim = matrices[0].nrows();
        if let Some(m) = matrices.iter().find(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: m.ncols().max(m.nrows()) });
        }
        for (i, m) in matrices.iter().enumerate() {
            check_invertible(m, i)?;
        }
        Self::new(base, dim, StructureTag::None, move |s| matrices[s.symbol().unwrap_or(0)].clone())
    }

    /// Attaches a structure tag after checking it on sampled states.
    pub fn with_tag(mut self, tag: StructureTag) -> Result<Self> {
        self.tag = tag;
        self.validate(VALIDATION_SAMPLES)?;
        Ok(self)
    }

    /// Same generator over a reseeded base.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { base: self.base.with_seed(seed), ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> &ErgodicSystem {
        &self.base
    }

    pub fn tag(&self) -> StructureTag {
        self.tag
    }

    pub fn matrix_at(&self, s: &State) -> DMatrix<f64> {
        (self.generator)(s)
    }

    /// Checks shape, invertibility and the structure tag on `samples` states.
    pub fn validate(&self, samples: usize) -> Result<()> {
        let states = self.base.sample_states(samples, self.base.seed() ^ 0xc0c7_c1e0);
        let form = match self.tag {
            StructureTag::Symplectic(g) => {
                if 2 * g != self.dim {
                    return Err(Error::DimensionMismatch { expected: 2 * g, got: self.dim });
                }
                Some(linalg::symplectic_form(g))
            }
            StructureTag::Orthogonal(p, q) => {
                if p + q != self.dim {
                    return Err(Error::DimensionMismatch { expected: p + q, got: self.dim });
                }
                Some(linalg::indefinite_form(p, q))
            }
            _ => None,
        };
        for (i, s) in states.iter().enumerate() {
            let a = self.matrix_at(s);
            if a.nrows() != self.dim || a.ncols() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: a.nrows() });
            }
            check_invertible(&a, i)?;
            let scale = 1.0 + a.norm() * a.norm();
            if let Some(j) = &form {
                let err = (a.transpose() * j * &a - j).norm();
                if err > STRUCTURE_TOL * scale {
                    return Err(Error::Precondition(format!(
                        "generator violates the {:?} structure at {s:?} (error {err:.3e})",
                        self.tag
                    )));
                }
            }
            if self.tag == StructureTag::DeterminantOne {
                let det = a.determinant();
                if (det - 1.0).abs() > STRUCTURE_TOL * scale {
                    return Err(Error::Precondition(format!("generator has det {det} at {s:?}")));
                }
            }
        }
        Ok(())
    }

    /// Monte-Carlo integrability audit over `samples` states drawn with `seed`.
    pub fn integrability_check(&self, samples: usize, seed: u64) -> Result<IntegrabilityReport> {
        if samples == 0 {
            return Err(Error::Domain("samples must be at least 1".into()));
        }
        let mut fwd = Vec::with_capacity(samples);
        let mut inv = Vec::with_capacity(samples);
        for (i, s) in self.base.sample_states(samples, seed).iter().enumerate() {
            let a = self.matrix_at(s);
            let sv = linalg::singular_values(&a);
            let smin = *sv.last().unwrap();
            if smin <= 0.0 {
                return Err(Error::Singular { step: i, log_abs_det: f64::NEG_INFINITY });
            }
            fwd.push(sv[0].ln().max(0.0));
            inv.push((-smin.ln()).max(0.0));
        }
        Ok(IntegrabilityReport {
            log_norm: Estimate::from_samples(&fwd),
            log_inverse_norm: Estimate::from_samples(&inv),
        })
    }

    /// `A(T^{N-1} w) ... A(w)` in QR-accumulated form.
    pub fn product(&self, w: &State, n: usize) -> Result<CocycleProduct> {
        Ok(self.products_at(w, &[n])?.pop().expect("one checkpoint"))
    }

    /// Products at each of the (increasing) horizons in `ns`, from one pass over the orbit.
    pub fn products_at(&self, w: &State, ns: &[usize]) -> Result<Vec<CocycleProduct>> {
        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Domain("horizons must be positive and strictly increasing".into()));
        }
        let mut acc = CocycleProduct::identity(*w, self.dim);
        let mut s = *w;
        let mut out = Vec::with_capacity(ns.len());
        let mut next = 0;
        for step in 0..*ns.last().unwrap() {
            acc.push(&self.matrix_at(&s), step)?;
            s = self.base.step(&s);
            if step + 1 == ns[next] {
                out.push(acc.clone());
                next += 1;
            }
        }
        Ok(out)
    }

    /// Product along an explicit state sequence: `A(states[last]) ... A(states[0])`.
    pub fn product_along(&self, states: &[State]) -> Result<CocycleProduct> {
        let first = *states.first().ok_or_else(|| Error::Domain("empty state sequence".into()))?;
        let mut acc = CocycleProduct::identity(first, self.dim);
        for (step, s) in states.iter().enumerate() {
            acc.push(&self.matrix_at(s), step)?;
        }
        Ok(acc)
    }

    /// `A(T^{-N} w)^{-1} ... A(T^{-1} w)^{-1}`, mapping the fiber at `w` back to `T^{-N} w`.
    pub fn backward_product(&self, w: &State, n: usize) -> Result<CocycleProduct> {
        if !self.base.is_invertible() {
            return Err(Error::Precondition("backward products need an invertible base system".into()));
        }
        let past = self.base.past_orbit(w, n + 1)?;
        let mut acc = CocycleProduct::identity(*w, self.dim);
        for (step, s) in past[1..].iter().enumerate() {
            let a = self.matrix_at(s);
            let inv = a
                .try_inverse()
                .ok_or(Error::Singular { step, log_abs_det: f64::NEG_INFINITY })?;
            acc.push(&inv, step)?;
        }
        Ok(acc)
    }

    /// Direct dense product; a test oracle for short horizons.
    pub fn dense_product(&self, w: &State, n: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        let mut s = *w;
        for _ in 0..n {
            p = self.matrix_at(&s) * p;
            s = self.base.step(&s);
        }
        p
    }

    pub fn construct_functorial(&self, kind: Functorial<'_>) -> Result<MatrixCocycle> {
        match kind {
            Functorial::Dual => Ok(self.dual()),
            Functorial::Tensor(other) => self.tensor(other),
            Functorial::Hom(other) => self.hom(other),
            Functorial::Wedge(k) => self.wedge(k),
        }
    }

    /// `w -> (A(w)^{-1})^T`.
    pub fn dual(&self) -> MatrixCocycle {
        let g = self.generator.clone();
        self.derived(self.dim, self.tag, move |s| inverse_transpose(&g(s)))
    }

    /// `w -> A(w) (x) B(w)` (Kronecker product).
    pub fn tensor(&self, other: &MatrixCocycle) -> Result<MatrixCocycle> {
        self.same_base(other)?;
        let (g1, g2) = (self.generator.clone(), other.generator.clone());
        let tag = if self.tag == StructureTag::DeterminantOne && other.tag == StructureTag::DeterminantOne {
            StructureTag::DeterminantOne
        } else {
            StructureTag::None
        };
        Ok(self.derived(self.dim * other.dim, tag, move |s| linalg::kron(&g1(s), &g2(s))))
    }

    /// `Hom(V, W) = V* (x) W`.
    pub fn hom(&self, other: &MatrixCocycle) -> Result<MatrixCocycle> {
        self.dual().tensor(other)
    }

    /// k-th exterior power via the compound matrix (lexicographic basis).
    pub fn wedge(&self, k: usize) -> Result<MatrixCocycle> {
        if k == 0 || k > self.dim {
            return Err(Error::Precondition(format!("wedge degree {k} outside 1..={}", self.dim)));
        }
        let g = self.generator.clone();
        let dim = linalg::combinations(self.dim, k).len();
        let tag = if self.tag == StructureTag::DeterminantOne { StructureTag::DeterminantOne } else { StructureTag::None };
        Ok(self.derived(dim, tag, move |s| linalg::compound(&g(s), k)))
    }

    /// The scalar cocycle `w -> det A(w)`.
    pub fn determinant_line(&self) -> MatrixCocycle {
        let g = self.generator.clone();
        let tag = if self.tag == StructureTag::DeterminantOne { StructureTag::DeterminantOne } else { StructureTag::None };
        self.derived(1, tag, move |s| DMatrix::from_element(1, 1, g(s).determinant()))
    }

    fn derived<F>(&self, dim: usize, tag: StructureTag, f: F) -> MatrixCocycle
    where
        F: Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MatrixCocycle { dim, base: self.base.clone(), generator: Arc::new(f), tag }
    }

    fn same_base(&self, other: &MatrixCocycle) -> Result<()> {
        if self.base != other.base {
            return Err(Error::Precondition("cocycles are defined over different base systems".into()));
        }
        Ok(())
    }
}

fn check_invertible(a: &DMatrix<f64>, step: usize) -> Result<()> {
    let (_, r) = linalg::qr_positive(a);
    check_triangular(&r, step)
}

/// Singular when `|det| < 1e-300` or some `|R_ii|` is at rounding level relative to `||R||`.
fn check_triangular(r: &DMatrix<f64>, step: usize) -> Result<()> {
    let d = r.nrows();
    let log_abs_det: f64 = r.diagonal().iter().map(|x| x.abs().ln()).sum();
    let floor = d as f64 * f64::EPSILON * r.amax();
    if !(log_abs_det >= LOG_DET_FLOOR) || r.diagonal().iter().any(|x| x.abs() <= floor) {
        return Err(Error::Singular { step, log_abs_det });
    }
    Ok(())
}

pub(crate) fn inverse_transpose(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone()
        .try_inverse()
        .map(|m| m.transpose())
        .unwrap_or_else(|| DMatrix::from_element(a.nrows(), a.ncols(), f64::NAN))
}

/// `T^N_w = Q R` with `R` kept as `diag(exp(row_log)) U`, rows of `U` of unit max-norm.
///
/// The accumulated `log R_ii` are tracked exactly, so exponents can be read off
/// for horizons where `R` itself is far outside the range of `f64`.
#[derive(Debug, Clone)]
pub struct CocycleProduct {
    start: State,
    n: usize,
    q: DMatrix<f64>,
    log_diag: DVector<f64>,
    row_log: DVector<f64>,
    unit: DMatrix<f64>,
}

impl CocycleProduct {
    pub(crate) fn identity(start: State, dim: usize) -> Self {
        Self {
            start,
            n: 0,
            q: DMatrix::identity(dim, dim),
            log_diag: DVector::zeros(dim),
            row_log: DVector::zeros(dim),
            unit: DMatrix::identity(dim, dim),
        }
    }

    /// Starts from an orthonormal frame, so the product represents `T^N frame`.
    pub(crate) fn with_frame(start: State, frame: DMatrix<f64>) -> Self {
        let d = frame.nrows();
        Self { q: frame, ..Self::identity(start, d) }
    }

    /// Left-multiplies by one more generator.
    pub(crate) fn push(&mut self, a: &DMatrix<f64>, step: usize) -> Result<()> {
        let d = self.q.nrows();
        let (q, s) = linalg::qr_positive(&(a * &self.q));
        check_triangular(&s, step)?;
        let log_s: Vec<f64> = (0..d).map(|i| s[(i, i)].ln()).collect();
        let mut unit = DMatrix::zeros(d, d);
        let mut row_log = DVector::zeros(d);
        for i in 0..d {
            let m = (i..d)
                .filter(|&j| s[(i, j)] != 0.0)
                .map(|j| s[(i, j)].abs().ln() + self.row_log[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut row = nalgebra::RowDVector::zeros(d);
            for j in i..d {
                if s[(i, j)] != 0.0 {
                    row += self.unit.row(j) * (s[(i, j)] * (self.row_log[j] - m).exp());
                }
            }
            let mx = row.amax();
            unit.set_row(i, &(row / mx));
            row_log[i] = m + mx.ln();
        }
        for i in 0..d {
            self.log_diag[i] += log_s[i];
        }
        self.q = q;
        self.unit = unit;
        self.row_log = row_log;
        self.n += 1;
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn start(&self) -> State {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Orthogonal factor.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Accumulated `log R_ii`, in QR order (not sorted).
    pub fn log_diagonal(&self) -> &DVector<f64> {
        &self.log_diag
    }

    /// Row scales and unit rows of `R`: `R = diag(exp(row_log)) unit`.
    pub fn r_factor_scaled(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.row_log, &self.unit)
    }

    /// The upper-triangular factor; overflows for long horizons.
    pub fn r(&self) -> DMatrix<f64> {
        let mut r = self.unit.clone();
        for i in 0..r.nrows() {
            let s = self.row_log[i].exp();
            r.row_mut(i).scale_mut(s);
        }
        r
    }

    /// The dense product `Q R`; overflows for long horizons.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.q * self.r()
    }

    /// Log-scale SVD of the product: left/right singular vectors of `T^N` and `log sigma_i`.
    pub fn svd(&self) -> LogSvd {
        let d = self.dim();
        let cols = ScaledColumns {
            scales: self.row_log.iter().copied().collect(),
            dirs: (0..d).map(|i| self.unit.row(i).transpose()).collect(),
        };
        // columns of R^T are the rows of R, so this is the SVD of R^T
        let ls = linalg::log_svd(cols);
        LogSvd { log_sv: ls.log_sv, left: &self.q * ls.right, right: ls.left }
    }

    pub fn log_singular_values(&self) -> Vec<f64> {
        self.svd().log_sv
    }

    /// `log ||T^N v||`, computed without forming `T^N`.
    pub fn log_norm_of_image(&self, v: &DVector<f64>) -> f64 {
        let y = &self.unit * v;
        let terms: Vec<f64> = (0..self.dim())
            .filter(|&i| y[i] != 0.0)
            .map(|i| 2.0 * (self.row_log[i] + y[i].abs().ln()))
            .collect();
        0.5 * log_sum_exp(&terms)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn rot_base() -> ErgodicSystem {
        ErgodicSystem::rotation(0.5_f64.sqrt() - 0.5, 1).unwrap()
    }

    #[test]
    fn identity_product() {
        let c = MatrixCocycle::constant(rot_base(), DMatrix::identity(3, 3)).unwrap();
        let p = c.product(&State::Point(0.2), 100).unwrap();
        assert_eq!(p.q(), &DMatrix::identity(3, 3));
        assert!(p.log_diagonal().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diagonal_powers() {
        let c = MatrixCocycle::constant(rot_base(), diag(&[2.0, 0.5])).unwrap();
        let p = c.product(&State::Point(0.2), 10).unwrap();
        let l2 = 2f64.ln();
        assert!((p.log_diagonal()[0] - 10.0 * l2).abs() < 1e-12);
        assert!((p.log_diagonal()[1] + 10.0 * l2).abs() < 1e-12);
    }

    #[test]
    fn unipotent_square() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let c = MatrixCocycle::constant(rot_base(), a).unwrap();
        let m = c.product(&State::Point(0.0), 2).unwrap().matrix();
        assert!((m - DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn singular_generator_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(MatrixCocycle::constant(rot_base(), a), Err(Error::Singular { .. })));
    }

    #[test]
    fn functorial_diagonals() {
        let base = rot_base();
        let c = MatrixCocycle::constant(base.clone(), diag(&[2.0, 0.5])).unwrap();
        let s = State::Point(0.3);
        assert!((c.dual().matrix_at(&s) - diag(&[0.5, 2.0])).norm() < 1e-15);
        let c3 = MatrixCocycle::constant(base.clone(), diag(&[2.0, 3.0, 5.0])).unwrap();
        assert!((c3.wedge(2).unwrap().matrix_at(&s) - diag(&[6.0, 10.0, 15.0])).norm() < 1e-12);
        let c2 = MatrixCocycle::constant(base, diag(&[3.0, 1.0 / 3.0])).unwrap();
        let t = c.tensor(&c2).unwrap().matrix_at(&s);
        assert!((t - diag(&[6.0, 2.0 / 3.0, 1.5, 1.0 / 6.0])).norm() < 1e-14);
        assert!(c.tensor(&c2.with_seed(99)).is_err());
        assert!(c.wedge(3).is_err());
    }

    #[test]
    fn determinant_line_values() {
        let c = MatrixCocycle::constant(rot_base(), diag(&[2.0, 0.5, 3.0])).unwrap();
        let d = c.determinant_line().matrix_at(&State::Point(0.1));
        assert!((d[(0, 0)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn integrability_of_constant_diagonal() {
        let e = std::f64::consts::E;
        let c = MatrixCocycle::constant(rot_base(), diag(&[e, 1.0 / e])).unwrap();
        let rep = c.integrability_check(50, 3).unwrap();
        assert!((rep.log_norm.mean - 1.0).abs() < 1e-12);
        assert!((rep.log_inverse_norm.mean - 1.0).abs() < 1e-12);
        let id = MatrixCocycle::constant(rot_base(), DMatrix::identity(2, 2)).unwrap();
        let rep = id.integrability_check(10, 3).unwrap();
        assert_eq!(rep.log_norm.mean, 0.0);
        assert_eq!(rep.log_inverse_norm.mean, 0.0);
    }

    #[test]
    fn tags_are_checked() {
        let j = linalg::symplectic_form(1);
        let bad = MatrixCocycle::constant(rot_base(), diag(&[2.0, 1.0])).unwrap();
        assert!(bad.with_tag(StructureTag::Symplectic(1)).is_err());
        let good = MatrixCocycle::constant(rot_base(), diag(&[2.0, 0.5])).unwrap();
        let good = good.with_tag(StructureTag::Symplectic(1)).unwrap();
        let a = good.dual().matrix_at(&State::Point(0.0));
        assert!((a.transpose() * &j * &a - &j).norm() < 1e-12);
    }

    #[test]
    fn huge_products_do_not_overflow() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let c = MatrixCocycle::constant(rot_base(), a).unwrap();
        let p = c.product(&State::Point(0.0), 5000).unwrap();
        let lam = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        let ls = p.log_singular_values();
        assert!((ls[0] / 5000.0 - lam).abs() < 1e-3);
        assert!(ls.iter().all(|x| x.is_finite()));
    }
}

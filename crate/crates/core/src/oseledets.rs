//! Lyapunov spectra, Oseledets filtrations and splittings.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cocycle::{CocycleProduct, MatrixCocycle};
use crate::dynsys::{dyadic_indices, State};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    /// Sorted diagonal of the accumulated triangular factor.
    Qr,
    /// Log singular values of the product.
    SvdWedge,
}

/// Exponents sorted descending, grouped into multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub gap_threshold: f64,
    /// `(value, multiplicity)`, descending.
    pub groups: Vec<(f64, usize)>,
    pub horizon: usize,
    pub method: SpectrumMethod,
    /// Some adjacent gap is within a factor two of the threshold.
    pub low_confidence: bool,
    /// Some exponent fell below `-1e6 / N`, the finite-horizon stand-in for `-inf`.
    pub diverged_below: bool,
}

impl LyapunovSpectrum {
    /// Groups already-sorted exponents with the given threshold.
    pub fn from_exponents(mut exponents: Vec<f64>, horizon: usize, method: SpectrumMethod, gap_threshold: f64) -> Self {
        exponents.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let groups = group_exponents(&exponents, gap_threshold);
        let low_confidence = exponents.windows(2).any(|w| {
            let gap = w[0] - w[1];
            gap >= 0.5 * gap_threshold && gap < 2.0 * gap_threshold
        });
        let diverged_below = exponents.iter().any(|&x| x < -1e6 / horizon.max(1) as f64);
        Self { exponents, gap_threshold, groups, horizon, method, low_confidence, diverged_below }
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn top(&self) -> f64 {
        self.exponents[0]
    }
}

/// Default multiplicity threshold `max(10/N, 1e-3)`.
pub fn default_gap_threshold(n: usize) -> f64 {
    (10.0 / n as f64).max(1e-3)
}

/// Maximal runs of a descending list whose consecutive gaps are below `threshold`.
pub fn group_exponents(sorted: &[f64], threshold: f64) -> Vec<(f64, usize)> {
    let mut groups: Vec<(f64, usize)> = Vec::new();
    let mut run: Vec<f64> = Vec::new();
    for &x in sorted {
        if let Some(&last) = run.last() {
            if last - x >= threshold {
                groups.push((run.iter().sum::<f64>() / run.len() as f64, run.len()));
                run.clear();
            }
        }
        run.push(x);
    }
    if !run.is_empty() {
        groups.push((run.iter().sum::<f64>() / run.len() as f64, run.len()));
    }
    groups
}

/// Spectrum from an already accumulated product.
pub fn spectrum_of_product(p: &CocycleProduct, method: SpectrumMethod, gap_threshold: f64) -> LyapunovSpectrum {
    let n = p.horizon() as f64;
    let exps: Vec<f64> = match method {
        SpectrumMethod::Qr => p.log_diagonal().iter().map(|l| l / n).collect(),
        SpectrumMethod::SvdWedge => p.log_singular_values().iter().map(|l| l / n).collect(),
    };
    LyapunovSpectrum::from_exponents(exps, p.horizon(), method, gap_threshold)
}

pub fn lyapunov_spectrum(c: &MatrixCocycle, w: &State, n: usize, method: SpectrumMethod) -> Result<LyapunovSpectrum> {
    if n < c.dim() {
        return Err(Error::Horizon(format!("N = {n} is below the dimension {}", c.dim())));
    }
    let p = c.product(w, n)?;
    Ok(spectrum_of_product(&p, method, default_gap_threshold(n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Nested subspaces `V^{<=l_1} ⊃ V^{<=l_2} ⊃ ...` as orthonormal frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    /// Group exponent of each level, descending.
    pub exponents: Vec<f64>,
    /// `frames[i]` spans the subspace of growth at most `exponents[i]`.
    pub frames: Vec<DMatrix<f64>>,
    pub direction: Direction,
}

impl Filtration {
    /// Subspace dimensions in increasing order.
    pub fn dims(&self) -> Vec<usize> {
        self.frames.iter().rev().map(|f| f.ncols()).collect()
    }

    /// Frame of level `i` (0 = whole space).
    pub fn level(&self, i: usize) -> &DMatrix<f64> {
        &self.frames[i]
    }
}

fn filtration_from_right_vectors(
    right: &DMatrix<f64>,
    groups: &[(f64, usize)],
    direction: Direction,
) -> Filtration {
    let d = right.ncols();
    let mut exponents = Vec::with_capacity(groups.len());
    let mut frames = Vec::with_capacity(groups.len());
    let mut skipped = 0;
    for &(value, mult) in groups {
        exponents.push(value);
        frames.push(right.columns(skipped, d - skipped).into_owned());
        skipped += mult;
    }
    Filtration { exponents, frames, direction }
}

fn check_separation(spectrum: &LyapunovSpectrum) -> Result<()> {
    if spectrum.low_confidence {
        return Err(Error::Horizon(format!(
            "exponent groups are not separated at threshold {:.3e}; increase N beyond {}",
            spectrum.gap_threshold, spectrum.horizon
        )));
    }
    Ok(())
}

/// Forward filtration at `w` from the right singular vectors of the `N`-step product.
pub fn forward_filtration(c: &MatrixCocycle, w: &State, n: usize, spectrum: &LyapunovSpectrum) -> Result<Filtration> {
    check_separation(spectrum)?;
    let p = c.product(w, n)?;
    Ok(filtration_from_right_vectors(&p.svd().right, &spectrum.groups, Direction::Forward))
}

/// Backward filtration at `w` from products of inverses along the past orbit.
///
/// Levels are listed by the backward exponents `eta_j = -l_{k+1-j}`, descending.
pub fn backward_filtration(c: &MatrixCocycle, w: &State, n: usize, spectrum: &LyapunovSpectrum) -> Result<Filtration> {
    check_separation(spectrum)?;
    let p = c.backward_product(w, n)?;
    let groups: Vec<(f64, usize)> = spectrum.groups.iter().rev().map(|&(v, m)| (-v, m)).collect();
    Ok(filtration_from_right_vectors(&p.svd().right, &groups, Direction::Backward))
}

/// One summand `V^{l}` of the splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingComponent {
    pub exponent: f64,
    pub frame: DMatrix<f64>,
}

/// `V = ⊕ V^{l_j}` at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct OseledetsSplitting {
    /// Components in descending exponent order.
    pub components: Vec<SplittingComponent>,
}

impl OseledetsSplitting {
    /// Assembles a splitting from `(exponent, frame)` pairs; frames must span `R^d` together.
    pub fn from_components(mut components: Vec<SplittingComponent>) -> Result<Self> {
        let d = components.first().map(|c| c.frame.nrows()).unwrap_or(0);
        let total: usize = components.iter().map(|c| c.frame.ncols()).sum();
        if total != d {
            return Err(Error::DimensionMismatch { expected: d, got: total });
        }
        components.sort_by(|a, b| b.exponent.partial_cmp(&a.exponent).unwrap());
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.first().map(|c| c.frame.nrows()).unwrap_or(0)
    }
}

/// Cosines above this count as a shared direction.
const INTERSECTION_TOL: f64 = 1e-8;

/// Oseledets splitting `V^{l_j} = V^{<=l_j} ∩ V^{<=eta_{k+1-j}}` (invertible base only).
pub fn oseledets_splitting(c: &MatrixCocycle, w: &State, n: usize) -> Result<OseledetsSplitting> {
    let spectrum = lyapunov_spectrum(c, w, n, SpectrumMethod::Qr)?;
    let fwd = forward_filtration(c, w, n, &spectrum)?;
    let bwd = backward_filtration(c, w, n, &spectrum)?;
    let k = spectrum.groups.len();
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let slow = &fwd.frames[j];
        let fast = &bwd.frames[k - 1 - j];
        let want = spectrum.groups[j].1;
        let frame = intersect(slow, fast, want)?;
        components.push(SplittingComponent { exponent: spectrum.groups[j].0, frame });
    }
    OseledetsSplitting::from_components(components)
}

/// Orthonormal frame of `span(a) ∩ span(b)`, which must have dimension `want`.
fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>, want: usize) -> Result<DMatrix<f64>> {
    let svd = (a.transpose() * b).svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let cosines: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let shared = cosines.iter().filter(|&&c| c > 1.0 - INTERSECTION_TOL).count();
    if shared != want {
        return Err(Error::Intersection { expected: want, cosines });
    }
    let u = svd.u.expect("u requested");
    let mut frame = DMatrix::zeros(a.nrows(), want);
    for (col, &i) in order.iter().take(want).enumerate() {
        frame.set_column(col, &(a * u.column(i)));
    }
    Ok(linalg::orthonormalize(&frame))
}

/// A block upper-triangular cocycle `[[T_E, U], [0, T_F]]` with `dim E = dim_e`.
#[derive(Debug, Clone)]
pub struct BlockCocycle {
    cocycle: MatrixCocycle,
    dim_e: usize,
}

impl BlockCocycle {
    pub fn new(cocycle: MatrixCocycle, dim_e: usize) -> Result<Self> {
        let d = cocycle.dim();
        if dim_e == 0 || dim_e >= d {
            return Err(Error::Domain(format!("dim E = {dim_e} must lie in 1..{d}")));
        }
        for s in cocycle.base().sample_states(32, 0xb10c) {
            let a = cocycle.matrix_at(&s);
            if a.view((dim_e, 0), (d - dim_e, dim_e)).amax() != 0.0 {
                return Err(Error::Precondition("generator is not block upper triangular".into()));
            }
        }
        Ok(Self { cocycle, dim_e })
    }

    pub fn cocycle(&self) -> &MatrixCocycle {
        &self.cocycle
    }

    pub fn dim_e(&self) -> usize {
        self.dim_e
    }

    pub fn dim_f(&self) -> usize {
        self.cocycle.dim() - self.dim_e
    }

    fn blocks(&self, s: &State) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = self.cocycle.matrix_at(s);
        let (e, f) = (self.dim_e, self.dim_f());
        (
            a.view((0, 0), (e, e)).into_owned(),
            a.view((0, e), (e, f)).into_owned(),
            a.view((e, e), (f, f)).into_owned(),
        )
    }

    fn block_cocycle(&self, which: Block) -> Result<MatrixCocycle> {
        let c = self.cocycle.clone();
        let (e, f) = (self.dim_e, self.dim_f());
        let (dim, off) = match which {
            Block::E => (e, 0),
            Block::F => (f, e),
        };
        MatrixCocycle::new(c.base().clone(), dim, crate::cocycle::StructureTag::None, move |s| {
            c.matrix_at(s).view((off, off), (dim, dim)).into_owned()
        })
    }
}

enum Block {
    E,
    F,
}

/// Truncated solution `tau_w : F -> E` of `T_E tau_w + U_w = tau_{Tw} T_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingMap {
    pub dim_e: usize,
    pub dim_f: usize,
    pub tau: DMatrix<f64>,
    pub terms_used: usize,
    /// The last series term had norm below `1e-10`.
    pub converged: bool,
    /// `||T_E tau_w + U_w - tau_{Tw} T_F||`.
    pub residual: f64,
    /// `(N, (1/N) log(||sigma(w)|| / ||w||))` with `w = T_F^N v`.
    pub temperedness: Vec<(usize, f64)>,
}

/// Horizon of the `l_E > l_F` precondition check.
const PRECONDITION_HORIZON: usize = 4096;
const SERIES_TOL: f64 = 1e-10;

/// Sums `tau_w = -sum_{n < max_terms} (T_E^{n+1})^{-1} U_{T^n w} T_F^n`.
fn tau_series(b: &BlockCocycle, w: &State, max_terms: usize) -> Result<(DMatrix<f64>, usize, bool)> {
    let (e, f) = (b.dim_e, b.dim_f());
    let base = b.cocycle.base();
    let mut tau = DMatrix::zeros(e, f);
    // (T_E^{n+1})^{-1} = exp(p_log) p_hat, T_F^n = exp(f_log) f_hat
    let mut p_hat = DMatrix::identity(e, e);
    let mut p_log = 0.0f64;
    let mut f_hat = DMatrix::identity(f, f);
    let mut f_log = 0.0f64;
    let mut s = *w;
    let mut last_norm = f64::INFINITY;
    let mut growth_run = 0;
    let mut used = 0;
    let mut converged = false;
    for n in 0..max_terms {
        let (te, u, tf) = b.blocks(&s);
        let te_inv = te.try_inverse().ok_or(Error::Singular { step: n, log_abs_det: f64::NEG_INFINITY })?;
        p_hat = &p_hat * te_inv;
        let m: f64 = p_hat.amax();
        p_hat /= m;
        p_log += m.ln();

        let term_hat = &p_hat * u * &f_hat;
        let scale = p_log + f_log;
        let term = term_hat * scale.exp();
        tau -= &term;
        used = n + 1;

        let norm = term.norm();
        if norm > last_norm && norm > 0.0 {
            growth_run += 1;
            if growth_run >= 10 {
                return Err(Error::Divergence(format!(
                    "splitting series terms grew for 10 consecutive steps (|term_{n}| = {norm:.3e}); \
                     the exponents on E probably do not dominate those on F"
                )));
            }
        } else {
            growth_run = 0;
        }
        last_norm = norm;
        converged = norm < SERIES_TOL;
        if norm <= f64::EPSILON * 1e-3 * tau.norm() {
            break;
        }

        f_hat = tf * &f_hat;
        let m: f64 = f_hat.amax();
        f_hat /= m;
        f_log += m.ln();
        s = base.step(&s);
    }
    Ok((tau, used, converged))
}

/// Splitting-map series with its invariance residual and temperedness trace up to `tempered_horizon`.
pub fn splitting_map(b: &BlockCocycle, w: &State, max_terms: usize, tempered_horizon: usize) -> Result<SplittingMap> {
    if max_terms == 0 {
        return Err(Error::Domain("max_terms must be at least 1".into()));
    }
    let spec_e = lyapunov_spectrum(&b.block_cocycle(Block::E)?, w, PRECONDITION_HORIZON, SpectrumMethod::Qr)?;
    let spec_f = lyapunov_spectrum(&b.block_cocycle(Block::F)?, w, PRECONDITION_HORIZON, SpectrumMethod::Qr)?;
    let (min_e, max_f) = (*spec_e.exponents.last().unwrap(), spec_f.exponents[0]);
    if min_e <= max_f {
        return Err(Error::Precondition(format!(
            "splitting needs l_E > l_F, estimated min l_E = {min_e:.6} <= max l_F = {max_f:.6}"
        )));
    }
    let base = b.cocycle.base();
    let (tau, terms_used, converged) = tau_series(b, w, max_terms)?;
    let (tau_next, _, _) = tau_series(b, &base.step(w), max_terms)?;
    let (te, u, tf) = b.blocks(w);
    let residual = (&te * &tau + &u - &tau_next * &tf).norm();

    let mut temperedness = Vec::new();
    if tempered_horizon > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed() ^ 0x7e3e);
        let mut v = linalg::random_unit_vector(&mut rng, b.dim_f());
        let checkpoints = dyadic_indices(tempered_horizon);
        let mut s = *w;
        let mut next = 0;
        for n in 1..=tempered_horizon {
            let (_, _, tf) = b.blocks(&s);
            v = tf * v;
            v /= v.norm();
            s = base.step(&s);
            if n == checkpoints[next] {
                let (tau_n, _, _) = tau_series(b, &s, max_terms)?;
                let image = &tau_n * &v;
                let ratio = (image.norm_squared() + 1.0).sqrt();
                temperedness.push((n, ratio.ln() / n as f64));
                next += 1;
            }
        }
    }
    Ok(SplittingMap { dim_e: b.dim_e, dim_f: b.dim_f(), tau, terms_used, converged, residual, temperedness })
}

/// `(n, values)` with one value of `(1/n) log |<Lambda^{-2n} (T^n)^T T^n v, v>|` per test vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaResidual {
    pub trace: Vec<(usize, Vec<f64>)>,
}

/// The symmetric operator acting by `exp(l_j)` on the orthogonalized filtration steps.
///
/// Returns orthogonal projections paired with exponents; the filtration is
/// orthogonalized from the slowest summand upward. Gram-Schmidt keeps exact
/// zeros exact, which matters because `Lambda^{-2n}` amplifies any leakage
/// between eigenspaces by `exp(2n (l_1 - l_k))`.
fn lambda_eigenspaces(split: &OseledetsSplitting) -> Vec<(f64, DMatrix<f64>)> {
    let d = split.dim();
    let mut out = Vec::new();
    let mut below = DMatrix::<f64>::zeros(d, 0);
    for comp in split.components.iter().rev() {
        let new_part = linalg::gram_schmidt_against(&below, &comp.frame);
        out.push((comp.exponent, &new_part * new_part.transpose()));
        let start = below.ncols();
        below = below.clone().resize_horizontally(start + new_part.ncols(), 0.0);
        below.view_mut((0, start), (d, new_part.ncols())).copy_from(&new_part);
    }
    out.reverse();
    out
}

/// Residual of the Lambda-operator criterion at dyadic `n <= N`.
pub fn lambda_residual(
    c: &MatrixCocycle,
    w: &State,
    n: usize,
    split: &OseledetsSplitting,
    test_vectors: Option<&[DVector<f64>]>,
) -> Result<LambdaResidual> {
    let d = c.dim();
    if split.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: split.dim() });
    }
    let vectors: Vec<DVector<f64>> = match test_vectors {
        Some(v) => v.to_vec(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.base().seed() ^ 0x1a3b);
            (0..d).map(|_| linalg::random_unit_vector(&mut rng, d)).collect()
        }
    };
    let spaces = lambda_eigenspaces(split);
    let ns = dyadic_indices(n);
    let products = c.products_at(w, &ns)?;
    let mut trace = Vec::with_capacity(ns.len());
    for (k, p) in ns.iter().zip(&products) {
        let (row_log, unit) = p.r_factor_scaled();
        let vals = vectors
            .iter()
            .map(|v| {
                let uv = unit * v;
                let mut terms = Vec::new();
                for (lam, proj) in &spaces {
                    let upv = unit * (proj * v);
                    for i in 0..d {
                        let prod = uv[i] * upv[i];
                        if prod != 0.0 {
                            terms.push((prod.signum(), 2.0 * row_log[i] - 2.0 * *k as f64 * lam + prod.abs().ln()));
                        }
                    }
                }
                signed_log_sum(&terms) / *k as f64
            })
            .collect();
        trace.push((*k, vals));
    }
    Ok(LambdaResidual { trace })
}

/// `log |sum sign_i exp(l_i)|`.
fn signed_log_sum(terms: &[(f64, f64)]) -> f64 {
    let m = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().map(|(sg, l)| sg * (l - m).exp()).sum();
    m + s.abs().ln()
}

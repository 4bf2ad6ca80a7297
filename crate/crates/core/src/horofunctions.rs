//! Horofunctions of proper metric spaces, drift of semi-contractions and the
//! noncommutative ergodic theorem for isometry cocycles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{dyadic_indices, fekete_limit, kingman_estimate, ErgodicSystem, Estimate, FeketeReport, KingmanReport, State, SubadditiveSequence};
use crate::error::{Error, Result};
use crate::linalg;
use crate::symspace::{busemann_value, random_point, spd_distance, BusemannData, SpdPoint};

const DISTANCE_SLACK: f64 = 1e-9;
const MAX_GAP_ANCHORS: usize = 32;
const SEMI_CONTRACTION_AUDIT_PAIRS: usize = 256;
const ISOMETRY_AUDIT_STATES: usize = 16;
const ISOMETRY_AUDIT_PAIRS: usize = 100;
const INTEGRABILITY_SAMPLES: usize = 1000;
const ZERO_DRIFT: f64 = 1e-12;

/// A proper metric space with a basepoint `x0`.
pub trait MetricSpace {
    type Point: Clone + fmt::Debug;

    fn distance(&self, x: &Self::Point, y: &Self::Point) -> f64;

    fn basepoint(&self) -> Self::Point;

    /// A random point, for audits and property tests.
    fn sample_point(&self, rng: &mut dyn RngCore) -> Self::Point;
}

/// A group of isometries acting on a metric space.
pub trait IsometryGroup: MetricSpace {
    type Isometry: Clone + fmt::Debug;

    fn apply(&self, g: &Self::Isometry, x: &Self::Point) -> Self::Point;

    /// `a o b`, i.e. `x -> a(b(x))`.
    fn compose(&self, a: &Self::Isometry, b: &Self::Isometry) -> Self::Isometry;

    fn inverse(&self, g: &Self::Isometry) -> Self::Isometry;

    fn identity(&self) -> Self::Isometry;

    fn sample_isometry(&self, rng: &mut dyn RngCore) -> Self::Isometry;
}

/// Checks symmetry, `d(x, x) = 0` and the triangle inequality on random triples.
pub fn audit_metric<S: MetricSpace>(space: &S, triples: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..triples {
        let x = space.sample_point(&mut rng);
        let y = space.sample_point(&mut rng);
        let z = space.sample_point(&mut rng);
        let (dxy, dyx) = (space.distance(&x, &y), space.distance(&y, &x));
        if (dxy - dyx).abs() > 1e-12 * (1.0 + dxy) {
            return Err(Error::Precondition(format!("distance not symmetric: {dxy} vs {dyx} at {x:?}, {y:?}")));
        }
        let dxx = space.distance(&x, &x);
        if dxx.abs() > 1e-12 {
            return Err(Error::Precondition(format!("d(x, x) = {dxx} at {x:?}")));
        }
        let (dxz, dyz) = (space.distance(&x, &z), space.distance(&y, &z));
        if dxz > dxy + dyz + DISTANCE_SLACK * (1.0 + dxz) {
            return Err(Error::Precondition(format!("triangle inequality fails: {dxz} > {dxy} + {dyz}")));
        }
    }
    Ok(())
}

/// `R^d` with the Euclidean metric and basepoint `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Euclidean {
    dim: usize,
}

impl Euclidean {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `x -> linear x + shift` with `linear` orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanMotion {
    linear: DMatrix<f64>,
    shift: DVector<f64>,
}

impl EuclideanMotion {
    pub fn new(linear: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let d = shift.len();
        if linear.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: linear.nrows() });
        }
        let err = (linear.transpose() * &linear - DMatrix::identity(d, d)).amax();
        if err > 1e-10 {
            return Err(Error::Domain(format!("linear part is not orthogonal (error {err:.3e})")));
        }
        Ok(Self { linear, shift })
    }

    pub fn translation(shift: DVector<f64>) -> Self {
        let d = shift.len();
        Self { linear: DMatrix::identity(d, d), shift }
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }
}

impl MetricSpace for Euclidean {
    type Point = DVector<f64>;

    fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x - y).norm()
    }

    fn basepoint(&self) -> DVector<f64> {
        DVector::zeros(self.dim)
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.random_range(-10.0..10.0)))
    }
}

impl IsometryGroup for Euclidean {
    type Isometry = EuclideanMotion;

    fn apply(&self, g: &EuclideanMotion, x: &DVector<f64>) -> DVector<f64> {
        &g.linear * x + &g.shift
    }

    fn compose(&self, a: &EuclideanMotion, b: &EuclideanMotion) -> EuclideanMotion {
        EuclideanMotion { linear: &a.linear * &b.linear, shift: &a.linear * &b.shift + &a.shift }
    }

    fn inverse(&self, g: &EuclideanMotion) -> EuclideanMotion {
        let lt = g.linear.transpose();
        EuclideanMotion { shift: -(&lt * &g.shift), linear: lt }
    }

    fn identity(&self) -> EuclideanMotion {
        EuclideanMotion::translation(DVector::zeros(self.dim))
    }

    fn sample_isometry(&self, rng: &mut dyn RngCore) -> EuclideanMotion {
        let linear = linalg::random_orthogonal(rng, self.dim);
        EuclideanMotion { linear, shift: self.sample_point(rng) }
    }
}

/// The space of determinant-one SPD matrices with basepoint `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpdSpace {
    dim: usize,
}

impl SpdSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `p -> g p g^T` (det-normalized) for invertible `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdIsometry(DMatrix<f64>);

impl SpdIsometry {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
        }
        let sv = linalg::singular_values(&g);
        let smin = *sv.last().unwrap_or(&0.0);
        if !(smin > f64::EPSILON * g.nrows() as f64 * sv[0]) {
            return Err(Error::Singular { step: 0, log_abs_det: f64::NEG_INFINITY });
        }
        Ok(Self(g))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl MetricSpace for SpdSpace {
    type Point = SpdPoint;

    /// Panics if a point has the wrong dimension.
    fn distance(&self, x: &SpdPoint, y: &SpdPoint) -> f64 {
        spd_distance(x, y).expect("points of an SPD space share its dimension")
    }

    fn basepoint(&self) -> SpdPoint {
        SpdPoint::identity(self.dim)
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> SpdPoint {
        random_point(rng, self.dim, 1.0)
    }
}

impl IsometryGroup for SpdSpace {
    type Isometry = SpdIsometry;

    fn apply(&self, g: &SpdIsometry, x: &SpdPoint) -> SpdPoint {
        x.congruence(&g.0)
    }

    fn compose(&self, a: &SpdIsometry, b: &SpdIsometry) -> SpdIsometry {
        let m = &a.0 * &b.0;
        let scale = m.amax();
        SpdIsometry(if scale > 0.0 && scale.is_finite() { m / scale } else { m })
    }

    fn inverse(&self, g: &SpdIsometry) -> SpdIsometry {
        SpdIsometry(g.0.clone().try_inverse().expect("isometries are invertible"))
    }

    fn identity(&self) -> SpdIsometry {
        SpdIsometry(DMatrix::identity(self.dim, self.dim))
    }

    fn sample_isometry(&self, rng: &mut dyn RngCore) -> SpdIsometry {
        loop {
            if let Ok(g) = SpdIsometry::new(linalg::gaussian_matrix(rng, self.dim, self.dim)) {
                return g;
            }
        }
    }
}

/// The real line with `D(x, y) = |x - y|^p`, `0 < p < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DLine {
    exponent: f64,
}

impl DLine {
    pub fn new(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::Domain(format!("exponent must lie in (0, 1], got {exponent}")));
        }
        Ok(Self { exponent })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }
}

/// `x -> x + shift` or `x -> -x + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMotion {
    pub reflect: bool,
    pub shift: f64,
}

impl MetricSpace for DLine {
    type Point = f64;

    fn distance(&self, x: &f64, y: &f64) -> f64 {
        (x - y).abs().powf(self.exponent)
    }

    fn basepoint(&self) -> f64 {
        0.0
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> f64 {
        rng.random_range(-100.0..100.0)
    }
}

impl IsometryGroup for DLine {
    type Isometry = LineMotion;

    fn apply(&self, g: &LineMotion, x: &f64) -> f64 {
        if g.reflect {
            g.shift - x
        } else {
            g.shift + x
        }
    }

    fn compose(&self, a: &LineMotion, b: &LineMotion) -> LineMotion {
        LineMotion { reflect: a.reflect != b.reflect, shift: self.apply(a, &b.shift) }
    }

    fn inverse(&self, g: &LineMotion) -> LineMotion {
        LineMotion { reflect: g.reflect, shift: if g.reflect { g.shift } else { -g.shift } }
    }

    fn identity(&self) -> LineMotion {
        LineMotion { reflect: false, shift: 0.0 }
    }

    fn sample_isometry(&self, rng: &mut dyn RngCore) -> LineMotion {
        LineMotion { reflect: rng.random(), shift: rng.random_range(-10.0..10.0) }
    }
}

/// A finite connected graph with positive edge lengths and the path metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    distances: DMatrix<f64>,
}

/// A distance-preserving permutation of the vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphAutomorphism(Vec<usize>);

impl MetricGraph {
    /// Vertices `0..vertices`, basepoint `0`.
    pub fn new(vertices: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if vertices == 0 {
            return Err(Error::Domain("graph has no vertices".into()));
        }
        let mut dist = DMatrix::from_element(vertices, vertices, f64::INFINITY);
        for i in 0..vertices {
            dist[(i, i)] = 0.0;
        }
        for &(u, v, w) in edges {
            if u >= vertices || v >= vertices {
                return Err(Error::Domain(format!("edge ({u}, {v}) leaves the vertex set")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("edge length {w} must be positive")));
            }
            let best = dist[(u, v)].min(w);
            dist[(u, v)] = best;
            dist[(v, u)] = best;
        }
        for k in 0..vertices {
            for i in 0..vertices {
                for j in 0..vertices {
                    let via = dist[(i, k)] + dist[(k, j)];
                    if via < dist[(i, j)] {
                        dist[(i, j)] = via;
                    }
                }
            }
        }
        if dist.iter().any(|d| d.is_infinite()) {
            return Err(Error::Domain("graph is not connected".into()));
        }
        Ok(Self { distances: dist })
    }

    /// The cycle graph with unit edges.
    pub fn cycle(vertices: usize) -> Result<Self> {
        let edges: Vec<(usize, usize, f64)> = (0..vertices).map(|i| (i, (i + 1) % vertices, 1.0)).collect();
        Self::new(vertices, &edges)
    }

    pub fn vertices(&self) -> usize {
        self.distances.nrows()
    }

    pub fn automorphism(&self, perm: Vec<usize>) -> Result<GraphAutomorphism> {
        let n = self.vertices();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Domain("not a permutation of the vertices".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (self.distances[(perm[i], perm[j])] - self.distances[(i, j)]).abs() > 1e-12 {
                    return Err(Error::Domain(format!("permutation moves the distance between {i} and {j}")));
                }
            }
        }
        Ok(GraphAutomorphism(perm))
    }
}

impl MetricSpace for MetricGraph {
    type Point = usize;

    fn distance(&self, x: &usize, y: &usize) -> f64 {
        self.distances[(*x, *y)]
    }

    fn basepoint(&self) -> usize {
        0
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..self.vertices())
    }
}

impl IsometryGroup for MetricGraph {
    type Isometry = GraphAutomorphism;

    fn apply(&self, g: &GraphAutomorphism, x: &usize) -> usize {
        g.0[*x]
    }

    fn compose(&self, a: &GraphAutomorphism, b: &GraphAutomorphism) -> GraphAutomorphism {
        GraphAutomorphism(b.0.iter().map(|&i| a.0[i]).collect())
    }

    fn inverse(&self, g: &GraphAutomorphism) -> GraphAutomorphism {
        let mut inv = vec![0; g.0.len()];
        for (i, &j) in g.0.iter().enumerate() {
            inv[j] = i;
        }
        GraphAutomorphism(inv)
    }

    fn identity(&self) -> GraphAutomorphism {
        GraphAutomorphism((0..self.vertices()).collect())
    }

    /// Rotations and reflections of the vertex labels, when they are automorphisms.
    fn sample_isometry(&self, rng: &mut dyn RngCore) -> GraphAutomorphism {
        let n = self.vertices();
        let shift = rng.random_range(0..n);
        let reflect: bool = rng.random();
        let perm: Vec<usize> = (0..n).map(|i| if reflect { (shift + n - i) % n } else { (i + shift) % n }).collect();
        self.automorphism(perm).unwrap_or_else(|_| self.identity())
    }
}

/// An explicit horofunction `y -> h(y)`, normalized so `h(x0) = 0`.
#[derive(Clone)]
pub struct ClosedForm<P> {
    label: String,
    eval: Arc<dyn Fn(&P) -> f64 + Send + Sync>,
}

impl<P> fmt::Debug for ClosedForm<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedForm").field("label", &self.label).finish_non_exhaustive()
    }
}

impl<P> ClosedForm<P> {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&P) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), eval: Arc::new(eval) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Points `z_i` whose functions `h_{z_i}` approximate a horofunction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSequence<P> {
    anchors: Vec<P>,
    /// `(i, max_probe |h_{z_i} - h_{z_{i-1}}|)` over the last few anchors.
    cauchy_gaps: Vec<(usize, f64)>,
}

impl<P: Clone + fmt::Debug> AnchorSequence<P> {
    pub fn new<S: MetricSpace<Point = P>>(space: &S, anchors: Vec<P>, probes: &[P]) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Domain("anchor sequence is empty".into()));
        }
        let x0 = space.basepoint();
        let start = anchors.len().saturating_sub(MAX_GAP_ANCHORS).max(1);
        let cauchy_gaps = (start..anchors.len())
            .map(|i| {
                let gap = probes
                    .iter()
                    .map(|y| (internal_value(space, &anchors[i], &x0, y) - internal_value(space, &anchors[i - 1], &x0, y)).abs())
                    .fold(0.0, f64::max);
                (i, gap)
            })
            .collect();
        Ok(Self { anchors, cauchy_gaps })
    }

    pub fn anchors(&self) -> &[P] {
        &self.anchors
    }

    pub fn last_anchor(&self) -> &P {
        self.anchors.last().expect("non-empty")
    }

    pub fn cauchy_gaps(&self) -> &[(usize, f64)] {
        &self.cauchy_gaps
    }
}

fn internal_value<S: MetricSpace>(space: &S, x: &S::Point, x0: &S::Point, y: &S::Point) -> f64 {
    space.distance(x, y) - space.distance(x, x0)
}

/// An element of the horofunction bordification.
#[derive(Debug, Clone)]
pub enum Horofunction<P> {
    /// The zero function.
    Zero,
    /// `h_x(y) = d(x, y) - d(x, x0)`.
    Internal(P),
    /// `h_{z_last}`, with convergence metadata.
    Anchors(AnchorSequence<P>),
    ClosedForm(ClosedForm<P>),
}

impl<P: Clone + fmt::Debug> Horofunction<P> {
    pub fn eval<S: MetricSpace<Point = P>>(&self, space: &S, y: &P) -> f64 {
        match self {
            Horofunction::Zero => 0.0,
            Horofunction::Internal(x) => internal_value(space, x, &space.basepoint(), y),
            Horofunction::Anchors(a) => internal_value(space, a.last_anchor(), &space.basepoint(), y),
            Horofunction::ClosedForm(c) => (c.eval)(y),
        }
    }
}

impl Horofunction<DVector<f64>> {
    /// `h(y) = -<v, y>` for a unit vector `v`: the Busemann function of the ray `t v`.
    pub fn linear(direction: &DVector<f64>) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) {
            return Err(Error::Domain("direction is zero".into()));
        }
        let v = direction / norm;
        Ok(Horofunction::ClosedForm(ClosedForm::new("linear", move |y: &DVector<f64>| -v.dot(y))))
    }
}

impl Horofunction<SpdPoint> {
    /// The Busemann function of the ray `exp(t alpha)`.
    pub fn busemann(data: BusemannData) -> Result<Self> {
        busemann_value(&data, &SpdPoint::identity(data.dim()))?;
        Ok(Horofunction::ClosedForm(ClosedForm::new("busemann", move |y: &SpdPoint| {
            busemann_value(&data, y).unwrap_or(f64::NAN)
        })))
    }
}

/// The embedding `x -> h_x`.
pub fn phi_embed<S: MetricSpace>(_space: &S, x: &S::Point) -> Horofunction<S::Point> {
    Horofunction::Internal(x.clone())
}

/// `(g . h)(z) = h(g^{-1} z) - h(g^{-1} x0)`.
pub fn isometry_act<S>(space: &S, g: &S::Isometry, h: &Horofunction<S::Point>) -> Horofunction<S::Point>
where
    S: IsometryGroup + Clone + Send + Sync + 'static,
    S::Point: Send + Sync + 'static,
    S::Isometry: Send + Sync + 'static,
{
    match h {
        Horofunction::Zero => Horofunction::Zero,
        Horofunction::Internal(x) => Horofunction::Internal(space.apply(g, x)),
        Horofunction::Anchors(a) => Horofunction::Anchors(AnchorSequence {
            anchors: a.anchors.iter().map(|z| space.apply(g, z)).collect(),
            cauchy_gaps: a.cauchy_gaps.clone(),
        }),
        Horofunction::ClosedForm(c) => {
            let inv = space.inverse(g);
            let space = space.clone();
            let inner = c.eval.clone();
            let offset = inner(&space.apply(&inv, &space.basepoint()));
            Horofunction::ClosedForm(ClosedForm {
                label: format!("acted {}", c.label),
                eval: Arc::new(move |z| inner(&space.apply(&inv, z)) - offset),
            })
        }
    }
}

/// `F(g, h) = -h(g^{-1} x0)`, which satisfies `F(g1 g2, h) = F(g1, g2 h) + F(g2, h)`.
pub fn horofunction_cocycle<S: IsometryGroup>(space: &S, g: &S::Isometry, h: &Horofunction<S::Point>) -> f64 {
    -h.eval(space, &space.apply(&space.inverse(g), &space.basepoint()))
}

/// Fekete estimate of the drift `lim d(x0, f^n x0) / n` of a semi-contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub drift: f64,
    pub fekete: FeketeReport,
    /// `a_n = d(x0, f^n x0)` for `n = 1..=N`.
    pub displacements: Vec<f64>,
}

fn orbit<S: MetricSpace, F: Fn(&S::Point) -> S::Point>(space: &S, f: &F, n: usize) -> Vec<S::Point> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(space.basepoint());
    for i in 0..n {
        out.push(f(&out[i]));
    }
    out
}

fn check_contraction<S: MetricSpace, F: Fn(&S::Point) -> S::Point>(
    space: &S,
    f: &F,
    x: &S::Point,
    y: &S::Point,
    images: Option<(&S::Point, &S::Point)>,
) -> Result<()> {
    let d = space.distance(x, y);
    let fd = match images {
        Some((fx, fy)) => space.distance(fx, fy),
        None => space.distance(&f(x), &f(y)),
    };
    if fd > d + DISTANCE_SLACK * (1.0 + d) {
        return Err(Error::Precondition(format!("map is not a semi-contraction: d(fx, fy) = {fd} > d(x, y) = {d}")));
    }
    Ok(())
}

fn drift_with_orbit<S, F>(space: &S, f: &F, n: usize, audit: &[S::Point]) -> Result<(DriftReport, Vec<S::Point>)>
where
    S: MetricSpace,
    F: Fn(&S::Point) -> S::Point,
{
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    for (i, x) in audit.iter().enumerate() {
        for y in &audit[i + 1..] {
            check_contraction(space, f, x, y, None)?;
        }
    }
    let pts = orbit(space, f, n);
    let mut rng = ChaCha8Rng::seed_from_u64(0xd21f_7000);
    for _ in 0..SEMI_CONTRACTION_AUDIT_PAIRS.min(n * n) {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i == j {
            continue;
        }
        check_contraction(space, f, &pts[i], &pts[j], Some((&pts[i + 1], &pts[j + 1])))?;
    }
    let x0 = &pts[0];
    let displacements: Vec<f64> = pts[1..].iter().map(|x| space.distance(x0, x)).collect();
    let fekete = fekete_limit(&SubadditiveSequence::new(displacements.clone())?);
    Ok((DriftReport { drift: fekete.infimum.max(0.0), fekete, displacements }, pts))
}

/// Drift of `f`, after auditing it as a semi-contraction on the orbit and on `audit` points.
pub fn drift<S, F>(space: &S, f: F, n: usize, audit: &[S::Point]) -> Result<DriftReport>
where
    S: MetricSpace,
    F: Fn(&S::Point) -> S::Point,
{
    Ok(drift_with_orbit(space, &f, n, audit)?.0)
}

/// Record-time diagnostics of [`karlsson_horofunction`].
#[derive(Debug, Clone, PartialEq)]
pub struct KarlssonDiagnostics {
    pub drift: DriftReport,
    pub epsilon: f64,
    pub record_times: Vec<usize>,
    /// `(k, h(f^k x0))` for `k = 1..=N/2`.
    pub values: Vec<(usize, f64)>,
}

impl KarlssonDiagnostics {
    /// Largest `(h(f^k x0) + l k) / (l k)`; the horofunction inequality asks for `<= 0`.
    pub fn max_relative_excess(&self) -> f64 {
        let l = self.drift.drift;
        if l <= ZERO_DRIFT {
            return 0.0;
        }
        self.values.iter().map(|&(k, h)| (h + l * k as f64) / (l * k as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `-a_k - h(f^k x0)`; `h(f^k x0) >= -a_k` always.
    pub fn lower_bound_violation(&self) -> f64 {
        self.values
            .iter()
            .map(|&(k, h)| -self.drift.displacements[k - 1] - h)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Running maxima of `a_n - slope n` (with `a_0 = 0`).
fn record_times(values: &[f64], slope: f64) -> Vec<usize> {
    let mut best = 0.0;
    let mut out = Vec::new();
    for (i, &a) in values.iter().enumerate() {
        let n = i + 1;
        let v = a - slope * n as f64;
        if v > best {
            best = v;
            out.push(n);
        }
    }
    out
}

fn record_epsilon(gap: f64) -> f64 {
    (2.0 * gap.abs()).max(1e-4)
}

/// A single horofunction `h` with `h(f^k x0) <= -l k`, built from the orbit's record times.
pub fn karlsson_horofunction<S, F>(
    space: &S,
    f: F,
    n: usize,
    audit: &[S::Point],
) -> Result<(Horofunction<S::Point>, KarlssonDiagnostics)>
where
    S: MetricSpace,
    F: Fn(&S::Point) -> S::Point,
{
    let (report, pts) = drift_with_orbit(space, &f, n, audit)?;
    let l = report.drift;
    let epsilon = record_epsilon(report.fekete.gap);
    let (h, records) = if l <= ZERO_DRIFT {
        (Horofunction::Zero, Vec::new())
    } else {
        let records = record_times(&report.displacements, l - epsilon);
        if records.len() < 3 {
            return Err(Error::Horizon(format!(
                "only {} record times up to N = {n}; increase N",
                records.len()
            )));
        }
        let anchors: Vec<S::Point> = records.iter().map(|&k| pts[k].clone()).collect();
        let probes: Vec<S::Point> = dyadic_indices(n).into_iter().map(|k| pts[k].clone()).collect();
        (Horofunction::Anchors(AnchorSequence::new(space, anchors, &probes)?), records)
    };
    let values = (1..=n / 2).map(|k| (k, h.eval(space, &pts[k]))).collect();
    Ok((h, KarlssonDiagnostics { drift: report, epsilon, record_times: records, values }))
}

/// `w -> g_w`, an isometry of `space` for each base state.
#[derive(Clone)]
pub struct IsometryCocycle<S: IsometryGroup> {
    space: S,
    base: ErgodicSystem,
    generator: Arc<dyn Fn(&State) -> S::Isometry + Send + Sync>,
}

impl<S: IsometryGroup + fmt::Debug> fmt::Debug for IsometryCocycle<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IsometryCocycle").field("space", &self.space).field("base", &self.base).finish_non_exhaustive()
    }
}

impl<S: IsometryGroup> IsometryCocycle<S> {
    /// Audits distance preservation on sampled states and random pairs.
    pub fn new<F>(space: S, base: ErgodicSystem, generator: F) -> Result<Self>
    where
        F: Fn(&State) -> S::Isometry + Send + Sync + 'static,
    {
        let c = Self { space, base, generator: Arc::new(generator) };
        let mut rng = ChaCha8Rng::seed_from_u64(c.base.seed() ^ 0x150_a0d1);
        for s in c.base.sample_states(ISOMETRY_AUDIT_STATES, c.base.seed() ^ 0x150_a0d2) {
            let g = c.isometry_at(&s);
            for _ in 0..ISOMETRY_AUDIT_PAIRS {
                let x = c.space.sample_point(&mut rng);
                let y = c.space.sample_point(&mut rng);
                let d = c.space.distance(&x, &y);
                let gd = c.space.distance(&c.space.apply(&g, &x), &c.space.apply(&g, &y));
                if (d - gd).abs() > DISTANCE_SLACK * (1.0 + d) {
                    return Err(Error::Precondition(format!("g at {s:?} moves a distance {d} to {gd}")));
                }
            }
        }
        Ok(c)
    }

    pub fn space(&self) -> &S {
        &self.space
    }

    pub fn base(&self) -> &ErgodicSystem {
        &self.base
    }

    pub fn isometry_at(&self, s: &State) -> S::Isometry {
        (self.generator)(s)
    }

    /// `g_w g_{Tw} ... g_{T^{n-1} w} x0`, applied innermost first.
    pub fn orbit_point(&self, w: &State, n: usize) -> S::Point {
        let states: Vec<State> = std::iter::successors(Some(*w), |s| Some(self.base.step(s))).take(n).collect();
        states
            .iter()
            .rev()
            .fold(self.space.basepoint(), |x, s| self.space.apply(&self.isometry_at(s), &x))
    }

    /// `F_n(w) = d(g_w ... g_{T^{n-1} w} x0, x0)`.
    pub fn displacement(&self, w: &State, n: usize) -> f64 {
        self.space.distance(&self.orbit_point(w, n), &self.space.basepoint())
    }
}

/// Output of [`ncet_drift`].
#[derive(Debug, Clone, PartialEq)]
pub struct NcetReport {
    pub drift: KingmanReport,
    /// Monte-Carlo estimate of `E d(g_w x0, x0)`.
    pub integrability: Estimate,
}

fn integrability<S: IsometryGroup>(c: &IsometryCocycle<S>) -> Result<Estimate> {
    let x0 = c.space.basepoint();
    let samples: Vec<f64> = c
        .base
        .sample_states(INTEGRABILITY_SAMPLES, c.base.seed() ^ 0x1e6_0001)
        .iter()
        .map(|s| c.space.distance(&c.space.apply(&c.isometry_at(s), &x0), &x0))
        .collect();
    let est = Estimate::from_samples(&samples);
    if !est.mean.is_finite() {
        return Err(Error::Divergence("E d(g x0, x0) is not finite on the sample".into()));
    }
    Ok(est)
}

/// Kingman estimate of the drift `lim F_n(w) / n`.
pub fn ncet_drift<S: IsometryGroup>(c: &IsometryCocycle<S>, w: &State, n: usize) -> Result<NcetReport> {
    let integrability = integrability(c)?;
    let drift = kingman_estimate(&c.base, |k, s| c.displacement(s, k), w, n)?;
    Ok(NcetReport { drift, integrability })
}

/// Diagnostics of [`ncet_horofunction`].
#[derive(Debug, Clone, PartialEq)]
pub struct NcetDiagnostics {
    pub drift: f64,
    pub epsilon: f64,
    pub record_times: Vec<usize>,
    /// `-h(z_N) / N`, which should approach the drift.
    pub terminal_slope: f64,
}

/// Horofunction `h_w` along the record times of `z_n = g_w ... g_{T^{n-1} w} x0`.
///
/// Composes the isometries, so the horizon is limited by the representation of
/// the composed map (for SPD isometries, by overflow of the matrix product).
pub fn ncet_horofunction<S: IsometryGroup>(
    c: &IsometryCocycle<S>,
    w: &State,
    n: usize,
) -> Result<(Horofunction<S::Point>, NcetDiagnostics)> {
    if n < 2 {
        return Err(Error::Domain("N must be at least 2".into()));
    }
    let space = &c.space;
    let x0 = space.basepoint();
    let mut composed = space.identity();
    let mut s = *w;
    let mut points = Vec::with_capacity(n + 1);
    points.push(x0.clone());
    let mut displacements = Vec::with_capacity(n);
    for k in 1..=n {
        composed = space.compose(&composed, &c.isometry_at(&s));
        s = c.base.step(&s);
        let z = space.apply(&composed, &x0);
        let d = space.distance(&z, &x0);
        if !d.is_finite() {
            return Err(Error::Overflow(format!("composed isometry is not representable at n = {k}")));
        }
        displacements.push(d);
        points.push(z);
    }
    let l = displacements[n - 1] / n as f64;
    let half = displacements[n / 2 - 1] / (n / 2) as f64;
    let epsilon = record_epsilon(l - half);
    if l <= ZERO_DRIFT {
        let diag = NcetDiagnostics { drift: l, epsilon, record_times: Vec::new(), terminal_slope: 0.0 };
        return Ok((Horofunction::Zero, diag));
    }
    let records = record_times(&displacements, l - epsilon);
    if records.len() < 3 {
        return Err(Error::Horizon(format!("only {} record times up to N = {n}; increase N", records.len())));
    }
    let anchors: Vec<S::Point> = records.iter().map(|&k| points[k].clone()).collect();
    let probes: Vec<S::Point> = dyadic_indices(n).into_iter().map(|k| points[k].clone()).collect();
    let h = Horofunction::Anchors(AnchorSequence::new(space, anchors, &probes)?);
    let terminal_slope = -h.eval(space, &points[n]) / n as f64;
    Ok((h, NcetDiagnostics { drift: l, epsilon, record_times: records, terminal_slope }))
}

/// `(1 / N^{1/p}) |S_N|` at dyadic `N`, with the moment audit `E |f|^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MzTrace {
    pub trace: Vec<(usize, f64)>,
    pub moment: Estimate,
}

impl MzTrace {
    pub fn terminal(&self) -> f64 {
        self.trace.last().map(|t| t.1).unwrap_or(f64::NAN)
    }
}

/// Birkhoff sums measured in the metric `D(t) = t^p`.
pub fn dmetric_mz_check<F>(p: f64, system: &ErgodicSystem, f: F, initial: &State, n: usize) -> Result<MzTrace>
where
    F: Fn(&State) -> f64,
{
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    let samples: Vec<f64> = system.sample_states(4096, system.seed() ^ 0x3a2_0001).iter().map(|s| f(s).abs().powf(p)).collect();
    let moment = Estimate::from_samples(&samples);
    if !moment.mean.is_finite() {
        return Err(Error::Divergence("E |f|^p is not finite on the sample".into()));
    }
    let checkpoints = dyadic_indices(n);
    let mut next = 0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut s = *initial;
    let mut trace = Vec::with_capacity(checkpoints.len());
    for k in 1..=n {
        let v = f(&s);
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
        s = system.step(&s);
        if checkpoints[next] == k {
            trace.push((k, (sum + comp).abs() / (k as f64).powf(1.0 / p)));
            next += 1;
        }
    }
    Ok(MzTrace { trace, moment })
}

//! CAT(0) geometry: comparison checks, the tracking ray of a semi-contraction,
//! finite direct integrals and the mean ergodic theorems.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::{Rng, RngCore};

use crate::dynsys::{dyadic_indices, fekete_limit, FeketeReport, SubadditiveSequence};
use crate::error::{Error, Result};
use crate::horofunctions::{Euclidean, IsometryGroup, MetricSpace, SpdSpace};
use crate::symspace::{spd_geodesic, SpdPoint};

const ZERO_DRIFT: f64 = 1e-9;
const MAX_LEVELS: usize = 48;
const MIN_ORBIT: usize = 100;
const WEIGHT_TOL: f64 = 1e-12;

/// A uniquely geodesic space with non-positive curvature.
pub trait Cat0Space: MetricSpace {
    /// The point at fraction `t` in `[0, 1]` of the geodesic from `x` to `y`.
    fn geodesic(&self, x: &Self::Point, y: &Self::Point, t: f64) -> Self::Point;

    fn midpoint(&self, x: &Self::Point, y: &Self::Point) -> Self::Point {
        self.geodesic(x, y, 0.5)
    }

    /// The geodesic through `x` and `y` at fraction `t >= 0`, when it extends past `y`.
    fn extend(&self, x: &Self::Point, y: &Self::Point, t: f64) -> Option<Self::Point> {
        (0.0..=1.0).contains(&t).then(|| self.geodesic(x, y, t))
    }
}

impl Cat0Space for Euclidean {
    fn geodesic(&self, x: &DVector<f64>, y: &DVector<f64>, t: f64) -> DVector<f64> {
        x + (y - x) * t.clamp(0.0, 1.0)
    }

    fn extend(&self, x: &DVector<f64>, y: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
        (t >= 0.0).then(|| x + (y - x) * t)
    }
}

impl Cat0Space for SpdSpace {
    fn geodesic(&self, x: &SpdPoint, y: &SpdPoint, t: f64) -> SpdPoint {
        spd_geodesic(x, y, t.clamp(0.0, 1.0)).expect("points of an SPD space share its dimension")
    }

    fn extend(&self, x: &SpdPoint, y: &SpdPoint, t: f64) -> Option<SpdPoint> {
        (t >= 0.0).then(|| spd_geodesic(x, y, t).expect("points of an SPD space share its dimension"))
    }
}

/// `f(eps) = 4 sqrt(2 eps - eps^2)`: the deviation bound of the almost reverse triangle inequality.
pub fn uniform_convexity_defect(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(defect(epsilon))
}

fn defect(epsilon: f64) -> f64 {
    4.0 * (2.0 * epsilon - epsilon * epsilon).max(0.0).sqrt()
}

/// Witness for `(1 - eps) d(x, y) + d(y, z) <= d(x, z)` and the resulting deviation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseTriangle {
    /// Smallest `eps >= 0` for which the hypothesis holds.
    pub epsilon: f64,
    /// `d(y, y')` with `y'` on `[x, z]` at distance `d(x, y)` from `x`.
    pub deviation: f64,
    /// `f(eps) d(x, y)`.
    pub bound: f64,
}

impl ReverseTriangle {
    pub fn holds(&self, slack: f64) -> bool {
        self.deviation <= self.bound + slack
    }
}

pub fn reverse_triangle_check<S: Cat0Space>(space: &S, x: &S::Point, y: &S::Point, z: &S::Point) -> Result<ReverseTriangle> {
    let (dxy, dxz, dyz) = (space.distance(x, y), space.distance(x, z), space.distance(y, z));
    if !(dxy > 0.0) {
        return Err(Error::Precondition("d(x, y) must be positive".into()));
    }
    if dxz < dxy {
        return Err(Error::Precondition(format!("d(x, z) = {dxz} is below d(x, y) = {dxy}")));
    }
    let epsilon = (1.0 - (dxz - dyz) / dxy).max(0.0);
    if epsilon >= 1.0 {
        return Err(Error::Precondition(format!("the hypothesis needs eps = {epsilon} >= 1")));
    }
    let y_prime = space.geodesic(x, z, dxy / dxz);
    Ok(ReverseTriangle { epsilon, deviation: space.distance(y, &y_prime), bound: defect(epsilon) * dxy })
}

/// A finite tree with positive edge lengths; points lie on edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTree {
    edges: Vec<(usize, usize, f64)>,
    vertex_dist: Vec<Vec<f64>>,
    next_hop: Vec<Vec<usize>>,
    edge_of: HashMap<(usize, usize), usize>,
}

/// The point at distance `offset` from the first endpoint of `edge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreePoint {
    pub edge: usize,
    pub offset: f64,
}

impl MetricTree {
    pub fn new(vertices: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if vertices < 2 || edges.len() != vertices - 1 {
            return Err(Error::Domain(format!("a tree on {vertices} vertices needs {} edges", vertices.saturating_sub(1))));
        }
        let mut adj = vec![Vec::new(); vertices];
        let mut edge_of = HashMap::new();
        for (i, &(u, v, w)) in edges.iter().enumerate() {
            if u >= vertices || v >= vertices || u == v {
                return Err(Error::Domain(format!("bad edge ({u}, {v})")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("edge length {w} must be positive")));
            }
            adj[u].push((v, w));
            adj[v].push((u, w));
            edge_of.insert((u, v), i);
            edge_of.insert((v, u), i);
        }
        let mut vertex_dist = vec![vec![f64::INFINITY; vertices]; vertices];
        let mut next_hop = vec![vec![usize::MAX; vertices]; vertices];
        for root in 0..vertices {
            // walk outward from root; next_hop[v][root] is v's neighbour towards root
            vertex_dist[root][root] = 0.0;
            let mut stack = vec![root];
            while let Some(u) = stack.pop() {
                for &(v, w) in &adj[u] {
                    if vertex_dist[root][v].is_infinite() {
                        vertex_dist[root][v] = vertex_dist[root][u] + w;
                        next_hop[v][root] = u;
                        stack.push(v);
                    }
                }
            }
        }
        if vertex_dist.iter().flatten().any(|d| d.is_infinite()) {
            return Err(Error::Domain("tree is not connected".into()));
        }
        Ok(Self { edges, vertex_dist, next_hop, edge_of })
    }

    /// A star with `arms` unit edges around vertex 0.
    pub fn star(arms: usize) -> Result<Self> {
        Self::new(arms + 1, (1..=arms).map(|i| (0, i, 1.0)).collect())
    }

    pub fn vertex(&self, v: usize) -> TreePoint {
        let (edge, &(a, _, len)) = self.edges.iter().enumerate().find(|(_, e)| e.0 == v || e.1 == v).expect("vertex in tree");
        TreePoint { edge, offset: if a == v { 0.0 } else { len } }
    }

    /// Endpoints of the point's edge with the distances to them.
    fn ends(&self, p: &TreePoint) -> [(usize, f64); 2] {
        let (a, b, len) = self.edges[p.edge];
        [(a, p.offset), (b, len - p.offset)]
    }

    fn point_towards(&self, from: usize, to: usize, dist: f64) -> TreePoint {
        let edge = self.edge_of[&(from, to)];
        let (a, _, len) = self.edges[edge];
        TreePoint { edge, offset: if a == from { dist } else { len - dist } }
    }
}

impl MetricSpace for MetricTree {
    type Point = TreePoint;

    fn distance(&self, p: &TreePoint, q: &TreePoint) -> f64 {
        if p.edge == q.edge {
            return (p.offset - q.offset).abs();
        }
        let mut best = f64::INFINITY;
        for (a, da) in self.ends(p) {
            for (b, db) in self.ends(q) {
                best = best.min(da + self.vertex_dist[a][b] + db);
            }
        }
        best
    }

    fn basepoint(&self) -> TreePoint {
        self.vertex(0)
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> TreePoint {
        let edge = rng.random_range(0..self.edges.len());
        TreePoint { edge, offset: rng.random::<f64>() * self.edges[edge].2 }
    }
}

impl Cat0Space for MetricTree {
    fn geodesic(&self, p: &TreePoint, q: &TreePoint, t: f64) -> TreePoint {
        let total = self.distance(p, q);
        let mut s = t.clamp(0.0, 1.0) * total;
        if p.edge == q.edge {
            let dir = (q.offset - p.offset).signum();
            return TreePoint { edge: p.edge, offset: p.offset + dir * s };
        }
        let (mut a, mut da, mut b, mut db) = (0, 0.0, 0, 0.0);
        let mut best = f64::INFINITY;
        for (u, du) in self.ends(p) {
            for (v, dv) in self.ends(q) {
                let d = du + self.vertex_dist[u][v] + dv;
                if d < best {
                    (a, da, b, db, best) = (u, du, v, dv, d);
                }
            }
        }
        if s <= da {
            let (start, _, _) = self.edges[p.edge];
            let dir = if start == a { -1.0 } else { 1.0 };
            return TreePoint { edge: p.edge, offset: p.offset + dir * s };
        }
        s -= da;
        let mut v = a;
        while v != b {
            let next = self.next_hop[v][b];
            let len = self.vertex_dist[v][next];
            if s <= len {
                return self.point_towards(v, next, s);
            }
            s -= len;
            v = next;
        }
        let (start, _, len) = self.edges[q.edge];
        let from_b = s.min(db);
        TreePoint { edge: q.edge, offset: if start == b { from_b } else { len - from_b } }
    }
}

/// `eps_i` for the tracking construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// `f(2 eps_i / (A + eps_i)) = 2^{-i}`, solved by bisection.
    Auto,
    /// Decreasing positive values below the drift.
    Explicit(Vec<f64>),
}

/// `eps` in `(0, A)` with `f(2 eps / (A + eps)) = target`.
fn schedule_epsilon(drift: f64, target: f64) -> f64 {
    let g = |e: f64| defect(2.0 * e / (drift + e)) - target;
    let (mut lo, mut hi) = (0.0, drift);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// One level `i` of the record-holder construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingLevel {
    pub epsilon: f64,
    /// First index after which `(A - eps) n <= a_n <= (A + eps) n` holds up to the horizon.
    pub settle: usize,
    /// Record time `N_i`.
    pub record: usize,
    /// `a_{N_i}`.
    pub length: f64,
}

/// `d(x_{N_{i-1}}, gamma_i(a_{N_{i-1}}))` against its bound `f(2 eps_i / (A + eps_i)) a_{N_{i-1}}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDeviation {
    pub level: usize,
    pub radius: f64,
    pub deviation: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport<P> {
    pub drift: f64,
    /// Whether `a_n` passed the subadditivity audit (otherwise the drift is `a_N / N`).
    pub subadditive: bool,
    pub fekete: Option<FeketeReport>,
    pub levels: Vec<TrackingLevel>,
    pub deviations: Vec<LevelDeviation>,
    /// Set when the deepest level stopped because no record time fit the horizon.
    pub horizon_truncated: bool,
    /// `(x_0, x_{N_last})`; `None` for sublinear orbits.
    pub ray: Option<(P, P)>,
    /// `(k, d(x_k, gamma(A k)) / k)` at dyadic `k` where the ray is available.
    pub tracking_errors: Vec<(usize, f64)>,
}

impl<P: Clone> TrackingReport<P> {
    /// `gamma(r)`, the final ray at distance `r` from `x_0`.
    pub fn ray_at<S: Cat0Space<Point = P>>(&self, space: &S, r: f64) -> Option<P> {
        let (x0, end) = self.ray.as_ref()?;
        let len = space.distance(x0, end);
        space.extend(x0, end, r / len)
    }

    pub fn tracking_error_at(&self, k: usize) -> Option<f64> {
        self.tracking_errors.iter().find(|t| t.0 == k).map(|t| t.1)
    }
}

fn settle_index(a: &[f64], drift: f64, eps: f64) -> usize {
    let bad = (1..=a.len()).rev().find(|&n| {
        let v = a[n - 1];
        let nf = n as f64;
        v < (drift - eps) * nf || v > (drift + eps) * nf
    });
    bad.map_or(1, |n| n + 1)
}

/// Karlsson-Margulis tracking ray for the orbit `x_0, ..., x_N`.
pub fn km_tracking_ray<S: Cat0Space>(space: &S, orbit: &[S::Point], schedule: &Schedule) -> Result<TrackingReport<S::Point>> {
    if orbit.len() <= MIN_ORBIT {
        return Err(Error::Horizon(format!("tracking needs N >= {MIN_ORBIT}, got {}", orbit.len().saturating_sub(1))));
    }
    let n = orbit.len() - 1;
    let x0 = &orbit[0];
    let a: Vec<f64> = orbit[1..].iter().map(|x| space.distance(x0, x)).collect();
    let (drift, subadditive, fekete) = match SubadditiveSequence::new(a.clone()) {
        Ok(seq) => {
            let rep = fekete_limit(&seq);
            (rep.infimum.max(0.0), true, Some(rep))
        }
        Err(_) => (a[n - 1] / n as f64, false, None),
    };
    let dyadic = dyadic_indices(n);
    if drift <= ZERO_DRIFT {
        let tracking_errors = dyadic.iter().map(|&k| (k, a[k - 1] / k as f64)).collect();
        return Ok(TrackingReport {
            drift,
            subadditive,
            fekete,
            levels: Vec::new(),
            deviations: Vec::new(),
            horizon_truncated: false,
            ray: None,
            tracking_errors,
        });
    }
    let epsilons: Vec<f64> = match schedule {
        Schedule::Auto => (1..=MAX_LEVELS + 1).map(|i| schedule_epsilon(drift, 0.5f64.powi(i as i32))).collect(),
        Schedule::Explicit(v) => {
            if v.is_empty() || v.iter().any(|&e| !(e > 0.0 && e < drift)) || v.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Domain(format!("schedule must be decreasing values in (0, {drift})")));
            }
            v.clone()
        }
    };
    let settles: Vec<usize> = epsilons.iter().map(|&e| settle_index(&a, drift, e)).collect();
    let mut levels: Vec<TrackingLevel> = Vec::new();
    let mut horizon_truncated = false;
    for i in 0..epsilons.len().min(MAX_LEVELS) {
        let eps = epsilons[i];
        let after = settles.get(i + 1).copied().unwrap_or(settles[i]).max(levels.last().map_or(0, |l| l.record));
        let slope = drift - eps;
        let mut best = 0.0f64;
        let mut record = None;
        for m in 1..=n {
            let b = a[m - 1] - slope * m as f64;
            if b >= best {
                best = b;
                if m > after {
                    record = Some(m);
                    break;
                }
            }
        }
        match record {
            Some(r) => levels.push(TrackingLevel { epsilon: eps, settle: settles[i], record: r, length: a[r - 1] }),
            None => {
                horizon_truncated = true;
                break;
            }
        }
    }
    if levels.is_empty() {
        return Err(Error::Horizon("no record time fits the horizon (largest usable level: 0)".into()));
    }
    let mut deviations = Vec::new();
    for i in 1..levels.len() {
        let (prev, cur) = (&levels[i - 1], &levels[i]);
        let radius = prev.length;
        let on_cur = space.geodesic(x0, &orbit[cur.record], radius / cur.length);
        deviations.push(LevelDeviation {
            level: i,
            radius,
            deviation: space.distance(&orbit[prev.record], &on_cur),
            bound: defect(2.0 * cur.epsilon / (drift + cur.epsilon)) * radius,
        });
    }
    let last = levels.last().unwrap();
    let end = orbit[last.record].clone();
    let tracking_errors = dyadic
        .iter()
        .filter_map(|&k| {
            let p = space.extend(x0, &end, drift * k as f64 / last.length)?;
            Some((k, space.distance(&orbit[k], &p) / k as f64))
        })
        .collect();
    Ok(TrackingReport {
        drift,
        subadditive,
        fekete,
        levels,
        deviations,
        horizon_truncated,
        ray: Some((x0.clone(), end)),
        tracking_errors,
    })
}

/// A finite probability space with a weight-preserving permutation `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteBase {
    weights: Vec<f64>,
    perm: Vec<usize>,
}

impl FiniteBase {
    pub fn new(weights: Vec<f64>, perm: Vec<usize>) -> Result<Self> {
        check_weights(&weights)?;
        let m = weights.len();
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Domain("base map is not a permutation".into()));
        }
        if let Some(i) = (0..m).find(|&i| (weights[perm[i]] - weights[i]).abs() > WEIGHT_TOL) {
            return Err(Error::Precondition(format!("base map moves weight {} to {}", weights[i], weights[perm[i]])));
        }
        Ok(Self { weights, perm })
    }

    /// `i -> i + 1 mod m` with uniform weights.
    pub fn cycle(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m], (0..m).map(|i| (i + 1) % m).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn map(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Domain("weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Domain(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Square-integrable sections of a bundle of CAT(0) spaces over a finite base.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectIntegral<S> {
    fibers: Vec<S>,
    weights: Vec<f64>,
}

impl<S: Cat0Space> DirectIntegral<S> {
    pub fn new(fibers: Vec<S>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        if fibers.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: weights.len(), got: fibers.len() });
        }
        Ok(Self { fibers, weights })
    }

    pub fn fibers(&self) -> &[S] {
        &self.fibers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_section(&self, s: &[S::Point]) -> Result<()> {
        if s.len() != self.fibers.len() {
            return Err(Error::DimensionMismatch { expected: self.fibers.len(), got: s.len() });
        }
        Ok(())
    }
}

/// `(sum_i mu_i d_i(sigma_i, tau_i)^2)^{1/2}`.
pub fn direct_integral_distance<S: Cat0Space>(di: &DirectIntegral<S>, sigma: &[S::Point], tau: &[S::Point]) -> Result<f64> {
    di.check_section(sigma)?;
    di.check_section(tau)?;
    let sq: f64 = di
        .fibers
        .iter()
        .zip(&di.weights)
        .zip(sigma.iter().zip(tau))
        .map(|((f, w), (s, t))| w * f.distance(s, t).powi(2))
        .sum();
    Ok(sq.sqrt())
}

impl<S: Cat0Space> MetricSpace for DirectIntegral<S> {
    type Point = Vec<S::Point>;

    /// Panics on sections with a missing fiber value.
    fn distance(&self, x: &Vec<S::Point>, y: &Vec<S::Point>) -> f64 {
        direct_integral_distance(self, x, y).expect("sections cover every base point")
    }

    fn basepoint(&self) -> Vec<S::Point> {
        self.fibers.iter().map(|f| f.basepoint()).collect()
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> Vec<S::Point> {
        self.fibers.iter().map(|f| f.sample_point(rng)).collect()
    }
}

impl<S: Cat0Space> Cat0Space for DirectIntegral<S> {
    fn geodesic(&self, x: &Vec<S::Point>, y: &Vec<S::Point>, t: f64) -> Vec<S::Point> {
        self.fibers.iter().zip(x.iter().zip(y)).map(|(f, (a, b))| f.geodesic(a, b, t)).collect()
    }

    fn extend(&self, x: &Vec<S::Point>, y: &Vec<S::Point>, t: f64) -> Option<Vec<S::Point>> {
        self.fibers.iter().zip(x.iter().zip(y)).map(|(f, (a, b))| f.extend(a, b, t)).collect()
    }
}

/// `(T* sigma)(w) = T_w^{-1}(sigma(T w))`, with `maps[i]` the fiber isometry at base point `i`.
pub fn induced_action_step<S>(
    di: &DirectIntegral<S>,
    base: &FiniteBase,
    maps: &[S::Isometry],
    sigma: &[S::Point],
) -> Result<Vec<S::Point>>
where
    S: Cat0Space + IsometryGroup,
{
    di.check_section(sigma)?;
    if base.len() != di.fibers.len() || maps.len() != di.fibers.len() {
        return Err(Error::DimensionMismatch { expected: di.fibers.len(), got: base.len().min(maps.len()) });
    }
    if di.weights.iter().zip(&base.weights).any(|(a, b)| (a - b).abs() > WEIGHT_TOL) {
        return Err(Error::Precondition("base weights differ from the direct integral's".into()));
    }
    Ok((0..base.len())
        .map(|i| {
            let f = &di.fibers[i];
            f.apply(&f.inverse(&maps[i]), &sigma[base.map(i)])
        })
        .collect())
}

/// Output of [`mean_kingman_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanKingmanReport {
    /// Fekete limit of `a_n = sum_w mu(w) f_n(w)`.
    pub limit: f64,
    pub fekete: FeketeReport,
    /// `(n, || f_n / n - A ||_{L^2})` at dyadic `n`.
    pub trace: Vec<(usize, f64)>,
}

/// Audits `f_n >= 0` and `f_{n+m}(w) <= f_n(w) + f_m(T^n w)` for all `n + m <= N`, then
/// reports the `L^2` convergence of `f_n / n`. `f(n, w)` is evaluated `N |base|` times.
pub fn mean_kingman_check<F>(base: &FiniteBase, f: F, n: usize) -> Result<MeanKingmanReport>
where
    F: Fn(usize, usize) -> f64,
{
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    let m = base.len();
    // table[k][w] = f_{k+1}(w); orbit[k][w] = T^k w
    let table: Vec<Vec<f64>> = (1..=n).map(|k| (0..m).map(|w| f(k, w)).collect()).collect();
    let mut orbit = vec![(0..m).collect::<Vec<usize>>()];
    for k in 1..n {
        orbit.push(orbit[k - 1].iter().map(|&w| base.map(w)).collect());
    }
    for (k, row) in table.iter().enumerate() {
        if let Some(w) = row.iter().position(|&v| v < -1e-12) {
            return Err(Error::Precondition(format!("f_{}({w}) = {} is negative", k + 1, row[w])));
        }
    }
    for total in 2..=n {
        for i in 1..total {
            let j = total - i;
            for w in 0..m {
                let (fij, fi, fj) = (table[total - 1][w], table[i - 1][w], table[j - 1][orbit[i][w]]);
                if fij > fi + fj + 1e-9 * (1.0 + fij.abs()) {
                    return Err(Error::Precondition(format!(
                        "subadditivity fails at n = {i}, m = {j}, w = {w}: {fij} > {fi} + {fj}"
                    )));
                }
            }
        }
    }
    let averages: Vec<f64> = table.iter().map(|row| row.iter().zip(&base.weights).map(|(v, w)| v * w).sum()).collect();
    // averages of a pointwise-audited family are subadditive by invariance of the weights
    let fekete = fekete_limit(&SubadditiveSequence::trusted(averages)?);
    let limit = fekete.infimum;
    let trace = dyadic_indices(n)
        .into_iter()
        .map(|k| {
            let sq: f64 = table[k - 1].iter().zip(&base.weights).map(|(v, w)| w * (v / k as f64 - limit).powi(2)).sum();
            (k, sq.sqrt())
        })
        .collect();
    Ok(MeanKingmanReport { limit, fekete, trace })
}

//! Base dynamical systems and the scalar ergodic theorems.
//!
//! Shift systems are realized two-sidedly: the symbol at index `k` of the
//! canonical word is a pure function of `(seed, anchor, k)`, so orbits can be
//! generated forward and backward without storing the word.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const STREAM_FORWARD: u64 = 0;
const STREAM_BACKWARD: u64 = 1;
const STREAM_DIGITS: u64 = 2;

/// The four built-in measure-preserving systems.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemKind {
    /// `x -> x + angle mod 1` with Lebesgue measure.
    Rotation { angle: f64 },
    /// `x -> 2x mod 1` with Lebesgue measure.
    Doubling,
    /// I.i.d. symbols with the given probabilities.
    Bernoulli { probabilities: Vec<f64> },
    /// Stationary Markov chain.
    Markov { transition: Vec<Vec<f64>>, stationary: Vec<f64> },
}

/// A point of the base space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State {
    /// A point of the circle `[0, 1)`.
    Point(f64),
    /// A point of `[0, 1)` as a 64-bit binary expansion; `index` counts applied steps.
    Dyadic { bits: u64, index: i64 },
    /// Position `index` in the canonical two-sided word through `anchor` at index 0.
    Shift { index: i64, symbol: usize, anchor: usize },
}

impl State {
    /// Coordinate in `[0, 1)` for interval systems.
    pub fn x(&self) -> Option<f64> {
        match *self {
            State::Point(x) => Some(x),
            State::Dyadic { bits, .. } => Some(bits_to_unit(bits)),
            State::Shift { .. } => None,
        }
    }

    pub fn symbol(&self) -> Option<usize> {
        match *self {
            State::Shift { symbol, .. } => Some(symbol),
            _ => None,
        }
    }

    /// The coordinate for interval systems, the symbol for shifts.
    pub fn value(&self) -> f64 {
        match *self {
            State::Shift { symbol, .. } => symbol as f64,
            _ => self.x().unwrap_or(f64::NAN),
        }
    }
}

fn bits_to_unit(bits: u64) -> f64 {
    // keep the result strictly below 1 after rounding
    let x = bits as f64 / 18_446_744_073_709_551_616.0;
    if x >= 1.0 {
        1.0 - f64::EPSILON / 2.0
    } else {
        x
    }
}

fn counter_uniform(seed: u64, stream: u64, index: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((index as u64 as u128) << 1);
    rng.random::<f64>()
}

fn counter_bit(seed: u64, index: i64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_DIGITS);
    rng.set_word_pos((index as u64 as u128) << 1);
    rng.random::<u64>() & 1
}

fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Domain(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Solves `pi P = pi`, `sum pi = 1`.
fn stationary_of(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| transition[j][i] - if i == j { 1.0 } else { 0.0 });
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("transition matrix has no unique stationary distribution".into()))?;
    Ok(pi.iter().map(|&x| x.max(0.0)).collect())
}

/// A seeded, measure-preserving base system.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSystem {
    kind: SystemKind,
    seed: u64,
}

impl ErgodicSystem {
    pub fn rotation(angle: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&angle) {
            return Err(Error::Domain(format!("rotation angle {angle} not in [0, 1)")));
        }
        Ok(Self { kind: SystemKind::Rotation { angle }, seed })
    }

    pub fn doubling(seed: u64) -> Self {
        Self { kind: SystemKind::Doubling, seed }
    }

    pub fn bernoulli(probabilities: Vec<f64>, seed: u64) -> Result<Self> {
        check_distribution(&probabilities, "bernoulli probabilities")?;
        Ok(Self { kind: SystemKind::Bernoulli { probabilities }, seed })
    }

    /// Markov shift; the stationary distribution is solved for when not given.
    pub fn markov(transition: Vec<Vec<f64>>, stationary: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        let k = transition.len();
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: row.len() });
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        let stationary = match stationary {
            Some(pi) => pi,
            None => stationary_of(&transition)?,
        };
        if stationary.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: stationary.len() });
        }
        check_distribution(&stationary, "stationary distribution")
            .map_err(|_| Error::Domain("stationary distribution does not sum to 1".into()))?;
        for j in 0..k {
            let pj: f64 = (0..k).map(|i| stationary[i] * transition[i][j]).sum();
            if (pj - stationary[j]).abs() > STATIONARY_TOL {
                return Err(Error::Domain(format!(
                    "stationary distribution fails pi P = pi at {j}: {pj} vs {}",
                    stationary[j]
                )));
            }
        }
        Ok(Self { kind: SystemKind::Markov { transition, stationary }, seed })
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same system, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { kind: self.kind.clone(), seed }
    }

    /// Number of symbols for shifts.
    pub fn alphabet_size(&self) -> Option<usize> {
        match &self.kind {
            SystemKind::Bernoulli { probabilities } => Some(probabilities.len()),
            SystemKind::Markov { transition, .. } => Some(transition.len()),
            _ => None,
        }
    }

    /// Whether `T` is invertible (so past orbits exist).
    pub fn is_invertible(&self) -> bool {
        !matches!(self.kind, SystemKind::Doubling)
    }

    /// State of an interval system at coordinate `x`.
    pub fn state_at(&self, x: f64) -> Result<State> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("initial point {x} not in [0, 1)")));
        }
        match self.kind {
            SystemKind::Rotation { .. } => Ok(State::Point(x)),
            SystemKind::Doubling => {
                let bits = (x * 18_446_744_073_709_551_616.0) as u64;
                Ok(State::Dyadic { bits, index: 0 })
            }
            _ => Err(Error::Domain("shift systems take a symbol, not a coordinate".into())),
        }
    }

    /// State of a shift whose word has `symbol` at index 0.
    pub fn state_with_symbol(&self, symbol: usize) -> Result<State> {
        match self.alphabet_size() {
            Some(k) if symbol < k => Ok(State::Shift { index: 0, symbol, anchor: symbol }),
            Some(k) => Err(Error::Domain(format!("symbol {symbol} outside alphabet of size {k}"))),
            None => Err(Error::Domain("interval systems take a coordinate, not a symbol".into())),
        }
    }

    /// A generic starting state determined by the seed.
    pub fn generic_state(&self) -> State {
        self.sample_states(1, self.seed ^ 0x9e37_79b9_7f4a_7c15)[0]
    }

    /// `count` states drawn from the invariant measure.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| match &self.kind {
                SystemKind::Rotation { .. } => State::Point(rng.random::<f64>()),
                SystemKind::Doubling => State::Dyadic { bits: rng.random::<u64>(), index: 0 },
                SystemKind::Bernoulli { probabilities } => {
                    let s = categorical(probabilities, rng.random());
                    State::Shift { index: 0, symbol: s, anchor: s }
                }
                SystemKind::Markov { stationary, .. } => {
                    let s = categorical(stationary, rng.random());
                    State::Shift { index: 0, symbol: s, anchor: s }
                }
            })
            .collect()
    }

    fn check_state(&self, s: &State) -> Result<()> {
        let ok = match (&self.kind, s) {
            (SystemKind::Rotation { .. }, State::Point(x)) => (0.0..1.0).contains(x),
            (SystemKind::Doubling, State::Dyadic { .. }) => true,
            (_, State::Shift { symbol, anchor, .. }) => {
                self.alphabet_size().is_some_and(|k| *symbol < k && *anchor < k)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("state {s:?} is not in the state space of {:?}", self.kind)))
        }
    }

    /// Symbol at `index` of the canonical word through `anchor`.
    fn shift_symbol(&self, anchor: usize, index: i64) -> usize {
        match &self.kind {
            SystemKind::Bernoulli { probabilities } => {
                if index == 0 {
                    anchor
                } else {
                    categorical(probabilities, counter_uniform(self.seed, STREAM_FORWARD, index))
                }
            }
            SystemKind::Markov { .. } => {
                let mut s = anchor;
                if index >= 0 {
                    for k in 1..=index {
                        s = self.markov_forward(s, k);
                    }
                } else {
                    for k in (index..0).rev() {
                        s = self.markov_backward(s, k);
                    }
                }
                s
            }
            _ => unreachable!("shift_symbol on an interval system"),
        }
    }

    fn markov_forward(&self, from: usize, to_index: i64) -> usize {
        let SystemKind::Markov { transition, .. } = &self.kind else { unreachable!() };
        categorical(&transition[from], counter_uniform(self.seed, STREAM_FORWARD, to_index))
    }

    /// Reversed chain `P~_ij = pi_j P_ji / pi_i`.
    fn markov_backward(&self, from: usize, to_index: i64) -> usize {
        let SystemKind::Markov { transition, stationary } = &self.kind else { unreachable!() };
        let row: Vec<f64> = (0..transition.len())
            .map(|j| if stationary[from] > 0.0 { stationary[j] * transition[j][from] / stationary[from] } else { 0.0 })
            .collect();
        categorical(&row, counter_uniform(self.seed, STREAM_BACKWARD, to_index))
    }

    /// Applies `T` once.
    pub fn step(&self, s: &State) -> State {
        match (*s, &self.kind) {
            (State::Point(x), SystemKind::Rotation { angle }) => {
                let y = x + angle;
                State::Point(if y >= 1.0 { y - 1.0 } else { y })
            }
            (State::Dyadic { bits, index }, _) => State::Dyadic {
                bits: (bits << 1) | counter_bit(self.seed, index),
                index: index + 1,
            },
            (State::Shift { index, symbol, anchor }, SystemKind::Markov { .. }) if index >= 0 => {
                State::Shift { index: index + 1, symbol: self.markov_forward(symbol, index + 1), anchor }
            }
            (State::Shift { index, anchor, .. }, _) => {
                State::Shift { index: index + 1, symbol: self.shift_symbol(anchor, index + 1), anchor }
            }
            (state, _) => state,
        }
    }

    /// Applies `T^{-1}`; refuses for non-invertible systems.
    pub fn step_back(&self, s: &State) -> Result<State> {
        match (*s, &self.kind) {
            (State::Point(x), SystemKind::Rotation { angle }) => {
                let y = x - angle;
                Ok(State::Point(if y < 0.0 { y + 1.0 } else { y }))
            }
            (State::Shift { index, symbol, anchor }, SystemKind::Markov { .. }) if index <= 0 => {
                Ok(State::Shift { index: index - 1, symbol: self.markov_backward(symbol, index - 1), anchor })
            }
            (State::Shift { index, anchor, .. }, _) => {
                Ok(State::Shift { index: index - 1, symbol: self.shift_symbol(anchor, index - 1), anchor })
            }
            _ => Err(Error::Precondition("the doubling map is not invertible; no past orbit exists".into())),
        }
    }

    /// `(w, Tw, ..., T^{N-1}w)`.
    pub fn orbit(&self, initial: &State, n: usize) -> Result<Vec<State>> {
        if n == 0 {
            return Err(Error::Domain("orbit length must be at least 1".into()));
        }
        self.check_state(initial)?;
        let mut out = Vec::with_capacity(n);
        let mut s = *initial;
        out.push(s);
        for _ in 1..n {
            s = self.step(&s);
            out.push(s);
        }
        Ok(out)
    }

    /// `(w, T^{-1}w, ..., T^{-(N-1)}w)`.
    pub fn past_orbit(&self, initial: &State, n: usize) -> Result<Vec<State>> {
        if n == 0 {
            return Err(Error::Domain("orbit length must be at least 1".into()));
        }
        self.check_state(initial)?;
        let mut out = Vec::with_capacity(n);
        let mut s = *initial;
        out.push(s);
        for _ in 1..n {
            s = self.step_back(&s)?;
            out.push(s);
        }
        Ok(out)
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Sample mean and `sd / sqrt(n)`; the standard error is 0 for a single sample.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }
}

/// Result of a Birkhoff average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirkhoffAverage {
    pub value: f64,
    /// Set when the average diverged to `-inf` (an observable value of `-inf`,
    /// or a zero factor in the multiplicative form).
    pub diverged_to_neg_inf: bool,
}

/// `(1/N) sum f(T^i w)`, or with `multiplicative` the geometric mean `exp((1/N) sum log f)`.
///
/// In the multiplicative form a negative value is a domain error while a zero
/// drives the average to `-inf` (reported through the flag, value `0`).
pub fn birkhoff_average<F>(
    system: &ErgodicSystem,
    f: F,
    initial: &State,
    n: usize,
    multiplicative: bool,
) -> Result<BirkhoffAverage>
where
    F: Fn(&State) -> f64,
{
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    system.check_state(initial)?;
    let mut s = *initial;
    // Neumaier summation keeps 10^6-term sums accurate
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut neg_inf = false;
    for i in 0..n {
        let mut v = f(&s);
        if multiplicative {
            if v < 0.0 || v.is_nan() {
                return Err(Error::Domain(format!("multiplicative average needs f > 0, got f = {v} at step {i}")));
            }
            v = v.ln();
        }
        if v == f64::NEG_INFINITY {
            neg_inf = true;
        } else if !neg_inf {
            let t = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        if i + 1 < n {
            s = system.step(&s);
        }
    }
    let mean = (sum + comp) / n as f64;
    Ok(match (neg_inf, multiplicative) {
        (true, true) => BirkhoffAverage { value: 0.0, diverged_to_neg_inf: true },
        (true, false) => BirkhoffAverage { value: f64::NEG_INFINITY, diverged_to_neg_inf: true },
        (false, true) => BirkhoffAverage { value: mean.exp(), diverged_to_neg_inf: false },
        (false, false) => BirkhoffAverage { value: mean, diverged_to_neg_inf: false },
    })
}

/// A finite sequence `a_1..a_N` that passed a subadditivity audit.
#[derive(Debug, Clone, PartialEq)]
pub struct SubadditiveSequence {
    values: Vec<f64>,
}

/// Slack for `a_{n+m} <= a_n + a_m`, relative to the magnitude of the terms.
fn subadditive_slack(a: f64, b: f64, c: f64) -> f64 {
    1e-9 * (1.0 + a.abs().max(b.abs()).max(c.abs()))
}

impl SubadditiveSequence {
    /// Audits every pair for `N <= 2048`, otherwise `8N` random pairs (fixed seed).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("subadditive sequence is empty".into()));
        }
        if let Some((n, m)) = Self::find_violation(&values) {
            return Err(Error::Precondition(format!(
                "subadditivity fails: a_{} = {} > a_{n} + a_{m} = {}",
                n + m,
                values[n + m - 1],
                values[n - 1] + values[m - 1]
            )));
        }
        Ok(Self { values })
    }

    /// Skips the audit; for sequences subadditive by construction.
    pub fn trusted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("subadditive sequence is empty".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// A pair `(n, m)` (1-based) with `a_{n+m} > a_n + a_m` beyond slack.
    pub fn find_violation(values: &[f64]) -> Option<(usize, usize)> {
        let len = values.len();
        let a = |k: usize| values[k - 1];
        let bad = |n: usize, m: usize| {
            let (x, y, z) = (a(n + m), a(n), a(m));
            x > y + z + subadditive_slack(x, y, z)
        };
        if len <= 2048 {
            for n in 1..len {
                for m in 1..=(len - n).min(n) {
                    if bad(n, m) {
                        return Some((n, m));
                    }
                }
            }
            None
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a0d1);
            (0..8 * len).find_map(|_| {
                let n = rng.random_range(1..len);
                let m = rng.random_range(1..=len - n);
                bad(n, m).then_some((n, m))
            })
        }
    }
}

/// Fekete estimate of `lim a_n / n = inf a_n / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeketeReport {
    /// `min_n a_n / n`.
    pub infimum: f64,
    /// Index attaining the minimum.
    pub argmin: usize,
    /// `a_N / N`.
    pub tail_slope: f64,
    /// `tail_slope - infimum`, a convergence diagnostic.
    pub gap: f64,
    /// Set when some `a_n / n < -1e9`.
    pub neg_infinite: bool,
}

pub fn fekete_limit(seq: &SubadditiveSequence) -> FeketeReport {
    let v = &seq.values;
    let (argmin, infimum) = v
        .iter()
        .enumerate()
        .map(|(i, &a)| (i + 1, a / (i + 1) as f64))
        .fold((1, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let n = v.len();
    let tail_slope = v[n - 1] / n as f64;
    FeketeReport {
        infimum,
        argmin,
        tail_slope,
        gap: tail_slope - infimum,
        neg_infinite: infimum < -1e9,
    }
}

/// Dyadic indices `1, 2, 4, ... <= n`, with `n` appended if not a power of two.
pub fn dyadic_indices(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1usize;
    while k <= n {
        out.push(k);
        k *= 2;
    }
    if out.last() != Some(&n) && n > 0 {
        out.push(n);
    }
    out
}

/// Kingman estimate `(1/N) f_N(w)` with its dyadic convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct KingmanReport {
    pub estimate: f64,
    /// `(n, f_n(w) / n)` at dyadic `n`.
    pub trace: Vec<(usize, f64)>,
}

/// Number of random `(i, j, w)` triples checked by [`kingman_estimate`].
///
/// Evaluating `f_n` typically costs `O(n)`, so the audit is a fixed-size sample
/// with sizes spread log-uniformly over `[1, N]`.
pub const KINGMAN_AUDIT_PAIRS: usize = 32;

/// Subadditive ergodic theorem estimate for the family `f(n, w) = f_n(w)`.
pub fn kingman_estimate<F>(system: &ErgodicSystem, f: F, initial: &State, n: usize) -> Result<KingmanReport>
where
    F: Fn(usize, &State) -> f64,
{
    if n == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    system.check_state(initial)?;
    if n >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(system.seed() ^ 0xa0d1_7000);
        let samples = system.sample_states(KINGMAN_AUDIT_PAIRS, system.seed() ^ 0xa0d1_7001);
        let ln = (n as f64).ln();
        for w in samples {
            let total = ((rng.random::<f64>() * ln).exp() as usize).clamp(2, n);
            let i = rng.random_range(1..total);
            let j = total - i;
            let mut wi = w;
            for _ in 0..i {
                wi = system.step(&wi);
            }
            let (fi, fj, fij) = (f(i, &w), f(j, &wi), f(i + j, &w));
            if fij > fi + fj + subadditive_slack(fi, fj, fij) {
                return Err(Error::Precondition(format!(
                    "subadditivity audit failed at i = {i}, j = {j}, w = {w:?}: f_(i+j) = {fij} > f_i + f_j(T^i w) = {}",
                    fi + fj
                )));
            }
        }
    }
    let trace: Vec<(usize, f64)> = dyadic_indices(n).into_iter().map(|k| (k, f(k, initial) / k as f64)).collect();
    Ok(KingmanReport { estimate: trace.last().map(|t| t.1).unwrap_or(f64::NAN), trace })
}

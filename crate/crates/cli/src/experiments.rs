//! One function per experiment kind; each returns the rows for a single seed.

use std::f64::consts::PI;

use met_core::cat0::{direct_integral_distance, induced_action_step, km_tracking_ray, mean_kingman_check, DirectIntegral, FiniteBase, Schedule};
use met_core::cocycle::{MatrixCocycle, StructureTag};
use met_core::dynsys::{dyadic_indices, ErgodicSystem, State};
use met_core::horofunctions::{
    dmetric_mz_check, karlsson_horofunction, ncet_drift, Euclidean, EuclideanMotion, IsometryCocycle, IsometryGroup, MetricSpace, SpdIsometry, SpdSpace,
};
use met_core::linalg::{gaussian_matrix, max_principal_angle, orthogonal_complement, orthonormalize, random_orthogonal, symplectic_form};
use met_core::oseledets::{default_gap_threshold, forward_filtration, lyapunov_spectrum, spectrum_of_product, splitting_map, BlockCocycle, SpectrumMethod};
use met_core::symspace::{busemann_limit_oracle, busemann_value, random_point, regularity_report, BusemannData, RegularityInput, SpdPoint};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CocycleKind, CocycleSpec, Experiment, ExperimentConfig, MethodSpec, Observable, OrbitKind, SystemSpec, TagSpec};
use crate::error::{invalid, numerical, CliError};
use crate::table::Row;

type Rows = Result<Vec<Row>, CliError>;

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Rows {
    match cfg.experiment {
        Experiment::Lyapunov => lyapunov(cfg, seed),
        Experiment::Filtration => filtration(cfg, seed),
        Experiment::Splitting => splitting(cfg, seed),
        Experiment::Regularity => regularity(cfg, seed),
        Experiment::Busemann => busemann(cfg, seed),
        Experiment::Drift => drift(cfg, seed),
        Experiment::Ncet => ncet(cfg, seed),
        Experiment::Tracking => tracking(cfg, seed),
        Experiment::DirectIntegral => direct_integral(cfg, seed),
        Experiment::MeanKingman => mean_kingman(cfg, seed),
        Experiment::MzCheck => mz_check(cfg, seed),
    }
}

fn build_system(cfg: &ExperimentConfig, seed: u64) -> Result<ErgodicSystem, CliError> {
    let spec = cfg.system.as_ref().ok_or_else(|| CliError::validation("missing [system] table"))?;
    let system = match spec {
        SystemSpec::Rotation { angle } => ErgodicSystem::rotation(*angle, seed),
        SystemSpec::Doubling => Ok(ErgodicSystem::doubling(seed)),
        SystemSpec::Bernoulli { probabilities } => ErgodicSystem::bernoulli(probabilities.clone(), seed),
        SystemSpec::Markov { transition, stationary } => ErgodicSystem::markov(transition.clone(), stationary.clone(), seed),
    };
    system.map_err(invalid("system"))
}

/// `[[I, S1], [0, I]] [[I, 0], [S2, I]]` with gaussian symmetric blocks.
fn random_symplectic(rng: &mut ChaCha8Rng, genus: usize) -> DMatrix<f64> {
    let sym = |rng: &mut ChaCha8Rng| {
        let a = gaussian_matrix(rng, genus, genus);
        (&a + a.transpose()) * 0.5
    };
    let d = 2 * genus;
    let mut upper = DMatrix::identity(d, d);
    upper.view_mut((0, genus), (genus, genus)).copy_from(&sym(rng));
    let mut lower = DMatrix::identity(d, d);
    lower.view_mut((genus, 0), (genus, genus)).copy_from(&sym(rng));
    upper * lower
}

fn build_cocycle(cfg: &ExperimentConfig, seed: u64) -> Result<(MatrixCocycle, SpectrumMethod), CliError> {
    let spec: &CocycleSpec = cfg.cocycle.as_ref().ok_or_else(|| CliError::validation("missing [cocycle] table"))?;
    let base = build_system(cfg, seed)?;
    let matrices = spec
        .matrices
        .iter()
        .enumerate()
        .map(|(i, m)| m.to_matrix(&format!("cocycle.matrices[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let c = match spec.kind {
        CocycleKind::Constant => {
            let [a] = matrices.as_slice() else {
                return Err(CliError::validation("cocycle.matrices: a constant cocycle takes exactly one matrix"));
            };
            MatrixCocycle::constant(base, a.clone())
        }
        CocycleKind::BySymbol => MatrixCocycle::by_symbol(base, matrices),
        CocycleKind::RandomSymplectic => {
            if !spec.matrices.is_empty() {
                return Err(CliError::validation("cocycle.matrices: random-symplectic draws its own matrices"));
            }
            let genus = spec.genus.filter(|&g| g > 0).ok_or_else(|| CliError::validation("cocycle.genus must be positive"))?;
            let symbols = base
                .alphabet_size()
                .ok_or_else(|| CliError::validation("cocycle: random-symplectic needs a shift base"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.family_seed.unwrap_or(0));
            let mats = (0..symbols).map(|_| random_symplectic(&mut rng, genus)).collect();
            MatrixCocycle::by_symbol(base, mats)
        }
    }
    .map_err(invalid("cocycle"))?;
    let tag = match spec.tag {
        TagSpec::None => StructureTag::None,
        TagSpec::Symplectic if c.dim() % 2 == 0 => StructureTag::Symplectic(c.dim() / 2),
        TagSpec::Symplectic => return Err(CliError::validation("cocycle.tag: symplectic needs an even dimension")),
        TagSpec::Orthogonal => {
            let (p, q) = spec.signature.ok_or_else(|| CliError::validation("cocycle.signature is required for tag orthogonal"))?;
            StructureTag::Orthogonal(p, q)
        }
        TagSpec::DeterminantOne => StructureTag::DeterminantOne,
    };
    let c = if tag == StructureTag::None { c } else { c.with_tag(tag).map_err(invalid("cocycle.tag"))? };
    let method = match spec.method {
        MethodSpec::Qr => SpectrumMethod::Qr,
        MethodSpec::Svd => SpectrumMethod::SvdWedge,
    };
    Ok((c, method))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn indexed<'a>(seed: u64, quantity: &str, values: &'a [f64]) -> impl Iterator<Item = Row> + 'a {
    let quantity = quantity.to_string();
    values.iter().enumerate().map(move |(i, v)| Row::indexed(seed, &quantity, i, *v))
}

fn trace_rows(seed: u64, quantity: &str, trace: &[(usize, f64)]) -> Vec<Row> {
    trace.iter().map(|(n, v)| Row::indexed(seed, quantity, *n, *v)).collect()
}

fn pairing_error(exponents: &[f64]) -> f64 {
    let d = exponents.len();
    (0..d).map(|i| (exponents[i] + exponents[d - 1 - i]).abs()).fold(0.0, f64::max)
}

fn has_paired_spectrum(c: &MatrixCocycle) -> bool {
    matches!(c.tag(), StructureTag::Symplectic(_) | StructureTag::Orthogonal(_, _))
}

fn lyapunov(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let (c, method) = build_cocycle(cfg, seed)?;
    let n = cfg.horizon();
    let w = c.base().generic_state();
    let spectrum = |c: &MatrixCocycle| lyapunov_spectrum(c, &w, n, method).map(|s| s.exponents).map_err(numerical("oseledets"));
    let s = lyapunov_spectrum(&c, &w, n, method).map_err(numerical("oseledets"))?;
    let base = s.exponents.clone();
    let mut rows: Vec<Row> = indexed(seed, "exponent", &base).collect();
    for (i, (value, mult)) in s.groups.iter().enumerate() {
        rows.push(Row::indexed(seed, "group-exponent", i, *value));
        rows.push(Row::indexed(seed, "group-multiplicity", i, *mult as f64));
    }
    if has_paired_spectrum(&c) {
        rows.push(Row::scalar(seed, "pairing-error", pairing_error(&base)));
    }
    if cfg.params.trace.unwrap_or(true) {
        let ns = dyadic_indices(n);
        let products = c.products_at(&w, &ns).map_err(numerical("cocycle"))?;
        for (k, p) in ns.iter().zip(&products) {
            let top = spectrum_of_product(p, method, default_gap_threshold(*k)).top();
            rows.push(Row::indexed(seed, "top-exponent-trace", *k, top));
        }
    }
    for name in &cfg.params.functorial {
        match name.as_str() {
            "dual" => {
                let d = spectrum(&c.dual())?;
                let expected: Vec<f64> = base.iter().rev().map(|x| -x).collect();
                rows.extend(indexed(seed, "dual-exponent", &d));
                rows.push(Row::scalar(seed, "dual-error", max_abs_diff(&d, &expected)));
            }
            "tensor" => {
                let t = spectrum(&c.tensor(&c).map_err(numerical("cocycle"))?)?;
                let mut sums: Vec<f64> = base.iter().flat_map(|a| base.iter().map(move |b| a + b)).collect();
                sums.sort_by(|a, b| b.total_cmp(a));
                rows.extend(indexed(seed, "tensor-exponent", &t));
                rows.push(Row::scalar(seed, "tensor-error", max_abs_diff(&t, &sums)));
            }
            "determinant" => {
                let det = spectrum(&c.determinant_line())?[0];
                rows.push(Row::scalar(seed, "determinant-exponent", det));
                rows.push(Row::scalar(seed, "determinant-error", (det - base.iter().sum::<f64>()).abs()));
            }
            other => {
                let k = other
                    .strip_prefix("wedge-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1 && k <= c.dim())
                    .ok_or_else(|| CliError::validation(format!("params.functorial: unknown construction {other:?}")))?;
                let wg = spectrum(&c.wedge(k).map_err(numerical("cocycle"))?)?;
                let top: f64 = base[..k].iter().sum();
                rows.extend(indexed(seed, &format!("wedge-{k}-exponent"), &wg));
                rows.push(Row::scalar(seed, &format!("wedge-{k}-error"), (wg[0] - top).abs()));
            }
        }
    }
    Ok(rows)
}

fn filtration(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let (c, method) = build_cocycle(cfg, seed)?;
    let n = cfg.horizon();
    let w = c.base().generic_state();
    let s = lyapunov_spectrum(&c, &w, n, method).map_err(numerical("oseledets"))?;
    let filt = forward_filtration(&c, &w, n, &s).map_err(numerical("oseledets"))?;
    let mut rows: Vec<Row> = indexed(seed, "exponent", &s.exponents).collect();
    rows.extend(indexed(seed, "level-exponent", &filt.exponents));
    let dims: Vec<f64> = filt.frames.iter().map(|f| f.ncols() as f64).collect();
    rows.extend(indexed(seed, "level-dim", &dims));
    if has_paired_spectrum(&c) {
        rows.push(Row::scalar(seed, "pairing-error", pairing_error(&s.exponents)));
    }
    if let StructureTag::Symplectic(genus) = c.tag() {
        // The omega-orthogonal of each level must be the level of complementary dimension.
        let j = symplectic_form(genus);
        let mut angle = 0.0f64;
        for frame in filt.frames.iter().filter(|f| f.ncols() < c.dim()) {
            let omega_perp = orthogonal_complement(&orthonormalize(&(&j * frame)));
            match filt.frames.iter().find(|f| f.ncols() == c.dim() - frame.ncols()) {
                Some(partner) => angle = angle.max(max_principal_angle(&omega_perp, partner)),
                None => angle = f64::INFINITY,
            }
        }
        rows.push(Row::scalar(seed, "symplectic-angle", angle));
    }
    Ok(rows)
}

fn splitting(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let (c, _) = build_cocycle(cfg, seed)?;
    let w = c.base().generic_state();
    let b = BlockCocycle::new(c, cfg.params.block_dim.unwrap_or(1)).map_err(invalid("params.block-dim"))?;
    let m = splitting_map(&b, &w, cfg.params.max_terms.unwrap_or(50), cfg.horizon()).map_err(numerical("oseledets"))?;
    let tau: Vec<f64> = m.tau.transpose().iter().copied().collect();
    let mut rows: Vec<Row> = indexed(seed, "tau", &tau).collect();
    rows.push(Row::scalar(seed, "residual", m.residual));
    rows.push(Row::scalar(seed, "converged", if m.converged { 1.0 } else { 0.0 }));
    rows.push(Row::scalar(seed, "terms-used", m.terms_used as f64));
    rows.extend(trace_rows(seed, "temperedness", &m.temperedness));
    Ok(rows)
}

fn regularity(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let (c, _) = build_cocycle(cfg, seed)?;
    let n = cfg.horizon();
    let probe = cfg.params.probe.unwrap_or(n / 2);
    if probe > n {
        return Err(CliError::validation(format!("params.probe = {probe} exceeds the horizon {n}")));
    }
    let w = c.base().generic_state();
    let r = regularity_report(RegularityInput::Cocycle { cocycle: &c, start: w, horizon: n }, &[probe]).map_err(numerical("symspace"))?;
    let mut rows = vec![Row::scalar(seed, "theta", r.theta)];
    rows.extend(trace_rows(seed, "step-ratio", &r.step_ratios));
    rows.extend(trace_rows(seed, "cartan-oscillation", &r.cartan_oscillation));
    rows.extend(trace_rows(seed, "tracking-error", &r.tracking_errors));
    if r.theta > 0.0 {
        let scaled: Vec<(usize, f64)> = r.tracking_errors.iter().map(|(k, e)| (*k, e / r.theta)).collect();
        rows.extend(trace_rows(seed, "tracking-over-theta", &scaled));
    }
    Ok(rows)
}

fn busemann(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let p = &cfg.params;
    let b = BusemannData::from_block_values(&p.partition, &p.block_values).map_err(invalid("params.partition"))?;
    let dim = b.dim();
    let lead = b.partition()[0];
    let t_max = p.t_max.unwrap_or(1e3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let (mut gap, mut invariance) = (0.0f64, 0.0f64);
    for i in 0..p.points.unwrap_or(50) {
        let x = random_point(&mut rng, dim, p.point_scale.unwrap_or(1.0));
        let closed = busemann_value(&b, &x).map_err(numerical("symspace"))?;
        let oracle = busemann_limit_oracle(&b, &x, t_max).map_err(numerical("symspace"))?;
        // unipotent element of the group fixing the flag of `b`
        let mut unipotent = DMatrix::identity(dim, dim);
        for r in 0..lead {
            for c in lead..dim {
                unipotent[(r, c)] = rng.random_range(-2.0..2.0);
            }
        }
        let moved = busemann_value(&b, &x.congruence(&unipotent)).map_err(numerical("symspace"))?;
        let point_gap = (closed - oracle.extrapolated).abs();
        gap = gap.max(point_gap);
        invariance = invariance.max((moved - closed).abs());
        rows.push(Row::indexed(seed, "closed-form", i, closed));
        rows.push(Row::indexed(seed, "oracle", i, oracle.extrapolated));
        rows.push(Row::indexed(seed, "oracle-increment", i, oracle.increment));
        rows.push(Row::indexed(seed, "oracle-gap", i, point_gap));
    }
    rows.push(Row::scalar(seed, "max-oracle-gap", gap));
    rows.push(Row::scalar(seed, "max-invariance-gap", invariance));
    Ok(rows)
}

fn isometry_param(cfg: &ExperimentConfig) -> Result<DMatrix<f64>, CliError> {
    let spec = cfg.params.isometry.as_ref().ok_or_else(|| CliError::validation("params.isometry is required"))?;
    let g = spec.to_matrix("params.isometry")?;
    SpdIsometry::new(g.clone()).map_err(invalid("params.isometry"))?;
    Ok(g)
}

fn drift(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let g = isometry_param(cfg)?;
    let n = cfg.horizon();
    let space = SpdSpace::new(g.nrows()).map_err(invalid("params.isometry"))?;
    let (_, diag) = karlsson_horofunction(&space, |p: &SpdPoint| p.congruence(&g), n, &[]).map_err(numerical("horofunctions"))?;
    let l = diag.drift.drift;
    let steps = cfg.params.check_steps.unwrap_or(n / 2);
    let mut rows = vec![
        Row::scalar(seed, "drift", l),
        Row::scalar(seed, "fekete-gap", diag.drift.fekete.gap),
        Row::scalar(seed, "record-count", diag.record_times.len() as f64),
    ];
    let mut worst = f64::NEG_INFINITY;
    for &(k, h) in diag.values.iter().filter(|v| v.0 <= steps) {
        rows.push(Row::indexed(seed, "horofunction", k, h));
        if l > 0.0 {
            let excess = (h + l * k as f64) / (l * k as f64);
            worst = worst.max(excess);
            rows.push(Row::indexed(seed, "relative-excess", k, excess));
        }
    }
    if l > 0.0 {
        rows.push(Row::scalar(seed, "max-relative-excess", worst));
    }
    Ok(rows)
}

fn ncet(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let (c, method) = build_cocycle(cfg, seed)?;
    let n = cfg.horizon();
    let w = c.base().generic_state();
    let s = lyapunov_spectrum(&c, &w, n, method).map_err(numerical("oseledets"))?;
    let space = SpdSpace::new(c.dim()).map_err(invalid("cocycle"))?;
    let generator = c.clone();
    let ic = IsometryCocycle::new(space, c.base().clone(), move |st: &State| {
        SpdIsometry::new(generator.matrix_at(st)).expect("cocycle matrices are checked invertible")
    })
    .map_err(numerical("horofunctions"))?;
    let report = ncet_drift(&ic, &w, n).map_err(numerical("horofunctions"))?;
    let drift = report.drift.estimate;
    let twice_norm = 2.0 * s.exponents.iter().map(|x| x * x).sum::<f64>().sqrt();
    let twice_top = 2.0 * s.top();
    let mut rows: Vec<Row> = indexed(seed, "exponent", &s.exponents).collect();
    rows.extend([
        Row::scalar(seed, "drift", drift),
        Row::scalar(seed, "twice-norm", twice_norm),
        Row::scalar(seed, "twice-top", twice_top),
        Row::scalar(seed, "norm-gap", (drift - twice_norm).abs()),
        Row::scalar(seed, "top-gap", (drift - twice_top).abs()),
        Row::scalar(seed, "integrability", report.integrability.mean).with_stderr(report.integrability.stderr),
    ]);
    if cfg.params.trace.unwrap_or(true) {
        rows.extend(trace_rows(seed, "drift-trace", &report.drift.trace));
    }
    Ok(rows)
}

fn tracking(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let p = &cfg.params;
    let n = cfg.horizon();
    let kind = p.orbit.ok_or_else(|| CliError::validation("params.orbit is required"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if kind == OrbitKind::Translation {
        if p.direction.is_empty() || p.direction.iter().all(|x| *x == 0.0) {
            return Err(CliError::validation("params.direction must be a non-zero vector"));
        }
        let v = DVector::from_vec(p.direction.clone());
        let plane = Euclidean::new(v.len()).map_err(invalid("params.direction"))?;
        let orbit: Vec<DVector<f64>> = (0..=n).map(|k| &v * k as f64).collect();
        let r = km_tracking_ray(&plane, &orbit, &Schedule::Auto).map_err(numerical("cat0"))?;
        let mut rows = tracking_rows(seed, r.drift, r.subadditive, r.levels.len(), &r.tracking_errors);
        if let Some((x0, end)) = &r.ray {
            let err = ((end - x0).normalize() - v.normalize()).norm();
            rows.push(Row::scalar(seed, "direction-error", err));
        }
        return Ok(rows);
    }
    if p.slopes.is_empty() {
        return Err(CliError::validation("params.slopes must be non-empty"));
    }
    let d = p.slopes.len();
    let space = SpdSpace::new(d).map_err(invalid("params.slopes"))?;
    let slope = DVector::from_vec(p.slopes.clone());
    let orbit: Vec<SpdPoint> = match kind {
        OrbitKind::DiagonalRay => (0..=n).map(|k| SpdPoint::diagonal_exp((&slope * k as f64).as_slice())).collect(),
        OrbitKind::RotatedRay => {
            let frame = random_orthogonal(&mut rng, d);
            (0..=n).map(|k| SpdPoint::from_log_eigen(frame.clone(), &slope * k as f64)).collect()
        }
        OrbitKind::NoisyDiagonal => {
            let noise = p.noise.ok_or_else(|| CliError::validation("params.noise is required for noisy-diagonal"))?;
            (0..=n)
                .map(|k| {
                    let e: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mean = e.iter().sum::<f64>() / d as f64;
                    let e = DVector::from_iterator(d, e.iter().map(|x| x - mean));
                    let scale = if k == 0 { 0.0 } else { noise / e.norm().max(1.0) };
                    SpdPoint::diagonal_exp((&slope * k as f64 + e * scale).as_slice())
                })
                .collect()
        }
        OrbitKind::Translation => unreachable!("handled above"),
    };
    let r = km_tracking_ray(&space, &orbit, &Schedule::Auto).map_err(numerical("cat0"))?;
    Ok(tracking_rows(seed, r.drift, r.subadditive, r.levels.len(), &r.tracking_errors))
}

fn tracking_rows(seed: u64, drift: f64, subadditive: bool, levels: usize, errors: &[(usize, f64)]) -> Vec<Row> {
    let mut rows = vec![
        Row::scalar(seed, "drift", drift),
        Row::scalar(seed, "subadditive", if subadditive { 1.0 } else { 0.0 }),
        Row::scalar(seed, "levels", levels as f64),
    ];
    rows.extend(trace_rows(seed, "tracking-error", errors));
    rows.push(Row::scalar(seed, "max-tracking-error", errors.iter().map(|t| t.1).fold(0.0, f64::max)));
    rows
}

fn direct_integral(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let p = &cfg.params;
    let mut rows = Vec::new();
    if !p.sigma.is_empty() || !p.tau.is_empty() {
        let m = p.weights.len();
        if p.sigma.len() != m || p.tau.len() != m {
            return Err(CliError::validation(format!("params.sigma and params.tau need one point per weight ({m})")));
        }
        let dim = p.sigma[0].len();
        if p.sigma.iter().chain(&p.tau).any(|x| x.len() != dim) {
            return Err(CliError::validation("params.sigma and params.tau points must share one dimension"));
        }
        let fiber = Euclidean::new(dim).map_err(invalid("params.sigma"))?;
        let di = DirectIntegral::new(vec![fiber; m], p.weights.clone()).map_err(invalid("params.weights"))?;
        let section = |pts: &[Vec<f64>]| pts.iter().map(|x| DVector::from_vec(x.clone())).collect::<Vec<_>>();
        let d = direct_integral_distance(&di, &section(&p.sigma), &section(&p.tau)).map_err(numerical("cat0"))?;
        rows.push(Row::scalar(seed, "distance", d));
    }
    if p.isometry.is_some() {
        rows.extend(single_fiber_reduction(cfg, seed)?);
    }
    if rows.is_empty() {
        return Err(CliError::validation("direct-integral needs params.sigma/tau or params.isometry"));
    }
    Ok(rows)
}

/// Tracking over a one-point base must agree with tracking in the fiber itself.
fn single_fiber_reduction(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let g = isometry_param(cfg)?;
    let n = cfg.horizon();
    let spd = SpdSpace::new(g.nrows()).map_err(invalid("params.isometry"))?;
    let single = DirectIntegral::new(vec![spd], vec![1.0]).map_err(invalid("params.isometry"))?;
    let base = FiniteBase::new(vec![1.0], vec![0]).map_err(invalid("params.isometry"))?;
    let inverse = g.clone().try_inverse().ok_or_else(|| CliError::validation("params.isometry is singular"))?;
    let maps = vec![SpdIsometry::new(inverse).map_err(invalid("params.isometry"))?];
    let mut sections = vec![single.basepoint()];
    let mut fiber = vec![SpdPoint::identity(g.nrows())];
    for k in 0..n {
        sections.push(induced_action_step(&single, &base, &maps, &sections[k]).map_err(numerical("cat0"))?);
        fiber.push(fiber[k].congruence(&g));
    }
    let r_di = km_tracking_ray(&single, &sections, &Schedule::Auto).map_err(numerical("cat0"))?;
    let r_fiber = km_tracking_ray(&spd, &fiber, &Schedule::Auto).map_err(numerical("cat0"))?;
    let gap = r_di
        .tracking_errors
        .iter()
        .zip(&r_fiber.tracking_errors)
        .map(|(a, b)| if a.0 == b.0 { (a.1 - b.1).abs() } else { f64::INFINITY })
        .fold((r_di.drift - r_fiber.drift).abs(), f64::max);
    let gap = if r_di.tracking_errors.len() == r_fiber.tracking_errors.len() { gap } else { f64::INFINITY };
    Ok(vec![
        Row::scalar(seed, "integral-drift", r_di.drift),
        Row::scalar(seed, "fiber-drift", r_fiber.drift),
        Row::scalar(seed, "reduction-gap", gap),
    ])
}

fn mean_kingman(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let p = &cfg.params;
    let m = p.angles.len();
    if m == 0 || p.shifts.len() != m || p.shifts.iter().any(|s| s.len() != 2) {
        return Err(CliError::validation("params.angles and params.shifts must give one rotation angle and one planar shift per base point"));
    }
    let n = cfg.horizon();
    let plane = Euclidean::new(2).map_err(invalid("params.shifts"))?;
    let maps = p
        .angles
        .iter()
        .zip(&p.shifts)
        .map(|(&t, s)| {
            let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            EuclideanMotion::new(rot, DVector::from_vec(s.clone()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid("params.angles"))?;
    let x0 = plane.basepoint();
    let period = (0..m).rev().fold(plane.identity(), |acc, i| plane.compose(&maps[i], &acc));
    let per_step = plane.distance(&x0, &plane.apply(&period, &x0)) / m as f64;
    // table[w][k - 1] = d(x0, g_w g_{w+1} ... g_{w+k-1} x0)
    let table: Vec<Vec<f64>> = (0..m)
        .map(|w| {
            let mut prod = plane.identity();
            (1..=n)
                .map(|k| {
                    prod = plane.compose(&prod, &maps[(w + k - 1) % m]);
                    plane.distance(&x0, &plane.apply(&prod, &x0))
                })
                .collect()
        })
        .collect();
    let cycle = FiniteBase::cycle(m).map_err(invalid("params.angles"))?;
    let rep = mean_kingman_check(&cycle, |k, w| table[w][k - 1], n).map_err(numerical("cat0"))?;
    let mut rows = vec![Row::scalar(seed, "limit", rep.limit), Row::scalar(seed, "period-translation-per-step", per_step)];
    rows.extend(trace_rows(seed, "l2-error", &rep.trace));
    if rep.limit > 0.0 {
        let ratio: Vec<(usize, f64)> = rep.trace.iter().map(|(k, e)| (*k, e / rep.limit)).collect();
        rows.extend(trace_rows(seed, "l2-error-over-limit", &ratio));
    }
    Ok(rows)
}

fn mz_check(cfg: &ExperimentConfig, seed: u64) -> Rows {
    let system = build_system(cfg, seed)?;
    let p = cfg.params.exponent.ok_or_else(|| CliError::validation("params.exponent is required"))?;
    let observable = cfg.params.observable.unwrap_or(Observable::Cauchy);
    let f = move |s: &State| match observable {
        Observable::Cauchy => (PI * (s.value() - 0.5)).tan().clamp(-1e12, 1e12),
        Observable::Centered => s.value() - 0.5,
    };
    let trace = dmetric_mz_check(p, &system, f, &system.generic_state(), cfg.horizon()).map_err(numerical("horofunctions"))?;
    let mut rows = vec![
        Row::scalar(seed, "terminal", trace.terminal()),
        Row::scalar(seed, "moment", trace.moment.mean).with_stderr(trace.moment.stderr),
    ];
    rows.extend(trace_rows(seed, "normalized-sum", &trace.trace));
    Ok(rows)
}

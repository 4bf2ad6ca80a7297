use met_core::cat0::*;
use met_core::horofunctions::*;
use met_core::linalg::{compound, gaussian_matrix, random_orthogonal, random_unit_vector, singular_values};
use met_core::symspace::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32, seed: u64) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tree() -> MetricTree {
    MetricTree::new(7, vec![(0, 1, 1.0), (1, 2, 0.5), (1, 3, 2.0), (0, 4, 1.5), (4, 5, 0.25), (4, 6, 3.0)]).unwrap()
}

fn plane() -> Euclidean {
    Euclidean::new(2).unwrap()
}

/// `d(x, g_t)^2 <= (1-t) d(x, y)^2 + t d(x, z)^2 - t(1-t) d(y, z)^2` for `g_t` on `[y, z]`.
fn comparison_gap<S: Cat0Space>(space: &S, x: &S::Point, y: &S::Point, z: &S::Point, t: f64) -> f64 {
    let m = space.geodesic(y, z, t);
    let lhs = space.distance(x, &m).powi(2);
    let rhs = (1.0 - t) * space.distance(x, y).powi(2) + t * space.distance(x, z).powi(2) - t * (1.0 - t) * space.distance(y, z).powi(2);
    (lhs - rhs) / (1.0 + rhs.abs())
}

/// `t -> d(c1(t), c2(t))` at `t = a, b, (a+b)/2` for two geodesic segments.
fn convexity_gap<S: Cat0Space>(space: &S, seg1: (&S::Point, &S::Point), seg2: (&S::Point, &S::Point), a: f64, b: f64) -> f64 {
    let f = |t: f64| space.distance(&space.geodesic(seg1.0, seg1.1, t), &space.geodesic(seg2.0, seg2.1, t));
    f(0.5 * (a + b)) - 0.5 * (f(a) + f(b))
}

proptest! {
    #![proptest_config(config(1000, 21))]

    #[test]
    fn spd_distance_from_identity_is_log_norm(seed in any::<u64>()) {
        let p = random_point(&mut rng(seed), 3, 1.0);
        let d = SpdSpace::new(3).unwrap().distance(&SpdPoint::identity(3), &p);
        prop_assert!((d - p.log_eigenvalues().norm()).abs() < 1e-10 * (1.0 + d));
    }

    #[test]
    fn cartan_projection_symmetries(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = gaussian_matrix(&mut r, 3, 3);
        let base = cartan_projection(&g).unwrap();
        let inv = cartan_projection(&g.clone().try_inverse().unwrap()).unwrap();
        for (a, b) in inv.entries().iter().zip(base.entries().iter().rev()) {
            prop_assert!((a + b).abs() < 1e-10 * (1.0 + b.abs()) * 10.0);
        }
        let k = random_orthogonal(&mut r, 3);
        let turned = cartan_projection(&(k * &g)).unwrap();
        for (a, b) in turned.entries().iter().zip(base.entries()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn exterior_powers_multiply_singular_values(seed in any::<u64>(), n in 2usize..=5) {
        let mut r = rng(seed);
        let g = gaussian_matrix(&mut r, n, n);
        let sv = singular_values(&g);
        for k in 1..=n {
            let top = singular_values(&compound(&g, k))[0];
            let product: f64 = sv[..k].iter().product();
            prop_assert!((top - product).abs() <= 1e-9 * product);
        }
    }

    #[test]
    fn busemann_is_lipschitz_and_vanishes_at_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let b = if seed % 2 == 0 {
            BusemannData::from_block_values(&[1, 1], &[1.0, -1.0]).unwrap()
        } else {
            BusemannData::from_block_values(&[2, 1], &[1.0, -2.0]).unwrap()
        };
        let dim = b.dim();
        prop_assert!(busemann_value(&b, &SpdPoint::identity(dim)).unwrap().abs() < 1e-12);
        let p = random_point(&mut r, dim, 1.0);
        let q = random_point(&mut r, dim, 1.0);
        let gap = (busemann_value(&b, &p).unwrap() - busemann_value(&b, &q).unwrap()).abs();
        prop_assert!(gap <= spd_distance(&p, &q).unwrap() + 1e-9);
    }

    #[test]
    fn spd_parallelogram_law(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = SpdSpace::new(3).unwrap();
        let (x, y, z) = (random_point(&mut r, 3, 1.0), random_point(&mut r, 3, 1.0), random_point(&mut r, 3, 1.0));
        prop_assert!(comparison_gap(&space, &z, &x, &y, 0.5) <= 1e-9);
    }

    #[test]
    fn comparison_triangles(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(3).unwrap();
        let (x, y, z) = (random_point(&mut r, 3, 1.0), random_point(&mut r, 3, 1.0), random_point(&mut r, 3, 1.0));
        prop_assert!(comparison_gap(&spd, &x, &y, &z, t) <= 1e-9);
        let tr = tree();
        let (x, y, z) = (tr.sample_point(&mut r), tr.sample_point(&mut r), tr.sample_point(&mut r));
        prop_assert!(comparison_gap(&tr, &x, &y, &z, t) <= 1e-9);
        let e = plane();
        let (x, y, z) = (e.sample_point(&mut r), e.sample_point(&mut r), e.sample_point(&mut r));
        prop_assert!(comparison_gap(&e, &x, &y, &z, t).abs() <= 1e-9);
    }

    #[test]
    fn distance_along_geodesics_is_convex(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(2).unwrap();
        let p: Vec<SpdPoint> = (0..4).map(|_| random_point(&mut r, 2, 1.0)).collect();
        prop_assert!(convexity_gap(&spd, (&p[0], &p[1]), (&p[2], &p[3]), a, b) <= 1e-9);
        let tr = tree();
        let q: Vec<TreePoint> = (0..4).map(|_| tr.sample_point(&mut r)).collect();
        prop_assert!(convexity_gap(&tr, (&q[0], &q[1]), (&q[2], &q[3]), a, b) <= 1e-9);
        let e = plane();
        let v: Vec<DVector<f64>> = (0..4).map(|_| e.sample_point(&mut r)).collect();
        prop_assert!(convexity_gap(&e, (&v[0], &v[1]), (&v[2], &v[3]), a, b) <= 1e-9);
    }

    #[test]
    fn reverse_triangle_bound_holds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(2).unwrap();
        let (x, y, z) = (random_point(&mut r, 2, 1.0), random_point(&mut r, 2, 1.0), random_point(&mut r, 2, 1.0));
        if let Ok(rt) = reverse_triangle_check(&spd, &x, &y, &z) {
            prop_assert!(rt.holds(1e-9), "{rt:?}");
        }
        let tr = tree();
        let (x, y, z) = (tr.sample_point(&mut r), tr.sample_point(&mut r), tr.sample_point(&mut r));
        if let Ok(rt) = reverse_triangle_check(&tr, &x, &y, &z) {
            prop_assert!(rt.holds(1e-9), "{rt:?}");
        }
    }

    #[test]
    fn direct_integral_midpoints(seed in any::<u64>()) {
        let mut r = rng(seed);
        let di = DirectIntegral::new(vec![SpdSpace::new(2).unwrap(), SpdSpace::new(2).unwrap(), SpdSpace::new(2).unwrap()], vec![0.2, 0.3, 0.5]).unwrap();
        let (x, y, z) = (di.sample_point(&mut r), di.sample_point(&mut r), di.sample_point(&mut r));
        let m = di.midpoint(&x, &y);
        let d = di.distance(&x, &y);
        prop_assert!((di.distance(&x, &m) - d / 2.0).abs() < 1e-9 * (1.0 + d));
        prop_assert!(comparison_gap(&di, &z, &x, &y, 0.5) <= 1e-9);
    }

    #[test]
    fn metric_audits(seed in any::<u64>(), p in 0.05f64..0.95) {
        prop_assert!(audit_metric(&DLine::new(p).unwrap(), 4, seed).is_ok());
        prop_assert!(audit_metric(&tree(), 4, seed).is_ok());
        prop_assert!(audit_metric(&SpdSpace::new(3).unwrap(), 4, seed).is_ok());
        prop_assert!(audit_metric(&MetricGraph::cycle(9).unwrap(), 4, seed).is_ok());
    }

    #[test]
    fn horofunction_cocycle_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let e = plane();
        let (g1, g2) = (e.sample_isometry(&mut r), e.sample_isometry(&mut r));
        let anchors: Vec<DVector<f64>> = (1..=4).map(|k| e.sample_point(&mut r) * 10f64.powi(k)).collect();
        let probes: Vec<DVector<f64>> = (0..4).map(|_| e.sample_point(&mut r)).collect();
        let h = Horofunction::Anchors(AnchorSequence::new(&e, anchors, &probes).unwrap());
        let lhs = horofunction_cocycle(&e, &e.compose(&g1, &g2), &h);
        let rhs = horofunction_cocycle(&e, &g1, &isometry_act(&e, &g2, &h)) + horofunction_cocycle(&e, &g2, &h);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        let joint = isometry_act(&e, &e.compose(&g1, &g2), &h);
        let stepwise = isometry_act(&e, &g1, &isometry_act(&e, &g2, &h));
        for y in &probes {
            prop_assert!((joint.eval(&e, y) - stepwise.eval(&e, y)).abs() < 1e-9 * (1.0 + joint.eval(&e, y).abs()));
        }
    }

    #[test]
    fn cocycle_bounded_by_displacement(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(2).unwrap();
        let g = spd.sample_isometry(&mut r);
        let x0 = spd.basepoint();
        let moved = spd.distance(&x0, &spd.apply(&g, &x0));
        let h = phi_embed(&spd, &spd.sample_point(&mut r));
        prop_assert!(horofunction_cocycle(&spd, &g, &h) <= moved + 1e-9 * (1.0 + moved));
        let sharp = phi_embed(&spd, &spd.apply(&spd.inverse(&g), &x0));
        prop_assert!((horofunction_cocycle(&spd, &g, &sharp) - moved).abs() < 1e-9 * (1.0 + moved));
    }
}

proptest! {
    #![proptest_config(config(64, 22))]

    #[test]
    fn operator_norm_is_a_supremum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = gaussian_matrix(&mut r, 2, 2);
        let top = singular_values(&g)[0];
        let sup = (0..1000).map(|_| (&g * random_unit_vector(&mut r, 2)).norm()).fold(0.0, f64::max);
        prop_assert!(sup <= top * (1.0 + 1e-12) && sup >= top * (1.0 - 1e-3));
    }

    #[test]
    fn rays_from_group_data(seed in any::<u64>(), t in 0.0f64..5.0) {
        let mut r = rng(seed);
        let k = random_orthogonal(&mut r, 3);
        let raw = [r.random_range(0.5..1.0), r.random_range(-0.2..0.2), 0.0];
        let mean = (raw[0] + raw[1]) / 3.0;
        let centered: Vec<f64> = raw.iter().map(|x| x - mean).collect();
        let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        let alpha: Vec<f64> = centered.iter().map(|x| x / norm).collect();
        let ray = GeodesicRay::from_group_data(&k, &alpha).unwrap();
        let via_exp = SpdPoint::diagonal_exp(&alpha.iter().map(|a| a * t).collect::<Vec<_>>()).congruence(&k);
        prop_assert!(spd_distance(&ray.at(t), &via_exp).unwrap() < 1e-9);
    }

    #[test]
    fn dline_horofunctions_collapse(sign in prop::bool::ANY, p in 0.1f64..=0.5) {
        let line = DLine::new(p).unwrap();
        let far = if sign { 1e6 } else { -1e6 };
        let h = phi_embed(&line, &far);
        for i in 0..=20 {
            let y = -1.0 + 0.1 * i as f64;
            prop_assert!(h.eval(&line, &y).abs() < 1e-3);
        }
    }

    #[test]
    fn karlsson_lower_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(2).unwrap();
        // stretch at most 0.1 per step keeps the orbit's log-eigen spread below 40
        let s: f64 = r.random_range(0.05..0.1);
        let stretch = DMatrix::from_diagonal(&DVector::from_vec(vec![s.exp(), (-s).exp()]));
        let k = random_orthogonal(&mut r, 2);
        let g = &k * stretch * k.transpose();
        let f = |p: &SpdPoint| p.congruence(&g);
        let (h, _) = karlsson_horofunction(&spd, f, 64, &[]).unwrap();
        let mut p = SpdPoint::identity(2);
        for _ in 1..=32 {
            p = f(&p);
            let a = spd.distance(&spd.basepoint(), &p);
            prop_assert!(-a <= h.eval(&spd, &p) + 1e-9 * (1.0 + a));
        }
    }

    #[test]
    fn tracking_is_exact_on_rays(seed in any::<u64>()) {
        let mut r = rng(seed);
        let e = Euclidean::new(3).unwrap();
        let v = e.sample_point(&mut r);
        let orbit: Vec<DVector<f64>> = (0..=200).map(|n| &v * n as f64).collect();
        let rep = km_tracking_ray(&e, &orbit, &Schedule::Auto).unwrap();
        prop_assert!(rep.tracking_errors.iter().all(|t| t.1 < 1e-9));
        let slope: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let mean = slope.iter().sum::<f64>() / 3.0;
        let spd = SpdSpace::new(3).unwrap();
        let orbit: Vec<SpdPoint> = (0..=200)
            .map(|n| SpdPoint::diagonal_exp(&slope.iter().map(|s| (s - mean) * n as f64).collect::<Vec<_>>()))
            .collect();
        let rep = km_tracking_ray(&spd, &orbit, &Schedule::Auto).unwrap();
        prop_assert!(rep.tracking_errors.iter().all(|t| t.1 < 1e-9));
    }

    #[test]
    fn single_fiber_reduction(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spd = SpdSpace::new(2).unwrap();
        let s: f64 = r.random_range(0.2..1.0);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![s.exp(), (-s).exp()]));
        let single = DirectIntegral::new(vec![spd], vec![1.0]).unwrap();
        let base = FiniteBase::new(vec![1.0], vec![0]).unwrap();
        let maps = vec![SpdIsometry::new(g.clone().try_inverse().unwrap()).unwrap()];
        let mut sections = vec![single.basepoint()];
        let mut fiber = vec![SpdPoint::identity(2)];
        for k in 0..256 {
            let next = induced_action_step(&single, &base, &maps, &sections[k]).unwrap();
            sections.push(next);
            fiber.push(fiber[k].congruence(&g));
        }
        let a = km_tracking_ray(&single, &sections, &Schedule::Auto).unwrap();
        let b = km_tracking_ray(&spd, &fiber, &Schedule::Auto).unwrap();
        prop_assert!((a.drift - b.drift).abs() < 1e-9);
        for (x, y) in a.tracking_errors.iter().zip(&b.tracking_errors) {
            prop_assert!(x.0 == y.0 && (x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rays_do_not_depend_on_the_schedule(seed in any::<u64>()) {
        let mut r = rng(seed);
        let e = Euclidean::new(2).unwrap();
        let v = DVector::from_vec(vec![r.random_range(0.5..2.0), r.random_range(-2.0..2.0)]);
        let n = 4096;
        let orbit: Vec<DVector<f64>> = (0..=n)
            .map(|k| {
                let noise = if k == 0 { DVector::zeros(2) } else { random_unit_vector(&mut r, 2) * r.random_range(0.0..0.5) };
                &v * k as f64 + noise
            })
            .collect();
        let auto = km_tracking_ray(&e, &orbit, &Schedule::Auto).unwrap();
        let drift = auto.drift;
        let explicit = Schedule::Explicit((1..=12).map(|i| drift * 0.3 * 0.5f64.powi(i)).collect());
        let other = km_tracking_ray(&e, &orbit, &explicit).unwrap();
        let radius = drift * n as f64 / 2.0;
        let gap = e.distance(&auto.ray_at(&e, radius).unwrap(), &other.ray_at(&e, radius).unwrap());
        prop_assert!(gap / radius < 0.05, "gap ratio {}", gap / radius);
    }

    #[test]
    fn swapped_fibers_drift(t1 in -2.0f64..2.0, t2 in -2.0f64..2.0) {
        prop_assume!((t1 + t2).abs() > 0.5);
        let line = Euclidean::new(1).unwrap();
        let di = DirectIntegral::new(vec![line, line], vec![0.5, 0.5]).unwrap();
        let base = FiniteBase::new(vec![0.5, 0.5], vec![1, 0]).unwrap();
        let maps = vec![
            EuclideanMotion::translation(DVector::from_element(1, t1)),
            EuclideanMotion::translation(DVector::from_element(1, t2)),
        ];
        let mut orbit = vec![di.basepoint()];
        for k in 0..4096 {
            let next = induced_action_step(&di, &base, &maps, &orbit[k]).unwrap();
            orbit.push(next);
        }
        let rep = km_tracking_ray(&di, &orbit, &Schedule::Auto).unwrap();
        prop_assert!((rep.drift - (t1 + t2).abs() / 2.0).abs() < 1e-9);
    }
}

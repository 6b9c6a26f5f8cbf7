use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tau_moments::cauchy_wave::cauchy_transform;
use tau_moments::hirota_pde::{hirota_coeff, ladder_context};
use tau_moments::inner_product::{
    gaussian_moments, Direction, Domain, InnerProduct, MeasureSpec, Side, Times, WeightDescriptor, WeightFamily,
};
use tau_moments::linalg::det;
use tau_moments::moment_matrix::{Composition, Shift, TauContext};
use tau_moments::mops::{self, dualize, Problem};
use tau_moments::scenarios::{km_probability, Geometry};
use tau_moments::suite::{mops_checks, Tolerances};
use tau_moments::sweep::{random_config, RandomConfig};
use tau_moments::timealg::{schur_coeffs, time_exponential, TimeVector};

fn config(seed: u64) -> RandomConfig {
    random_config(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn line_config(seed: u64) -> RandomConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let c = random_config(&mut rng).unwrap();
        if c.ip.is_symmetric() {
            return c;
        }
    }
}

/// Frobenius condition number of a moment matrix.
fn kappa(m: &DMatrix<f64>) -> f64 {
    m.norm() * m.clone().try_inverse().unwrap().norm()
}

fn small_vector(max_len: usize, bound: f64) -> impl Strategy<Value = TimeVector> {
    prop::collection::vec(-bound..bound, 0..=max_len).prop_map(|v| TimeVector::from_slice(&v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_truncation_is_bounded_by_the_tail(
        v in small_vector(5, 1.0),
        r in 0.0f64..0.5,
        arg in 0.0f64..std::f64::consts::TAU,
    ) {
        let z = Complex64::from_polar(r, arg);
        let l = 20;
        let s = schur_coeffs(&v, 80);
        let partial: Complex64 = s[..=l].iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
        let exact = time_exponential(&v, z);
        let tail: f64 = s[l + 1..].iter().enumerate().map(|(k, c)| c.abs() * r.powi((l + 1 + k) as i32)).sum();
        prop_assert!((exact - partial).norm() <= 2.0 * tail + 1e-14 * exact.norm().max(1.0));
    }

    #[test]
    fn schur_coefficients_are_graded(v in small_vector(5, 1.0)) {
        let lambda = 2.0f64;
        let scaled: Vec<f64> = (1..=v.depth()).map(|j| lambda.powi(j as i32) * v.get(j)).collect();
        let abs: Vec<f64> = v.as_slice().iter().map(|x| x.abs()).collect();
        let a = schur_coeffs(&v, 8);
        let b = schur_coeffs(&TimeVector::from_slice(&scaled), 8);
        let bound = schur_coeffs(&TimeVector::from_slice(&abs), 8);
        for l in 0..=8 {
            let f = lambda.powi(l as i32);
            prop_assert!((b[l] - f * a[l]).abs() <= 1e-12 * f * bound[l].max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn closed_form_and_quadrature_backends_agree(
        c in prop::collection::vec(-1.0f64..1.0, 2),
        t1 in -0.2f64..0.2,
        t2 in -0.2f64..0.2,
        s1 in -0.2f64..0.2,
    ) {
        let weights = WeightFamily::new(
            vec![WeightDescriptor::PlainExponential { c: c[0] }],
            vec![WeightDescriptor::PlainExponential { c: c[1] }],
        );
        let closed = InnerProduct::new(MeasureSpec::gaussian_line(), weights.clone()).unwrap();
        let windowed = InnerProduct::new(
            MeasureSpec::Line { domain: Domain::interval(-25.0, 25.0), density: WeightDescriptor::standard_gaussian() },
            weights,
        ).unwrap();
        let times = Times {
            s: vec![TimeVector::from_slice(&[s1])],
            t: vec![TimeVector::from_slice(&[t1, t2])],
        };
        let a = closed.pairing(&times, 8, 8).unwrap();
        let b = windowed.pairing(&times, 8, 8).unwrap();
        // |<x^k>| <= sqrt(<1> <x^2k>) for the same positive density
        let (c1, c2) = (c[0] + c[1] + t1 - s1, -0.5 + t2);
        let even = gaussian_moments(0.0, c1, c2, 32);
        for i in 0..=8 {
            for j in 0..=8 {
                let k = i + j;
                let scale = (even[0] * even[2 * k]).sqrt();
                prop_assert!((a.get(0, i, 0, j) - b.get(0, i, 0, j)).abs() <= 1e-10 * scale, "i={} j={}", i, j);
            }
        }
    }

    #[test]
    fn circle_moments_are_symmetric_at_opposite_times(v in small_vector(3, 0.2)) {
        let ip = InnerProduct::new(MeasureSpec::Circle, WeightFamily::unit(1, 1)).unwrap();
        let times = Times { s: vec![v.neg()], t: vec![v] };
        let pr = ip.pairing(&times, 6, 6).unwrap();
        for i in 0..=6 {
            for j in 0..i {
                prop_assert!((pr.get(0, i, 0, j) - pr.get(0, j, 0, i)).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn moment_derivatives_match_differences(seed in 0u64..10_000, i in 0usize..4, j in 0usize..4) {
        let cfg = config(seed);
        let h = 1e-5;
        let (q, p) = (cfg.ip.q(), cfg.ip.p());
        for d in [Direction::t(p - 1, 1), Direction::t(0, 2), Direction::s(q - 1, 1)] {
            let up = cfg.ip.moment(0, i, 0, j, &cfg.times.bumped(d, h).unwrap()).unwrap();
            let dn = cfg.ip.moment(0, i, 0, j, &cfg.times.bumped(d, -h).unwrap()).unwrap();
            let exact = cfg.ip.moment_time_derivative(0, i, 0, j, &cfg.times, d).unwrap();
            prop_assert!(((up - dn) / (2.0 * h) - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{:?}", d);
        }
    }

    #[test]
    fn minus_shift_is_a_polynomial_of_full_degree(seed in 0u64..10_000) {
        let cfg = config(seed);
        let c = &cfg.composition;
        let block = c.m.iter().chain(&c.n).copied().max().unwrap();
        let ctx = TauContext::new(&cfg.ip, cfg.times.clone(), 2 * block + 2, 2 * block + 2).unwrap();
        let tau = ctx.tau(c).unwrap();
        let pr = ctx.pairing();
        for b in 0..c.p() {
            let coeffs = ctx.shift_t(c, b, Shift::Minus, 0).unwrap();
            prop_assert_eq!(coeffs.len(), c.n[b] + 1);
            prop_assert!((coeffs[0] - tau).abs() <= 1e-12 * tau.abs());
            // top coefficient: (-1)^{n_b} det with block b raised one degree
            let rows: Vec<(usize, usize)> = (0..c.q()).flat_map(|a| (0..c.m[a]).map(move |i| (a, i))).collect();
            let cols: Vec<(usize, usize)> = (0..c.p())
                .flat_map(|bb| (0..c.n[bb]).map(move |j| (bb, if bb == b { j + 1 } else { j })))
                .collect();
            let m = DMatrix::from_fn(rows.len(), cols.len(), |r, k| pr.get(rows[r].0, rows[r].1, cols[k].0, cols[k].1));
            let want = if c.n[b].is_multiple_of(2) { 1.0 } else { -1.0 } * det(&m);
            let hadamard: f64 = m.row_iter().map(|r| r.norm()).product();
            prop_assert!((coeffs[c.n[b]] - want).abs() <= 1e-10 * hadamard.max(want.abs()));
        }
    }

    #[test]
    fn log_tau_derivatives_match_differences(seed in 0u64..10_000) {
        let cfg = line_config(seed);
        let c = &cfg.composition;
        let block = c.m.iter().chain(&c.n).copied().max().unwrap();
        let lt = |times: &Times| {
            TauContext::new(&cfg.ip, times.clone(), block + 1, block + 1).unwrap().tau(c).unwrap().abs().ln()
        };
        let ctx = TauContext::with_capacity(&cfg.ip, cfg.times.clone(), block + 1, 2, 3).unwrap();
        let (a, b) = (Direction::t(0, 1), Direction::s(0, 1));
        // ln tau carries about kappa * eps of rounding, which a difference
        // quotient amplifies by 1/h
        let m = ctx.matrix(c).unwrap();
        let k = kappa(&m);
        // past this the trace terms cancel below the digits the inverse keeps
        prop_assume!(k < 1e6);
        let e1 = ctx.log_tau_derivative(c, &[a]).unwrap();
        // near a zero of tau the length scale shrinks like 1/|e1|
        let h = 1e-3 / e1.abs().max(1.0);
        let noise = 16.0 * k * f64::EPSILON / h;
        let central = |h: f64| (lt(&cfg.times.bumped(a, h).unwrap()) - lt(&cfg.times.bumped(a, -h).unwrap())) / (2.0 * h);
        let d1 = (4.0 * central(h) - central(2.0 * h)) / 3.0;
        prop_assert!((d1 - e1).abs() <= 1e-6 * e1.abs().max(1.0) + noise, "{} {}", d1, e1);
        // the mixed derivative as a difference of exact first derivatives
        let e1_at = |y: f64| {
            let times = cfg.times.bumped(b, y).unwrap();
            TauContext::with_capacity(&cfg.ip, times, block + 1, 2, 3).unwrap().log_tau_derivative(c, &[a]).unwrap()
        };
        let eb = ctx.log_tau_derivative(c, &[b]).unwrap();
        let h = 1e-3 / e1.abs().max(eb.abs()).max(1.0);
        let noise = 16.0 * k * f64::EPSILON * e1.abs().max(1.0) / h;
        let d2 = (4.0 * (e1_at(h) - e1_at(-h)) / (2.0 * h) - (e1_at(2.0 * h) - e1_at(-2.0 * h)) / (4.0 * h)) / 3.0;
        let e2 = ctx.log_tau_derivative(c, &[a, b]).unwrap();
        prop_assert!((d2 - e2).abs() <= 1e-5 * e2.abs().max(1.0) + noise, "{} {}", d2, e2);
    }

    #[test]
    fn solved_forms_are_monic_normalized_and_orthogonal(seed in 0u64..10_000) {
        let cfg = config(seed);
        let c = &cfg.composition;
        let block = c.m.iter().chain(&c.n).copied().max().unwrap();
        let ctx = TauContext::new(&cfg.ip, cfg.times.clone(), block + 1, block + 1).unwrap();
        // two numerical routes to the same coefficients differ by up to kappa * eps
        let rounding = 16.0 * kappa(&ctx.matrix(c).unwrap()) * f64::EPSILON;
        for r in mops_checks(&cfg.ip, &cfg.times, c, &Tolerances::default()).unwrap() {
            let slack = if r.id.starts_with("orthogonality") { 0.0 } else { rounding };
            prop_assert!(r.residual <= r.tolerance + slack, "{:?}", r);
        }
        for b in 0..c.p() {
            let q = mops::solve_type_ii(&ctx, c, b).unwrap();
            prop_assert_eq!(*q.components[b].last().unwrap(), 1.0);
        }
        let pr = ctx.pairing();
        for a in (0..c.q()).filter(|&a| c.m[a] > 0) {
            let sol = mops::solve_type_i(&ctx, c, a).unwrap();
            let pairing: f64 = sol.components.iter().enumerate()
                .flat_map(|(b, comp)| comp.iter().enumerate().map(move |(j, x)| (b, j, *x)))
                .map(|(b, j, x)| x * pr.get(a, c.m[a] - 1, b, j))
                .sum();
            prop_assert!((pairing - 1.0).abs() <= 1e-9 + rounding);
        }
    }

    #[test]
    fn type_ii_cauchy_transforms_start_late(seed in 0u64..10_000) {
        let cfg = config(seed);
        let c = &cfg.composition;
        let l = c.m.iter().copied().max().unwrap() + 2;
        let ctx = tau_moments::cauchy_wave::context_for(&cfg.ip, &cfg.times, c, l).unwrap();
        let pr = ctx.pairing();
        for b in 0..c.p() {
            let q = mops::solve_type_ii(&ctx, c, b).unwrap();
            for a in 0..c.q() {
                let tr = cauchy_transform(&ctx, &q, a, l);
                for i in 0..c.m[a] {
                    let scale: f64 = q.components.iter().enumerate()
                        .flat_map(|(bb, comp)| comp.iter().enumerate().map(move |(j, x)| (bb, j, *x)))
                        .map(|(bb, j, x)| (x * pr.get(a, i, bb, j)).abs())
                        .sum();
                    let v = tr.coeff(-(i as i32) - 1).unwrap();
                    prop_assert!(v.abs() <= 1e-10 * scale, "a={} i={} {}", a, i, v);
                }
            }
        }
    }

    #[test]
    fn dualize_twice_restores_every_tau_and_form(seed in 0u64..10_000) {
        let cfg = config(seed);
        let block = cfg.composition.m.iter().chain(&cfg.composition.n).copied().max().unwrap();
        let pr = Problem { ip: cfg.ip, times: cfg.times, composition: cfg.composition };
        let once = dualize(&pr).unwrap();
        let back = dualize(&once).unwrap();
        prop_assert_eq!(&back.times, &pr.times);
        prop_assert_eq!(&back.composition, &pr.composition);
        fn ctx(p: &Problem, block: usize) -> TauContext<'_> {
            TauContext::new(&p.ip, p.times.clone(), block + 1, block + 1).unwrap()
        }
        let (c0, c1, c2) = (ctx(&pr, block), ctx(&once, block), ctx(&back, block));
        let tau = c0.tau(&pr.composition).unwrap();
        prop_assert!((c2.tau(&back.composition).unwrap() - tau).abs() <= 1e-12 * tau.abs());
        // the dual matrix is the transpose, so its determinant differs by LU rounding
        let m = c0.matrix(&pr.composition).unwrap();
        let k = kappa(&m);
        prop_assert_eq!(c1.matrix(&once.composition).unwrap(), m.transpose());
        prop_assert!((c1.tau(&once.composition).unwrap() - tau).abs() <= 64.0 * f64::EPSILON * k * tau.abs());
        for b in 0..pr.composition.p() {
            let x = mops::solve_type_ii(&c0, &pr.composition, b).unwrap();
            let y = mops::solve_type_ii(&c2, &back.composition, b).unwrap();
            prop_assert!(x.distance(&y) <= 1e-12);
        }
    }

    #[test]
    fn hirota_symbol_of_a_square(seed in 0u64..10_000) {
        let cfg = config(seed);
        let c = &cfg.composition;
        let ctx = ladder_context(&cfg.ip, &cfg.times, c).unwrap();
        let tau = ctx.tau(c).unwrap();
        let ladder = Tolerances::default().ladder;
        let rounding = 16.0 * kappa(&ctx.matrix(c).unwrap()) * f64::EPSILON;
        for (side, k) in [(Side::T, c.p()), (Side::S, c.q())] {
            for block in 0..k {
                let (v0, _) = hirota_coeff(&ctx, c, c, side, block, 0).unwrap();
                prop_assert_eq!(v0, tau * tau);
                // the two first-order coefficients come from different expansions
                let (v1, m1) = hirota_coeff(&ctx, c, c, side, block, 1).unwrap();
                prop_assert!(v1.abs() <= (ladder + rounding) * m1, "{:e} {:e}", v1, m1);
            }
        }
    }

    #[test]
    fn km_probabilities_are_ordered(
        starts in prop::collection::vec(-1.0f64..1.0, 1..=3),
        ends in prop::collection::vec(-1.0f64..1.0, 3),
        slice in 0.2f64..0.8,
        lo in -1.5f64..0.0,
        width in 0.2f64..2.0,
    ) {
        let n = starts.len();
        let geometry = |window: Domain| Geometry {
            starts: starts.clone(),
            ends: ends[..n].to_vec(),
            slices: vec![slice],
            windows: vec![window],
            ..Geometry::default()
        };
        let inner = km_probability(&geometry(Domain::interval(lo, lo + width)), None).unwrap().probability;
        let outer = km_probability(&geometry(Domain::interval(lo - 0.5, lo + width + 0.5)), None).unwrap().probability;
        let whole = km_probability(&geometry(Domain::real_line()), None).unwrap().probability;
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&inner), "{}", inner);
        prop_assert!(inner <= outer + 1e-9, "{} {}", inner, outer);
        prop_assert!(outer <= 1.0 + 1e-9);
        prop_assert!((whole - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn bridge_probability_falls_as_the_ends_spread() {
    // paths end at a and -a; the window caps them from above
    let mut last = f64::INFINITY;
    for a in [0.4, 0.8, 1.2] {
        let g = Geometry {
            a: Some(a),
            paths: vec![2, 1],
            slices: vec![0.5],
            windows: vec![Domain::interval(f64::NEG_INFINITY, 0.5)],
            ..Geometry::default()
        };
        let p = km_probability(&g, None).unwrap().probability;
        assert!(p <= last + 1e-12, "a={a}: {p} > {last}");
        last = p;
    }
}

#[test]
fn composition_shapes() {
    let c = Composition::new(vec![2, 1], vec![1, 2]);
    assert_eq!(c.dual().dual(), c);
    assert_eq!(c.shifted(&[(0, -3)], &[]), None);
}

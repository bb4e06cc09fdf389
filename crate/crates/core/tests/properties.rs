use misfit_core::circle::{pair_potential, random_circle_config};
use misfit_core::optimize::{project_ordered, sample_ordered};
use misfit_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(delta: f64, l: f64) -> ModelParams {
    ModelParams::new(0.7, 1.3, delta, l).unwrap()
}

/// Admissible configuration drawn from a seed, with up to `max_n` cores.
fn config_from_seed(seed: u64, p: ModelParams, max_n: usize) -> DislocationConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seed as usize % (max_n + 1)).min(p.max_dislocations());
    let (lo, hi) = p.center_range();
    let m = 1e-6 * p.delta;
    validate_config(sample_ordered(&mut rng, n, p.delta, lo + m, hi - m), p).unwrap()
}

fn circle_from_seed(seed: u64, n: usize, rho: f64) -> CircleConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_circle_config(&mut rng, n, rho, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sorting_does_not_matter(seed in any::<u64>(), l in 1.0f64..8.0) {
        let p = params(0.1, l);
        let c = config_from_seed(seed, p, 30);
        let mut shuffled = c.centers().to_vec();
        shuffled.reverse();
        if shuffled.len() > 2 {
            shuffled.swap(0, 1);
        }
        prop_assert_eq!(validate_config(shuffled, p).unwrap(), c);
    }

    #[test]
    fn displacement_is_lipschitz_with_two_slopes(seed in any::<u64>(), l in 1.0f64..8.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let p = params(0.1, l);
        let u = displacement_from_config(&config_from_seed(seed, p, 30));
        for &s in u.slopes() {
            prop_assert!(s == p.lambda || s == -p.big_lambda);
        }
        let (x, y) = (a * l, b * l);
        prop_assert!((u.eval(x) - u.eval(y)).abs() <= p.big_lambda.max(p.lambda) * (x - y).abs() + 1e-12);
    }

    #[test]
    fn core_pattern_round_trips(seed in any::<u64>(), l in 1.0f64..8.0) {
        let p = params(0.1, l);
        let c = config_from_seed(seed, p, 30);
        let u = displacement_from_config(&c);
        let core_len: f64 = (0..u.num_segments())
            .filter(|&i| u.slopes()[i] < 0.0)
            .map(|i| { let (a, b) = u.segment(i); b - a })
            .sum();
        let expected: f64 = c.cores().map(|(a, b)| b.min(l) - a.max(0.0)).filter(|&w| w > 0.0).sum();
        prop_assert!((core_len - expected).abs() < 1e-9);
    }

    #[test]
    fn energy_is_reflection_and_shift_invariant(seed in any::<u64>(), l in 1.0f64..6.0, shift in -5.0f64..5.0) {
        let u = displacement_from_config(&config_from_seed(seed, params(0.1, l), 20));
        let e = energy_exact(&u).unwrap().value;
        let er = energy_exact(&u.reflected()).unwrap().value;
        let es = energy_exact(&u.plus_constant(shift)).unwrap().value;
        prop_assert!((e - er).abs() <= 1e-11 * (1.0 + e));
        prop_assert!((e - es).abs() <= 1e-11 * (1.0 + e));
        prop_assert!(e >= 0.0);
    }

    #[test]
    fn energy_scales_quadratically(seed in any::<u64>(), l in 1.0f64..6.0, c in 0.1f64..4.0) {
        let u = displacement_from_config(&config_from_seed(seed, params(0.1, l), 20));
        let scaled = PiecewiseAffine::new(
            u.breakpoints().to_vec(),
            u.slopes().iter().map(|s| s * c).collect(),
            0.0,
        ).unwrap();
        let e = energy_exact(&u).unwrap().value;
        prop_assert!((energy_exact(&scaled).unwrap().value - c * c * e).abs() <= 1e-11 * (1.0 + c * c * e));
    }

    #[test]
    fn rescaled_energy_is_energy_per_length(seed in any::<u64>(), l in 1.0f64..6.0) {
        let u = displacement_from_config(&config_from_seed(seed, params(0.1, l), 20));
        let (_, f) = rescaled_energy(&u, l).unwrap();
        let e = energy_exact(&u).unwrap().value;
        prop_assert!((f - e / l).abs() <= 1e-11 * (1.0 + e / l));
    }

    #[test]
    fn projection_lands_in_polytope(xs in proptest::collection::vec(-2.0f64..3.0, 0..12), gap in 0.01f64..0.1) {
        let mut x = xs.clone();
        project_ordered(&mut x, gap, -0.5, 1.5);
        for w in x.windows(2) {
            prop_assert!(w[1] - w[0] >= gap - 1e-12);
        }
        if let (Some(&f), Some(&b)) = (x.first(), x.last()) {
            prop_assert!(f >= -0.5 - 1e-12 && b <= 1.5 + 1e-12);
        }
        let mut again = x.clone();
        project_ordered(&mut again, gap, -0.5, 1.5);
        for (a, b) in again.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn histogram_counts_every_center(seed in any::<u64>(), l in 1.0f64..8.0, bins in 1usize..12) {
        let c = config_from_seed(seed, params(0.1, l), 40);
        let h = dislocation_density(&c, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), c.len());
    }

    #[test]
    fn pair_energy_is_rotation_invariant(seed in any::<u64>(), n in 1usize..9, shift in 0.0f64..1.0) {
        let x = circle_from_seed(seed, n, 0.3 / n as f64);
        let e = energy_tilde(&x).unwrap();
        let r = energy_tilde(&x.rotated(shift).unwrap()).unwrap();
        prop_assert!((e - r).abs() <= 1e-12 * (1.0 + e));
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 2usize..9) {
        let x = circle_from_seed(seed, n, 0.2 / n as f64);
        let g = gradient_tilde(&x).unwrap();
        let pts = x.points().to_vec();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let (mut p, mut m) = (pts.clone(), pts.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (circle::energy_tilde_points(&p).unwrap() - circle::energy_tilde_points(&m).unwrap()) / (2.0 * h);
            num += (g[i] - fd) * (g[i] - fd);
            den += g[i] * g[i];
        }
        prop_assert!((num / den).sqrt() <= 1e-5);
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-9 * (1.0 + den.sqrt()));
    }

    #[test]
    fn offsets_telescope_and_obey_jensen(seed in any::<u64>(), n in 2usize..10) {
        let x = circle_from_seed(seed, n, 0.3 / n as f64);
        let mut total = 0.0;
        for k in 1..n {
            let (g, d) = gk_decomposition(&x, k).unwrap();
            prop_assert!((d.iter().sum::<f64>() - k as f64).abs() <= 1e-12);
            prop_assert!(g >= n as f64 * pair_potential(k as f64 / n as f64) - 1e-10);
            total += g;
        }
        prop_assert!((2.0 * total - energy_tilde(&x).unwrap()).abs() <= 1e-10 * (1.0 + total));
    }

    #[test]
    fn cutoff_and_pair_energies_differ_by_a_constant(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = circle_from_seed(s1, 3, 0.05);
        let b = circle_from_seed(s2, 3, 0.05);
        let d = constancy_check(&a, &b).unwrap();
        prop_assert!(d.abs() <= 1e-6 * (1.0 + energy_erho(&a).unwrap()));
    }

    #[test]
    fn cutoff_energy_is_rotation_invariant(seed in any::<u64>(), n in 1usize..6, shift in 0.0f64..1.0) {
        let x = circle_from_seed(seed, n, 0.3 / n as f64);
        let e = energy_erho(&x).unwrap();
        let r = energy_erho(&x.rotated(shift).unwrap()).unwrap();
        prop_assert!((e - r).abs() <= 1e-10 * (1.0 + e));
    }
}

#[test]
fn pair_potential_is_convex() {
    let m = 1000;
    let h = 1.0 / m as f64;
    for i in 1..m - 1 {
        let d = i as f64 * h;
        let second = pair_potential(d + h) - 2.0 * pair_potential(d) + pair_potential(d - h);
        if (d - 0.5).abs() < 1.5 * h {
            assert!(second >= -1e-12, "d = {d}");
        } else {
            assert!(second > 0.0, "d = {d}");
        }
    }
}

#[test]
fn solver_trace_never_increases() {
    let p = ModelParams::<f64>::new(1.0, 1.0, 0.1, 6.0).unwrap();
    for n in [10, 25, 31] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let (lo, hi) = p.center_range();
        let x0 = sample_ordered(&mut rng, n, p.delta, lo + 1e-7, hi - 1e-7);
        let r = interval::minimize_from(x0, &p, &MinimizeOptions::default()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }
}

#[test]
fn multistart_beats_explicit_competitors() {
    let p = ModelParams::<f64>::new(1.0, 1.0, 0.1, 4.0).unwrap();
    let est = estimate_cl(&p, &ClOptions::default()).unwrap();
    let empty = p.lambda * p.lambda * p.l;
    let even = energy_exact(&displacement_from_config(
        &evenly_spaced_config(&p).unwrap(),
    ))
    .unwrap()
    .value
        / p.l;
    assert!(est.c_l <= empty && est.c_l <= even + est.solver_tol);
    let recomputed = energy_exact(&displacement_from_config(&est.config().unwrap()))
        .unwrap()
        .value
        / p.l;
    assert!((recomputed - est.c_l).abs() <= est.solver_tol);
}

//! Reference values checked against independent computations in this file.

use misfit_core::circle::{evenly_spaced_energy, random_circle_config};
use misfit_core::quadrature::integrate_1d;
use misfit_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit(delta: f64, l: f64) -> ModelParams {
    ModelParams::new(1.0, 1.0, delta, l).unwrap()
}

#[test]
fn single_core_displacement() {
    let u = displacement_from_config(&validate_config(vec![0.5], unit(0.2, 1.0)).unwrap());
    assert_eq!(u.slopes(), &[1.0, -1.0, 1.0]);
    assert!((u.breakpoints()[1] - 0.4).abs() < 1e-15 && (u.breakpoints()[2] - 0.6).abs() < 1e-15);
    assert!((u.eval(1.0) - 0.6).abs() < 1e-15);
}

#[test]
fn boundary_core_is_truncated() {
    let u = displacement_from_config(&validate_config(vec![-0.05], unit(0.2, 1.0)).unwrap());
    assert_eq!(u.slopes(), &[-1.0, 1.0]);
    assert!((u.breakpoints()[1] - 0.05).abs() < 1e-15);
}

#[test]
fn config_validation_examples() {
    let p = unit(0.1, 1.0);
    assert!(validate_config(vec![], p).unwrap().is_empty());
    assert!(validate_config(vec![-0.025], p).is_ok());
    assert!(matches!(
        validate_config(vec![0.3, 0.35], p),
        Err(Error::SeparationViolation { .. })
    ));
    assert!(matches!(
        validate_config(vec![1.2], p),
        Err(Error::OutOfRange { .. })
    ));
}

/// `E = int_{-L}^{L} (L - |r|) q(r) dr` only holds for affine `u`; for the single-core profile
/// the integral is split into its nine rectangle pairs and each is reduced to one dimension
/// through `y = x - r`, which is exact for the piecewise-polynomial integrand.
#[test]
fn single_core_energy_by_nested_quadrature() {
    let u = displacement_from_config(&validate_config(vec![0.5], unit(0.2, 1.0)).unwrap());
    let bp = u.breakpoints().to_vec();
    let inner = |x: f64| {
        integrate_1d(
            |y: f64| {
                if x == y {
                    return 1.0;
                }
                let q = (u.eval(x) - u.eval(y)) / (x - y);
                q * q
            },
            0.0,
            1.0,
            &[bp.clone(), vec![x]].concat(),
            1e-13,
            100_000,
        )
        .unwrap()
        .value
    };
    let nested = integrate_1d(inner, 0.0, 1.0, &bp, 1e-11, 100_000)
        .unwrap()
        .value;
    let exact = energy_exact(&u).unwrap().value;
    assert!((nested - exact).abs() < 1e-9, "{nested} vs {exact}");
}

#[test]
fn affine_energy_is_slope_squared_length_squared() {
    for &(lambda, l) in &[(0.1f64, 1.0f64), (1.0, 5.0), (3.0, 0.2)] {
        let e = energy_exact(&PiecewiseAffine::<f64>::affine(0.0, l, lambda, 0.0).unwrap())
            .unwrap()
            .value;
        assert!((e - lambda * lambda * l * l).abs() <= 1e-12 * lambda * lambda * l * l);
    }
}

#[test]
fn empty_configuration_minimum() {
    let p = unit(0.1, 3.0);
    let (c, e) = minimize_positions(0, &p, &MinimizeOptions::default()).unwrap();
    assert!(c.is_empty());
    assert!((e - 9.0).abs() < 1e-12);
}

/// Exhaustive scan over every feasible count with a denser multistart than the default.
#[test]
fn optimal_count_on_unit_interval() {
    let p = unit(0.1, 1.0);
    let est = estimate_cl(&p, &ClOptions::default()).unwrap();
    let dense = ClOptions {
        restarts: 40,
        seed: 7,
        ..Default::default()
    };
    let mut best = (p.lambda * p.lambda * p.l * p.l, 0usize);
    for n in 1..=p.max_dislocations() {
        let mut best_n = f64::INFINITY;
        for r in 0..dense.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + r as u64);
            let (lo, hi) = p.center_range();
            let x0 =
                misfit_core::optimize::sample_ordered(&mut rng, n, p.delta, lo + 1e-7, hi - 1e-7);
            if let Ok(res) = interval::minimize_from(x0, &p, &MinimizeOptions::default()) {
                best_n = best_n.min(res.energy);
            }
        }
        if best_n < best.0 {
            best = (best_n, n);
        }
    }
    // two of the optimal cores sit mostly outside the interval
    assert_eq!(best.1, 7);
    assert_eq!(est.n_star, best.1);
    let interior = est
        .centers_star
        .iter()
        .filter(|&&c| c > 0.0 && c < p.l)
        .count();
    assert!((4..=6).contains(&interior), "interior count {interior}");
    assert!(est.c_l <= best.0 / p.l + 1e-9, "{} vs {}", est.c_l, best.0);
    assert!(est.c_l > 0.0);
}

#[test]
fn subadditivity_at_half_length_and_quarter() {
    let p = unit(0.1, 1.0);
    let opts = ClOptions {
        restarts: 4,
        ..Default::default()
    };
    let half = interval::subadditivity_check(2.5, 5.0, &p, &opts).unwrap();
    assert_eq!(half.remainder, 0.0);
    assert_eq!(half.factor, 1.0);
    assert!(half.holds);
    let r = interval::subadditivity_check(1.5, 4.0, &p, &opts).unwrap();
    assert!(r.factor > 1.0);
}

#[test]
fn cross_term_decays_for_minimizers() {
    let p = unit(0.1, 1.0);
    let opts = ClOptions {
        restarts: 4,
        ..Default::default()
    };
    let mut values = Vec::new();
    for l in [5.0, 10.0, 20.0] {
        let est = estimate_cl(&p.with_length(l).unwrap(), &opts).unwrap();
        let u = displacement_from_config(&est.config().unwrap());
        values.push(split_energy_diagnostic(&u, l / 2.0).unwrap());
    }
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    let flat = PiecewiseAffine::<f64>::constant(0.0, 2.0, 1.0).unwrap();
    assert_eq!(split_energy_diagnostic(&flat, 1.0).unwrap(), 0.0);
    let ramp = PiecewiseAffine::<f64>::affine(0.0, 2.0, 1.0, 0.0).unwrap();
    assert_eq!(split_energy_diagnostic(&ramp, 0.0).unwrap(), 0.0);
}

/// For cutoffs below every distance, integrating the jump count in closed form gives
/// `E_rho / (lambda/N)^2 = 2 N ln(1/(2 rho)) + Etilde - 2 N (N - 1)(ln 2 + 1)`.
#[test]
fn cutoff_energy_closed_form_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=7usize {
        for _ in 0..10 {
            let rho = 0.4 / n as f64;
            let x = random_circle_config::<f64, _>(&mut rng, n, rho, 1.7).unwrap();
            let jump = 1.7 / n as f64;
            let nf = n as f64;
            let expected = jump
                * jump
                * (2.0 * nf * (1.0 / (2.0 * rho)).ln() + energy_tilde(&x).unwrap()
                    - 2.0 * nf * (nf - 1.0) * (2f64.ln() + 1.0));
            let e = energy_erho(&x).unwrap();
            assert!(
                (e - expected).abs() <= 1e-11 * (1.0 + e.abs()),
                "{e} vs {expected}"
            );
        }
    }
}

#[test]
fn single_point_cutoff_energy_by_quadrature() {
    let rho = 0.1;
    let x = CircleConfig::<f64>::new(vec![0.42], rho, 1.0).unwrap();
    // the jump count over (y, y + z] is 1 on a set of y of measure z
    let q = integrate_1d(|z: f64| 2.0 * z / (z * z), rho, 0.5, &[], 1e-12, 10_000)
        .unwrap()
        .value;
    assert!((energy_erho(&x).unwrap() - q).abs() < 1e-6);
}

#[test]
fn two_point_descent_reaches_antipodes() {
    let start = CircleConfig::<f64>::new(vec![0.0, 0.4], 0.1, 1.0).unwrap();
    // f'(d) = -1/d + 2 < 0 below one half, so the gap grows monotonically to 1/2
    let r = circle::minimize_circle_from(start, &CircleOptions::default()).unwrap();
    let gaps = r.config.gaps();
    assert!((gaps[0] - 0.5).abs() < 1e-9 && (gaps[1] - 0.5).abs() < 1e-9);
    assert!((r.energy_tilde - evenly_spaced_energy::<f64>(2)).abs() < 1e-12);
}

#[test]
fn three_point_minimizers_are_evenly_spaced() {
    for seed in 0..50 {
        let r = minimize_circle::<f64>(3, 0.05, seed, &CircleOptions::default()).unwrap();
        assert!(r.max_gap_error <= 1e-6);
        assert!(r.energy_tilde <= r.start_energy);
    }
}

#[test]
fn periodic_identity_single_core() {
    let v = PeriodicDisplacement::<f64>::new(&[0.3], 1.0, 1.0).unwrap();
    assert_eq!(v.delta(), 0.5);
    let r = periodic_energy_identity(&v, 1e-6).unwrap();
    assert!((r.lhs - r.rhs).abs() <= 2e-6, "{r:?}");
    let rotated = PeriodicDisplacement::<f64>::new(&[0.71], 1.0, 1.0).unwrap();
    let s = periodic_energy_identity(&rotated, 1e-6).unwrap();
    assert!((r.lhs - s.lhs).abs() <= 2e-6 && (r.rhs - s.rhs).abs() <= 2e-6);
}

#[test]
fn periodic_identity_vanishes_with_misfit() {
    let mut previous = f64::INFINITY;
    for lambda in [1e-1, 1e-2, 1e-3] {
        let v = PeriodicDisplacement::<f64>::new(&[0.2, 0.7], lambda, 1.0).unwrap();
        let r = periodic_energy_identity(&v, 1e-9).unwrap();
        assert!(r.lhs.abs() < previous && (r.lhs - r.rhs).abs() < 1e-8);
        previous = r.lhs.abs();
    }
}

#[test]
fn large_core_strain_limit() {
    let x = CircleConfig::<f64>::evenly_spaced(2, 0.0, 0.1, 1.0).unwrap();
    let rows = lambda_limit_convergence(&x, &[10.0, 100.0, 1000.0]).unwrap();
    for (row, big) in rows.iter().zip([10.0, 100.0, 1000.0]) {
        assert!((row.delta - 1.0 / (2.0 * (1.0 + big))).abs() < 1e-15);
        assert!(row.variation <= 2.0);
    }
    assert!(rows.windows(2).all(|w| w[1].gap < w[0].gap));
}

//! Minimal energy per unit length on an interval: inner minimization over positions at a
//! fixed number of cores, outer scan over that number, and density diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::displacement::{displacement_from_config, PiecewiseAffine};
use crate::error::{Error, Result};
use crate::halfline::{energy_and_gradient, energy_exact, evenly_spaced_config};
use crate::model::{validate_config, DislocationConfig, ModelParams};
use crate::optimize::{
    minimize_ordered, project_ordered, sample_ordered, Evaluation, LbfgsOptions, OrderedPolytope,
};
use crate::scalar::Scalar;

/// Fraction of `delta` kept between a center and the ends of its admissible range.
const RANGE_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub stall_tol: f64,
    pub history: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-8,
            stall_tol: 1e-6,
            history: 10,
        }
    }
}

/// Outcome of one constrained descent at a fixed number of cores.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionsResult<T = f64> {
    pub config: DislocationConfig<T>,
    pub energy: T,
    pub iterations: usize,
    pub projected_gradient: T,
    pub converged: bool,
    /// Energy after every accepted step.
    pub trace: Vec<T>,
}

fn bounds<T: Scalar>(params: &ModelParams<T>) -> (T, T) {
    let (lo, hi) = params.center_range();
    let m = T::lit(RANGE_MARGIN) * params.delta;
    (lo + m, hi - m)
}

fn check_feasible<T: Scalar>(n: usize, params: &ModelParams<T>) -> Result<()> {
    if n > params.max_dislocations() {
        return Err(Error::Infeasible {
            n,
            delta: params.delta.to_f64_lossy(),
            l: params.l.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Projects arbitrary positions onto the admissible set for `params`.
pub fn project_positions<T: Scalar>(x: &mut [T], params: &ModelParams<T>) {
    let (lo, hi) = bounds(params);
    project_ordered(x, params.delta, lo, hi);
}

/// Local minimizer of the energy over `x0.len()` centers, started from `x0`.
pub fn minimize_from<T: Scalar>(
    x0: Vec<T>,
    params: &ModelParams<T>,
    opts: &MinimizeOptions,
) -> Result<PositionsResult<T>> {
    params.validate()?;
    check_feasible(x0.len(), params)?;
    let (lo, hi) = bounds(params);
    let lopts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        stall_tol: opts.stall_tol,
        history: opts.history,
        max_step: (params.delta / T::lit(4.0)).to_f64_lossy(),
    };
    let poly = OrderedPolytope {
        gap: params.delta,
        lo,
        hi,
    };
    let out = minimize_ordered(
        x0,
        |x: &[T]| {
            let config = validate_config(x.to_vec(), *params)?;
            let (report, gradient) = energy_and_gradient(&config)?;
            Ok(Evaluation {
                value: report.value,
                gradient,
                noise: report.abs_error_estimate,
            })
        },
        &poly,
        &lopts,
    )?;
    Ok(PositionsResult {
        config: validate_config(out.x, *params)?,
        energy: out.value,
        iterations: out.iterations,
        projected_gradient: out.projected_gradient,
        converged: out.converged,
        trace: out.trace,
    })
}

/// Evenly spread start: centers at `(i + 1/2) l / n`.
pub fn symmetric_start<T: Scalar>(n: usize, params: &ModelParams<T>) -> Vec<T> {
    let step = params.l / T::from_usize_lossy(n.max(1));
    (0..n)
        .map(|i| (T::from_usize_lossy(i) + T::lit(0.5)) * step)
        .collect()
}

/// `n` consecutive periods of the zero-average-strain array, centered in the interval.
pub fn periodic_start<T: Scalar>(n: usize, params: &ModelParams<T>) -> Vec<T> {
    let gamma = params.period();
    let offset = (params.l - T::from_usize_lossy(n) * gamma) / T::lit(2.0);
    let half = params.delta / T::lit(2.0);
    let mut x: Vec<T> = (1..=n)
        .map(|i| offset + T::from_usize_lossy(i) * gamma - half)
        .collect();
    project_positions(&mut x, params);
    x
}

/// Local minimizer at fixed `n` from the symmetric start, with its energy.
pub fn minimize_positions<T: Scalar>(
    n: usize,
    params: &ModelParams<T>,
    opts: &MinimizeOptions,
) -> Result<(DislocationConfig<T>, T)> {
    params.validate()?;
    check_feasible(n, params)?;
    if n == 0 {
        let config = DislocationConfig::empty(*params);
        let e = energy_exact(&displacement_from_config(&config))?.value;
        return Ok((config, e));
    }
    let r = minimize_from(symmetric_start(n, params), params, opts)?;
    Ok((r.config, r.energy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Half-width of the initial window of core counts around the predicted count.
    pub window: usize,
    pub solver: MinimizeOptions,
}

impl Default for ClOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            seed: 0,
            window: 2,
            solver: MinimizeOptions::default(),
        }
    }
}

/// Best configuration found for the minimal energy per unit length at length `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ClEstimate<T = f64> {
    pub l: T,
    #[serde(rename = "N_star")]
    pub n_star: usize,
    pub centers_star: Vec<T>,
    pub c_l: T,
    pub restarts: usize,
    pub solver_tol: T,
    pub params: ModelParams<T>,
    /// Best energy found for every core count that was examined.
    pub scanned: Vec<(usize, T)>,
}

impl<T: Scalar> ClEstimate<T> {
    pub fn config(&self) -> Result<DislocationConfig<T>> {
        validate_config(self.centers_star.clone(), self.params)
    }
}

fn restart_rng(seed: u64, n: usize, restart: usize) -> ChaCha8Rng {
    // splitmix64 finalizer over the three inputs
    let mut z = seed
        .wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn better<T: Scalar>(e: T, n: usize, best: Option<(T, usize)>) -> bool {
    match best {
        None => true,
        Some((be, bn)) => {
            let tie = T::lit(1e-12) * T::one().max(be.abs());
            e < be - tie || ((e - be).abs() <= tie && n < bn)
        }
    }
}

/// Best energy over several starts at a fixed count `n >= 1`.
fn best_for_count<T: Scalar>(
    n: usize,
    params: &ModelParams<T>,
    opts: &ClOptions,
) -> Result<PositionsResult<T>> {
    let mut best: Option<PositionsResult<T>> = None;
    let mut last_err = None;
    let (lo, hi) = bounds(params);
    for r in 0..opts.restarts.max(1) {
        let mut rng = restart_rng(opts.seed, n, r);
        let start = match r {
            0 => symmetric_start(n, params),
            1 => periodic_start(n, params),
            _ if r % 2 == 1 && best.is_some() => {
                let base = best.as_ref().expect("checked").config.centers().to_vec();
                let spread = T::lit(0.3) * params.l / T::from_usize_lossy(n);
                base.iter()
                    .map(|&x| x + spread * T::lit(rng.gen_range(-1.0..1.0)))
                    .collect()
            }
            _ => sample_ordered(&mut rng, n, params.delta, lo, hi),
        };
        match minimize_from(start, params, &opts.solver) {
            Ok(res) => {
                if best.as_ref().map_or(true, |b| res.energy < b.energy) {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(Error::NoConvergence {
            iterations: 0,
            residual: f64::NAN,
        })
    })
}

/// Estimates the minimal energy per unit length by scanning core counts around
/// `n* l`, `n* = lambda / (delta (lambda + Lambda))`, with multistart descent at each count.
/// The window grows while the best count sits on its edge.
pub fn estimate_cl<T: Scalar>(params: &ModelParams<T>, opts: &ClOptions) -> Result<ClEstimate<T>> {
    params.validate()?;
    let n_max = params.max_dislocations();
    let predicted = (params.predicted_density() * params.l)
        .round()
        .to_usize()
        .unwrap_or(0)
        .min(n_max);
    let empty = DislocationConfig::empty(*params);
    let e0 = energy_exact(&displacement_from_config(&empty))?.value;
    let mut scanned = vec![(0usize, e0)];
    let mut best: (T, usize, Vec<T>) = (e0, 0, Vec::new());
    let consider = |e: T, n: usize, x: &[T], best: &mut (T, usize, Vec<T>)| {
        if better(e, n, Some((best.0, best.1))) {
            *best = (e, n, x.to_vec());
        }
    };
    if let Ok(even) = evenly_spaced_config(params) {
        let e = energy_exact(&displacement_from_config(&even))?.value;
        consider(e, even.len(), even.centers(), &mut best);
    }
    let mut lo = predicted.saturating_sub(opts.window).max(1);
    let mut hi = (predicted + opts.window).min(n_max);
    let mut done = vec![false; n_max + 1];
    done[0] = true;
    let mut failure = None;
    loop {
        for n in lo..=hi {
            if done[n] {
                continue;
            }
            done[n] = true;
            match best_for_count(n, params, opts) {
                Ok(res) => {
                    scanned.push((n, res.energy));
                    consider(res.energy, n, res.config.centers(), &mut best);
                }
                Err(e) => failure = Some(e),
            }
        }
        let grow_hi = best.1 == hi && hi < n_max;
        let grow_lo = best.1 == lo && lo > 1;
        if !grow_hi && !grow_lo {
            break;
        }
        if grow_hi {
            hi += 1;
        }
        if grow_lo {
            lo -= 1;
        }
    }
    if scanned.len() == 1 && hi >= lo && n_max > 0 {
        if let Some(e) = failure {
            return Err(e);
        }
    }
    scanned.sort_by_key(|&(n, _)| n);
    let c_l = best.0 / params.l;
    Ok(ClEstimate {
        l: params.l,
        n_star: best.1,
        centers_star: best.2,
        c_l,
        restarts: opts.restarts,
        solver_tol: T::lit(opts.solver.grad_tol) * T::one().max(c_l),
        params: *params,
        scanned,
    })
}

/// Both sides of `c_h <= l / (l - r) * c_l`, `r = l - h floor(l / h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport<T = f64> {
    pub h: T,
    pub l: T,
    pub c_h: T,
    pub c_l: T,
    pub remainder: T,
    pub factor: T,
    pub slack: T,
    pub holds: bool,
}

/// Compares two estimates, the first at the shorter length.
pub fn subadditivity_from_estimates<T: Scalar>(
    short: &ClEstimate<T>,
    long: &ClEstimate<T>,
) -> Result<SubadditivityReport<T>> {
    let (h, l) = (short.l, long.l);
    if !(h > T::zero() && h < l) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < h < l, got h = {h}, l = {l}"
        )));
    }
    let mut k = (l / h).floor();
    // l an exact multiple of h up to rounding
    if ((k + T::one()) * h - l).abs() <= T::lit(1e-12) * l {
        k = k + T::one();
    }
    let remainder = (l - h * k).max(T::zero());
    let factor = l / (l - remainder);
    let slack = T::lit(2.0) * (short.solver_tol + long.solver_tol);
    Ok(SubadditivityReport {
        h,
        l,
        c_h: short.c_l,
        c_l: long.c_l,
        remainder,
        factor,
        slack,
        holds: short.c_l <= factor * long.c_l + slack,
    })
}

/// Estimates `c_h` and `c_l` and checks the inequality between them.
pub fn subadditivity_check<T: Scalar>(
    h: T,
    l: T,
    params: &ModelParams<T>,
    opts: &ClOptions,
) -> Result<SubadditivityReport<T>> {
    if !(h > T::zero() && h < l) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < h < l, got h = {h}, l = {l}"
        )));
    }
    let short = estimate_cl(&params.with_length(h)?, opts)?;
    let long = estimate_cl(&params.with_length(l)?, opts)?;
    subadditivity_from_estimates(&short, &long)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram<T = f64> {
    pub bin_edges: Vec<T>,
    pub counts: Vec<usize>,
    pub normalized_density: Vec<T>,
}

/// Histogram of `x_i / l` over `[0, 1]`. Centers outside `[0, l]` are counted in the end bins.
pub fn dislocation_density<T: Scalar>(
    config: &DislocationConfig<T>,
    bins: usize,
) -> Result<DensityHistogram<T>> {
    histogram(config, bins, T::zero(), T::one(), true)
}

/// Histogram of `x_i / l` over `[a, b] ⊂ [0, 1]`; centers outside the window are ignored.
pub fn dislocation_density_in<T: Scalar>(
    config: &DislocationConfig<T>,
    bins: usize,
    a: T,
    b: T,
) -> Result<DensityHistogram<T>> {
    if !(a >= T::zero() && b <= T::one() && a < b) {
        return Err(Error::InvalidParameter(format!(
            "window must satisfy 0 <= a < b <= 1, got [{a}, {b}]"
        )));
    }
    histogram(config, bins, a, b, false)
}

fn histogram<T: Scalar>(
    config: &DislocationConfig<T>,
    bins: usize,
    a: T,
    b: T,
    clamp: bool,
) -> Result<DensityHistogram<T>> {
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    let l = config.params().l;
    let nb = T::from_usize_lossy(bins);
    let width = (b - a) / nb;
    let bin_edges = (0..=bins)
        .map(|i| a + (b - a) * T::from_usize_lossy(i) / nb)
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in config.centers() {
        let s = x / l;
        if !clamp && (s < a || s > b) {
            continue;
        }
        let k = ((s - a) / width)
            .floor()
            .to_isize()
            .unwrap_or(0)
            .clamp(0, bins as isize - 1);
        counts[k as usize] += 1;
    }
    let normalized_density = counts
        .iter()
        .map(|&c| T::from_usize_lossy(c) / (l * width))
        .collect();
    Ok(DensityHistogram {
        bin_edges,
        counts,
        normalized_density,
    })
}

/// Cross-interaction energy between `(0, s)` and `(s, L)` per unit length:
/// `(E - E_left - E_right) / (2 L)` with `L` the domain length of `u`.
pub fn split_energy_diagnostic<T: Scalar>(u: &PiecewiseAffine<T>, x_split: T) -> Result<T> {
    let (a, b) = (u.start(), u.end());
    if !(x_split >= a && x_split <= b) {
        return Err(Error::InvalidParameter(format!(
            "split point {x_split} outside [{a}, {b}]"
        )));
    }
    if x_split == a || x_split == b {
        return Ok(T::zero());
    }
    let u = u.without_degenerate();
    let total = energy_exact(&u)?.value;
    let left = energy_exact(&u.restrict(a, x_split)?.without_degenerate())?.value;
    let right = energy_exact(&u.restrict(x_split, b)?.without_degenerate())?.value;
    Ok(((total - left - right) / (T::lit(2.0) * u.length())).max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: f64) -> ModelParams {
        ModelParams::<f64>::new(1.0, 1.0, 0.1, l).unwrap()
    }

    #[test]
    fn zero_cores_give_affine_energy() {
        let (c, e) = minimize_positions(0, &params(3.0), &MinimizeOptions::default()).unwrap();
        assert!(c.is_empty());
        assert!((e - 9.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_cores_are_infeasible() {
        let p = params(1.0);
        assert!(minimize_positions(10, &p, &MinimizeOptions::default()).is_ok());
        assert!(matches!(
            minimize_positions(11, &p, &MinimizeOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn descent_never_increases_energy() {
        let p = params(2.0);
        let r = minimize_from(vec![0.1, 0.2, 0.35, 1.9], &p, &MinimizeOptions::default()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
        for w in r.config.centers().windows(2) {
            assert!(w[1] - w[0] >= 0.1 - 1e-12);
        }
    }

    #[test]
    fn single_core_settles_in_the_middle() {
        // oracle: golden-section search over the single center
        let p = params(1.0);
        let f = |x: f64| {
            let c = validate_config(vec![x], p).unwrap();
            energy_exact(&displacement_from_config(&c)).unwrap().value
        };
        let (mut a, mut b) = (0.2, 0.8);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let (c, d) = (b - g * (b - a), a + g * (b - a));
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let golden = (a + b) / 2.0;
        let (c, _) = minimize_positions(1, &p, &MinimizeOptions::default()).unwrap();
        assert!((golden - 0.5).abs() < 1e-3);
        assert!((c.centers()[0] - 0.5).abs() < 1e-3, "{:?}", c.centers());
    }

    #[test]
    fn histogram_counts_every_center() {
        let p = params(1.0);
        let c = validate_config(vec![-0.04, 0.15, 0.35, 0.55, 0.75, 1.02], p).unwrap();
        let h = dislocation_density(&c, 4).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 6);
        assert_eq!(h.counts, vec![2, 1, 1, 2]);
        let empty = dislocation_density(&DislocationConfig::empty(p), 3).unwrap();
        assert_eq!(empty.counts, vec![0, 0, 0]);
    }

    #[test]
    fn evenly_spaced_histogram_is_flat() {
        let p = params(4.0);
        let c = evenly_spaced_config(&p).unwrap();
        let h = dislocation_density(&c, 4).unwrap();
        for d in &h.normalized_density {
            assert!((d - 5.0).abs() < 1e-12, "{:?}", h.normalized_density);
        }
    }

    #[test]
    fn split_diagnostic_edge_cases() {
        let u = PiecewiseAffine::<f64>::constant(0.0, 2.0, 1.0).unwrap();
        assert_eq!(split_energy_diagnostic(&u, 1.0).unwrap(), 0.0);
        let v = PiecewiseAffine::<f64>::affine(0.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(split_energy_diagnostic(&v, 0.0).unwrap(), 0.0);
        // for u = x on [0, 2] split at 1: (4 - 1 - 1) / (2 * 2)
        assert!((split_energy_diagnostic(&v, 1.0).unwrap() - 0.5).abs() < 1e-13);
    }

    #[test]
    fn subadditivity_factor_exceeds_one() {
        let mk = |l: f64, c: f64| ClEstimate {
            l,
            n_star: 0,
            centers_star: vec![],
            c_l: c,
            restarts: 1,
            solver_tol: 1e-8,
            params: params(l),
            scanned: vec![],
        };
        let r = subadditivity_from_estimates(&mk(3.0, 0.5), &mk(7.0, 0.5)).unwrap();
        assert!((r.remainder - 1.0).abs() < 1e-12);
        assert!(r.factor > 1.0);
        assert!(r.holds);
        let exact = subadditivity_from_estimates(&mk(2.0, 0.5), &mk(6.0, 0.5)).unwrap();
        assert_eq!(exact.remainder, 0.0);
        assert_eq!(exact.factor, 1.0);
    }
}

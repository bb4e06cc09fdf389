//! The nonlocal energy `∬ |u(x) - u(y)|² / |x - y|²` of a piecewise-affine displacement.
//!
//! The closed form integrates the `(x - y)^-2` kernel first. Writing
//! `u(x) - u(y) = ∫ u'` gives `E = ∬ u'(t) u'(s) k(t, s)` with
//! `k = 2 log(b (L - a) / (L (b - a)))`, `a = min(t, s)`, `b = max(t, s)`. After rescaling
//! the domain to `[0, 1]` (the energy is dilation invariant) the kernel splits into
//! `log b`, `log(1 - a)` and `-log|t - s|`. The first two reduce to one-dimensional
//! logarithmic moments per segment, the last one to a double sum over slope jumps.

use serde::{Deserialize, Serialize};

use crate::displacement::{displacement_from_config, PiecewiseAffine, RescaledDisplacement};
use crate::error::{Error, Result};
use crate::model::{validate_config, DislocationConfig, ModelParams};
use crate::quadrature::{integrate_grid_strips, GridStrips};
use crate::scalar::{KahanSum, Scalar};

/// Default absolute tolerance of [`energy_quadrature`].
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
/// Default region budget of the adaptive quadrature.
pub const DEFAULT_QUAD_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyMethod {
    ClosedForm,
    AdaptiveQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport<T = f64> {
    pub value: T,
    pub method: EnergyMethod,
    pub abs_error_estimate: T,
}

/// `∫_0^τ log(1 - σ) dσ` for `τ ∈ [0, 1]`.
fn log_moment0<T: Scalar>(tau: T) -> T {
    if tau <= T::lit(0.5) {
        let mut acc = T::zero();
        let mut pow = tau * tau;
        for k in 1..400 {
            let kf = T::from_usize_lossy(k);
            let term = pow / (kf * (kf + T::one()));
            acc += term;
            if term <= T::epsilon() * acc {
                break;
            }
            pow *= tau;
        }
        -acc
    } else {
        let c = T::one() - tau;
        -tau - c.xlogx()
    }
}

/// `∫_0^τ (τ - σ) log(1 - σ) dσ` for `τ ∈ [0, 1]`.
fn log_moment1<T: Scalar>(tau: T) -> T {
    if tau <= T::lit(0.5) {
        let mut acc = T::zero();
        let mut pow = tau * tau * tau;
        for k in 1..400 {
            let kf = T::from_usize_lossy(k);
            let term = pow / (kf * (kf + T::one()) * (kf + T::lit(2.0)));
            acc += term;
            if term <= T::epsilon() * acc {
                break;
            }
            pow *= tau;
        }
        -acc
    } else {
        let c = T::one() - tau;
        c * c.xlogx() / T::lit(2.0) - T::lit(0.75) * c * c + c - T::lit(0.25)
    }
}

/// `∫_a^b log s ds` for `0 <= a <= b`.
fn int_log<T: Scalar>(a: T, b: T) -> T {
    let h = b - a;
    if h <= T::zero() {
        return T::zero();
    }
    h * b.ln() + b * log_moment0(h / b)
}

/// `∫_a^b (s - a) log s ds` for `0 <= a <= b`.
fn int_lin_log<T: Scalar>(a: T, b: T) -> T {
    let h = b - a;
    if h <= T::zero() {
        return T::zero();
    }
    h * h / T::lit(2.0) * b.ln() + b * b * log_moment1(h / b)
}

/// `u` seen on `[0, 1]`: breakpoints, slopes, nodal values and the slope jump at every
/// breakpoint (slopes are taken as zero outside the domain).
struct UnitView<T> {
    t: Vec<T>,
    slopes: Vec<T>,
    values: Vec<T>,
    jumps: Vec<T>,
}

impl<T: Scalar> UnitView<T> {
    fn new(u: &PiecewiseAffine<T>) -> Result<Self> {
        if let Some(index) = u.degenerate_segment() {
            return Err(Error::DegenerateSegment { index });
        }
        let (a, len) = (u.start(), u.length());
        let bps = u.breakpoints();
        let s = bps.len() - 1;
        let mut t: Vec<T> = bps.iter().map(|&b| (b - a) / len).collect();
        t[0] = T::zero();
        t[s] = T::one();
        let slopes: Vec<T> = u.slopes().iter().map(|&v| v * len).collect();
        let jumps = (0..=s)
            .map(|k| {
                let left = if k == 0 { T::zero() } else { slopes[k - 1] };
                let right = if k == s { T::zero() } else { slopes[k] };
                right - left
            })
            .collect();
        Ok(Self {
            t,
            slopes,
            values: u.nodal_values().to_vec(),
            jumps,
        })
    }

    /// Energy accumulator and the sum of absolute values of the pair terms.
    fn assemble(&self) -> (KahanSum<T>, T) {
        let Self {
            t,
            slopes,
            values,
            jumps,
        } = self;
        let s = slopes.len();
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let v0 = values[0];
        let vend = values[s];
        let mut acc = KahanSum::new();
        for i in 0..s {
            let (a, b) = (t[i], t[i + 1]);
            let sig = slopes[i];
            // log max(t, s): diagonal block plus the pairs with the other segment on the left
            acc.add(four * sig * sig * int_lin_log(a, b));
            acc.add(four * sig * (values[i] - v0) * int_log(a, b));
            // log(1 - min(t, s)) mirrors the same structure from the right end
            let (ra, rb) = (T::one() - b, T::one() - a);
            acc.add(four * sig * sig * int_lin_log(ra, rb));
            acc.add(four * sig * (vend - values[i + 1]) * int_log(ra, rb));
        }
        let mut pair_magnitude = T::zero();
        for m in 0..t.len() {
            let (tm, jm) = (t[m], jumps[m]);
            if jm == T::zero() {
                continue;
            }
            let mut row = T::zero();
            let mut row_abs = T::zero();
            for n in m + 1..t.len() {
                let x = t[n] - tm;
                let term = jumps[n] * x * x.xlogx();
                row += term;
                row_abs += term.abs();
            }
            acc.add(two * jm * row);
            pair_magnitude += two * jm.abs() * row_abs;
        }
        let du = vend - v0;
        acc.add(T::lit(3.0) * du * du);
        (acc, pair_magnitude)
    }
}

fn report<T: Scalar>(value: T, magnitude: T) -> EnergyReport<T> {
    EnergyReport {
        value: value.max(T::zero()),
        method: EnergyMethod::ClosedForm,
        abs_error_estimate: T::lit(8.0) * T::epsilon() * magnitude,
    }
}

/// Closed-form energy of `u` over the square of its own domain.
pub fn energy_exact<T: Scalar>(u: &PiecewiseAffine<T>) -> Result<EnergyReport<T>> {
    let view = UnitView::new(u)?;
    let (acc, pair_magnitude) = view.assemble();
    Ok(report(acc.value(), acc.magnitude() + pair_magnitude))
}

/// Adaptive quadrature of the same energy; cells follow the breakpoints and the diagonal.
pub fn energy_quadrature<T: Scalar>(u: &PiecewiseAffine<T>, tol: T) -> Result<EnergyReport<T>> {
    energy_quadrature_with_budget(u, tol, DEFAULT_QUAD_BUDGET)
}

pub fn energy_quadrature_with_budget<T: Scalar>(
    u: &PiecewiseAffine<T>,
    tol: T,
    max_regions: usize,
) -> Result<EnergyReport<T>> {
    let u = u.without_degenerate();
    let len = u.length();
    let domain = GridStrips::square(
        u.breakpoints().to_vec(),
        vec![(-len, T::zero()), (T::zero(), len)],
        vec![T::zero()],
    );
    let r = integrate_grid_strips(
        |x, y| {
            let q = u.difference_quotient(x, y);
            q * q
        },
        &domain,
        tol,
        max_regions,
    )?;
    Ok(EnergyReport {
        value: r.value,
        method: EnergyMethod::AdaptiveQuadrature,
        abs_error_estimate: r.abs_error,
    })
}

/// `w(x) = u(l x) / sqrt(l)` together with its unit-interval energy, which equals `E(u) / l`.
pub fn rescaled_energy<T: Scalar>(
    u: &PiecewiseAffine<T>,
    l: T,
) -> Result<(RescaledDisplacement<T>, T)> {
    let w = RescaledDisplacement::from_displacement(u, l)?;
    let f = energy_exact(&w.w)?.value;
    Ok((w, f))
}

/// Energy of a configuration's displacement on `(0, l)`.
pub fn config_energy<T: Scalar>(config: &DislocationConfig<T>) -> Result<EnergyReport<T>> {
    energy_exact(&displacement_from_config(config))
}

/// `∫_a^b p log p dp` for `0 <= a <= b`.
fn int_xlogx<T: Scalar>(a: T, b: T) -> T {
    int_lin_log(a, b) + a * int_log(a, b)
}

/// `x² log|x| / 2 - 3x² / 4`, a second antiderivative of `log|x|`.
fn second_antiderivative<T: Scalar>(x: T) -> T {
    x * x.xlogx() / T::lit(2.0) - T::lit(0.75) * x * x
}

/// `x log|x| - x`.
fn first_antiderivative<T: Scalar>(x: T) -> T {
    x.xlogx() - x
}

/// `∬ log|s - t|` over two intervals of width `w` whose left ends are `d` apart, and its
/// derivative in `d`. Far apart the second differences are summed as power series in
/// `w / d` so nothing cancels.
fn equal_pair<T: Scalar>(d: T, w: T) -> (T, T) {
    let h = w / d;
    if h <= T::lit(0.25) {
        let h2 = h * h;
        let mut pow = h2 * h2;
        let (mut sv, mut sd) = (T::zero(), T::zero());
        let mut n = 4usize;
        while n < 200 {
            let nf = T::from_usize_lossy(n);
            let tv = pow / (nf * (nf - T::one()) * (nf - T::lit(2.0)));
            let td = pow / (nf * (nf - T::one()));
            sv += tv;
            sd += td;
            if td <= T::epsilon() * h2 * T::lit(1e-3) {
                break;
            }
            pow *= h2;
            n += 2;
        }
        let value = w * w * d.ln() - T::lit(2.0) * d * d * sv;
        let derivative = d * (h2 + T::lit(2.0) * sd);
        (value, derivative)
    } else {
        let two = T::lit(2.0);
        let value = second_antiderivative(d + w) - two * second_antiderivative(d)
            + second_antiderivative(d - w);
        let derivative = first_antiderivative(d + w) - two * first_antiderivative(d)
            + first_antiderivative(d - w);
        (value, derivative)
    }
}

/// Core clipped to the unit interval.
struct Core<T> {
    a: T,
    b: T,
    a_free: bool,
    b_free: bool,
    index: usize,
}

impl<T: Scalar> Core<T> {
    fn rigid(&self) -> bool {
        self.a_free && self.b_free
    }
}

/// Energy of a configuration and its gradient with respect to the centers.
///
/// With `u' = λ - (λ + Λ) Σ χ_i` on `(0, l)` the energy is a quadratic form in the core
/// indicators: one constant, one term per core against the whole interval, and one term
/// per pair of cores. Pairs of full-width cores only see second differences of the log
/// kernel, which are evaluated without cancellation. Edges that are clipped at `0` or `l`
/// do not move with the center.
pub fn energy_and_gradient<T: Scalar>(
    config: &DislocationConfig<T>,
) -> Result<(EnergyReport<T>, Vec<T>)> {
    let p = config.params();
    let len = p.l;
    let lam = p.lambda * len;
    let kk = (p.lambda + p.big_lambda) * len;
    let width = p.delta / len;
    let half = width / T::lit(2.0);
    let (zero, one, two, four) = (T::zero(), T::one(), T::lit(2.0), T::lit(4.0));

    let mut cores: Vec<Core<T>> = Vec::with_capacity(config.len());
    for (index, &c) in config.centers().iter().enumerate() {
        let c = c / len;
        let (a, b) = (c - half, c + half);
        let (ac, bc) = (a.max(zero), b.min(one));
        if bc <= ac {
            continue;
        }
        cores.push(Core {
            a: ac,
            b: bc,
            a_free: a > zero,
            b_free: b < one,
            index,
        });
    }
    let n = cores.len();
    let w: Vec<T> = cores.iter().map(|c| c.b - c.a).collect();
    let lg: Vec<T> = cores.iter().map(|c| int_log(c.a, c.b)).collect();
    let lg1: Vec<T> = cores
        .iter()
        .map(|c| int_log(one - c.b, one - c.a))
        .collect();
    let mut before_w = vec![zero; n];
    let mut before_lg1 = vec![zero; n];
    for k in 1..n {
        before_w[k] = before_w[k - 1] + w[k - 1];
        before_lg1[k] = before_lg1[k - 1] + lg1[k - 1];
    }
    let mut after_w = vec![zero; n];
    let mut after_lg = vec![zero; n];
    for k in (0..n.saturating_sub(1)).rev() {
        after_w[k] = after_w[k + 1] + w[k + 1];
        after_lg[k] = after_lg[k + 1] + lg[k + 1];
    }

    let mut against_domain = KahanSum::new();
    let mut diagonal = KahanSum::new();
    let mut linear = KahanSum::new();
    for (k, c) in cores.iter().enumerate() {
        against_domain.add(-two * (int_xlogx(c.a, c.b) + int_xlogx(one - c.b, one - c.a)));
        let self_log = w[k] * w[k] * (w[k].ln() - T::lit(1.5));
        diagonal.add(
            two * (two * int_lin_log(c.a, c.b) + two * int_lin_log(one - c.b, one - c.a)
                - self_log),
        );
        linear.add(before_w[k] * lg[k] + after_w[k] * lg1[k]);
    }

    // pair sums of ∬ log|s - t|; `shift` holds d/dc for rigid cores, `da`/`db` edge derivatives
    let mut pair = KahanSum::new();
    let mut pair_abs = zero;
    let mut shift = vec![zero; n];
    let mut da = vec![zero; n];
    let mut db = vec![zero; n];
    for i in 0..n {
        let (ci, rigid_i) = (&cores[i], cores[i].rigid());
        let mut row = zero;
        let mut row_abs = zero;
        for j in i + 1..n {
            let cj = &cores[j];
            if rigid_i && cj.rigid() {
                let (v, dv) = equal_pair(cj.a - ci.a, width);
                row += v;
                row_abs += v.abs();
                shift[i] -= dv;
                shift[j] += dv;
            } else {
                let g = second_antiderivative::<T>;
                let gd = first_antiderivative::<T>;
                let v = g(cj.b - ci.a) - g(cj.a - ci.a) - g(cj.b - ci.b) + g(cj.a - ci.b);
                row += v;
                row_abs += v.abs();
                da[i] += -gd(cj.b - ci.a) + gd(cj.a - ci.a);
                db[i] += gd(cj.b - ci.b) - gd(cj.a - ci.b);
                da[j] += -gd(cj.a - ci.a) + gd(cj.a - ci.b);
                db[j] += gd(cj.b - ci.a) - gd(cj.b - ci.b);
            }
        }
        pair.add(row);
        pair_abs += row_abs;
    }

    let value = lam * lam - two * lam * kk * against_domain.value()
        + kk * kk * (diagonal.value() + four * (linear.value() - pair.value()));
    let magnitude = lam * lam
        + two * lam * kk * against_domain.magnitude()
        + kk * kk
            * (diagonal.magnitude() + four * (linear.magnitude() + pair.magnitude() + pair_abs));

    let edge_kernel = |x: T| -two * (x.xlogx() + (one - x).xlogx());
    let mut grad = vec![zero; config.len()];
    for (k, c) in cores.iter().enumerate() {
        let mut g = -four * kk * kk * shift[k];
        if c.a_free {
            let d_domain = -edge_kernel(c.a);
            let d_diag = -four * (lg[k] + w[k] * (one - c.a).ln() - first_antiderivative(w[k]));
            let d_lin = -after_lg[k]
                - before_lg1[k]
                - before_w[k] * c.a.ln()
                - after_w[k] * (one - c.a).ln();
            g += -two * lam * kk * d_domain + kk * kk * (d_diag + four * (d_lin - da[k]));
        }
        if c.b_free {
            let d_domain = edge_kernel(c.b);
            let d_diag = four * (w[k] * c.b.ln() + lg1[k] - first_antiderivative(w[k]));
            let d_lin = after_lg[k]
                + before_lg1[k]
                + before_w[k] * c.b.ln()
                + after_w[k] * (one - c.b).ln();
            g += -two * lam * kk * d_domain + kk * kk * (d_diag + four * (d_lin - db[k]));
        }
        grad[c.index] = g / len;
    }
    Ok((report(value, magnitude), grad))
}

/// Quantities of the a-priori bound `E <= (2 M² + 2 Λ²) L` for an oscillation `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationBound<T = f64> {
    pub oscillation: T,
    pub constant: T,
    pub energy: T,
    pub holds: bool,
}

/// Checks `E(u) <= (2 M² + 2 Λ²) L` with `M` the oscillation of `u` and `L` its domain length.
/// The bound is only claimed for `L > 1`.
pub fn oscillation_certificate<T: Scalar>(
    u: &PiecewiseAffine<T>,
    big_lambda: T,
) -> Result<OscillationBound<T>> {
    let m = u.oscillation();
    let c = T::lit(2.0) * (m * m + big_lambda * big_lambda);
    let energy = energy_exact(&u.without_degenerate())?.value;
    Ok(OscillationBound {
        oscillation: m,
        constant: c,
        energy,
        holds: energy <= c * u.length(),
    })
}

/// Number of full periods `floor(l / γ)` used by [`evenly_spaced_config`].
pub fn evenly_spaced_count<T: Scalar>(params: &ModelParams<T>) -> usize {
    let ratio = params.l / params.period();
    (ratio * (T::one() + T::lit(1e-12)))
        .floor()
        .to_usize()
        .unwrap_or(0)
}

/// Cores `(iγ - δ, iγ)` for `i = 1..=floor(l / γ)`, `γ = (λ + Λ) δ / λ`, so that `u`
/// returns to zero at the end of every period.
pub fn evenly_spaced_config<T: Scalar>(params: &ModelParams<T>) -> Result<DislocationConfig<T>> {
    let gamma = params.period();
    if params.l <= gamma {
        return Err(Error::TooShort {
            l: params.l.to_f64_lossy(),
            gamma: gamma.to_f64_lossy(),
        });
    }
    let n = evenly_spaced_count(params);
    let half = params.delta / T::lit(2.0);
    let centers = (1..=n)
        .map(|i| T::from_usize_lossy(i) * gamma - half)
        .collect();
    validate_config(centers, *params)
}

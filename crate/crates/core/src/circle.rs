//! Periodic model on the unit circle: points with a minimal circular separation, their
//! logarithmic pair energy, the cutoff energy of the associated step profile, and the
//! finite-core displacements that approximate it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::displacement::PiecewiseAffine;
use crate::error::{Error, Result};
use crate::model::SEPARATION_SLACK;
use crate::quadrature::{integrate_grid_strips, GridStrips};
use crate::scalar::{KahanSum, Scalar};

/// `min(|x - y|, 1 - |x - y|)` for `x, y` in `[0, 1)`.
pub fn circ_dist<T: Scalar>(x: T, y: T) -> T {
    let d = (x - y).abs();
    d.min(T::one() - d)
}

/// Signed offset `y - x` reduced to `(-1/2, 1/2]`.
fn signed_offset<T: Scalar>(x: T, y: T) -> T {
    let t = y - x;
    t - (t - T::lit(0.5)).ceil()
}

/// Pair potential `-ln m + 2 m` with `m = min(d, 1 - d)`; convex and C¹ on `(0, 1)`.
pub fn pair_potential<T: Scalar>(d: T) -> T {
    let m = d.min(T::one() - d);
    -m.ln() + T::lit(2.0) * m
}

/// Points on the circle `[0, 1)` with pairwise circular distance at least `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCircle<T>")]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CircleConfig<T = f64> {
    points: Vec<T>,
    rho: T,
    lambda: T,
}

#[derive(Deserialize)]
struct RawCircle<T> {
    points: Vec<T>,
    rho: T,
    lambda: T,
}

impl<T: Scalar> TryFrom<RawCircle<T>> for CircleConfig<T> {
    type Error = Error;

    fn try_from(raw: RawCircle<T>) -> Result<Self> {
        CircleConfig::new(raw.points, raw.rho, raw.lambda)
    }
}

impl<T: Scalar> CircleConfig<T> {
    /// Wraps the points into `[0, 1)`, sorts them and checks `0 < rho < 1/N` and the separation.
    pub fn new(points: Vec<T>, rho: T, lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda = {} must be positive",
                lambda.to_f64_lossy()
            )));
        }
        let n = points.len();
        if !(rho > T::zero()) || (n > 0 && rho * T::from_usize_lossy(n) >= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "cutoff {} must lie in (0, 1/N) for N = {n}",
                rho.to_f64_lossy()
            )));
        }
        let mut pts = Vec::with_capacity(n);
        for p in points {
            if !p.is_finite() {
                return Err(Error::InvalidInput("non-finite point".into()));
            }
            let w = p - p.floor();
            pts.push(if w >= T::one() { T::zero() } else { w });
        }
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let slack = T::lit(SEPARATION_SLACK);
        for i in 0..n {
            for j in i + 1..n {
                let d = circ_dist(pts[i], pts[j]);
                if d == T::zero() {
                    return Err(Error::CoincidentPoints(i, j));
                }
                if d < rho - slack {
                    return Err(Error::CutoffTooLarge {
                        rho: rho.to_f64_lossy(),
                        min_dist: d.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(Self {
            points: pts,
            rho,
            lambda,
        })
    }

    /// `n` points with all consecutive gaps `1/n`, starting at `offset`.
    pub fn evenly_spaced(n: usize, offset: T, rho: T, lambda: T) -> Result<Self> {
        let step = T::one() / T::from_usize_lossy(n.max(1));
        Self::new(
            (0..n)
                .map(|i| offset + T::from_usize_lossy(i) * step)
                .collect(),
            rho,
            lambda,
        )
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rotated(&self, c: T) -> Result<Self> {
        Self::new(
            self.points.iter().map(|&p| p + c).collect(),
            self.rho,
            self.lambda,
        )
    }

    pub fn min_distance(&self) -> Option<T> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| circ_dist(self.points[i], self.points[j]))
            .reduce(|a, b| a.min(b))
    }

    /// Consecutive circular gaps in sorted order, the last one wrapping around.
    pub fn gaps(&self) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                if i + 1 < n {
                    self.points[i + 1] - self.points[i]
                } else {
                    T::one() - self.points[n - 1] + self.points[0]
                }
            })
            .collect()
    }

    pub fn max_gap_error(&self) -> T {
        let target = T::one() / T::from_usize_lossy(self.len().max(1));
        self.gaps()
            .iter()
            .fold(T::zero(), |m, &g| m.max((g - target).abs()))
    }
}

/// Ordered-pair energy `2 sum_{i != j} f(d_ij)` of raw points.
pub fn energy_tilde_points<T: Scalar>(points: &[T]) -> Result<T> {
    let mut acc = KahanSum::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = circ_dist(points[i], points[j]);
            if d == T::zero() {
                return Err(Error::CoincidentPoints(i, j));
            }
            acc.add(T::lit(4.0) * pair_potential(d));
        }
    }
    Ok(acc.value())
}

pub fn energy_tilde<T: Scalar>(x: &CircleConfig<T>) -> Result<T> {
    energy_tilde_points(x.points())
}

/// First variation of the pair energy, summed over the half-open window
/// `(x_i - 1/2, x_i + 1/2]` of the periodic extension.
pub fn gradient_tilde<T: Scalar>(x: &CircleConfig<T>) -> Result<Vec<T>> {
    let slack = T::lit(SEPARATION_SLACK);
    let pts = x.points();
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            if circ_dist(pts[i], pts[j]) <= x.rho() + slack {
                return Err(Error::OnBoundary(i, j));
            }
        }
    }
    Ok(gradient_points(pts))
}

fn gradient_points<T: Scalar>(pts: &[T]) -> Vec<T> {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    (0..pts.len())
        .map(|i| {
            let mut acc = KahanSum::new();
            for (j, &y) in pts.iter().enumerate() {
                if j == i {
                    continue;
                }
                let t = signed_offset(pts[i], y);
                if t > T::zero() {
                    acc.add(four * (T::one() - two * t) / t);
                } else {
                    acc.add(four * (-T::one() - two * t) / -t);
                }
            }
            acc.value()
        })
        .collect()
}

/// Intervals of `y` in `[0, 1)` on which the number of jump points in `(y, y + z]` is constant.
fn count_cells<T: Scalar>(points: &[T], z: T) -> Vec<(T, T, usize)> {
    // entering at y_k - z, leaving at y_k
    let mut events: Vec<(T, i32)> = Vec::with_capacity(2 * points.len());
    let mut count = 0usize;
    for &p in points {
        let enter = p - z;
        let enter = enter - enter.floor();
        events.push((enter, 1));
        events.push((p, -1));
        if p > T::zero() && p <= z {
            count += 1;
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
    let mut cells = Vec::with_capacity(events.len() + 1);
    let mut y = T::zero();
    let mut n = count as i64;
    // the initial count already describes y just above 0
    for (pos, delta) in events.into_iter().filter(|e| e.0 > T::zero()) {
        if pos > y {
            cells.push((y, pos, n as usize));
            y = pos;
        }
        n += i64::from(delta);
    }
    if y < T::one() {
        cells.push((y, T::one(), n as usize));
    }
    cells
}

/// `int_0^1 n(y, z)^2 dy`.
fn squared_count_integral<T: Scalar>(points: &[T], z: T) -> T {
    count_cells(points, z)
        .into_iter()
        .map(|(a, b, n)| {
            let n = T::from_usize_lossy(n);
            n * n * (b - a)
        })
        .sum()
}

/// Cutoff energy of the step profile `h_X` with jumps `-lambda/N` at the points.
///
/// For fixed `z` the jump count over `(y, y + z]` is constant on cells bounded by the
/// lines `y = y_k` and `y = y_k - z`. Between consecutive values of `z` where two such lines
/// cross, the squared count integrates in `y` to an affine function of `z`, which is then
/// integrated exactly against `z^-2`. Negative `z` contributes the same as positive `z`.
pub fn energy_erho<T: Scalar>(x: &CircleConfig<T>) -> Result<T> {
    let n = x.len();
    let rho = x.rho();
    if let Some(d) = x.min_distance() {
        if d <= rho {
            return Err(Error::CutoffTooLarge {
                rho: rho.to_f64_lossy(),
                min_dist: d.to_f64_lossy(),
            });
        }
    }
    let half = T::lit(0.5);
    let mut cuts = vec![rho, half];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = circ_dist(x.points()[i], x.points()[j]);
                if d > rho && d < half {
                    cuts.push(d);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cuts.dedup();
    let mut acc = KahanSum::new();
    let mut s0 = squared_count_integral(x.points(), rho);
    for w in cuts.windows(2) {
        let (z0, z1) = (w[0], w[1]);
        let s1 = squared_count_integral(x.points(), z1);
        let slope = (s1 - s0) / (z1 - z0);
        let intercept = s0 - slope * z0;
        acc.add(intercept * (T::one() / z0 - T::one() / z1));
        acc.add(slope * (z1 / z0).ln());
        s0 = s1;
    }
    let jump = x.lambda() / T::from_usize_lossy(n.max(1));
    Ok(T::lit(2.0) * jump * jump * acc.value())
}

/// `d_i = x_{i+k} - x_i`, wrapping past the last point; `G_k = sum_i f(d_i)`.
pub fn gk_decomposition<T: Scalar>(x: &CircleConfig<T>, k: usize) -> Result<(T, Vec<T>)> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(Error::BadK {
            k,
            max: n.saturating_sub(1),
        });
    }
    let p = x.points();
    let d: Vec<T> = (0..n)
        .map(|i| {
            if i + k < n {
                p[i + k] - p[i]
            } else {
                T::one() - (p[i] - p[i + k - n])
            }
        })
        .collect();
    let g = d.iter().map(|&di| pair_potential(di)).sum();
    Ok((g, d))
}

/// `2 N sum_{k=1}^{N-1} f(k/N)`, the pair energy of evenly spaced points.
pub fn evenly_spaced_energy<T: Scalar>(n: usize) -> T {
    let nf = T::from_usize_lossy(n);
    let s: T = (1..n)
        .map(|k| pair_potential(T::from_usize_lossy(k) / nf))
        .sum();
    T::lit(2.0) * nf * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component is below this value.
    pub grad_tol: f64,
}

impl Default for CircleOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CircleResult<T = f64> {
    pub config: CircleConfig<T>,
    pub energy_tilde: T,
    pub start_energy: T,
    pub iterations: usize,
    pub max_gap_error: T,
}

/// Uniformly distributed admissible configuration: gaps `rho + slack * e_i / sum e`
/// with exponential `e_i`, rotated by a uniform offset.
pub fn random_circle_config<T: Scalar, R: Rng>(
    rng: &mut R,
    n: usize,
    rho: T,
    lambda: T,
) -> Result<CircleConfig<T>> {
    let slack = T::one() - rho * T::from_usize_lossy(n);
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    let offset = T::lit(rng.gen::<f64>());
    let mut pos = offset;
    let mut pts = Vec::with_capacity(n);
    for ei in e {
        pts.push(pos);
        pos = pos + rho + slack * T::lit(ei / total);
    }
    CircleConfig::new(pts, rho, lambda)
}

/// Gradient descent on the pair energy from a random admissible start.
///
/// The gradient is projected onto zero-sum directions, which fixes the mean of the points.
/// Steps are Barzilai-Borwein with Armijo backtracking, relaxed to a decrease of the largest
/// gradient component once energy differences reach rounding level. A trial step that brings two points
/// closer than `rho` or moves a point by `rho/2` or more is shortened.
pub fn minimize_circle<T: Scalar>(
    n: usize,
    rho: T,
    seed: u64,
    opts: &CircleOptions,
) -> Result<CircleResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_circle_config(&mut rng, n, rho, T::one())?;
    minimize_circle_from(start, opts)
}

pub fn minimize_circle_from<T: Scalar>(
    start: CircleConfig<T>,
    opts: &CircleOptions,
) -> Result<CircleResult<T>> {
    let rho = start.rho();
    let lambda = start.lambda();
    let n = start.len();
    let mut x = start.points().to_vec();
    let mut e = energy_tilde_points(&x)?;
    let start_energy = e;
    let mut g = zero_sum(gradient_points(&x));
    let mut prev: Option<(Vec<T>, Vec<T>)> = None;
    let slack = T::lit(SEPARATION_SLACK);
    let cap = rho / T::lit(2.0);
    for it in 0..opts.max_iter {
        let gmax = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if gmax <= T::lit(opts.grad_tol) || n < 2 {
            let config = CircleConfig::new(x, rho, lambda)?;
            let max_gap_error = config.max_gap_error();
            return Ok(CircleResult {
                config,
                energy_tilde: e,
                start_energy,
                iterations: it,
                max_gap_error,
            });
        }
        let gg: T = g.iter().map(|&v| v * v).sum();
        let mut alpha = match &prev {
            Some((s, y)) => {
                let sy: T = s.iter().zip(y).map(|(&a, &b)| a * b).sum();
                let ss: T = s.iter().map(|&a| a * a).sum();
                if sy > T::zero() {
                    ss / sy
                } else {
                    T::lit(1e-3)
                }
            }
            None => T::lit(1e-3),
        };
        alpha = alpha.min(cap * T::lit(0.99) / gmax);
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<T> = x.iter().zip(&g).map(|(&a, &b)| a - alpha * b).collect();
            let feasible = (0..n).all(|i| {
                (i + 1..n).all(|j| circ_dist(wrap(trial[i]), wrap(trial[j])) >= rho - slack)
            });
            if feasible {
                let et = energy_tilde_points(&trial)?;
                if et <= e - T::lit(1e-4) * alpha * gg {
                    accepted = Some((trial, et, None));
                    break;
                }
                // below the rounding level of the energy, fall back on the exact gradient
                let noise = T::lit(16.0) * T::epsilon() * e.abs();
                if et <= e + noise {
                    let gt = zero_sum(gradient_points(&trial));
                    let gt_max = gt.iter().fold(T::zero(), |m, v| m.max(v.abs()));
                    if gt_max < gmax {
                        accepted = Some((trial, et, Some(gt)));
                        break;
                    }
                }
            }
            alpha = alpha / T::lit(2.0);
        }
        let Some((trial, et, g_trial)) = accepted else {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: gmax.to_f64_lossy(),
            });
        };
        let g_new = g_trial.unwrap_or_else(|| zero_sum(gradient_points(&trial)));
        let s = trial.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        prev = Some((s, y));
        x = trial;
        e = et;
        g = g_new;
    }
    let gmax = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: gmax.to_f64_lossy(),
    })
}

fn wrap<T: Scalar>(p: T) -> T {
    p - p.floor()
}

fn zero_sum<T: Scalar>(mut g: Vec<T>) -> Vec<T> {
    if g.is_empty() {
        return g;
    }
    let mean = g.iter().copied().sum::<T>() / T::from_usize_lossy(g.len());
    for v in &mut g {
        *v -= mean;
    }
    g
}

/// `[E_rho(X1) / (lambda/N)^2 - Etilde(X1)] - [E_rho(X2) / (lambda/N)^2 - Etilde(X2)]`.
pub fn constancy_check<T: Scalar>(x1: &CircleConfig<T>, x2: &CircleConfig<T>) -> Result<T> {
    if x1.len() != x2.len() || x1.rho() != x2.rho() || x1.lambda() != x2.lambda() {
        return Err(Error::InvalidInput(
            "configurations must share N, rho and lambda".into(),
        ));
    }
    let side = |x: &CircleConfig<T>| -> Result<T> {
        let jump = x.lambda() / T::from_usize_lossy(x.len().max(1));
        Ok(energy_erho(x)? / (jump * jump) - energy_tilde(x)?)
    };
    Ok(side(x1)? - side(x2)?)
}

/// Periodic displacement with slope `-Lambda` on `N` arcs of length
/// `delta = lambda / (N (lambda + Lambda))` centered at the points and slope `lambda` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicDisplacement<T = f64> {
    profile: PiecewiseAffine<T>,
    lambda: T,
    big_lambda: T,
    centers: Vec<T>,
}

impl<T: Scalar> PeriodicDisplacement<T> {
    pub fn new(centers: &[T], lambda: T, big_lambda: T) -> Result<Self> {
        let n = centers.len();
        if n == 0 || !(lambda > T::zero()) || !(big_lambda > T::zero()) {
            return Err(Error::InvalidParameter(
                "need N >= 1 and positive strains".into(),
            ));
        }
        let delta = Self::core_width(n, lambda, big_lambda);
        let slack = T::lit(SEPARATION_SLACK);
        for i in 0..n {
            for j in i + 1..n {
                if circ_dist(wrap(centers[i]), wrap(centers[j])) < delta - slack {
                    return Err(Error::SeparationViolation {
                        left: centers[i].to_f64_lossy(),
                        right: centers[j].to_f64_lossy(),
                        delta: delta.to_f64_lossy(),
                    });
                }
            }
        }
        // core pieces clipped to [0, 1], arcs that wrap are split
        let half = delta / T::lit(2.0);
        let mut pieces: Vec<(T, T)> = Vec::new();
        for &c in centers {
            let c = wrap(c);
            let (a, b) = (c - half, c + half);
            if a < T::zero() {
                pieces.push((T::zero(), b));
                pieces.push((a + T::one(), T::one()));
            } else if b > T::one() {
                pieces.push((a, T::one()));
                pieces.push((T::zero(), b - T::one()));
            } else {
                pieces.push((a, b));
            }
        }
        pieces.sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite"));
        let mut breaks = vec![T::zero()];
        let mut slopes = Vec::new();
        for (a, b) in pieces {
            let last = *breaks.last().expect("non-empty");
            if a > last {
                breaks.push(a);
                slopes.push(lambda);
            }
            let a = a.max(*breaks.last().expect("non-empty"));
            if b > a {
                breaks.push(b);
                slopes.push(-big_lambda);
            }
        }
        if *breaks.last().expect("non-empty") < T::one() {
            breaks.push(T::one());
            slopes.push(lambda);
        }
        let profile = PiecewiseAffine::new(breaks, slopes, T::zero())?.without_degenerate();
        let mut centers: Vec<T> = centers.iter().map(|&c| wrap(c)).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self {
            profile,
            lambda,
            big_lambda,
            centers,
        })
    }

    pub fn core_width(n: usize, lambda: T, big_lambda: T) -> T {
        lambda / (T::from_usize_lossy(n) * (lambda + big_lambda))
    }

    pub fn delta(&self) -> T {
        Self::core_width(self.centers.len(), self.lambda, self.big_lambda)
    }

    pub fn profile(&self) -> &PiecewiseAffine<T> {
        &self.profile
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn big_lambda(&self) -> T {
        self.big_lambda
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    /// `v` extended periodically.
    pub fn eval(&self, t: T) -> T {
        self.profile.eval(wrap(t))
    }

    /// `h(t) = v(t) - lambda t` on the whole line.
    pub fn strain_free_part(&self, t: T) -> T {
        self.eval(t) - self.lambda * t
    }

    /// Breakpoints of the periodic extension inside `[a, b]`, together with `a` and `b`.
    fn breaks_in(&self, a: T, b: T) -> Vec<T> {
        let bp = self.profile.breakpoints();
        let mut out = vec![a, b];
        let mut shift = a.floor();
        while shift <= b {
            for &p in bp {
                let q = p + shift;
                if q > a && q < b {
                    out.push(q);
                }
            }
            shift = shift + T::one();
        }
        out.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        out.dedup();
        out
    }

    /// Total variation of `h` over one period.
    pub fn strain_free_variation(&self) -> T {
        self.profile
            .slopes()
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (a, b) = self.profile.segment(i);
                (s - self.lambda).abs() * (b - a)
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicIdentity<T = f64> {
    pub lhs: T,
    pub rhs: T,
    pub lhs_error: T,
    pub rhs_error: T,
}

const CIRCLE_QUAD_BUDGET: usize = 4_000_000;

/// Both sides of the change of variables between the periodic seminorm of `v` and the
/// windowed energy of `h = v - lambda Id`:
/// `lhs = int_[0,1]^2 |v(x) - v(y)|^2 / d(x - y)^2` and
/// `rhs = int_[0,1] int_{|z| < 1/2} |h(y + z) - h(y)|^2 / z^2 - lambda^2`.
pub fn periodic_energy_identity<T: Scalar>(
    v: &PeriodicDisplacement<T>,
    quad_tol: T,
) -> Result<PeriodicIdentity<T>> {
    let half = T::lit(0.5);
    let bp = v.profile().breakpoints().to_vec();
    let lhs_domain = GridStrips::square(
        bp,
        vec![
            (-T::one(), -half),
            (-half, T::zero()),
            (T::zero(), half),
            (half, T::one()),
        ],
        vec![-T::one(), T::zero(), T::one()],
    );
    let lhs = integrate_grid_strips(
        |x, y| {
            let d = circ_dist(x, y);
            if d == T::zero() {
                return T::zero();
            }
            let q = (v.eval(x) - v.eval(y)) / d;
            q * q
        },
        &lhs_domain,
        quad_tol / T::lit(2.0),
        CIRCLE_QUAD_BUDGET,
    )?;
    let rhs = windowed_energy(v, T::zero(), quad_tol / T::lit(2.0))?;
    let lam2 = v.lambda() * v.lambda();
    Ok(PeriodicIdentity {
        lhs: lhs.value,
        rhs: rhs.0 - lam2,
        lhs_error: lhs.abs_error,
        rhs_error: rhs.1,
    })
}

/// `int_[0,1] int_{cut < |z| < 1/2} |h(y + z) - h(y)|^2 / z^2 dz dy` with `x = y + z`.
fn windowed_energy<T: Scalar>(v: &PeriodicDisplacement<T>, cut: T, tol: T) -> Result<(T, T)> {
    let half = T::lit(0.5);
    let domain = GridStrips {
        xs: v.breaks_in(-half, T::one() + half),
        ys: v.breaks_in(T::zero(), T::one()),
        strips: if cut > T::zero() {
            vec![(-half, -cut), (cut, half)]
        } else {
            vec![(-half, T::zero()), (T::zero(), half)]
        },
        singular_offsets: if cut > T::zero() {
            vec![]
        } else {
            vec![T::zero()]
        },
    };
    let r = integrate_grid_strips(
        |x, y| {
            let z = x - y;
            if z == T::zero() {
                return T::zero();
            }
            let q = (v.strain_free_part(x) - v.strain_free_part(y)) / z;
            q * q
        },
        &domain,
        tol,
        CIRCLE_QUAD_BUDGET,
    )?;
    Ok((r.value, r.abs_error))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaLimitRow<T = f64> {
    pub big_lambda: T,
    pub delta: T,
    /// Cutoff energy of `h = v - lambda Id` for the finite-core displacement.
    pub energy: T,
    /// Distance to the cutoff energy of the step profile.
    pub gap: T,
    /// Total variation of `h` over one period.
    pub variation: T,
}

pub const LAMBDA_LIMIT_TOL: f64 = 1e-10;

/// Cutoff energies of finite-core displacements centered at the points, for every core
/// strain in `big_lambdas`, compared with the cutoff energy of the step profile.
pub fn lambda_limit_convergence<T: Scalar>(
    x: &CircleConfig<T>,
    big_lambdas: &[T],
) -> Result<Vec<LambdaLimitRow<T>>> {
    let limit = energy_erho(x)?;
    big_lambdas
        .iter()
        .map(|&big| {
            let delta = PeriodicDisplacement::core_width(x.len(), x.lambda(), big);
            let half_delta = delta / T::lit(2.0);
            if x.rho() <= half_delta {
                return Err(Error::CutoffViolation {
                    rho: x.rho().to_f64_lossy(),
                    half_delta: half_delta.to_f64_lossy(),
                });
            }
            let v = PeriodicDisplacement::new(x.points(), x.lambda(), big)?;
            let (energy, _) = windowed_energy(&v, x.rho(), T::lit(LAMBDA_LIMIT_TOL))?;
            Ok(LambdaLimitRow {
                big_lambda: big,
                delta,
                energy,
                gap: (energy - limit).abs(),
                variation: v.strain_free_variation(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_1d;

    fn cfg(points: &[f64], rho: f64) -> CircleConfig<f64> {
        CircleConfig::new(points.to_vec(), rho, 1.0).unwrap()
    }

    #[test]
    fn circular_distance_wraps() {
        assert!((circ_dist::<f64>(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(circ_dist(0.3, 0.3), 0.0);
        assert_eq!(circ_dist(0.0, 0.5), 0.5);
    }

    #[test]
    fn pair_energy_examples() {
        assert_eq!(energy_tilde(&cfg(&[0.3], 0.1)).unwrap(), 0.0);
        let even = energy_tilde(&cfg(&[0.0, 0.5], 0.1)).unwrap();
        assert!((even - 4.0 * (2f64.ln() + 1.0)).abs() < 1e-12);
        assert!((even - 6.772588722239781).abs() < 1e-6);
        let skew = energy_tilde(&cfg(&[0.0, 0.4], 0.1)).unwrap();
        assert!((skew - 4.0 * (-(0.4f64).ln() + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn gradient_window_example() {
        let g = gradient_tilde(&cfg(&[0.0, 0.4], 0.1)).unwrap();
        assert!((g[1] + 2.0).abs() < 1e-12);
        assert!((g[0] + g[1]).abs() < 1e-12);
    }

    #[test]
    fn gradient_on_boundary_is_refused() {
        let x = cfg(&[0.0, 0.25], 0.25);
        assert!(matches!(gradient_tilde(&x), Err(Error::OnBoundary(0, 1))));
    }

    #[test]
    fn erho_single_point_closed_form() {
        let rho = 0.1;
        let e = energy_erho(&cfg(&[0.37], rho)).unwrap();
        assert!((e - 2.0 * (1.0 / (2.0 * rho)).ln()).abs() < 1e-13);
    }

    fn brute_count(points: &[f64], y: f64, z: f64) -> usize {
        points
            .iter()
            .flat_map(|&p| [p - 1.0, p, p + 1.0, p + 2.0])
            .filter(|&q| q > y && q <= y + z)
            .count()
    }

    #[test]
    fn cell_counts_match_direct_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_circle_config(&mut rng, 5, 0.05, 1.0).unwrap();
        for _ in 0..10_000 {
            let z = rng.gen_range(0.05..0.5);
            let y = rng.gen_range(0.0..1.0);
            let cells = count_cells(x.points(), z);
            let cell = cells.iter().find(|c| c.0 <= y && y < c.1).unwrap();
            assert_eq!(cell.2, brute_count(x.points(), y, z));
        }
    }

    #[test]
    fn erho_matches_nested_quadrature() {
        let x = cfg(&[0.05, 0.3, 0.62], 0.08);
        let p = x.points().to_vec();
        let inner = |z: f64| {
            let mut br: Vec<f64> = p
                .iter()
                .flat_map(|&q| [q, (q - z).rem_euclid(1.0)])
                .collect();
            br.sort_by(|a, b| a.partial_cmp(b).unwrap());
            integrate_1d(
                |y| {
                    let c = brute_count(&p, y, z) as f64;
                    c * c
                },
                0.0,
                1.0,
                &br,
                1e-13,
                100_000,
            )
            .unwrap()
            .value
                / (z * z)
        };
        let mut zb = vec![];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    zb.push(circ_dist(p[i], p[j]));
                }
            }
        }
        let outer = integrate_1d(inner, 0.08, 0.5, &zb, 1e-11, 100_000)
            .unwrap()
            .value;
        let expected = 2.0 * outer / 9.0;
        let e = energy_erho(&x).unwrap();
        assert!((e - expected).abs() < 1e-8 * (1.0 + e), "{e} vs {expected}");
    }

    #[test]
    fn erho_prefers_even_spacing() {
        let even = energy_erho(&cfg(&[0.0, 0.5], 0.05)).unwrap();
        let skew = energy_erho(&cfg(&[0.0, 0.3], 0.05)).unwrap();
        assert!(even < skew);
    }

    #[test]
    fn erho_refuses_touching_cutoff() {
        let x = cfg(&[0.0, 0.2], 0.2);
        assert!(matches!(energy_erho(&x), Err(Error::CutoffTooLarge { .. })));
    }

    #[test]
    fn gk_pieces_rebuild_pair_energy() {
        let x = cfg(&[0.02, 0.21, 0.5, 0.77], 0.1);
        let mut total = 0.0;
        for k in 1..4 {
            let (g, d) = gk_decomposition(&x, k).unwrap();
            assert!((d.iter().sum::<f64>() - k as f64).abs() < 1e-12);
            total += g;
        }
        assert!((2.0 * total - energy_tilde(&x).unwrap()).abs() < 1e-12);
        assert!(matches!(gk_decomposition(&x, 4), Err(Error::BadK { .. })));
    }

    #[test]
    fn two_points_spread_to_antipodes() {
        let start = cfg(&[0.0, 0.4], 0.1);
        let e0 = energy_tilde(&start).unwrap();
        let r = minimize_circle_from(start, &CircleOptions::default()).unwrap();
        assert!(r.max_gap_error < 1e-9);
        assert!(r.energy_tilde <= e0);
    }

    #[test]
    fn periodic_profile_closes_up() {
        let v = PeriodicDisplacement::<f64>::new(&[0.0, 0.5], 1.0, 3.0).unwrap();
        assert!((v.delta() - 0.125).abs() < 1e-15);
        assert!((v.profile().eval(1.0) - v.profile().eval(0.0)).abs() < 1e-14);
        assert!((v.strain_free_part(1.3) - v.strain_free_part(0.3) + 1.0).abs() < 1e-14);
        assert!((v.strain_free_variation() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_limit_rejects_wide_cores() {
        let x = CircleConfig::<f64>::new(vec![0.0, 0.5], 0.1, 1.0).unwrap();
        assert!(matches!(
            lambda_limit_convergence(&x, &[1.0]),
            Err(Error::CutoffViolation { .. })
        ));
    }
}

//! Active-set quasi-Newton descent on the ordered-separation polytope
//! `{x : x_{i+1} - x_i >= gap, lo <= x_1, x_n <= hi}`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Euclidean projection onto the ordered-separation polytope.
///
/// With `z_i = x_i - i gap` the polytope becomes the monotone cone intersected with a box,
/// whose projection is the clipped isotonic regression.
pub fn project_ordered<T: Scalar>(x: &mut [T], gap: T, lo: T, hi: T) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let top = hi - T::from_usize_lossy(n - 1) * gap;
    // pool-adjacent-violators on z, blocks stored as (sum, count)
    let mut blocks: Vec<(T, usize)> = Vec::with_capacity(n);
    for (i, &xi) in x.iter().enumerate() {
        let mut cur = (xi - T::from_usize_lossy(i) * gap, 1usize);
        while let Some(&(s, c)) = blocks.last() {
            if s / T::from_usize_lossy(c) > cur.0 / T::from_usize_lossy(cur.1) {
                blocks.pop();
                cur = (cur.0 + s, cur.1 + c);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut i = 0;
    for (s, c) in blocks {
        let z = (s / T::from_usize_lossy(c)).max(lo).min(top);
        for _ in 0..c {
            x[i] = z + T::from_usize_lossy(i) * gap;
            i += 1;
        }
    }
}

/// Uniform sample from the ordered-separation polytope: sorted uniforms on the reduced
/// interval, spread back out by the gap.
pub fn sample_ordered<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    gap: T,
    lo: T,
    hi: T,
) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let top = hi - T::from_usize_lossy(n - 1) * gap;
    let mut z: Vec<T> = (0..n)
        .map(|_| lo + (top - lo) * T::lit(rng.gen::<f64>()))
        .collect();
    z.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    z.iter()
        .enumerate()
        .map(|(i, &zi)| zi + T::from_usize_lossy(i) * gap)
        .collect()
}

/// Objective value, gradient, and an absolute error estimate of the value.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub noise: T,
}

/// `{x : x_{i+1} - x_i >= gap, lo <= x_1, x_n <= hi}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderedPolytope<T> {
    pub gap: T,
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> OrderedPolytope<T> {
    pub fn project(&self, x: &mut [T]) {
        project_ordered(x, self.gap, self.lo, self.hi);
    }

    /// Splits the indices into rigidly moving blocks and returns, for every block, whether it
    /// is pinned against a bound, together with the projection of `-g` onto the tangent cone.
    ///
    /// Touching neighbours stay together when the gradient pushes them into each other;
    /// inside a touching run that is the isotonic regression of `-g`.
    fn active_blocks(&self, x: &[T], g: &[T]) -> (Vec<Block>, Vec<T>) {
        let n = x.len();
        let tie = T::lit(1e-12) * T::one().max(self.hi - self.lo);
        let mut blocks = Vec::new();
        let mut velocity = vec![T::zero(); n];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && x[end] - x[end - 1] - self.gap <= tie {
                end += 1;
            }
            let at_lo = start == 0 && x[0] - self.lo <= tie;
            let at_hi = end == n && self.hi - x[n - 1] <= tie;
            let mut runs: Vec<(T, usize)> = Vec::new();
            for &gi in &g[start..end] {
                let mut cur = (-gi, 1usize);
                while let Some(&(s, c)) = runs.last() {
                    if s / T::from_usize_lossy(c) > cur.0 / T::from_usize_lossy(cur.1) {
                        runs.pop();
                        cur = (cur.0 + s, cur.1 + c);
                    } else {
                        break;
                    }
                }
                runs.push(cur);
            }
            let mut i = start;
            for (s, c) in runs {
                let mut v = s / T::from_usize_lossy(c);
                let mut pinned = false;
                if at_lo && v < T::zero() {
                    v = T::zero();
                    pinned = true;
                }
                if at_hi && v > T::zero() {
                    v = T::zero();
                    pinned = true;
                }
                for vi in &mut velocity[i..i + c] {
                    *vi = v;
                }
                blocks.push(Block {
                    start: i,
                    len: c,
                    pinned,
                });
                i += c;
            }
            start = end;
        }
        (blocks, velocity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    start: usize,
    len: usize,
    pinned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Converged when the projected gradient (max norm) is below `grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// A line search that fails below `stall_tol * max(1, |f|)` ends the run without error.
    pub stall_tol: f64,
    pub history: usize,
    /// Largest coordinate move of a steepest-descent trial step.
    pub max_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-8,
            stall_tol: 1e-6,
            history: 10,
            max_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    /// Max norm of the gradient projected onto the tangent cone at `x`.
    pub projected_gradient: T,
    /// `false` when the run ended on a line-search stall close to stationarity.
    pub converged: bool,
    /// Objective value after every accepted step, starting with the initial point.
    pub trace: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Reduced gradient: the sum of `g` over every free block.
fn reduce<T: Scalar>(blocks: &[Block], g: &[T]) -> Vec<T> {
    blocks
        .iter()
        .filter(|b| !b.pinned)
        .map(|b| g[b.start..b.start + b.len].iter().copied().sum())
        .collect()
}

fn expand<T: Scalar>(blocks: &[Block], p: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    let mut k = 0;
    for b in blocks.iter().filter(|b| !b.pinned) {
        for o in &mut out[b.start..b.start + b.len] {
            *o = p[k];
        }
        k += 1;
    }
    out
}

/// Block shifts realised by a full-space step.
fn block_shifts<T: Scalar>(blocks: &[Block], step: &[T]) -> Vec<T> {
    blocks
        .iter()
        .filter(|b| !b.pinned)
        .map(|b| {
            step[b.start..b.start + b.len].iter().copied().sum::<T>() / T::from_usize_lossy(b.len)
        })
        .collect()
}

/// Active-set projected L-BFGS on an ordered polytope.
///
/// Every iteration groups touching neighbours into rigid blocks, freezes blocks pressed
/// against `lo` or `hi`, takes a quasi-Newton step in the block shifts and projects the
/// result back. The curvature history is dropped whenever the block structure changes.
pub fn minimize_ordered<T, F>(
    x0: Vec<T>,
    mut eval: F,
    poly: &OrderedPolytope<T>,
    opts: &LbfgsOptions,
) -> Result<SolverOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Evaluation<T>>,
{
    let mut x = x0;
    poly.project(&mut x);
    let n = x.len();
    let mut ev = eval(&x)?;
    let mut trace = vec![ev.value];
    let (mut blocks, mut velocity) = poly.active_blocks(&x, &ev.gradient);
    let mut hist: Vec<(Vec<T>, Vec<T>, T)> = Vec::with_capacity(opts.history);
    let armijo = T::lit(1e-4);
    let max_step = T::lit(opts.max_step);
    let project = |y: &mut [T]| poly.project(y);
    let mut iterations = 0;
    loop {
        let pg = max_abs(&velocity);
        let scale = T::one().max(ev.value.abs());
        if n == 0 || pg <= T::lit(opts.grad_tol) * scale {
            return Ok(SolverOutcome {
                x,
                value: ev.value,
                iterations,
                projected_gradient: pg,
                converged: true,
                trace,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: pg.to_f64_lossy(),
            });
        }
        iterations += 1;
        let reduced = reduce(&blocks, &ev.gradient);
        let mut accepted = None;
        for quasi_newton in [true, false] {
            if quasi_newton && hist.is_empty() {
                continue;
            }
            let (dir, alpha0) = if quasi_newton {
                (expand(&blocks, &two_loop(&reduced, &hist), n), T::one())
            } else {
                let vmax = max_abs(&velocity);
                let bb = hist.last().map(|(s, y, _)| dot(s, y) / dot(y, y));
                let a = bb.map_or(max_step / vmax, |b| b.min(max_step / vmax));
                (velocity.clone(), a)
            };
            if dot(&dir, &ev.gradient) >= T::zero() {
                continue;
            }
            accepted = line_search(&x, &ev, &dir, alpha0, armijo, &mut eval, &project)?;
            if accepted.is_some() {
                break;
            }
            hist.clear();
        }
        let Some((x_new, ev_new)) = accepted else {
            if pg <= T::lit(opts.stall_tol) * scale {
                return Ok(SolverOutcome {
                    x,
                    value: ev.value,
                    iterations,
                    projected_gradient: pg,
                    converged: false,
                    trace,
                });
            }
            return Err(Error::NoConvergence {
                iterations,
                residual: pg.to_f64_lossy(),
            });
        };
        let step: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let (new_blocks, new_velocity) = poly.active_blocks(&x_new, &ev_new.gradient);
        if new_blocks == blocks {
            let s = block_shifts(&blocks, &step);
            let y: Vec<T> = reduce(&blocks, &ev_new.gradient)
                .iter()
                .zip(&reduced)
                .map(|(&a, &b)| a - b)
                .collect();
            let sy = dot(&s, &y);
            if sy > T::epsilon() * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if hist.len() == opts.history {
                    hist.remove(0);
                }
                hist.push((s, y, T::one() / sy));
            }
        } else {
            hist.clear();
        }
        blocks = new_blocks;
        velocity = new_velocity;
        x = x_new;
        ev = ev_new;
        trace.push(ev.value);
    }
}

fn two_loop<T: Scalar>(g: &[T], hist: &[(Vec<T>, Vec<T>, T)]) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s, y, _) = hist.last().expect("non-empty history");
    let gamma = dot(s, y) / dot(y, y);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|&v| -v).collect()
}

type Accepted<T> = Option<(Vec<T>, Evaluation<T>)>;

/// Backtracking along the projection arc. Near the noise floor of the objective a step is
/// also accepted when it does not raise the value beyond the noise and the slope along the
/// step has flattened without reversing (approximate Wolfe condition).
fn line_search<T, F, P>(
    x: &[T],
    ev: &Evaluation<T>,
    dir: &[T],
    alpha0: T,
    armijo: T,
    eval: &mut F,
    project: &P,
) -> Result<Accepted<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Evaluation<T>>,
    P: Fn(&mut [T]),
{
    let mut alpha = alpha0;
    for _ in 0..60 {
        let mut trial: Vec<T> = x.iter().zip(dir).map(|(&a, &d)| a + alpha * d).collect();
        project(&mut trial);
        let step: Vec<T> = trial.iter().zip(x).map(|(&a, &b)| a - b).collect();
        if max_abs(&step) == T::zero() {
            return Ok(None);
        }
        let pred = dot(&ev.gradient, &step);
        if pred < T::zero() {
            let next = eval(&trial)?;
            if next.value <= ev.value + armijo * pred {
                return Ok(Some((trial, next)));
            }
            let noise = T::lit(2.0) * (ev.noise + next.noise);
            let slope_new = dot(&next.gradient, &step);
            let flat = slope_new >= T::lit(0.9) * pred && slope_new <= T::lit(-0.8) * pred;
            if next.value <= ev.value + noise && flat {
                return Ok(Some((trial, next)));
            }
        }
        alpha = alpha / T::lit(2.0);
    }
    Ok(None)
}

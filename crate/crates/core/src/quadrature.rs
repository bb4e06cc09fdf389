//! Adaptive cubature used as the independent oracle for every closed-form energy.
//!
//! Double integrals of the form `∬ f(x, y)` are taken over a tensor grid of cells, each
//! clipped to a union of diagonal strips `lo <= x - y <= hi`. Grid lines and strip edges
//! must carry every kink of the integrand, so the integrand is smooth on each clipped cell
//! except possibly at a corner lying on one of the `singular_offsets` lines. Such a
//! corner is made the collapsed vertex of a Duffy map, which turns the bounded,
//! direction-dependent singularity into a smooth integrand.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::{KahanSum, Scalar};

/// Gauss–Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> GaussRule<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes.push(T::lit(0.5 * (1.0 - x)));
            weights.push(T::lit(0.5 * w));
        }
        Self { nodes, weights }
    }

    /// Integral over `[a, b]`.
    pub fn apply<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let h = b - a;
        let mut acc = T::zero();
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + h * t);
        }
        acc * h
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubature<T> {
    pub value: T,
    pub abs_error: T,
    pub regions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Region<T, G> {
    geom: G,
    value: T,
    error: T,
}

struct ByError<T, G>(Region<T, G>);

impl<T: Scalar, G> PartialEq for ByError<T, G> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar, G> Eq for ByError<T, G> {}
impl<T: Scalar, G> PartialOrd for ByError<T, G> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar, G> Ord for ByError<T, G> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .error
            .partial_cmp(&other.0.error)
            .unwrap_or(Ordering::Equal)
    }
}

/// Global adaptive driver: repeatedly bisects the region with the largest error.
fn adaptive<T, G, E, S>(
    initial: Vec<G>,
    mut estimate: E,
    mut split: S,
    tol: T,
    max_regions: usize,
) -> Result<Cubature<T>>
where
    T: Scalar,
    G: Copy,
    E: FnMut(&G) -> (T, T),
    S: FnMut(&G) -> Vec<G>,
{
    if !(tol > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut heap = BinaryHeap::with_capacity(initial.len());
    let mut total_err = T::zero();
    for g in initial {
        let (value, error) = estimate(&g);
        total_err += error;
        heap.push(ByError(Region {
            geom: g,
            value,
            error,
        }));
    }
    let mut count = heap.len();
    let mut since_resum = 0usize;
    while total_err > tol {
        if count >= max_regions {
            return Err(Error::BudgetExceeded {
                regions: count,
                error: total_err.to_f64_lossy(),
            });
        }
        let Some(ByError(worst)) = heap.pop() else {
            break;
        };
        total_err -= worst.error;
        let children = split(&worst.geom);
        count += children.len() - 1;
        for c in children {
            let (value, error) = estimate(&c);
            total_err += error;
            heap.push(ByError(Region {
                geom: c,
                value,
                error,
            }));
        }
        since_resum += 1;
        if since_resum >= 256 {
            total_err = heap.iter().map(|r| r.0.error).sum();
            since_resum = 0;
        }
    }
    let mut value = KahanSum::new();
    let mut error = KahanSum::new();
    for r in heap.iter() {
        value.add(r.0.value);
        error.add(r.0.error);
    }
    Ok(Cubature {
        value: value.value(),
        abs_error: error.value(),
        regions: count,
    })
}

/// Adaptive integral of `f` over `[a, b]` with the given interior breakpoints.
pub fn integrate_1d<T, F>(
    f: F,
    a: T,
    b: T,
    breaks: &[T],
    tol: T,
    max_intervals: usize,
) -> Result<Cubature<T>>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let low = GaussRule::<T>::new(7);
    let high = GaussRule::<T>::new(12);
    let mut pts: Vec<T> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap_or(Ordering::Equal));
    pts.dedup();
    let initial: Vec<(T, T)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let two = T::lit(2.0);
    adaptive(
        initial,
        |&(lo, hi)| {
            let h = high.apply(lo, hi, &f);
            let l = low.apply(lo, hi, &f);
            (h, (h - l).abs())
        },
        |&(lo, hi)| {
            let mid = (lo + hi) / two;
            vec![(lo, mid), (mid, hi)]
        },
        tol,
        max_intervals,
    )
}

/// Point in the integration plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    fn mid(self, o: Self) -> Self {
        let two = T::lit(2.0);
        Self::new((self.x + o.x) / two, (self.y + o.y) / two)
    }
}

/// Triangle whose first vertex is the Duffy collapse point.
#[derive(Debug, Clone, Copy)]
pub struct Triangle<T> {
    pub v: [Point<T>; 3],
    /// Whether `v[0]` carries a corner singularity.
    pub singular: bool,
}

impl<T: Scalar> Triangle<T> {
    pub fn area(&self) -> T {
        let [a, b, c] = self.v;
        ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs() / T::lit(2.0)
    }

    /// Four congruent children; the child touching `v[0]` keeps the singular flag.
    pub fn split(&self) -> [Triangle<T>; 4] {
        let [a, b, c] = self.v;
        let (ab, bc, ca) = (a.mid(b), b.mid(c), c.mid(a));
        [
            Triangle {
                v: [a, ab, ca],
                singular: self.singular,
            },
            Triangle {
                v: [ab, b, bc],
                singular: false,
            },
            Triangle {
                v: [ca, bc, c],
                singular: false,
            },
            Triangle {
                v: [bc, ca, ab],
                singular: false,
            },
        ]
    }

    /// Duffy-collapsed product rule.
    pub fn integrate<F: Fn(T, T) -> T>(&self, rule: &GaussRule<T>, f: &F) -> T {
        let [a, b, c] = self.v;
        let jac = T::lit(2.0) * self.area();
        let mut acc = T::zero();
        for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
            let mut inner = T::zero();
            for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
                let x = a.x + u * (b.x - a.x) + u * v * (c.x - b.x);
                let y = a.y + u * (b.y - a.y) + u * v * (c.y - b.y);
                inner += wv * f(x, y);
            }
            acc += wu * u * inner;
        }
        acc * jac
    }
}

/// Tensor grid clipped to strips of `x - y`.
#[derive(Debug, Clone)]
pub struct GridStrips<T> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
    /// Closed ranges `[lo, hi]` of `x - y`; their union is the domain.
    pub strips: Vec<(T, T)>,
    /// Offsets `c` such that the integrand may have a corner singularity on `x - y = c`.
    pub singular_offsets: Vec<T>,
}

impl<T: Scalar> GridStrips<T> {
    /// Square grid `points x points` restricted to a single strip.
    pub fn square(points: Vec<T>, strips: Vec<(T, T)>, singular_offsets: Vec<T>) -> Self {
        Self {
            xs: points.clone(),
            ys: points,
            strips,
            singular_offsets,
        }
    }

    /// Splits every clipped cell into triangles, orienting singular corners first.
    pub fn triangulate(&self) -> Vec<Triangle<T>> {
        let xs = sorted_unique(&self.xs);
        let ys = sorted_unique(&self.ys);
        let scale = xs.iter().chain(&ys).fold(T::one(), |m, v| m.max(v.abs()));
        let eps = T::lit(1e-12) * scale;
        let mut out = Vec::new();
        for xw in xs.windows(2) {
            for yw in ys.windows(2) {
                let (x0, x1, y0, y1) = (xw[0], xw[1], yw[0], yw[1]);
                let corners = [
                    Point::new(x0, y0),
                    Point::new(x1, y0),
                    Point::new(x1, y1),
                    Point::new(x0, y1),
                ];
                let dmin = x0 - y1;
                let dmax = x1 - y0;
                let cell_area = (x1 - x0) * (y1 - y0);
                for &(lo, hi) in &self.strips {
                    if dmax <= lo + eps || dmin >= hi - eps {
                        continue;
                    }
                    let mut poly = corners.to_vec();
                    if dmin < lo {
                        poly = clip(&poly, |p| p.x - p.y - lo, eps);
                    }
                    if dmax > hi {
                        poly = clip(&poly, |p| hi - (p.x - p.y), eps);
                    }
                    if poly.len() < 3 || polygon_area(&poly) <= T::lit(1e-14) * cell_area {
                        continue;
                    }
                    let singular: Vec<bool> = poly
                        .iter()
                        .map(|p| {
                            self.singular_offsets.iter().any(|&c| {
                                let on_line = (p.x - p.y - c).abs() <= eps;
                                let bisected = dmin < c - eps && dmax > c + eps;
                                on_line && !bisected
                            })
                        })
                        .collect();
                    let apex = singular.iter().position(|&s| s).unwrap_or(0);
                    let m = poly.len();
                    for k in 1..m - 1 {
                        let i1 = (apex + k) % m;
                        let i2 = (apex + k + 1) % m;
                        let tri = Triangle {
                            v: [poly[apex], poly[i1], poly[i2]],
                            singular: singular[apex],
                        };
                        if tri.area() <= T::lit(1e-14) * cell_area {
                            continue;
                        }
                        if singular[i1] || singular[i2] {
                            // two singular corners: separate them before integrating
                            for child in tri.split() {
                                out.push(orient(child, &poly, &singular));
                            }
                        } else {
                            out.push(tri);
                        }
                    }
                }
            }
        }
        out
    }
}

fn orient<T: Scalar>(t: Triangle<T>, poly: &[Point<T>], singular: &[bool]) -> Triangle<T> {
    for k in 0..3 {
        if let Some(idx) = poly.iter().position(|p| *p == t.v[k]) {
            if singular[idx] {
                return Triangle {
                    v: [t.v[k], t.v[(k + 1) % 3], t.v[(k + 2) % 3]],
                    singular: true,
                };
            }
        }
    }
    Triangle {
        singular: false,
        ..t
    }
}

fn sorted_unique<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v.dedup();
    v
}

fn polygon_area<T: Scalar>(poly: &[Point<T>]) -> T {
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    acc.abs() / T::lit(2.0)
}

/// Sutherland–Hodgman clip keeping `g(p) >= 0`; vertices within `eps` of the line snap onto it.
fn clip<T: Scalar, G: Fn(Point<T>) -> T>(poly: &[Point<T>], g: G, eps: T) -> Vec<Point<T>> {
    let mut out: Vec<Point<T>> = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    let val = |p: Point<T>| {
        let v = g(p);
        if v.abs() <= eps {
            T::zero()
        } else {
            v
        }
    };
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let (gp, gq) = (val(p), val(q));
        if gp >= T::zero() {
            out.push(p);
        }
        if (gp > T::zero() && gq < T::zero()) || (gp < T::zero() && gq > T::zero()) {
            let t = gp / (gp - gq);
            out.push(Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)));
        }
    }
    out.dedup();
    if out.len() > 1 && out[0] == out[out.len() - 1] {
        out.pop();
    }
    out
}

/// Adaptive integral of `f` over a clipped grid.
pub fn integrate_grid_strips<T, F>(
    f: F,
    domain: &GridStrips<T>,
    tol: T,
    max_regions: usize,
) -> Result<Cubature<T>>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    integrate_triangles(f, domain.triangulate(), tol, max_regions)
}

/// Adaptive integral of `f` over a union of triangles.
pub fn integrate_triangles<T, F>(
    f: F,
    triangles: Vec<Triangle<T>>,
    tol: T,
    max_regions: usize,
) -> Result<Cubature<T>>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    let low = GaussRule::<T>::new(6);
    let high = GaussRule::<T>::new(9);
    adaptive(
        triangles,
        |t| {
            let h = t.integrate(&high, &f);
            let l = t.integrate(&low, &f);
            (h, (h - l).abs())
        },
        |t| t.split().to_vec(),
        tol,
        max_regions,
    )
}

//! Piecewise-affine interface displacements and their construction from dislocations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DislocationConfig;
use crate::scalar::Scalar;

/// Continuous piecewise-affine function given by breakpoints `b_0 <= ... <= b_n`,
/// one slope per segment and its value at `b_0`.
///
/// Zero-length segments are representable (they carry no mass) so that data read from
/// files can be inspected; [`without_degenerate`](Self::without_degenerate) drops them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAffine<T>")]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PiecewiseAffine<T = f64> {
    breakpoints: Vec<T>,
    slopes: Vec<T>,
    value_at_zero: T,
    #[serde(skip)]
    nodal: Vec<T>,
}

#[derive(Deserialize)]
struct RawAffine<T> {
    breakpoints: Vec<T>,
    slopes: Vec<T>,
    #[serde(default)]
    value_at_zero: Option<T>,
}

impl<T: Scalar> TryFrom<RawAffine<T>> for PiecewiseAffine<T> {
    type Error = Error;

    fn try_from(raw: RawAffine<T>) -> Result<Self> {
        PiecewiseAffine::new(
            raw.breakpoints,
            raw.slopes,
            raw.value_at_zero.unwrap_or_else(T::zero),
        )
    }
}

impl<T: Scalar> PiecewiseAffine<T> {
    pub fn new(breakpoints: Vec<T>, slopes: Vec<T>, value_at_zero: T) -> Result<Self> {
        if slopes.is_empty() || breakpoints.len() != slopes.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "need n >= 1 slopes and n + 1 breakpoints, got {} and {}",
                slopes.len(),
                breakpoints.len()
            )));
        }
        if breakpoints.iter().chain(&slopes).any(|v| !v.is_finite()) || !value_at_zero.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite breakpoint, slope or value".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput(
                "breakpoints must be non-decreasing".into(),
            ));
        }
        if breakpoints[0] == breakpoints[breakpoints.len() - 1] {
            return Err(Error::InvalidInput("domain has zero length".into()));
        }
        let mut nodal = Vec::with_capacity(breakpoints.len());
        let mut v = value_at_zero;
        nodal.push(v);
        for (w, &s) in breakpoints.windows(2).zip(&slopes) {
            v += s * (w[1] - w[0]);
            nodal.push(v);
        }
        Ok(Self {
            breakpoints,
            slopes,
            value_at_zero,
            nodal,
        })
    }

    /// `x -> value + slope (x - a)` on `[a, b]`.
    pub fn affine(a: T, b: T, slope: T, value: T) -> Result<Self> {
        Self::new(vec![a, b], vec![slope], value)
    }

    pub fn constant(a: T, b: T, value: T) -> Result<Self> {
        Self::affine(a, b, T::zero(), value)
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn value_at_zero(&self) -> T {
        self.value_at_zero
    }

    /// Values at the breakpoints.
    pub fn nodal_values(&self) -> &[T] {
        &self.nodal
    }

    pub fn num_segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn start(&self) -> T {
        self.breakpoints[0]
    }

    pub fn end(&self) -> T {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    pub fn length(&self) -> T {
        self.end() - self.start()
    }

    pub fn segment(&self, i: usize) -> (T, T) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    /// Index of the first zero-length segment, if any.
    pub fn degenerate_segment(&self) -> Option<usize> {
        self.breakpoints.windows(2).position(|w| w[1] <= w[0])
    }

    pub fn without_degenerate(&self) -> Self {
        let mut bps = vec![self.breakpoints[0]];
        let mut slopes = Vec::with_capacity(self.slopes.len());
        for (w, &s) in self.breakpoints.windows(2).zip(&self.slopes) {
            if w[1] > w[0] {
                bps.push(w[1]);
                slopes.push(s);
            }
        }
        Self::new(bps, slopes, self.value_at_zero)
            .expect("dropping segments keeps the function valid")
    }

    /// Segment containing `x`; points on a breakpoint go to the segment on their right,
    /// except the right end of the domain.
    pub fn locate(&self, x: T) -> usize {
        let n = self.slopes.len();
        let idx = self.breakpoints.partition_point(|&b| b <= x);
        idx.saturating_sub(1).min(n - 1)
    }

    pub fn eval(&self, x: T) -> T {
        let i = self.locate(x);
        self.nodal[i] + self.slopes[i] * (x - self.breakpoints[i])
    }

    /// Difference quotient `(u(x) - u(y)) / (x - y)` evaluated without cancelling the
    /// common nodal values; equals the slope when both points share a segment.
    pub fn difference_quotient(&self, x: T, y: T) -> T {
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        let i = self.locate(lo);
        let j = self.locate(hi);
        if i == j {
            return self.slopes[i];
        }
        let num = self.slopes[i] * (self.breakpoints[i + 1] - lo)
            + (self.nodal[j] - self.nodal[i + 1])
            + self.slopes[j] * (hi - self.breakpoints[j]);
        num / (hi - lo)
    }

    /// `max u - min u` over the domain, attained at breakpoints.
    pub fn oscillation(&self) -> T {
        let max = self.nodal.iter().copied().fold(T::neg_infinity(), T::max);
        let min = self.nodal.iter().copied().fold(T::infinity(), T::min);
        max - min
    }

    pub fn lipschitz_constant(&self) -> T {
        self.slopes.iter().fold(T::zero(), |m, s| m.max(s.abs()))
    }

    /// Restriction to `[a, b]`, which must lie inside the domain with `a < b`.
    pub fn restrict(&self, a: T, b: T) -> Result<Self> {
        if !(a < b) || a < self.start() || b > self.end() {
            return Err(Error::InvalidInput(format!(
                "cannot restrict [{}, {}] to [{a}, {b}]",
                self.start(),
                self.end()
            )));
        }
        let mut bps = vec![a];
        let mut slopes = Vec::new();
        for (i, &s) in self.slopes.iter().enumerate() {
            let (lo, hi) = self.segment(i);
            let lo = lo.max(a);
            let hi = hi.min(b);
            if hi > lo {
                bps.push(hi);
                slopes.push(s);
            }
        }
        if slopes.is_empty() {
            // a and b inside one zero-measure corner case cannot happen for a < b
            let i = self.locate(a);
            slopes.push(self.slopes[i]);
            bps.push(b);
        }
        Self::new(bps, slopes, self.eval(a))
    }

    /// Same function translated so that its domain starts at 0.
    pub fn shifted_to_origin(&self) -> Self {
        let a = self.start();
        let bps = self.breakpoints.iter().map(|&b| b - a).collect();
        Self::new(bps, self.slopes.clone(), self.value_at_zero).expect("translation keeps validity")
    }

    /// `x -> u(a + b - x)` on the same domain.
    pub fn reflected(&self) -> Self {
        let (a, b) = (self.start(), self.end());
        let bps = self.breakpoints.iter().rev().map(|&x| a + b - x).collect();
        let slopes = self.slopes.iter().rev().map(|&s| -s).collect();
        Self::new(bps, slopes, self.eval(b)).expect("reflection keeps validity")
    }

    pub fn plus_constant(&self, c: T) -> Self {
        Self::new(
            self.breakpoints.clone(),
            self.slopes.clone(),
            self.value_at_zero + c,
        )
        .expect("adding a constant keeps validity")
    }
}

/// `u` on `[0, l]` seen at unit scale: `w(x) = u(l x) / sqrt(l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RescaledDisplacement<T = f64> {
    pub w: PiecewiseAffine<T>,
    pub scale: T,
}

impl<T: Scalar> RescaledDisplacement<T> {
    pub fn from_displacement(u: &PiecewiseAffine<T>, l: T) -> Result<Self> {
        if !(l > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {l}"
            )));
        }
        if u.start() != T::zero() {
            return Err(Error::InvalidInput(
                "rescaling expects a domain starting at 0".into(),
            ));
        }
        let root = l.sqrt();
        let bps = u.breakpoints().iter().map(|&b| b / l).collect();
        let slopes = u.slopes().iter().map(|&s| s * root).collect();
        let w = PiecewiseAffine::new(bps, slopes, u.value_at_zero() / root)?;
        Ok(Self { w, scale: l })
    }
}

/// Displacement `u_X` with `u(0) = 0`: slope `-Lambda` on cores truncated to `(0, l)`,
/// slope `lambda` elsewhere.
pub fn displacement_from_config<T: Scalar>(config: &DislocationConfig<T>) -> PiecewiseAffine<T> {
    let p = config.params();
    let l = p.l;
    let mut bps = vec![T::zero()];
    let mut slopes = Vec::with_capacity(2 * config.len() + 1);
    let mut last = T::zero();
    for (a, b) in config.cores() {
        let a = a.max(T::zero()).max(last);
        let b = b.min(l);
        if b <= a {
            continue;
        }
        if a > last {
            bps.push(a);
            slopes.push(p.lambda);
        }
        bps.push(b);
        slopes.push(-p.big_lambda);
        last = b;
    }
    if last < l {
        bps.push(l);
        slopes.push(p.lambda);
    }
    PiecewiseAffine::new(bps, slopes, T::zero()).expect("config cores give a valid displacement")
}

/// `max u - min u` over the domain of `u`.
pub fn oscillation<T: Scalar>(u: &PiecewiseAffine<T>) -> T {
    u.oscillation()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_config, ModelParams};

    fn params(delta: f64) -> ModelParams {
        ModelParams::<f64>::new(1.0, 1.0, delta, 1.0).unwrap()
    }

    #[test]
    fn empty_config_is_linear() {
        let p = ModelParams::<f64>::new(0.1, 1.0, 0.2, 1.0).unwrap();
        let u = displacement_from_config(&DislocationConfig::empty(p));
        assert_eq!(u.num_segments(), 1);
        assert_eq!(u.slopes(), &[0.1]);
        assert!((u.eval(0.7) - 0.07).abs() < 1e-15);
    }

    #[test]
    fn single_core_in_the_middle() {
        let cfg = validate_config(vec![0.5], params(0.2)).unwrap();
        let u = displacement_from_config(&cfg);
        assert_eq!(u.slopes(), &[1.0, -1.0, 1.0]);
        let bps = u.breakpoints();
        assert!((bps[1] - 0.4).abs() < 1e-15 && (bps[2] - 0.6).abs() < 1e-15);
        assert!((u.eval(1.0) - 0.6).abs() < 1e-14);
    }

    #[test]
    fn boundary_core_is_truncated() {
        let p = params(0.2);
        let cfg = validate_config(vec![-p.delta / 4.0], p).unwrap();
        let u = displacement_from_config(&cfg);
        assert_eq!(u.slopes(), &[-1.0, 1.0]);
        assert!((u.breakpoints()[1] - 0.05).abs() < 1e-15);
        // core (-0.15, 0.05) truncated to (0, 0.05)
        assert!((u.eval(0.05) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn touching_cores_keep_separate_segments() {
        let cfg = validate_config(vec![0.3, 0.5], params(0.2)).unwrap();
        let u = displacement_from_config(&cfg);
        assert_eq!(u.slopes(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn oscillation_cases() {
        let u = PiecewiseAffine::<f64>::affine(0.0, 3.0, 0.5, 0.0).unwrap();
        assert!((oscillation(&u) - 1.5).abs() < 1e-15);
        let c = PiecewiseAffine::<f64>::constant(0.0, 2.0, 4.0).unwrap();
        assert_eq!(oscillation(&c), 0.0);
    }

    #[test]
    fn difference_quotient_matches_eval() {
        let cfg = validate_config(vec![0.2, 0.55, 0.9], params(0.2)).unwrap();
        let u = displacement_from_config(&cfg);
        for &(x, y) in &[(0.05, 0.95), (0.31, 0.29), (0.5, 0.6), (0.0, 1.0)] {
            let direct = (u.eval(x) - u.eval(y)) / (x - y);
            assert!((u.difference_quotient(x, y) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn restrict_reflect_and_rescale() {
        let cfg = validate_config(vec![0.5], params(0.2)).unwrap();
        let u = displacement_from_config(&cfg);
        let r = u.restrict(0.3, 0.8).unwrap();
        assert!((r.eval(0.5) - u.eval(0.5)).abs() < 1e-15);
        assert_eq!(r.start(), 0.3);
        let f = u.reflected();
        assert!((f.eval(0.1) - u.eval(0.9)).abs() < 1e-14);
        assert!(RescaledDisplacement::from_displacement(&r, 4.0).is_err());
        let long = PiecewiseAffine::<f64>::affine(0.0, 4.0, 0.25, 0.0).unwrap();
        let w = RescaledDisplacement::from_displacement(&long, 4.0).unwrap();
        assert_eq!(w.w.end(), 1.0);
        assert!((w.w.eval(0.5) - long.eval(2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(PiecewiseAffine::new(vec![0.0, 1.0], vec![], 0.0).is_err());
        assert!(PiecewiseAffine::new(vec![0.0, 1.0, 0.5], vec![1.0, 1.0], 0.0).is_err());
        assert!(PiecewiseAffine::new(vec![1.0, 1.0], vec![1.0], 0.0).is_err());
        let d = PiecewiseAffine::new(vec![0.0, 0.5, 0.5, 1.0], vec![1.0, 3.0, -1.0], 0.0).unwrap();
        assert_eq!(d.degenerate_segment(), Some(1));
        assert_eq!(d.without_degenerate().num_segments(), 2);
    }
}

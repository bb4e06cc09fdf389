//! Physical parameters and admissible dislocation configurations on an interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute slack accepted on the minimal-separation constraint.
pub const SEPARATION_SLACK: f64 = 1e-12;

/// Misfit strain `lambda`, core strain `big_lambda`, core width `delta`, interface length `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams<T>")]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ModelParams<T = f64> {
    pub lambda: T,
    #[serde(rename = "Lambda")]
    pub big_lambda: T,
    pub delta: T,
    pub l: T,
}

#[derive(Deserialize)]
struct RawParams<T> {
    lambda: T,
    #[serde(rename = "Lambda")]
    big_lambda: T,
    delta: T,
    l: T,
}

impl<T: Scalar> TryFrom<RawParams<T>> for ModelParams<T> {
    type Error = Error;

    fn try_from(raw: RawParams<T>) -> Result<Self> {
        ModelParams::new(raw.lambda, raw.big_lambda, raw.delta, raw.l)
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(lambda: T, big_lambda: T, delta: T, l: T) -> Result<Self> {
        let params = Self {
            lambda,
            big_lambda,
            delta,
            l,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("lambda", self.lambda)?;
        positive("Lambda", self.big_lambda)?;
        positive("delta", self.delta)?;
        positive("l", self.l)?;
        if self.big_lambda < self.lambda {
            return Err(Error::InvalidParameter(format!(
                "Lambda ({}) must be at least lambda ({})",
                self.big_lambda, self.lambda
            )));
        }
        Ok(())
    }

    /// Same material constants on an interface of a different length.
    pub fn with_length(&self, l: T) -> Result<Self> {
        Self::new(self.lambda, self.big_lambda, self.delta, l)
    }

    /// Period of the evenly spaced array, `(lambda + Lambda) delta / lambda`.
    pub fn period(&self) -> T {
        (self.lambda + self.big_lambda) / self.lambda * self.delta
    }

    /// Dislocations per unit length at zero average strain, `lambda / (delta (lambda + Lambda))`.
    pub fn predicted_density(&self) -> T {
        self.lambda / (self.delta * (self.lambda + self.big_lambda))
    }

    /// The alternative constant `Lambda / (delta (lambda + Lambda))`; equals
    /// [`predicted_density`](Self::predicted_density) only when `lambda == Lambda`.
    pub fn alternative_density(&self) -> T {
        self.big_lambda / (self.delta * (self.lambda + self.big_lambda))
    }

    /// Largest `N` with `N delta < l + delta`, i.e. the most cores that fit.
    pub fn max_dislocations(&self) -> usize {
        let ratio = ((self.l + self.delta) / self.delta).to_f64_lossy();
        // strict inequality; the slack absorbs rounding in the ratio
        (ratio - 1e-9).floor().max(0.0) as usize
    }

    /// Open range `(-delta/2, l + delta/2)` that centers must lie in.
    pub fn center_range(&self) -> (T, T) {
        let half = self.delta / T::lit(2.0);
        (-half, self.l + half)
    }
}

/// Sorted dislocation centers with pairwise disjoint cores of width `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig<T>")]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DislocationConfig<T = f64> {
    #[serde(flatten)]
    params: ModelParams<T>,
    centers: Vec<T>,
}

#[derive(Deserialize)]
struct RawConfig<T> {
    #[serde(flatten)]
    params: RawParams<T>,
    #[serde(default)]
    centers: Vec<T>,
}

impl<T: Scalar> TryFrom<RawConfig<T>> for DislocationConfig<T> {
    type Error = Error;

    fn try_from(raw: RawConfig<T>) -> Result<Self> {
        let params = ModelParams::try_from(raw.params)?;
        validate_config(raw.centers, params)
    }
}

/// Sorts `centers` and checks them against the admissible class for `params`.
pub fn validate_config<T: Scalar>(
    mut centers: Vec<T>,
    params: ModelParams<T>,
) -> Result<DislocationConfig<T>> {
    params.validate()?;
    if let Some(bad) = centers.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite center {bad}")));
    }
    centers.sort_by(|a, b| a.partial_cmp(b).expect("finite centers"));
    let (lo, hi) = params.center_range();
    for &c in &centers {
        if c <= lo || c >= hi {
            return Err(Error::OutOfRange {
                center: c.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
    }
    let slack = T::lit(SEPARATION_SLACK);
    for pair in centers.windows(2) {
        if pair[1] - pair[0] < params.delta - slack {
            return Err(Error::SeparationViolation {
                left: pair[0].to_f64_lossy(),
                right: pair[1].to_f64_lossy(),
                delta: params.delta.to_f64_lossy(),
            });
        }
    }
    Ok(DislocationConfig { params, centers })
}

impl<T: Scalar> DislocationConfig<T> {
    pub fn empty(params: ModelParams<T>) -> Self {
        Self {
            params,
            centers: Vec::new(),
        }
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Core intervals `(x_i - delta/2, x_i + delta/2)`, not truncated.
    pub fn cores(&self) -> impl Iterator<Item = (T, T)> + '_ {
        let half = self.params.delta / T::lit(2.0);
        self.centers.iter().map(move |&c| (c - half, c + half))
    }
}

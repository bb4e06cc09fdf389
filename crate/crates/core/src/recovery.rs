//! Recovery configurations: a minimal-energy configuration at length `l` with extra
//! dislocations plugged in so that the rescaled displacement follows a prescribed
//! piecewise-affine macroscopic profile.

use serde::{Deserialize, Serialize};

use crate::displacement::{displacement_from_config, PiecewiseAffine};
use crate::error::{Error, Result};
use crate::halfline::energy_exact;
use crate::interval::{estimate_cl, ClEstimate, ClOptions};
use crate::model::{validate_config, DislocationConfig, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryOptions<T = f64> {
    /// Largest admitted hole between plugged points, in units of `1/sqrt(l)` on `[0, 1]`.
    /// `None` uses twice the largest nominal spacing coefficient.
    pub gap_constant: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RecoveryResult<T = f64> {
    pub config: DislocationConfig<T>,
    /// Plugged points in the coordinates of the final configuration, before truncation.
    pub plugged: Vec<T>,
    /// Nominal spacing of plugged points in every slope region, final coordinates.
    pub spacings: Vec<T>,
    /// Largest deviation of a consecutive spacing from its nominal value.
    pub max_spacing_error: T,
    /// Largest hole between consecutive plugged points of one region, rescaled to `[0, 1]`.
    pub max_hole: T,
    pub gap_constant: T,
    /// `E^l(u) / l` of the returned configuration.
    pub rescaled_energy: T,
    pub c_l: T,
    /// Seminorm energy of the macroscopic profile on `[0, 1]`.
    pub profile_energy: T,
    /// `c_l + profile_energy`.
    pub target: T,
}

impl<T: Scalar> RecoveryResult<T> {
    pub fn relative_gap(&self) -> T {
        (self.rescaled_energy - self.target).abs() / self.target.abs()
    }
}

/// Nominal spacing, at length `l`, of plugged points for a region of slope `alpha`.
pub fn nominal_spacing<T: Scalar>(alpha: T, l: T, params: &ModelParams<T>) -> Result<T> {
    if alpha == T::zero() || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "slope {} must be finite and nonzero",
            alpha.to_f64_lossy()
        )));
    }
    let strain = if alpha > T::zero() {
        params.lambda
    } else {
        params.big_lambda
    };
    Ok(l.sqrt() * strain * params.delta / alpha.abs())
}

/// Moves `p` out of any open base core to the nearer end of that core.
fn nudge<T: Scalar>(p: T, base: &[T], half: T) -> T {
    let i = base.partition_point(|&c| c <= p);
    for &c in base[i.saturating_sub(1)..(i + 1).min(base.len())].iter() {
        if (p - c).abs() < half {
            return if p < c { c - half } else { c + half };
        }
    }
    p
}

/// Plugs extra dislocations into the minimizer `base` so that the result realises the
/// macroscopic profile `w` on `[0, 1]` at scale `base.l`.
///
/// In a region where `w` has slope `alpha > 0` every plugged point opens an elastic interval
/// of width `delta`; where `alpha < 0` it inserts an extra core. Plugged points follow the
/// nominal spacing up to `delta` and avoid the interior of the base cores.
pub fn recovery_from_estimate<T: Scalar>(
    w: &PiecewiseAffine<T>,
    base: &ClEstimate<T>,
    opts: &RecoveryOptions<T>,
) -> Result<RecoveryResult<T>> {
    let params = base.params;
    let l = params.l;
    let delta = params.delta;
    let half = delta / T::lit(2.0);
    if (w.start() - T::zero()).abs() > T::epsilon()
        || (w.end() - T::one()).abs() > T::lit(1e3) * T::epsilon()
    {
        return Err(Error::InvalidInput(
            "macroscopic profile must live on [0, 1]".into(),
        ));
    }
    let w = w.without_degenerate();
    let spacings = w
        .slopes()
        .iter()
        .map(|&a| nominal_spacing(a, l, &params))
        .collect::<Result<Vec<_>>>()?;
    for (&s, &a) in spacings.iter().zip(w.slopes()) {
        if s <= delta {
            return Err(Error::SlopeTooSteep {
                slope: a.to_f64_lossy(),
                spacing: s.to_f64_lossy(),
                delta: delta.to_f64_lossy(),
            });
        }
    }
    let gap_constant = opts.gap_constant.unwrap_or_else(|| {
        let coeff = spacings.iter().fold(T::zero(), |m, &s| m.max(s / l.sqrt()));
        T::lit(2.0) * coeff
    });

    let base_centers = base.centers_star.clone();
    let mut plugged = Vec::new();
    let mut shifts = Vec::new();
    let mut adds_core = Vec::new();
    let mut max_spacing_error = T::zero();
    let mut max_hole = T::zero();
    for (j, &s) in spacings.iter().enumerate() {
        let (a, b) = w.segment(j);
        let (a, b) = (a * l, b * l);
        let mut prev: Option<T> = None;
        let mut k = 0usize;
        loop {
            let q = a + s / T::lit(2.0) + T::from_usize_lossy(k) * s;
            if q >= b {
                break;
            }
            let m = T::from_usize_lossy(plugged.len());
            let p = nudge(q - half - m * delta, &base_centers, half);
            let q_actual = p + m * delta + half;
            if let Some(prev) = prev {
                max_spacing_error = max_spacing_error.max((q_actual - prev - s).abs());
                max_hole = max_hole.max((q_actual - prev) / l);
            }
            prev = Some(q_actual);
            plugged.push(q_actual);
            shifts.push(p);
            adds_core.push(w.slopes()[j] < T::zero());
            k += 1;
        }
    }

    let (lo, hi) = params.center_range();
    let mut centers: Vec<T> = base_centers
        .iter()
        .map(|&c| c + delta * T::from_usize_lossy(shifts.partition_point(|&p| p < c)))
        .collect();
    centers.extend(
        plugged
            .iter()
            .zip(&adds_core)
            .filter(|(_, &core)| core)
            .map(|(&q, _)| q),
    );
    centers.retain(|&c| c > lo && c < hi);
    let config = validate_config(centers, params)?;

    let u = displacement_from_config(&config);
    let rescaled_energy = energy_exact(&u)?.value / l;
    let profile_energy = energy_exact(&w)?.value;
    let c_l = base.c_l;
    Ok(RecoveryResult {
        config,
        plugged,
        spacings,
        max_spacing_error,
        max_hole,
        gap_constant,
        rescaled_energy,
        c_l,
        profile_energy,
        target: c_l + profile_energy,
    })
}

/// Estimates the minimizer at length `l` and plugs in the dislocations for `w`.
pub fn build_recovery_sequence<T: Scalar>(
    w: &PiecewiseAffine<T>,
    l: T,
    params: &ModelParams<T>,
    cl_opts: &ClOptions,
    opts: &RecoveryOptions<T>,
) -> Result<RecoveryResult<T>> {
    let base = estimate_cl(&params.with_length(l)?, cl_opts)?;
    recovery_from_estimate(w, &base, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_estimate(l: f64) -> ClEstimate<f64> {
        let params = ModelParams::<f64>::new(1.0, 1.0, 0.1, l).unwrap();
        estimate_cl(
            &params,
            &ClOptions {
                restarts: 2,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn positive_slope_spacing_follows_lambda() {
        let base = base_estimate(25.0);
        let w = PiecewiseAffine::<f64>::affine(0.0, 1.0, 0.5, 0.0).unwrap();
        let rec = recovery_from_estimate(&w, &base, &RecoveryOptions::default()).unwrap();
        assert!((rec.spacings[0] - 5.0 * 0.1 / 0.5).abs() < 1e-12);
        assert!(rec.max_spacing_error <= 0.1 + 1e-12);
        assert_eq!(rec.plugged.len(), 25);
        assert!(rec.max_hole <= rec.gap_constant / 25f64.sqrt());
        // elastic insertions keep the core count of the base minus what was pushed out
        assert!(rec.config.len() <= base.n_star);
    }

    #[test]
    fn negative_slope_inserts_cores_with_big_lambda_spacing() {
        let base = base_estimate(25.0);
        let params = ModelParams::<f64>::new(1.0, 2.0, 0.1, 25.0).unwrap();
        let base = ClEstimate { params, ..base };
        let w = PiecewiseAffine::<f64>::affine(0.0, 1.0, -0.5, 0.0).unwrap();
        let rec = recovery_from_estimate(&w, &base, &RecoveryOptions::default()).unwrap();
        assert!((rec.spacings[0] - 5.0 * 2.0 * 0.1 / 0.5).abs() < 1e-12);
        let inserted = rec
            .plugged
            .iter()
            .filter(|q| {
                rec.config
                    .centers()
                    .iter()
                    .any(|c| (*c - **q).abs() < 1e-12)
            })
            .count();
        assert_eq!(inserted, rec.plugged.len());
    }

    #[test]
    fn macroscopic_slope_is_realised() {
        let base = base_estimate(25.0);
        let w = PiecewiseAffine::<f64>::affine(0.0, 1.0, 0.5, 0.0).unwrap();
        let rec = recovery_from_estimate(&w, &base, &RecoveryOptions::default()).unwrap();
        let u = displacement_from_config(&rec.config);
        let base_u = displacement_from_config(&base.config().unwrap());
        let rise = (u.eval(25.0) - base_u.eval(25.0)) / 5.0;
        assert!((rise - 0.5).abs() < 0.2, "rise {rise}");
    }

    #[test]
    fn steep_slope_is_refused() {
        let base = base_estimate(5.0);
        let w = PiecewiseAffine::<f64>::affine(0.0, 1.0, 50.0, 0.0).unwrap();
        let err = recovery_from_estimate(&w, &base, &RecoveryOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SlopeTooSteep { .. }));
    }
}

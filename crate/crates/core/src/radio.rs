//! Log-distance path-loss model.
//!
//! Received power falls off as `-10 n log10(d)` around a 1 m reference level
//! `C`. Every wall on the straight line between two devices subtracts a fixed
//! attenuation, which inflates the distance a receiver infers from the signal.
//! That inflation is the only barrier-sensing mechanism: a walled contact reads
//! as far away and never crosses the proximity threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("invalid radio parameter `{name}`: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Propagation environment shared by every device in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Path-loss exponent `n`. 2.0 is free space.
    pub path_loss_exponent: f64,
    /// RSSI at 1 m, in dBm.
    pub system_constant_dbm: f64,
    /// Standard deviation of the additive Gaussian RSSI noise, in dB.
    pub noise_sigma_db: f64,
    /// Attenuation per wall crossed, in dB.
    pub wall_attenuation_db: f64,
    /// Distances below this are clamped up to it before taking the log.
    pub min_distance_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            path_loss_exponent: 2.0,
            system_constant_dbm: -40.0,
            noise_sigma_db: 0.0,
            wall_attenuation_db: 15.0,
            min_distance_m: 0.01,
        }
    }
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> RadioError {
    RadioError::InvalidParameter {
        name,
        value,
        reason,
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        let n = self.path_loss_exponent;
        if !n.is_finite() || n <= 0.0 {
            return Err(invalid("path_loss_exponent", n, "must be finite and > 0"));
        }
        if !self.system_constant_dbm.is_finite() {
            return Err(invalid(
                "system_constant_dbm",
                self.system_constant_dbm,
                "must be finite",
            ));
        }
        let sigma = self.noise_sigma_db;
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(invalid("noise_sigma_db", sigma, "must be finite and >= 0"));
        }
        let wall = self.wall_attenuation_db;
        if !wall.is_finite() || wall < 0.0 {
            return Err(invalid(
                "wall_attenuation_db",
                wall,
                "must be finite and >= 0",
            ));
        }
        let min_d = self.min_distance_m;
        if !min_d.is_finite() || min_d <= 0.0 {
            return Err(invalid("min_distance_m", min_d, "must be finite and > 0"));
        }
        Ok(())
    }
}

/// RSSI observed at true distance `distance_m` through `walls_crossed` walls.
///
/// `noise_db` is an already-drawn noise sample; callers own the randomness so a
/// single draw can be shared by both ends of a link.
pub fn rssi_from_distance(
    distance_m: f64,
    walls_crossed: u32,
    params: &RadioParams,
    noise_db: f64,
) -> Result<f64, RadioError> {
    params.validate()?;
    if !distance_m.is_finite() || distance_m < 0.0 {
        return Err(invalid("distance", distance_m, "must be finite and >= 0"));
    }
    if !noise_db.is_finite() {
        return Err(invalid("noise", noise_db, "must be finite"));
    }
    Ok(rssi_unchecked(distance_m, walls_crossed, params, noise_db))
}

/// Hot-loop variant of [`rssi_from_distance`] for parameters that were
/// validated once up front.
#[inline]
pub(crate) fn rssi_unchecked(
    distance_m: f64,
    walls_crossed: u32,
    params: &RadioParams,
    noise_db: f64,
) -> f64 {
    let d = distance_m.max(params.min_distance_m);
    -10.0 * params.path_loss_exponent * d.log10() + params.system_constant_dbm
        - f64::from(walls_crossed) * params.wall_attenuation_db
        + noise_db
}

/// Inverts the path-loss model: the distance a receiver infers from `rssi_dbm`.
pub fn distance_from_rssi(rssi_dbm: f64, params: &RadioParams) -> Result<f64, RadioError> {
    if !rssi_dbm.is_finite() {
        return Err(invalid("rssi", rssi_dbm, "must be finite"));
    }
    let n = params.path_loss_exponent;
    if !n.is_finite() || n <= 0.0 {
        return Err(invalid("path_loss_exponent", n, "must be finite and > 0"));
    }
    if !params.system_constant_dbm.is_finite() {
        return Err(invalid(
            "system_constant_dbm",
            params.system_constant_dbm,
            "must be finite",
        ));
    }
    Ok(distance_unchecked(rssi_dbm, params))
}

#[inline]
pub(crate) fn distance_unchecked(rssi_dbm: f64, params: &RadioParams) -> f64 {
    10f64.powf((params.system_constant_dbm - rssi_dbm) / (10.0 * params.path_loss_exponent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn p(n: f64, c: f64) -> RadioParams {
        RadioParams {
            path_loss_exponent: n,
            system_constant_dbm: c,
            ..RadioParams::default()
        }
    }

    #[test]
    fn rssi_at_reference_distance_is_system_constant() {
        assert_eq!(
            rssi_from_distance(1.0, 0, &p(2.0, -40.0), 0.0).unwrap(),
            -40.0
        );
    }

    #[test]
    fn rssi_at_ten_meters() {
        let r = rssi_from_distance(10.0, 0, &p(2.0, -40.0), 0.0).unwrap();
        assert!((r - -60.0).abs() < 1e-12);
    }

    #[test]
    fn one_wall_costs_fifteen_db() {
        let params = RadioParams {
            wall_attenuation_db: 15.0,
            ..p(2.0, -40.0)
        };
        let r = rssi_from_distance(10.0, 1, &params, 0.0).unwrap();
        assert!((r - -75.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let params = p(2.0, -40.0);
        assert!((distance_from_rssi(-60.0, &params).unwrap() - 10.0).abs() < 1e-12);
        for n in [0.5, 2.0, 3.7] {
            assert_eq!(distance_from_rssi(-40.0, &p(n, -40.0)).unwrap(), 1.0);
        }
        // 10^(35/20)
        let walled = distance_from_rssi(-75.0, &params).unwrap();
        assert!((walled - 56.234_132_519_034_91).abs() < 1e-9, "{walled}");
    }

    #[test]
    fn distance_below_floor_is_clamped() {
        let params = RadioParams::default();
        let at_zero = rssi_from_distance(0.0, 0, &params, 0.0).unwrap();
        let at_floor = rssi_from_distance(params.min_distance_m, 0, &params, 0.0).unwrap();
        assert_eq!(at_zero, at_floor);
        assert!(at_zero.is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = RadioParams::default();
        assert!(rssi_from_distance(f64::NAN, 0, &params, 0.0).is_err());
        assert!(rssi_from_distance(f64::INFINITY, 0, &params, 0.0).is_err());
        assert!(rssi_from_distance(-1.0, 0, &params, 0.0).is_err());
        assert!(rssi_from_distance(1.0, 0, &p(0.0, -40.0), 0.0).is_err());
        assert!(rssi_from_distance(1.0, 0, &p(2.0, f64::NAN), 0.0).is_err());
        assert!(distance_from_rssi(-50.0, &p(0.0, -40.0)).is_err());
        assert!(distance_from_rssi(f64::NEG_INFINITY, &params).is_err());

        let mut bad = params;
        bad.min_distance_m = 0.0;
        assert!(bad.validate().is_err());
        bad = params;
        bad.noise_sigma_db = -0.1;
        assert!(bad.validate().is_err());
        bad = params;
        bad.wall_attenuation_db = -3.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_mean_is_unbiased() {
        let params = RadioParams {
            noise_sigma_db: 4.0,
            ..RadioParams::default()
        };
        let normal = Normal::new(0.0, params.noise_sigma_db).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let clean = rssi_from_distance(3.0, 0, &params, 0.0).unwrap();
        let mean = (0..n)
            .map(|_| rssi_from_distance(3.0, 0, &params, normal.sample(&mut rng)).unwrap())
            .sum::<f64>()
            / n as f64;
        let bound = 3.0 * params.noise_sigma_db / (n as f64).sqrt();
        assert!((mean - clean).abs() < bound, "mean {mean} vs {clean}");
    }

    proptest! {
        #[test]
        fn round_trip(d in 0.01f64..100.0, n in 1.0f64..6.0, c in -90.0f64..0.0) {
            let params = p(n, c);
            let back = distance_from_rssi(rssi_from_distance(d, 0, &params, 0.0).unwrap(), &params).unwrap();
            prop_assert!(((back - d) / d).abs() < 1e-9);
        }

        #[test]
        fn strictly_decreasing(d in 0.01f64..99.0, delta in 0.001f64..1.0, walls in 0u32..4) {
            let params = RadioParams::default();
            let near = rssi_from_distance(d, walls, &params, 0.0).unwrap();
            let far = rssi_from_distance(d + delta, walls, &params, 0.0).unwrap();
            prop_assert!(far < near);
            prop_assert!(distance_from_rssi(near, &params).unwrap() < distance_from_rssi(far, &params).unwrap());
        }

        #[test]
        fn walls_inflate_estimates(d in 0.01f64..100.0, walls in 1u32..5, att in 0.1f64..30.0) {
            let params = RadioParams { wall_attenuation_db: att, ..RadioParams::default() };
            let est = distance_from_rssi(rssi_from_distance(d, walls, &params, 0.0).unwrap(), &params).unwrap();
            prop_assert!(est > d);
        }
    }
}

//! Satellite pass geometry and uplink rate model.
//!
//! Covers the two link-level quantities the simulator needs: how long a
//! low-orbit satellite stays usable from the ground (coverage time over the
//! visible arc) and the uplink rate of a user sharing spectrum with its
//! cohort (Shannon rate under mutual interference).

use thiserror::Error;

/// Pass geometry of the serving LEO satellite.
///
/// The minimum elevation angle is an input; the geocentric angle of the
/// service arc is derived from it. The slant distance is informational only.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteGeometry {
    pub altitude_km: f64,
    pub earth_radius_km: f64,
    pub velocity_km_s: f64,
    pub min_elevation_rad: f64,
    /// Slant range at the edge of coverage; recorded, never used in math.
    pub slant_distance_km: f64,
}

impl SatelliteGeometry {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.altitude_km <= 0.0
            || self.earth_radius_km <= 0.0
            || self.velocity_km_s <= 0.0
            || !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.min_elevation_rad)
        {
            return Err(LinkError::InvalidGeometry);
        }
        Ok(())
    }
}

/// Shared-spectrum uplink parameters for one operator's user cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub noise_power_w: f64,
    /// Per-user (mean channel gain, transmit power in W).
    pub users: Vec<(f64, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("geometry parameters out of range")]
    InvalidGeometry,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("user index {0} outside cohort")]
    UnknownUser(usize),
}

/// Geocentric half-angle of the satellite's service arc, in radians.
///
/// `acos((E / (E + l)) * cos(theta_e)) - theta_e`, clamped at zero when the
/// required elevation leaves no visible arc.
pub fn geocentric_angle(geom: &SatelliteGeometry) -> f64 {
    let ratio = geom.earth_radius_km / (geom.earth_radius_km + geom.altitude_km);
    let angle = (ratio * geom.min_elevation_rad.cos()).acos() - geom.min_elevation_rad;
    angle.max(0.0)
}

/// Maximal communication duration of one pass, in seconds.
///
/// The satellite sweeps an arc of length `2 * theta_g * (E + l)` km at
/// `v` km/s.
pub fn coverage_time(geom: &SatelliteGeometry) -> f64 {
    let arc_km = 2.0 * geocentric_angle(geom) * (geom.earth_radius_km + geom.altitude_km);
    arc_km / geom.velocity_km_s
}

/// Uplink rate in bit/s of user `u` while the rest of the cohort transmits
/// on the same spectrum.
pub fn uplink_rate(budget: &LinkBudget, u: usize) -> Result<f64, LinkError> {
    let (gain, power) = *budget.users.get(u).ok_or(LinkError::UnknownUser(u))?;
    let interference: f64 = budget
        .users
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != u)
        .map(|(_, (g, p))| g * p)
        .sum();
    let sinr = gain * power / (interference + budget.noise_power_w);
    Ok(budget.bandwidth_hz * (1.0 + sinr).log2())
}

/// Arithmetic mean of the cohort's uplink rates, in bit/s.
pub fn mean_uplink_rate(budget: &LinkBudget) -> Result<f64, LinkError> {
    if budget.users.is_empty() {
        return Err(LinkError::EmptyCohort);
    }
    let total: f64 = (0..budget.users.len())
        .map(|u| uplink_rate(budget, u).expect("index in range"))
        .sum();
    Ok(total / budget.users.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn iridium_like(elev: f64) -> SatelliteGeometry {
        SatelliteGeometry {
            altitude_km: 780.0,
            earth_radius_km: 6371.0,
            velocity_km_s: 7.46,
            min_elevation_rad: elev,
            slant_distance_km: 0.0,
        }
    }

    #[test]
    fn geocentric_angle_zero_elevation_is_pure_arccos() {
        let geom = iridium_like(0.0);
        let expected = (6371.0f64 / 7151.0).acos();
        assert_relative_eq!(geocentric_angle(&geom), expected, max_relative = 1e-15);
        assert!(geocentric_angle(&geom) > 0.0);
        assert!(geocentric_angle(&geom) < std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn geocentric_angle_clamps_at_degenerate_elevation() {
        // At the elevation where the arc closes, the angle clamps to zero.
        // cos(theta_e) * ratio stays below cos(theta_e), so acos(..) - theta_e
        // can go negative for large theta_e; pick one close to pi/2.
        let geom = iridium_like(1.5);
        assert_eq!(geocentric_angle(&geom), 0.0);
    }

    #[test]
    fn coverage_time_matches_independent_arc_length() {
        let geom = iridium_like(0.0);
        let theta = (6371.0f64 / 7151.0).acos();
        // Independent arc-length route: chord angle times radius of the orbit
        // shell, accumulated as two symmetric halves.
        let half_arc = theta * 7151.0;
        let expected = (half_arc + half_arc) / 7.46;
        assert_relative_eq!(coverage_time(&geom), expected, max_relative = 1e-14);
    }

    #[test]
    fn coverage_time_zero_arc() {
        let geom = iridium_like(1.5);
        assert_eq!(coverage_time(&geom), 0.0);
    }

    #[test]
    fn coverage_time_halves_when_velocity_doubles() {
        let slow = iridium_like(0.1);
        let mut fast = slow.clone();
        fast.velocity_km_s *= 2.0;
        assert_relative_eq!(
            coverage_time(&slow),
            2.0 * coverage_time(&fast),
            max_relative = 1e-15
        );
    }

    #[test]
    fn coverage_time_nonincreasing_in_elevation() {
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let geom = iridium_like(i as f64 * 0.05);
            let t = coverage_time(&geom);
            assert!(t <= prev + 1e-12);
            prev = t;
        }
    }

    #[test]
    fn uplink_rate_single_user_unit_snr() {
        // g * p / sigma^2 = 1 => log2(2) = 1 => rate = bandwidth.
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![(1e-13, 1.0)],
        };
        assert_relative_eq!(uplink_rate(&budget, 0).unwrap(), 20e6, max_relative = 1e-12);
    }

    #[test]
    fn uplink_rate_zero_gain_is_zero() {
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![(0.0, 1.0), (1e-13, 1.0)],
        };
        assert_eq!(uplink_rate(&budget, 0).unwrap(), 0.0);
    }

    #[test]
    fn uplink_rate_two_symmetric_users() {
        // Each user sees the other's g*p equal to the noise power, so
        // SINR = 1/2 for both.
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![(1e-13, 1.0), (1e-13, 1.0)],
        };
        let expected = 20e6 * 1.5f64.log2();
        let r0 = uplink_rate(&budget, 0).unwrap();
        let r1 = uplink_rate(&budget, 1).unwrap();
        assert_relative_eq!(r0, expected, max_relative = 1e-12);
        assert_relative_eq!(r0, r1, max_relative = 1e-15);
    }

    #[test]
    fn mean_rate_of_singleton_equals_rate() {
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![(2e-13, 0.5)],
        };
        assert_eq!(
            mean_uplink_rate(&budget).unwrap(),
            uplink_rate(&budget, 0).unwrap()
        );
    }

    #[test]
    fn mean_rate_empty_cohort_errors() {
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![],
        };
        assert_eq!(mean_uplink_rate(&budget), Err(LinkError::EmptyCohort));
    }

    #[test]
    fn mean_rate_ten_default_users_matches_summation_oracle() {
        // Ten users at 0.2 W on 20 MHz with varied gains; oracle is a
        // separately-coded accumulation in descending index order.
        let users: Vec<(f64, f64)> = (0..10)
            .map(|i| (1e-13 * (1.0 + 0.1 * i as f64), 0.2))
            .collect();
        let budget = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users,
        };
        let mut oracle = 0.0f64;
        for u in (0..10).rev() {
            let (g, p) = budget.users[u];
            let mut interf = 0.0f64;
            for (j, (gj, pj)) in budget.users.iter().enumerate() {
                if j != u {
                    interf += gj * pj;
                }
            }
            oracle += budget.bandwidth_hz * (1.0 + g * p / (interf + 1e-13)).log2();
        }
        oracle /= 10.0;
        assert_relative_eq!(mean_uplink_rate(&budget).unwrap(), oracle, max_relative = 1e-12);
    }

    #[test]
    fn rate_monotone_in_own_gain_and_antitone_in_interferer_power() {
        let base = LinkBudget {
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            users: vec![(1e-13, 0.2), (2e-13, 0.2)],
        };
        let r = uplink_rate(&base, 0).unwrap();
        let mut better = base.clone();
        better.users[0].0 *= 2.0;
        assert!(uplink_rate(&better, 0).unwrap() >= r);
        let mut noisier = base.clone();
        noisier.users[1].1 *= 2.0;
        assert!(uplink_rate(&noisier, 0).unwrap() <= r);
    }
}

//! Physical layout of the sectorized cylindrical array and the ground users.
//!
//! The HAPS carries `n_sectors` vertical uniform planar arrays (UPAs) around a
//! cylinder. Each sector covers an azimuth wedge of width `2π / n_sectors` and
//! has its own local frame: `x` is the sector boresight, `y` runs along the
//! horizontal rows of the array and `z` points up along the columns.
//!
//! Users are described in a flat ground frame centered under the platform.
//! Their direction relative to a sector is reduced to the two spatial
//! coordinates used by the steering vectors:
//!
//! * `mu_h = cos θ = r / sqrt(r² + h²)`, with `θ` the elevation measured from
//!   the horizontal plane at the HAPS (nadir is `θ = π/2`), and
//! * `mu_phi = sin θ · sin φ`, with `φ` the azimuth relative to the serving
//!   sector's boresight, so every sector's coordinate space is centered at 0.
//!
//! Together they are direction cosines, so `mu_phi² + mu_h² ≤ 1`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid array configuration: {0}")]
    InvalidArray(String),

    #[error("element index {index} out of range 1..={count}")]
    ElementOutOfRange { index: usize, count: usize },

    #[error("HAPS altitude must be positive, got {0} m")]
    NonPositiveAltitude(f64),
}

/// Geometry and carrier parameters shared by every sector of the cylinder.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    /// Elements per horizontal row.
    pub m_x: usize,
    /// Elements per vertical column.
    pub m_y: usize,
    /// Horizontal spacing in wavelengths.
    pub d_h: f64,
    /// Vertical spacing in wavelengths.
    pub d_v: f64,
    /// Number of UPA faces around the cylinder.
    pub n_sectors: usize,
    /// Carrier frequency (Hz).
    pub carrier_freq: f64,
}

impl ArrayConfig {
    pub fn new(
        m_x: usize,
        m_y: usize,
        d_h: f64,
        d_v: f64,
        n_sectors: usize,
        carrier_freq: f64,
    ) -> Result<Self, GeometryError> {
        let cfg = Self {
            m_x,
            m_y,
            d_h,
            d_v,
            n_sectors,
            carrier_freq,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.m_x == 0 || self.m_y == 0 {
            return Err(GeometryError::InvalidArray(format!(
                "array dimensions must be at least 1x1, got {}x{}",
                self.m_x, self.m_y
            )));
        }
        if self.n_sectors == 0 {
            return Err(GeometryError::InvalidArray(
                "n_sectors must be at least 1".into(),
            ));
        }
        if !(self.d_h > 0.0) || !(self.d_v > 0.0) {
            return Err(GeometryError::InvalidArray(format!(
                "element spacing must be positive, got d_h={} d_v={}",
                self.d_h, self.d_v
            )));
        }
        if !(self.carrier_freq > 0.0) || !self.carrier_freq.is_finite() {
            return Err(GeometryError::InvalidArray(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_freq
            )));
        }
        Ok(())
    }

    /// Total element count `M = m_x · m_y`.
    pub fn element_count(&self) -> usize {
        self.m_x * self.m_y
    }

    /// Carrier wavelength in meters.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Azimuth width `δ` of one sector (radians).
    pub fn sector_width(&self) -> f64 {
        TAU / self.n_sectors as f64
    }

    /// Boresight azimuth of the 1-based `sector`, in the ground frame.
    pub fn boresight(&self, sector: usize) -> f64 {
        (sector as f64 - 0.5) * self.sector_width()
    }
}

/// Element location in the sector-local frame (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementPosition(pub [f64; 3]);

/// A ground user below the platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPosition {
    pub ground_x: f64,
    pub ground_y: f64,
    pub haps_altitude: f64,
}

impl UserPosition {
    /// Horizontal distance from the point below the HAPS.
    pub fn ground_distance(&self) -> f64 {
        self.ground_x.hypot(self.ground_y)
    }

    /// Straight-line distance to the HAPS.
    pub fn slant_range(&self) -> f64 {
        self.ground_distance().hypot(self.haps_altitude)
    }

    /// Azimuth in the ground frame, wrapped to `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        wrap_two_pi(self.ground_y.atan2(self.ground_x))
    }
}

/// Direction of a user as seen from one sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularCoordinates {
    /// Azimuth relative to the sector boresight, in `(-π, π]`.
    pub azimuth: f64,
    /// Elevation from the horizontal plane at the HAPS; nadir is `π/2`.
    pub elevation: f64,
    pub mu_phi: f64,
    pub mu_h: f64,
}

impl AngularCoordinates {
    /// Builds coordinates directly from a local azimuth and elevation.
    pub fn from_angles(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth,
            elevation,
            mu_phi: elevation.sin() * azimuth.sin(),
            mu_h: elevation.cos(),
        }
    }

    /// `(azimuth, polar elevation)` in the array frame, i.e. the arguments for
    /// [`wave_vector`] whose `y` and `z` components are `mu_phi` and `mu_h`.
    pub fn array_frame_angles(&self) -> (f64, f64) {
        (self.azimuth, FRAC_PI_2 - self.elevation)
    }
}

/// Location of the 1-based element `m`: row index `i(m) = (m-1) mod m_x`,
/// column index `j(m) = floor((m-1) / m_x)`.
pub fn element_position(m: usize, cfg: &ArrayConfig) -> Result<ElementPosition, GeometryError> {
    let count = cfg.element_count();
    if m == 0 || m > count {
        return Err(GeometryError::ElementOutOfRange { index: m, count });
    }
    let i = (m - 1) % cfg.m_x;
    let j = (m - 1) / cfg.m_x;
    let lambda = cfg.wavelength();
    Ok(ElementPosition([
        0.0,
        i as f64 * cfg.d_h * lambda,
        j as f64 * cfg.d_v * lambda,
    ]))
}

/// Plane-wave vector `(2π/λ)·[cosθ cosφ, cosθ sinφ, sinθ]`.
pub fn wave_vector(azimuth: f64, elevation: f64, wavelength: f64) -> [f64; 3] {
    debug_assert!(wavelength > 0.0);
    let k = TAU / wavelength;
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    [k * ct * cp, k * ct * sp, k * st]
}

/// Angles of `user` relative to a sector whose boresight points at
/// `boresight` (ground-frame azimuth).
pub fn user_angles(
    user: &UserPosition,
    boresight: f64,
) -> Result<AngularCoordinates, GeometryError> {
    let h = user.haps_altitude;
    if !(h > 0.0) {
        return Err(GeometryError::NonPositiveAltitude(h));
    }
    let r = user.ground_distance();
    let rho = r.hypot(h);
    let azimuth = wrap_pi(user.azimuth() - boresight);
    Ok(AngularCoordinates {
        azimuth,
        elevation: h.atan2(r),
        // exact ratios keep mu_h = 0 at nadir
        mu_phi: (h / rho) * azimuth.sin(),
        mu_h: r / rho,
    })
}

/// 1-based sector whose half-open wedge `[(n-1)δ, nδ)` contains `azimuth`.
pub fn sector_of(azimuth: f64, n_sectors: usize) -> usize {
    assert!(n_sectors >= 1, "n_sectors must be at least 1");
    let delta = TAU / n_sectors as f64;
    let idx = (wrap_two_pi(azimuth) / delta).floor() as usize;
    idx.min(n_sectors - 1) + 1
}

/// Drops `count` users i.i.d. uniformly over a disk of radius `coverage_radius`.
pub fn drop_users<R: Rng + ?Sized>(
    count: usize,
    coverage_radius: f64,
    haps_altitude: f64,
    rng: &mut R,
) -> Vec<UserPosition> {
    (0..count)
        .map(|_| {
            let r = coverage_radius * rng.random::<f64>().sqrt();
            let phi = TAU * rng.random::<f64>();
            UserPosition {
                ground_x: r * phi.cos(),
                ground_y: r * phi.sin(),
                haps_altitude,
            }
        })
        .collect()
}

/// [`drop_users`] with its own generator seeded from `seed`.
pub fn drop_users_seeded(
    count: usize,
    coverage_radius: f64,
    haps_altitude: f64,
    seed: u64,
) -> Vec<UserPosition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drop_users(count, coverage_radius, haps_altitude, &mut rng)
}

/// Ground position that produces the spatial coordinates `(mu_phi, mu_h)` in
/// the sector with boresight `boresight`. Returns `None` when the pair is not
/// a physical direction below the platform.
pub fn user_from_spatial(
    mu_phi: f64,
    mu_h: f64,
    boresight: f64,
    haps_altitude: f64,
) -> Option<UserPosition> {
    if !(0.0..1.0).contains(&mu_h) {
        return None;
    }
    let sin_el = (1.0 - mu_h * mu_h).sqrt();
    let s = mu_phi / sin_el;
    if !(-1.0..=1.0).contains(&s) {
        return None;
    }
    let r = haps_altitude * mu_h / sin_el;
    let azimuth = boresight + s.asin();
    Some(UserPosition {
        ground_x: r * azimuth.cos(),
        ground_y: r * azimuth.sin(),
        haps_altitude,
    })
}

fn wrap_two_pi(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn wrap_pi(x: f64) -> f64 {
    let w = wrap_two_pi(x);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m_x: usize, m_y: usize) -> ArrayConfig {
        // λ = 0.12 m
        ArrayConfig::new(m_x, m_y, 0.5, 0.5, 6, SPEED_OF_LIGHT / 0.12).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn element_positions_follow_row_major_layout() {
        let c = cfg(3, 2);
        assert_eq!(element_position(1, &c).unwrap().0, [0.0, 0.0, 0.0]);
        let p2 = element_position(2, &c).unwrap().0;
        assert!(close(p2[1], 0.06, 1e-12) && p2[0] == 0.0 && p2[2] == 0.0);
        let p4 = element_position(4, &c).unwrap().0;
        assert!(close(p4[2], 0.06, 1e-12) && p4[1] == 0.0);
    }

    #[test]
    fn element_index_out_of_range_is_rejected() {
        let c = cfg(3, 2);
        assert_eq!(
            element_position(0, &c),
            Err(GeometryError::ElementOutOfRange { index: 0, count: 6 })
        );
        assert!(element_position(7, &c).is_err());
    }

    #[test]
    fn element_positions_are_injective() {
        let c = cfg(5, 4);
        let pts: Vec<_> = (1..=20)
            .map(|m| element_position(m, &c).unwrap().0)
            .collect();
        for a in 0..pts.len() {
            assert_eq!(pts[a][0], 0.0);
            for b in a + 1..pts.len() {
                assert_ne!(pts[a], pts[b]);
            }
        }
    }

    #[test]
    fn wave_vector_axes() {
        let lambda = 0.12;
        let k = TAU / lambda;
        let v = wave_vector(0.0, 0.0, lambda);
        assert!(close(v[0], k, 1e-12) && close(v[1], 0.0, 1e-12) && close(v[2], 0.0, 1e-12));
        let v = wave_vector(0.3, FRAC_PI_2, lambda);
        assert!(close(v[0], 0.0, 1e-9) && close(v[1], 0.0, 1e-9) && close(v[2], k, 1e-12));
        let v = wave_vector(FRAC_PI_2, 0.0, lambda);
        assert!(close(v[0], 0.0, 1e-9) && close(v[1], k, 1e-12));
    }

    #[test]
    fn nadir_user_has_zero_mu_h() {
        let u = UserPosition {
            ground_x: 0.0,
            ground_y: 0.0,
            haps_altitude: 20e3,
        };
        let a = user_angles(&u, 0.5).unwrap();
        assert_eq!(a.elevation, FRAC_PI_2);
        assert_eq!(a.mu_h, 0.0);
    }

    #[test]
    fn edge_user_mu_h() {
        let u = UserPosition {
            ground_x: 100e3,
            ground_y: 0.0,
            haps_altitude: 20e3,
        };
        let a = user_angles(&u, 0.0).unwrap();
        assert!(close(a.mu_h, 0.980_580_675_690_920_1, 1e-12));
        assert!(close(a.mu_h, (100f64 / 20.0).atan().sin(), 1e-12));
    }

    #[test]
    fn mu_phi_along_array_axis() {
        let a = AngularCoordinates::from_angles(FRAC_PI_2, PI / 4.0);
        assert!(close(a.mu_phi, std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        let b = AngularCoordinates::from_angles(0.0, PI / 4.0);
        assert!(close(b.mu_phi, 0.0, 1e-15));
    }

    #[test]
    fn user_angles_matches_from_angles() {
        let u = UserPosition {
            ground_x: 12e3,
            ground_y: 7e3,
            haps_altitude: 20e3,
        };
        let bore = 0.4;
        let a = user_angles(&u, bore).unwrap();
        let b = AngularCoordinates::from_angles(a.azimuth, a.elevation);
        assert!(close(a.mu_phi, b.mu_phi, 1e-12) && close(a.mu_h, b.mu_h, 1e-12));
    }

    #[test]
    fn zero_altitude_is_rejected() {
        let u = UserPosition {
            ground_x: 1.0,
            ground_y: 0.0,
            haps_altitude: 0.0,
        };
        assert!(user_angles(&u, 0.0).is_err());
    }

    #[test]
    fn mu_h_range_over_disk_matches_span() {
        let (radius, h) = (100e3_f64, 20e3_f64);
        let span = (radius / h).atan().sin();
        let users = drop_users_seeded(20_000, radius, h, 7);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for u in &users {
            let a = user_angles(u, 0.0).unwrap();
            assert!(a.mu_h >= 0.0 && a.mu_h <= span + 1e-12);
            assert!(a.mu_phi.powi(2) + a.mu_h.powi(2) <= 1.0 + 1e-12);
            lo = lo.min(a.mu_h);
            hi = hi.max(a.mu_h);
        }
        // dense radial sweep reaches both ends of the range
        let sweep = (0..=10_000).map(|k| {
            let r = radius * k as f64 / 10_000.0;
            user_angles(
                &UserPosition {
                    ground_x: r,
                    ground_y: 0.0,
                    haps_altitude: h,
                },
                0.0,
            )
            .unwrap()
            .mu_h
        });
        let (smin, smax) = sweep.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x), b.max(x))
        });
        assert!(close(smax - smin, span, 1e-12));
        assert!(hi - lo <= span && hi - lo > 0.9 * span);
    }

    #[test]
    fn sector_lookup() {
        assert_eq!(sector_of(0.0, 6), 1);
        assert_eq!(sector_of(PI, 6), 4);
        assert_eq!(sector_of(TAU - 1e-9, 6), 6);
        assert_eq!(sector_of(-1e-9, 6), 6);
        assert_eq!(sector_of(TAU, 6), 1);
        assert_eq!(sector_of(1.0, 1), 1);
    }

    #[test]
    fn sector_wedges_partition_the_circle() {
        for n in 1..=12 {
            let mut counts = vec![0usize; n];
            for k in 0..3600 {
                let phi = TAU * k as f64 / 3600.0;
                let s = sector_of(phi, n);
                counts[s - 1] += 1;
                let c = ArrayConfig::new(2, 2, 0.5, 0.5, n, 2.5e9).unwrap();
                assert!(wrap_pi(phi - c.boresight(s)).abs() <= c.sector_width() / 2.0 + 1e-12);
            }
            assert_eq!(counts.iter().sum::<usize>(), 3600);
            assert!(counts.iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn drop_users_edge_cases() {
        assert!(drop_users_seeded(0, 100e3, 20e3, 1).is_empty());
        assert!(drop_users_seeded(5, 0.0, 20e3, 1)
            .iter()
            .all(|u| u.ground_distance() == 0.0));
        assert_eq!(
            drop_users_seeded(50, 100e3, 20e3, 9),
            drop_users_seeded(50, 100e3, 20e3, 9)
        );
        assert!(drop_users_seeded(500, 100e3, 20e3, 3)
            .iter()
            .all(|u| u.ground_distance() <= 100e3));
    }

    #[test]
    fn spatial_inverse_round_trips() {
        let bore = 1.3;
        for &(mp, mh) in &[(0.1, 0.5), (-0.3, 0.2), (0.0, 0.9), (0.45, 0.1)] {
            let u = user_from_spatial(mp, mh, bore, 20e3).unwrap();
            let a = user_angles(&u, bore).unwrap();
            assert!(close(a.mu_phi, mp, 1e-12) && close(a.mu_h, mh, 1e-12));
        }
        assert!(user_from_spatial(0.9, 0.9, 0.0, 20e3).is_none());
        assert!(user_from_spatial(0.0, 1.0, 0.0, 20e3).is_none());
    }

    #[test]
    fn array_config_validation() {
        assert!(ArrayConfig::new(0, 4, 0.5, 0.5, 6, 2.5e9).is_err());
        assert!(ArrayConfig::new(4, 4, 0.0, 0.5, 6, 2.5e9).is_err());
        assert!(ArrayConfig::new(4, 4, 0.5, 0.5, 0, 2.5e9).is_err());
        let c = ArrayConfig::new(4, 4, 0.5, 0.5, 6, 2.5e9).unwrap();
        assert!(close(c.sector_width(), PI / 3.0, 1e-15));
        assert!(close(c.wavelength(), 0.119_916_983_2, 1e-9));
    }
}

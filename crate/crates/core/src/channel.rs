//! Per-user channel statistics and sampling.
//!
//! A user's channel is `h ~ CN(h̄, C)`: a line-of-sight mean built from the
//! Kronecker steering vector of the user's direction, plus a correlated
//! non-line-of-sight term whose spatial correlation follows the one-ring
//! local scattering integral over a box of angular spreads around the user.
//!
//! Vectors of length `M = m_x · m_y` use Kronecker order: entry `i · m_y + j`
//! belongs to horizontal index `i` and vertical index `j`. All array phases
//! share the convention `exp(-j k·u)`, i.e. the phase of a plane wave arriving
//! from the user at element position `u`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::geometry::{
    element_position, wave_vector, AngularCoordinates, ArrayConfig, SPEED_OF_LIGHT,
};
use crate::quadrature::GaussLegendre;

pub type C64 = Complex<f64>;

/// Eigenvalues below this fraction of the trace are treated as zero.
const EIGEN_CLAMP: f64 = 1e-12;
/// More negative than this fraction of the trace and the covariance is rejected.
const EIGEN_REJECT: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("angular spreads must be non-negative, got ({0}, {1})")]
    NegativeSpread(f64, f64),

    #[error("quadrature needs at least one point per axis")]
    NoQuadraturePoints,

    #[error(
        "covariance is not positive semi-definite: eigenvalue {min_eigenvalue} with trace {trace}"
    )]
    InvalidCovariance { min_eigenvalue: f64, trace: f64 },

    #[error("dimension mismatch: mean has {mean} entries, covariance is {rows}x{cols}")]
    DimensionMismatch {
        mean: usize,
        rows: usize,
        cols: usize,
    },
}

/// Large-scale gains of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleFading {
    pub beta_los: f64,
    pub beta_nlos: f64,
    pub sigma_sf_los: f64,
    pub sigma_sf_nlos: f64,
}

/// Half-widths of the scattering box (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringSpread {
    pub delta_phi: f64,
    pub delta_theta: f64,
}

impl ScatteringSpread {
    pub fn from_degrees(delta_phi: f64, delta_theta: f64) -> Self {
        Self {
            delta_phi: delta_phi.to_radians(),
            delta_theta: delta_theta.to_radians(),
        }
    }
}

/// Free-space path loss with lognormal shadowing and an NLoS excess loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    pub carrier_freq: f64,
    /// Shadowing standard deviation of the LoS gain (dB).
    pub sigma_sf_los: f64,
    /// Shadowing standard deviation of the NLoS gain (dB).
    pub sigma_sf_nlos: f64,
    /// Extra loss of the scattered component relative to the LoS path (dB).
    pub nlos_penalty_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: DVector<C64>,
    pub covariance: DMatrix<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: DVector<C64>,
}

/// Unit-norm uniform-linear-array steering vector, entry `p` is
/// `exp(-jπ p mu) / sqrt(m)`.
pub fn steering(mu: f64, m: usize) -> DVector<C64> {
    assert!(m >= 1, "steering vector needs at least one element");
    let scale = 1.0 / (m as f64).sqrt();
    DVector::from_iterator(
        m,
        (0..m).map(|p| C64::from_polar(scale, -std::f64::consts::PI * p as f64 * mu)),
    )
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
    DVector::from_iterator(
        a.len() * b.len(),
        a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)),
    )
}

/// Unit-norm UPA response toward spatial coordinates `(mu_phi, mu_h)`.
///
/// The steering arguments are scaled by `2d` so the phases follow the actual
/// element spacing; at half-wavelength spacing this is exactly
/// `steering(mu_phi, m_x) ⊗ steering(mu_h, m_y)`.
pub fn array_response(mu_phi: f64, mu_h: f64, cfg: &ArrayConfig) -> DVector<C64> {
    kron(
        &steering(2.0 * cfg.d_h * mu_phi, cfg.m_x),
        &steering(2.0 * cfg.d_v * mu_h, cfg.m_y),
    )
}

/// Line-of-sight mean `sqrt(beta_los) · v_phi ⊗ v_h`.
pub fn los_channel(
    fading: &LargeScaleFading,
    angles: &AngularCoordinates,
    cfg: &ArrayConfig,
) -> DVector<C64> {
    array_response(angles.mu_phi, angles.mu_h, cfg) * C64::from(fading.beta_los.sqrt())
}

/// Un-normalized plane-wave phases `exp(-j k(φ,θ)·u)` over the array, in
/// Kronecker order, for array-frame angles `(azimuth, elevation)`.
pub fn phase_vector(azimuth: f64, elevation: f64, cfg: &ArrayConfig) -> DVector<C64> {
    let k = wave_vector(azimuth, elevation, cfg.wavelength());
    let mut out = DVector::from_element(cfg.element_count(), C64::from(0.0));
    for m in 1..=cfg.element_count() {
        let u = element_position(m, cfg).expect("index in range").0;
        let i = (m - 1) % cfg.m_x;
        let j = (m - 1) / cfg.m_x;
        let phase = k[0] * u[0] + k[1] * u[1] + k[2] * u[2];
        out[i * cfg.m_y + j] = C64::from_polar(1.0, -phase);
    }
    out
}

/// Spatial correlation of the scattered component,
/// `[C]_ab = beta_nlos · E[exp(-j k·(u_a - u_b))]` with `(φ, θ)` uniform over
/// the spread box around the user's array-frame direction.
///
/// The average is a tensor-product Gauss-Legendre rule with
/// `quadrature_points` nodes per axis; an axis with zero spread collapses to
/// its center. The integrand depends only on the index lag `(Δi, Δj)`, so the
/// lag table is integrated once and the upper triangle filled from it; the
/// lower triangle is its conjugate mirror.
pub fn correlation_matrix(
    angles: &AngularCoordinates,
    spread: &ScatteringSpread,
    beta_nlos: f64,
    cfg: &ArrayConfig,
    quadrature_points: usize,
) -> Result<DMatrix<C64>, ChannelError> {
    if quadrature_points == 0 {
        return Err(ChannelError::NoQuadraturePoints);
    }
    if !(spread.delta_phi >= 0.0) || !(spread.delta_theta >= 0.0) {
        return Err(ChannelError::NegativeSpread(
            spread.delta_phi,
            spread.delta_theta,
        ));
    }
    let (phi0, theta0) = angles.array_frame_angles();
    let rule = GaussLegendre::new(quadrature_points);
    let axis = |center: f64, half: f64| -> Vec<(f64, f64)> {
        if half > 0.0 {
            rule.averaging_nodes(center, half).collect()
        } else {
            vec![(center, 1.0)]
        }
    };
    let phi_nodes = axis(phi0, spread.delta_phi);
    let theta_nodes = axis(theta0, spread.delta_theta);

    let (mx, my) = (cfg.m_x, cfg.m_y);
    let (lx, ly) = (2 * mx - 1, 2 * my - 1);
    let mut lags = vec![C64::from(0.0); lx * ly];
    let mut row = vec![C64::from(0.0); lx];
    let mut pow_x = vec![C64::from(0.0); lx];
    let mut pow_y = vec![C64::from(0.0); ly];

    for &(theta, w_theta) in &theta_nodes {
        let (s_theta, c_theta) = theta.sin_cos();
        row.iter_mut().for_each(|z| *z = C64::from(0.0));
        for &(phi, w_phi) in &phi_nodes {
            fill_powers(TAU * cfg.d_h * c_theta * phi.sin(), mx, &mut pow_x);
            for (acc, p) in row.iter_mut().zip(&pow_x) {
                *acc += p * w_phi;
            }
        }
        fill_powers(TAU * cfg.d_v * s_theta, my, &mut pow_y);
        for (dx, r) in row.iter().enumerate() {
            let r = r * w_theta;
            for (dy, p) in pow_y.iter().enumerate() {
                lags[dx * ly + dy] += r * p;
            }
        }
    }

    let m = cfg.element_count();
    let mut c = DMatrix::from_element(m, m, C64::from(0.0));
    for a in 0..m {
        let (ia, ja) = (a / my, a % my);
        for b in a..m {
            let (ib, jb) = (b / my, b % my);
            let dx = ia + mx - 1 - ib;
            let dy = ja + my - 1 - jb;
            let v = lags[dx * ly + dy] * beta_nlos;
            if a == b {
                c[(a, a)] = C64::from(v.re);
            } else {
                c[(a, b)] = v;
                c[(b, a)] = v.conj();
            }
        }
    }
    Ok(c)
}

/// `out[center + k] = exp(-j k phase)` for `k` in `-(m-1)..=(m-1)`, with the
/// center exactly one and negative lags exact conjugates.
fn fill_powers(phase: f64, m: usize, out: &mut [C64]) {
    let center = m - 1;
    let step = C64::from_polar(1.0, -phase);
    out[center] = C64::from(1.0);
    for k in 1..m {
        let v = if k % 16 == 0 {
            C64::from_polar(1.0, -phase * k as f64)
        } else {
            out[center + k - 1] * step
        };
        out[center + k] = v;
        out[center - k] = v.conj();
    }
}

/// Free-space path loss `20·log10(4π d f / c)` in dB.
pub fn free_space_path_loss_db(distance_3d: f64, carrier_freq: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_3d * carrier_freq / SPEED_OF_LIGHT).log10()
}

/// Draws the LoS and NLoS large-scale gains of a user at `distance_3d`.
///
/// Two shadowing samples are always consumed so the generator stream does
/// not depend on the configured deviations.
pub fn large_scale_fading<R: Rng + ?Sized>(
    distance_3d: f64,
    model: &PathLossModel,
    rng: &mut R,
) -> Result<LargeScaleFading, ChannelError> {
    if !(distance_3d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_3d));
    }
    let pl = free_space_path_loss_db(distance_3d, model.carrier_freq);
    let z_los: f64 = StandardNormal.sample(rng);
    let z_nlos: f64 = StandardNormal.sample(rng);
    let x_los = model.sigma_sf_los * z_los;
    let x_nlos = model.sigma_sf_nlos * z_nlos;
    Ok(LargeScaleFading {
        beta_los: db_to_linear(-(pl + x_los)),
        beta_nlos: db_to_linear(-(pl + model.nlos_penalty_db + x_nlos)),
        sigma_sf_los: model.sigma_sf_los,
        sigma_sf_nlos: model.sigma_sf_nlos,
    })
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Mean and covariance of a user's channel.
pub fn channel_stats(
    fading: &LargeScaleFading,
    angles: &AngularCoordinates,
    spread: &ScatteringSpread,
    cfg: &ArrayConfig,
    quadrature_points: usize,
) -> Result<ChannelStats, ChannelError> {
    Ok(ChannelStats {
        mean: los_channel(fading, angles, cfg),
        covariance: correlation_matrix(angles, spread, fading.beta_nlos, cfg, quadrature_points)?,
    })
}

/// Draws `h = mean + C^{1/2} z` repeatedly from one factorization.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    mean: DVector<C64>,
    sqrt_cov: DMatrix<C64>,
}

impl ChannelSampler {
    pub fn new(stats: &ChannelStats) -> Result<Self, ChannelError> {
        let (rows, cols) = stats.covariance.shape();
        if rows != cols || rows != stats.mean.len() {
            return Err(ChannelError::DimensionMismatch {
                mean: stats.mean.len(),
                rows,
                cols,
            });
        }
        Ok(Self {
            mean: stats.mean.clone(),
            sqrt_cov: hermitian_sqrt(&stats.covariance)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid deviation");
        let z = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| C64::new(normal.sample(rng), normal.sample(rng))),
        );
        ChannelRealization {
            h: &self.mean + &self.sqrt_cov * z,
        }
    }
}

/// One draw of `CN(mean, C)`.
pub fn sample_channel<R: Rng + ?Sized>(
    stats: &ChannelStats,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    Ok(ChannelSampler::new(stats)?.sample(rng))
}

/// Hermitian square root via eigendecomposition, clamping tiny eigenvalues.
pub fn hermitian_sqrt(c: &DMatrix<C64>) -> Result<DMatrix<C64>, ChannelError> {
    let n = c.nrows();
    if n == 0 {
        return Ok(c.clone());
    }
    let trace: f64 = (0..n).map(|i| c[(i, i)].re).sum();
    let eig = SymmetricEigen::new(c.clone());
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -EIGEN_REJECT * trace.abs() {
        return Err(ChannelError::InvalidCovariance {
            min_eigenvalue: min,
            trace,
        });
    }
    let floor = EIGEN_CLAMP * trace.abs();
    let roots = eig
        .eigenvalues
        .map(|l| if l <= floor { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::from(roots[k]);
    }
    Ok(scaled * v.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m_x: usize, m_y: usize) -> ArrayConfig {
        ArrayConfig::new(m_x, m_y, 0.5, 0.5, 6, 2.5e9).unwrap()
    }

    fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn steering_small_cases() {
        let s = 1.0 / 2f64.sqrt();
        let v = steering(0.0, 2);
        assert!((v[0] - C64::from(s)).norm() < 1e-15 && (v[1] - C64::from(s)).norm() < 1e-15);
        let v = steering(1.0, 2);
        assert!((v[1] - C64::from(-s)).norm() < 1e-15);
        let ip = steering(0.0, 4).dotc(&steering(0.5, 4));
        assert!(ip.norm() < 1e-15);
    }

    #[test]
    fn steering_is_two_periodic_and_unit_norm() {
        for &mu in &[-0.9, -0.1, 0.0, 0.37, 0.81] {
            for m in 1..10 {
                let a = steering(mu, m);
                let b = steering(mu + 2.0, m);
                assert!((a.norm() - 1.0).abs() < 1e-14);
                assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
            }
        }
    }

    #[test]
    fn los_channel_norm_and_scalar_case() {
        let fading = LargeScaleFading {
            beta_los: 2.5e-13,
            beta_nlos: 0.0,
            sigma_sf_los: 0.0,
            sigma_sf_nlos: 0.0,
        };
        let angles = AngularCoordinates::from_angles(0.2, 0.7);
        let h = los_channel(&fading, &angles, &cfg(1, 1));
        assert_eq!(h.len(), 1);
        assert!((h[0].re - 2.5e-13f64.sqrt()).abs() < 1e-22);
        let h = los_channel(&fading, &angles, &cfg(4, 3));
        assert!((h.norm_squared() / fading.beta_los - 1.0).abs() < 1e-13);
    }

    #[test]
    fn los_channel_matches_plane_wave_phases() {
        let c = ArrayConfig::new(3, 4, 0.5, 0.5, 6, 2.5e9).unwrap();
        let fading = LargeScaleFading {
            beta_los: 1.0,
            beta_nlos: 0.0,
            sigma_sf_los: 0.0,
            sigma_sf_nlos: 0.0,
        };
        let angles = AngularCoordinates::from_angles(-0.3, 0.9);
        let h = los_channel(&fading, &angles, &c);
        let (az, el) = angles.array_frame_angles();
        let k = wave_vector(az, el, c.wavelength());
        let scale = 1.0 / (c.element_count() as f64).sqrt();
        for m in 1..=c.element_count() {
            let u = element_position(m, &c).unwrap().0;
            let (i, j) = ((m - 1) % c.m_x, (m - 1) / c.m_x);
            let phase = k[0] * u[0] + k[1] * u[1] + k[2] * u[2];
            // arriving-wave convention: the LoS entry is the conjugate of exp(j k·u)
            let expected = C64::from_polar(scale, phase).conj();
            assert!((h[i * c.m_y + j] - expected).norm() < 1e-12, "element {m}");
        }
    }

    #[test]
    fn correlation_diagonal_and_hermitian() {
        let c = cfg(4, 4);
        let angles = AngularCoordinates::from_angles(0.2, 0.6);
        let spread = ScatteringSpread::from_degrees(3.0, 2.0);
        let r = correlation_matrix(&angles, &spread, 0.7, &c, 32).unwrap();
        for a in 0..16 {
            assert!((r[(a, a)].re - 0.7).abs() < 1e-12 && r[(a, a)].im == 0.0);
            for b in 0..16 {
                assert_eq!(r[(a, b)], r[(b, a)].conj());
            }
        }
    }

    #[test]
    fn zero_spread_is_rank_one() {
        let c = cfg(3, 4);
        let angles = AngularCoordinates::from_angles(0.4, 0.5);
        let spread = ScatteringSpread {
            delta_phi: 0.0,
            delta_theta: 0.0,
        };
        let r = correlation_matrix(&angles, &spread, 2.0, &c, 8).unwrap();
        let (az, el) = angles.array_frame_angles();
        let v = phase_vector(az, el, &c);
        let expected = (&v * v.adjoint()) * C64::from(2.0);
        assert!(max_abs_diff(&r, &expected) < 1e-12);
    }

    #[test]
    fn phase_vector_is_scaled_array_response() {
        let c = cfg(4, 3);
        let angles = AngularCoordinates::from_angles(-0.25, 1.1);
        let (az, el) = angles.array_frame_angles();
        let v = phase_vector(az, el, &c) / C64::from((c.element_count() as f64).sqrt());
        let a = array_response(angles.mu_phi, angles.mu_h, &c);
        assert!((v - a).norm() < 1e-12);
    }

    #[test]
    fn small_spread_two_element_matches_fine_midpoint_oracle() {
        let c = cfg(2, 1);
        // φ = 0, array-frame elevation 0
        let angles = AngularCoordinates::from_angles(0.0, std::f64::consts::FRAC_PI_2);
        let spread = ScatteringSpread::from_degrees(2.0, 2.0);
        let r = correlation_matrix(&angles, &spread, 1.0, &c, 32).unwrap();
        // independent oracle: 320x320 midpoint rule of the raw integrand
        let n = 320;
        let (dp, dt) = (spread.delta_phi, spread.delta_theta);
        let mut acc = C64::from(0.0);
        for p in 0..n {
            let phi = -dp + (p as f64 + 0.5) * 2.0 * dp / n as f64;
            for t in 0..n {
                let th = -dt + (t as f64 + 0.5) * 2.0 * dt / n as f64;
                let k = wave_vector(phi, th, c.wavelength());
                let du =
                    element_position(1, &c).unwrap().0[1] - element_position(2, &c).unwrap().0[1];
                acc += C64::from_polar(1.0, -k[1] * du);
            }
        }
        let oracle = acc / C64::from((n * n) as f64);
        assert!((r[(0, 1)] - oracle).norm() / oracle.norm() < 1e-6);
    }

    #[test]
    fn negative_spread_and_zero_points_rejected() {
        let c = cfg(2, 2);
        let a = AngularCoordinates::from_angles(0.0, 0.5);
        assert!(correlation_matrix(
            &a,
            &ScatteringSpread {
                delta_phi: -0.1,
                delta_theta: 0.0
            },
            1.0,
            &c,
            4
        )
        .is_err());
        assert_eq!(
            correlation_matrix(&a, &ScatteringSpread::from_degrees(1.0, 1.0), 1.0, &c, 0),
            Err(ChannelError::NoQuadraturePoints)
        );
    }

    #[test]
    fn free_space_loss_at_twenty_km() {
        let pl = free_space_path_loss_db(20e3, 2.5e9);
        assert!((pl - 126.427_183_308_603_74).abs() < 1e-9);
        let model = PathLossModel {
            carrier_freq: 2.5e9,
            sigma_sf_los: 0.0,
            sigma_sf_nlos: 0.0,
            nlos_penalty_db: 10.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = large_scale_fading(20e3, &model, &mut rng).unwrap();
        assert!((f.beta_los.log10() + 12.642_718_330_860_374).abs() < 1e-12);
        assert!((f.beta_nlos / f.beta_los - 0.1).abs() < 1e-12);
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(large_scale_fading(20e3, &model, &mut rng2).unwrap(), f);
        assert!(large_scale_fading(0.0, &model, &mut rng).is_err());
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mean = DVector::from_vec(vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)]);
        let stats = ChannelStats {
            mean: mean.clone(),
            covariance: DMatrix::from_element(2, 2, C64::from(0.0)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_channel(&stats, &mut rng).unwrap().h, mean);
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let mut cov = DMatrix::from_element(2, 2, C64::from(0.0));
        cov[(0, 0)] = C64::from(1.0);
        cov[(1, 1)] = C64::from(-1.0);
        let stats = ChannelStats {
            mean: DVector::from_element(2, C64::from(0.0)),
            covariance: cov,
        };
        assert!(matches!(
            ChannelSampler::new(&stats),
            Err(ChannelError::InvalidCovariance { .. })
        ));
    }

    #[test]
    fn hermitian_sqrt_squares_back() {
        let c = cfg(3, 2);
        let a = AngularCoordinates::from_angles(0.1, 0.8);
        let r = correlation_matrix(&a, &ScatteringSpread::from_degrees(10.0, 5.0), 1.0, &c, 16)
            .unwrap();
        let s = hermitian_sqrt(&r).unwrap();
        assert!(max_abs_diff(&(&s * &s), &r) < 1e-10);
    }
}

//! Scenario configuration: flat `key = value` TOML with platform defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::QoSSpec;
use crate::channel::{PathLossModel, ScatteringSpread};
use crate::geometry::ArrayConfig;
use crate::grid::{
    dof_azimuth, dof_elevation, subsections_with_rule, SubsectionGrid, SubsectionRule,
};
use crate::rate::LinkBudget;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

/// Fully resolved scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    /// Radius of the served ground disk (m).
    pub coverage_radius: f64,
    pub carrier_freq: f64,
    /// System bandwidth (Hz).
    pub bandwidth: f64,
    /// Resource-block bandwidth (Hz).
    pub bw_rb: f64,
    /// Resource blocks available for scheduling.
    pub nbr: usize,
    pub haps_altitude: f64,
    /// Minimum spectral efficiency per user (bit/s/Hz).
    pub r_min: f64,
    /// Thermal noise density (dBm/Hz).
    pub noise_psd: f64,
    /// Receiver noise figure (dB).
    pub noise_figure: f64,
    /// Shadowing deviations `[LoS, NLoS]` in dB.
    pub sigma_sf: [f64; 2],
    pub m_x: usize,
    pub m_y: usize,
    pub n_sectors: usize,
    pub d_h: f64,
    pub d_v: f64,
    /// Per-unit transmit power scale (W).
    pub p_max: f64,
    /// Total transmit power budget (W).
    pub p_total: f64,
    /// Resource blocks per user.
    pub r: usize,
    /// Azimuth half-spread of the local scattering (degrees).
    pub delta_phi: f64,
    /// Elevation half-spread of the local scattering (degrees).
    pub delta_theta: f64,
    #[serde(rename = "nlos_penalty_dB")]
    pub nlos_penalty_db: f64,
    /// Rate increment of the greedy power fill (bit/s/Hz).
    pub delta_r: f64,
    pub quadrature_points: usize,
    /// Users dropped uniformly over the disk; unset means one user per cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub subsection_rule: SubsectionRule,
    /// Blocks-per-user values compared by the sweeps.
    pub sweep_r: Vec<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    coverage_radius: Option<f64>,
    carrier_freq: Option<f64>,
    bandwidth: Option<f64>,
    bw_rb: Option<f64>,
    nbr: Option<usize>,
    haps_altitude: Option<f64>,
    r_min: Option<f64>,
    noise_psd: Option<f64>,
    noise_figure: Option<f64>,
    sigma_sf: Option<[f64; 2]>,
    m_x: Option<usize>,
    m_y: Option<usize>,
    n_sectors: Option<usize>,
    d_h: Option<f64>,
    d_v: Option<f64>,
    p_max: Option<f64>,
    p_total: Option<f64>,
    r: Option<usize>,
    delta_phi: Option<f64>,
    delta_theta: Option<f64>,
    #[serde(rename = "nlos_penalty_dB", alias = "nlos_penalty_db")]
    nlos_penalty_db: Option<f64>,
    delta_r: Option<f64>,
    quadrature_points: Option<usize>,
    users: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    subsection_rule: Option<SubsectionRule>,
    sweep_r: Option<Vec<usize>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::resolve(RawConfig::default())
    }
}

impl ScenarioConfig {
    fn resolve(raw: RawConfig) -> Self {
        let bandwidth = raw.bandwidth.unwrap_or(10e6);
        let bw_rb = raw.bw_rb.unwrap_or(180e3);
        let nbr = raw.nbr.unwrap_or_else(|| default_nbr(bandwidth, bw_rb));
        let p_max = raw.p_max.unwrap_or(10.0);
        Self {
            coverage_radius: raw.coverage_radius.unwrap_or(100e3),
            carrier_freq: raw.carrier_freq.unwrap_or(2.5e9),
            bandwidth,
            bw_rb,
            nbr,
            haps_altitude: raw.haps_altitude.unwrap_or(20e3),
            r_min: raw.r_min.unwrap_or(1.0),
            noise_psd: raw.noise_psd.unwrap_or(-174.0),
            noise_figure: raw.noise_figure.unwrap_or(7.0),
            sigma_sf: raw.sigma_sf.unwrap_or([4.0, 6.0]),
            m_x: raw.m_x.unwrap_or(4),
            m_y: raw.m_y.unwrap_or(4),
            n_sectors: raw.n_sectors.unwrap_or(6),
            d_h: raw.d_h.unwrap_or(0.5),
            d_v: raw.d_v.unwrap_or(0.5),
            p_max,
            p_total: raw.p_total.unwrap_or(p_max),
            r: raw.r.unwrap_or(2),
            delta_phi: raw.delta_phi.unwrap_or(2.0),
            delta_theta: raw.delta_theta.unwrap_or(2.0),
            nlos_penalty_db: raw.nlos_penalty_db.unwrap_or(10.0),
            delta_r: raw.delta_r.unwrap_or(0.05),
            quadrature_points: raw.quadrature_points.unwrap_or(32),
            users: raw.users,
            trials: raw.trials.unwrap_or(20),
            seed: raw.seed.unwrap_or(1),
            subsection_rule: raw.subsection_rule.unwrap_or_default(),
            sweep_r: raw.sweep_r.unwrap_or_else(|| default_sweep(nbr)),
        }
    }

    /// Parses and validates config text. Empty text yields the defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let cfg = Self::resolve(raw);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Resolved configuration as TOML, used for `meta.txt` and fingerprints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("coverage_radius", self.coverage_radius),
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("bw_rb", self.bw_rb),
            ("haps_altitude", self.haps_altitude),
            ("d_h", self.d_h),
            ("d_v", self.d_v),
            ("p_max", self.p_max),
            ("p_total", self.p_total),
            ("delta_r", self.delta_r),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    key,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        let nonnegative = [
            ("r_min", self.r_min),
            ("delta_phi", self.delta_phi),
            ("delta_theta", self.delta_theta),
            ("sigma_sf", self.sigma_sf[0]),
            ("sigma_sf", self.sigma_sf[1]),
        ];
        for (key, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    key,
                    format!("must be non-negative and finite, got {v}"),
                ));
            }
        }
        for (key, v) in [
            ("noise_psd", self.noise_psd),
            ("noise_figure", self.noise_figure),
            ("nlos_penalty_dB", self.nlos_penalty_db),
        ] {
            if !v.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
        }
        for (key, v) in [
            ("m_x", self.m_x),
            ("m_y", self.m_y),
            ("n_sectors", self.n_sectors),
            ("nbr", self.nbr),
            ("r", self.r),
            ("quadrature_points", self.quadrature_points),
            ("trials", self.trials),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.bandwidth < self.bw_rb {
            return Err(invalid("bandwidth", "smaller than one resource block"));
        }
        if self.nbr as f64 * self.bw_rb > self.bandwidth + self.bw_rb {
            return Err(invalid(
                "nbr",
                format!(
                    "{} blocks of {} Hz exceed the {} Hz band",
                    self.nbr, self.bw_rb, self.bandwidth
                ),
            ));
        }
        if self.delta_phi >= 90.0 || self.delta_theta >= 90.0 {
            return Err(invalid(
                "delta_phi",
                "angular spreads must stay below 90 degrees",
            ));
        }
        if dof_azimuth(self.m_x, self.n_sectors) == 0 {
            return Err(invalid(
                "m_x",
                "array supports no orthogonal azimuth directions in a sector",
            ));
        }
        match dof_elevation(self.m_y, self.coverage_radius, self.haps_altitude) {
            Ok(0) => {
                return Err(invalid(
                    "m_y",
                    "array supports no orthogonal elevation directions",
                ))
            }
            Err(e) => return Err(invalid("haps_altitude", e.to_string())),
            Ok(_) => {}
        }
        self.subsections(self.r)
            .map_err(|e| invalid("r", e.to_string()))?;
        for &r in &self.sweep_r {
            self.subsections(r)
                .map_err(|e| invalid("sweep_r", e.to_string()))?;
        }
        Ok(())
    }

    pub fn array(&self) -> ArrayConfig {
        ArrayConfig {
            m_x: self.m_x,
            m_y: self.m_y,
            d_h: self.d_h,
            d_v: self.d_v,
            n_sectors: self.n_sectors,
            carrier_freq: self.carrier_freq,
        }
    }

    /// Subsection grid used with `r` blocks per user.
    pub fn subsections(&self, r: usize) -> Result<SubsectionGrid, crate::grid::GridError> {
        subsections_with_rule(self.nbr, r, self.subsection_rule)
    }

    pub fn path_loss(&self) -> PathLossModel {
        PathLossModel {
            carrier_freq: self.carrier_freq,
            sigma_sf_los: self.sigma_sf[0],
            sigma_sf_nlos: self.sigma_sf[1],
            nlos_penalty_db: self.nlos_penalty_db,
        }
    }

    pub fn spread(&self) -> ScatteringSpread {
        ScatteringSpread::from_degrees(self.delta_phi, self.delta_theta)
    }

    pub fn qos(&self) -> QoSSpec {
        QoSSpec {
            r_min: self.r_min,
            delta_r: self.delta_r,
        }
    }

    /// Noise density including the noise figure, in W/Hz.
    pub fn noise_density(&self) -> f64 {
        10f64.powf((self.noise_psd + self.noise_figure - 30.0) / 10.0)
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget {
            noise_psd: self.noise_density(),
            bw_rb: self.bw_rb,
        }
    }
}

/// Ninety percent of the band in whole blocks, the rest being guard band.
fn default_nbr(bandwidth: f64, bw_rb: f64) -> usize {
    (0.9 * bandwidth / bw_rb + 1e-9).floor().max(0.0) as usize
}

fn default_sweep(nbr: usize) -> Vec<usize> {
    if nbr >= 100 {
        vec![1, 2, 3, 4, 6]
    } else {
        vec![1, 2, 3]
    }
}

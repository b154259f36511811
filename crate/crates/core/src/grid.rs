//! Degrees of freedom and the section/subsection partition of each sector.
//!
//! Two users whose spatial coordinates differ by an exact multiple of
//! `2/m_x` in azimuth (or `2/m_y` in elevation) have orthogonal array
//! responses. Each sector's coordinate range is therefore cut into sections
//! of exactly that width, and each section into an `s × s` grid of
//! subsections. Users sitting in the same subsection of different sections
//! are nearly orthogonal and can share resource blocks.

use std::f64::consts::PI;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AngularCoordinates, ArrayConfig};

/// Slack for floors of products that are integers in exact arithmetic,
/// e.g. `8 · sin(π/6)` evaluates to `3.9999999999999996`.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("altitude must be positive, got {0} m")]
    NonPositiveAltitude(f64),

    #[error("blocks per user must satisfy 1 <= r <= nbr, got r={r} nbr={nbr}")]
    InvalidBlocksPerUser { r: usize, nbr: usize },

    #[error("no subsections: nbr={nbr} r={r} yields an empty grid")]
    EmptySubsectionGrid { nbr: usize, r: usize },

    #[error("sector supports no orthogonal sections (N_phi={n_phi}, N_theta={n_theta})")]
    NoSections { n_phi: usize, n_theta: usize },

    #[error("coordinates ({mu_phi}, {mu_h}) fall outside the section grid")]
    OutOfCoverage { mu_phi: f64, mu_h: f64 },
}

/// Maximum number of orthogonal azimuth directions, `⌊m_x sin(π/n_sectors)⌋`.
pub fn dof_azimuth(m_x: usize, n_sectors: usize) -> usize {
    assert!(m_x >= 1 && n_sectors >= 1);
    let half_width = PI / n_sectors as f64;
    floor_count(m_x as f64 * half_width.sin())
}

/// Maximum number of orthogonal elevation directions,
/// `⌊m_y sin(arctan(R/h)) / 2⌋`.
pub fn dof_elevation(m_y: usize, coverage_radius: f64, altitude: f64) -> Result<usize, GridError> {
    if !(altitude > 0.0) {
        return Err(GridError::NonPositiveAltitude(altitude));
    }
    Ok(floor_count(
        m_y as f64 * elevation_span(coverage_radius, altitude) / 2.0,
    ))
}

/// Width of the `mu_h` range over the coverage disk, `sin(arctan(R/h))`.
pub fn elevation_span(coverage_radius: f64, altitude: f64) -> f64 {
    coverage_radius / coverage_radius.hypot(altitude)
}

fn floor_count(x: f64) -> usize {
    (x + FLOOR_SLACK).floor().max(0.0) as usize
}

/// Section layout of one sector's `(mu_phi, mu_h)` space.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionGrid {
    pub n_phi: usize,
    pub n_theta: usize,
    pub mu_phi_range: (f64, f64),
    pub mu_h_range: (f64, f64),
    /// Section widths `(2/m_x, 2/m_y)`.
    pub width: (f64, f64),
    /// Lower corner of the first section; the unused part of each range is
    /// split evenly into two outer margins.
    pub origin: (f64, f64),
}

impl SectionGrid {
    pub fn new(cfg: &ArrayConfig, coverage_radius: f64, altitude: f64) -> Result<Self, GridError> {
        let n_phi = dof_azimuth(cfg.m_x, cfg.n_sectors);
        let n_theta = dof_elevation(cfg.m_y, coverage_radius, altitude)?;
        let half = (cfg.sector_width() / 2.0).sin();
        let mu_phi_range = (-half, half);
        let mu_h_range = (0.0, elevation_span(coverage_radius, altitude));
        let width = (2.0 / cfg.m_x as f64, 2.0 / cfg.m_y as f64);
        let margin = |range: (f64, f64), n: usize, w: f64| {
            ((range.1 - range.0) - n as f64 * w).max(0.0) / 2.0
        };
        let origin = (
            mu_phi_range.0 + margin(mu_phi_range, n_phi, width.0),
            mu_h_range.0 + margin(mu_h_range, n_theta, width.1),
        );
        Ok(Self {
            n_phi,
            n_theta,
            mu_phi_range,
            mu_h_range,
            width,
            origin,
        })
    }

    pub fn n_sections(&self) -> usize {
        self.n_phi * self.n_theta
    }

    pub fn require_sections(&self) -> Result<(), GridError> {
        if self.n_sections() == 0 {
            Err(GridError::NoSections {
                n_phi: self.n_phi,
                n_theta: self.n_theta,
            })
        } else {
            Ok(())
        }
    }
}

/// How the subsection count follows from `(nbr, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsectionRule {
    /// `s = round(sqrt(nbr / r))`; may need more than `nbr` blocks in total.
    #[default]
    NearestSquare,
    /// `s = floor(sqrt(nbr / r))`; the largest square grid within `nbr / r`.
    NoReuse,
}

/// `per_axis × per_axis` subsections per section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsectionGrid {
    pub l_count: usize,
    pub per_axis: usize,
}

impl SubsectionGrid {
    /// Subsection widths `(Δ_phi, Δ_h)` for a given section layout.
    pub fn delta(&self, sections: &SectionGrid) -> (f64, f64) {
        let s = self.per_axis as f64;
        (sections.width.0 / s, sections.width.1 / s)
    }
}

pub fn subsections_per_section(nbr: usize, r: usize) -> Result<SubsectionGrid, GridError> {
    subsections_with_rule(nbr, r, SubsectionRule::NearestSquare)
}

pub fn subsections_with_rule(
    nbr: usize,
    r: usize,
    rule: SubsectionRule,
) -> Result<SubsectionGrid, GridError> {
    if r == 0 || r > nbr {
        return Err(GridError::InvalidBlocksPerUser { r, nbr });
    }
    let root = (nbr as f64 / r as f64).sqrt();
    let s = match rule {
        SubsectionRule::NearestSquare => root.round(),
        SubsectionRule::NoReuse => (root + FLOOR_SLACK).floor(),
    } as usize;
    if s == 0 {
        return Err(GridError::EmptySubsectionGrid { nbr, r });
    }
    Ok(SubsectionGrid {
        l_count: s * s,
        per_axis: s,
    })
}

/// Position of a user in the sector/section/subsection hierarchy (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCell {
    pub sector: usize,
    pub section: usize,
    pub subsection: usize,
}

/// Axis-aligned box of one cell in `(mu_phi, mu_h)` space, half-open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBox {
    pub mu_phi: (f64, f64),
    pub mu_h: (f64, f64),
}

/// Section and subsection partition shared by every sector.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorGrid {
    pub sections: SectionGrid,
    pub subsections: SubsectionGrid,
}

impl SectorGrid {
    pub fn new(sections: SectionGrid, subsections: SubsectionGrid) -> Self {
        Self {
            sections,
            subsections,
        }
    }

    /// Cells per sector, `N · L`.
    pub fn cells_per_sector(&self) -> usize {
        self.sections.n_sections() * self.subsections.l_count
    }

    /// Section indices are `(azimuth, elevation)` pairs flattened row-major,
    /// and likewise for subsections inside a section.
    pub fn locate(
        &self,
        angles: &AngularCoordinates,
        sector: usize,
    ) -> Result<GridCell, GridError> {
        let g = &self.sections;
        let s = self.subsections.per_axis;
        let out = || GridError::OutOfCoverage {
            mu_phi: angles.mu_phi,
            mu_h: angles.mu_h,
        };
        let t_phi = fine_index(angles.mu_phi, g.origin.0, g.width.0, s).ok_or_else(out)?;
        let t_h = fine_index(angles.mu_h, g.origin.1, g.width.1, s).ok_or_else(out)?;
        let (a_phi, b_phi) = (t_phi / s, t_phi % s);
        let (a_h, b_h) = (t_h / s, t_h % s);
        if a_phi >= g.n_phi || a_h >= g.n_theta {
            return Err(out());
        }
        Ok(GridCell {
            sector,
            section: a_phi * g.n_theta + a_h + 1,
            subsection: b_phi * s + b_h + 1,
        })
    }

    /// Coordinate box covered by `(section, subsection)`.
    pub fn cell_box(&self, section: usize, subsection: usize) -> CellBox {
        let g = &self.sections;
        let s = self.subsections.per_axis;
        let (a_phi, a_h) = ((section - 1) / g.n_theta, (section - 1) % g.n_theta);
        let (b_phi, b_h) = ((subsection - 1) / s, (subsection - 1) % s);
        let (d_phi, d_h) = self.subsections.delta(g);
        let lo_phi = g.origin.0 + a_phi as f64 * g.width.0 + b_phi as f64 * d_phi;
        let lo_h = g.origin.1 + a_h as f64 * g.width.1 + b_h as f64 * d_h;
        CellBox {
            mu_phi: (lo_phi, lo_phi + d_phi),
            mu_h: (lo_h, lo_h + d_h),
        }
    }
}

/// Index of the subsection-width slot holding `mu`, counted from `origin`.
fn fine_index(mu: f64, origin: f64, width: f64, per_axis: usize) -> Option<usize> {
    let t = ((mu - origin) / width * per_axis as f64).floor();
    if t < 0.0 || !t.is_finite() {
        None
    } else {
        Some(t as usize)
    }
}

/// `|v_iᴴ v_k|` for the half-wavelength composite steering vectors of two
/// directions, as a product of two normalized Dirichlet sums.
pub fn orthogonality_defect(
    a: &AngularCoordinates,
    b: &AngularCoordinates,
    cfg: &ArrayConfig,
) -> f64 {
    dirichlet(a.mu_phi - b.mu_phi, cfg.m_x) * dirichlet(a.mu_h - b.mu_h, cfg.m_y)
}

/// `|(1/m) Σ_{n<m} exp(jπ n Δ)|`.
fn dirichlet(delta_mu: f64, m: usize) -> f64 {
    let sum: Complex<f64> = (0..m)
        .map(|n| Complex::from_polar(1.0, PI * n as f64 * delta_mu))
        .sum();
    sum.norm() / m as f64
}

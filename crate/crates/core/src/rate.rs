//! Precoding, SINR and achievable rates.
//!
//! Every user is precoded along its own line-of-sight direction vector. A
//! user is interfered by the other users of the same sector that transmit on
//! one of its resource blocks during its time slot; with disjoint block sets
//! those are exactly its cluster co-members in the same slot. Noise is folded
//! into `ρ = P_max / (N₀ · r · BW_RB)`, so the noise term is one.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::allocation::{PowerAllocation, QoSSpec};
use crate::channel::{array_response, C64};
use crate::geometry::{AngularCoordinates, ArrayConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// Unit-norm beamforming vector per cluster member.
    pub columns: Vec<DVector<C64>>,
}

/// Direction-vector precoder for the given members of one sector's cluster.
pub fn build_precoder(members: &[AngularCoordinates], cfg: &ArrayConfig) -> Precoder {
    Precoder {
        columns: members
            .iter()
            .map(|a| array_response(a.mu_phi, a.mu_h, cfg))
            .collect(),
    }
}

/// `|hᴴ p|²`.
pub fn effective_gain(h: &DVector<C64>, p: &DVector<C64>) -> f64 {
    h.dotc(p).norm_sqr()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrReport {
    pub signal: f64,
    pub interference: f64,
    pub sinr: f64,
    /// `(column index, interference power)` for every other column.
    pub per_interferer: Vec<(usize, f64)>,
}

/// SINR of column `target` when every column of `precoder` is active, seen
/// through the target user's channel `h`.
pub fn sinr(
    target: usize,
    h: &DVector<C64>,
    precoder: &Precoder,
    omega: &[f64],
    rho: f64,
) -> SinrReport {
    assert_eq!(precoder.columns.len(), omega.len());
    let signal = rho * omega[target] * effective_gain(h, &precoder.columns[target]);
    let per_interferer: Vec<(usize, f64)> = precoder
        .columns
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != target)
        .map(|(k, p)| (k, rho * omega[k] * effective_gain(h, p)))
        .collect();
    let interference = per_interferer.iter().map(|(_, v)| v).sum::<f64>();
    SinrReport {
        signal,
        interference,
        sinr: signal / (interference + 1.0),
        per_interferer,
    }
}

/// `time_share · r · bw_rb · log2(1 + sinr)` in bit/s.
pub fn rate(sinr: f64, r: usize, bw_rb: f64, time_share: f64) -> f64 {
    time_share * r as f64 * bw_rb * log2_1p(sinr)
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Everything the evaluator needs to know about one served user.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub user: usize,
    pub sector: usize,
    pub subsection: usize,
    /// Half-open frame interval of the user's slot.
    pub slot: (f64, f64),
    pub blocks: Vec<usize>,
    pub channel: DVector<C64>,
    pub precoder: DVector<C64>,
}

impl LinkState {
    pub fn time_share(&self) -> f64 {
        self.slot.1 - self.slot.0
    }
}

/// Link-level constants shared by all users of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Noise power spectral density including the noise figure (W/Hz).
    pub noise_psd: f64,
    pub bw_rb: f64,
}

impl LinkBudget {
    /// `ρ = P_max / (N₀ · r · BW_RB)`.
    pub fn rho(&self, p_max: f64, r: usize) -> f64 {
        p_max / (self.noise_psd * r as f64 * self.bw_rb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRate {
    pub user: usize,
    pub rate_bps: f64,
    /// Rate per unit of occupied bandwidth while served (bit/s/Hz).
    pub spectral_efficiency: f64,
    pub time_share: f64,
    /// SINR equivalent to the achieved spectral efficiency.
    pub sinr: f64,
    pub signal: f64,
    /// Interference averaged over the user's blocks and slot.
    pub interference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user: Vec<UserRate>,
    pub sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// `SE - r_min` per user; negative entries violate the QoS floor.
    pub qos_margins: Vec<f64>,
    /// `P_t - P_max ΣΩ`.
    pub power_margin: f64,
    pub min_omega: f64,
}

impl ConstraintReport {
    pub fn qos_satisfied(&self) -> bool {
        self.qos_margins.iter().all(|&m| m >= -1e-9)
    }

    pub fn power_satisfied(&self) -> bool {
        self.power_margin >= -1e-9
    }

    pub fn nonnegative(&self) -> bool {
        self.min_omega >= 0.0
    }

    pub fn min_qos_margin(&self) -> f64 {
        self.qos_margins
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub rates: RateReport,
    pub constraints: ConstraintReport,
}

/// Realized rates of all links under `power` (Ω indexed like `links`), plus
/// the constraint margins of the allocation problem.
///
/// Each user's slot is cut at every slot boundary of its potential
/// interferers, and every `(block, sub-interval)` piece is evaluated with the
/// set of users active on it.
pub fn evaluate_objective(
    links: &[LinkState],
    power: &PowerAllocation,
    budget: &LinkBudget,
    qos: &QoSSpec,
) -> ObjectiveReport {
    assert_eq!(links.len(), power.omega.len());
    let mut on_block: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (k, link) in links.iter().enumerate() {
        for &b in &link.blocks {
            on_block.entry((link.sector, b)).or_default().push(k);
        }
    }

    let mut per_user = Vec::with_capacity(links.len());
    for (i, link) in links.iter().enumerate() {
        let r = link.blocks.len();
        let rho = budget.rho(power.p_max, r);
        let ts = link.time_share();
        let signal = rho * power.omega[i] * effective_gain(&link.channel, &link.precoder);
        let mut rate_bps = 0.0;
        let mut interference_avg = 0.0;

        for &b in &link.blocks {
            let others: Vec<usize> = on_block[&(link.sector, b)]
                .iter()
                .copied()
                .filter(|&k| k != i && overlaps(links[k].slot, link.slot))
                .collect();
            let mut cuts = vec![link.slot.0, link.slot.1];
            for &k in &others {
                for edge in [links[k].slot.0, links[k].slot.1] {
                    if edge > link.slot.0 && edge < link.slot.1 {
                        cuts.push(edge);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let cross: Vec<(usize, f64)> = others
                .iter()
                .map(|&k| {
                    (
                        k,
                        rho * power.omega[k] * effective_gain(&link.channel, &links[k].precoder),
                    )
                })
                .collect();
            for w in cuts.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let mid = 0.5 * (lo + hi);
                let interference: f64 = cross
                    .iter()
                    .filter(|(k, _)| links[*k].slot.0 <= mid && mid < links[*k].slot.1)
                    .map(|(_, v)| v)
                    .sum();
                rate_bps += rate(signal / (interference + 1.0), 1, budget.bw_rb, hi - lo);
                interference_avg += interference * (hi - lo);
            }
        }

        let occupied = ts * r as f64 * budget.bw_rb;
        let se = if occupied > 0.0 {
            rate_bps / occupied
        } else {
            0.0
        };
        per_user.push(UserRate {
            user: link.user,
            rate_bps,
            spectral_efficiency: se,
            time_share: ts,
            sinr: se.exp2() - 1.0,
            signal,
            interference: if ts > 0.0 && r > 0 {
                interference_avg / (ts * r as f64)
            } else {
                0.0
            },
        });
    }

    let sum_rate = per_user.iter().map(|u| u.rate_bps).sum();
    let constraints = ConstraintReport {
        qos_margins: per_user
            .iter()
            .map(|u| u.spectral_efficiency - qos.r_min)
            .collect(),
        power_margin: power.p_total - power.committed(),
        min_omega: power.omega.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    ObjectiveReport {
        rates: RateReport { per_user, sum_rate },
        constraints,
    }
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

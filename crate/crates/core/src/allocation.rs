//! User clustering, resource-block assignment and power allocation.
//!
//! Users that occupy the same subsection index `l` in any section of any
//! sector form cluster `l` and share one set of `r` resource blocks. Users in
//! the very same cell split the frame into equal, orthogonal time slots.
//!
//! Power is allocated in two stages over an interference-free gain model:
//! every user first gets the smallest coefficient that meets the QoS
//! spectral efficiency, then the remaining budget is handed out greedily in
//! spectral-efficiency increments of `ΔR`, always to the user for whom the
//! next increment is cheapest.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::grid::GridCell;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("blocks per user must satisfy 1 <= r <= nbr, got r={r} nbr={nbr}")]
    InvalidBlocks { r: usize, nbr: usize },

    #[error("user {user} has non-positive effective gain {gain}")]
    NonPositiveGain { user: usize, gain: f64 },

    #[error("QoS needs {required} W but the budget is {budget} W (short by {shortfall} W)")]
    Infeasible {
        required: f64,
        budget: f64,
        shortfall: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMember {
    pub user: usize,
    pub cell: GridCell,
    /// Fraction of the frame this user is served in.
    pub time_share: f64,
    /// 0-based slot inside the cell's frame.
    pub slot: usize,
}

impl ClusterMember {
    /// Half-open frame interval `[start, end)` of this member's slot.
    pub fn slot_interval(&self) -> (f64, f64) {
        let start = self.slot as f64 * self.time_share;
        (start, start + self.time_share)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub subsection: usize,
    pub members: Vec<ClusterMember>,
}

/// Groups located users by subsection index. Clusters come out in ascending
/// subsection order, members in ascending user id; co-located users take
/// consecutive slots in id order.
pub fn cluster_users(located: &[(usize, GridCell)]) -> Vec<Cluster> {
    let mut by_cell: BTreeMap<GridCell, Vec<usize>> = BTreeMap::new();
    for &(user, cell) in located {
        by_cell.entry(cell).or_default().push(user);
    }
    let mut by_sub: BTreeMap<usize, Vec<ClusterMember>> = BTreeMap::new();
    for (cell, mut users) in by_cell {
        users.sort_unstable();
        let share = 1.0 / users.len() as f64;
        for (slot, user) in users.into_iter().enumerate() {
            by_sub
                .entry(cell.subsection)
                .or_default()
                .push(ClusterMember {
                    user,
                    cell,
                    time_share: share,
                    slot,
                });
        }
    }
    by_sub
        .into_iter()
        .map(|(subsection, mut members)| {
            members.sort_by_key(|m| m.user);
            Cluster {
                subsection,
                members,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePlan {
    pub rb_per_user: usize,
    pub total_rb: usize,
    /// Block indices per subsection id.
    pub cluster_rb_sets: BTreeMap<usize, Vec<usize>>,
    /// Set when some block is handed to more than one cluster.
    pub reuse: bool,
}

impl ResourcePlan {
    pub fn blocks(&self, subsection: usize) -> &[usize] {
        self.cluster_rb_sets
            .get(&subsection)
            .map_or(&[], Vec::as_slice)
    }
}

/// Blocks `{(l-1)r, …, lr-1}` modulo `nbr` for subsection `l`.
pub fn blocks_for_subsection(subsection: usize, r: usize, nbr: usize) -> Vec<usize> {
    ((subsection - 1) * r..subsection * r)
        .map(|b| b % nbr)
        .collect()
}

pub fn assign_resource_blocks(
    clusters: &[Cluster],
    nbr: usize,
    r: usize,
) -> Result<ResourcePlan, AllocationError> {
    if r == 0 || r > nbr {
        return Err(AllocationError::InvalidBlocks { r, nbr });
    }
    let mut sets = BTreeMap::new();
    let mut owners = vec![0usize; nbr];
    for c in clusters {
        let blocks = blocks_for_subsection(c.subsection, r, nbr);
        for &b in &blocks {
            owners[b] += 1;
        }
        sets.insert(c.subsection, blocks);
    }
    Ok(ResourcePlan {
        rb_per_user: r,
        total_rb: nbr,
        cluster_rb_sets: sets,
        reuse: owners.iter().any(|&n| n > 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoSSpec {
    /// Minimum spectral efficiency (bit/s/Hz).
    pub r_min: f64,
    /// Spectral-efficiency step of the greedy fill (bit/s/Hz).
    pub delta_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// Coefficient per user, in input order.
    pub omega: Vec<f64>,
    pub p_max: f64,
    pub p_total: f64,
}

impl PowerAllocation {
    /// Transmit power actually committed, `p_max · ΣΩ`.
    pub fn committed(&self) -> f64 {
        self.p_max * self.omega.iter().sum::<f64>()
    }
}

/// `Ω_min = (2^{r_min} - 1) / (ρ g)` per user, or an infeasibility error when
/// the QoS floor alone exceeds the budget.
pub fn min_power_coefficients(
    gains: &[f64],
    rho: f64,
    qos: &QoSSpec,
    p_max: f64,
    p_total: f64,
) -> Result<Vec<f64>, AllocationError> {
    let need = 2f64.powf(qos.r_min) - 1.0;
    let omega = gains
        .iter()
        .enumerate()
        .map(|(user, &g)| {
            if g > 0.0 && rho > 0.0 {
                Ok(need / (rho * g))
            } else {
                Err(AllocationError::NonPositiveGain {
                    user,
                    gain: rho * g,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let required = p_max * omega.iter().sum::<f64>();
    if required > p_total {
        return Err(AllocationError::Infeasible {
            required,
            budget: p_total,
            shortfall: required - p_total,
        });
    }
    Ok(omega)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    user: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // min-heap on (cost, user)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.user.cmp(&self.user))
    }
}

/// Outcome of the greedy fill, including the size of each user's last grant.
#[derive(Debug, Clone)]
pub(crate) struct FillTrace {
    pub allocation: PowerAllocation,
    #[cfg_attr(not(test), allow(dead_code))]
    pub last_grant: Vec<f64>,
}

/// Spreads the budget left after `omega_min` in cheapest-increment order.
pub fn fill_remaining_power(
    omega_min: &[f64],
    gains: &[f64],
    rho: f64,
    p_max: f64,
    p_total: f64,
    qos: &QoSSpec,
) -> PowerAllocation {
    fill_with_trace(omega_min, gains, rho, p_max, p_total, qos).allocation
}

pub(crate) fn fill_with_trace(
    omega_min: &[f64],
    gains: &[f64],
    rho: f64,
    p_max: f64,
    p_total: f64,
    qos: &QoSSpec,
) -> FillTrace {
    assert_eq!(omega_min.len(), gains.len());
    let mut omega = omega_min.to_vec();
    let mut last_grant = vec![0.0; omega.len()];
    let mut remaining = p_total - p_max * omega.iter().sum::<f64>();
    let step = 2f64.powf(qos.delta_r) - 1.0;
    // watts per unit of 2^R for each user
    let unit = |k: usize| p_max / (rho * gains[k]);
    let mut level: Vec<f64> = omega
        .iter()
        .zip(gains)
        .map(|(&o, &g)| 1.0 + rho * g * o)
        .collect();

    let mut heap: BinaryHeap<Candidate> = (0..omega.len())
        .filter(|&k| gains[k] > 0.0)
        .map(|k| Candidate {
            cost: step * level[k] * unit(k),
            user: k,
        })
        .collect();

    while remaining > 0.0 {
        let Some(top) = heap.pop() else { break };
        let k = top.user;
        if top.cost <= remaining {
            omega[k] += top.cost / p_max;
            remaining -= top.cost;
            last_grant[k] = top.cost;
            level[k] *= 1.0 + step;
            heap.push(Candidate {
                cost: step * level[k] * unit(k),
                user: k,
            });
        } else {
            omega[k] += remaining / p_max;
            last_grant[k] = remaining;
            remaining = 0.0;
        }
    }

    FillTrace {
        allocation: PowerAllocation {
            omega,
            p_max,
            p_total,
        },
        last_grant,
    }
}

/// Result of [`allocate_power`].
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutcome {
    pub power: PowerAllocation,
    /// Users that received their QoS floor.
    pub admitted: Vec<bool>,
    /// Set when the QoS floor of all users did not fit in the budget.
    pub infeasible: Option<AllocationError>,
}

/// Full two-stage allocation. When the QoS floor of every user does not fit,
/// users are admitted in order of increasing floor cost until the budget is
/// exhausted; the rest get zero power and the shortfall is reported.
pub fn allocate_power(
    gains: &[f64],
    rho: f64,
    p_max: f64,
    p_total: f64,
    qos: &QoSSpec,
) -> AllocationOutcome {
    match min_power_coefficients(gains, rho, qos, p_max, p_total) {
        Ok(omega_min) => AllocationOutcome {
            power: fill_remaining_power(&omega_min, gains, rho, p_max, p_total, qos),
            admitted: vec![true; gains.len()],
            infeasible: None,
        },
        Err(err) => {
            let need = 2f64.powf(qos.r_min) - 1.0;
            let mut order: Vec<usize> = (0..gains.len())
                .filter(|&k| gains[k] > 0.0 && rho > 0.0)
                .collect();
            order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
            let mut admitted = vec![false; gains.len()];
            let mut spent = 0.0;
            for k in order {
                let cost = p_max * need / (rho * gains[k]);
                if spent + cost > p_total {
                    break;
                }
                spent += cost;
                admitted[k] = true;
            }
            let idx: Vec<usize> = (0..gains.len()).filter(|&k| admitted[k]).collect();
            let sub_gains: Vec<f64> = idx.iter().map(|&k| gains[k]).collect();
            let sub_min: Vec<f64> = sub_gains.iter().map(|&g| need / (rho * g)).collect();
            let sub = fill_remaining_power(&sub_min, &sub_gains, rho, p_max, p_total, qos);
            let mut omega = vec![0.0; gains.len()];
            for (pos, &k) in idx.iter().enumerate() {
                omega[k] = sub.omega[pos];
            }
            AllocationOutcome {
                power: PowerAllocation {
                    omega,
                    p_max,
                    p_total,
                },
                admitted,
                infeasible: Some(err),
            }
        }
    }
}

/// Interference-free spectral efficiency `log2(1 + ρ Ω g)`.
pub fn modeled_spectral_efficiency(omega: f64, gain: f64, rho: f64) -> f64 {
    (rho * omega * gain).ln_1p() / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(sector: usize, section: usize, subsection: usize) -> GridCell {
        GridCell {
            sector,
            section,
            subsection,
        }
    }

    fn qos(r_min: f64) -> QoSSpec {
        QoSSpec {
            r_min,
            delta_r: 0.05,
        }
    }

    #[test]
    fn one_user_per_cell_same_subsection() {
        let located: Vec<_> = (0..5).map(|u| (u, cell(1 + u % 2, 1 + u, 3))).collect();
        let clusters = cluster_users(&located);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].subsection, 3);
        assert_eq!(clusters[0].members.len(), 5);
        assert!(clusters[0]
            .members
            .iter()
            .all(|m| m.time_share == 1.0 && m.slot == 0));
    }

    #[test]
    fn co_located_users_split_time() {
        let clusters = cluster_users(&[(7, cell(2, 1, 4)), (3, cell(2, 1, 4))]);
        assert_eq!(clusters.len(), 1);
        let m = &clusters[0].members;
        assert_eq!((m[0].user, m[0].slot, m[0].time_share), (3, 0, 0.5));
        assert_eq!((m[1].user, m[1].slot, m[1].time_share), (7, 1, 0.5));
        assert_eq!(m[1].slot_interval(), (0.5, 1.0));
    }

    #[test]
    fn empty_clustering() {
        assert!(cluster_users(&[]).is_empty());
    }

    #[test]
    fn block_assignment() {
        let clusters: Vec<_> = (1..=25)
            .map(|l| Cluster {
                subsection: l,
                members: vec![],
            })
            .collect();
        let plan = assign_resource_blocks(&clusters, 50, 2).unwrap();
        assert_eq!(plan.blocks(1), &[0, 1]);
        let mut all: Vec<usize> = plan.cluster_rb_sets.values().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(!plan.reuse);

        let clusters: Vec<_> = (1..=36)
            .map(|l| Cluster {
                subsection: l,
                members: vec![],
            })
            .collect();
        let plan = assign_resource_blocks(&clusters, 100, 3).unwrap();
        assert_eq!(plan.blocks(36), &[5, 6, 7]);
        assert_eq!(plan.blocks(34), &[99, 0, 1]);
        assert!(plan.reuse);
        assert!(assign_resource_blocks(&clusters, 2, 3).is_err());
    }

    #[test]
    fn minimum_power_examples() {
        assert_eq!(
            min_power_coefficients(&[1.0, 3.0], 2.0, &qos(0.0), 1.0, 1.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            min_power_coefficients(&[1.0], 1.0, &qos(1.0), 1.0, 1.0).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            min_power_coefficients(&[2.0, 4.0], 1.0, &qos(1.0), 1.0, 1.0).unwrap(),
            vec![0.5, 0.25]
        );
        let err = min_power_coefficients(&[0.5, 0.5], 1.0, &qos(1.0), 1.0, 3.0).unwrap_err();
        assert_eq!(
            err,
            AllocationError::Infeasible {
                required: 4.0,
                budget: 3.0,
                shortfall: 1.0
            }
        );
        assert!(matches!(
            min_power_coefficients(&[1.0, 0.0], 1.0, &qos(1.0), 1.0, 10.0),
            Err(AllocationError::NonPositiveGain { user: 1, .. })
        ));
    }

    #[test]
    fn fill_with_no_remaining_budget() {
        let omin = min_power_coefficients(&[2.0, 4.0], 1.0, &qos(1.0), 1.0, 0.75).unwrap();
        let p = fill_remaining_power(&omin, &[2.0, 4.0], 1.0, 1.0, 0.75, &qos(1.0));
        assert_eq!(p.omega, omin);
    }

    #[test]
    fn single_user_takes_everything() {
        let p = fill_remaining_power(&[0.1], &[3.0], 2.0, 4.0, 10.0, &qos(1.0));
        assert!((p.committed() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_prefers_strong_channel() {
        let g = [1.0, 0.25];
        let omin = min_power_coefficients(&g, 1.0, &qos(1.0), 1.0, 8.0).unwrap();
        let p = fill_remaining_power(&omin, &g, 1.0, 1.0, 8.0, &qos(1.0));
        assert!(p.omega[0] - omin[0] > p.omega[1] - omin[1]);
        assert!((p.committed() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn admission_when_infeasible() {
        let g = [1.0, 0.01, 0.5];
        let out = allocate_power(&g, 1.0, 1.0, 3.5, &qos(1.0));
        assert!(matches!(
            out.infeasible,
            Some(AllocationError::Infeasible { .. })
        ));
        assert_eq!(out.admitted, vec![true, false, true]);
        assert_eq!(out.power.omega[1], 0.0);
        assert!(out.power.committed() <= 3.5 + 1e-12);
        assert!(modeled_spectral_efficiency(out.power.omega[2], 0.5, 1.0) >= 1.0 - 1e-9);
    }

    #[test]
    fn moving_a_last_grant_never_helps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let q = qos(1.0);
        for _ in 0..200 {
            let n = rng.random_range(2..6);
            let gains: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
                .collect();
            let (rho, p_max) = (rng.random_range(1.0..20.0), 1.0);
            let need: f64 = gains.iter().map(|g| 1.0 / (rho * g)).sum();
            let p_total = need * rng.random_range(1.0..8.0);
            let omin = min_power_coefficients(&gains, rho, &q, p_max, p_total).unwrap();
            let trace = fill_with_trace(&omin, &gains, rho, p_max, p_total, &q);
            let omega = &trace.allocation.omega;
            let total = |w: &[f64]| -> f64 {
                w.iter()
                    .zip(&gains)
                    .map(|(&o, &g)| modeled_spectral_efficiency(o, g, rho))
                    .sum()
            };
            let base = total(omega);
            for k in 0..n {
                let grant = trace.last_grant[k] / p_max;
                if grant <= 0.0 {
                    continue;
                }
                for j in (0..n).filter(|&j| j != k) {
                    let mut moved = omega.clone();
                    moved[k] -= grant;
                    moved[j] += grant;
                    assert!(total(&moved) <= base + 1e-12, "k={k} j={j}");
                }
            }
        }
    }
}

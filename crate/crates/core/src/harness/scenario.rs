//! One Monte Carlo trial: placement, grid location, clustering, channels,
//! power allocation and realized rates.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allocation::{
    allocate_power, assign_resource_blocks, cluster_users, AllocationError, ResourcePlan,
};
use crate::channel::{
    array_response, channel_stats, large_scale_fading, ChannelError, ChannelSampler,
};
use crate::geometry::{
    drop_users, sector_of, user_angles, user_from_spatial, AngularCoordinates, GeometryError,
    UserPosition,
};
use crate::grid::{GridCell, GridError, SectionGrid, SectorGrid};
use crate::harness::config::ScenarioConfig;
use crate::rate::{effective_gain, evaluate_objective, LinkState, ObjectiveReport};

/// Rejection-sampling attempts per cell before the cell is left empty.
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Generator of trial `trial` under master seed `master`. Streams are
/// independent of each other and of how trials are scheduled.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng
}

/// Short hex digest of the resolved configuration.
pub fn fingerprint(cfg: &ScenarioConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedUser {
    pub user: usize,
    pub position: UserPosition,
    pub angles: AngularCoordinates,
    pub cell: GridCell,
}

/// Users that landed on the grid for one `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub grid: SectorGrid,
    pub r: usize,
    /// Users generated, including those outside every section.
    pub dropped: usize,
    /// Served users in ascending id order.
    pub users: Vec<PlacedUser>,
}

impl Placement {
    pub fn l_count(&self) -> usize {
        self.grid.subsections.l_count
    }
}

/// Builds the sector grid for `r` blocks per user.
pub fn sector_grid(cfg: &ScenarioConfig, r: usize) -> Result<SectorGrid, ScenarioError> {
    let sections = SectionGrid::new(&cfg.array(), cfg.coverage_radius, cfg.haps_altitude)?;
    sections.require_sections()?;
    Ok(SectorGrid::new(sections, cfg.subsections(r)?))
}

/// Locates a ground position: owning sector, local angles, grid cell.
fn locate(
    cfg: &ScenarioConfig,
    grid: &SectorGrid,
    pos: &UserPosition,
) -> Result<(AngularCoordinates, GridCell), ScenarioError> {
    let array = cfg.array();
    let sector = sector_of(pos.azimuth(), cfg.n_sectors);
    let angles = user_angles(pos, array.boresight(sector))?;
    let cell = grid.locate(&angles, sector)?;
    Ok((angles, cell))
}

/// Places users for one trial. With `users` unset, one user is drawn
/// uniformly inside every reachable `(sector, section, subsection)` cell;
/// otherwise `users` positions are dropped uniformly over the disk and the
/// ones outside every section go unserved.
pub fn place_users<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    r: usize,
    rng: &mut R,
) -> Result<Placement, ScenarioError> {
    let grid = sector_grid(cfg, r)?;
    let mut users = Vec::new();
    let dropped;
    match cfg.users {
        Some(count) => {
            dropped = count;
            for (user, position) in drop_users(count, cfg.coverage_radius, cfg.haps_altitude, rng)
                .into_iter()
                .enumerate()
            {
                match locate(cfg, &grid, &position) {
                    Ok((angles, cell)) => users.push(PlacedUser {
                        user,
                        position,
                        angles,
                        cell,
                    }),
                    Err(ScenarioError::Grid(GridError::OutOfCoverage { .. })) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        None => {
            let array = cfg.array();
            for sector in 1..=cfg.n_sectors {
                let boresight = array.boresight(sector);
                for section in 1..=grid.sections.n_sections() {
                    for subsection in 1..=grid.subsections.l_count {
                        let target = GridCell {
                            sector,
                            section,
                            subsection,
                        };
                        let bx = grid.cell_box(section, subsection);
                        for _ in 0..PLACEMENT_ATTEMPTS {
                            let mu_phi =
                                bx.mu_phi.0 + (bx.mu_phi.1 - bx.mu_phi.0) * rng.random::<f64>();
                            let mu_h = bx.mu_h.0 + (bx.mu_h.1 - bx.mu_h.0) * rng.random::<f64>();
                            let Some(position) =
                                user_from_spatial(mu_phi, mu_h, boresight, cfg.haps_altitude)
                            else {
                                continue;
                            };
                            if let Ok((angles, cell)) = locate(cfg, &grid, &position) {
                                if cell == target {
                                    users.push(PlacedUser {
                                        user: users.len(),
                                        position,
                                        angles,
                                        cell,
                                    });
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            dropped = users.len();
        }
    }
    Ok(Placement {
        grid,
        r,
        dropped,
        users,
    })
}

/// A placed population with clusters, blocks and sampled channels.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub placement: Placement,
    pub plan: ResourcePlan,
    /// One link per served user, in the order of `placement.users`.
    pub links: Vec<LinkState>,
    /// `|hᴴ p|²` per link.
    pub gains: Vec<f64>,
}

/// Places users and draws their channels from `rng`.
pub fn build_scenario<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    r: usize,
    rng: &mut R,
) -> Result<Scenario, ScenarioError> {
    let placement = place_users(cfg, r, rng)?;
    let located: Vec<(usize, GridCell)> =
        placement.users.iter().map(|u| (u.user, u.cell)).collect();
    let clusters = cluster_users(&located);
    let plan = assign_resource_blocks(&clusters, cfg.nbr, r)?;

    let array = cfg.array();
    let path_loss = cfg.path_loss();
    let spread = cfg.spread();
    let mut slots = vec![(0.0, 1.0); placement.users.len()];
    let index: std::collections::HashMap<usize, usize> = placement
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| (u.user, k))
        .collect();
    for c in &clusters {
        for m in &c.members {
            slots[index[&m.user]] = m.slot_interval();
        }
    }

    let mut links = Vec::with_capacity(placement.users.len());
    let mut gains = Vec::with_capacity(placement.users.len());
    for (k, u) in placement.users.iter().enumerate() {
        let fading = large_scale_fading(u.position.slant_range(), &path_loss, rng)?;
        let stats = channel_stats(&fading, &u.angles, &spread, &array, cfg.quadrature_points)?;
        let channel = ChannelSampler::new(&stats)?.sample(rng).h;
        let precoder = array_response(u.angles.mu_phi, u.angles.mu_h, &array);
        gains.push(effective_gain(&channel, &precoder));
        links.push(LinkState {
            user: u.user,
            sector: u.cell.sector,
            subsection: u.cell.subsection,
            slot: slots[k],
            blocks: plan.blocks(u.cell.subsection).to_vec(),
            channel,
            precoder,
        });
    }
    Ok(Scenario {
        placement,
        plan,
        links,
        gains,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecord {
    pub trial: u64,
    pub user: usize,
    pub sector: usize,
    pub section: usize,
    pub subsection: usize,
    pub rate_bps: f64,
    pub spectral_efficiency: f64,
    pub omega: f64,
    pub sinr: f64,
    pub admitted: bool,
}

/// Outcome of one trial at one power level.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub trial: u64,
    pub fingerprint: String,
    pub p_max: f64,
    pub p_total: f64,
    pub r: usize,
    pub l_count: usize,
    pub dropped: usize,
    pub served: usize,
    pub admitted: usize,
    /// Set when the QoS floors of all served users did not fit the budget.
    pub infeasible: bool,
    pub sum_rate: f64,
    /// Smallest `SE - r_min` among admitted users.
    pub min_qos_margin: Option<f64>,
    pub power_margin: f64,
    pub users: Vec<UserRecord>,
}

/// Allocation and realized rates of a scenario at one power level.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub omega: Vec<f64>,
    pub admitted: Vec<bool>,
    pub infeasible: bool,
    pub report: ObjectiveReport,
}

impl Scenario {
    /// Allocates power from the realized gains and evaluates realized rates.
    pub fn evaluate(&self, cfg: &ScenarioConfig, p_max: f64, p_total: f64) -> Evaluation {
        let budget = cfg.link_budget();
        let qos = cfg.qos();
        let rho = budget.rho(p_max, self.placement.r);
        let outcome = allocate_power(&self.gains, rho, p_max, p_total, &qos);
        let report = evaluate_objective(&self.links, &outcome.power, &budget, &qos);
        Evaluation {
            omega: outcome.power.omega,
            admitted: outcome.admitted,
            infeasible: outcome.infeasible.is_some(),
            report,
        }
    }

    /// Full record of this scenario at one power level.
    pub fn record(
        &self,
        cfg: &ScenarioConfig,
        trial: u64,
        p_max: f64,
        p_total: f64,
    ) -> ResultRecord {
        let eval = self.evaluate(cfg, p_max, p_total);
        let users: Vec<UserRecord> = self
            .placement
            .users
            .iter()
            .zip(&eval.report.rates.per_user)
            .enumerate()
            .map(|(k, (u, rate))| UserRecord {
                trial,
                user: u.user,
                sector: u.cell.sector,
                section: u.cell.section,
                subsection: u.cell.subsection,
                rate_bps: rate.rate_bps,
                spectral_efficiency: rate.spectral_efficiency,
                omega: eval.omega[k],
                sinr: rate.sinr,
                admitted: eval.admitted[k],
            })
            .collect();
        let min_qos_margin = eval
            .report
            .constraints
            .qos_margins
            .iter()
            .zip(&eval.admitted)
            .filter(|(_, &a)| a)
            .map(|(&m, _)| m)
            .reduce(f64::min);
        ResultRecord {
            trial,
            fingerprint: fingerprint(cfg),
            p_max,
            p_total,
            r: self.placement.r,
            l_count: self.placement.l_count(),
            dropped: self.placement.dropped,
            served: self.links.len(),
            admitted: eval.admitted.iter().filter(|&&a| a).count(),
            infeasible: eval.infeasible,
            sum_rate: eval.report.rates.sum_rate,
            min_qos_margin,
            power_margin: eval.report.constraints.power_margin,
            users,
        }
    }

    pub fn sum_rate(&self, cfg: &ScenarioConfig, p_max: f64, p_total: f64) -> f64 {
        self.evaluate(cfg, p_max, p_total).report.rates.sum_rate
    }
}

/// Runs trial `trial` of `cfg` under master seed `seed` at the configured
/// blocks per user and power.
pub fn run_trial(
    cfg: &ScenarioConfig,
    seed: u64,
    trial: u64,
) -> Result<ResultRecord, ScenarioError> {
    let scenario = build_scenario(cfg, cfg.r, &mut trial_rng(seed, trial))?;
    Ok(scenario.record(cfg, trial, cfg.p_max, cfg.p_total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ScenarioConfig {
        ScenarioConfig::from_toml(text).unwrap()
    }

    #[test]
    fn zero_users_give_empty_record() {
        let rec = run_trial(&config("users = 0"), 3, 0).unwrap();
        assert_eq!(rec.served, 0);
        assert_eq!(rec.sum_rate, 0.0);
        assert!(rec.users.is_empty());
    }

    #[test]
    fn same_seed_same_record() {
        let cfg = config("users = 40");
        assert_eq!(
            run_trial(&cfg, 9, 2).unwrap(),
            run_trial(&cfg, 9, 2).unwrap()
        );
        assert_ne!(
            run_trial(&cfg, 9, 2).unwrap().sum_rate,
            run_trial(&cfg, 9, 3).unwrap().sum_rate
        );
    }

    #[test]
    fn full_occupancy_fills_reachable_cells_once() {
        let cfg = config("");
        let p = place_users(&cfg, 2, &mut trial_rng(1, 0)).unwrap();
        let per_sector = p.grid.cells_per_sector();
        assert!(p.users.len() <= cfg.n_sectors * per_sector);
        assert!(p.users.len() * 10 >= cfg.n_sectors * per_sector * 9);
        let mut cells: Vec<GridCell> = p.users.iter().map(|u| u.cell).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), p.users.len());
        for u in &p.users {
            assert!(u.position.ground_distance() <= cfg.coverage_radius);
        }
    }

    #[test]
    fn powers_share_one_scenario() {
        let cfg = config("users = 30");
        let scn = build_scenario(&cfg, 2, &mut trial_rng(5, 1)).unwrap();
        let low = scn.sum_rate(&cfg, 1.0, 1.0);
        let high = scn.sum_rate(&cfg, 100.0, 100.0);
        assert!(high > low);
    }

    #[test]
    fn fingerprint_tracks_config() {
        assert_eq!(
            fingerprint(&config("")),
            fingerprint(&ScenarioConfig::default())
        );
        assert_ne!(
            fingerprint(&config("")),
            fingerprint(&config("p_max = 11.0"))
        );
        assert_eq!(fingerprint(&config("")).len(), 16);
    }
}

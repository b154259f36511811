//! Massive-MIMO downlink simulator for a high-altitude platform serving a
//! circular ground area from a cylinder of sector antenna arrays.
//!
//! Users are grouped by their position on a spatial-frequency grid so that
//! co-clustered users in different sections are nearly orthogonal under
//! direction-vector precoding. Clusters share resource blocks, and power is
//! split by a greedy water-filling heuristic under per-user QoS floors.

pub mod allocation;
pub mod channel;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod quadrature;
pub mod rate;

pub use allocation::{
    allocate_power, assign_resource_blocks, cluster_users, AllocationError, QoSSpec,
};
pub use channel::{array_response, correlation_matrix, sample_channel, ChannelError, C64};
pub use geometry::{ArrayConfig, GeometryError, UserPosition};
pub use grid::{GridCell, GridError, SectorGrid, SubsectionRule};
pub use rate::{evaluate_objective, LinkBudget, LinkState};

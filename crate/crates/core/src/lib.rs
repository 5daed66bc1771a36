//! Packet transport on complex networks with local-information routing.
//!
//! The crate is organised the way a run flows:
//!
//! * [`topology`]: Barabási–Albert generation and adjacency-matrix ingestion.
//! * [`routing`]: per-neighbor scores and next-hop selection (ST, STD, CD,
//!   CDT and the random-walk baseline).
//! * [`engine`]: the time-stepped simulation with FIFO queues and per-edge
//!   flow statistics.
//! * [`metrics`]: load spectrum, interval and delivery-time distributions,
//!   learning fraction and jam detection.
//! * [`cli`]: configuration files, experiment runs and CSV/summary output.

pub mod cli;
pub mod engine;
pub mod metrics;
pub mod routing;
pub mod topology;

pub use engine::{run, run_on, DeliveryTimeMode, SimConfig, SimError, SimState, TopologySource};
pub use metrics::RunReport;
pub use routing::{select_next_hop, Algorithm, EdgeStats, RoutingPolicy};
pub use topology::NetworkTopology;

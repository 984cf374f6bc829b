//! Asynchronous action-chunk inference: robot client, policy server, wire
//! protocol, and a deterministic simulator for both.
//!
//! The robot keeps a queue of timestamped actions. It executes one per
//! control tick and, once the queue falls below a threshold fraction `g` of
//! the chunk size, asks the policy server for a fresh chunk while it keeps
//! executing. [`sim::simulate`] runs the whole stack on a virtual clock;
//! [`client::run_tcp_client`] and [`server::serve`] run it over TCP.

pub mod analysis;
pub mod client;
pub mod filter;
pub mod latency;
pub mod policy;
pub mod queue;
pub mod scenario;
pub mod server;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod transport;
pub mod types;
pub mod world;

pub use analysis::{compute_metrics, Metrics};
pub use client::RobotClient;
pub use latency::{LatencyDist, LatencyProfile};
pub use queue::ActionQueue;
pub use scenario::{parse_scenario, Mode, ScenarioConfig};
pub use server::PolicyServer;
pub use sim::simulate;
pub use trace::RunTrace;
pub use types::{Action, ActionChunk, ClientConfig, Observation};

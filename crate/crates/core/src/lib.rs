//! Discrete-time signalized traffic simulation with pedestrian-aware
//! multi-agent Q-learning signal control and classical baselines.

pub mod baselines;
pub mod control;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod qlearning;
pub mod sim;

pub use control::{ActionId, ActionSet, SignalConfig, SignalState};
pub use harness::{run_experiment, run_suite, ExperimentConfig, Runner};
pub use metrics::{summarize, MetricsLog, Summary};
pub use network::{generate_grid, load_demand, load_network, DemandProfile, Network};
pub use qlearning::{Agent, LearningConfig, QTable, RewardWeights};
pub use sim::{step, Observation, SimConfig, SimState};

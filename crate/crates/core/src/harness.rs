//! Experiment configuration, the per-slot run loop and controller suites.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::baselines::{dynamic_tick, fixed_time_tick, DynamicPolicy, FixedTimePlan, PeriodOverride};
use crate::control::{action_set, request_action, ActionId, ActionSet, ControlError, SignalConfig};
use crate::metrics::{record_slot, summarize, write_outputs, MetricsError, MetricsLog, Summary};
use crate::network::{generate_grid_with, load_demand, load_network, DemandProfile, Network, NetworkError};
use crate::qlearning::{make_status, Agent, AgentMode, LearningConfig, LearningError, NeighborStatus, RewardWeights};
use crate::sim::{observe_index, step, stream_rng, Observation, SimConfig, SimError, SimState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("intersection {intersection}, slot {slot}: {source}")]
    Control {
        intersection: String,
        slot: u64,
        #[source]
        source: ControlError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Grid {
        rows: usize,
        cols: usize,
        #[serde(default = "default_travel")]
        travel_slots: u32,
    },
    File(PathBuf),
}

fn default_travel() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandSource {
    /// Same hourly vehicle rate at every entry node.
    Uniform { veh_per_hour: f64 },
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Qlearn,
    Fixed,
    Dynamic,
    Marl,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Qlearn => "qlearn",
            ControllerKind::Fixed => "fixed",
            ControllerKind::Dynamic => "dynamic",
            ControllerKind::Marl => "marl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedConfig {
    /// Green slots per action when `durations` is not given.
    pub slots_per_action: u32,
    pub cycle: Option<Vec<ActionId>>,
    pub durations: Option<Vec<u32>>,
    pub overrides: Vec<PeriodOverride>,
}

impl Default for FixedConfig {
    fn default() -> Self {
        FixedConfig {
            slots_per_action: 30,
            cycle: None,
            durations: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicConfig {
    pub min_green: u32,
    pub max_green: u32,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig {
            min_green: 5,
            max_green: 60,
        }
    }
}

/// One controller variant of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub controller: ControllerKind,
    #[serde(default)]
    pub action_set_size: Option<u8>,
}

impl SuiteEntry {
    fn new(name: &str, controller: ControllerKind, size: Option<u8>) -> Self {
        SuiteEntry {
            name: name.to_string(),
            controller,
            action_set_size: size,
        }
    }

    /// qlearn, fixed, dynamic4, dynamic6, dynamic8, marl.
    pub fn standard() -> Vec<SuiteEntry> {
        use ControllerKind::*;
        vec![
            SuiteEntry::new("qlearn", Qlearn, None),
            SuiteEntry::new("fixed", Fixed, None),
            SuiteEntry::new("dynamic4", Dynamic, Some(4)),
            SuiteEntry::new("dynamic6", Dynamic, Some(6)),
            SuiteEntry::new("dynamic8", Dynamic, Some(8)),
            SuiteEntry::new("marl", Marl, None),
        ]
    }
}

/// Pedestrian-to-vehicle arrival ratio, given as a number or as "p:v".
fn de_ratio<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    let v = match Raw::deserialize(d)? {
        Raw::Num(x) => x,
        Raw::Text(s) => parse_ratio(&s).map_err(serde::de::Error::custom)?,
    };
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(serde::de::Error::custom("pedestrian ratio must be non-negative"))
    }
}

pub fn parse_ratio(s: &str) -> Result<f64, String> {
    let bad = || format!("bad ratio {s:?}, expected \"p:v\" or a number");
    match s.split_once(':') {
        Some((p, v)) => {
            let p: f64 = p.trim().parse().map_err(|_| bad())?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            if v <= 0.0 {
                return Err(bad());
            }
            Ok(p / v)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub network: NetworkSource,
    pub demand: DemandSource,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    /// Overrides every intersection's own action count.
    #[serde(default)]
    pub action_set_size: Option<u8>,
    #[serde(default = "default_ratio", deserialize_with = "de_ratio")]
    pub pedestrian_ratio: f64,
    /// Slots simulated in total, training included.
    #[serde(default = "default_total")]
    pub total_slots: u64,
    #[serde(default = "default_train")]
    pub train_slots: u64,
    pub seed: u64,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub weights: RewardWeights,
    #[serde(default)]
    pub fixed: FixedConfig,
    #[serde(default)]
    pub dynamic: DynamicConfig,
    #[serde(default)]
    pub signal: SignalConfig,
    /// Replacement forbidden transitions, applied to every intersection.
    #[serde(default)]
    pub forbidden_transitions: Option<Vec<(ActionId, ActionId)>>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub suite: Vec<SuiteEntry>,
    /// Directory relative file paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_controller() -> ControllerKind {
    ControllerKind::Qlearn
}
fn default_ratio() -> f64 {
    1.0
}
fn default_total() -> u64 {
    25_400
}
fn default_train() -> u64 {
    20_000
}

impl ExperimentConfig {
    /// A 2×2 grid at `veh_per_hour` per entry with defaults elsewhere.
    pub fn grid(rows: usize, cols: usize, veh_per_hour: f64, controller: ControllerKind, seed: u64) -> Self {
        ExperimentConfig {
            name: None,
            network: NetworkSource::Grid {
                rows,
                cols,
                travel_slots: default_travel(),
            },
            demand: DemandSource::Uniform { veh_per_hour },
            controller,
            action_set_size: None,
            pedestrian_ratio: default_ratio(),
            total_slots: default_total(),
            train_slots: default_train(),
            seed,
            learning: LearningConfig::default(),
            weights: RewardWeights::default(),
            fixed: FixedConfig::default(),
            dynamic: DynamicConfig::default(),
            signal: SignalConfig::default(),
            forbidden_transitions: None,
            sim: SimConfig::default(),
            output: None,
            suite: Vec::new(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg = Self::from_json(&read(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.train_slots > self.total_slots {
            return Err(HarnessError::Config(format!(
                "train_slots {} exceeds total_slots {}",
                self.train_slots, self.total_slots
            )));
        }
        if let DemandSource::Uniform { veh_per_hour } = self.demand {
            if !(veh_per_hour >= 0.0 && veh_per_hour.is_finite()) {
                return Err(HarnessError::Config("veh_per_hour must be non-negative".into()));
            }
        }
        if self.dynamic.min_green > self.dynamic.max_green {
            return Err(HarnessError::Config("dynamic min_green exceeds max_green".into()));
        }
        self.learning.validate()?;
        self.weights.validate()?;
        Ok(())
    }

    /// Short label used in logs and file names.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.controller.name().to_string())
    }

    /// FNV-1a of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn build_network(&self) -> Result<Network, HarnessError> {
        Ok(match &self.network {
            NetworkSource::Grid {
                rows,
                cols,
                travel_slots,
            } => {
                if *rows == 0 || *cols == 0 || *travel_slots == 0 {
                    return Err(HarnessError::Config("grid dimensions and travel_slots must be positive".into()));
                }
                generate_grid_with(*rows, *cols, *travel_slots, self.action_set_size.unwrap_or(4))
            }
            NetworkSource::File(p) => load_network(&read(&self.resolve(p))?)?,
        })
    }

    pub fn build_demand(&self, net: &Network) -> Result<DemandProfile, HarnessError> {
        let d = match &self.demand {
            DemandSource::Uniform { veh_per_hour } => DemandProfile::uniform(net, *veh_per_hour),
            DemandSource::Csv(p) => load_demand(&read(&self.resolve(p))?)?,
        };
        for entry in d.rates.keys() {
            if !net.boundary.contains(entry) {
                return Err(HarnessError::Config(format!("demand names unknown entry node {entry}")));
            }
        }
        Ok(d.with_pedestrian_ratio(self.pedestrian_ratio))
    }

    pub fn build_action_sets(&self, net: &Network) -> Result<Vec<ActionSet>, HarnessError> {
        net.intersections
            .iter()
            .map(|inter| {
                let size = self.action_set_size.unwrap_or(inter.action_set_size);
                let err = |source| HarnessError::Control {
                    intersection: inter.id.clone(),
                    slot: 0,
                    source,
                };
                let mut set = action_set(inter.shape, size).map_err(err)?.restricted(inter.legs());
                if let Some(f) = &self.forbidden_transitions {
                    set = set.with_forbidden(f.iter().copied()).map_err(err)?;
                }
                Ok(set)
            })
            .collect()
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone)]
enum Controller {
    Agent { agent: Box<Agent>, last_decision: Option<u64> },
    Fixed(FixedTimePlan),
    Dynamic(DynamicPolicy),
}

/// One controller decision that reached the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub intersection: usize,
    pub slot: u64,
    pub from: ActionId,
    pub desired: ActionId,
    pub effective: ActionId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotReport {
    pub slot: u64,
    pub decisions: Vec<Decision>,
    pub rewards: Vec<(usize, f64)>,
}

/// Stateful run: simulator, controllers, message inbox and metrics.
pub struct Runner {
    pub cfg: ExperimentConfig,
    pub net: Network,
    pub demand: DemandProfile,
    pub state: SimState,
    pub log: MetricsLog,
    controllers: Vec<Controller>,
    inbox: Vec<Option<NeighborStatus>>,
    neighbors: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Runner, HarnessError> {
        cfg.validate()?;
        let net = cfg.build_network()?;
        let demand = cfg.build_demand(&net)?;
        let sets = cfg.build_action_sets(&net)?;
        let mut controllers = Vec::with_capacity(sets.len());
        for (inter, set) in net.intersections.iter().zip(&sets) {
            let c = match cfg.controller {
                ControllerKind::Qlearn | ControllerKind::Marl => {
                    let mode = if cfg.controller == ControllerKind::Qlearn {
                        AgentMode::Cooperative
                    } else {
                        AgentMode::Local
                    };
                    let agent = Agent::new(
                        set.actions.len(),
                        mode,
                        cfg.weights,
                        inter.approaches.len(),
                        stream_rng(cfg.seed, &format!("agent:{}", inter.id)),
                    )?;
                    Controller::Agent {
                        agent: Box::new(agent),
                        last_decision: None,
                    }
                }
                ControllerKind::Fixed => {
                    let mut plan = FixedTimePlan::uniform(set, cfg.fixed.slots_per_action);
                    if let Some(c) = &cfg.fixed.cycle {
                        plan.cycle = c.clone();
                        plan.durations = vec![cfg.fixed.slots_per_action; c.len()];
                    }
                    if let Some(d) = &cfg.fixed.durations {
                        plan.durations = d.clone();
                    }
                    plan.overrides = cfg.fixed.overrides.clone();
                    plan.slots_per_day = cfg.sim.slots_per_day;
                    plan.validate(set).map_err(|source| HarnessError::Control {
                        intersection: inter.id.clone(),
                        slot: 0,
                        source,
                    })?;
                    Controller::Fixed(plan)
                }
                ControllerKind::Dynamic => {
                    Controller::Dynamic(DynamicPolicy::new(set, cfg.dynamic.min_green, cfg.dynamic.max_green))
                }
            };
            controllers.push(c);
        }
        let neighbors = net
            .intersections
            .iter()
            .map(|inter| {
                net.neighbors(&inter.id)
                    .map(|ids| ids.iter().filter_map(|id| net.intersection_index(id).ok()).collect())
            })
            .collect::<Result<_, _>>()?;
        let mut state = SimState::new(&net, sets, cfg.sim, cfg.signal, cfg.seed);
        // Fixed plans start on their first phase.
        for (st, c) in state.intersections.iter_mut().zip(&controllers) {
            if let Controller::Fixed(plan) = c {
                st.signal.active = fixed_time_tick(plan, 0);
            }
        }
        let log = MetricsLog::new(&cfg.label(), cfg.seed, &cfg.hash());
        let n = net.intersections.len();
        Ok(Runner {
            cfg,
            net,
            demand,
            state,
            log,
            controllers,
            inbox: vec![None; n],
            neighbors,
            order: (0..n).collect(),
        })
    }

    /// Process intersections in reverse index order within each slot.
    pub fn reverse_order(&mut self) {
        self.order.reverse();
    }

    pub fn done(&self) -> bool {
        self.state.clock >= self.cfg.total_slots
    }

    pub fn training(&self) -> bool {
        self.state.clock < self.cfg.train_slots
    }

    pub fn agent(&self, i: usize) -> Option<&Agent> {
        match &self.controllers[i] {
            Controller::Agent { agent, .. } => Some(agent),
            _ => None,
        }
    }

    /// Run one slot: observe, deliver last slot's statuses, tick
    /// controllers, filter requests, step the simulator and record metrics.
    pub fn step_slot(&mut self) -> Result<SlotReport, HarnessError> {
        let t = self.state.clock;
        let training = self.training();
        let n = self.net.intersections.len();
        let obs: Vec<Observation> = (0..n).map(|i| observe_index(&self.state, &self.net, i)).collect();
        let statuses: Vec<NeighborStatus> = (0..n)
            .map(|i| make_status(&obs[i], self.net.intersections[i].approaches.len()))
            .collect();
        let learn = training || !self.cfg.learning.freeze_after_training;
        let epsilon = if training || !self.cfg.learning.freeze_after_training {
            self.cfg.learning.epsilon
        } else {
            self.cfg.learning.eval_epsilon
        };
        let mut report = SlotReport {
            slot: t,
            decisions: Vec::new(),
            rewards: Vec::new(),
        };
        for &i in &self.order {
            let st = &mut self.state.intersections[i];
            let set = &st.action_set;
            let current = st.signal.active;
            let desired = match &mut self.controllers[i] {
                Controller::Agent { agent, last_decision } => {
                    let due = last_decision.is_none_or(|l| t - l >= self.cfg.learning.decision_interval);
                    if !due || st.signal.in_interphase() {
                        None
                    } else {
                        let msgs: Vec<NeighborStatus> =
                            self.neighbors[i].iter().filter_map(|&j| self.inbox[j].clone()).collect();
                        let allowed = set.allowed_next(current);
                        let out = agent.tick(&obs[i], &msgs, &allowed, &self.cfg.learning, learn, epsilon)?;
                        *last_decision = Some(t);
                        if let Some(r) = out.reward {
                            report.rewards.push((i, r));
                        }
                        Some(out.desired)
                    }
                }
                Controller::Fixed(plan) => {
                    let a = fixed_time_tick(plan, t);
                    (!st.signal.in_interphase() && a != current).then_some(a)
                }
                Controller::Dynamic(policy) => {
                    if st.signal.in_interphase() {
                        None
                    } else {
                        let allowed = set.allowed_next(current);
                        dynamic_tick(policy, &obs[i], current, st.signal.slots_in_action, &allowed, set)
                    }
                }
            };
            if let Some(desired) = desired {
                let effective = request_action(&mut st.signal, desired, &obs[i], set, &self.cfg.signal).map_err(
                    |source| HarnessError::Control {
                        intersection: self.net.intersections[i].id.clone(),
                        slot: t,
                        source,
                    },
                )?;
                if let Controller::Agent { agent, .. } = &mut self.controllers[i] {
                    agent.record_effective(effective);
                }
                report.decisions.push(Decision {
                    intersection: i,
                    slot: t,
                    from: current,
                    desired,
                    effective,
                });
            }
        }
        self.inbox = statuses.into_iter().map(Some).collect();
        let controls: Vec<ActionId> = self.state.intersections.iter().map(|s| s.signal.active).collect();
        step(&mut self.state, &controls, &self.net, &self.demand)?;
        record_slot(&mut self.log, &mut self.state, training);
        report.decisions.sort_by_key(|d| d.intersection);
        report.rewards.sort_by_key(|r| r.0);
        Ok(report)
    }

    pub fn run(mut self) -> Result<MetricsLog, HarnessError> {
        while !self.done() {
            self.step_slot()?;
        }
        Ok(self.log)
    }
}

/// Run `total_slots` slots of one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsLog, HarnessError> {
    Runner::new(cfg.clone())?.run()
}

/// Configs for each suite entry, sharing everything else with `base`.
pub fn suite_configs(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let entries = if base.suite.is_empty() {
        SuiteEntry::standard()
    } else {
        base.suite.clone()
    };
    entries
        .into_iter()
        .map(|e| {
            let mut cfg = base.clone();
            cfg.name = Some(e.name);
            cfg.controller = e.controller;
            if e.action_set_size.is_some() {
                cfg.action_set_size = e.action_set_size;
            }
            cfg.suite.clear();
            cfg
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub logs: Vec<MetricsLog>,
    pub rows: Vec<Summary>,
}

/// Run each config; deltas in the summary table are relative to the first.
pub fn run_suite(cfgs: &[ExperimentConfig]) -> Result<SuiteResult, HarnessError> {
    let first = cfgs.first().ok_or_else(|| HarnessError::Config("empty suite".into()))?;
    for c in cfgs {
        if c.network != first.network || c.demand != first.demand || c.seed != first.seed {
            return Err(HarnessError::Config("suite configs must share network, demand and seed".into()));
        }
    }
    let logs = cfgs.iter().map(run_experiment).collect::<Result<Vec<_>, _>>()?;
    let rows = logs.iter().map(summarize).collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteResult { logs, rows })
}

pub fn write_suite(result: &SuiteResult, prefix: &str) -> Result<Vec<PathBuf>, HarnessError> {
    Ok(write_outputs(&result.logs, prefix, true)?)
}

//! Per-intersection tabular Q-learning agent.
//!
//! The agent observes its own queues, receives its neighbors' averaged
//! incoming-queue status from the previous slot, scores the outcome of its
//! previous decision with a pedestrian-aware queue reward, updates its table
//! and picks the next phase among the actions the signal constraints allow.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ActionId;
use crate::network::Dir;
use crate::sim::Observation;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("reward weights must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    Weights(f64, f64, f64),
    #[error("invalid learning config: {0}")]
    Config(String),
    #[error("q-table parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    EpsGreedy,
    Boltzmann { temperature: f64 },
    Ucb { c: f64 },
}

impl Policy {
    pub fn boltzmann() -> Self {
        Policy::Boltzmann { temperature: 1.0 }
    }

    pub fn ucb() -> Self {
        Policy::Ucb { c: std::f64::consts::SQRT_2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub alpha0: f64,
    pub alpha_floor: f64,
    /// Updates over which the learning rate halves.
    pub alpha_decay: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Exploration used once the table is frozen for evaluation.
    pub eval_epsilon: f64,
    pub policy: Policy,
    pub decision_interval: u64,
    pub bin_thresholds: Vec<u32>,
    /// Stop updating the table after the training window.
    pub freeze_after_training: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            alpha0: 0.5,
            alpha_floor: 0.05,
            alpha_decay: 2000.0,
            gamma: 0.5,
            epsilon: 0.3,
            eval_epsilon: 0.0,
            policy: Policy::EpsGreedy,
            decision_interval: 5,
            bin_thresholds: vec![0, 3, 7],
            freeze_after_training: true,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |m: &str| Err(LearningError::Config(m.to_string()));
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return bad("alpha0 must be in (0, 1]");
        }
        if !(0.0..=self.alpha0).contains(&self.alpha_floor) {
            return bad("alpha_floor must be in [0, alpha0]");
        }
        if self.alpha_decay.is_nan() || self.alpha_decay <= 0.0 {
            return bad("alpha_decay must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if self.decision_interval < 1 {
            return bad("decision_interval must be >= 1");
        }
        if self.bin_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("bin_thresholds must be strictly ascending");
        }
        if self.bin_thresholds.len() > 254 {
            return bad("too many bin thresholds");
        }
        match self.policy {
            Policy::Boltzmann { temperature } if temperature.is_nan() || temperature <= 0.0 => bad("temperature must be positive"),
            Policy::Ucb { c } if c.is_nan() || c < 0.0 => bad("ucb c must be non-negative"),
            _ => Ok(()),
        }
    }

    /// Learning rate after `t` updates.
    pub fn alpha(&self, t: u64) -> f64 {
        (self.alpha0 / (1.0 + t as f64 / self.alpha_decay)).max(self.alpha_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w1: 1.0 / 3.0,
            w2: 1.0 / 3.0,
            w3: 1.0 / 3.0,
        }
    }
}

impl RewardWeights {
    pub fn local_only() -> Self {
        RewardWeights {
            w1: 1.0,
            w2: 0.0,
            w3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        let ws = [self.w1, self.w2, self.w3];
        if ws.iter().any(|w| w.is_nan() || *w < 0.0) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(LearningError::Weights(self.w1, self.w2, self.w3));
        }
        Ok(())
    }
}

/// Binned per-approach (through, left, pedestrians) counts in N, S, E, W
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StateKey(pub [u8; 12]);

pub fn bin(count: u32, thresholds: &[u32]) -> u8 {
    thresholds.iter().position(|&t| count <= t).unwrap_or(thresholds.len()) as u8
}

/// Encode an observation; pedestrian components are zeroed when
/// `with_pedestrians` is false.
pub fn encode_state(obs: &Observation, thresholds: &[u32], with_pedestrians: bool) -> StateKey {
    let mut key = [0u8; 12];
    for (k, dir) in Dir::OBS_ORDER.iter().enumerate() {
        if let Some(a) = obs.approach(*dir) {
            key[3 * k] = bin(a.q_straight + a.q_right, thresholds);
            key[3 * k + 1] = bin(a.q_left, thresholds);
            if with_pedestrians {
                key[3 * k + 2] = bin(a.pedestrians(), thresholds);
            }
        }
    }
    StateKey(key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborStatus {
    pub sender: String,
    pub slot: u64,
    /// (1/|N_j|) Σ_k q_kj
    pub aggregate: f64,
}

pub fn make_status(obs: &Observation, n_i: usize) -> NeighborStatus {
    assert!(n_i >= 1, "an intersection has at least one approach");
    NeighborStatus {
        sender: obs.intersection.clone(),
        slot: obs.slot,
        aggregate: obs.total_vehicles() as f64 / n_i as f64,
    }
}

/// Negative weighted average of local vehicle queues, neighbor statuses and
/// local pedestrian queues. `msgs` holds at most one status per neighbor;
/// boundary neighbors send nothing and count as zero.
pub fn compute_reward(
    obs: &Observation,
    msgs: &[NeighborStatus],
    w: &RewardWeights,
    n_i: usize,
) -> Result<f64, LearningError> {
    w.validate()?;
    let n = n_i as f64;
    let local = obs.total_vehicles() as f64;
    let neighbors: f64 = msgs.iter().map(|m| m.aggregate).sum();
    let peds = obs.total_pedestrians() as f64;
    Ok(-(w.w1 / n * local + w.w2 / n * neighbors + w.w3 / (2.0 * n) * peds))
}

// ---------------------------------------------------------------------------
// Q-table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    values: Vec<f64>,
    visits: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    entries: HashMap<StateKey, Entry>,
    /// N(a), summed over states.
    action_counts: Vec<u64>,
    /// Action selections made with this table.
    pub decisions: u64,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        QTable {
            n_actions,
            entries: HashMap::new(),
            action_counts: vec![0; n_actions],
            decisions: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn q(&self, s: &StateKey, a: ActionId) -> f64 {
        self.entries.get(s).map_or(0.0, |e| e.values[a.index()])
    }

    pub fn visits(&self, s: &StateKey, a: ActionId) -> u64 {
        self.entries.get(s).map_or(0, |e| e.visits[a.index()])
    }

    pub fn action_count(&self, a: ActionId) -> u64 {
        self.action_counts[a.index()]
    }

    /// Total number of updates applied.
    pub fn updates(&self) -> u64 {
        self.action_counts.iter().sum()
    }

    pub fn max_q(&self, s: &StateKey) -> f64 {
        match self.entries.get(s) {
            Some(e) => e.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        }
    }

    pub fn set(&mut self, s: StateKey, a: ActionId, value: f64) {
        let n = self.n_actions;
        self.entries
            .entry(s)
            .or_insert_with(|| Entry {
                values: vec![0.0; n],
                visits: vec![0; n],
            })
            .values[a.index()] = value;
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().flat_map(|e| e.values.iter().copied())
    }

    /// Flat text form: one `state action value visits` line per visited or
    /// non-zero entry, states as dot-separated bins, sorted.
    pub fn to_text(&self) -> String {
        let mut out = format!("# qtable actions={} decisions={}\n", self.n_actions, self.decisions);
        let mut keys: Vec<&StateKey> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let e = &self.entries[k];
            let key = k.0.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(".");
            for a in 0..self.n_actions {
                if e.visits[a] > 0 || e.values[a] != 0.0 {
                    let _ = writeln!(out, "{key} {} {} {}", ActionId::from_index(a), e.values[a], e.visits[a]);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<QTable, LearningError> {
        let err = |line: usize, reason: &str| LearningError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut n_actions = None;
        let mut decisions = 0;
        for part in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = part.strip_prefix("actions=") {
                n_actions = v.parse().ok();
            } else if let Some(v) = part.strip_prefix("decisions=") {
                decisions = v.parse().map_err(|_| err(1, "bad decisions"))?;
            }
        }
        let n_actions: usize = n_actions.ok_or_else(|| err(1, "missing actions="))?;
        let mut table = QTable::new(n_actions);
        table.decisions = decisions;
        for (no, line) in lines {
            let no = no + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err(no, "expected 4 fields"));
            }
            let bins: Vec<u8> = f[0]
                .split('.')
                .map(|b| b.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| err(no, "bad state key"))?;
            let key: [u8; 12] = bins.try_into().map_err(|_| err(no, "state key needs 12 bins"))?;
            let a = ActionId::parse(f[1])
                .filter(|a| a.index() < n_actions)
                .ok_or_else(|| err(no, "bad action"))?;
            let v: f64 = f[2].parse().map_err(|_| err(no, "bad value"))?;
            let visits: u64 = f[3].parse().map_err(|_| err(no, "bad visit count"))?;
            let s = StateKey(key);
            table.set(s, a, v);
            table.entries.get_mut(&s).unwrap().visits[a.index()] = visits;
            table.action_counts[a.index()] += visits;
        }
        Ok(table)
    }
}

/// One Q-learning update toward `r + γ max_a' Q(s', a')`, with the learning
/// rate taken from the schedule at update count `t`.
pub fn q_update(
    tab: &mut QTable,
    s: StateKey,
    a: ActionId,
    r: f64,
    s_next: StateKey,
    cfg: &LearningConfig,
    t: u64,
) {
    let alpha = cfg.alpha(t);
    q_update_with(tab, s, a, r, s_next, alpha, cfg.gamma);
}

pub fn q_update_with(tab: &mut QTable, s: StateKey, a: ActionId, r: f64, s_next: StateKey, alpha: f64, gamma: f64) {
    let target = r + gamma * tab.max_q(&s_next);
    let old = tab.q(&s, a);
    tab.set(s, a, (1.0 - alpha) * old + alpha * target);
    tab.entries.get_mut(&s).unwrap().visits[a.index()] += 1;
    tab.action_counts[a.index()] += 1;
}

/// UCB1 score; with `c = √2` this is `Q + sqrt(2 ln t / N(a))`.
pub fn ucb_score(q: f64, n_a: u64, t: u64, c: f64) -> f64 {
    q + c * ((t as f64).ln() / n_a as f64).sqrt()
}

fn argmax_lowest(allowed: &[ActionId], score: impl Fn(ActionId) -> f64) -> ActionId {
    let mut best = allowed[0];
    let mut best_score = score(best);
    for &a in &allowed[1..] {
        let s = score(a);
        if s > best_score || (s == best_score && a < best) {
            best = a;
            best_score = s;
        }
    }
    best
}

/// Pick an action from `allowed` (non-empty, any order) under the
/// configured exploration policy. `epsilon` applies to ε-greedy only.
pub fn select_action<R: Rng + ?Sized>(
    tab: &QTable,
    s: &StateKey,
    allowed: &[ActionId],
    policy: Policy,
    epsilon: f64,
    rng: &mut R,
) -> ActionId {
    assert!(!allowed.is_empty(), "allowed set is never empty");
    let mut allowed = allowed.to_vec();
    allowed.sort();
    match policy {
        Policy::EpsGreedy => {
            let u: f64 = rng.random();
            if u < epsilon {
                allowed[rng.random_range(0..allowed.len())]
            } else {
                argmax_lowest(&allowed, |a| tab.q(s, a))
            }
        }
        Policy::Boltzmann { temperature } => {
            let qs: Vec<f64> = allowed.iter().map(|&a| tab.q(s, a)).collect();
            let m = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ws: Vec<f64> = qs.iter().map(|q| ((q - m) / temperature).exp()).collect();
            let total: f64 = ws.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (a, w) in allowed.iter().zip(&ws) {
                if u < *w {
                    return *a;
                }
                u -= w;
            }
            *allowed.last().unwrap()
        }
        Policy::Ucb { c } => {
            if let Some(&a) = allowed.iter().find(|&&a| tab.action_count(a) == 0) {
                return a;
            }
            let t = tab.decisions.max(1);
            argmax_lowest(&allowed, |a| ucb_score(tab.q(s, a), tab.action_count(a), t, c))
        }
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentMode {
    /// Pedestrians in state and reward, neighbor statuses in reward.
    Cooperative,
    /// Vehicle queues only, no neighbor information.
    Local,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub table: QTable,
    pub mode: AgentMode,
    weights: RewardWeights,
    n_i: usize,
    rng: ChaCha8Rng,
    prev: Option<(StateKey, ActionId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub desired: ActionId,
    pub status: NeighborStatus,
    /// Reward credited to the previous decision, if one was updated.
    pub reward: Option<f64>,
}

impl Agent {
    pub fn new(
        n_actions: usize,
        mode: AgentMode,
        weights: RewardWeights,
        n_i: usize,
        rng: ChaCha8Rng,
    ) -> Result<Agent, LearningError> {
        let weights = match mode {
            AgentMode::Cooperative => weights,
            AgentMode::Local => RewardWeights::local_only(),
        };
        weights.validate()?;
        Ok(Agent {
            table: QTable::new(n_actions),
            mode,
            weights,
            n_i,
            rng,
            prev: None,
        })
    }

    pub fn weights(&self) -> RewardWeights {
        self.weights
    }

    pub fn encode(&self, obs: &Observation, cfg: &LearningConfig) -> StateKey {
        encode_state(obs, &cfg.bin_thresholds, self.mode == AgentMode::Cooperative)
    }

    pub fn reward(&self, obs: &Observation, msgs: &[NeighborStatus]) -> Result<f64, LearningError> {
        match self.mode {
            AgentMode::Cooperative => compute_reward(obs, msgs, &self.weights, self.n_i),
            AgentMode::Local => compute_reward(obs, &[], &self.weights, self.n_i),
        }
    }

    /// One decision: credit the previous action, update, choose the next
    /// action and produce this slot's status broadcast.
    pub fn tick(
        &mut self,
        obs: &Observation,
        msgs: &[NeighborStatus],
        allowed: &[ActionId],
        cfg: &LearningConfig,
        learn: bool,
        epsilon: f64,
    ) -> Result<TickOutput, LearningError> {
        let s = self.encode(obs, cfg);
        let mut reward = None;
        let desired = match self.prev {
            None => {
                let mut sorted = allowed.to_vec();
                sorted.sort();
                sorted[self.rng.random_range(0..sorted.len())]
            }
            Some((ps, pa)) => {
                let r = self.reward(obs, msgs)?;
                if learn {
                    let t = self.table.updates();
                    q_update(&mut self.table, ps, pa, r, s, cfg, t);
                    reward = Some(r);
                }
                select_action(&self.table, &s, allowed, cfg.policy, epsilon, &mut self.rng)
            }
        };
        self.table.decisions += 1;
        self.prev = Some((s, desired));
        Ok(TickOutput {
            desired,
            status: make_status(obs, self.n_i),
            reward,
        })
    }

    /// The action that actually took effect for the last decision, after the
    /// signal constraints filtered the request.
    pub fn record_effective(&mut self, effective: ActionId) {
        if let Some((_, a)) = &mut self.prev {
            *a = effective;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NodeRef;
    use crate::sim::{ApproachObs, IncomingQueue};
    use rand::SeedableRng;

    fn obs(queues: [(u32, u32, u32); 4], peds: [(u32, u32); 4]) -> Observation {
        let mut o = Observation::empty("x", 0);
        for (k, d) in Dir::CLOCKWISE.iter().enumerate() {
            let (s, l, r) = queues[k];
            let a = ApproachObs {
                dir: *d,
                q_straight: s,
                q_left: l,
                q_right: r,
                m_left: peds[k].0,
                m_right: peds[k].1,
                peds_crossing: 0,
            };
            o.incoming.push(IncomingQueue { from: NodeRef::Boundary(k), count: a.vehicles() });
            o.approaches.push(a);
        }
        o
    }

    #[test]
    fn binning() {
        let th = [0, 3, 7];
        let got: Vec<u8> = [0, 1, 3, 4, 5, 7, 8, 100].iter().map(|&c| bin(c, &th)).collect();
        assert_eq!(got, vec![0, 1, 1, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn encode_zero_and_same_bin() {
        let z = obs([(0, 0, 0); 4], [(0, 0); 4]);
        assert_eq!(encode_state(&z, &[0, 3, 7], true), StateKey::default());
        let a = obs([(4, 1, 0), (0, 0, 0), (0, 0, 0), (0, 0, 0)], [(1, 0); 4]);
        let b = obs([(6, 3, 0), (0, 0, 0), (0, 0, 0), (0, 0, 0)], [(0, 2); 4]);
        assert_eq!(encode_state(&a, &[0, 3, 7], true), encode_state(&b, &[0, 3, 7], true));
    }

    #[test]
    fn encode_order_and_missing_approach() {
        // N, E, S, W observation -> N, S, E, W key
        let mut o = obs([(1, 0, 0), (4, 0, 0), (8, 0, 0), (0, 0, 0)], [(0, 0); 4]);
        let k = encode_state(&o, &[0, 3, 7], true);
        assert_eq!([k.0[0], k.0[3], k.0[6], k.0[9]], [1, 3, 2, 0]);
        o.approaches.retain(|a| a.dir != Dir::S);
        let k = encode_state(&o, &[0, 3, 7], true);
        assert_eq!(&k.0[3..6], &[0, 0, 0]);
    }

    #[test]
    fn reward_worked_example() {
        // Σq = 12, four statuses of 2, Σm = 16
        let o = obs([(3, 0, 0), (3, 0, 0), (3, 0, 0), (3, 0, 0)], [(2, 2); 4]);
        let msgs: Vec<_> = (0..4)
            .map(|k| NeighborStatus { sender: format!("n{k}"), slot: 0, aggregate: 2.0 })
            .collect();
        let r = compute_reward(&o, &msgs, &RewardWeights::default(), 4).unwrap();
        assert!((r - (-7.0 / 3.0)).abs() < 1e-12, "{r}");
        let o = obs([(2, 0, 0); 4], [(0, 0); 4]);
        let r = compute_reward(&o, &[], &RewardWeights::local_only(), 4).unwrap();
        assert_eq!(r, -2.0);
        let zero = obs([(0, 0, 0); 4], [(0, 0); 4]);
        assert_eq!(compute_reward(&zero, &[], &RewardWeights::default(), 4).unwrap(), 0.0);
    }

    #[test]
    fn reward_rejects_bad_weights() {
        let o = obs([(0, 0, 0); 4], [(0, 0); 4]);
        let w = RewardWeights { w1: 0.5, w2: 0.5, w3: 0.5 };
        assert!(matches!(compute_reward(&o, &[], &w, 4), Err(LearningError::Weights(..))));
        let w = RewardWeights { w1: 1.5, w2: -0.5, w3: 0.0 };
        assert!(compute_reward(&o, &[], &w, 4).is_err());
    }

    #[test]
    fn status_aggregate() {
        let o = obs([(4, 0, 0), (0, 0, 0), (1, 1, 0), (0, 0, 2)], [(0, 0); 4]);
        let s = make_status(&o, 4);
        assert_eq!(s.aggregate, 2.0);
        let z = obs([(0, 0, 0); 4], [(0, 0); 4]);
        assert_eq!(make_status(&z, 4).aggregate, 0.0);
    }

    #[test]
    fn update_worked_example() {
        let cfg = LearningConfig::default();
        let mut tab = QTable::new(4);
        let s = StateKey([0; 12]);
        let mut s2 = StateKey([0; 12]);
        s2.0[0] = 1;
        for a in 1..=4 {
            tab.set(s2, ActionId(a), -2.0 - f64::from(a));
        }
        tab.set(s2, ActionId(1), -2.0);
        q_update(&mut tab, s, ActionId(1), -4.0, s2, &cfg, 0);
        assert_eq!(tab.q(&s, ActionId(1)), -2.5);
        assert_eq!(tab.visits(&s, ActionId(1)), 1);
        assert_eq!(tab.action_count(ActionId(1)), 1);

        let mut tab = QTable::new(2);
        q_update_with(&mut tab, s, ActionId(2), 0.0, s, 0.7, 0.5);
        assert_eq!(tab.q(&s, ActionId(2)), 0.0);
        q_update_with(&mut tab, s, ActionId(2), -3.25, s2, 1.0, 0.0);
        assert_eq!(tab.q(&s, ActionId(2)), -3.25);
    }

    #[test]
    fn alpha_schedule() {
        let cfg = LearningConfig::default();
        assert_eq!(cfg.alpha(0), 0.5);
        assert_eq!(cfg.alpha(2000), 0.25);
        assert_eq!(cfg.alpha(1_000_000), 0.05);
    }

    #[test]
    fn greedy_and_ucb() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tab = QTable::new(4);
        let s = StateKey::default();
        for a in 1..=4 {
            tab.set(s, ActionId(a), -1.0);
        }
        tab.set(s, ActionId(2), -0.5);
        let all: Vec<_> = (1..=4).map(ActionId).collect();
        assert_eq!(select_action(&tab, &s, &all, Policy::EpsGreedy, 0.0, &mut rng), ActionId(2));
        // ties go to the lowest id
        assert_eq!(select_action(&tab, &s, &[ActionId(4), ActionId(3)], Policy::EpsGreedy, 0.0, &mut rng), ActionId(3));
        let score = ucb_score(1.0, 4, 100, 2f64.sqrt());
        assert!((score - 2.5174).abs() < 1e-3, "{score}");
        // untried first
        assert_eq!(select_action(&tab, &s, &all, Policy::Ucb { c: 1.0 }, 0.0, &mut rng), ActionId(1));
    }

    #[test]
    fn boltzmann_prefers_higher_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tab = QTable::new(2);
        let s = StateKey::default();
        tab.set(s, ActionId(1), 0.0);
        tab.set(s, ActionId(2), -1.0);
        let allowed = [ActionId(1), ActionId(2)];
        let n = 20_000;
        let ones = (0..n)
            .filter(|_| select_action(&tab, &s, &allowed, Policy::Boltzmann { temperature: 1.0 }, 0.0, &mut rng) == ActionId(1))
            .count();
        let p = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((ones as f64 / n as f64 - p).abs() < 0.02);
    }

    #[test]
    fn table_text_roundtrip() {
        let mut tab = QTable::new(4);
        let mut s = StateKey::default();
        q_update_with(&mut tab, s, ActionId(3), -1.0 / 3.0, s, 0.5, 0.5);
        s.0[11] = 3;
        q_update_with(&mut tab, s, ActionId(1), -7.125, s, 0.5, 0.5);
        tab.decisions = 17;
        let text = tab.to_text();
        let back = QTable::from_text(&text).unwrap();
        assert_eq!(back, tab);
        assert!(matches!(QTable::from_text("# qtable actions=4\n1.2 a1 0 1\n"), Err(LearningError::Parse { line: 2, .. })));
    }

    #[test]
    fn first_tick_is_random_allowed_without_update() {
        let cfg = LearningConfig::default();
        let o = obs([(1, 0, 0); 4], [(0, 0); 4]);
        let allowed = [ActionId(2), ActionId(3)];
        let mut agent = Agent::new(4, AgentMode::Cooperative, RewardWeights::default(), 4, ChaCha8Rng::seed_from_u64(7)).unwrap();
        let out = agent.tick(&o, &[], &allowed, &cfg, true, cfg.epsilon).unwrap();
        assert!(allowed.contains(&out.desired));
        assert_eq!(out.reward, None);
        assert!(agent.table.is_empty());
        let out2 = agent.tick(&o, &[], &allowed, &cfg, true, cfg.epsilon).unwrap();
        assert!(out2.reward.is_some());
        assert_eq!(agent.table.updates(), 1);
    }

    #[test]
    fn local_mode_ignores_pedestrians_and_neighbors() {
        let cfg = LearningConfig::default();
        let agent = Agent::new(4, AgentMode::Local, RewardWeights::default(), 4, ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = obs([(2, 1, 0); 4], [(0, 0); 4]);
        let b = obs([(2, 1, 0); 4], [(5, 9); 4]);
        assert_eq!(agent.encode(&a, &cfg), agent.encode(&b, &cfg));
        let msgs = [NeighborStatus { sender: "j".into(), slot: 0, aggregate: 10.0 }];
        assert_eq!(agent.reward(&a, &[]).unwrap(), agent.reward(&b, &msgs).unwrap());
    }

    #[test]
    fn held_action_is_kept_when_dominant() {
        let cfg = LearningConfig { epsilon: 0.0, ..LearningConfig::default() };
        let o = obs([(1, 0, 0); 4], [(0, 0); 4]);
        let mut agent = Agent::new(4, AgentMode::Cooperative, RewardWeights::default(), 4, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let s = agent.encode(&o, &cfg);
        for a in 1..=4 {
            agent.table.set(s, ActionId(a), -10.0);
        }
        agent.table.set(s, ActionId(3), 0.0);
        let all: Vec<_> = (1..=4).map(ActionId).collect();
        agent.tick(&o, &[], &all, &cfg, false, 0.0).unwrap();
        agent.record_effective(ActionId(3));
        for _ in 0..10 {
            let out = agent.tick(&o, &[], &all, &cfg, false, 0.0).unwrap();
            assert_eq!(out.desired, ActionId(3));
        }
    }
}

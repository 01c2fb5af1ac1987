//! Slot-by-slot traffic simulation: Poisson arrivals, fixed-delay links,
//! per-movement FIFO queues discharged by the active signal phase, and
//! pedestrians waiting at and walking across crosswalks.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    self, crossing_yield, ActionId, ActionSet, ControlError, Indication, Movement, SignalConfig,
    SignalState,
};
use crate::network::{DemandProfile, Dir, LinkIdx, Network, NetworkError, NodeRef, Turn};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("illegal control {action} at intersection `{intersection}` in slot {slot}")]
    IllegalControl {
        intersection: String,
        slot: u64,
        action: ActionId,
    },
    #[error("route generation failed from entry `{0}` after 100 attempts")]
    RouteGenerationFailure(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invariant violated in slot {slot}: {what}")]
    Invariant { slot: u64, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Vehicles discharged per lane per green slot.
    pub saturation_per_slot: u32,
    /// Slots a pedestrian needs to cross.
    pub crossing_slots: u32,
    pub slots_per_day: u64,
    /// Check conservation after every step.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            saturation_per_slot: 1,
            crossing_slots: 13,
            slots_per_day: 86_400,
            check_invariants: cfg!(debug_assertions),
        }
    }
}

// ---------------------------------------------------------------------------
// Entities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub route: Vec<LinkIdx>,
    /// Index into `route` of the link the vehicle is on or queued at the end of.
    pub hop: usize,
    pub entry_slot: u64,
    pub wait_slots: u64,
    pub stop_count: u32,
    queued: bool,
}

impl Vehicle {
    fn next_turn(&self, net: &Network) -> Option<Turn> {
        let here = self.route[self.hop];
        let next = *self.route.get(self.hop + 1)?;
        net.turn_between(here, next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    L,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PedState {
    Waiting,
    Crossing(u32),
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub id: u64,
    pub intersection: usize,
    pub leg: Dir,
    pub side: Side,
    pub arrival_slot: u64,
    pub wait_slots: u64,
    pub state: PedState,
    pub button_pressed_slot: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripRecord {
    pub entry_slot: u64,
    pub exit_slot: u64,
    pub free_flow: u64,
    pub wait_slots: u64,
    pub stop_count: u32,
}

impl TripRecord {
    pub fn travel_time(&self) -> u64 {
        self.exit_slot - self.entry_slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PedRecord {
    pub arrival_slot: u64,
    pub done_slot: u64,
    pub wait_slots: u64,
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Lane slots per approach: shared straight(+right), left, separate right.
const LANE_STRAIGHT: usize = 0;
const LANE_LEFT: usize = 1;
const LANE_RIGHT: usize = 2;

fn lane_for(turn: Turn, separate_right: bool) -> usize {
    match turn {
        Turn::Straight => LANE_STRAIGHT,
        Turn::Left => LANE_LEFT,
        Turn::Right if separate_right => LANE_RIGHT,
        Turn::Right => LANE_STRAIGHT,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Crosswalk {
    waiting: [VecDeque<Pedestrian>; 2],
    crossing: VecDeque<Pedestrian>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionState {
    pub signal: SignalState,
    pub action_set: ActionSet,
    /// Lane queues aligned with `Intersection::approaches`.
    lanes: Vec<[VecDeque<Vehicle>; 3]>,
    crosswalks: [Crosswalk; 4],
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
struct InTransit {
    vehicle: Vehicle,
    arrive_slot: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub vehicles_entered: u64,
    pub vehicles_exited: u64,
    pub peds_arrived: u64,
    pub peds_done: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u64,
    pub config: SimConfig,
    pub signal_config: SignalConfig,
    pub intersections: Vec<IntersectionState>,
    transit: Vec<VecDeque<InTransit>>,
    /// One stream per boundary node, used for its arrivals and routes.
    entry_rngs: Vec<ChaCha8Rng>,
    pub counters: Counters,
    next_vehicle: u64,
    next_ped: u64,
    completed_trips: Vec<TripRecord>,
    completed_peds: Vec<PedRecord>,
}

/// Derive an independent RNG stream from the run seed and a stable label,
/// so streams do not depend on iteration order.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

impl SimState {
    /// Fresh state with the given per-intersection action sets, each signal
    /// starting on its first action.
    pub fn new(
        net: &Network,
        action_sets: Vec<ActionSet>,
        config: SimConfig,
        signal_config: SignalConfig,
        seed: u64,
    ) -> SimState {
        assert_eq!(action_sets.len(), net.intersections.len());
        let intersections = net
            .intersections
            .iter()
            .zip(action_sets)
            .map(|(inter, set)| IntersectionState {
                signal: SignalState::new(set.actions[0].id),
                action_set: set,
                lanes: inter.approaches.iter().map(|_| Default::default()).collect(),
                crosswalks: Default::default(),
                rng: stream_rng(seed, &format!("ped:{}", inter.id)),
            })
            .collect();
        SimState {
            clock: 0,
            config,
            signal_config,
            intersections,
            transit: vec![VecDeque::new(); net.links.len()],
            entry_rngs: net
                .boundary
                .iter()
                .map(|b| stream_rng(seed, &format!("veh:{b}")))
                .collect(),
            counters: Counters::default(),
            next_vehicle: 0,
            next_ped: 0,
            completed_trips: Vec::new(),
            completed_peds: Vec::new(),
        }
    }

    pub fn day(&self) -> u64 {
        self.clock / self.config.slots_per_day
    }

    pub fn vehicles_in_transit(&self) -> u64 {
        self.transit.iter().map(|q| q.len() as u64).sum()
    }

    pub fn vehicles_queued(&self) -> u64 {
        self.intersections
            .iter()
            .flat_map(|i| i.lanes.iter())
            .flat_map(|l| l.iter())
            .map(|q| q.len() as u64)
            .sum()
    }

    pub fn peds_waiting(&self) -> u64 {
        self.crosswalks()
            .map(|c| (c.waiting[0].len() + c.waiting[1].len()) as u64)
            .sum()
    }

    pub fn peds_crossing(&self) -> u64 {
        self.crosswalks().map(|c| c.crossing.len() as u64).sum()
    }

    fn crosswalks(&self) -> impl Iterator<Item = &Crosswalk> {
        self.intersections.iter().flat_map(|i| i.crosswalks.iter())
    }

    /// Accumulated waits of vehicles and pedestrians still in the network.
    pub fn active_wait_totals(&self) -> (u64, u64) {
        let veh: u64 = self
            .transit
            .iter()
            .flat_map(|q| q.iter().map(|t| t.vehicle.wait_slots))
            .chain(
                self.intersections
                    .iter()
                    .flat_map(|i| i.lanes.iter())
                    .flat_map(|l| l.iter())
                    .flat_map(|q| q.iter().map(|v| v.wait_slots)),
            )
            .sum();
        let ped: u64 = self
            .crosswalks()
            .flat_map(|c| c.waiting.iter().flatten().chain(c.crossing.iter()))
            .map(|p| p.wait_slots)
            .sum();
        (veh, ped)
    }

    /// Drain the trips and pedestrian crossings completed since the last call.
    pub fn take_completions(&mut self) -> (Vec<TripRecord>, Vec<PedRecord>) {
        (
            std::mem::take(&mut self.completed_trips),
            std::mem::take(&mut self.completed_peds),
        )
    }

    pub fn check_conservation(&self) -> Result<(), SimError> {
        let c = &self.counters;
        let veh = self.vehicles_in_transit() + self.vehicles_queued() + c.vehicles_exited;
        if c.vehicles_entered != veh {
            return Err(SimError::Invariant {
                slot: self.clock,
                what: format!("vehicles entered {} != accounted {}", c.vehicles_entered, veh),
            });
        }
        let ped = self.peds_waiting() + self.peds_crossing() + c.peds_done;
        if c.peds_arrived != ped {
            return Err(SimError::Invariant {
                slot: self.clock,
                what: format!("pedestrians arrived {} != accounted {}", c.peds_arrived, ped),
            });
        }
        Ok(())
    }

    /// Place a vehicle directly in the queue at the end of `route[0]`.
    pub fn inject_queued(&mut self, net: &Network, route: Vec<LinkIdx>) {
        let link = &net.links[route[0]];
        let NodeRef::Intersection(i) = link.to else {
            panic!("route must start on a link into an intersection");
        };
        let v = self.new_vehicle(route);
        self.enqueue(net, i, v);
    }

    pub fn inject_pedestrian(&mut self, net: &Network, intersection: usize, leg: Dir, side: Side) {
        assert!(net.intersections[intersection].legs()[leg.index()]);
        self.spawn_pedestrian(intersection, leg, side);
    }

    fn new_vehicle(&mut self, route: Vec<LinkIdx>) -> Vehicle {
        let v = Vehicle {
            id: self.next_vehicle,
            route,
            hop: 0,
            entry_slot: self.clock,
            wait_slots: 0,
            stop_count: 0,
            queued: false,
        };
        self.next_vehicle += 1;
        self.counters.vehicles_entered += 1;
        v
    }

    fn spawn_pedestrian(&mut self, i: usize, leg: Dir, side: Side) {
        let clock = self.clock;
        let inter = &mut self.intersections[i];
        let red = inter.signal.indication(leg) != Indication::Walk;
        if red {
            control::record_button(&mut inter.signal, leg);
        }
        let p = Pedestrian {
            id: self.next_ped,
            intersection: i,
            leg,
            side,
            arrival_slot: clock,
            wait_slots: 0,
            state: PedState::Waiting,
            button_pressed_slot: red.then_some(clock),
        };
        self.next_ped += 1;
        self.counters.peds_arrived += 1;
        inter.crosswalks[leg.index()].waiting[side as usize].push_back(p);
    }

    /// Queue `v` at intersection `i` on the lane matching its next turn.
    fn enqueue(&mut self, net: &Network, i: usize, v: Vehicle) {
        let link_idx = v.route[v.hop];
        let inter = &net.intersections[i];
        let a = inter
            .approaches
            .iter()
            .position(|a| a.link == link_idx)
            .expect("link is an approach of its downstream intersection");
        let turn = v.next_turn(net).expect("route continues through intersection");
        let lane = lane_for(turn, net.links[link_idx].separate_right);
        self.intersections[i].lanes[a][lane].push_back(v);
    }

    fn finish_trip(&mut self, net: &Network, v: Vehicle) {
        self.counters.vehicles_exited += 1;
        self.completed_trips.push(TripRecord {
            entry_slot: v.entry_slot,
            exit_slot: self.clock + 1,
            free_flow: net.free_flow(&v.route),
            wait_slots: v.wait_slots,
            stop_count: v.stop_count,
        });
    }
}

// ---------------------------------------------------------------------------
// Sampling and routing
// ---------------------------------------------------------------------------

/// Poisson-distributed arrival count with mean `rate_per_slot`.
pub fn sample_arrivals<R: Rng + ?Sized>(rng: &mut R, rate_per_slot: f64) -> u32 {
    if rate_per_slot.is_nan() || rate_per_slot <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate_per_slot).expect("positive finite rate");
    d.sample(rng) as u32
}

/// Loop-free random walk from a boundary entry to an exit, uniform over the
/// permitted turns at each intersection.
pub fn generate_route<R: Rng + ?Sized>(
    rng: &mut R,
    net: &Network,
    entry: usize,
) -> Result<Vec<LinkIdx>, SimError> {
    let start = NodeRef::Boundary(entry);
    let first: Vec<LinkIdx> = net.outgoing(start).collect();
    let max_len = 4 * net.links.len();
    if first.is_empty() {
        return Err(SimError::RouteGenerationFailure(net.boundary[entry].clone()));
    }
    'attempt: for _ in 0..100 {
        let mut route = vec![first[rng.random_range(0..first.len())]];
        let mut visited = vec![false; net.intersections.len()];
        loop {
            let here = &net.links[*route.last().unwrap()];
            let i = match here.to {
                NodeRef::Boundary(_) => return Ok(route),
                NodeRef::Intersection(i) => i,
            };
            if visited[i] || route.len() > max_len {
                continue 'attempt;
            }
            visited[i] = true;
            let inter = &net.intersections[i];
            let approach = here.heading.expect("validated").opposite();
            let options: Vec<LinkIdx> = here
                .movements
                .iter()
                .filter_map(|&t| inter.exits[approach.exit_for(t).index()])
                .collect();
            if options.is_empty() {
                continue 'attempt;
            }
            route.push(options[rng.random_range(0..options.len())]);
        }
    }
    Err(SimError::RouteGenerationFailure(net.boundary[entry].clone()))
}

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApproachObs {
    pub dir: Dir,
    pub q_right: u32,
    pub q_straight: u32,
    pub q_left: u32,
    pub m_left: u32,
    pub m_right: u32,
    /// Pedestrians currently walking across this leg's crosswalk.
    pub peds_crossing: u32,
}

impl ApproachObs {
    pub fn vehicles(&self) -> u32 {
        self.q_right + self.q_straight + self.q_left
    }

    pub fn pedestrians(&self) -> u32 {
        self.m_left + self.m_right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IncomingQueue {
    pub from: NodeRef,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub intersection: String,
    pub slot: u64,
    /// One entry per approach, ordered N, E, S, W.
    pub approaches: Vec<ApproachObs>,
    /// q_ji per incoming link.
    pub incoming: Vec<IncomingQueue>,
}

impl Observation {
    pub fn empty(intersection: &str, slot: u64) -> Self {
        Observation {
            intersection: intersection.to_string(),
            slot,
            approaches: Vec::new(),
            incoming: Vec::new(),
        }
    }

    pub fn approach(&self, dir: Dir) -> Option<&ApproachObs> {
        self.approaches.iter().find(|a| a.dir == dir)
    }

    pub fn waiting_by_leg(&self) -> [u32; 4] {
        let mut out = [0; 4];
        for a in &self.approaches {
            out[a.dir.index()] = a.pedestrians();
        }
        out
    }

    pub fn crossing_by_leg(&self) -> [u32; 4] {
        let mut out = [0; 4];
        for a in &self.approaches {
            out[a.dir.index()] = a.peds_crossing;
        }
        out
    }

    /// Σ_j q_ji.
    pub fn total_vehicles(&self) -> u64 {
        self.incoming.iter().map(|q| u64::from(q.count)).sum()
    }

    /// Σ_j (m_L + m_R).
    pub fn total_pedestrians(&self) -> u64 {
        self.approaches.iter().map(|a| u64::from(a.pedestrians())).sum()
    }
}

pub fn observe(state: &SimState, net: &Network, id: &str) -> Result<Observation, SimError> {
    let i = net.intersection_index(id)?;
    Ok(observe_index(state, net, i))
}

pub fn observe_index(state: &SimState, net: &Network, i: usize) -> Observation {
    let inter = &net.intersections[i];
    let st = &state.intersections[i];
    let mut obs = Observation::empty(&inter.id, state.clock);
    for (a, lanes) in inter.approaches.iter().zip(&st.lanes) {
        let cw = &st.crosswalks[a.dir.index()];
        let o = ApproachObs {
            dir: a.dir,
            q_straight: lanes[LANE_STRAIGHT].len() as u32,
            q_left: lanes[LANE_LEFT].len() as u32,
            q_right: lanes[LANE_RIGHT].len() as u32,
            m_left: cw.waiting[Side::L as usize].len() as u32,
            m_right: cw.waiting[Side::R as usize].len() as u32,
            peds_crossing: cw.crossing.len() as u32,
        };
        obs.incoming.push(IncomingQueue {
            from: net.links[a.link].from,
            count: o.vehicles(),
        });
        obs.approaches.push(o);
    }
    obs
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

/// Pedestrian arrival rate per (crosswalk, side) at intersection `i`: the
/// network-wide vehicle entry rate times the pedestrian ratio, shared evenly
/// among intersections and then among their crosswalk sides.
fn pedestrian_rate(net: &Network, demand: &DemandProfile, slot: u64, i: usize) -> f64 {
    if demand.pedestrian_ratio <= 0.0 || net.intersections.is_empty() {
        return 0.0;
    }
    let total: f64 = net
        .entry_nodes
        .iter()
        .map(|&b| demand.rate_per_slot(&net.boundary[b], slot))
        .sum();
    let legs = net.intersections[i].legs().iter().filter(|&&l| l).count();
    total * demand.pedestrian_ratio / net.intersections.len() as f64 / (2 * legs) as f64
}

/// Advance the world by one slot. `controls[i]` must be the action currently
/// committed in intersection `i`'s signal state.
pub fn step(
    state: &mut SimState,
    controls: &[ActionId],
    net: &Network,
    demand: &DemandProfile,
) -> Result<(), SimError> {
    let clock = state.clock;
    for (i, (st, &a)) in state.intersections.iter().zip(controls).enumerate() {
        if !st.action_set.contains(a) || st.signal.active != a {
            return Err(SimError::IllegalControl {
                intersection: net.intersections[i].id.clone(),
                slot: clock,
                action: a,
            });
        }
    }
    if controls.len() != state.intersections.len() {
        return Err(SimError::Invariant {
            slot: clock,
            what: format!("{} controls for {} intersections", controls.len(), state.intersections.len()),
        });
    }
    let scfg = state.signal_config;
    for st in &mut state.intersections {
        st.signal.begin_slot(&st.action_set, &scfg);
    }

    // (1) arrivals
    for b in 0..net.boundary.len() {
        let rate = demand.rate_per_slot(&net.boundary[b], clock);
        let n = sample_arrivals(&mut state.entry_rngs[b], rate);
        for _ in 0..n {
            let route = generate_route(&mut state.entry_rngs[b], net, b)?;
            let first = route[0];
            let v = state.new_vehicle(route);
            let arrive_slot = clock + u64::from(net.links[first].travel_slots) - 1;
            state.transit[first].push_back(InTransit { vehicle: v, arrive_slot });
        }
    }
    for i in 0..net.intersections.len() {
        let rate = pedestrian_rate(net, demand, clock, i);
        if rate <= 0.0 {
            continue;
        }
        for leg in Dir::CLOCKWISE {
            if !net.intersections[i].legs()[leg.index()] {
                continue;
            }
            for side in [Side::L, Side::R] {
                let n = sample_arrivals(&mut state.intersections[i].rng, rate);
                for _ in 0..n {
                    state.spawn_pedestrian(i, leg, side);
                }
            }
        }
    }

    // (2) advance links
    for l in 0..net.links.len() {
        while state.transit[l].front().is_some_and(|t| t.arrive_slot <= clock) {
            let InTransit { vehicle, .. } = state.transit[l].pop_front().unwrap();
            match net.links[l].to {
                NodeRef::Boundary(_) => state.finish_trip(net, vehicle),
                NodeRef::Intersection(i) => state.enqueue(net, i, vehicle),
            }
        }
    }

    // (3) discharge green movements
    let sat = state.config.saturation_per_slot;
    for i in 0..net.intersections.len() {
        let inter = &net.intersections[i];
        let st = &mut state.intersections[i];
        let green = st.signal.green(&st.action_set);
        if green.is_empty() {
            continue;
        }
        let crossing: [bool; 4] =
            std::array::from_fn(|k| !st.crosswalks[k].crossing.is_empty());
        for (a, approach) in inter.approaches.iter().enumerate() {
            for lane in 0..3 {
                for _ in 0..sat {
                    let Some(head) = st.lanes[a][lane].front() else { break };
                    let turn = head.next_turn(net).expect("queued vehicles have a next link");
                    let m = Movement::new(approach.dir, turn);
                    if !green.contains(m) {
                        break;
                    }
                    if Dir::CLOCKWISE
                        .iter()
                        .any(|&leg| crossing[leg.index()] && crossing_yield(leg, m))
                    {
                        break;
                    }
                    let mut v = st.lanes[a][lane].pop_front().unwrap();
                    v.queued = false;
                    v.hop += 1;
                    let next = v.route[v.hop];
                    let arrive_slot = clock + u64::from(net.links[next].travel_slots);
                    state.transit[next].push_back(InTransit { vehicle: v, arrive_slot });
                }
            }
        }
    }

    // (4) pedestrians
    let crossing_slots = state.config.crossing_slots.max(1);
    for (i, st) in state.intersections.iter_mut().enumerate() {
        let interphase = st.signal.in_interphase();
        for leg in Dir::CLOCKWISE {
            let walk = !interphase && st.signal.indication(leg) == Indication::Walk;
            let cw = &mut st.crosswalks[leg.index()];
            for p in cw.crossing.iter_mut() {
                if let PedState::Crossing(r) = &mut p.state {
                    *r -= 1;
                    if *r == 0 {
                        p.state = PedState::Done;
                    }
                }
            }
            while cw.crossing.front().is_some_and(|p| p.state == PedState::Done) {
                let p = cw.crossing.pop_front().unwrap();
                state.counters.peds_done += 1;
                state.completed_peds.push(PedRecord {
                    arrival_slot: p.arrival_slot,
                    done_slot: clock + 1,
                    wait_slots: p.wait_slots,
                });
            }
            if walk {
                // Both curbs start together; the left side goes first.
                for side in 0..2 {
                    while let Some(mut p) = cw.waiting[side].pop_front() {
                        debug_assert_eq!(p.intersection, i);
                        p.state = PedState::Crossing(crossing_slots);
                        cw.crossing.push_back(p);
                    }
                }
            }
        }
    }

    // (5) waits, stops, signal timers
    for st in &mut state.intersections {
        for lanes in &mut st.lanes {
            for q in lanes.iter_mut() {
                for v in q.iter_mut() {
                    v.wait_slots += 1;
                    if !v.queued {
                        v.queued = true;
                        v.stop_count += 1;
                    }
                }
            }
        }
        for cw in &mut st.crosswalks {
            for p in cw.waiting.iter_mut().flatten() {
                p.wait_slots += 1;
            }
        }
        st.signal.end_slot(&scfg);
    }
    state.clock += 1;
    if state.config.check_invariants {
        state.check_conservation()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::action_set;
    use crate::network::{generate_grid, Shape};

    fn setup(net: &Network) -> SimState {
        let sets = net
            .intersections
            .iter()
            .map(|i| action_set(i.shape, i.action_set_size).unwrap())
            .collect();
        let cfg = SimConfig {
            check_invariants: true,
            ..SimConfig::default()
        };
        SimState::new(net, sets, cfg, SignalConfig::default(), 1)
    }

    fn link(net: &Network, id: &str) -> LinkIdx {
        net.links.iter().position(|l| l.id == id).unwrap()
    }

    fn controls(state: &SimState) -> Vec<ActionId> {
        state.intersections.iter().map(|i| i.signal.active).collect()
    }

    #[test]
    fn empty_step_only_advances_clock() {
        let net = generate_grid(2, 2, 5);
        let mut st = setup(&net);
        let before = st.clone();
        let demand = DemandProfile::empty();
        step(&mut st, &controls(&before), &net, &demand).unwrap();
        assert_eq!(st.clock, 1);
        assert_eq!(st.counters, before.counters);
        assert_eq!(st.vehicles_queued() + st.vehicles_in_transit(), 0);
    }

    #[test]
    fn single_vehicle_departs_on_green() {
        let net = generate_grid(1, 1, 5);
        let mut st = setup(&net);
        // a1 serves N/S straight
        st.inject_queued(&net, vec![link(&net, "bn0>i0_0"), link(&net, "i0_0>bs0")]);
        assert_eq!(st.vehicles_queued(), 1);
        step(&mut st, &[ActionId(1)], &net, &DemandProfile::empty()).unwrap();
        assert_eq!(st.vehicles_queued(), 0);
        assert_eq!(st.vehicles_in_transit(), 1);
    }

    #[test]
    fn fifo_discharge_one_per_slot() {
        let net = generate_grid(1, 1, 5);
        let mut st = setup(&net);
        let route = vec![link(&net, "bn0>i0_0"), link(&net, "i0_0>bs0")];
        for _ in 0..3 {
            st.inject_queued(&net, route.clone());
        }
        let mut order = Vec::new();
        for k in 0..3 {
            step(&mut st, &[ActionId(1)], &net, &DemandProfile::empty()).unwrap();
            assert_eq!(st.vehicles_queued(), 2 - k);
            order.push(st.transit[route[1]].back().unwrap().vehicle.id);
        }
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn no_discharge_on_red() {
        let net = generate_grid(1, 1, 5);
        let mut st = setup(&net);
        st.inject_queued(&net, vec![link(&net, "bw0>i0_0"), link(&net, "i0_0>be0")]);
        for _ in 0..5 {
            step(&mut st, &[ActionId(1)], &net, &DemandProfile::empty()).unwrap();
        }
        assert_eq!(st.vehicles_queued(), 1);
        let obs = observe(&st, &net, "i0_0").unwrap();
        assert_eq!(obs.approach(Dir::W).unwrap().q_straight, 1);
    }

    #[test]
    fn illegal_control() {
        let net = generate_grid(1, 1, 5);
        let mut st = setup(&net);
        let err = step(&mut st, &[ActionId(7)], &net, &DemandProfile::empty()).unwrap_err();
        assert!(matches!(err, SimError::IllegalControl { slot: 0, .. }));
        let err = step(&mut st, &[ActionId(2)], &net, &DemandProfile::empty()).unwrap_err();
        assert!(matches!(err, SimError::IllegalControl { .. }));
    }

    #[test]
    fn observation_counts() {
        let net = generate_grid(1, 1, 5);
        let mut st = setup(&net);
        let fresh = observe(&st, &net, "i0_0").unwrap();
        assert!(fresh.approaches.iter().all(|a| *a == ApproachObs { dir: a.dir, ..Default::default() }));
        // N approach turning left exits east
        let r = vec![link(&net, "bn0>i0_0"), link(&net, "i0_0>be0")];
        st.inject_queued(&net, r.clone());
        st.inject_queued(&net, r);
        st.inject_pedestrian(&net, 0, Dir::N, Side::R);
        let obs = observe(&st, &net, "i0_0").unwrap();
        let n = obs.approach(Dir::N).unwrap();
        assert_eq!(n.q_left, 2);
        assert_eq!(n.m_right, 1);
        for (a, q) in obs.approaches.iter().zip(&obs.incoming) {
            assert_eq!(a.vehicles(), q.count);
        }
        assert!(matches!(observe(&st, &net, "zz"), Err(SimError::Network(_))));
    }

    #[test]
    fn free_flow_travel_time() {
        let net = generate_grid(1, 1, 3);
        let mut st = setup(&net);
        let mut demand = DemandProfile::uniform(&net, 0.0);
        demand.rates.insert("bn0".into(), vec![36_000.0; 24]);
        // one slot of arrivals, then drain with a1 (N/S through) green
        step(&mut st, &[ActionId(1)], &net, &demand).unwrap();
        let empty = DemandProfile::empty();
        for _ in 0..20 {
            step(&mut st, &[ActionId(1)], &net, &empty).unwrap();
        }
        let (trips, _) = st.take_completions();
        let entered = st.counters.vehicles_entered;
        assert!(entered >= 1);
        // vehicles going straight or right never wait under a1
        for t in &trips {
            assert!(t.travel_time() >= t.free_flow);
            if t.wait_slots == 0 {
                assert_eq!(t.travel_time(), t.free_flow);
            }
        }
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| sample_arrivals(&mut rng, 0.0) == 0));
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_arrivals(&mut rng, 0.5) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 0.025, "{mean}");
        assert!((var - 0.5).abs() < 0.025, "{var}");
        let a: Vec<u32> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| sample_arrivals(&mut r, 2.0)).collect()
        };
        let b: Vec<u32> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| sample_arrivals(&mut r, 2.0)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn single_intersection_routes_have_two_links() {
        let net = generate_grid(1, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = net.boundary.iter().position(|b| b == "bn0").unwrap();
        for _ in 0..100 {
            let r = generate_route(&mut rng, &net, b).unwrap();
            assert_eq!(r.len(), 2);
        }
    }

    #[test]
    fn straight_only_route_is_unique() {
        let mut doc = generate_grid(1, 2, 5).to_doc();
        for l in &mut doc.links {
            if l.id == "bw0>i0_0" || l.id == "i0_0>i0_1" {
                l.movements = vec!["S".into()];
            }
        }
        let net = Network::from_doc(&doc).unwrap();
        let b = net.boundary.iter().position(|b| b == "bw0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = generate_route(&mut rng, &net, b).unwrap();
            let ids: Vec<&str> = r.iter().map(|&l| net.links[l].id.as_str()).collect();
            assert_eq!(ids, ["bw0>i0_0", "i0_0>i0_1", "i0_1>be0"]);
        }
    }

    #[test]
    fn tee_intersection_runs() {
        let doc = r#"{"intersections":[{"id":"t","shape":"tee","actions":4}],
            "boundary":["n","e","w"],
            "links":[
              {"id":"n>t","from":"n","to":"t","travel_slots":2,"movements":["L","R"],"heading":"S"},
              {"id":"t>n","from":"t","to":"n","travel_slots":2,"movements":["S"],"heading":"N"},
              {"id":"e>t","from":"e","to":"t","travel_slots":2,"movements":["S","R"],"heading":"W"},
              {"id":"t>e","from":"t","to":"e","travel_slots":2,"movements":["S"],"heading":"E"},
              {"id":"w>t","from":"w","to":"t","travel_slots":2,"movements":["S","L"],"heading":"E"},
              {"id":"t>w","from":"t","to":"w","travel_slots":2,"movements":["S"],"heading":"W"}]}"#;
        let net = crate::network::load_network(doc).unwrap();
        assert_eq!(net.intersections[0].shape, Shape::Tee);
        let legs = net.intersections[0].legs();
        let set = action_set(Shape::Tee, 4).unwrap().restricted(legs);
        let cfg = SimConfig {
            check_invariants: true,
            ..SimConfig::default()
        };
        let mut st = SimState::new(&net, vec![set], cfg, SignalConfig::default(), 4);
        let demand = DemandProfile::uniform(&net, 720.0).with_pedestrian_ratio(1.0);
        for t in 0..400u64 {
            let desired = ActionId::from_index(((t / 20) % 4) as usize);
            let obs = observe_index(&st, &net, 0);
            let set = st.intersections[0].action_set.clone();
            let sig = &mut st.intersections[0].signal;
            control::request_action(sig, desired, &obs, &set, &SignalConfig::default()).unwrap();
            let c = controls(&st);
            step(&mut st, &c, &net, &demand).unwrap();
        }
        assert!(st.counters.vehicles_exited > 0);
        let obs = observe_index(&st, &net, 0);
        assert_eq!(obs.approaches.len(), 3);
        assert!(obs.approach(Dir::S).is_none());
    }
}

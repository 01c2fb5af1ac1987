//! Signal phases, canonical action sets, transition constraints and the
//! per-intersection signal state machine with pedestrian protection.
//!
//! Every controller (learning or baseline) changes the lights only through
//! [`request_action`], so the transition and protection rules hold
//! uniformly.
//!
//! Conflict geometry: each leg contributes an inbound and an outbound point
//! on a circle, clockwise from north, with right-hand traffic. A movement is
//! a chord from its approach's inbound point to its exit's outbound point.
//! Two movements conflict when their chords cross or they share an exit.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Dir, Shape, Turn};
use crate::sim::Observation;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("unsupported action set: {shape:?} with {size} actions")]
    UnsupportedCombination { shape: Shape, size: u8 },
    #[error("transition {from} -> {to} violates the action constraints")]
    ConstraintViolation { from: ActionId, to: ActionId },
    #[error("action {0} is not a member of the action set")]
    UnknownAction(ActionId),
    #[error("action {0} has no allowed successor")]
    DeadState(ActionId),
    #[error("invalid signal plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub u8);

impl ActionId {
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(i: usize) -> ActionId {
        ActionId(i as u8 + 1)
    }

    pub fn parse(s: &str) -> Option<ActionId> {
        let n: u8 = s.strip_prefix('a').unwrap_or(s).parse().ok()?;
        (1..=8).contains(&n).then_some(ActionId(n))
    }
}

impl Serialize for ActionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ActionId::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad action id {s:?}")))
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Movement {
    pub approach: Dir,
    pub turn: Turn,
}

impl Movement {
    pub fn new(approach: Dir, turn: Turn) -> Self {
        Movement { approach, turn }
    }

    fn bit(self) -> u16 {
        1 << (self.approach.index() * 3 + self.turn as usize)
    }

    fn chord(self) -> (usize, usize) {
        let from = 2 * self.approach.index();
        let to = 2 * self.approach.exit_for(self.turn).index() + 1;
        (from, to)
    }

    pub fn exit(self) -> Dir {
        self.approach.exit_for(self.turn)
    }
}

fn chords_cross((a, b): (usize, usize), (c, d): (usize, usize)) -> bool {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let inside = |x: usize| lo < x && x < hi;
    if [c, d].iter().any(|&x| x == lo || x == hi) {
        return false;
    }
    inside(c) != inside(d)
}

/// Whether two vehicle movements may not be green together.
pub fn movements_conflict(a: Movement, b: Movement) -> bool {
    if a.approach == b.approach {
        return false;
    }
    if a.exit() == b.exit() {
        return true;
    }
    chords_cross(a.chord(), b.chord())
}

/// Whether a movement crosses the crosswalk on `leg`. Right turns still
/// cross it but yield to pedestrians, so they are reported separately by
/// [`crossing_yield`].
pub fn crossing_conflict(leg: Dir, m: Movement) -> bool {
    m.turn != Turn::Right && (m.approach == leg || m.exit() == leg)
}

/// Right turns that must yield to pedestrians on `leg`.
pub fn crossing_yield(leg: Dir, m: Movement) -> bool {
    m.turn == Turn::Right && (m.approach == leg || m.exit() == leg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MovementSet(u16);

impl MovementSet {
    pub fn contains(self, m: Movement) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn insert(&mut self, m: Movement) {
        self.0 |= m.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Movement> {
        Dir::CLOCKWISE
            .into_iter()
            .flat_map(|d| Turn::ALL.into_iter().map(move |t| Movement::new(d, t)))
            .filter(move |m| self.contains(*m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub id: ActionId,
    pub movements: MovementSet,
    /// Crosswalks granted WALK, indexed by [`Dir::index`] of the leg.
    pub walks: [bool; 4],
}

impl Action {
    fn from_movements(id: u8, movements: &[Movement], legs: [bool; 4]) -> Action {
        let mut set = MovementSet::default();
        for &m in movements {
            if legs[m.approach.index()] && legs[m.exit().index()] {
                set.insert(m);
            }
        }
        let mut walks = [false; 4];
        for m in set.iter().filter(|m| m.turn == Turn::Straight) {
            for leg in [m.approach.left_exit(), m.approach.right_exit()] {
                if legs[leg.index()] && !set.iter().any(|o| crossing_conflict(leg, o)) {
                    walks[leg.index()] = true;
                }
            }
        }
        Action {
            id: ActionId(id),
            movements: set,
            walks,
        }
    }

    pub fn permits(&self, m: Movement) -> bool {
        self.movements.contains(m)
    }

    pub fn walk_legs(&self) -> impl Iterator<Item = Dir> + '_ {
        Dir::CLOCKWISE.into_iter().filter(|d| self.walks[d.index()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    pub size: u8,
    pub actions: Vec<Action>,
    pub forbidden: BTreeSet<(ActionId, ActionId)>,
}

fn through(d: Dir) -> [Movement; 2] {
    [Movement::new(d, Turn::Straight), Movement::new(d, Turn::Right)]
}

fn per_approach(d: Dir) -> [Movement; 3] {
    [
        Movement::new(d, Turn::Straight),
        Movement::new(d, Turn::Left),
        Movement::new(d, Turn::Right),
    ]
}

/// Canonical action set for a shape. TEE intersections use the 4-action
/// layout; callers restrict it to the legs that exist with
/// [`ActionSet::restricted`].
pub fn action_set(shape: Shape, size: u8) -> Result<ActionSet, ControlError> {
    match (shape, size) {
        (Shape::Plus, 4 | 6 | 8) | (Shape::Tee, 4) => {}
        _ => return Err(ControlError::UnsupportedCombination { shape, size }),
    }
    let all = [true; 4];
    let mut moves: Vec<Vec<Movement>> = vec![
        [through(Dir::N), through(Dir::S)].concat(),
        vec![Movement::new(Dir::N, Turn::Left), Movement::new(Dir::S, Turn::Left)],
        [through(Dir::E), through(Dir::W)].concat(),
        vec![Movement::new(Dir::E, Turn::Left), Movement::new(Dir::W, Turn::Left)],
    ];
    // Split phases: a5.. are single-approach straight+left phases.
    let extra: &[Dir] = match size {
        6 => &[Dir::N, Dir::E],
        8 => &[Dir::N, Dir::S, Dir::E, Dir::W],
        _ => &[],
    };
    for &d in extra {
        moves.push(per_approach(d).to_vec());
    }
    let actions = moves
        .iter()
        .enumerate()
        .map(|(i, m)| Action::from_movements(i as u8 + 1, m, all))
        .collect();

    let a = ActionId;
    let mut forbidden = BTreeSet::new();
    match size {
        8 => {
            for x in 5..=8 {
                forbidden.insert((a(1), a(x)));
            }
            forbidden.insert((a(5), a(5)));
            forbidden.insert((a(5), a(1)));
            forbidden.insert((a(7), a(1)));
        }
        6 => {
            // Same pattern by role: a5 is the N split, a6 the E split.
            forbidden.insert((a(1), a(5)));
            forbidden.insert((a(1), a(6)));
            forbidden.insert((a(5), a(5)));
            forbidden.insert((a(5), a(1)));
            forbidden.insert((a(6), a(1)));
        }
        _ => {}
    }
    Ok(ActionSet {
        size,
        actions,
        forbidden,
    })
}

impl ActionSet {
    pub fn get(&self, id: ActionId) -> Option<&Action> {
        self.actions.get(id.index()).filter(|a| a.id == id)
    }

    pub fn contains(&self, id: ActionId) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.actions.iter().map(|a| a.id)
    }

    /// Drop movements and crosswalks touching legs that do not exist.
    pub fn restricted(&self, legs: [bool; 4]) -> ActionSet {
        let actions = self
            .actions
            .iter()
            .map(|a| {
                let ms: Vec<Movement> = a.movements.iter().collect();
                Action::from_movements(a.id.0, &ms, legs)
            })
            .collect();
        ActionSet {
            size: self.size,
            actions,
            forbidden: self.forbidden.clone(),
        }
    }

    /// Replace the forbidden transitions, checking membership and liveness.
    pub fn with_forbidden(
        mut self,
        forbidden: impl IntoIterator<Item = (ActionId, ActionId)>,
    ) -> Result<ActionSet, ControlError> {
        let forbidden: BTreeSet<_> = forbidden.into_iter().collect();
        for &(x, y) in &forbidden {
            for id in [x, y] {
                if !self.contains(id) {
                    return Err(ControlError::UnknownAction(id));
                }
            }
        }
        self.forbidden = forbidden;
        for id in self.ids().collect::<Vec<_>>() {
            if self.allowed_next(id).is_empty() {
                return Err(ControlError::DeadState(id));
            }
        }
        Ok(self)
    }

    pub fn allowed_next(&self, current: ActionId) -> Vec<ActionId> {
        self.ids()
            .filter(|&x| !self.forbidden.contains(&(current, x)))
            .collect()
    }

    pub fn is_allowed(&self, from: ActionId, to: ActionId) -> bool {
        self.contains(to) && !self.forbidden.contains(&(from, to))
    }
}

pub fn allowed_next(set: &ActionSet, current: ActionId) -> Vec<ActionId> {
    set.allowed_next(current)
}

// ---------------------------------------------------------------------------
// Signal state machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indication {
    DontWalk,
    /// Pedestrians may start crossing.
    Walk,
    /// No new starts; pedestrians already crossing finish.
    Clearing,
}

impl Indication {
    /// Pedestrian-green in the broad sense (steady or flashing).
    pub fn is_green(self) -> bool {
        self != Indication::DontWalk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrossingSignal {
    pub indication: Indication,
    /// Minimum WALK slots still owed before the crossing may be revoked.
    pub walk_timer: u32,
    /// Consecutive slots spent in [`Indication::Walk`].
    pub walk_run: u32,
    pub obligation: bool,
}

impl Default for CrossingSignal {
    fn default() -> Self {
        CrossingSignal {
            indication: Indication::DontWalk,
            walk_timer: 0,
            walk_run: 0,
            obligation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// All-red slots between two distinct actions.
    pub interphase_slots: u32,
    /// WALK interval when no button press is pending.
    pub default_walk_slots: u32,
    /// WALK owed after a button press during red.
    pub obligation_walk_slots: u32,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            interphase_slots: 2,
            default_walk_slots: 5,
            obligation_walk_slots: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    pub active: ActionId,
    /// Green slots served by the active action since it took effect.
    pub slots_in_action: u32,
    pub interphase_remaining: u32,
    pub crossings: [CrossingSignal; 4],
}

impl SignalState {
    pub fn new(initial: ActionId) -> Self {
        SignalState {
            active: initial,
            slots_in_action: 0,
            interphase_remaining: 0,
            crossings: [CrossingSignal::default(); 4],
        }
    }

    pub fn in_interphase(&self) -> bool {
        self.interphase_remaining > 0
    }

    pub fn indication(&self, leg: Dir) -> Indication {
        self.crossings[leg.index()].indication
    }

    /// Vehicle movements green this slot.
    pub fn green(&self, set: &ActionSet) -> MovementSet {
        if self.in_interphase() {
            MovementSet::default()
        } else {
            set.get(self.active).map(|a| a.movements).unwrap_or_default()
        }
    }

    fn open_walk(&mut self, leg: Dir, cfg: &SignalConfig) {
        let c = &mut self.crossings[leg.index()];
        c.indication = Indication::Walk;
        c.walk_run = 0;
        c.walk_timer = if c.obligation {
            cfg.obligation_walk_slots
        } else {
            cfg.default_walk_slots
        }
        .max(1);
    }

    /// Slot-start bookkeeping: once clearance is over, open the WALK
    /// indications of the active action.
    pub fn begin_slot(&mut self, set: &ActionSet, cfg: &SignalConfig) {
        if self.in_interphase() {
            return;
        }
        let Some(action) = set.get(self.active) else { return };
        for leg in action.walk_legs().collect::<Vec<_>>() {
            if self.crossings[leg.index()].indication == Indication::DontWalk {
                self.open_walk(leg, cfg);
            }
        }
    }

    /// Slot-end bookkeeping: count down clearance and walk timers, clear
    /// obligations once a full WALK interval has been served, and move
    /// expired WALKs to clearing.
    pub fn end_slot(&mut self, cfg: &SignalConfig) {
        if self.in_interphase() {
            self.interphase_remaining -= 1;
        } else {
            self.slots_in_action += 1;
        }
        for c in &mut self.crossings {
            if c.indication == Indication::Walk {
                c.walk_timer = c.walk_timer.saturating_sub(1);
                c.walk_run += 1;
                if c.obligation && c.walk_run >= cfg.obligation_walk_slots {
                    c.obligation = false;
                }
                if c.walk_timer == 0 {
                    c.indication = Indication::Clearing;
                }
            } else {
                c.walk_run = 0;
            }
        }
    }
}

/// A pedestrian pressed the button on `leg`. Presses during WALK are already
/// being served and leave no obligation.
pub fn record_button(sig: &mut SignalState, leg: Dir) {
    let c = &mut sig.crossings[leg.index()];
    if c.indication != Indication::Walk {
        c.obligation = true;
    }
}

/// Filter a controller's desired action through the transition constraints
/// and pedestrian protection. Returns the action in effect afterwards.
///
/// A request made while an interphase clearance is running is ignored.
pub fn request_action(
    sig: &mut SignalState,
    desired: ActionId,
    obs: &Observation,
    set: &ActionSet,
    cfg: &SignalConfig,
) -> Result<ActionId, ControlError> {
    if !set.contains(desired) {
        return Err(ControlError::UnknownAction(desired));
    }
    if sig.in_interphase() {
        return Ok(sig.active);
    }
    if !set.is_allowed(sig.active, desired) {
        return Err(ControlError::ConstraintViolation {
            from: sig.active,
            to: desired,
        });
    }
    if desired == sig.active {
        // An extension serves buttons pressed since the WALK ended.
        for leg in Dir::CLOCKWISE {
            let c = sig.crossings[leg.index()];
            if c.indication == Indication::Clearing && c.obligation {
                sig.open_walk(leg, cfg);
            }
        }
        return Ok(sig.active);
    }

    let next = set.get(desired).expect("checked membership");
    let crossing = obs.crossing_by_leg();
    let revoked: Vec<Dir> = Dir::CLOCKWISE
        .into_iter()
        .filter(|l| {
            sig.crossings[l.index()].indication.is_green()
                && (cfg.interphase_slots > 0 || !next.walks[l.index()])
        })
        .collect();
    let held = revoked.iter().any(|l| {
        crossing[l.index()] > 0 || sig.crossings[l.index()].walk_timer > 0
    });
    if held {
        return Ok(sig.active);
    }

    for l in revoked {
        let c = &mut sig.crossings[l.index()];
        c.indication = Indication::DontWalk;
        c.walk_timer = 0;
        c.walk_run = 0;
    }
    sig.active = desired;
    sig.slots_in_action = 0;
    sig.interphase_remaining = cfg.interphase_slots;
    Ok(sig.active)
}

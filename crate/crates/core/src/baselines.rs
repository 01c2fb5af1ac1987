//! Fixed-time and queue-actuated signal plans.

use serde::{Deserialize, Serialize};

use crate::control::{ActionId, ActionSet, ControlError, Movement};
use crate::network::Turn;
use crate::sim::Observation;

/// Durations replacing the base plan for slots whose hour of day falls in
/// `[start_hour, end_hour)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodOverride {
    pub start_hour: u32,
    pub end_hour: u32,
    pub durations: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub cycle: Vec<ActionId>,
    pub durations: Vec<u32>,
    #[serde(default)]
    pub overrides: Vec<PeriodOverride>,
    #[serde(default = "default_slots_per_day")]
    pub slots_per_day: u64,
}

fn default_slots_per_day() -> u64 {
    86_400
}

impl FixedTimePlan {
    /// The default plan: every action of the set once, `slots` each, in the
    /// lexicographically first order whose steps and wrap are all allowed.
    /// Falls back to id order when no such cycle exists.
    pub fn uniform(set: &ActionSet, slots: u32) -> FixedTimePlan {
        let ids: Vec<ActionId> = set.ids().collect();
        let mut cycle = vec![ids[0]];
        if !extend_cycle(set, &ids, &mut cycle) {
            cycle = ids;
        }
        FixedTimePlan {
            durations: vec![slots; cycle.len()],
            cycle,
            overrides: Vec::new(),
            slots_per_day: default_slots_per_day(),
        }
    }

    /// Check the plan can be executed under the set's transition
    /// constraints, including the wrap from the last phase to the first.
    pub fn validate(&self, set: &ActionSet) -> Result<(), ControlError> {
        if self.cycle.is_empty() || self.cycle.len() != self.durations.len() {
            return Err(ControlError::InvalidPlan("cycle and durations must be non-empty and of equal length".into()));
        }
        for a in &self.cycle {
            if !set.contains(*a) {
                return Err(ControlError::UnknownAction(*a));
            }
        }
        let n = self.cycle.len();
        for k in 0..n {
            let (from, to) = (self.cycle[k], self.cycle[(k + 1) % n]);
            if from != to && !set.is_allowed(from, to) {
                return Err(ControlError::ConstraintViolation { from, to });
            }
        }
        for o in &self.overrides {
            if o.durations.len() != n || o.durations.iter().all(|&d| d == 0) {
                return Err(ControlError::InvalidPlan(format!(
                    "override {}-{} needs {n} durations with a positive total",
                    o.start_hour, o.end_hour
                )));
            }
        }
        if self.durations.iter().all(|&d| d == 0) {
            return Err(ControlError::InvalidPlan("cycle length is zero".into()));
        }
        Ok(())
    }

    fn durations_at(&self, slot: u64) -> &[u32] {
        let hour = ((slot % self.slots_per_day) / 3600) as u32;
        self.overrides
            .iter()
            .find(|o| (o.start_hour..o.end_hour).contains(&hour))
            .map_or(&self.durations, |o| &o.durations)
    }
}

fn extend_cycle(set: &ActionSet, ids: &[ActionId], cycle: &mut Vec<ActionId>) -> bool {
    let last = *cycle.last().unwrap();
    if cycle.len() == ids.len() {
        return ids.len() == 1 || set.is_allowed(last, cycle[0]);
    }
    for &a in ids {
        if !cycle.contains(&a) && set.is_allowed(last, a) {
            cycle.push(a);
            if extend_cycle(set, ids, cycle) {
                return true;
            }
            cycle.pop();
        }
    }
    false
}

/// Action the plan prescribes at `slot`. Pure in `(plan, slot)`.
pub fn fixed_time_tick(plan: &FixedTimePlan, slot: u64) -> ActionId {
    let durations = plan.durations_at(slot);
    let cycle: u64 = durations.iter().map(|&d| u64::from(d)).sum();
    let mut offset = slot % cycle;
    for (a, &d) in plan.cycle.iter().zip(durations) {
        if offset < u64::from(d) {
            return *a;
        }
        offset -= u64::from(d);
    }
    unreachable!("offset is below the cycle length")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPolicy {
    pub sequence: Vec<ActionId>,
    pub min_green: u32,
    pub max_green: u32,
    /// Action deferred behind a bridge because it could not follow directly.
    #[serde(skip)]
    pub pending: Option<ActionId>,
}

impl DynamicPolicy {
    pub fn new(set: &ActionSet, min_green: u32, max_green: u32) -> DynamicPolicy {
        DynamicPolicy {
            sequence: set.ids().collect(),
            min_green,
            max_green,
            pending: None,
        }
    }
}

/// Vehicles queued in lanes the action gives green to.
pub fn served_queue(set: &ActionSet, action: ActionId, obs: &Observation) -> u32 {
    let Some(act) = set.get(action) else { return 0 };
    obs.approaches
        .iter()
        .map(|a| {
            let p = |t| act.permits(Movement::new(a.dir, t));
            let mut n = 0;
            if p(Turn::Straight) {
                n += a.q_straight;
            }
            if p(Turn::Left) {
                n += a.q_left;
            }
            if p(Turn::Right) {
                n += a.q_right;
            }
            n
        })
        .sum()
}

/// Queue-actuated choice. `None` while the minimum green has not elapsed.
/// Otherwise holds the current action while it serves a queue and the
/// maximum green allows, else moves to the next action in sequence with
/// waiting vehicles. When that action cannot follow the current one, an
/// allowed action that may precede it is taken instead and the target is
/// served at the next decision. With nothing waiting elsewhere the current
/// action is held if possible.
pub fn dynamic_tick(
    policy: &mut DynamicPolicy,
    obs: &Observation,
    current: ActionId,
    slots_in_action: u32,
    allowed: &[ActionId],
    set: &ActionSet,
) -> Option<ActionId> {
    if slots_in_action < policy.min_green {
        return None;
    }
    if let Some(target) = policy.pending.take() {
        if target != current && allowed.contains(&target) && served_queue(set, target, obs) > 0 {
            return Some(target);
        }
    }
    let can_hold = allowed.contains(&current);
    if can_hold && slots_in_action < policy.max_green && served_queue(set, current, obs) > 0 {
        return Some(current);
    }
    let n = policy.sequence.len();
    let pos = policy.sequence.iter().position(|&a| a == current).unwrap_or(n - 1);
    let order: Vec<ActionId> = (1..=n)
        .map(|k| policy.sequence[(pos + k) % n])
        .filter(|&a| a != current)
        .collect();
    if let Some(target) = order.iter().copied().find(|&a| served_queue(set, a, obs) > 0) {
        if allowed.contains(&target) {
            return Some(target);
        }
        let bridges: Vec<ActionId> = order
            .iter()
            .copied()
            .filter(|&b| allowed.contains(&b) && set.is_allowed(b, target))
            .collect();
        if let Some(b) = bridges.iter().find(|&&b| served_queue(set, b, obs) > 0).or(bridges.first()) {
            policy.pending = Some(target);
            return Some(*b);
        }
    }
    if can_hold {
        return Some(current);
    }
    order.into_iter().find(|a| allowed.contains(a)).or_else(|| allowed.first().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::action_set;
    use crate::network::{Dir, NodeRef, Shape};
    use crate::sim::{ApproachObs, IncomingQueue};

    fn obs(queues: [(u32, u32); 4]) -> Observation {
        let mut o = Observation::empty("x", 0);
        for (k, d) in Dir::CLOCKWISE.iter().enumerate() {
            let a = ApproachObs {
                dir: *d,
                q_straight: queues[k].0,
                q_left: queues[k].1,
                ..Default::default()
            };
            o.incoming.push(IncomingQueue { from: NodeRef::Boundary(k), count: a.vehicles() });
            o.approaches.push(a);
        }
        o
    }

    #[test]
    fn fixed_cycle() {
        let set = action_set(Shape::Plus, 4).unwrap();
        let plan = FixedTimePlan::uniform(&set, 30);
        plan.validate(&set).unwrap();
        assert_eq!(fixed_time_tick(&plan, 0), ActionId(1));
        assert_eq!(fixed_time_tick(&plan, 29), ActionId(1));
        assert_eq!(fixed_time_tick(&plan, 30), ActionId(2));
        assert_eq!(fixed_time_tick(&plan, 119), ActionId(4));
        assert_eq!(fixed_time_tick(&plan, 120), ActionId(1));
    }

    #[test]
    fn fixed_override_period() {
        let set = action_set(Shape::Plus, 4).unwrap();
        let mut plan = FixedTimePlan::uniform(&set, 30);
        plan.overrides.push(PeriodOverride {
            start_hour: 7,
            end_hour: 9,
            durations: vec![50, 10, 50, 10],
        });
        plan.validate(&set).unwrap();
        let s = 7 * 3600;
        assert_eq!(fixed_time_tick(&plan, s + 45), ActionId(1));
        assert_eq!(fixed_time_tick(&plan, s + 55), ActionId(2));
        assert_eq!(fixed_time_tick(&plan, 6 * 3600 + 45), ActionId(2));
    }

    #[test]
    fn uniform_plans_are_valid_cycles() {
        for size in [4, 6, 8] {
            let set = action_set(Shape::Plus, size).unwrap();
            let plan = FixedTimePlan::uniform(&set, 20);
            plan.validate(&set).unwrap();
            assert_eq!(plan.cycle.len(), usize::from(size));
        }
        let six = FixedTimePlan::uniform(&action_set(Shape::Plus, 6).unwrap(), 20);
        assert_eq!(six.cycle, [1, 2, 3, 5, 6, 4].map(ActionId));
    }

    #[test]
    fn fixed_plan_respects_constraints() {
        let set = action_set(Shape::Plus, 8).unwrap();
        // a1 -> a5 is forbidden
        let plan = FixedTimePlan {
            cycle: vec![ActionId(1), ActionId(5), ActionId(3)],
            durations: vec![10, 10, 10],
            overrides: vec![],
            slots_per_day: 86_400,
        };
        assert!(matches!(plan.validate(&set), Err(ControlError::ConstraintViolation { .. })));
    }

    #[test]
    fn dynamic_examples() {
        let set = action_set(Shape::Plus, 4).unwrap();
        let mut pol = DynamicPolicy::new(&set, 5, 60);
        let all: Vec<_> = set.ids().collect();
        // N straight queue of 3 keeps a1
        let o = obs([(3, 0), (0, 0), (0, 0), (0, 0)]);
        assert_eq!(dynamic_tick(&mut pol, &o, ActionId(1), 10, &all, &set), Some(ActionId(1)));
        // a1 empty, E queue -> skip empty a2 and go to a3
        let o = obs([(0, 0), (2, 0), (0, 0), (0, 0)]);
        assert_eq!(dynamic_tick(&mut pol, &o, ActionId(1), 10, &all, &set), Some(ActionId(3)));
        // min green
        assert_eq!(dynamic_tick(&mut pol, &o, ActionId(1), 2, &all, &set), None);
        // max green forces a switch when others wait
        let o = obs([(3, 0), (2, 0), (0, 0), (0, 0)]);
        assert_eq!(dynamic_tick(&mut pol, &o, ActionId(1), 60, &all, &set), Some(ActionId(3)));
        // everything empty holds
        let o = obs([(0, 0); 4]);
        assert_eq!(dynamic_tick(&mut pol, &o, ActionId(2), 30, &all, &set), Some(ActionId(2)));
    }

    #[test]
    fn dynamic_respects_forbidden_hold() {
        let set = action_set(Shape::Plus, 8).unwrap();
        let mut pol = DynamicPolicy::new(&set, 5, 60);
        let allowed = set.allowed_next(ActionId(5));
        let o = obs([(3, 2), (0, 0), (0, 0), (0, 0)]);
        let got = dynamic_tick(&mut pol, &o, ActionId(5), 10, &allowed, &set).unwrap();
        assert!(set.is_allowed(ActionId(5), got) && got != ActionId(5));
    }

    #[test]
    fn dynamic_bridges_to_forbidden_target() {
        let set = action_set(Shape::Plus, 6).unwrap();
        let mut pol = DynamicPolicy::new(&set, 5, 60);
        // only S straight waits; a1 serves it but cannot follow a6
        let o = obs([(0, 0), (0, 0), (4, 0), (0, 0)]);
        let got = dynamic_tick(&mut pol, &o, ActionId(6), 10, &set.allowed_next(ActionId(6)), &set).unwrap();
        assert!(set.is_allowed(ActionId(6), got) && set.is_allowed(got, ActionId(1)), "{got}");
        assert_eq!(dynamic_tick(&mut pol, &o, got, 10, &set.allowed_next(got), &set), Some(ActionId(1)));
    }
}

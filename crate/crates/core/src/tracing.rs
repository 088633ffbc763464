//! Risk labels over the temporal contact graph.
//!
//! A person becomes at-risk at step `t` when, at `t`, they have a recorded
//! contact with someone already exposed at or before `t`. Exposure chains
//! within a single step. [`propagate_risk`] computes the closure with one
//! breadth-first pass per step; [`oracle_propagate`] re-derives it by naive
//! repeated sweeps over the raw event list and exists only to cross-check.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceState;
use crate::id::AnonymousId;
use crate::mobility::{day_start, simulate_day, ContactEvent, LogMode, SimError};
use crate::registry::{AuthorityToken, HealthStatus, Registry, RegistryError};
use crate::rng::{keyed, Stream};
use crate::scenario::{Scenario, ScenarioError};
use crate::SimMinute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub a: AnonymousId,
    pub b: AnonymousId,
    pub step: SimMinute,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemporalContactGraph {
    nodes: BTreeSet<AnonymousId>,
    edges: Vec<Edge>,
}

impl TemporalContactGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every ID in `events` becomes a node; only recorded events become edges.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a ContactEvent>) -> Self {
        let mut g = Self::new();
        g.extend_events(events);
        g
    }

    pub fn extend_events<'a>(&mut self, events: impl IntoIterator<Item = &'a ContactEvent>) {
        for ev in events {
            self.nodes.insert(ev.a);
            self.nodes.insert(ev.b);
            if ev.recorded {
                self.add_edge(ev.a, ev.b, ev.step);
            }
        }
    }

    pub fn add_node(&mut self, id: AnonymousId) {
        self.nodes.insert(id);
    }

    pub fn add_edge(&mut self, a: AnonymousId, b: AnonymousId, step: SimMinute) {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.edges.push(Edge { a, b, step });
    }

    pub fn nodes(&self) -> &BTreeSet<AnonymousId> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Distinct contact partners of `id`.
    pub fn degree(&self, id: &AnonymousId) -> usize {
        self.edges
            .iter()
            .filter_map(|e| {
                if &e.a == id {
                    Some(e.b)
                } else if &e.b == id {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub id: AnonymousId,
    pub step: SimMinute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub status: HealthStatus,
    pub acquisition_step: Option<SimMinute>,
}

impl Label {
    const CLEAR: Label = Label {
        status: HealthStatus::NotAtRisk,
        acquisition_step: None,
    };
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLabeling(pub BTreeMap<AnonymousId, Label>);

impl RiskLabeling {
    pub fn status(&self, id: &AnonymousId) -> HealthStatus {
        self.0.get(id).map_or(HealthStatus::NotAtRisk, |l| l.status)
    }

    pub fn get(&self, id: &AnonymousId) -> Option<&Label> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AnonymousId, &Label)> {
        self.0.iter()
    }

    pub fn with_status(&self, status: HealthStatus) -> BTreeSet<AnonymousId> {
        self.0
            .iter()
            .filter(|(_, l)| l.status == status)
            .map(|(id, _)| *id)
            .collect()
    }

    fn build(
        nodes: impl IntoIterator<Item = AnonymousId>,
        seeds: &[Seed],
        exposure: &BTreeMap<AnonymousId, SimMinute>,
    ) -> Self {
        let mut out: BTreeMap<AnonymousId, Label> =
            nodes.into_iter().map(|id| (id, Label::CLEAR)).collect();
        for (id, &t) in exposure {
            out.insert(
                *id,
                Label {
                    status: HealthStatus::AtRisk,
                    acquisition_step: Some(t),
                },
            );
        }
        for s in seeds {
            let label = out.entry(s.id).or_insert(Label::CLEAR);
            let step = match (label.status, label.acquisition_step) {
                (HealthStatus::Infected, Some(prev)) => prev.min(s.step),
                _ => s.step,
            };
            *label = Label {
                status: HealthStatus::Infected,
                acquisition_step: Some(step),
            };
        }
        Self(out)
    }
}

fn seed_exposure(seeds: &[Seed]) -> BTreeMap<AnonymousId, SimMinute> {
    let mut exposure = BTreeMap::new();
    for s in seeds {
        exposure
            .entry(s.id)
            .and_modify(|t: &mut SimMinute| *t = (*t).min(s.step))
            .or_insert(s.step);
    }
    exposure
}

pub fn propagate_risk(graph: &TemporalContactGraph, seeds: &[Seed]) -> RiskLabeling {
    let mut exposure = seed_exposure(seeds);
    let mut edges: Vec<&Edge> = graph.edges.iter().collect();
    edges.sort_by_key(|e| e.step);

    for group in edges.chunk_by(|x, y| x.step == y.step) {
        let t = group[0].step;
        let mut adj: BTreeMap<AnonymousId, Vec<AnonymousId>> = BTreeMap::new();
        for e in group {
            adj.entry(e.a).or_default().push(e.b);
            adj.entry(e.b).or_default().push(e.a);
        }
        let mut queue: VecDeque<AnonymousId> = adj
            .keys()
            .filter(|id| exposure.get(id).is_some_and(|&x| x <= t))
            .copied()
            .collect();
        while let Some(u) = queue.pop_front() {
            for v in &adj[&u] {
                if exposure.get(v).is_none_or(|&x| x > t) {
                    exposure.insert(*v, t);
                    queue.push_back(*v);
                }
            }
        }
    }
    RiskLabeling::build(graph.nodes.iter().copied(), seeds, &exposure)
}

/// Chronological replay straight off the event list: for each step, sweep that
/// step's recorded events until nothing changes.
pub fn oracle_propagate(events: &[ContactEvent], seeds: &[Seed]) -> RiskLabeling {
    let mut exposure = seed_exposure(seeds);
    let steps: BTreeSet<SimMinute> = events
        .iter()
        .filter(|e| e.recorded)
        .map(|e| e.step)
        .collect();
    for t in steps {
        loop {
            let mut changed = false;
            for ev in events.iter().filter(|e| e.recorded && e.step == t) {
                for (from, to) in [(ev.a, ev.b), (ev.b, ev.a)] {
                    let from_exposed = matches!(exposure.get(&from), Some(&x) if x <= t);
                    let to_later = match exposure.get(&to) {
                        None => true,
                        Some(&x) => x > t,
                    };
                    if from_exposed && to_later {
                        exposure.insert(to, t);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    let nodes: BTreeSet<AnonymousId> = events.iter().flat_map(|e| [e.a, e.b]).collect();
    RiskLabeling::build(nodes, seeds, &exposure)
}

/// Who stays home on the day after the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuarantinePolicy {
    None,
    InfectedOnly,
    /// Infected plus the `count` most-connected at-risk people.
    InfectedPlusAtRisk {
        count: usize,
    },
    /// Infected plus every at-risk person.
    AllExposed,
    Everyone,
    Explicit {
        persons: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    #[serde(flatten)]
    pub policy: QuarantinePolicy,
}

impl NamedPolicy {
    pub fn new(name: impl Into<String>, policy: QuarantinePolicy) -> Self {
        Self {
            name: name.into(),
            policy,
        }
    }

    /// Isolate the infected only, versus the infected plus three at-risk.
    pub fn standard_pair() -> Vec<NamedPolicy> {
        vec![
            NamedPolicy::new("case-i", QuarantinePolicy::InfectedOnly),
            NamedPolicy::new("case-ii", QuarantinePolicy::InfectedPlusAtRisk { count: 3 }),
        ]
    }
}

impl QuarantinePolicy {
    /// Person indices to isolate given the first day's outcome.
    pub fn resolve(
        &self,
        scenario: &Scenario,
        labels: &RiskLabeling,
        graph: &TemporalContactGraph,
    ) -> Result<BTreeSet<usize>, ScenarioError> {
        let n = scenario.people.len();
        let indices_with = |status: HealthStatus| -> BTreeSet<usize> {
            (0..n)
                .filter(|&i| labels.status(&scenario.people[i].id) == status)
                .collect()
        };
        let set = match self {
            QuarantinePolicy::None => BTreeSet::new(),
            QuarantinePolicy::InfectedOnly => indices_with(HealthStatus::Infected),
            QuarantinePolicy::InfectedPlusAtRisk { count } => {
                let mut ranked: Vec<usize> =
                    indices_with(HealthStatus::AtRisk).into_iter().collect();
                ranked.sort_by_key(|&i| {
                    let id = scenario.people[i].id;
                    let acq = labels.get(&id).and_then(|l| l.acquisition_step);
                    (std::cmp::Reverse(graph.degree(&id)), acq, i)
                });
                let mut set = indices_with(HealthStatus::Infected);
                set.extend(ranked.into_iter().take(*count));
                set
            }
            QuarantinePolicy::AllExposed => {
                let mut set = indices_with(HealthStatus::Infected);
                set.extend(indices_with(HealthStatus::AtRisk));
                set
            }
            QuarantinePolicy::Everyone => (0..n).collect(),
            QuarantinePolicy::Explicit { persons } => {
                if let Some(&index) = persons.iter().find(|&&i| i >= n) {
                    return Err(ScenarioError::UnknownPerson {
                        context: "quarantine policy".into(),
                        index,
                    });
                }
                persons.iter().copied().collect()
            }
        };
        Ok(set)
    }
}

/// Seeds for the scenario's initially infected people, exposed from minute 0.
pub fn scenario_seeds(scenario: &Scenario) -> Vec<Seed> {
    scenario
        .initially_infected()
        .into_iter()
        .map(|i| Seed {
            id: scenario.people[i].id,
            step: day_start(1),
        })
        .collect()
}

pub fn fresh_devices(scenario: &Scenario) -> Result<Vec<DeviceState>, SimError> {
    scenario
        .people
        .iter()
        .map(|p| DeviceState::new(p.id, scenario.d_limit_m).map_err(SimError::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FirstDay {
    pub devices: Vec<DeviceState>,
    pub events: Vec<ContactEvent>,
    pub graph: TemporalContactGraph,
    pub labels: RiskLabeling,
}

pub fn run_first_day(scenario: &Scenario, mode: LogMode) -> Result<FirstDay, SimError> {
    let mut devices = fresh_devices(scenario)?;
    let log = simulate_day(scenario, 1, &mut devices, mode)?;
    let mut graph = TemporalContactGraph::from_events(&log.events);
    for p in &scenario.people {
        graph.add_node(p.id);
    }
    let labels = propagate_risk(&graph, &scenario_seeds(scenario));
    Ok(FirstDay {
        devices,
        events: log.events,
        graph,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyOutcome {
    pub name: String,
    pub quarantined: Vec<usize>,
    /// People not at risk after the first day but at risk after the second.
    pub new_at_risk: Vec<usize>,
    pub second_day_recorded: u64,
    #[serde(skip)]
    pub second_day_events: Vec<ContactEvent>,
    #[serde(skip)]
    pub labels: RiskLabeling,
}

impl PolicyOutcome {
    pub fn new_at_risk_count(&self) -> usize {
        self.new_at_risk.len()
    }
}

/// Re-runs the second day once per policy, on top of a shared first day.
pub fn compare_policies_after(
    scenario: &Scenario,
    first: &FirstDay,
    policies: &[NamedPolicy],
    mode: LogMode,
) -> Result<Vec<PolicyOutcome>, SimError> {
    let seeds = scenario_seeds(scenario);
    policies
        .iter()
        .map(|named| {
            let isolate = named
                .policy
                .resolve(scenario, &first.labels, &first.graph)?;
            let mut day2 = scenario.clone();
            day2.quarantine.insert(2, isolate.clone());
            let mut devices = first.devices.clone();
            let log = simulate_day(&day2, 2, &mut devices, mode)?;
            let mut graph = first.graph.clone();
            graph.extend_events(&log.events);
            let labels = propagate_risk(&graph, &seeds);
            let new_at_risk = (0..scenario.people.len())
                .filter(|&i| {
                    let id = scenario.people[i].id;
                    first.labels.status(&id) == HealthStatus::NotAtRisk
                        && labels.status(&id) == HealthStatus::AtRisk
                })
                .collect();
            Ok(PolicyOutcome {
                name: named.name.clone(),
                quarantined: isolate.into_iter().collect(),
                new_at_risk,
                second_day_recorded: log.recorded,
                second_day_events: log.events,
                labels,
            })
        })
        .collect()
}

pub fn compare_policies(
    scenario: &Scenario,
    policies: &[NamedPolicy],
) -> Result<Vec<PolicyOutcome>, SimError> {
    let first = run_first_day(scenario, LogMode::All)?;
    compare_policies_after(scenario, &first, policies, LogMode::All)
}

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Drives the registry the way health workers would: flag the seeds, then keep
/// uploading each flagged device's contacts from its own exposure time onward
/// until no one's exposure time improves. `order_seed` shuffles which pending
/// device is processed next; the fixpoint does not depend on it.
///
/// Returns the exposure minute of everyone reached.
pub fn trace_through_registry(
    registry: &mut Registry,
    devices: &[DeviceState],
    seeds: &[Seed],
    auth: &AuthorityToken,
    now: SimMinute,
    order_seed: Option<u64>,
) -> Result<BTreeMap<AnonymousId, SimMinute>, ConvergenceError> {
    let by_id: BTreeMap<AnonymousId, &DeviceState> =
        devices.iter().map(|d| (d.own_id(), d)).collect();
    let mut exposure = seed_exposure(seeds);
    for id in exposure.keys() {
        registry.flag_infected(*id, auth, now)?;
    }
    let mut pending: Vec<AnonymousId> = exposure.keys().copied().collect();
    let mut queued: BTreeSet<AnonymousId> = pending.iter().copied().collect();
    let mut rng = order_seed.map(|s| keyed(s, Stream::Oracle, &[]));

    while !pending.is_empty() {
        let src = match rng.as_mut() {
            Some(r) => pending.swap_remove(r.random_range(0..pending.len())),
            None => pending.remove(0),
        };
        queued.remove(&src);
        let Some(dev) = by_id.get(&src) else { continue };
        let since = exposure[&src];
        let contacts = dev.contacts_since(since);
        registry.upload_contacts(src, &contacts, auth, now)?;
        for peer in contacts {
            let t = dev
                .sighting_at_or_after(&peer, since)
                .expect("contacts_since guarantees a sighting");
            if exposure.get(&peer).is_none_or(|&x| t < x) {
                exposure.insert(peer, t);
                if queued.insert(peer) {
                    pending.push(peer);
                }
            }
        }
    }
    Ok(exposure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(c: char) -> AnonymousId {
        AnonymousId::from_u128(c as u128)
    }

    fn graph(edges: &[(char, char, SimMinute)]) -> TemporalContactGraph {
        let mut g = TemporalContactGraph::new();
        for &(a, b, t) in edges {
            g.add_edge(id(a), id(b), t);
        }
        g
    }

    fn seed(c: char) -> Seed {
        Seed { id: id(c), step: 0 }
    }

    fn at_risk(t: SimMinute) -> Label {
        Label {
            status: HealthStatus::AtRisk,
            acquisition_step: Some(t),
        }
    }

    #[test]
    fn direct_contact() {
        let l = propagate_risk(&graph(&[('A', 'B', 3)]), &[seed('A')]);
        assert_eq!(l.get(&id('B')), Some(&at_risk(3)));
        assert_eq!(l.status(&id('A')), HealthStatus::Infected);
    }

    #[test]
    fn secondary_chain() {
        let l = propagate_risk(&graph(&[('A', 'B', 3), ('B', 'C', 5)]), &[seed('A')]);
        assert_eq!(l.get(&id('C')), Some(&at_risk(5)));
    }

    #[test]
    fn earlier_contact_does_not_chain() {
        let l = propagate_risk(&graph(&[('B', 'C', 2), ('A', 'B', 3)]), &[seed('A')]);
        assert_eq!(l.get(&id('B')), Some(&at_risk(3)));
        assert_eq!(l.get(&id('C')), Some(&Label::CLEAR));
    }

    #[test]
    fn same_step_chains() {
        let l = propagate_risk(&graph(&[('B', 'C', 4), ('A', 'B', 4)]), &[seed('A')]);
        assert_eq!(l.get(&id('C')), Some(&at_risk(4)));
    }

    #[test]
    fn unknown_seed_is_isolated_node() {
        let l = propagate_risk(&graph(&[('A', 'B', 1)]), &[seed('Z')]);
        assert_eq!(l.status(&id('Z')), HealthStatus::Infected);
        assert_eq!(l.status(&id('A')), HealthStatus::NotAtRisk);
        assert_eq!(l.0.len(), 3);
    }

    #[test]
    fn late_seed_does_not_spread_backwards() {
        let g = graph(&[('A', 'B', 2), ('A', 'C', 9)]);
        let l = propagate_risk(
            &g,
            &[Seed {
                id: id('A'),
                step: 5,
            }],
        );
        assert_eq!(l.status(&id('B')), HealthStatus::NotAtRisk);
        assert_eq!(l.get(&id('C')), Some(&at_risk(9)));
        assert_eq!(l.get(&id('A')).unwrap().acquisition_step, Some(5));
    }

    #[test]
    fn policies_resolve() {
        let s = Scenario::demo(3);
        let first = run_first_day(&s, LogMode::All).unwrap();
        let infected: BTreeSet<usize> = s.initially_infected().into_iter().collect();
        assert_eq!(
            QuarantinePolicy::InfectedOnly
                .resolve(&s, &first.labels, &first.graph)
                .unwrap(),
            infected
        );
        let plus = QuarantinePolicy::InfectedPlusAtRisk { count: 3 }
            .resolve(&s, &first.labels, &first.graph)
            .unwrap();
        let all = QuarantinePolicy::AllExposed
            .resolve(&s, &first.labels, &first.graph)
            .unwrap();
        assert!(infected.is_subset(&plus) && plus.is_subset(&all));
        let n_at_risk = first.labels.with_status(HealthStatus::AtRisk).len();
        assert_eq!(plus.len(), infected.len() + n_at_risk.min(3));
        assert!(QuarantinePolicy::Explicit { persons: vec![10] }
            .resolve(&s, &first.labels, &first.graph)
            .is_err());
    }
}

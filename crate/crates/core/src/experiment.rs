//! End-to-end runs: config in, simulation, tracing, registry, files out.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{load_scenario, parse_scenario, ConfigError, LoadError};
use crate::device::DeviceState;
use crate::id::AnonymousId;
use crate::mobility::{
    day_start, positions_at, simulate_day, ContactEvent, DayLog, LogMode, SimError, MINUTES_PER_DAY,
};
use crate::registry::{AuthorityToken, HealthStatus, Registry, RegistryError};
use crate::report::{self, ContactMatrix, ReportError, Snapshot};
use crate::rng::{keyed, Stream};
use crate::scenario::Scenario;
use crate::tracing::{
    compare_policies_after, fresh_devices, oracle_propagate, propagate_risk, run_first_day,
    scenario_seeds, trace_through_registry, ConvergenceError, PolicyOutcome, RiskLabeling, Seed,
    TemporalContactGraph,
};
use crate::SimMinute;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Report { path: PathBuf, source: ReportError },
    #[error("self-check failed: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// 2 config, 3 I/O, 4 failed self-check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Report { source, .. } => match source {
                ReportError::Io(_) => 3,
                _ => 2,
            },
            HarnessError::Invariant(_) => 4,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<LoadError> for HarnessError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { path, source } => HarnessError::Io {
                path: path.into(),
                source,
            },
            LoadError::Config(c) => c.into(),
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(s) => HarnessError::Config(format!("config: {s}")),
            other => HarnessError::Invariant(other.to_string()),
        }
    }
}

impl From<ConvergenceError> for HarnessError {
    fn from(e: ConvergenceError) -> Self {
        match e {
            ConvergenceError::Registry(RegistryError::Unauthorized) => {
                HarnessError::Config("config: registry rejected the configured authority".into())
            }
            other => HarnessError::Invariant(other.to_string()),
        }
    }
}

/// Result of simulating a scenario's configured days and tracing them.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub devices: Vec<DeviceState>,
    pub days: Vec<DayLog>,
    pub graph: TemporalContactGraph,
    pub labels: RiskLabeling,
    pub registry: Registry,
}

impl Simulation {
    pub fn events(&self) -> impl Iterator<Item = &ContactEvent> {
        self.days.iter().flat_map(|d| d.events.iter())
    }

    pub fn all_events(&self) -> Vec<ContactEvent> {
        self.events().cloned().collect()
    }
}

/// Simulates `scenario.days` days, labels everyone, and brings the registry to
/// its fixpoint by flagging the seeds and uploading device contacts.
pub fn simulate(scenario: &Scenario, mode: LogMode) -> Result<Simulation, HarnessError> {
    scenario
        .validate()
        .map_err(|e| HarnessError::Config(format!("config: {e}")))?;
    let mut devices = fresh_devices(scenario)?;
    let mut days = Vec::new();
    for day in 1..=scenario.days {
        days.push(simulate_day(scenario, day, &mut devices, mode)?);
    }
    let mut graph = TemporalContactGraph::from_events(days.iter().flat_map(|d| d.events.iter()));
    for p in &scenario.people {
        graph.add_node(p.id);
    }
    let seeds = scenario_seeds(scenario);
    let labels = propagate_risk(&graph, &seeds);

    let tokens: Vec<AuthorityToken> = scenario
        .authorities
        .iter()
        .map(|t| AuthorityToken::new(t.clone()))
        .collect();
    let mut registry = Registry::new(&tokens);
    for p in &scenario.people {
        registry.register(p.id);
    }
    let now = day_start(scenario.days) + MINUTES_PER_DAY;
    trace_through_registry(&mut registry, &devices, &seeds, &tokens[0], now, None)?;

    let sim = Simulation {
        devices,
        days,
        graph,
        labels,
        registry,
    };
    self_check(scenario, &sim)?;
    Ok(sim)
}

fn self_check(scenario: &Scenario, sim: &Simulation) -> Result<(), HarnessError> {
    let fail = |msg: String| Err(HarnessError::Invariant(msg));
    for p in &scenario.people {
        let (reg, lab) = (sim.registry.query_status(&p.id), sim.labels.status(&p.id));
        if reg != lab {
            return fail(format!(
                "registry says {reg} for {}, tracing says {lab}",
                p.id
            ));
        }
    }
    let index: BTreeMap<AnonymousId, usize> = scenario
        .people
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id, i))
        .collect();
    for ev in sim.events().filter(|e| e.recorded) {
        for (own, peer) in [(ev.a, ev.b), (ev.b, ev.a)] {
            let ok = sim.devices[index[&own]]
                .contact(&peer)
                .is_some_and(|r| r.first_contact <= ev.step);
            if !ok {
                return fail(format!(
                    "event at {} not reflected in device {own}",
                    ev.step
                ));
            }
        }
    }
    for log in &sim.days {
        let q = scenario.quarantined_on(log.day);
        let active = scenario.people.len() - q.len();
        let expected =
            crate::mobility::pair_count(active as u64) * scenario.schedule.steps_per_day() as u64;
        if log.pair_checks != expected {
            return fail(format!(
                "day {}: {} pair checks, expected {expected}",
                log.day, log.pair_checks
            ));
        }
        for ev in log.events.iter().filter(|e| e.recorded) {
            if q.contains(&index[&ev.a]) || q.contains(&index[&ev.b]) {
                return fail(format!(
                    "quarantined person in a recorded event on day {}",
                    log.day
                ));
            }
        }
    }
    if !ContactMatrix::from_devices(&sim.devices).is_symmetric() {
        return fail("contact matrix is not symmetric".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DaySummary {
    pub day: u32,
    pub pair_checks: u64,
    pub logged_events: usize,
    pub recorded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonStatus {
    pub index: usize,
    pub id: AnonymousId,
    pub initial: HealthStatus,
    pub status: HealthStatus,
    pub acquisition_step: Option<SimMinute>,
    pub registry_status: HealthStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub people: usize,
    pub initial_infected: Vec<usize>,
    pub days: Vec<DaySummary>,
    pub final_status: Vec<PersonStatus>,
    pub contact_matrix: ContactMatrix,
    pub policies: Vec<PolicyOutcome>,
}

impl ExperimentReport {
    pub fn count_with(&self, status: HealthStatus) -> usize {
        self.final_status
            .iter()
            .filter(|p| p.status == status)
            .count()
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_owned(),
        source,
    })
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), ReportError>,
) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|()| w.flush().map_err(ReportError::from))
        .map_err(|source| HarnessError::Report {
            path: path.to_owned(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_file(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn statuses_at(scenario: &Scenario, labels: &RiskLabeling, at: SimMinute) -> Vec<HealthStatus> {
    scenario
        .people
        .iter()
        .map(|p| match labels.get(&p.id) {
            Some(l) if l.acquisition_step.is_some_and(|t| t <= at) => l.status,
            _ => HealthStatus::NotAtRisk,
        })
        .collect()
}

fn snapshots(scenario: &Scenario, labels: &RiskLabeling, days: u32) -> Vec<Snapshot> {
    let mut out = Vec::new();
    for day in 1..=days {
        for (minute, what) in [
            (10 * 60, "work 10:00"),
            (18 * 60 + 30, "community 18:30"),
            (22 * 60, "residential 22:00"),
        ] {
            let at = day_start(day) + minute;
            out.push(Snapshot {
                title: format!("Day-{day} {what}"),
                positions: positions_at(scenario, day, minute),
                statuses: statuses_at(scenario, labels, at),
            });
        }
    }
    out
}

pub fn write_simulation(
    scenario: &Scenario,
    sim: &Simulation,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    create_dir(out_dir)?;
    let events = sim.all_events();
    write_file(&out_dir.join("events.csv"), |w| {
        report::write_events(w, &events)
    })?;
    write_file(&out_dir.join("devices.csv"), |w| {
        report::write_device_dump(w, &sim.devices)
    })?;
    write_file(&out_dir.join("registry.csv"), |w| {
        sim.registry
            .write_snapshot(w)
            .map_err(|e| ReportError::Malformed {
                what: "registry snapshot",
                detail: e.to_string(),
            })
    })?;
    write_file(&out_dir.join("labels.csv"), |w| {
        report::write_labeling(w, &sim.labels)
    })?;
    let matrix = ContactMatrix::from_devices(&sim.devices);
    write_file(&out_dir.join("contact_matrix.csv"), |w| matrix.write_csv(w))?;
    let final_statuses: Vec<HealthStatus> = scenario
        .people
        .iter()
        .map(|p| sim.labels.status(&p.id))
        .collect();
    write_text(
        &out_dir.join("contact_matrix.svg"),
        &matrix.to_svg(&final_statuses),
    )?;
    write_text(
        &out_dir.join("snapshots.svg"),
        &report::snapshots_svg(
            &scenario.zones,
            &snapshots(scenario, &sim.labels, scenario.days),
        ),
    )?;
    Ok(())
}

pub fn experiment_report(
    scenario: &Scenario,
    sim: &Simulation,
    policies: Vec<PolicyOutcome>,
) -> ExperimentReport {
    ExperimentReport {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        people: scenario.people.len(),
        initial_infected: scenario.initially_infected(),
        days: sim
            .days
            .iter()
            .map(|d| DaySummary {
                day: d.day,
                pair_checks: d.pair_checks,
                logged_events: d.events.len(),
                recorded: d.recorded,
            })
            .collect(),
        final_status: scenario
            .people
            .iter()
            .enumerate()
            .map(|(index, p)| {
                let label = sim.labels.get(&p.id);
                PersonStatus {
                    index,
                    id: p.id,
                    initial: p.initial_status,
                    status: sim.labels.status(&p.id),
                    acquisition_step: label.and_then(|l| l.acquisition_step),
                    registry_status: sim.registry.query_status(&p.id),
                }
            })
            .collect(),
        contact_matrix: ContactMatrix::from_devices(&sim.devices),
        policies,
    }
}

/// `simulate` subcommand on an already-parsed scenario.
pub fn run_experiment_scenario(
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<ExperimentReport, HarnessError> {
    let sim = simulate(scenario, LogMode::All)?;
    let policies = if scenario.case_study.is_empty() {
        Vec::new()
    } else {
        let first = run_first_day(scenario, LogMode::RecordedOnly)?;
        compare_policies_after(
            scenario,
            &first,
            &scenario.case_study,
            LogMode::RecordedOnly,
        )?
    };
    write_simulation(scenario, &sim, out_dir)?;
    let report = experiment_report(scenario, &sim, policies);
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn run_experiment(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<ExperimentReport, HarnessError> {
    let scenario = load_scenario(config_path, seed_override)?;
    run_experiment_scenario(&scenario, out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub initial_infected: Vec<usize>,
    pub day1_at_risk: Vec<usize>,
    pub policies: Vec<PolicyOutcome>,
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run_case_study_scenario(
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<CaseStudyReport, HarnessError> {
    if scenario.case_study.is_empty() {
        return Err(HarnessError::Config(
            "config: case study needs at least one [[case_study.policies]] entry".into(),
        ));
    }
    let first = run_first_day(scenario, LogMode::All)?;
    let outcomes = compare_policies_after(scenario, &first, &scenario.case_study, LogMode::All)?;

    create_dir(out_dir)?;
    write_file(&out_dir.join("day1_events.csv"), |w| {
        report::write_events(w, &first.events)
    })?;
    write_file(&out_dir.join("day1_devices.csv"), |w| {
        report::write_device_dump(w, &first.devices)
    })?;
    write_file(&out_dir.join("day1_labels.csv"), |w| {
        report::write_labeling(w, &first.labels)
    })?;
    for o in &outcomes {
        let stem = file_safe(&o.name);
        write_file(&out_dir.join(format!("{stem}_day2_events.csv")), |w| {
            report::write_events(w, &o.second_day_events)
        })?;
        write_file(&out_dir.join(format!("{stem}_labels.csv")), |w| {
            report::write_labeling(w, &o.labels)
        })?;
    }
    write_file(&out_dir.join("case_study.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["policy", "quarantined", "new_at_risk_count", "new_at_risk"])?;
        for o in &outcomes {
            let join = |v: &[usize]| {
                v.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            csv.write_record([
                o.name.clone(),
                join(&o.quarantined),
                o.new_at_risk_count().to_string(),
                join(&o.new_at_risk),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let day1_at_risk = scenario
        .people
        .iter()
        .enumerate()
        .filter(|(_, p)| first.labels.status(&p.id) == HealthStatus::AtRisk)
        .map(|(i, _)| i)
        .collect();
    let report = CaseStudyReport {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        initial_infected: scenario.initially_infected(),
        day1_at_risk,
        policies: outcomes,
    };
    write_json(&out_dir.join("case_study.json"), &report)?;
    Ok(report)
}

pub fn run_case_study(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CaseStudyReport, HarnessError> {
    let scenario = load_scenario(config_path, seed_override)?;
    run_case_study_scenario(&scenario, out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub day1_at_risk: usize,
    /// New at-risk count per policy, in configured order.
    pub new_at_risk: Vec<usize>,
}

/// Runs the case study for every seed in `seeds` (in parallel), returning rows
/// in seed order.
pub fn case_study_sweep(config_text: &str, seeds: &[u64]) -> Result<Vec<SweepRow>, HarnessError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let scenario = parse_scenario(config_text, Some(seed))?;
            if scenario.case_study.is_empty() {
                return Err(HarnessError::Config(
                    "config: case study needs at least one [[case_study.policies]] entry".into(),
                ));
            }
            let first = run_first_day(&scenario, LogMode::RecordedOnly)?;
            let outcomes = compare_policies_after(
                &scenario,
                &first,
                &scenario.case_study,
                LogMode::RecordedOnly,
            )?;
            Ok(SweepRow {
                seed,
                day1_at_risk: first.labels.with_status(HealthStatus::AtRisk).len(),
                new_at_risk: outcomes
                    .iter()
                    .map(PolicyOutcome::new_at_risk_count)
                    .collect(),
            })
        })
        .collect()
}

/// Simulates the configured days and returns the converged registry.
pub fn registry_for(scenario: &Scenario) -> Result<Registry, HarnessError> {
    Ok(simulate(scenario, LogMode::RecordedOnly)?.registry)
}

pub fn registry_dump(
    config_path: &Path,
    out_path: &Path,
    seed_override: Option<u64>,
) -> Result<Registry, HarnessError> {
    let scenario = load_scenario(config_path, seed_override)?;
    let registry = registry_for(&scenario)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(out_path, |w| {
        registry
            .write_snapshot(w)
            .map_err(|e| ReportError::Malformed {
                what: "registry snapshot",
                detail: e.to_string(),
            })
    })?;
    Ok(registry)
}

/// Labels from an event-log CSV; seeds are infected from minute 0.
pub fn trace_file(events_path: &Path, seeds: &[AnonymousId]) -> Result<RiskLabeling, HarnessError> {
    let file = File::open(events_path).map_err(|source| HarnessError::Io {
        path: events_path.to_owned(),
        source,
    })?;
    let events = report::read_events(std::io::BufReader::new(file)).map_err(|source| {
        HarnessError::Report {
            path: events_path.to_owned(),
            source,
        }
    })?;
    let graph = TemporalContactGraph::from_events(&events);
    let seeds: Vec<Seed> = seeds.iter().map(|&id| Seed { id, step: 0 }).collect();
    Ok(propagate_risk(&graph, &seeds))
}

/// A random small tracing instance: up to `max_nodes` people, steps in
/// `0..max_steps`, each step carrying a few recorded and unrecorded contacts.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_nodes: usize,
    max_steps: u32,
) -> (Vec<ContactEvent>, Vec<Seed>) {
    let n = rng.random_range(2..=max_nodes.max(2));
    let ids: Vec<AnonymousId> = (0..n).map(|_| AnonymousId::random(rng)).collect();
    let n_events = rng.random_range(0..=3 * n);
    let mut events: Vec<ContactEvent> = (0..n_events)
        .map(|_| {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            let (a, b) = if ids[i] < ids[j] {
                (ids[i], ids[j])
            } else {
                (ids[j], ids[i])
            };
            ContactEvent {
                step: rng.random_range(0..max_steps.max(1)),
                a,
                b,
                true_distance: 1.0,
                walls_crossed: 0,
                rssi: -40.0,
                estimated_distance: 1.0,
                recorded: rng.random_bool(0.8),
            }
        })
        .collect();
    events.sort_by_key(|e| (e.step, e.a, e.b));
    let n_seeds = rng.random_range(1..=2.min(n));
    let seeds = rand::seq::index::sample(rng, n, n_seeds)
        .into_iter()
        .map(|i| Seed {
            id: ids[i],
            step: if rng.random_bool(0.8) {
                0
            } else {
                rng.random_range(0..max_steps.max(1))
            },
        })
        .collect();
    (events, seeds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleSummary {
    pub cases: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<usize>,
}

/// Differential check of the graph engine against the replay oracle.
pub fn oracle_check(cases: usize, seed: u64, max_nodes: usize, max_steps: u32) -> OracleSummary {
    let mismatched: Vec<usize> = (0..cases)
        .into_par_iter()
        .filter(|&case| {
            let mut rng = keyed(seed, Stream::Oracle, &[case as u64]);
            let (events, seeds) = random_instance(&mut rng, max_nodes, max_steps);
            let graph = TemporalContactGraph::from_events(&events);
            propagate_risk(&graph, &seeds) != oracle_propagate(&events, &seeds)
        })
        .collect();
    OracleSummary {
        cases,
        mismatches: mismatched.len(),
        first_mismatch: mismatched.first().copied(),
    }
}

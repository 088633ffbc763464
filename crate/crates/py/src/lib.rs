//! Python module `ctdsim_py`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ctdsim::experiment::{self, HarnessError};
use ctdsim::mobility::{pair_count as pairs, segment_for_time as segment, DaySegment};
use ctdsim::tracing::{compare_policies, NamedPolicy};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_id(s: &str) -> PyResult<ctdsim::AnonymousId> {
    s.parse().map_err(value_err)
}

fn radio(
    path_loss_exponent: f64,
    system_constant_dbm: f64,
    wall_attenuation_db: f64,
) -> ctdsim::RadioParams {
    ctdsim::RadioParams {
        path_loss_exponent,
        system_constant_dbm,
        wall_attenuation_db,
        ..Default::default()
    }
}

#[pyfunction]
#[pyo3(signature = (d, walls=0, noise=0.0, path_loss_exponent=2.0, system_constant_dbm=-40.0, wall_attenuation_db=15.0))]
fn rssi_from_distance(
    d: f64,
    walls: u32,
    noise: f64,
    path_loss_exponent: f64,
    system_constant_dbm: f64,
    wall_attenuation_db: f64,
) -> PyResult<f64> {
    let p = radio(path_loss_exponent, system_constant_dbm, wall_attenuation_db);
    ctdsim::rssi_from_distance(d, walls, &p, noise).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (rssi, path_loss_exponent=2.0, system_constant_dbm=-40.0))]
fn distance_from_rssi(
    rssi: f64,
    path_loss_exponent: f64,
    system_constant_dbm: f64,
) -> PyResult<f64> {
    let p = radio(path_loss_exponent, system_constant_dbm, 15.0);
    ctdsim::distance_from_rssi(rssi, &p).map_err(value_err)
}

#[pyfunction]
fn pair_count(n: u64) -> u64 {
    pairs(n)
}

/// "work", "community" or "residential".
#[pyfunction]
fn segment_for_time(minute_of_day: u32) -> PyResult<&'static str> {
    Ok(match segment(minute_of_day).map_err(value_err)? {
        DaySegment::Work => "work",
        DaySegment::Community => "community",
        DaySegment::Residential => "residential",
    })
}

/// Returns `(cases, mismatches)`.
#[pyfunction]
#[pyo3(signature = (cases=200, seed=0, max_nodes=12, max_steps=50))]
fn oracle_check(cases: usize, seed: u64, max_nodes: usize, max_steps: u32) -> (usize, usize) {
    let s = experiment::oracle_check(cases, seed, max_nodes, max_steps);
    (s.cases, s.mismatches)
}

#[pyclass(name = "Device")]
struct PyDevice(ctdsim::DeviceState);

#[pymethods]
impl PyDevice {
    #[new]
    #[pyo3(signature = (own_id, d_limit_m=1.83))]
    fn new(own_id: &str, d_limit_m: f64) -> PyResult<Self> {
        ctdsim::DeviceState::new(parse_id(own_id)?, d_limit_m)
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn own_id(&self) -> String {
        self.0.own_id().to_string()
    }

    /// True when the beacon was close enough to record.
    fn on_beacon(&mut self, peer: &str, rssi: f64, now: u32) -> PyResult<bool> {
        self.0
            .on_beacon(parse_id(peer)?, rssi, now, &Default::default())
            .map_err(value_err)
    }

    fn contact_count(&self) -> usize {
        self.0.contact_count()
    }

    /// `(peer, first_contact, encounter_count)` rows.
    fn contacts(&self) -> Vec<(String, u32, u32)> {
        self.0
            .export_contacts()
            .into_iter()
            .map(|r| (r.peer.to_string(), r.first_contact, r.encounter_count))
            .collect()
    }
}

#[pyclass(name = "Registry")]
struct PyRegistry(ctdsim::Registry);

#[pymethods]
impl PyRegistry {
    #[new]
    fn new(authorities: Vec<String>) -> Self {
        let tokens: Vec<ctdsim::AuthorityToken> = authorities
            .into_iter()
            .map(ctdsim::AuthorityToken::new)
            .collect();
        Self(ctdsim::Registry::new(&tokens))
    }

    fn register(&mut self, id: &str) -> PyResult<()> {
        self.0.register(parse_id(id)?);
        Ok(())
    }

    fn flag_infected(&mut self, id: &str, token: &str, now: u32) -> PyResult<()> {
        let tok = ctdsim::AuthorityToken::new(token);
        self.0
            .flag_infected(parse_id(id)?, &tok, now)
            .map_err(value_err)
    }

    /// Returns the ids newly marked at risk.
    fn upload_contacts(
        &mut self,
        source: &str,
        contacts: Vec<String>,
        token: &str,
        now: u32,
    ) -> PyResult<Vec<String>> {
        let tok = ctdsim::AuthorityToken::new(token);
        let ids = contacts
            .iter()
            .map(|c| parse_id(c))
            .collect::<PyResult<Vec<_>>>()?;
        let raised = self
            .0
            .upload_contacts(parse_id(source)?, &ids, &tok, now)
            .map_err(value_err)?;
        Ok(raised.into_iter().map(|i| i.to_string()).collect())
    }

    fn status(&self, id: &str) -> PyResult<&'static str> {
        Ok(self.0.query_status(&parse_id(id)?).as_str())
    }
}

type EventRow = (u32, String, String, f64);

#[pyclass(name = "Scenario")]
struct PyScenario(ctdsim::Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (text, seed=None))]
    fn from_toml(text: &str, seed: Option<u64>) -> PyResult<Self> {
        ctdsim::config::parse_scenario(text, seed)
            .map(Self)
            .map_err(value_err)
    }

    /// Ten people, two infected, the two standard isolation policies.
    #[staticmethod]
    fn demo(seed: u64) -> Self {
        Self(ctdsim::Scenario::demo(seed))
    }

    #[staticmethod]
    fn generated(seed: u64, people: usize, infected: usize) -> PyResult<Self> {
        ctdsim::Scenario::generated(seed, people, infected)
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.0.people.iter().map(|p| p.id.to_string()).collect()
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    /// Runs every configured day. Returns `(recorded_events, statuses)` where
    /// events are `(step, id_a, id_b, estimated_distance_m)` and statuses map
    /// id to status after tracing.
    fn simulate(&self) -> PyResult<(Vec<EventRow>, BTreeMap<String, String>)> {
        let sim =
            experiment::simulate(&self.0, ctdsim::LogMode::RecordedOnly).map_err(harness_err)?;
        let events = sim
            .events()
            .map(|e| {
                (
                    e.step,
                    e.a.to_string(),
                    e.b.to_string(),
                    e.estimated_distance,
                )
            })
            .collect();
        let statuses = self
            .0
            .people
            .iter()
            .map(|p| {
                (
                    p.id.to_string(),
                    sim.labels.status(&p.id).as_str().to_owned(),
                )
            })
            .collect();
        Ok((events, statuses))
    }

    /// `{policy name: new at-risk count}` for the configured policies, or the
    /// standard pair when none are configured.
    fn case_study(&self) -> PyResult<BTreeMap<String, usize>> {
        let policies = if self.0.case_study.is_empty() {
            NamedPolicy::standard_pair()
        } else {
            self.0.case_study.clone()
        };
        let out = compare_policies(&self.0, &policies).map_err(value_err)?;
        Ok(out
            .iter()
            .map(|o| (o.name.clone(), o.new_at_risk_count()))
            .collect())
    }
}

/// Same as `harness simulate`; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None))]
fn run_experiment(config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<String> {
    let report = experiment::run_experiment(&config, &out, seed).map_err(harness_err)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

#[pymodule]
fn ctdsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rssi_from_distance, m)?)?;
    m.add_function(wrap_pyfunction!(distance_from_rssi, m)?)?;
    m.add_function(wrap_pyfunction!(pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(segment_for_time, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyDevice>()?;
    m.add_class::<PyRegistry>()?;
    m.add_class::<PyScenario>()?;
    Ok(())
}

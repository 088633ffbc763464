//! Resolved simulation scenario and the generated default map.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::DEFAULT_D_LIMIT_M;
use crate::geometry::Rect;
use crate::id::AnonymousId;
use crate::mobility::{Person, Schedule, Zone, ZoneKind};
use crate::radio::{RadioError, RadioParams};
use crate::registry::HealthStatus;
use crate::rng::{keyed, Stream};
use crate::tracing::{NamedPolicy, QuarantinePolicy};

pub const DEFAULT_AUTHORITY: &str = "local-health-authority";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("duplicate anonymous id {0}")]
    DuplicateId(AnonymousId),
    #[error("zone {index} (`{name}`): {reason}")]
    Zone {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("person {person}: {reason}")]
    PersonZone { person: usize, reason: String },
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("d_limit_m must be finite and > 0, got {0}")]
    InvalidLimit(f64),
    #[error("schedule.step_minutes must be in 1..=1440, got {0}")]
    InvalidStep(u32),
    #[error("{context} references unknown person {index}")]
    UnknownPerson { context: String, index: usize },
    #[error("cannot pick {requested} initial infected among {people} people")]
    InfectedCount { requested: usize, people: usize },
    #[error("days must be >= 1")]
    NoDays,
    #[error("at least one authority token is required")]
    NoAuthority,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub seed: u64,
    pub d_limit_m: f64,
    pub radio: RadioParams,
    pub schedule: Schedule,
    pub zones: Vec<Zone>,
    pub people: Vec<Person>,
    /// Days simulated by a plain experiment run.
    pub days: u32,
    /// Day number (1-based) to quarantined person indices.
    pub quarantine: BTreeMap<u32, BTreeSet<usize>>,
    pub authorities: Vec<String>,
    pub case_study: Vec<NamedPolicy>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.radio.validate()?;
        if !self.d_limit_m.is_finite() || self.d_limit_m <= 0.0 {
            return Err(ScenarioError::InvalidLimit(self.d_limit_m));
        }
        if !(1..=1440).contains(&self.schedule.step_minutes) {
            return Err(ScenarioError::InvalidStep(self.schedule.step_minutes));
        }
        if self.days == 0 {
            return Err(ScenarioError::NoDays);
        }
        if self.authorities.is_empty() {
            return Err(ScenarioError::NoAuthority);
        }
        for (index, z) in self.zones.iter().enumerate() {
            if !z.bounds.is_well_formed() {
                return Err(ScenarioError::Zone {
                    index,
                    name: z.name.clone(),
                    reason: "bounds must be finite with positive width and height".into(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, p) in self.people.iter().enumerate() {
            if !seen.insert(p.id) {
                return Err(ScenarioError::DuplicateId(p.id));
            }
            if p.position
                .is_some_and(|q| !(q.x.is_finite() && q.y.is_finite()))
            {
                return Err(ScenarioError::PersonZone {
                    person: i,
                    reason: "position must be finite".into(),
                });
            }
            for (role, idx, kind) in [
                ("workplace", p.workplace, ZoneKind::Work),
                ("residence", p.residence, ZoneKind::Residential),
                ("community", p.community, ZoneKind::Community),
            ] {
                match self.zones.get(idx) {
                    None => {
                        return Err(ScenarioError::PersonZone {
                            person: i,
                            reason: format!("{role} zone index {idx} does not exist"),
                        })
                    }
                    Some(z) if z.kind != kind => {
                        return Err(ScenarioError::PersonZone {
                            person: i,
                            reason: format!("{role} `{}` is a {:?} zone", z.name, z.kind),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let n = self.people.len();
        for (day, set) in &self.quarantine {
            if let Some(&index) = set.iter().find(|&&i| i >= n) {
                return Err(ScenarioError::UnknownPerson {
                    context: format!("quarantine for day {day}"),
                    index,
                });
            }
        }
        for named in &self.case_study {
            if let QuarantinePolicy::Explicit { persons } = &named.policy {
                if let Some(&index) = persons.iter().find(|&&i| i >= n) {
                    return Err(ScenarioError::UnknownPerson {
                        context: format!("policy `{}`", named.name),
                        index,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn quarantined_on(&self, day: u32) -> BTreeSet<usize> {
        self.quarantine.get(&day).cloned().unwrap_or_default()
    }

    pub fn initially_infected(&self) -> Vec<usize> {
        self.people
            .iter()
            .enumerate()
            .filter(|(_, p)| p.initial_status == HealthStatus::Infected)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn index_of(&self, id: &AnonymousId) -> Option<usize> {
        self.people.iter().position(|p| &p.id == id)
    }

    /// SHA-256 over the canonical JSON form; insensitive to how the config
    /// text was laid out.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Default map, `n_people` generated people and `initial_infected` of them
    /// picked at random.
    pub fn generated(
        seed: u64,
        n_people: usize,
        initial_infected: usize,
    ) -> Result<Self, ScenarioError> {
        let layout = DefaultLayout::for_population(n_people);
        let people = layout.assign(seed, n_people, initial_infected)?;
        let scenario = Self {
            seed,
            d_limit_m: DEFAULT_D_LIMIT_M,
            radio: RadioParams::default(),
            schedule: Schedule::default(),
            zones: layout.zones,
            people,
            days: 1,
            quarantine: BTreeMap::new(),
            authorities: vec![DEFAULT_AUTHORITY.to_owned()],
            case_study: Vec::new(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Ten people, two of them infected at random, with the two standard
    /// isolation policies as the case study.
    pub fn demo(seed: u64) -> Self {
        let mut s = Self::generated(seed, 10, 2).expect("default scenario is valid");
        s.case_study = NamedPolicy::standard_pair();
        s
    }
}

/// One 128-bit token per person, keyed by seed and index.
pub fn generate_ids(seed: u64, n: usize) -> Result<Vec<AnonymousId>, ScenarioError> {
    let mut seen = BTreeSet::new();
    (0..n)
        .map(|i| {
            let id = AnonymousId::random(&mut keyed(seed, Stream::Ids, &[i as u64]));
            if seen.insert(id) {
                Ok(id)
            } else {
                Err(ScenarioError::DuplicateId(id))
            }
        })
        .collect()
}

/// `k` distinct person indices, ascending.
pub fn choose_infected(seed: u64, n: usize, k: usize) -> Result<Vec<usize>, ScenarioError> {
    if k > n {
        return Err(ScenarioError::InfectedCount {
            requested: k,
            people: n,
        });
    }
    let mut rng = keyed(seed, Stream::InitialInfected, &[n as u64, k as u64]);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Generated map: a row of offices, then the community area and an unused
/// "other" zone, then a grid of homes. Buildings are separated by open gaps so
/// no two share a wall.
#[derive(Debug, Clone)]
pub struct DefaultLayout {
    pub zones: Vec<Zone>,
    pub offices: Vec<usize>,
    pub homes: Vec<usize>,
    pub community: usize,
}

pub const PEOPLE_PER_HOME: usize = 2;
pub const PEOPLE_PER_OFFICE: usize = 5;
const OFFICE_W: f64 = 80.0;
const OFFICE_H: f64 = 60.0;
const HOME_W: f64 = 50.0;
const HOME_H: f64 = 40.0;
const COMMUNITY_AREA_PER_PERSON: f64 = 480.0;
const GAP: f64 = 5.0;
const ROW_LEN: usize = 10;

impl DefaultLayout {
    pub fn for_population(n: usize) -> Self {
        let n_offices = n.div_ceil(PEOPLE_PER_OFFICE).max(1);
        let n_homes = n.div_ceil(PEOPLE_PER_HOME).max(1);
        let mut zones = Vec::new();
        let mut y = 0.0;

        let mut offices = Vec::new();
        for row in 0..n_offices.div_ceil(ROW_LEN) {
            for col in 0..ROW_LEN.min(n_offices - row * ROW_LEN) {
                offices.push(zones.len());
                let x = col as f64 * (OFFICE_W + GAP);
                zones.push(Zone::new(
                    format!("office-{}", offices.len()),
                    ZoneKind::Work,
                    Rect::new(x, y, OFFICE_W, OFFICE_H),
                ));
            }
            y += OFFICE_H + GAP;
        }

        // 3:2 aspect
        let area = COMMUNITY_AREA_PER_PERSON * n.max(10) as f64;
        let ch = (area / 1.5).sqrt();
        let cw = 1.5 * ch;
        let community = zones.len();
        zones.push(Zone::new(
            "community",
            ZoneKind::Community,
            Rect::new(0.0, y, cw, ch),
        ));
        zones.push(Zone::new(
            "other",
            ZoneKind::Other,
            Rect::new(cw + GAP, y, 20.0, 20.0),
        ));
        y += ch + GAP;

        let mut homes = Vec::new();
        for row in 0..n_homes.div_ceil(ROW_LEN) {
            for col in 0..ROW_LEN.min(n_homes - row * ROW_LEN) {
                homes.push(zones.len());
                let x = col as f64 * (HOME_W + GAP);
                zones.push(Zone::new(
                    format!("home-{}", homes.len()),
                    ZoneKind::Residential,
                    Rect::new(x, y, HOME_W, HOME_H),
                ));
            }
            y += HOME_H + GAP;
        }

        Self {
            zones,
            offices,
            homes,
            community,
        }
    }

    /// Person `i` lives in home `i / 2` and works in office `i % offices`, so
    /// housemates do not share a workplace.
    pub fn assign(
        &self,
        seed: u64,
        n: usize,
        initial_infected: usize,
    ) -> Result<Vec<Person>, ScenarioError> {
        let ids = generate_ids(seed, n)?;
        let infected: BTreeSet<usize> = choose_infected(seed, n, initial_infected)?
            .into_iter()
            .collect();
        Ok(ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| Person {
                id,
                workplace: self.offices[i % self.offices.len()],
                residence: self.homes[(i / PEOPLE_PER_HOME) % self.homes.len()],
                community: self.community,
                initial_status: if infected.contains(&i) {
                    HealthStatus::Infected
                } else {
                    HealthStatus::NotAtRisk
                },
                position: None,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_has_two_infected() {
        for seed in 0..20 {
            let s = Scenario::demo(seed);
            assert_eq!(s.people.len(), 10);
            assert_eq!(s.initially_infected().len(), 2);
            s.validate().unwrap();
        }
    }

    #[test]
    fn layout_zones_do_not_overlap() {
        for n in [0, 1, 10, 37, 1000] {
            let layout = DefaultLayout::for_population(n);
            for (i, a) in layout.zones.iter().enumerate() {
                for b in &layout.zones[i + 1..] {
                    let (ra, rb) = (a.bounds, b.bounds);
                    let apart = ra.max_x() < rb.x
                        || rb.max_x() < ra.x
                        || ra.max_y() < rb.y
                        || rb.max_y() < ra.y;
                    assert!(apart, "{} overlaps {}", a.name, b.name);
                }
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = Scenario::demo(1);
        s.people[3].id = s.people[4].id;
        assert_eq!(
            s.validate(),
            Err(ScenarioError::DuplicateId(s.people[4].id))
        );
    }

    #[test]
    fn wrong_zone_kind_rejected() {
        let mut s = Scenario::demo(1);
        s.people[0].workplace = s.people[0].residence;
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::PersonZone { person: 0, .. })
        ));
    }

    #[test]
    fn quarantine_must_reference_people() {
        let mut s = Scenario::demo(1);
        s.quarantine.insert(2, [10].into());
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::UnknownPerson { index: 10, .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Scenario::demo(5);
        assert_eq!(a.hash(), Scenario::demo(5).hash());
        assert_ne!(a.hash(), Scenario::demo(6).hash());
        let mut b = a.clone();
        b.d_limit_m = 2.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn too_many_infected() {
        assert!(matches!(
            Scenario::generated(0, 3, 4),
            Err(ScenarioError::InfectedCount { .. })
        ));
    }
}

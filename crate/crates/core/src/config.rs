//! Scenario config files (TOML, `schema = 1`).
//!
//! ```toml
//! schema = 1
//! seed = 7
//! d_limit_m = 1.83
//! people = 10            # or an explicit [[people]] list
//! initial_infected = 2
//!
//! [radio]
//! path_loss_exponent = 2.0
//! system_constant_dbm = -40.0
//! noise_sigma_db = 0.0
//! wall_attenuation_db = 15.0
//! min_distance_m = 0.01
//!
//! [schedule]
//! step_minutes = 5
//!
//! [[quarantine]]
//! day = 2
//! persons = [0, 3]
//!
//! [[case_study.policies]]
//! name = "case-i"
//! kind = "infected_only"
//! ```
//!
//! An explicit person looks like
//!
//! ```toml
//! [[people]]
//! id = "0000000000000000000000000000beef"   # optional
//! workplace = "lab"
//! residence = "flat"
//! community = "plaza"                       # optional, first community zone
//! status = "infected"                       # optional, not_at_risk
//! position = [1.5, 0.5]                     # optional, stands still
//! ```
//!
//! Without `[[zones]]` the generated default map is used. Every error carries
//! the 1-based line of the offending entry when one can be pinned down.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::Deserialize;
use toml::Spanned;

use crate::device::DEFAULT_D_LIMIT_M;
use crate::geometry::{Point, Rect};
use crate::id::AnonymousId;
use crate::mobility::{Person, Schedule, Zone, ZoneKind};
use crate::radio::RadioParams;
use crate::registry::HealthStatus;
use crate::scenario::{
    choose_infected, generate_ids, DefaultLayout, Scenario, ScenarioError, DEFAULT_AUTHORITY,
    PEOPLE_PER_HOME,
};
use crate::tracing::NamedPolicy;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: Spanned<i64>,
    seed: u64,
    #[serde(default)]
    d_limit_m: Option<Spanned<f64>>,
    #[serde(default)]
    days: Option<Spanned<u32>>,
    #[serde(default)]
    initial_infected: Option<Spanned<usize>>,
    #[serde(default)]
    people: Option<Spanned<PeopleSpec>>,
    #[serde(default)]
    authorities: Option<Spanned<Vec<String>>>,
    #[serde(default)]
    radio: Option<Spanned<RadioParams>>,
    #[serde(default)]
    schedule: Option<Spanned<Schedule>>,
    #[serde(default)]
    zones: Vec<Spanned<ZoneSpec>>,
    #[serde(default)]
    quarantine: Vec<Spanned<QuarantineSpec>>,
    #[serde(default)]
    case_study: Option<Spanned<CaseStudySpec>>,
}

#[derive(Debug)]
enum PeopleSpec {
    Count(usize),
    List(Vec<Spanned<PersonSpec>>),
}

impl<'de> Deserialize<'de> for PeopleSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PeopleVisitor;

        impl<'de> Visitor<'de> for PeopleVisitor {
            type Value = PeopleSpec;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a person count or an array of person tables")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<PeopleSpec, E> {
                usize::try_from(v)
                    .map(PeopleSpec::Count)
                    .map_err(|_| E::custom("person count must be >= 0"))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<PeopleSpec, E> {
                usize::try_from(v)
                    .map(PeopleSpec::Count)
                    .map_err(|_| E::custom("person count too large"))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<PeopleSpec, A::Error> {
                let mut out = Vec::new();
                while let Some(p) = seq.next_element()? {
                    out.push(p);
                }
                Ok(PeopleSpec::List(out))
            }
        }

        deserializer.deserialize_any(PeopleVisitor)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonSpec {
    #[serde(default)]
    id: Option<AnonymousId>,
    workplace: String,
    residence: String,
    #[serde(default)]
    community: Option<String>,
    #[serde(default)]
    status: HealthStatus,
    #[serde(default)]
    position: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneSpec {
    name: String,
    kind: ZoneKind,
    x: f64,
    y: f64,
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuarantineSpec {
    day: u32,
    persons: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseStudySpec {
    policies: Vec<NamedPolicy>,
}

struct Anchors<'a> {
    text: &'a str,
}

impl Anchors<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err<T>(
        &self,
        span: Option<Range<usize>>,
        message: impl Into<String>,
    ) -> Result<T, ConfigError> {
        Err(ConfigError {
            line: span.map(|s| self.line(s)),
            message: message.into(),
        })
    }
}

/// Parses and validates config text. `seed_override` replaces the file's seed
/// before anything random is derived from it.
pub fn parse_scenario(text: &str, seed_override: Option<u64>) -> Result<Scenario, ConfigError> {
    let anchors = Anchors { text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| anchors.line(s)),
        message: e.message().to_owned(),
    })?;

    if *raw.schema.get_ref() != SCHEMA_VERSION {
        return anchors.err(
            Some(raw.schema.span()),
            format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                raw.schema.get_ref()
            ),
        );
    }
    let seed = seed_override.unwrap_or(raw.seed);

    let people_spec: Option<(Range<usize>, &PeopleSpec)> =
        raw.people.as_ref().map(|p| (p.span(), p.get_ref()));
    let n_people = match people_spec.clone() {
        None => 0,
        Some((_, PeopleSpec::Count(n))) => *n,
        Some((_, PeopleSpec::List(list))) => list.len(),
    };

    let (zones, people) = if raw.zones.is_empty() {
        let layout = DefaultLayout::for_population(n_people);
        let people = match people_spec.clone() {
            Some((_, PeopleSpec::List(list))) => build_listed(&anchors, seed, list, &layout.zones)?,
            _ => {
                let k = raw.initial_infected.as_ref().map_or(0, |s| *s.get_ref());
                layout.assign(seed, n_people, k).or_else(|e| {
                    anchors.err(
                        raw.initial_infected.as_ref().map(|s| s.span()),
                        e.to_string(),
                    )
                })?
            }
        };
        (layout.zones, people)
    } else {
        let mut zones = Vec::with_capacity(raw.zones.len());
        let mut names = BTreeSet::new();
        for z in &raw.zones {
            let spec = z.get_ref();
            if !names.insert(spec.name.clone()) {
                return anchors.err(
                    Some(z.span()),
                    format!("duplicate zone name `{}`", spec.name),
                );
            }
            zones.push(Zone::new(
                spec.name.clone(),
                spec.kind,
                Rect::new(spec.x, spec.y, spec.width, spec.height),
            ));
        }
        let people = match people_spec.clone() {
            Some((_, PeopleSpec::List(list))) => build_listed(&anchors, seed, list, &zones)?,
            Some((span, PeopleSpec::Count(n))) => {
                let k = raw.initial_infected.as_ref().map_or(0, |s| *s.get_ref());
                build_counted(&anchors, span.clone(), seed, *n, k, &zones)?
            }
            None => Vec::new(),
        };
        (zones, people)
    };

    if raw.initial_infected.is_some() {
        if let Some((span, PeopleSpec::List(_))) = people_spec.clone() {
            return anchors.err(
                Some(span),
                "initial_infected only applies to `people = <count>`; set `status` per person instead",
            );
        }
    }

    let mut quarantine: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for q in &raw.quarantine {
        let spec = q.get_ref();
        if spec.day == 0 {
            return anchors.err(Some(q.span()), "quarantine days start at 1");
        }
        if let Some(&bad) = spec.persons.iter().find(|&&i| i >= people.len()) {
            return anchors.err(
                Some(q.span()),
                format!(
                    "quarantine for day {} references unknown person {bad}",
                    spec.day
                ),
            );
        }
        quarantine
            .entry(spec.day)
            .or_default()
            .extend(spec.persons.iter().copied());
    }

    let scenario = Scenario {
        seed,
        d_limit_m: raw
            .d_limit_m
            .as_ref()
            .map_or(DEFAULT_D_LIMIT_M, |s| *s.get_ref()),
        radio: raw
            .radio
            .as_ref()
            .map_or_else(RadioParams::default, |s| *s.get_ref()),
        schedule: raw
            .schedule
            .as_ref()
            .map_or_else(Schedule::default, |s| *s.get_ref()),
        zones,
        people,
        days: raw.days.as_ref().map_or(1, |s| *s.get_ref()),
        quarantine,
        authorities: raw.authorities.as_ref().map_or_else(
            || vec![DEFAULT_AUTHORITY.to_owned()],
            |s| s.get_ref().clone(),
        ),
        case_study: raw
            .case_study
            .as_ref()
            .map_or_else(Vec::new, |s| s.get_ref().policies.clone()),
    };

    scenario.validate().or_else(|e| {
        let span = match &e {
            ScenarioError::Radio(_) => raw.radio.as_ref().map(|s| s.span()),
            ScenarioError::InvalidLimit(_) => raw.d_limit_m.as_ref().map(|s| s.span()),
            ScenarioError::InvalidStep(_) => raw.schedule.as_ref().map(|s| s.span()),
            ScenarioError::NoDays => raw.days.as_ref().map(|s| s.span()),
            ScenarioError::NoAuthority => raw.authorities.as_ref().map(|s| s.span()),
            ScenarioError::Zone { index, .. } => raw.zones.get(*index).map(|s| s.span()),
            ScenarioError::PersonZone { person, .. } => person_span(people_spec, *person),
            ScenarioError::DuplicateId(id) => scenario
                .people
                .iter()
                .rposition(|p| &p.id == id)
                .and_then(|i| person_span(people_spec, i)),
            ScenarioError::UnknownPerson { .. } => raw.case_study.as_ref().map(|s| s.span()),
            ScenarioError::InfectedCount { .. } => raw.initial_infected.as_ref().map(|s| s.span()),
        };
        anchors.err(span, e.to_string())
    })?;
    Ok(scenario)
}

fn person_span(spec: Option<(Range<usize>, &PeopleSpec)>, index: usize) -> Option<Range<usize>> {
    match spec? {
        (span, PeopleSpec::Count(_)) => Some(span),
        (_, PeopleSpec::List(list)) => list.get(index).map(|p| p.span()),
    }
}

fn zone_index(zones: &[Zone], name: &str) -> Option<usize> {
    zones.iter().position(|z| z.name == name)
}

fn build_listed(
    anchors: &Anchors<'_>,
    seed: u64,
    list: &[Spanned<PersonSpec>],
    zones: &[Zone],
) -> Result<Vec<Person>, ConfigError> {
    let generated = generate_ids(seed, list.len()).or_else(|e| anchors.err(None, e.to_string()))?;
    let first_community = zones.iter().position(|z| z.kind == ZoneKind::Community);
    list.iter()
        .zip(generated)
        .map(|(entry, gen_id)| {
            let spec = entry.get_ref();
            let lookup = |name: &str| {
                zone_index(zones, name).ok_or_else(|| ConfigError {
                    line: Some(anchors.line(entry.span())),
                    message: format!("unknown zone `{name}`"),
                })
            };
            let community = match &spec.community {
                Some(name) => lookup(name)?,
                None => match first_community {
                    Some(i) => i,
                    None => return anchors.err(Some(entry.span()), "map has no community zone"),
                },
            };
            Ok(Person {
                id: spec.id.unwrap_or(gen_id),
                workplace: lookup(&spec.workplace)?,
                residence: lookup(&spec.residence)?,
                community,
                initial_status: spec.status,
                position: spec.position.map(|[x, y]| Point::new(x, y)),
            })
        })
        .collect()
}

fn build_counted(
    anchors: &Anchors<'_>,
    span: Range<usize>,
    seed: u64,
    n: usize,
    infected: usize,
    zones: &[Zone],
) -> Result<Vec<Person>, ConfigError> {
    let of_kind = |k: ZoneKind| -> Vec<usize> {
        zones
            .iter()
            .enumerate()
            .filter(|(_, z)| z.kind == k)
            .map(|(i, _)| i)
            .collect()
    };
    let (work, homes, community) = (
        of_kind(ZoneKind::Work),
        of_kind(ZoneKind::Residential),
        of_kind(ZoneKind::Community),
    );
    if n > 0 && (work.is_empty() || homes.is_empty() || community.is_empty()) {
        return anchors.err(
            Some(span),
            "`people = <count>` with an explicit map needs at least one work, residential and community zone",
        );
    }
    let ids = generate_ids(seed, n).or_else(|e| anchors.err(Some(span.clone()), e.to_string()))?;
    let sick: BTreeSet<usize> = choose_infected(seed, n, infected)
        .or_else(|e| anchors.err(Some(span.clone()), e.to_string()))?
        .into_iter()
        .collect();
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| Person {
            id,
            workplace: work[i % work.len()],
            residence: homes[(i / PEOPLE_PER_HOME) % homes.len()],
            community: community[0],
            initial_status: if sick.contains(&i) {
                HealthStatus::Infected
            } else {
                HealthStatus::NotAtRisk
            },
            position: None,
        })
        .collect())
}

pub fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_scenario(&text, seed_override)?)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Config text for the ten-person, two-infected study.
pub fn demo_config(seed: u64) -> String {
    format!(
        r#"schema = 1
seed = {seed}
d_limit_m = 1.83
people = 10
initial_infected = 2

[radio]
path_loss_exponent = 2.0
system_constant_dbm = -40.0
noise_sigma_db = 0.0
wall_attenuation_db = 15.0
min_distance_m = 0.01

[schedule]
step_minutes = 5

[[case_study.policies]]
name = "case-i"
kind = "infected_only"

[[case_study.policies]]
name = "case-ii"
kind = "infected_plus_at_risk"
count = 3
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_text_matches_builder() {
        let parsed = parse_scenario(&demo_config(11), None).unwrap();
        assert_eq!(parsed, Scenario::demo(11));
    }

    #[test]
    fn seed_override_regenerates() {
        let parsed = parse_scenario(&demo_config(11), Some(12)).unwrap();
        assert_eq!(parsed, Scenario::demo(12));
    }

    #[test]
    fn layout_and_key_order_do_not_change_hash() {
        let a = parse_scenario(&demo_config(3), None).unwrap();
        let shuffled = "initial_infected = 2\n\n\npeople   = 10\nseed = 3\nschema = 1\n\
            [schedule]\nstep_minutes=5\n\
            [radio]\nmin_distance_m = 0.01\npath_loss_exponent = 2.0\n\
            [[case_study.policies]]\nkind = \"infected_only\"\nname = \"case-i\"\n\
            [[case_study.policies]]\ncount = 3\nname = \"case-ii\"\nkind = \"infected_plus_at_risk\"\n";
        let b = parse_scenario(shuffled, None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_scenario(
            &demo_config(3).replace("step_minutes = 5", "step_minutes = 10"),
            None,
        )
        .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn syntax_error_has_line() {
        let err = parse_scenario("schema = 1\nseed = 1\npeople = [\n", None).unwrap_err();
        assert!(err.line.is_some(), "{err}");
    }

    #[test]
    fn unknown_key_has_line() {
        let err = parse_scenario("schema = 1\nseed = 1\n\n[radio]\nbogus = 3\n", None).unwrap_err();
        assert_eq!(err.line, Some(5), "{err}");
    }

    #[test]
    fn bad_radio_value_points_at_table() {
        let text = "schema = 1\nseed = 1\n[radio]\npath_loss_exponent = -2.0\n";
        let err = parse_scenario(text, None).unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
        assert!(err.message.contains("path_loss_exponent"));
    }

    #[test]
    fn wrong_schema() {
        let err = parse_scenario("schema = 2\nseed = 1\n", None).unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    const EXPLICIT: &str = r#"schema = 1
seed = 4

[[zones]]
name = "lab"
kind = "work"
x = 0.0
y = 0.0
width = 10.0
height = 10.0

[[zones]]
name = "flat"
kind = "residential"
x = 20.0
y = 0.0
width = 10.0
height = 10.0

[[zones]]
name = "plaza"
kind = "community"
x = 40.0
y = 0.0
width = 10.0
height = 10.0

[[people]]
workplace = "lab"
residence = "flat"
status = "infected"

[[people]]
id = "0000000000000000000000000000beef"
workplace = "lab"
residence = "flat"

[[quarantine]]
day = 2
persons = [0]
"#;

    #[test]
    fn explicit_people_and_zones() {
        let s = parse_scenario(EXPLICIT, None).unwrap();
        assert_eq!(s.zones.len(), 3);
        assert_eq!(s.people.len(), 2);
        assert_eq!(s.people[0].initial_status, HealthStatus::Infected);
        assert_eq!(s.people[1].id, AnonymousId::from_u128(0xbeef));
        assert_eq!(s.people[1].community, 2);
        assert_eq!(s.quarantined_on(2), BTreeSet::from([0]));
    }

    #[test]
    fn unknown_zone_reference_is_anchored() {
        let text = EXPLICIT.replacen(
            "residence = \"flat\"\nstatus",
            "residence = \"loft\"\nstatus",
            1,
        );
        let err = parse_scenario(&text, None).unwrap_err();
        assert_eq!(err.line, Some(28), "{err}");
        assert!(err.message.contains("loft"));
    }

    #[test]
    fn wrong_kind_is_anchored() {
        let text = EXPLICIT.replace(
            "workplace = \"lab\"\nresidence = \"flat\"\n\n[[quarantine]]",
            "workplace = \"plaza\"\nresidence = \"flat\"\n\n[[quarantine]]",
        );
        let err = parse_scenario(&text, None).unwrap_err();
        assert_eq!(err.line, Some(33), "{err}");
    }

    #[test]
    fn bad_quarantine_reference() {
        let err =
            parse_scenario(&EXPLICIT.replace("persons = [0]", "persons = [5]"), None).unwrap_err();
        assert_eq!(err.line, Some(38), "{err}");
    }

    #[test]
    fn zero_people_is_fine() {
        let s = parse_scenario("schema = 1\nseed = 1\npeople = 0\n", None).unwrap();
        assert!(s.people.is_empty());
    }
}

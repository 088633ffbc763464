//! Zoned mobility and the pairwise contact engine.
//!
//! A day is cut into work, community and residential segments. At every step
//! each free person is dropped at a uniform random point of the zone their
//! segment sends them to, then every unordered pair of free people is checked:
//! true distance, walls on the line of sight, one shared noise draw, RSSI,
//! estimated distance, and, when close enough, a mutual ID exchange.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceError, DeviceState};
use crate::geometry::{LineSegment, Point, Rect};
use crate::id::AnonymousId;
use crate::radio::{distance_unchecked, rssi_unchecked, RadioParams};
use crate::registry::HealthStatus;
use crate::rng::{keyed, split_u128, Stream};
use crate::scenario::{Scenario, ScenarioError};
use crate::SimMinute;

pub const MINUTES_PER_DAY: SimMinute = 1440;
pub const WORK_START: SimMinute = 8 * 60;
pub const COMMUNITY_START: SimMinute = 17 * 60;
pub const RESIDENTIAL_START: SimMinute = 20 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Work,
    Community,
    Residential,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: String,
    pub kind: ZoneKind,
    pub bounds: Rect,
}

impl Zone {
    pub fn new(name: impl Into<String>, kind: ZoneKind, bounds: Rect) -> Self {
        Self {
            name: name.into(),
            kind,
            bounds,
        }
    }

    /// Building walls; they coincide with the zone's bounds.
    pub fn walls(&self) -> [LineSegment; 4] {
        self.bounds.edges()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySegment {
    Work,
    Community,
    Residential,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("minute of day {0} is outside 0..1440")]
pub struct MinuteOutOfRange(pub SimMinute);

/// `[08:00, 17:00)` work, `[17:00, 20:00)` community, the rest residential.
pub fn segment_for_time(minute_of_day: SimMinute) -> Result<DaySegment, MinuteOutOfRange> {
    match minute_of_day {
        WORK_START..COMMUNITY_START => Ok(DaySegment::Work),
        COMMUNITY_START..RESIDENTIAL_START => Ok(DaySegment::Community),
        0..WORK_START | RESIDENTIAL_START..MINUTES_PER_DAY => Ok(DaySegment::Residential),
        _ => Err(MinuteOutOfRange(minute_of_day)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub step_minutes: u32,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { step_minutes: 5 }
    }
}

impl Schedule {
    /// Minute-of-day offsets of every step.
    pub fn step_offsets(&self) -> impl Iterator<Item = SimMinute> {
        (0..MINUTES_PER_DAY).step_by(self.step_minutes.max(1) as usize)
    }

    pub fn steps_per_day(&self) -> usize {
        self.step_offsets().count()
    }
}

/// First minute of day `day` (1-based).
pub fn day_start(day: u32) -> SimMinute {
    (day - 1) * MINUTES_PER_DAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub id: AnonymousId,
    /// Zone indices into the scenario map.
    pub workplace: usize,
    pub residence: usize,
    pub community: usize,
    pub initial_status: HealthStatus,
    /// Stands at this point all day instead of moving between zones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Point>,
}

impl Person {
    pub fn zone_for(&self, segment: DaySegment) -> usize {
        match segment {
            DaySegment::Work => self.workplace,
            DaySegment::Community => self.community,
            DaySegment::Residential => self.residence,
        }
    }
}

/// Position of `person` at `step`. Free people land uniformly in the zone their
/// segment assigns; quarantined people sit at a fixed point of their residence.
/// A pinned `position` overrides the zone draw but not quarantine.
pub fn place(
    person: &Person,
    zones: &[Zone],
    segment: DaySegment,
    step: SimMinute,
    seed: u64,
    quarantined: bool,
) -> Point {
    let [hi, lo] = split_u128(person.id.as_u128());
    if quarantined {
        let mut rng = keyed(seed, Stream::Anchor, &[hi, lo]);
        return zones[person.residence]
            .bounds
            .lerp(rng.random::<f64>(), rng.random::<f64>());
    }
    if let Some(p) = person.position {
        return p;
    }
    let mut rng = keyed(seed, Stream::Placement, &[hi, lo, u64::from(step)]);
    zones[person.zone_for(segment)]
        .bounds
        .lerp(rng.random::<f64>(), rng.random::<f64>())
}

/// Unordered pairs among `n` people.
pub fn pair_count(n: u64) -> u64 {
    if n < 2 {
        0
    } else if n.is_multiple_of(2) {
        (n / 2) * (n - 1)
    } else {
        n * ((n - 1) / 2)
    }
}

/// Zone-boundary segments crossed by the closed segment `p1`-`p2`.
pub fn walls_between(p1: Point, p2: Point, zones: &[Zone]) -> u32 {
    let sight = LineSegment::new(p1, p2);
    zones
        .iter()
        .filter(|z| z.bounds.bbox_overlaps(&sight))
        .flat_map(|z| z.walls())
        .filter(|w| w.intersects(&sight))
        .count() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub step: SimMinute,
    #[serde(rename = "id_a")]
    pub a: AnonymousId,
    #[serde(rename = "id_b")]
    pub b: AnonymousId,
    #[serde(rename = "true_distance_m")]
    pub true_distance: f64,
    #[serde(rename = "walls")]
    pub walls_crossed: u32,
    #[serde(rename = "rssi_dbm")]
    pub rssi: f64,
    #[serde(rename = "estimated_distance_m")]
    pub estimated_distance: f64,
    pub recorded: bool,
}

/// Which pair checks end up in the day log. `RecordedOnly` is for populations
/// where logging every check would not fit in memory; device state and pair
/// counts are identical in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogMode {
    #[default]
    All,
    RecordedOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayLog {
    pub day: u32,
    pub events: Vec<ContactEvent>,
    pub pair_checks: u64,
    pub recorded: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("expected {expected} devices, got {got}")]
    DeviceCount { expected: usize, got: usize },
    #[error("device {index} holds id {found}, person has {expected}")]
    DeviceMismatch {
        index: usize,
        expected: AnonymousId,
        found: AnonymousId,
    },
    #[error("day numbers start at 1")]
    DayZero,
    #[error("device disagrees with contact engine: {0}")]
    Device(#[from] DeviceError),
}

struct PairContext<'a> {
    zones: &'a [Zone],
    radio: &'a RadioParams,
    noise: Option<Normal<f64>>,
    d_limit: f64,
    seed: u64,
    mode: LogMode,
}

impl PairContext<'_> {
    fn noise_for(&self, a: AnonymousId, b: AnonymousId, step: SimMinute) -> f64 {
        match &self.noise {
            None => 0.0,
            Some(normal) => {
                let [ah, al] = split_u128(a.as_u128());
                let [bh, bl] = split_u128(b.as_u128());
                let mut rng = keyed(self.seed, Stream::Noise, &[ah, al, bh, bl, u64::from(step)]);
                normal.sample(&mut rng)
            }
        }
    }

    fn evaluate(
        &self,
        step: SimMinute,
        (a, pa): (AnonymousId, Point),
        (b, pb): (AnonymousId, Point),
    ) -> Option<ContactEvent> {
        let skip_misses = self.mode == LogMode::RecordedOnly;
        let dist_sq = pa.distance_sq(pb);
        // Noise-free and clearly out of range: walls can only push the estimate
        // further out, so nothing downstream could record this pair.
        let margin = self.d_limit * (1.0 + 1e-6);
        if skip_misses && self.noise.is_none() && dist_sq > margin * margin {
            return None;
        }
        let dist = dist_sq.sqrt();
        let noise = self.noise_for(a, b, step);
        if skip_misses {
            let open_air =
                distance_unchecked(rssi_unchecked(dist, 0, self.radio, noise), self.radio);
            if open_air >= self.d_limit {
                return None;
            }
        }
        let walls = walls_between(pa, pb, self.zones);
        let rssi = rssi_unchecked(dist, walls, self.radio, noise);
        let estimated = distance_unchecked(rssi, self.radio);
        let recorded = estimated < self.d_limit;
        if skip_misses && !recorded {
            return None;
        }
        Some(ContactEvent {
            step,
            a,
            b,
            true_distance: dist,
            walls_crossed: walls,
            rssi,
            estimated_distance: estimated,
            recorded,
        })
    }
}

const PARALLEL_THRESHOLD: usize = 64;

/// Positions of everyone (free or quarantined) at a given minute of `day`.
pub fn positions_at(scenario: &Scenario, day: u32, minute_of_day: SimMinute) -> Vec<Point> {
    let segment = segment_for_time(minute_of_day % MINUTES_PER_DAY).expect("reduced modulo a day");
    let step = day_start(day) + minute_of_day;
    let quarantined = scenario.quarantined_on(day);
    scenario
        .people
        .iter()
        .enumerate()
        .map(|(i, p)| {
            place(
                p,
                &scenario.zones,
                segment,
                step,
                scenario.seed,
                quarantined.contains(&i),
            )
        })
        .collect()
}

/// Runs one simulated day. `devices[i]` belongs to `scenario.people[i]` and
/// accumulates contacts across days.
pub fn simulate_day(
    scenario: &Scenario,
    day: u32,
    devices: &mut [DeviceState],
    mode: LogMode,
) -> Result<DayLog, SimError> {
    if day == 0 {
        return Err(SimError::DayZero);
    }
    scenario.validate()?;
    if devices.len() != scenario.people.len() {
        return Err(SimError::DeviceCount {
            expected: scenario.people.len(),
            got: devices.len(),
        });
    }
    for (index, (dev, person)) in devices.iter().zip(&scenario.people).enumerate() {
        if dev.own_id() != person.id {
            return Err(SimError::DeviceMismatch {
                index,
                expected: person.id,
                found: dev.own_id(),
            });
        }
    }

    let quarantined: BTreeSet<usize> = scenario.quarantined_on(day);
    // sorted by id so that (i < j) already yields events ordered by (a, b)
    let mut active: Vec<usize> = (0..scenario.people.len())
        .filter(|i| !quarantined.contains(i))
        .collect();
    active.sort_by_key(|&i| scenario.people[i].id);
    let ids: Vec<AnonymousId> = active.iter().map(|&i| scenario.people[i].id).collect();

    let ctx = PairContext {
        zones: &scenario.zones,
        radio: &scenario.radio,
        noise: (scenario.radio.noise_sigma_db > 0.0)
            .then(|| Normal::new(0.0, scenario.radio.noise_sigma_db).expect("validated sigma")),
        d_limit: scenario.d_limit_m,
        seed: scenario.seed,
        mode,
    };

    let mut log = DayLog {
        day,
        events: Vec::new(),
        pair_checks: 0,
        recorded: 0,
    };
    let by_id: std::collections::BTreeMap<AnonymousId, usize> =
        active.iter().map(|&i| (scenario.people[i].id, i)).collect();

    for offset in scenario.schedule.step_offsets() {
        let segment = segment_for_time(offset).expect("offsets stay within the day");
        let step = day_start(day) + offset;
        let pos: Vec<Point> = active
            .iter()
            .map(|&i| {
                place(
                    &scenario.people[i],
                    &scenario.zones,
                    segment,
                    step,
                    scenario.seed,
                    false,
                )
            })
            .collect();

        let row = |i: usize| -> (u64, Vec<ContactEvent>) {
            let mut out = Vec::new();
            let mut checks = 0u64;
            for j in i + 1..ids.len() {
                checks += 1;
                if let Some(ev) = ctx.evaluate(step, (ids[i], pos[i]), (ids[j], pos[j])) {
                    out.push(ev);
                }
            }
            (checks, out)
        };
        let rows: Vec<(u64, Vec<ContactEvent>)> = if ids.len() >= PARALLEL_THRESHOLD {
            (0..ids.len()).into_par_iter().map(row).collect()
        } else {
            (0..ids.len()).map(row).collect()
        };

        for (checks, events) in rows {
            log.pair_checks += checks;
            for ev in events {
                if ev.recorded {
                    log.recorded += 1;
                    let (ia, ib) = (by_id[&ev.a], by_id[&ev.b]);
                    let got_a = devices[ia].on_beacon(ev.b, ev.rssi, step, &scenario.radio)?;
                    let got_b = devices[ib].on_beacon(ev.a, ev.rssi, step, &scenario.radio)?;
                    debug_assert!(got_a && got_b);
                }
                log.events.push(ev);
            }
        }
    }
    Ok(log)
}

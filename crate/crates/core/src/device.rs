//! The wearable contact-tracing device.
//!
//! Storage is split the way the hardware is: the own ID is fixed at
//! construction (ROM), the deduplicated contact store persists (NVM), and a
//! per-peer sighting buffer holds transient timing data (RAM). Nothing in here
//! knows who the wearer is or where they were.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id::AnonymousId;
use crate::radio::{distance_from_rssi, RadioError, RadioParams};
use crate::SimMinute;

/// Roughly six feet.
pub const DEFAULT_D_LIMIT_M: f64 = 1.83;

/// Minimum gap between two sightings of the same peer for the second one to
/// count as a new encounter.
pub const RECONTACT_INTERVAL_MIN: SimMinute = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device {0} received its own beacon")]
    SelfBeacon(AnonymousId),
    #[error("proximity threshold must be finite and > 0, got {0}")]
    InvalidLimit(f64),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub peer: AnonymousId,
    pub first_contact: SimMinute,
    pub encounter_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
struct Sightings {
    last_counted: SimMinute,
    // every minute at which a sub-threshold beacon from this peer arrived
    at: Vec<SimMinute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    own_id: AnonymousId,
    d_limit_m: f64,
    contacts: BTreeMap<AnonymousId, ContactRecord>,
    sightings: BTreeMap<AnonymousId, Sightings>,
}

impl DeviceState {
    pub fn new(own_id: AnonymousId, d_limit_m: f64) -> Result<Self, DeviceError> {
        if !d_limit_m.is_finite() || d_limit_m <= 0.0 {
            return Err(DeviceError::InvalidLimit(d_limit_m));
        }
        Ok(Self {
            own_id,
            d_limit_m,
            contacts: BTreeMap::new(),
            sightings: BTreeMap::new(),
        })
    }

    pub fn own_id(&self) -> AnonymousId {
        self.own_id
    }

    pub fn d_limit_m(&self) -> f64 {
        self.d_limit_m
    }

    pub fn contact_count(&self) -> usize {
        self.contacts.len()
    }

    pub fn contact(&self, peer: &AnonymousId) -> Option<&ContactRecord> {
        self.contacts.get(peer)
    }

    /// Handles one received beacon. Returns whether the beacon was close
    /// enough to be recorded.
    pub fn on_beacon(
        &mut self,
        peer: AnonymousId,
        rssi_dbm: f64,
        now: SimMinute,
        params: &RadioParams,
    ) -> Result<bool, DeviceError> {
        if peer == self.own_id {
            return Err(DeviceError::SelfBeacon(peer));
        }
        let estimated = distance_from_rssi(rssi_dbm, params)?;
        if estimated >= self.d_limit_m {
            return Ok(false);
        }
        self.record(peer, now);
        Ok(true)
    }

    /// Stores a contact that has already passed the proximity test.
    pub(crate) fn record(&mut self, peer: AnonymousId, now: SimMinute) {
        let seen = self.sightings.entry(peer).or_default();
        match self.contacts.get_mut(&peer) {
            None => {
                self.contacts.insert(
                    peer,
                    ContactRecord {
                        peer,
                        first_contact: now,
                        encounter_count: 1,
                    },
                );
                seen.last_counted = now;
            }
            Some(rec) => {
                if now.saturating_sub(seen.last_counted) >= RECONTACT_INTERVAL_MIN {
                    rec.encounter_count += 1;
                    seen.last_counted = now;
                }
            }
        }
        if let Err(pos) = seen.at.binary_search(&now) {
            seen.at.insert(pos, now);
        }
    }

    /// Read-out of the contact store, ordered by first contact then peer.
    pub fn export_contacts(&self) -> Vec<ContactRecord> {
        let mut out: Vec<ContactRecord> = self.contacts.values().cloned().collect();
        out.sort_by_key(|r| (r.first_contact, r.peer));
        out
    }

    /// Earliest sighting of `peer` at or after `since`, if any.
    pub fn sighting_at_or_after(&self, peer: &AnonymousId, since: SimMinute) -> Option<SimMinute> {
        let at = &self.sightings.get(peer)?.at;
        let idx = at.partition_point(|&t| t < since);
        at.get(idx).copied()
    }

    /// Peers sighted at least once at or after `since`, ascending.
    pub fn contacts_since(&self, since: SimMinute) -> Vec<AnonymousId> {
        self.sightings
            .iter()
            .filter(|(_, s)| s.at.last().is_some_and(|&t| t >= since))
            .map(|(peer, _)| *peer)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::rssi_from_distance;
    use proptest::prelude::*;

    fn id(n: u128) -> AnonymousId {
        AnonymousId::from_u128(n)
    }

    fn rssi_at(d: f64) -> f64 {
        rssi_from_distance(d, 0, &RadioParams::default(), 0.0).unwrap()
    }

    #[test]
    fn close_peer_is_inserted() {
        let mut alice = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        let recorded = alice
            .on_beacon(id(2), rssi_at(1.0), 480, &RadioParams::default())
            .unwrap();
        assert!(recorded);
        assert_eq!(
            alice.export_contacts(),
            vec![ContactRecord {
                peer: id(2),
                first_contact: 480,
                encounter_count: 1
            }]
        );
    }

    #[test]
    fn duplicate_beacon_same_minute_is_deduplicated() {
        let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        let params = RadioParams::default();
        dev.on_beacon(id(2), rssi_at(1.0), 600, &params).unwrap();
        dev.on_beacon(id(2), rssi_at(1.0), 600, &params).unwrap();
        assert_eq!(dev.contact_count(), 1);
        assert_eq!(dev.contact(&id(2)).unwrap().encounter_count, 1);
    }

    #[test]
    fn exact_threshold_is_not_recorded() {
        let params = RadioParams::default();
        let rssi = rssi_at(1.83);
        let limit = distance_from_rssi(rssi, &params).unwrap();
        let mut dev = DeviceState::new(id(1), limit).unwrap();
        assert!(!dev.on_beacon(id(2), rssi, 0, &params).unwrap());
        assert_eq!(dev.contact_count(), 0);
    }

    #[test]
    fn far_peer_is_ignored() {
        let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        assert!(!dev
            .on_beacon(id(2), rssi_at(5.0), 0, &RadioParams::default())
            .unwrap());
        assert!(dev.export_contacts().is_empty());
    }

    #[test]
    fn self_beacon_is_an_error() {
        let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        assert_eq!(
            dev.on_beacon(id(1), -40.0, 0, &RadioParams::default()),
            Err(DeviceError::SelfBeacon(id(1)))
        );
    }

    #[test]
    fn bad_limit_rejected() {
        assert!(DeviceState::new(id(1), 0.0).is_err());
        assert!(DeviceState::new(id(1), f64::NAN).is_err());
    }

    #[test]
    fn export_orders_by_first_contact() {
        let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        dev.record(id(0xb), 510);
        dev.record(id(0xc), 480);
        let peers: Vec<_> = dev.export_contacts().iter().map(|r| r.peer).collect();
        assert_eq!(peers, vec![id(0xc), id(0xb)]);
    }

    #[test]
    fn encounters_are_debounced() {
        let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        for t in [0, 5, 10, 25, 30, 35, 59, 60, 200] {
            dev.record(id(2), t);
        }
        // counted at 0, 30, 60, 200
        let rec = dev.contact(&id(2)).unwrap();
        assert_eq!(rec.encounter_count, 4);
        assert_eq!(rec.first_contact, 0);
        assert_eq!(dev.sighting_at_or_after(&id(2), 36), Some(59));
        assert_eq!(dev.sighting_at_or_after(&id(2), 201), None);
        assert_eq!(dev.contacts_since(200), vec![id(2)]);
        assert!(dev.contacts_since(201).is_empty());
    }

    #[test]
    fn schema_has_no_identity_or_location() {
        let dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
        let json = serde_json::to_value(&dev).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["contacts", "d_limit_m", "own_id", "sightings"]);
        let rec = serde_json::to_value(ContactRecord {
            peer: id(2),
            first_contact: 0,
            encounter_count: 1,
        })
        .unwrap();
        let mut keys: Vec<_> = rec.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["encounter_count", "first_contact", "peer"]);
    }

    fn beacon_stream() -> impl Strategy<Value = Vec<(u8, f64, u16)>> {
        prop::collection::vec((2u8..12, 0.05f64..6.0, 0u16..1440), 0..200)
    }

    proptest! {
        #[test]
        fn store_size_equals_distinct_close_peers(stream in beacon_stream()) {
            let params = RadioParams::default();
            let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
            let mut stream = stream;
            stream.sort_by_key(|b| b.2);
            let mut close = std::collections::BTreeSet::new();
            for (peer, d, t) in &stream {
                let rssi = rssi_at(*d);
                if distance_from_rssi(rssi, &params).unwrap() < DEFAULT_D_LIMIT_M {
                    close.insert(*peer);
                }
                dev.on_beacon(id(u128::from(*peer)), rssi, SimMinute::from(*t), &params).unwrap();
            }
            prop_assert_eq!(dev.contact_count(), close.len());
            for rec in dev.export_contacts() {
                prop_assert!(rec.encounter_count >= 1);
                prop_assert!(rec.peer != dev.own_id());
            }
        }

        #[test]
        fn replay_is_bit_identical(stream in beacon_stream()) {
            let params = RadioParams::default();
            let run = || {
                let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
                for (peer, d, t) in &stream {
                    dev.on_beacon(id(u128::from(*peer)), rssi_at(*d), SimMinute::from(*t), &params).unwrap();
                }
                dev
            };
            let (a, b) = (run(), run());
            prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }

        #[test]
        fn first_contact_fixed_and_count_monotone(stream in beacon_stream()) {
            let params = RadioParams::default();
            let mut stream = stream;
            stream.sort_by_key(|b| b.2);
            let mut dev = DeviceState::new(id(1), DEFAULT_D_LIMIT_M).unwrap();
            let mut seen: BTreeMap<AnonymousId, ContactRecord> = BTreeMap::new();
            for (peer, d, t) in &stream {
                dev.on_beacon(id(u128::from(*peer)), rssi_at(*d), SimMinute::from(*t), &params).unwrap();
                for rec in dev.export_contacts() {
                    if let Some(prev) = seen.get(&rec.peer) {
                        prop_assert_eq!(prev.first_contact, rec.first_contact);
                        prop_assert!(prev.encounter_count <= rec.encounter_count);
                    }
                    seen.insert(rec.peer, rec);
                }
            }
        }
    }
}

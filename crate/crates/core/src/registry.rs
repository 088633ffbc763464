//! Central flagging registry.
//!
//! Authorized personnel flag IDs as infected and upload a flagged device's
//! contact list; anyone may query an ID. Statuses only ever move up the
//! `NotAtRisk < AtRisk < Infected` lattice and every change is audited.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::id::AnonymousId;
use crate::SimMinute;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    #[default]
    NotAtRisk,
    AtRisk,
    Infected,
}

impl HealthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthStatus::NotAtRisk => "not_at_risk",
            HealthStatus::AtRisk => "at_risk",
            HealthStatus::Infected => "infected",
        }
    }
}

impl fmt::Display for HealthStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HealthStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "not_at_risk" => Ok(HealthStatus::NotAtRisk),
            "at_risk" => Ok(HealthStatus::AtRisk),
            "infected" => Ok(HealthStatus::Infected),
            other => Err(format!("unknown health status `{other}`")),
        }
    }
}

/// Bearer secret held by authorized medical personnel. Only its SHA-256
/// digest is ever stored or printed.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthorityToken(String);

impl AuthorityToken {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.0.as_bytes()))
    }
}

impl fmt::Debug for AuthorityToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AuthorityToken(<redacted>)")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("authority token not recognized")]
    Unauthorized,
    #[error("contact upload refused: source {0} is not flagged")]
    SourceNotFlagged(AnonymousId),
    #[error("registry snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: AnonymousId,
    pub status: HealthStatus,
    #[serde(rename = "flagged_at_min")]
    pub flagged_at: Option<SimMinute>,
    #[serde(rename = "flagged_by_hash")]
    pub flagged_by: Option<String>,
}

impl RegistryEntry {
    fn unflagged(id: AnonymousId) -> Self {
        Self {
            id,
            status: HealthStatus::NotAtRisk,
            flagged_at: None,
            flagged_by: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub id: AnonymousId,
    pub from: HealthStatus,
    pub to: HealthStatus,
    pub at: SimMinute,
    pub by: String,
}

/// Single-writer store: mutations take `&mut self`, snapshots take `&self`,
/// so a snapshot can never observe a half-applied upload.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<AnonymousId, RegistryEntry>,
    authorized: BTreeSet<String>,
    audit: Vec<AuditRecord>,
}

impl Registry {
    pub fn new<'a>(authorities: impl IntoIterator<Item = &'a AuthorityToken>) -> Self {
        Self {
            entries: BTreeMap::new(),
            authorized: authorities
                .into_iter()
                .map(AuthorityToken::digest)
                .collect(),
            audit: Vec::new(),
        }
    }

    fn authorize(&self, auth: &AuthorityToken) -> Result<String, RegistryError> {
        let digest = auth.digest();
        if self.authorized.contains(&digest) {
            Ok(digest)
        } else {
            Err(RegistryError::Unauthorized)
        }
    }

    /// Enrolls a device as not-at-risk so it shows up in snapshots.
    pub fn register(&mut self, id: AnonymousId) {
        self.entries
            .entry(id)
            .or_insert_with(|| RegistryEntry::unflagged(id));
    }

    fn raise(&mut self, id: AnonymousId, to: HealthStatus, at: SimMinute, by: &str) -> bool {
        let entry = self
            .entries
            .entry(id)
            .or_insert_with(|| RegistryEntry::unflagged(id));
        if entry.status >= to {
            return false;
        }
        self.audit.push(AuditRecord {
            id,
            from: entry.status,
            to,
            at,
            by: by.to_owned(),
        });
        entry.status = to;
        entry.flagged_at = Some(at);
        entry.flagged_by = Some(by.to_owned());
        true
    }

    pub fn flag_infected(
        &mut self,
        id: AnonymousId,
        auth: &AuthorityToken,
        now: SimMinute,
    ) -> Result<(), RegistryError> {
        let by = self.authorize(auth)?;
        self.raise(id, HealthStatus::Infected, now, &by);
        Ok(())
    }

    /// Marks every not-at-risk ID in `contacts` as at-risk. Returns the IDs that
    /// changed, ascending.
    pub fn upload_contacts(
        &mut self,
        source: AnonymousId,
        contacts: &[AnonymousId],
        auth: &AuthorityToken,
        now: SimMinute,
    ) -> Result<Vec<AnonymousId>, RegistryError> {
        let by = self.authorize(auth)?;
        if self.query_status(&source) < HealthStatus::AtRisk {
            return Err(RegistryError::SourceNotFlagged(source));
        }
        let unique: BTreeSet<AnonymousId> = contacts.iter().copied().collect();
        Ok(unique
            .into_iter()
            .filter(|&id| self.raise(id, HealthStatus::AtRisk, now, &by))
            .collect())
    }

    pub fn query_status(&self, id: &AnonymousId) -> HealthStatus {
        self.entries
            .get(id)
            .map_or(HealthStatus::NotAtRisk, |e| e.status)
    }

    pub fn entry(&self, id: &AnonymousId) -> Option<&RegistryEntry> {
        self.entries.get(id)
    }

    /// Entries ascending by ID.
    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Writes `id,status,flagged_at_min,flagged_by_hash`, one row per entry.
    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<(), RegistryError> {
        let mut w = csv::Writer::from_writer(out);
        for e in self.entries() {
            w.serialize(e)
                .map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        }
        w.flush()
            .map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        // csv::Writer only emits the header with the first record
        if self.entries.is_empty() {
            let mut inner = w
                .into_inner()
                .map_err(|e| RegistryError::Snapshot(e.to_string()))?;
            inner
                .write_all(b"id,status,flagged_at_min,flagged_by_hash\n")
                .map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(input: R) -> Result<Vec<RegistryEntry>, RegistryError> {
        csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<Vec<RegistryEntry>, _>>()
            .map_err(|e| RegistryError::Snapshot(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALICE: AnonymousId = AnonymousId::from_u128(0xa11ce);
    const BOB: AnonymousId = AnonymousId::from_u128(0xb0b);
    const CHUCK: AnonymousId = AnonymousId::from_u128(0xc4c);
    const ERIN: AnonymousId = AnonymousId::from_u128(0xe41);

    fn nurse() -> AuthorityToken {
        AuthorityToken::new("clinic-7")
    }

    fn registry() -> Registry {
        Registry::new([&nurse()])
    }

    #[test]
    fn flag_and_upload_walkthrough() {
        let mut reg = registry();
        for id in [ALICE, BOB, CHUCK] {
            reg.register(id);
        }
        reg.flag_infected(ALICE, &nurse(), 1440).unwrap();
        assert_eq!(reg.query_status(&ALICE), HealthStatus::Infected);

        let newly = reg
            .upload_contacts(ALICE, &[BOB, ALICE], &nurse(), 1450)
            .unwrap();
        assert_eq!(newly, vec![BOB]);
        assert_eq!(reg.query_status(&BOB), HealthStatus::AtRisk);
        assert_eq!(reg.query_status(&ALICE), HealthStatus::Infected);
        assert_eq!(reg.query_status(&CHUCK), HealthStatus::NotAtRisk);

        // an at-risk source may upload too
        let newly = reg.upload_contacts(BOB, &[ERIN], &nurse(), 1460).unwrap();
        assert_eq!(newly, vec![ERIN]);
        assert_eq!(reg.query_status(&ERIN), HealthStatus::AtRisk);
    }

    #[test]
    fn first_flag_wins() {
        let mut reg = registry();
        reg.flag_infected(ALICE, &nurse(), 10).unwrap();
        reg.flag_infected(ALICE, &nurse(), 20).unwrap();
        assert_eq!(reg.entry(&ALICE).unwrap().flagged_at, Some(10));
        assert_eq!(reg.audit_log().len(), 1);
    }

    #[test]
    fn at_risk_upgrades_to_infected() {
        let mut reg = registry();
        reg.flag_infected(ALICE, &nurse(), 0).unwrap();
        reg.upload_contacts(ALICE, &[BOB], &nurse(), 5).unwrap();
        reg.flag_infected(BOB, &nurse(), 9).unwrap();
        let bob = reg.entry(&BOB).unwrap();
        assert_eq!(bob.status, HealthStatus::Infected);
        assert_eq!(bob.flagged_at, Some(9));
    }

    #[test]
    fn bad_token_changes_nothing() {
        let mut reg = registry();
        reg.register(ALICE);
        let before = reg.clone().entries().cloned().collect::<Vec<_>>();
        let rogue = AuthorityToken::new("guess");
        assert_eq!(
            reg.flag_infected(ALICE, &rogue, 0),
            Err(RegistryError::Unauthorized)
        );
        assert_eq!(
            reg.upload_contacts(ALICE, &[BOB], &rogue, 0),
            Err(RegistryError::Unauthorized)
        );
        assert_eq!(reg.entries().cloned().collect::<Vec<_>>(), before);
        assert!(reg.audit_log().is_empty());
    }

    #[test]
    fn unflagged_source_cannot_upload() {
        let mut reg = registry();
        assert_eq!(
            reg.upload_contacts(CHUCK, &[BOB], &nurse(), 0),
            Err(RegistryError::SourceNotFlagged(CHUCK))
        );
        assert_eq!(reg.query_status(&BOB), HealthStatus::NotAtRisk);
    }

    #[test]
    fn unknown_is_not_at_risk() {
        assert_eq!(registry().query_status(&ERIN), HealthStatus::NotAtRisk);
    }

    #[test]
    fn token_debug_is_redacted() {
        assert!(!format!("{:?}", nurse()).contains("clinic"));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut reg = registry();
        reg.register(CHUCK);
        reg.flag_infected(ALICE, &nurse(), 3).unwrap();
        reg.upload_contacts(ALICE, &[BOB], &nurse(), 4).unwrap();
        let mut buf = Vec::new();
        reg.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,status,flagged_at_min,flagged_by_hash\n"));
        assert!(text.contains(&format!("{CHUCK},not_at_risk,,\n")));
        let back = Registry::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, reg.entries().cloned().collect::<Vec<_>>());

        let mut empty = Vec::new();
        registry().write_snapshot(&mut empty).unwrap();
        assert_eq!(empty, b"id,status,flagged_at_min,flagged_by_hash\n");
        assert!(Registry::read_snapshot(empty.as_slice())
            .unwrap()
            .is_empty());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Flag(u8, bool, u16),
        Upload(u8, Vec<u8>, bool, u16),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..16, any::<bool>(), any::<u16>()).prop_map(|(i, ok, t)| Op::Flag(i, ok, t)),
            (
                0u8..16,
                prop::collection::vec(0u8..16, 0..6),
                any::<bool>(),
                any::<u16>()
            )
                .prop_map(|(s, c, ok, t)| Op::Upload(s, c, ok, t)),
        ]
    }

    fn pid(i: u8) -> AnonymousId {
        AnonymousId::from_u128(u128::from(i) + 1)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn statuses_never_decrease(ops in prop::collection::vec(op(), 0..40), bad in "[a-z]{1,12}") {
            prop_assume!(bad != "clinic-7");
            let rogue = AuthorityToken::new(bad);
            let mut reg = registry();
            let mut last: BTreeMap<AnonymousId, HealthStatus> = BTreeMap::new();
            for op in ops {
                let before = reg.entries().cloned().collect::<Vec<_>>();
                let res = match &op {
                    Op::Flag(i, ok, t) => {
                        let tok = if *ok { nurse() } else { rogue.clone() };
                        reg.flag_infected(pid(*i), &tok, SimMinute::from(*t)).map(|_| ())
                    }
                    Op::Upload(s, c, ok, t) => {
                        let tok = if *ok { nurse() } else { rogue.clone() };
                        let ids: Vec<_> = c.iter().map(|&i| pid(i)).collect();
                        reg.upload_contacts(pid(*s), &ids, &tok, SimMinute::from(*t)).map(|_| ())
                    }
                };
                if res.is_err() {
                    prop_assert_eq!(reg.entries().cloned().collect::<Vec<_>>(), before);
                }
                for e in reg.entries() {
                    let prev = last.get(&e.id).copied().unwrap_or_default();
                    prop_assert!(e.status >= prev);
                    if e.status != HealthStatus::NotAtRisk {
                        prop_assert!(e.flagged_at.is_some() && e.flagged_by.is_some());
                    }
                    last.insert(e.id, e.status);
                }
            }
            for a in reg.audit_log() {
                prop_assert!(a.to > a.from);
                prop_assert_eq!(&a.by, &nurse().digest());
            }
        }

        #[test]
        fn upload_is_order_insensitive(contacts in prop::collection::vec(0u8..16, 0..12), seed: u64) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ids: Vec<_> = contacts.iter().map(|&i| pid(i)).collect();
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let run = |list: &[AnonymousId]| {
                let mut reg = registry();
                reg.flag_infected(pid(3), &nurse(), 0).unwrap();
                let newly = reg.upload_contacts(pid(3), list, &nurse(), 1).unwrap();
                (reg.entries().cloned().collect::<Vec<_>>(), newly)
            };
            prop_assert_eq!(run(&ids), run(&shuffled));
        }
    }
}

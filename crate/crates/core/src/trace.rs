//! Audit log of the federation protocol: every broadcast and upload, with its
//! payload kind and size.
//!
//! The event schema has no field for raw features or per-sample embeddings,
//! so a trace can only ever describe weights, class means and prototypes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ModalityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Broadcast,
    Upload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PayloadKind {
    ExtractorWeights,
    ClassMeans,
    Prototypes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub round: u32,
    pub direction: Direction,
    pub client_id: usize,
    pub modality: ModalityId,
    pub payload_kind: PayloadKind,
    pub payload_bytes: usize,
}

impl TraceEvent {
    fn key(&self) -> (u32, Direction, usize, ModalityId, PayloadKind) {
        (self.round, self.direction, self.client_id, self.modality, self.payload_kind)
    }
}

/// Checks one event against the client masks. Returns a description of the
/// violation, if any.
fn violation(event: &TraceEvent, masks: &BTreeMap<usize, BTreeSet<ModalityId>>) -> Option<String> {
    let Some(mask) = masks.get(&event.client_id) else {
        return Some(format!("round {}: unknown client {}", event.round, event.client_id));
    };
    if !mask.contains(&event.modality) {
        return Some(format!(
            "round {}: client {} {:?} {:?} for modality {} outside its mask",
            event.round, event.client_id, event.direction, event.payload_kind, event.modality
        ));
    }
    match (event.direction, event.payload_kind) {
        (Direction::Broadcast, PayloadKind::Prototypes) if event.round < 2 => Some(format!(
            "round {}: prototypes broadcast before any aggregation",
            event.round
        )),
        (Direction::Broadcast, PayloadKind::ClassMeans) | (Direction::Upload, PayloadKind::Prototypes) => {
            Some(format!(
                "round {}: {:?} is not a valid {:?} payload",
                event.round, event.payload_kind, event.direction
            ))
        }
        _ => None,
    }
}

/// Append-only protocol trace. Recording enforces the mask and bootstrap rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    masks: BTreeMap<usize, BTreeSet<ModalityId>>,
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(masks: BTreeMap<usize, BTreeSet<ModalityId>>) -> Self {
        Trace { masks, events: Vec::new() }
    }

    pub fn masks(&self) -> &BTreeMap<usize, BTreeSet<ModalityId>> {
        &self.masks
    }

    pub fn record(&mut self, event: TraceEvent) -> Result<()> {
        if let Some(msg) = violation(&event, &self.masks) {
            return Err(Error::Protocol(msg));
        }
        self.events.push(event);
        Ok(())
    }

    /// Events in canonical order: (round, direction, client, modality, kind).
    pub fn events(&self) -> Vec<TraceEvent> {
        let mut out = self.events.clone();
        out.sort_by_key(TraceEvent::key);
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn audit(&self) -> AuditReport {
        audit(&self.events(), &self.masks)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("round,direction,client_id,payload_kind,modality,payload_bytes\n");
        for e in self.events() {
            body.push_str(&format!(
                "{},{:?},{},{:?},{},{}\n",
                e.round, e.direction, e.client_id, e.payload_kind, e.modality.0, e.payload_bytes
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
    /// Upload bytes per (round, client).
    pub upload_bytes: BTreeMap<(u32, usize), usize>,
    /// Broadcast bytes per (round, client).
    pub broadcast_bytes: BTreeMap<(u32, usize), usize>,
    /// Extractor-weight uploads per (round, modality).
    pub extractor_uploads: BTreeMap<(u32, ModalityId), usize>,
    pub events: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recomputes payload volumes and re-checks every protocol rule, including
/// that each modality's extractor is uploaded by exactly its owners each round.
pub fn audit(events: &[TraceEvent], masks: &BTreeMap<usize, BTreeSet<ModalityId>>) -> AuditReport {
    let mut report = AuditReport { events: events.len(), ..AuditReport::default() };
    let mut rounds = BTreeSet::new();
    for e in events {
        rounds.insert(e.round);
        if let Some(v) = violation(e, masks) {
            report.violations.push(v);
        }
        let bucket = match e.direction {
            Direction::Upload => &mut report.upload_bytes,
            Direction::Broadcast => &mut report.broadcast_bytes,
        };
        *bucket.entry((e.round, e.client_id)).or_default() += e.payload_bytes;
        if e.direction == Direction::Upload && e.payload_kind == PayloadKind::ExtractorWeights {
            *report.extractor_uploads.entry((e.round, e.modality)).or_default() += 1;
        }
    }
    let mut owners: BTreeMap<ModalityId, usize> = BTreeMap::new();
    for mask in masks.values() {
        for &m in mask {
            *owners.entry(m).or_default() += 1;
        }
    }
    for &round in &rounds {
        for (&m, &n_k) in &owners {
            let got = report.extractor_uploads.get(&(round, m)).copied().unwrap_or(0);
            if got != n_k {
                report.violations.push(format!(
                    "round {round}: {got} extractor uploads for modality {m}, expected {n_k}"
                ));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_masks() -> BTreeMap<usize, BTreeSet<ModalityId>> {
        BTreeMap::from([
            (1, BTreeSet::from([ModalityId(0)])),
            (2, BTreeSet::from([ModalityId(0), ModalityId(1)])),
            (3, BTreeSet::from([ModalityId(1)])),
        ])
    }

    fn ev(round: u32, direction: Direction, client_id: usize, m: usize, kind: PayloadKind) -> TraceEvent {
        TraceEvent { round, direction, client_id, modality: ModalityId(m), payload_kind: kind, payload_bytes: 64 }
    }

    #[test]
    fn mask_violation_is_rejected() {
        let mut t = Trace::new(table1_masks());
        let err = t.record(ev(1, Direction::Upload, 1, 1, PayloadKind::ExtractorWeights)).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn round_one_prototype_broadcast_is_rejected() {
        let mut t = Trace::new(table1_masks());
        assert!(t.record(ev(1, Direction::Broadcast, 2, 0, PayloadKind::Prototypes)).is_err());
        assert!(t.record(ev(2, Direction::Broadcast, 2, 0, PayloadKind::Prototypes)).is_ok());
    }

    #[test]
    fn valid_round_two_counts() {
        let masks = table1_masks();
        let mut t = Trace::new(masks.clone());
        for (&c, mask) in &masks {
            for &m in mask {
                t.record(ev(2, Direction::Broadcast, c, m.0, PayloadKind::ExtractorWeights)).unwrap();
                t.record(ev(2, Direction::Broadcast, c, m.0, PayloadKind::Prototypes)).unwrap();
                t.record(ev(2, Direction::Upload, c, m.0, PayloadKind::ExtractorWeights)).unwrap();
                t.record(ev(2, Direction::Upload, c, m.0, PayloadKind::ClassMeans)).unwrap();
            }
        }
        // sum_k N_k = 4 owner pairs, each with 2 broadcasts and 2 uploads
        assert_eq!(t.len(), 16);
        let report = t.audit();
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.extractor_uploads[&(2, ModalityId(0))], 2);
        assert_eq!(report.extractor_uploads[&(2, ModalityId(1))], 2);
        assert_eq!(report.upload_bytes[&(2, 2)], 4 * 64);
    }

    #[test]
    fn audit_flags_missing_owner_upload() {
        let masks = table1_masks();
        let events = vec![ev(1, Direction::Upload, 1, 0, PayloadKind::ExtractorWeights)];
        let report = audit(&events, &masks);
        assert_eq!(report.violations.len(), 2);
    }

    #[test]
    fn canonical_ordering() {
        let mut t = Trace::new(table1_masks());
        t.record(ev(1, Direction::Upload, 3, 1, PayloadKind::ClassMeans)).unwrap();
        t.record(ev(1, Direction::Broadcast, 2, 0, PayloadKind::ExtractorWeights)).unwrap();
        t.record(ev(1, Direction::Upload, 1, 0, PayloadKind::ExtractorWeights)).unwrap();
        let order: Vec<usize> = t.events().iter().map(|e| e.client_id).collect();
        assert_eq!(order, vec![2, 1, 3]);
    }
}

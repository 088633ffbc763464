//! CSV and SVG outputs.
//!
//! Every CSV written here has a fixed header, is emitted even when empty, and
//! reads back into the same in-memory values.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{ContactRecord, DeviceState};
use crate::geometry::Point;
use crate::id::AnonymousId;
use crate::mobility::{ContactEvent, Zone, ZoneKind};
use crate::registry::HealthStatus;
use crate::tracing::{Label, RiskLabeling};
use crate::SimMinute;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

pub const EVENT_HEADER: [&str; 8] = [
    "step",
    "id_a",
    "id_b",
    "true_distance_m",
    "walls",
    "rssi_dbm",
    "estimated_distance_m",
    "recorded",
];
pub const DEVICE_HEADER: [&str; 4] = ["own_id", "peer_id", "first_contact_min", "encounter_count"];
pub const LABEL_HEADER: [&str; 3] = ["id", "status", "acquisition_step"];

fn write_rows<W: Write, T: Serialize>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(
    input: R,
    header: &[&str],
    what: &'static str,
) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(ReportError::Malformed {
            what,
            detail: format!("header {found:?}, expected {header:?}"),
        });
    }
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn write_events<W: Write>(out: W, events: &[ContactEvent]) -> Result<(), ReportError> {
    write_rows(out, &EVENT_HEADER, events)
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<ContactEvent>, ReportError> {
    read_rows(input, &EVENT_HEADER, "event log")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDumpRow {
    pub own_id: AnonymousId,
    pub peer_id: AnonymousId,
    pub first_contact_min: SimMinute,
    pub encounter_count: u32,
}

impl DeviceDumpRow {
    pub fn record(&self) -> ContactRecord {
        ContactRecord {
            peer: self.peer_id,
            first_contact: self.first_contact_min,
            encounter_count: self.encounter_count,
        }
    }
}

/// Every device's contact store, devices in the given order.
pub fn write_device_dump<W: Write>(out: W, devices: &[DeviceState]) -> Result<(), ReportError> {
    let rows = devices.iter().flat_map(|d| {
        d.export_contacts().into_iter().map(move |r| DeviceDumpRow {
            own_id: d.own_id(),
            peer_id: r.peer,
            first_contact_min: r.first_contact,
            encounter_count: r.encounter_count,
        })
    });
    write_rows(out, &DEVICE_HEADER, rows)
}

pub fn read_device_dump<R: Read>(input: R) -> Result<Vec<DeviceDumpRow>, ReportError> {
    read_rows(input, &DEVICE_HEADER, "device dump")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LabelRow {
    id: AnonymousId,
    status: HealthStatus,
    acquisition_step: Option<SimMinute>,
}

pub fn write_labeling<W: Write>(out: W, labels: &RiskLabeling) -> Result<(), ReportError> {
    let rows = labels.iter().map(|(id, l)| LabelRow {
        id: *id,
        status: l.status,
        acquisition_step: l.acquisition_step,
    });
    write_rows(out, &LABEL_HEADER, rows)
}

pub fn read_labeling<R: Read>(input: R) -> Result<RiskLabeling, ReportError> {
    let rows: Vec<LabelRow> = read_rows(input, &LABEL_HEADER, "labeling")?;
    Ok(RiskLabeling(
        rows.into_iter()
            .map(|r| {
                (
                    r.id,
                    Label {
                        status: r.status,
                        acquisition_step: r.acquisition_step,
                    },
                )
            })
            .collect(),
    ))
}

/// First-contact minute for every ordered pair of people, read off the device
/// stores. Symmetric because exchanges are mutual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContactMatrix {
    pub ids: Vec<AnonymousId>,
    pub cells: Vec<Vec<Option<SimMinute>>>,
}

impl ContactMatrix {
    pub fn from_devices(devices: &[DeviceState]) -> Self {
        let ids: Vec<AnonymousId> = devices.iter().map(DeviceState::own_id).collect();
        let cells = devices
            .iter()
            .map(|d| {
                ids.iter()
                    .map(|peer| d.contact(peer).map(|r| r.first_contact))
                    .collect()
            })
            .collect();
        Self { ids, cells }
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.ids.len();
        (0..n).all(|i| {
            self.cells[i][i].is_none() && (0..n).all(|j| self.cells[i][j] == self.cells[j][i])
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        let mut header = vec!["id".to_owned()];
        header.extend(self.ids.iter().map(ToString::to_string));
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.cells) {
            let mut rec = vec![id.to_string()];
            rec.extend(
                row.iter()
                    .map(|c| c.map(|t| t.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let malformed = |detail: String| ReportError::Malformed {
            what: "contact matrix",
            detail,
        };
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(input);
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| malformed("empty file".into()))??;
        if header.get(0) != Some("id") {
            return Err(malformed("first column must be `id`".into()));
        }
        let ids = header
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<AnonymousId>()
                    .map_err(|e| malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut cells = Vec::with_capacity(ids.len());
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            let row_id = rec.get(0).unwrap_or_default();
            if ids.get(i).map(ToString::to_string).as_deref() != Some(row_id) {
                return Err(malformed(format!("row {i} id `{row_id}` out of order")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|e| malformed(format!("{e}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(row);
        }
        if cells.len() != ids.len() {
            return Err(malformed(format!(
                "{} rows for {} ids",
                cells.len(),
                ids.len()
            )));
        }
        Ok(Self { ids, cells })
    }

    /// Heatmap: darker cells are earlier first contacts, blank cells none.
    pub fn to_svg(&self, statuses: &[HealthStatus]) -> String {
        const CELL: f64 = 28.0;
        const MARGIN: f64 = 60.0;
        let n = self.ids.len();
        let size = MARGIN + CELL * n as f64 + 20.0;
        let latest = self
            .cells
            .iter()
            .flatten()
            .flatten()
            .copied()
            .max()
            .unwrap_or(0)
            .max(1);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for i in 0..n {
            let status = statuses.get(i).copied().unwrap_or_default();
            let pos = MARGIN + CELL * i as f64;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end" fill="{}">P{i}</text>"#,
                MARGIN - 6.0,
                pos + CELL * 0.65,
                status_color(status)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{}">P{i}</text>"#,
                pos + CELL / 2.0,
                MARGIN - 8.0,
                status_color(status)
            );
            for j in 0..n {
                let fill = match self.cells[i][j] {
                    None => "#f2f2f2".to_owned(),
                    Some(t) => {
                        let shade = 40.0 + 160.0 * f64::from(t) / f64::from(latest);
                        format!("rgb({0:.0},{0:.0},255)", shade)
                    }
                };
                let title = self.cells[i][j]
                    .map(|t| format!("<title>first contact minute {t}</title>"))
                    .unwrap_or_default();
                let _ = writeln!(
                    svg,
                    r##"<rect x="{}" y="{pos}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#999">{title}</rect>"##,
                    MARGIN + CELL * j as f64,
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub fn status_color(status: HealthStatus) -> &'static str {
    match status {
        HealthStatus::NotAtRisk => "#2e9d3f",
        HealthStatus::AtRisk => "#2f5fd0",
        HealthStatus::Infected => "#d0342c",
    }
}

/// One map panel per snapshot: zone outlines and everyone's position,
/// coloured by their status at that moment.
pub struct Snapshot {
    pub title: String,
    pub positions: Vec<Point>,
    pub statuses: Vec<HealthStatus>,
}

pub fn snapshots_svg(zones: &[Zone], snaps: &[Snapshot]) -> String {
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (0.0f64, 0.0f64, 1.0f64, 1.0f64);
    for z in zones {
        min_x = min_x.min(z.bounds.x);
        min_y = min_y.min(z.bounds.y);
        max_x = max_x.max(z.bounds.max_x());
        max_y = max_y.max(z.bounds.max_y());
    }
    let panel_w = 360.0;
    let scale = panel_w / (max_x - min_x);
    let panel_h = (max_y - min_y) * scale;
    let width = panel_w + 20.0;
    let height = (panel_h + 40.0) * snaps.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, snap) in snaps.iter().enumerate() {
        let oy = k as f64 * (panel_h + 40.0) + 25.0;
        let tx = |x: f64| 10.0 + (x - min_x) * scale;
        // flip y so the map reads bottom-up
        let ty = |y: f64| oy + panel_h - (y - min_y) * scale;
        let _ = writeln!(
            svg,
            r#"<text x="10" y="{:.1}">{}</text>"#,
            oy - 8.0,
            snap.title
        );
        for z in zones {
            let dash = if z.kind == ZoneKind::Other {
                r#" stroke-dasharray="3,3""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"{dash}><title>{}</title></rect>"#,
                tx(z.bounds.x),
                ty(z.bounds.max_y()),
                z.bounds.width * scale,
                z.bounds.height * scale,
                z.name
            );
        }
        for (i, (p, s)) in snap.positions.iter().zip(&snap.statuses).enumerate() {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>P{i}</title></circle>"#,
                tx(p.x),
                ty(p.y),
                status_color(*s)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

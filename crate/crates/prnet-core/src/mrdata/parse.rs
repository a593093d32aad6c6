//! MR and station-registry CSV ingestion and emission.
//!
//! MR format: header row with `MRTime,IMSI` followed by seven repeated
//! station groups `RNCID_k,CellID_k,AsuLevel_k,SignalLevel_k,RSSI_k`, then
//! optional `Lat,Lon,Mode` label columns. Blank cells mark absent stations.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use thiserror::Error;

use super::{
    MRSample, Mode, StationId, StationReading, StationRegistry, MAX_STATIONS,
};
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("csv io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not match schema; missing columns: {0:?}")]
    HeaderMismatch(Vec<String>),
}

/// Expected column names; indices are resolved from the header at parse
/// time.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub time: String,
    pub imsi: String,
    pub rncid_prefix: String,
    pub cellid_prefix: String,
    pub asu_prefix: String,
    pub signal_prefix: String,
    pub rssi_prefix: String,
    pub lat: String,
    pub lon: String,
    pub mode: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            time: "MRTime".into(),
            imsi: "IMSI".into(),
            rncid_prefix: "RNCID".into(),
            cellid_prefix: "CellID".into(),
            asu_prefix: "AsuLevel".into(),
            signal_prefix: "SignalLevel".into(),
            rssi_prefix: "RSSI".into(),
            lat: "Lat".into(),
            lon: "Lon".into(),
            mode: "Mode".into(),
        }
    }
}

/// Time-sorted samples of one device.
#[derive(Debug, Clone)]
pub struct DeviceSeries {
    pub imsi: String,
    pub samples: Vec<MRSample>,
}

/// Counters for everything the parser dropped or flagged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub rows_total: usize,
    /// Serving station had an empty id or an RSSI of exactly zero.
    pub rows_dropped_noise: usize,
    /// Column-count or field-parse failure; row skipped.
    pub rows_malformed: usize,
    /// IMSIs whose rows were all dropped.
    pub empty_series: Vec<String>,
    /// Station references with no registry coordinate.
    pub unknown_station_refs: usize,
}

struct ResolvedSchema {
    time: usize,
    imsi: usize,
    // Per station slot: (rncid, cellid, asu, signal, rssi).
    stations: Vec<[usize; 5]>,
    lat: Option<usize>,
    lon: Option<usize>,
    mode: Option<usize>,
}

fn resolve_schema(header: &csv::StringRecord, schema: &ColumnSchema) -> Result<ResolvedSchema, ParseError> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let time = find(&schema.time);
    let imsi = find(&schema.imsi);
    if time.is_none() {
        missing.push(schema.time.clone());
    }
    if imsi.is_none() {
        missing.push(schema.imsi.clone());
    }
    let mut stations = Vec::with_capacity(MAX_STATIONS);
    for k in 1..=MAX_STATIONS {
        let cols = [
            format!("{}_{}", schema.rncid_prefix, k),
            format!("{}_{}", schema.cellid_prefix, k),
            format!("{}_{}", schema.asu_prefix, k),
            format!("{}_{}", schema.signal_prefix, k),
            format!("{}_{}", schema.rssi_prefix, k),
        ];
        let idx: Vec<Option<usize>> = cols.iter().map(|c| find(c)).collect();
        if idx.iter().any(|i| i.is_none()) {
            for (i, c) in idx.iter().zip(cols) {
                if i.is_none() {
                    missing.push(c);
                }
            }
        } else {
            stations.push([
                idx[0].unwrap(),
                idx[1].unwrap(),
                idx[2].unwrap(),
                idx[3].unwrap(),
                idx[4].unwrap(),
            ]);
        }
    }
    if !missing.is_empty() {
        return Err(ParseError::HeaderMismatch(missing));
    }
    Ok(ResolvedSchema {
        time: time.unwrap(),
        imsi: imsi.unwrap(),
        stations,
        lat: find(&schema.lat),
        lon: find(&schema.lon),
        mode: find(&schema.mode),
    })
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(epoch) = raw.parse::<i64>() {
        return Some(epoch);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y/%m/%d %H:%M:%S", "%Y/%m/%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize) -> &'a str {
    record.get(idx).unwrap_or("").trim()
}

fn parse_row(
    record: &csv::StringRecord,
    resolved: &ResolvedSchema,
    registry: &StationRegistry,
    report: &mut ParseReport,
) -> Option<(String, MRSample)> {
    let timestamp = parse_timestamp(field(record, resolved.time))?;
    let imsi = field(record, resolved.imsi);
    if imsi.is_empty() {
        return None;
    }

    let mut stations = Vec::new();
    for cols in &resolved.stations {
        let rnc = field(record, cols[0]);
        let cell = field(record, cols[1]);
        let rssi = field(record, cols[2 + 2]);
        if rnc.is_empty() || cell.is_empty() || rssi.is_empty() {
            continue;
        }
        let (Ok(rncid), Ok(cellid), Ok(rssi)) =
            (rnc.parse::<i64>(), cell.parse::<i64>(), rssi.parse::<f64>())
        else {
            return None;
        };
        let asu = field(record, cols[2]).parse::<f64>().unwrap_or(0.0);
        let signal = field(record, cols[3]).parse::<f64>().unwrap_or(0.0);
        let id = StationId::new(rncid, cellid);
        let position = registry.get(id);
        if position.is_none() {
            report.unknown_station_refs += 1;
        }
        stations.push(StationReading {
            id,
            position,
            asu_level: asu,
            signal_level: signal,
            rssi: rssi.clamp(-120.0, -30.0),
        });
    }

    // Noise rule: the serving slot must exist with a nonzero RSSI.
    let serving_rssi = field(record, resolved.stations[0][4]);
    if stations.is_empty() || serving_rssi.parse::<f64>().map(|v| v == 0.0).unwrap_or(true) {
        report.rows_dropped_noise += 1;
        return None;
    }

    // Keep the serving slot first, order the rest by descending RSSI.
    stations[1..].sort_by(|a, b| {
        b.rssi.partial_cmp(&a.rssi).unwrap().then_with(|| a.id.cmp(&b.id))
    });

    let position_label = match (resolved.lat, resolved.lon) {
        (Some(la), Some(lo)) => {
            let (la, lo) = (field(record, la), field(record, lo));
            match (la.parse::<f64>(), lo.parse::<f64>()) {
                (Ok(lat), Ok(lon)) => Some(GeoPoint::new(lat, lon)),
                _ => None,
            }
        }
        _ => None,
    };
    let mode_label = resolved.mode.and_then(|i| Mode::parse(field(record, i)));

    Some((
        imsi.to_string(),
        MRSample {
            timestamp,
            imsi: imsi.to_string(),
            stations,
            mode_label,
            position_label,
        },
    ))
}

/// Parse an MR CSV into per-device, time-sorted series. Malformed and
/// noisy rows are counted in the report rather than failing the parse;
/// devices whose rows were all dropped appear in `empty_series`.
pub fn parse_mr_csv(
    path: &Path,
    schema: &ColumnSchema,
    registry: &StationRegistry,
) -> Result<(Vec<DeviceSeries>, ParseReport), ParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let resolved = resolve_schema(&header, schema)?;

    let mut report = ParseReport::default();
    let mut groups: BTreeMap<String, Vec<MRSample>> = BTreeMap::new();
    let mut seen: Vec<String> = Vec::new();

    for result in reader.records() {
        report.rows_total += 1;
        let record = match result {
            Ok(r) => r,
            Err(_) => {
                report.rows_malformed += 1;
                continue;
            }
        };
        if record.len() != header.len() {
            report.rows_malformed += 1;
            continue;
        }
        if let Some(imsi) = record.get(resolved.imsi) {
            let imsi = imsi.trim().to_string();
            if !imsi.is_empty() && !seen.contains(&imsi) {
                seen.push(imsi);
            }
        }
        match parse_row(&record, &resolved, registry, &mut report) {
            Some((imsi, sample)) => groups.entry(imsi).or_default().push(sample),
            None => continue,
        }
    }

    for imsi in seen {
        if !groups.contains_key(&imsi) {
            report.empty_series.push(imsi);
        }
    }

    let series = groups
        .into_iter()
        .map(|(imsi, mut samples)| {
            samples.sort_by_key(|s| s.timestamp);
            DeviceSeries { imsi, samples }
        })
        .collect();
    Ok((series, report))
}

/// Emit samples in the MR CSV format, labels included when present.
pub fn write_mr_csv<'a>(
    path: &Path,
    samples: impl IntoIterator<Item = &'a MRSample>,
) -> Result<(), ParseError> {
    let schema = ColumnSchema::default();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![schema.time.clone(), schema.imsi.clone()];
    for k in 1..=MAX_STATIONS {
        header.push(format!("{}_{}", schema.rncid_prefix, k));
        header.push(format!("{}_{}", schema.cellid_prefix, k));
        header.push(format!("{}_{}", schema.asu_prefix, k));
        header.push(format!("{}_{}", schema.signal_prefix, k));
        header.push(format!("{}_{}", schema.rssi_prefix, k));
    }
    header.extend([schema.lat.clone(), schema.lon.clone(), schema.mode.clone()]);
    w.write_record(&header)?;

    for sample in samples {
        let mut row: Vec<String> = vec![sample.timestamp.to_string(), sample.imsi.clone()];
        for k in 0..MAX_STATIONS {
            match sample.stations.get(k) {
                Some(r) => {
                    row.push(r.id.rncid.to_string());
                    row.push(r.id.cellid.to_string());
                    row.push(format!("{:.0}", r.asu_level));
                    row.push(format!("{:.0}", r.signal_level));
                    row.push(format!("{:.2}", r.rssi));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        match sample.position_label {
            Some(p) => {
                row.push(format!("{:.7}", p.lat));
                row.push(format!("{:.7}", p.lon));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 2)),
        }
        row.push(sample.mode_label.map(|m| m.as_str().to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Registry CSV: `RNCID,CellID,Lat,Lon`.
pub fn read_station_registry(path: &Path) -> Result<StationRegistry, ParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(rnc), Some(cell), Some(lat), Some(lon)) =
        (find("RNCID"), find("CellID"), find("Lat"), find("Lon"))
    else {
        return Err(ParseError::HeaderMismatch(vec![
            "RNCID".into(),
            "CellID".into(),
            "Lat".into(),
            "Lon".into(),
        ]));
    };
    let mut registry = StationRegistry::new();
    for record in reader.records() {
        let record = record?;
        let (Ok(r), Ok(c), Ok(la), Ok(lo)) = (
            field(&record, rnc).parse::<i64>(),
            field(&record, cell).parse::<i64>(),
            field(&record, lat).parse::<f64>(),
            field(&record, lon).parse::<f64>(),
        ) else {
            continue;
        };
        registry.insert(StationId::new(r, c), GeoPoint::new(la, lo));
    }
    Ok(registry)
}

pub fn write_station_registry(path: &Path, registry: &StationRegistry) -> Result<(), ParseError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["RNCID", "CellID", "Lat", "Lon"])?;
    let mut entries: Vec<_> = registry.iter().collect();
    entries.sort_by_key(|(id, _)| *id);
    for (id, pos) in entries {
        w.write_record(&[
            id.rncid.to_string(),
            id.cellid.to_string(),
            format!("{:.7}", pos.lat),
            format!("{:.7}", pos.lon),
        ])?;
    }
    w.flush()?;
    Ok(())
}

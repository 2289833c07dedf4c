//! Waypoint CSV parsing and segmentation into per-vehicle, per-day
//! trajectories.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub const WAYPOINT_HEADER: [&str; 4] = ["vehicle_id", "timestamp", "lon", "lat"];

const SECONDS_PER_DAY: i64 = 86_400;

/// What to do with a row that fails to parse or validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Skip and count.
    #[default]
    Lenient,
    /// Abort with a format error.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub vehicle_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub t: i64,
    pub pos: GeoPoint,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedWaypoints {
    pub records: Vec<WaypointRecord>,
    pub skipped: usize,
}

/// A timestamped position within a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: i64,
    pub pos: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrajectory {
    pub vehicle_id: String,
    pub day: NaiveDate,
    /// Non-empty, non-decreasing in `t`.
    pub points: Vec<TrackPoint>,
}

/// Assigns timestamps to calendar days. The default is the UTC day; a
/// non-zero offset shifts the boundary to a fixed local time zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayBoundary {
    pub offset_hours: i32,
}

impl DayBoundary {
    pub fn day_of(&self, t: i64) -> NaiveDate {
        let days = (t + self.offset_hours as i64 * 3600).div_euclid(SECONDS_PER_DAY);
        NaiveDate::from_num_days_from_ce_opt(719_163 + days as i32)
            .expect("timestamp within chrono's date range")
    }
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    DateTime::parse_from_rfc3339(s.trim()).ok().map(|dt| dt.timestamp())
}

pub fn format_timestamp(t: i64) -> String {
    match DateTime::from_timestamp(t, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

fn parse_row(rec: &csv::ByteRecord) -> std::result::Result<WaypointRecord, String> {
    if rec.len() != 4 {
        return Err(format!("expected 4 fields, found {}", rec.len()));
    }
    let field = |i: usize| std::str::from_utf8(&rec[i]).map_err(|_| "invalid UTF-8".to_string());
    let vehicle_id = field(0)?.trim();
    if vehicle_id.is_empty() {
        return Err("empty vehicle_id".into());
    }
    let ts = field(1)?;
    let t = parse_timestamp(ts).ok_or_else(|| format!("unparseable timestamp {ts:?}"))?;
    let lon: f64 = field(2)?
        .trim()
        .parse()
        .map_err(|_| "unparseable longitude".to_string())?;
    let lat: f64 = field(3)?
        .trim()
        .parse()
        .map_err(|_| "unparseable latitude".to_string())?;
    let pos = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
    Ok(WaypointRecord {
        vehicle_id: vehicle_id.to_string(),
        t,
        pos,
    })
}

pub(crate) fn check_header(
    reader: &mut csv::Reader<impl Read>,
    expected: &[&str],
) -> Result<()> {
    let header = reader
        .byte_headers()
        .map_err(|e| Error::format(1, e.to_string()))?;
    let ok = header.len() == expected.len()
        && header
            .iter()
            .zip(expected)
            .all(|(h, e)| std::str::from_utf8(h).map(|h| h.trim()) == Ok(*e));
    if !ok {
        return Err(Error::format(
            1,
            format!("missing or wrong header, expected `{}`", expected.join(",")),
        ));
    }
    Ok(())
}

pub(crate) fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

/// Parse a waypoint CSV (`vehicle_id,timestamp,lon,lat`). Records come back
/// in file order.
pub fn parse_waypoints<R: Read>(source: R, mode: ParseMode) -> Result<ParsedWaypoints> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, &WAYPOINT_HEADER)?;
    let mut out = ParsedWaypoints::default();
    let mut rec = csv::ByteRecord::new();
    loop {
        let line = reader.position().line() as usize;
        match reader.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => match parse_row(&rec) {
                Ok(r) => out.records.push(r),
                Err(msg) if mode == ParseMode::Strict => return Err(Error::format(line, msg)),
                Err(msg) => {
                    log::debug!("skipping line {line}: {msg}");
                    out.skipped += 1;
                }
            },
            Err(e) if mode == ParseMode::Strict => return Err(Error::format(line, e.to_string())),
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(Error::format(line, e.to_string()));
                }
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

pub fn write_waypoints<'a, W, I>(sink: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a WaypointRecord>,
{
    let mut w = io::BufWriter::new(sink);
    writeln!(w, "{}", WAYPOINT_HEADER.join(","))?;
    for r in records {
        write_waypoint_row(&mut w, &r.vehicle_id, r.t, r.pos)?;
    }
    w.flush()
}

/// Write segmented trajectories back out as a waypoint CSV.
pub fn write_trajectories<W: Write>(sink: W, trajectories: &[RawTrajectory]) -> io::Result<()> {
    let mut w = io::BufWriter::new(sink);
    writeln!(w, "{}", WAYPOINT_HEADER.join(","))?;
    for tr in trajectories {
        for p in &tr.points {
            write_waypoint_row(&mut w, &tr.vehicle_id, p.t, p.pos)?;
        }
    }
    w.flush()
}

pub(crate) fn write_waypoint_row(
    w: &mut impl Write,
    vehicle_id: &str,
    t: i64,
    pos: GeoPoint,
) -> io::Result<()> {
    writeln!(w, "{},{},{},{}", vehicle_id, format_timestamp(t), pos.lon, pos.lat)
}

/// Group records by `(vehicle_id, day)` and order each group by time.
///
/// Output is sorted by vehicle id, then day. Records with equal timestamps
/// keep their input order.
pub fn segment_trajectories(
    records: Vec<WaypointRecord>,
    boundary: DayBoundary,
) -> Vec<RawTrajectory> {
    if records.is_empty() {
        return Vec::new();
    }
    let mut names: Vec<&str> = records.iter().map(|r| r.vehicle_id.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let rank: HashMap<&str, u32> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, i as u32))
        .collect();

    let mut keyed: Vec<(u32, NaiveDate, i64, u32)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (rank[r.vehicle_id.as_str()], boundary.day_of(r.t), r.t, i as u32))
        .collect();
    // Index is part of the key, so the unstable sort is still deterministic
    // and keeps ties in input order.
    keyed.sort_unstable();

    let mut out: Vec<RawTrajectory> = Vec::new();
    for (vid, day, _, idx) in keyed {
        let r = &records[idx as usize];
        let point = TrackPoint { t: r.t, pos: r.pos };
        match out.last_mut() {
            Some(last) if last.day == day && last.vehicle_id == names[vid as usize] => {
                last.points.push(point)
            }
            _ => out.push(RawTrajectory {
                vehicle_id: names[vid as usize].to_string(),
                day,
                points: vec![point],
            }),
        }
    }
    out
}

//! Stop detection and conversion of stops into collapsed cell sequences.
//!
//! The detector is a sequential, centroid-anchored clustering: a cluster
//! keeps absorbing points that fall within `radius` of its running centroid.
//! Up to `max_noise_run` consecutive points outside the radius are treated as
//! GPS outliers and ignored; one more closes the cluster, and scanning
//! restarts at the first of those outliers. A cluster is reported as a stop
//! when its inliers span at least `min_duration` seconds.

use std::io::{self, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{cell_of_geo, distance_m, CellId, GeoPoint, GridSpec};
use crate::ingest::{format_timestamp, RawTrajectory, TrackPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopParams {
    /// Minimum dwell in seconds.
    pub min_duration: i64,
    /// Cluster radius in meters around the running centroid.
    pub radius: f64,
    /// Consecutive outliers tolerated inside a cluster.
    pub max_noise_run: usize,
}

impl Default for StopParams {
    fn default() -> Self {
        StopParams {
            min_duration: 300,
            radius: 50.0,
            max_noise_run: 2,
        }
    }
}

impl StopParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_duration <= 0 {
            return Err(Error::Config("min_duration must be > 0".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Config("radius must be > 0".into()));
        }
        Ok(())
    }

    /// Time gap between consecutive points that closes any open cluster.
    pub fn max_gap(&self) -> i64 {
        2 * self.min_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub centroid: GeoPoint,
    pub t_start: i64,
    pub t_end: i64,
    pub n_points: usize,
}

impl StopEvent {
    pub fn duration(&self) -> i64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSequence {
    pub vehicle_id: String,
    pub day: NaiveDate,
    /// No two adjacent entries are equal.
    pub cells: Vec<CellId>,
}

struct Cluster {
    t_start: i64,
    t_last: i64,
    sum_lon: f64,
    sum_lat: f64,
    n: usize,
}

impl Cluster {
    fn start(p: &TrackPoint) -> Self {
        Cluster {
            t_start: p.t,
            t_last: p.t,
            sum_lon: p.pos.lon,
            sum_lat: p.pos.lat,
            n: 1,
        }
    }

    fn centroid(&self) -> GeoPoint {
        GeoPoint {
            lon: self.sum_lon / self.n as f64,
            lat: self.sum_lat / self.n as f64,
        }
    }

    fn absorb(&mut self, p: &TrackPoint) {
        self.t_last = p.t;
        self.sum_lon += p.pos.lon;
        self.sum_lat += p.pos.lat;
        self.n += 1;
    }

    fn into_stop(self, params: &StopParams) -> Option<StopEvent> {
        let stop = StopEvent {
            centroid: self.centroid(),
            t_start: self.t_start,
            t_end: self.t_last,
            n_points: self.n,
        };
        (stop.n_points >= 2 && stop.duration() >= params.min_duration).then_some(stop)
    }
}

/// Detect dwells in a time-ordered trajectory.
pub fn detect_stops(traj: &RawTrajectory, params: &StopParams) -> Vec<StopEvent> {
    detect_stops_in(&traj.points, params)
}

pub fn detect_stops_in(points: &[TrackPoint], params: &StopParams) -> Vec<StopEvent> {
    let mut stops = Vec::new();
    let max_gap = params.max_gap();
    let mut start = 0;
    while start < points.len() {
        let mut cluster = Cluster::start(&points[start]);
        let mut centroid = cluster.centroid();
        // Index of the first outlier in the current run, if any.
        let mut run_start: Option<usize> = None;
        let mut run_len = 0;
        let mut next = points.len();
        let mut i = start + 1;
        while i < points.len() {
            let p = &points[i];
            if p.t - points[i - 1].t > max_gap {
                next = run_start.unwrap_or(i);
                break;
            }
            if distance_m(p.pos, centroid) <= params.radius {
                cluster.absorb(p);
                centroid = cluster.centroid();
                run_start = None;
                run_len = 0;
            } else {
                run_start.get_or_insert(i);
                run_len += 1;
                if run_len > params.max_noise_run {
                    next = run_start.unwrap_or(i);
                    break;
                }
            }
            i += 1;
        }
        if i == points.len() {
            // Trailing outliers get their own chance to form a stop.
            next = run_start.unwrap_or(points.len());
        }
        if let Some(stop) = cluster.into_stop(params) {
            stops.push(stop);
        }
        start = next;
    }
    stops
}

/// Map stop centroids to grid cells and collapse runs of equal cells.
pub fn stops_to_cell_sequence(
    vehicle_id: &str,
    day: NaiveDate,
    stops: &[StopEvent],
    grid: &GridSpec,
) -> Result<CellSequence> {
    let mut cells: Vec<CellId> = Vec::with_capacity(stops.len());
    for s in stops {
        let c = cell_of_geo(s.centroid, grid)?;
        if cells.last() != Some(&c) {
            cells.push(c);
        }
    }
    Ok(CellSequence {
        vehicle_id: vehicle_id.to_string(),
        day,
        cells,
    })
}

pub const STOP_DUMP_HEADER: &str = "vehicle_id,day,t_start,t_end,lon,lat,n_points";

pub fn write_stop_rows(
    w: &mut impl Write,
    vehicle_id: &str,
    day: NaiveDate,
    stops: &[StopEvent],
) -> io::Result<()> {
    for s in stops {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            vehicle_id,
            day,
            format_timestamp(s.t_start),
            format_timestamp(s.t_end),
            s.centroid.lon,
            s.centroid.lat,
            s.n_points
        )?;
    }
    Ok(())
}

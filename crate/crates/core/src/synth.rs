//! Synthetic worlds of labeled places and agents that visit them.
//!
//! Each agent lives at a home point and only visits places within its
//! activity radius. Successive visits follow a Markov grammar over place
//! categories, so places of one category share context distributions.

use std::io::{self, Write};

use chrono::{NaiveDate, NaiveTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{cell_centroid, cell_of_geo, distance_m, GeoPoint, GridSpec, EARTH_RADIUS_M};
use crate::ingest::{write_waypoint_row, TrackPoint, WAYPOINT_HEADER};
use crate::poi::POI_HEADER;

const DWELL_CADENCE_S: i64 = 30;
const MIN_DWELL_S: i64 = 360;
const TRAVEL_CADENCE_S: i64 = 60;
const TRAVEL_SPEED_MPS: f64 = 10.0;
/// Travel waypoints closer than this to either endpoint are dropped.
const TRAVEL_CLEARANCE_M: f64 = 150.0;
const PLACEMENT_ATTEMPTS: usize = 10_000;
const SECONDS_PER_DAY: i64 = 86_400;

const CATEGORIES: [(&str, i64); 10] = [
    ("pharmacy", 2101),
    ("restaurant", 2301),
    ("fuel", 5250),
    ("supermarket", 2501),
    ("bar", 2305),
    ("school", 2082),
    ("bank", 2601),
    ("hotel", 2401),
    ("cafe", 2303),
    ("hospital", 2110),
];

fn category_name(k: usize) -> (String, i64) {
    match CATEGORIES.get(k) {
        Some((name, code)) => (name.to_string(), *code),
        None => (format!("category{k}"), 9000 + k as i64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub places_per_category: usize,
    /// Side of the square world, meters.
    pub world_extent_m: f64,
    pub n_agents: usize,
    pub days: usize,
    pub agent_activity_radius_m: f64,
    pub visits_per_day_mean: f64,
    /// Inclusive dwell range in minutes; dwells are at least 6 minutes.
    pub dwell_minutes_range: (f64, f64),
    pub gps_noise_sigma_m: f64,
    pub seed: u64,
    /// Center of the world.
    pub origin: GeoPoint,
    pub start_day: NaiveDate,
    /// Places are snapped to centroids of this grid and kept two cells apart.
    pub cell_size_m: f64,
    /// Weight of the identity in the category transition matrix.
    pub grammar_affinity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_categories: 4,
            places_per_category: 50,
            world_extent_m: 20_000.0,
            n_agents: 100,
            days: 60,
            agent_activity_radius_m: 5_000.0,
            visits_per_day_mean: 7.0,
            dwell_minutes_range: (6.0, 30.0),
            gps_noise_sigma_m: 5.0,
            seed: 1,
            origin: GeoPoint { lon: 23.7275, lat: 37.9838 },
            start_day: NaiveDate::from_ymd_opt(2017, 6, 1).expect("valid date"),
            cell_size_m: GridSpec::DEFAULT_CELL_SIZE,
            grammar_affinity: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_categories == 0
            || self.places_per_category == 0
            || self.n_agents == 0
            || self.days == 0
        {
            return bad("category, place, agent and day counts must be >= 1");
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.world_extent_m) || !positive(self.agent_activity_radius_m) {
            return bad("world extent and activity radius must be > 0");
        }
        if !positive(self.cell_size_m) {
            return bad("cell size must be > 0");
        }
        if !(self.visits_per_day_mean.is_finite() && self.visits_per_day_mean > 0.0) {
            return bad("visits per day mean must be > 0");
        }
        let (lo, hi) = self.dwell_minutes_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && hi * 60.0 >= MIN_DWELL_S as f64) {
            return bad("dwell range must be ordered and reach at least 6 minutes");
        }
        if !(self.gps_noise_sigma_m.is_finite() && self.gps_noise_sigma_m >= 0.0) {
            return bad("gps noise sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.grammar_affinity) {
            return bad("grammar affinity must lie in [0, 1]");
        }
        self.origin.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub id: String,
    pub pos: GeoPoint,
    /// Index into [`World::categories`].
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub home: GeoPoint,
    pub activity_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub categories: Vec<String>,
    pub category_codes: Vec<i64>,
    pub places: Vec<Place>,
    pub agents: Vec<Agent>,
    /// Row-stochastic category transition matrix.
    pub transitions: Vec<Vec<f64>>,
}

impl World {
    pub fn category_of(&self, place: usize) -> &str {
        &self.categories[self.places[place].category]
    }

    /// `place_id,lon,lat,category,cell_morton`
    pub fn write_ground_truth(&self, sink: impl Write, grid: &GridSpec) -> Result<()> {
        let mut w = io::BufWriter::new(sink);
        writeln!(w, "place_id,lon,lat,category,cell_morton")?;
        for p in &self.places {
            let cell = cell_of_geo(p.pos, grid)?;
            writeln!(
                w,
                "{},{},{},{},{}",
                p.id, p.pos.lon, p.pos.lat, self.categories[p.category], cell
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Places as a POI table loadable by [`crate::poi::load_pois`].
    pub fn write_pois(&self, sink: impl Write) -> Result<()> {
        let mut w = io::BufWriter::new(sink);
        writeln!(w, "{}", POI_HEADER.join(","))?;
        for p in &self.places {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.id, p.pos.lon, p.pos.lat, self.category_codes[p.category], self.categories[p.category]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Local east/north offset around `origin`, meters.
fn offset(origin: GeoPoint, east: f64, north: f64) -> GeoPoint {
    GeoPoint {
        lon: origin.lon + (east / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees(),
        lat: origin.lat + (north / EARTH_RADIUS_M).to_degrees(),
    }
}

fn uniform_in_world(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> GeoPoint {
    let h = cfg.world_extent_m / 2.0;
    let east = rng.random_range(-h..=h);
    let north = rng.random_range(-h..=h);
    offset(cfg.origin, east, north)
}

fn transition_matrix(rng: &mut ChaCha8Rng, k: usize, affinity: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| (1.0 - affinity) * x / total).collect::<Vec<f64>>()
        })
        .enumerate()
        .map(|(i, mut row)| {
            row[i] += affinity;
            row
        })
        .collect()
}

pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let grid = GridSpec::new(cfg.cell_size_m)?;
    let min_sep = 2.0 * cfg.cell_size_m;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_places = cfg.n_categories * cfg.places_per_category;

    let mut places: Vec<Place> = Vec::with_capacity(n_places);
    for i in 0..n_places {
        let category = i / cfg.places_per_category;
        let mut attempts = 0;
        let pos = loop {
            if attempts == PLACEMENT_ATTEMPTS {
                return Err(Error::Config(format!(
                    "could not place {n_places} places {min_sep} m apart in a {} m world",
                    cfg.world_extent_m
                )));
            }
            attempts += 1;
            let cand = cell_centroid(cell_of_geo(uniform_in_world(&mut rng, cfg), &grid)?, &grid);
            if places.iter().all(|p| distance_m(p.pos, cand) >= min_sep) {
                break cand;
            }
        };
        places.push(Place {
            id: format!("p{i:05}"),
            pos,
            category,
        });
    }

    let agents = (0..cfg.n_agents)
        .map(|i| Agent {
            id: format!("a{i:05}"),
            home: uniform_in_world(&mut rng, cfg),
            activity_radius_m: cfg.agent_activity_radius_m,
        })
        .collect();

    let transitions = transition_matrix(&mut rng, cfg.n_categories, cfg.grammar_affinity);
    let (categories, category_codes) = (0..cfg.n_categories).map(category_name).unzip();
    Ok(World {
        categories,
        category_codes,
        places,
        agents,
        transitions,
    })
}

/// One ground-truth visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub agent: usize,
    pub day: NaiveDate,
    pub place: usize,
    pub t_arrive: i64,
    pub t_depart: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub n_waypoints: u64,
    pub visits: Vec<Visit>,
    /// Agents with no place within their activity radius.
    pub skipped_agents: Vec<String>,
}

struct AgentTrace {
    points: Vec<TrackPoint>,
    visits: Vec<Visit>,
    skipped: bool,
}

struct Itinerary<'a> {
    world: &'a World,
    reachable: Vec<usize>,
    /// Reachable place count per category.
    per_category: Vec<usize>,
}

impl Itinerary<'_> {
    /// Next place, weighted by the grammar and never equal to `current`.
    fn next(&self, rng: &mut ChaCha8Rng, current: Option<usize>) -> Option<usize> {
        let w = self.world;
        let weights: Vec<f64> = self
            .reachable
            .iter()
            .map(|&p| {
                if Some(p) == current {
                    return 0.0;
                }
                let cat = w.places[p].category;
                let mut avail = self.per_category[cat];
                if current.is_some_and(|c| w.places[c].category == cat) {
                    avail -= 1;
                }
                let row = match current {
                    Some(c) => w.transitions[w.places[c].category][cat],
                    None => 1.0,
                };
                row / avail as f64
            })
            .collect();
        let dist = WeightedIndex::new(&weights).ok()?;
        Some(self.reachable[dist.sample(rng)])
    }
}

fn jitter(rng: &mut ChaCha8Rng, noise: Option<&Normal<f64>>, pos: GeoPoint) -> GeoPoint {
    match noise {
        Some(n) => offset(pos, n.sample(rng), n.sample(rng)),
        None => pos,
    }
}

fn simulate_agent(world: &World, cfg: &SynthConfig, index: usize) -> Result<AgentTrace> {
    let agent = &world.agents[index];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);

    let reachable: Vec<usize> = (0..world.places.len())
        .filter(|&p| distance_m(agent.home, world.places[p].pos) <= agent.activity_radius_m)
        .collect();
    if reachable.is_empty() {
        return Ok(AgentTrace {
            points: Vec::new(),
            visits: Vec::new(),
            skipped: true,
        });
    }
    let mut per_category = vec![0; world.categories.len()];
    for &p in &reachable {
        per_category[world.places[p].category] += 1;
    }
    let itinerary = Itinerary {
        world,
        reachable,
        per_category,
    };

    let visits_dist = Poisson::new(cfg.visits_per_day_mean)
        .map_err(|e| Error::Config(format!("visits per day: {e}")))?;
    let noise = if cfg.gps_noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, cfg.gps_noise_sigma_m).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let dwell_lo = (cfg.dwell_minutes_range.0 * 60.0).round() as i64;
    let dwell_hi = (cfg.dwell_minutes_range.1 * 60.0).round() as i64;

    let mut points = Vec::new();
    let mut visits = Vec::new();
    for d in 0..cfg.days {
        let day = cfg.start_day + chrono::Days::new(d as u64);
        let midnight = day.and_time(NaiveTime::MIN).and_utc().timestamp();
        let day_end = midnight + SECONDS_PER_DAY - 1;
        let n_visits = visits_dist.sample(&mut rng) as usize;
        let mut t = midnight + 6 * 3600 + rng.random_range(0..=3600);
        let mut current: Option<usize> = None;
        for _ in 0..n_visits {
            let Some(next) = itinerary.next(&mut rng, current) else {
                break;
            };
            let dwell = rng.random_range(dwell_lo..=dwell_hi).max(MIN_DWELL_S);
            let dwell = (dwell + DWELL_CADENCE_S - 1) / DWELL_CADENCE_S * DWELL_CADENCE_S;
            let target = world.places[next].pos;

            let mut travel_points = Vec::new();
            let mut arrive = t;
            if let Some(prev) = current {
                let from = world.places[prev].pos;
                let dist = distance_m(from, target);
                let secs = ((dist / TRAVEL_SPEED_MPS).ceil() as i64).max(TRAVEL_CADENCE_S);
                arrive = t + (secs + DWELL_CADENCE_S - 1) / DWELL_CADENCE_S * DWELL_CADENCE_S;
                let mut tt = t + TRAVEL_CADENCE_S;
                while tt < arrive {
                    let f = (tt - t) as f64 / (arrive - t) as f64;
                    let along = GeoPoint {
                        lon: from.lon + f * (target.lon - from.lon),
                        lat: from.lat + f * (target.lat - from.lat),
                    };
                    if distance_m(along, from) > TRAVEL_CLEARANCE_M
                        && distance_m(along, target) > TRAVEL_CLEARANCE_M
                    {
                        travel_points.push(TrackPoint {
                            t: tt,
                            pos: jitter(&mut rng, noise.as_ref(), along),
                        });
                    }
                    tt += TRAVEL_CADENCE_S;
                }
            }
            let depart = arrive + dwell;
            if depart > day_end {
                break;
            }
            points.extend(travel_points);
            let mut tt = arrive;
            while tt <= depart {
                points.push(TrackPoint {
                    t: tt,
                    pos: jitter(&mut rng, noise.as_ref(), target),
                });
                tt += DWELL_CADENCE_S;
            }
            visits.push(Visit {
                agent: index,
                day,
                place: next,
                t_arrive: arrive,
                t_depart: depart,
            });
            current = Some(next);
            t = depart;
        }
    }
    Ok(AgentTrace {
        points,
        visits,
        skipped: false,
    })
}

/// Simulate every agent and write the waypoint CSV, ordered by agent then
/// time. Output is identical for a fixed seed regardless of thread count.
pub fn generate_trajectories(world: &World, cfg: &SynthConfig, sink: impl Write) -> Result<SynthSummary> {
    cfg.validate()?;
    let traces: Vec<AgentTrace> = (0..world.agents.len())
        .into_par_iter()
        .map(|i| simulate_agent(world, cfg, i))
        .collect::<Result<_>>()?;

    let mut w = io::BufWriter::new(sink);
    writeln!(w, "{}", WAYPOINT_HEADER.join(","))?;
    let mut summary = SynthSummary::default();
    for (agent, trace) in world.agents.iter().zip(traces) {
        if trace.skipped {
            log::warn!("agent {} has no place within {} m; skipped", agent.id, agent.activity_radius_m);
            summary.skipped_agents.push(agent.id.clone());
            continue;
        }
        for p in &trace.points {
            write_waypoint_row(&mut w, &agent.id, p.t, p.pos)?;
        }
        summary.n_waypoints += trace.points.len() as u64;
        summary.visits.extend(trace.visits);
    }
    w.flush()?;
    Ok(summary)
}

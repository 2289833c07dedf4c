use cellvec::corpus::{build_vocab, encode_corpus};
use cellvec::geo::cell_of_geo;
use cellvec::ingest::{parse_waypoints, segment_trajectories, DayBoundary, ParseMode, RawTrajectory};
use cellvec::stops::{detect_stops, stops_to_cell_sequence, StopEvent, StopParams};
use cellvec::synth::{generate_trajectories, generate_world, SynthConfig, SynthSummary, World};
use cellvec::GridSpec;
use proptest::prelude::*;

fn simulate(cfg: &SynthConfig) -> (World, SynthSummary, Vec<RawTrajectory>, usize) {
    let world = generate_world(cfg).unwrap();
    let mut csv = Vec::new();
    let summary = generate_trajectories(&world, cfg, &mut csv).unwrap();
    let records = parse_waypoints(csv.as_slice(), ParseMode::Strict).unwrap().records;
    let n = records.len();
    (world, summary, segment_trajectories(records, DayBoundary::default()), n)
}

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        places_per_category: 15,
        world_extent_m: 6_000.0,
        n_agents: 1,
        days: 1,
        agent_activity_radius_m: 3_000.0,
        visits_per_day_mean: 3.0,
        gps_noise_sigma_m: 0.0,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn noiseless_three_visit_day_yields_three_stops_at_visited_cells() {
    let grid = GridSpec::default();
    let (world, summary, trajs, _) = (1..500)
        .map(|seed| simulate(&small(seed)))
        .find(|(_, s, _, _)| s.visits.len() == 3)
        .expect("some seed produces a three-visit day");
    assert_eq!(trajs.len(), 1);
    let stops = detect_stops(&trajs[0], &StopParams::default());
    assert_eq!(stops.len(), 3);
    for (stop, visit) in stops.iter().zip(&summary.visits) {
        let expected = cell_of_geo(world.places[visit.place].pos, &grid).unwrap();
        assert_eq!(cell_of_geo(stop.centroid, &grid).unwrap(), expected);
        assert_eq!((stop.t_start, stop.t_end), (visit.t_arrive, visit.t_depart));
    }
    let seq = stops_to_cell_sequence(&trajs[0].vehicle_id, trajs[0].day, &stops, &grid).unwrap();
    assert_eq!(seq.cells.len(), 3);
}

fn overlaps(stop: &StopEvent, lo: i64, hi: i64) -> bool {
    stop.t_start <= hi && stop.t_end >= lo
}

#[test]
fn noisy_visits_are_recovered_in_the_right_cell() {
    let cfg = SynthConfig {
        n_agents: 20,
        days: 10,
        gps_noise_sigma_m: 5.0,
        seed: 11,
        ..SynthConfig::default()
    };
    let grid = GridSpec::default();
    let (world, summary, trajs, _) = simulate(&cfg);
    let stops: Vec<(String, chrono::NaiveDate, Vec<StopEvent>)> = trajs
        .iter()
        .map(|t| (t.vehicle_id.clone(), t.day, detect_stops(t, &StopParams::default())))
        .collect();
    let agent_ids: Vec<&str> = world.agents.iter().map(|a| a.id.as_str()).collect();
    let recovered = summary
        .visits
        .iter()
        .filter(|v| {
            let cell = cell_of_geo(world.places[v.place].pos, &grid).unwrap();
            stops
                .iter()
                .filter(|(id, day, _)| id == agent_ids[v.agent] && *day == v.day)
                .flat_map(|(_, _, s)| s)
                .any(|s| overlaps(s, v.t_arrive, v.t_depart) && cell_of_geo(s.centroid, &grid).unwrap() == cell)
        })
        .count();
    let rate = recovered as f64 / summary.visits.len() as f64;
    assert!(summary.visits.len() > 1000);
    assert!(rate >= 0.99, "recovered {recovered} of {} visits", summary.visits.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pipeline_conserves_points_and_collapses_runs(
        seed in 0u64..10_000,
        agents in 1usize..6,
        days in 1usize..4,
        noise in 0.0f64..15.0,
        min_count in 1u64..4,
    ) {
        let cfg = SynthConfig {
            n_agents: agents,
            days,
            gps_noise_sigma_m: noise,
            seed,
            ..small(seed)
        };
        let grid = GridSpec::default();
        let (_, summary, trajs, n_records) = simulate(&cfg);
        prop_assert_eq!(n_records as u64, summary.n_waypoints);
        prop_assert_eq!(trajs.iter().map(|t| t.points.len()).sum::<usize>(), n_records);

        let mut seqs = Vec::new();
        for t in &trajs {
            prop_assert!(t.points.windows(2).all(|w| w[0].t <= w[1].t));
            let stops = detect_stops(t, &StopParams::default());
            for s in &stops {
                prop_assert!(s.t_start >= t.points[0].t && s.t_end <= t.points.last().unwrap().t);
                prop_assert!(s.duration() >= StopParams::default().min_duration);
            }
            prop_assert!(stops.windows(2).all(|w| w[0].t_end <= w[1].t_start));
            let seq = stops_to_cell_sequence(&t.vehicle_id, t.day, &stops, &grid).unwrap();
            prop_assert!(seq.cells.len() <= stops.len());
            prop_assert!(seq.cells.windows(2).all(|w| w[0] != w[1]));
            seqs.push(seq.cells);
        }

        if let Ok(vocab) = build_vocab(seqs.iter().map(Vec::as_slice), min_count) {
            let v = vocab.len() as u32;
            let corpus = encode_corpus(seqs.iter().map(Vec::as_slice), vocab);
            for s in &corpus.sequences {
                prop_assert!(s.len() >= 2);
                prop_assert!(s.iter().all(|&i| i < v));
                prop_assert!(s.windows(2).all(|w| w[0] != w[1]));
            }
        }
    }
}

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cellvec::analytics::{
    category_similarity_test, decay_fits, empirical_variogram, neighbor_report, pairwise_decay,
    sample_cells, write_pairs_csv, DecayResult, DistanceRange, Population,
};
use cellvec::corpus::{
    build_vocab, corpus_stats, encode_corpus, length_stats, read_sequences, write_sequences, Vocab,
};
use cellvec::embed::{load_embeddings_from, save_embeddings_to, sidecar_path, train_sgns_with_report, EmbeddingModel};
use cellvec::ingest::{parse_waypoints, segment_trajectories, write_trajectories, RawTrajectory};
use cellvec::poi::{label_cells, load_pois, CellLabelMap};
use cellvec::stops::{detect_stops, stops_to_cell_sequence, write_stop_rows, STOP_DUMP_HEADER};
use cellvec::synth::{generate_trajectories, generate_world};
use cellvec::{CellId, DistanceMetric, GridSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult, PathContext};
use crate::manifest::{digest, relative_to, RunManifest};
use crate::svg;

pub const WAYPOINTS: &str = "waypoints.csv";
pub const POIS: &str = "pois.csv";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const VISITS: &str = "visits.csv";
pub const SEQUENCES: &str = "sequences.txt";
pub const STOPS: &str = "stops.csv";
pub const VOCAB: &str = "vocab.txt";
pub const CORPUS: &str = "corpus.txt";
pub const EMBEDDINGS: &str = "embeddings.txt";

/// Largest number of points drawn in a decay scatter plot.
const SVG_MAX_POINTS: usize = 20_000;

/// One subcommand: its inputs, its parameters and how to run it.
pub trait Stage: Serialize + DeserializeOwned + Clone {
    const NAME: &'static str;

    fn out_dir(&self) -> Option<&Path>;
    /// Input path fields, rebased when recorded in a manifest.
    fn paths_mut(&mut self) -> Vec<&mut PathBuf>;
    /// Files read by the stage, checked before running.
    fn input_files(&self) -> CliResult<Vec<PathBuf>>;
    fn seed(&self) -> Option<u64> {
        None
    }
    /// Run and return the names of the files written to `out`.
    fn execute(&self, out: &Path) -> CliResult<Vec<String>>;
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

fn existing(path: &Path) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).at(path)
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).at(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).at(path)
}

/// Run a stage into `out` and write its manifest.
pub fn run_stage<S: Stage>(cmd: &S, out: &Path) -> CliResult<RunManifest> {
    let inputs = cmd.input_files()?;
    fs::create_dir_all(out).at(out)?;
    let input_digests = inputs
        .iter()
        .map(|p| digest(p, out))
        .collect::<CliResult<Vec<_>>>()?;
    log::info!("{}: writing to {}", S::NAME, out.display());
    let mut written = cmd.execute(out)?;
    written.sort();
    written.dedup();
    let outputs = written
        .iter()
        .map(|name| digest(&out.join(name), out))
        .collect::<CliResult<Vec<_>>>()?;

    let mut recorded = cmd.clone();
    for p in recorded.paths_mut() {
        *p = relative_to(p, out);
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: S::NAME.to_string(),
        seed: cmd.seed(),
        args: serde_json::to_value(&recorded).expect("arguments serialize"),
        inputs: input_digests,
        outputs,
    };
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_cli_stage<S: Stage>(cmd: &S) -> CliResult<RunManifest> {
    let out = cmd
        .out_dir()
        .ok_or_else(|| CliError::Usage("missing required option --out-dir".into()))?
        .to_path_buf();
    run_stage(cmd, &out)
}

/// Re-run a recorded stage. Relative inputs resolve against `manifest_dir`.
pub fn replay<S: Stage>(m: &RunManifest, manifest_dir: &Path, out: &Path) -> CliResult<RunManifest> {
    let mut cmd: S = serde_json::from_value(m.args.clone())
        .map_err(|e| CliError::Invalid(format!("manifest arguments for {}: {e}", S::NAME)))?;
    for p in cmd.paths_mut() {
        if p.is_relative() {
            *p = manifest_dir.join(&*p);
        }
    }
    run_stage(&cmd, out)
}

fn load_model(path: &Path) -> CliResult<EmbeddingModel> {
    load_embeddings_from(path).at(path)
}

fn model_files(model: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = vec![existing(model)?];
    let side = sidecar_path(model);
    if side.is_file() {
        files.push(side);
    }
    Ok(files)
}

fn load_labels(pois: &Path, grid: &GridSpec) -> CliResult<CellLabelMap> {
    let parsed = load_pois(open(pois)?, Default::default()).at(pois)?;
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} malformed POI rows", pois.display(), parsed.skipped);
    }
    label_cells(&parsed.records, grid).at(pois)
}

fn read_trajectories(input: &Path, opts: &IngestOpts) -> CliResult<(Vec<RawTrajectory>, usize, usize)> {
    let parsed = parse_waypoints(open(input)?, opts.mode()).at(input)?;
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} malformed rows", input.display(), parsed.skipped);
    }
    let n = parsed.records.len();
    Ok((segment_trajectories(parsed.records, opts.boundary()), n, parsed.skipped))
}

impl Stage for SynthCmd {
    const NAME: &'static str = "synth";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        Vec::new()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        Ok(Vec::new())
    }

    fn seed(&self) -> Option<u64> {
        Some(self.synth.world_seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let grid = self.grid.grid()?;
        let cfg = self.synth.config(&self.grid);
        let world = generate_world(&cfg)?;

        let wp = out.join(WAYPOINTS);
        let summary = generate_trajectories(&world, &cfg, BufWriter::new(create(&wp)?)).at(&wp)?;
        let pois = out.join(POIS);
        world.write_pois(create(&pois)?).at(&pois)?;
        let gt = out.join(GROUND_TRUTH);
        world.write_ground_truth(create(&gt)?, &grid).at(&gt)?;

        let vp = out.join(VISITS);
        let mut w = BufWriter::new(create(&vp)?);
        let rows = (|| -> std::io::Result<()> {
            writeln!(w, "vehicle_id,day,place_id,category,t_arrive,t_depart")?;
            for v in &summary.visits {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    world.agents[v.agent].id,
                    v.day,
                    world.places[v.place].id,
                    world.category_of(v.place),
                    v.t_arrive,
                    v.t_depart
                )?;
            }
            w.flush()
        })();
        rows.at(&vp)?;

        log::info!(
            "synth: {} places, {} waypoints, {} visits, {} agents skipped",
            world.places.len(),
            summary.n_waypoints,
            summary.visits.len(),
            summary.skipped_agents.len()
        );
        write_json(
            &out.join("synth_summary.json"),
            &json!({
                "n_places": world.places.len(),
                "n_agents": world.agents.len(),
                "categories": world.categories,
                "transitions": world.transitions,
                "n_waypoints": summary.n_waypoints,
                "n_visits": summary.visits.len(),
                "skipped_agents": summary.skipped_agents,
            }),
        )?;
        Ok([WAYPOINTS, POIS, GROUND_TRUTH, VISITS, "synth_summary.json"].map(String::from).to_vec())
    }
}

impl Stage for IngestCmd {
    const NAME: &'static str = "ingest";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        self.input.iter_mut().collect()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        Ok(vec![existing(required(&self.input, "input")?)?])
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let input = required(&self.input, "input")?;
        let (trajs, records, skipped) = read_trajectories(input, &self.ingest)?;
        let path = out.join(WAYPOINTS);
        write_trajectories(BufWriter::new(create(&path)?), &trajs).at(&path)?;
        let vehicles: BTreeSet<&str> = trajs.iter().map(|t| t.vehicle_id.as_str()).collect();
        log::info!("ingest: {records} records, {skipped} skipped, {} vehicle-days", trajs.len());
        write_json(
            &out.join("ingest_report.json"),
            &json!({
                "records": records,
                "skipped": skipped,
                "vehicles": vehicles.len(),
                "vehicle_days": trajs.len(),
            }),
        )?;
        Ok(vec![WAYPOINTS.into(), "ingest_report.json".into()])
    }
}

impl Stage for StopsCmd {
    const NAME: &'static str = "stops";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        self.input.iter_mut().collect()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        Ok(vec![existing(required(&self.input, "input")?)?])
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let input = required(&self.input, "input")?;
        let params = self.stops.params();
        params.validate()?;
        let grid = self.grid.grid()?;
        let (trajs, records, skipped) = read_trajectories(input, &self.ingest)?;

        let stops_path = out.join(STOPS);
        let mut stop_sink = BufWriter::new(create(&stops_path)?);
        writeln!(stop_sink, "{STOP_DUMP_HEADER}").at(&stops_path)?;
        let mut sequences = Vec::new();
        let mut n_stops = 0usize;
        for t in &trajs {
            let stops = detect_stops(t, &params);
            n_stops += stops.len();
            write_stop_rows(&mut stop_sink, &t.vehicle_id, t.day, &stops).at(&stops_path)?;
            let seq = stops_to_cell_sequence(&t.vehicle_id, t.day, &stops, &grid)?;
            if !seq.cells.is_empty() {
                sequences.push(seq.cells);
            }
        }
        stop_sink.flush().at(&stops_path)?;

        let seq_path = out.join(SEQUENCES);
        write_sequences(create(&seq_path)?, sequences.iter().map(Vec::as_slice)).at(&seq_path)?;
        let stats = length_stats(sequences.iter().map(Vec::len)).ok();
        log::info!(
            "stops: {records} records, {} vehicle-days, {n_stops} stops, {} sequences",
            trajs.len(),
            sequences.len()
        );
        write_json(
            &out.join("stops_report.json"),
            &json!({
                "records": records,
                "skipped": skipped,
                "vehicle_days": trajs.len(),
                "stops": n_stops,
                "sequences": sequences.len(),
                "sequence_lengths": stats,
            }),
        )?;
        Ok(vec![STOPS.into(), SEQUENCES.into(), "stops_report.json".into()])
    }
}

impl Stage for CorpusCmd {
    const NAME: &'static str = "corpus";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        self.sequences.iter_mut().collect()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        Ok(vec![existing(required(&self.sequences, "sequences")?)?])
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let input = required(&self.sequences, "sequences")?;
        let seqs = read_sequences(BufReader::new(open(input)?)).at(input)?;
        let vocab = build_vocab(seqs.iter().map(Vec::as_slice), self.corpus.min_count)?;
        let corpus = encode_corpus(seqs.iter().map(Vec::as_slice), vocab);
        let stats = corpus_stats(&corpus)?;

        let vp = out.join(VOCAB);
        corpus.vocab.write_to(create(&vp)?).at(&vp)?;
        let cp = out.join(CORPUS);
        let cells: Vec<Vec<CellId>> = corpus.cell_sequences().collect();
        write_sequences(create(&cp)?, cells.iter().map(Vec::as_slice)).at(&cp)?;
        log::info!(
            "corpus: {} cells in vocabulary, {} sequences, mean length {:.2} (sd {:.2})",
            corpus.vocab.len(),
            stats.n_sequences,
            stats.mean_len,
            stats.stddev_len
        );
        write_json(
            &out.join("corpus_stats.json"),
            &json!({
                "min_count": self.corpus.min_count,
                "input_sequences": seqs.len(),
                "vocab_size": corpus.vocab.len(),
                "vocab_total_count": corpus.vocab.total_count(),
                "encoded": stats,
            }),
        )?;
        Ok(vec![VOCAB.into(), CORPUS.into(), "corpus_stats.json".into()])
    }
}

impl Stage for TrainCmd {
    const NAME: &'static str = "train";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        self.corpus_dir.iter_mut().collect()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        let dir = required(&self.corpus_dir, "corpus-dir")?;
        Ok(vec![existing(&dir.join(VOCAB))?, existing(&dir.join(CORPUS))?])
    }

    fn seed(&self) -> Option<u64> {
        Some(self.train.seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let dir = required(&self.corpus_dir, "corpus-dir")?;
        let vp = dir.join(VOCAB);
        let vocab = Vocab::read_from(BufReader::new(open(&vp)?)).at(&vp)?;
        let cp = dir.join(CORPUS);
        let seqs = read_sequences(BufReader::new(open(&cp)?)).at(&cp)?;
        let corpus = encode_corpus(seqs.iter().map(Vec::as_slice), vocab);
        let cfg = self.train.config(self.threads.threads);
        let (model, report) = train_sgns_with_report(&corpus, &cfg)?;
        let ep = out.join(EMBEDDINGS);
        save_embeddings_to(&model, &ep).at(&ep)?;
        log::info!(
            "train: {} vectors of dim {}, final epoch loss {:.4}",
            model.len(),
            model.dim(),
            report.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );
        write_json(
            &out.join("train_report.json"),
            &json!({
                "config": cfg,
                "vocab_size": model.len(),
                "sequences": corpus.sequences.len(),
                "report": report,
            }),
        )?;
        let side = sidecar_path(Path::new(EMBEDDINGS));
        Ok(vec![EMBEDDINGS.into(), side.display().to_string(), "train_report.json".into()])
    }
}

fn model_paths(inputs: &mut ModelInputs) -> Vec<&mut PathBuf> {
    inputs.model.iter_mut().chain(inputs.pois.iter_mut()).collect()
}

impl Stage for QueryCmd {
    const NAME: &'static str = "query";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        model_paths(&mut self.inputs)
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = model_files(required(&self.inputs.model, "model")?)?;
        if let Some(p) = &self.inputs.pois {
            files.push(existing(p)?);
        }
        Ok(files)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let model_path = required(&self.inputs.model, "model")?;
        let model = load_model(model_path)?;
        let grid = self.grid.grid()?;
        let labels = match &self.inputs.pois {
            Some(p) => load_labels(p, &grid)?,
            None => CellLabelMap::default(),
        };
        let target = match self.query.target {
            Some(t) => t,
            None if !model.is_empty() => model.vocab().token(0),
            None => return Err(CliError::Invalid("model has no vectors".into())),
        };
        let report = neighbor_report(&model, &labels, &grid, target, self.query.k, self.query.metric.into())?;
        for n in &report.neighbors {
            log::info!("query: #{} {} sim {:.4} {} {:.0} m", n.rank, n.cell, n.similarity, n.label, n.distance_m);
        }
        write_json(&out.join("neighbors.json"), &report)?;
        write_json(&out.join("neighbors.geojson"), &report.to_geojson())?;
        Ok(vec!["neighbors.json".into(), "neighbors.geojson".into()])
    }
}

impl Stage for CategorySimCmd {
    const NAME: &'static str = "analyze category-sim";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        model_paths(&mut self.inputs)
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = model_files(required(&self.inputs.model, "model")?)?;
        files.push(existing(required(&self.inputs.pois, "pois")?)?);
        Ok(files)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.opts.sample_seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let model = load_model(required(&self.inputs.model, "model")?)?;
        let grid = self.grid.grid()?;
        let labels = load_labels(required(&self.inputs.pois, "pois")?, &grid)?;
        let categories = if self.opts.categories.is_empty() {
            labels.categories()
        } else {
            self.opts.categories.clone()
        };
        let mut results = Vec::new();
        let mut ok = 0;
        for cat in &categories {
            match category_similarity_test(&model, &labels, cat, self.opts.sample_size, self.opts.sample_seed) {
                Ok(r) => {
                    log::info!(
                        "category-sim: {cat} n={} intra {:.4} inter {:.4} t {:.3} p {:.3e}",
                        r.sample_size,
                        r.intra_mean,
                        r.inter_mean,
                        r.t_stat,
                        r.p_two_sided
                    );
                    ok += 1;
                    results.push(serde_json::to_value(r).expect("result serializes"));
                }
                Err(e) => {
                    log::warn!("category-sim: {cat}: {e}");
                    results.push(json!({ "category": cat, "error": e.to_string() }));
                }
            }
        }
        if ok == 0 {
            return Err(CliError::Invalid("no category could be tested".into()));
        }
        write_json(
            &out.join("category_sim.json"),
            &json!({
                "sample_size": self.opts.sample_size,
                "sample_seed": self.opts.sample_seed,
                "results": results,
            }),
        )?;
        Ok(vec!["category_sim.json".into()])
    }
}

fn named_ranges(opts: &DecayOpts) -> Vec<(&'static str, DistanceRange)> {
    vec![
        ("overall", DistanceRange::ALL),
        ("local", DistanceRange::new(0.0, Some(opts.local_max))),
        ("long", DistanceRange::new(opts.long_min, None)),
    ]
}

impl Stage for DecayCmd {
    const NAME: &'static str = "analyze decay";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        model_paths(&mut self.inputs)
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        model_files(required(&self.inputs.model, "model")?)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.analysis.sample_seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let model = load_model(required(&self.inputs.model, "model")?)?;
        let grid = self.grid.grid()?;
        let metric: DistanceMetric = self.analysis.metric.into();
        let sample = sample_cells(&model, self.opts.decay_sample, self.analysis.sample_seed, Population::All)?;
        let named = named_ranges(&self.opts);
        let ranges: Vec<DistanceRange> = named.iter().map(|(_, r)| *r).collect();
        let fits: Vec<DecayResult> = decay_fits(&model, &sample, &grid, metric, &ranges, self.threads.threads)?;
        let fits_json: Vec<serde_json::Value> = named
            .iter()
            .zip(&fits)
            .map(|((name, _), f)| {
                if let Some(m) = &f.model {
                    log::info!(
                        "decay: {name}: CS = {:.4e} * D + {:.4} (r2 {:.4}, {} pairs)",
                        m.slope,
                        m.intercept,
                        m.r_squared,
                        m.n_pairs
                    );
                }
                json!({ "name": name, "fit": f })
            })
            .collect();
        let n = sample.len() as u64;
        write_json(
            &out.join("decay.json"),
            &json!({
                "n_cells": n,
                "n_pairs": n * (n - 1) / 2,
                "metric": metric,
                "sample_seed": self.analysis.sample_seed,
                "fits": fits_json,
            }),
        )?;
        let mut written = vec!["decay.json".to_string()];
        if self.opts.dump_pairs {
            let path = out.join("decay_pairs.csv");
            let pairs = pairwise_decay(&model, &sample, &grid, metric, DistanceRange::ALL)?;
            write_pairs_csv(create(&path)?, pairs).at(&path)?;
            written.push("decay_pairs.csv".into());
        }
        if self.analysis.svg {
            let total = (n * (n - 1) / 2) as usize;
            let stride = total.div_ceil(SVG_MAX_POINTS).max(1);
            let points: Vec<(f64, f64)> = pairwise_decay(&model, &sample, &grid, metric, DistanceRange::ALL)?
                .step_by(stride)
                .collect();
            let path = out.join("decay.svg");
            fs::write(&path, svg::scatter(&points, "D (m)", "CS")).at(&path)?;
            written.push("decay.svg".into());
        }
        Ok(written)
    }
}

impl Stage for VariogramCmd {
    const NAME: &'static str = "analyze variogram";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        model_paths(&mut self.inputs)
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = model_files(required(&self.inputs.model, "model")?)?;
        if self.opts.category.is_some() {
            files.push(existing(required(&self.inputs.pois, "pois")?)?);
        }
        Ok(files)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.analysis.sample_seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let model = load_model(required(&self.inputs.model, "model")?)?;
        let grid = self.grid.grid()?;
        let labels = match &self.opts.category {
            Some(_) => load_labels(required(&self.inputs.pois, "pois")?, &grid)?,
            None => CellLabelMap::default(),
        };
        let pop = match &self.opts.category {
            Some(c) => Population::Category(&labels, c),
            None => Population::All,
        };
        let sample = sample_cells(&model, self.opts.variogram_sample, self.analysis.sample_seed, pop)?;
        let report = empirical_variogram(
            &model,
            &sample,
            &grid,
            self.analysis.metric.into(),
            self.opts.bin_width,
            self.opts.max_dist,
            self.threads.threads,
        )?;
        if let Some(f) = &report.fit {
            log::info!(
                "variogram: {} cells, gamma = {:.4e} * h + {:.4}",
                report.n_cells,
                f.slope,
                f.intercept
            );
        }
        write_json(
            &out.join("variogram.json"),
            &json!({
                "category": self.opts.category,
                "sample_seed": self.analysis.sample_seed,
                "report": report,
            }),
        )?;
        let csv = out.join("variogram.csv");
        report.write_csv(create(&csv)?).at(&csv)?;
        let mut written = vec!["variogram.json".to_string(), "variogram.csv".to_string()];
        if self.analysis.svg {
            let points: Vec<(f64, f64)> = report
                .bins
                .iter()
                .filter_map(|b| b.gamma.map(|g| (b.h_mid(), g)))
                .collect();
            let path = out.join("variogram.svg");
            fs::write(&path, svg::scatter(&points, "h (m)", "gamma")).at(&path)?;
            written.push("variogram.svg".into());
        }
        Ok(written)
    }
}

impl Stage for PipelineCmd {
    const NAME: &'static str = "pipeline";

    fn out_dir(&self) -> Option<&Path> {
        self.out.out_dir.as_deref()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        self.input.iter_mut().chain(self.pois.iter_mut()).collect()
    }

    fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        match (&self.input, &self.pois) {
            (Some(i), Some(p)) => Ok(vec![existing(i)?, existing(p)?]),
            (None, None) => Ok(Vec::new()),
            _ => Err(CliError::Usage("--input and --pois must be given together".into())),
        }
    }

    fn seed(&self) -> Option<u64> {
        Some(self.train.seed)
    }

    fn execute(&self, out: &Path) -> CliResult<Vec<String>> {
        let dir = |name: &str| out.join(name);
        let at = |d: &Path| OutDir {
            out_dir: Some(d.to_path_buf()),
        };
        let mut manifests = Vec::new();
        let mut record = |name: &str, m: RunManifest| {
            manifests.push(format!("{name}/manifest.json"));
            m
        };

        let (waypoints, pois) = match (&self.input, &self.pois) {
            (Some(i), Some(p)) => (i.clone(), p.clone()),
            _ => {
                let d = dir("synth");
                let cmd = SynthCmd {
                    out: at(&d),
                    synth: self.synth.clone(),
                    grid: self.grid.clone(),
                };
                record("synth", run_stage(&cmd, &d)?);
                (d.join(WAYPOINTS), d.join(POIS))
            }
        };

        let stops_dir = dir("stops");
        let stops = StopsCmd {
            input: Some(waypoints),
            out: at(&stops_dir),
            ingest: self.ingest.clone(),
            stops: self.stops.clone(),
            grid: self.grid.clone(),
        };
        record("stops", run_stage(&stops, &stops_dir)?);

        let corpus_dir = dir("corpus");
        let corpus = CorpusCmd {
            sequences: Some(stops_dir.join(SEQUENCES)),
            out: at(&corpus_dir),
            corpus: self.corpus.clone(),
        };
        record("corpus", run_stage(&corpus, &corpus_dir)?);

        let train_dir = dir("train");
        let train = TrainCmd {
            corpus_dir: Some(corpus_dir.clone()),
            out: at(&train_dir),
            train: self.train.clone(),
            threads: self.threads.clone(),
        };
        record("train", run_stage(&train, &train_dir)?);

        let inputs = ModelInputs {
            model: Some(train_dir.join(EMBEDDINGS)),
            pois: Some(pois),
        };
        let query_dir = dir("query");
        let query = QueryCmd {
            inputs: inputs.clone(),
            out: at(&query_dir),
            query: QueryOpts {
                target: self.target,
                k: self.k,
                metric: self.analysis.metric,
            },
            grid: self.grid.clone(),
        };
        record("query", run_stage(&query, &query_dir)?);

        let cs_dir = dir("category-sim");
        let cs = CategorySimCmd {
            inputs: inputs.clone(),
            out: at(&cs_dir),
            opts: CategorySimOpts {
                sample_size: self.category_sim.sample_size,
                categories: self.category_sim.categories.clone(),
                sample_seed: self.analysis.sample_seed,
            },
            grid: self.grid.clone(),
        };
        record("category-sim", run_stage(&cs, &cs_dir)?);

        let decay_dir = dir("decay");
        let decay = DecayCmd {
            inputs: inputs.clone(),
            out: at(&decay_dir),
            opts: self.decay.clone(),
            analysis: self.analysis.clone(),
            grid: self.grid.clone(),
            threads: self.threads.clone(),
        };
        record("decay", run_stage(&decay, &decay_dir)?);

        let vg_dir = dir("variogram");
        let vg = VariogramCmd {
            inputs,
            out: at(&vg_dir),
            opts: self.variogram.clone(),
            analysis: self.analysis.clone(),
            grid: self.grid.clone(),
            threads: self.threads.clone(),
        };
        record("variogram", run_stage(&vg, &vg_dir)?);

        Ok(manifests)
    }
}

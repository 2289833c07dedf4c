use std::path::PathBuf;

use cellvec::embed::TrainConfig;
use cellvec::geo::DistanceMetric;
use cellvec::ingest::{DayBoundary, ParseMode};
use cellvec::stops::StopParams;
use cellvec::synth::SynthConfig;
use cellvec::{CellId, GeoPoint, GridSpec};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "cellvec",
    version,
    about = "Place embeddings from GPS stop sequences",
    args_override_self = true,
    propagate_version = true
)]
pub struct Cli {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and its waypoint traces.
    Synth(SynthCmd),
    /// Parse and validate a waypoint CSV, writing it back sorted.
    Ingest(IngestCmd),
    /// Detect stops and write one cell sequence per vehicle-day.
    Stops(StopsCmd),
    /// Build the vocabulary and the encoded corpus.
    Corpus(CorpusCmd),
    /// Train skip-gram embeddings.
    Train(TrainCmd),
    /// Neighbor report for one cell.
    Query(QueryCmd),
    /// Category similarity, distance decay and variogram analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Run every stage from one configuration.
    Pipeline(Box<PipelineCmd>),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayCmd),
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Intra- vs. cross-category similarity with Welch's t-test.
    CategorySim(CategorySimCmd),
    /// Linear distance decay of similarity.
    Decay(DecayCmd),
    /// Empirical semi-variogram of the embedding field.
    Variogram(VariogramCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Haversine,
    Plane,
}

impl From<Metric> for DistanceMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Haversine => DistanceMetric::Haversine,
            Metric::Plane => DistanceMetric::Plane,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutDir {
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridOpts {
    /// Grid cell size in Mercator meters.
    #[arg(long, default_value_t = GridSpec::DEFAULT_CELL_SIZE)]
    pub cell_size: f64,
}

impl GridOpts {
    pub fn grid(&self) -> cellvec::Result<GridSpec> {
        GridSpec::new(self.cell_size)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ThreadOpts {
    /// Worker threads; 1 is deterministic.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthOpts {
    #[arg(long, default_value_t = 4)]
    pub n_categories: usize,
    #[arg(long, default_value_t = 50)]
    pub places_per_category: usize,
    /// Side of the square world in meters.
    #[arg(long, default_value_t = 20_000.0)]
    pub world_extent: f64,
    #[arg(long, default_value_t = 100)]
    pub agents: usize,
    #[arg(long, default_value_t = 60)]
    pub days: usize,
    #[arg(long, default_value_t = 5_000.0)]
    pub activity_radius: f64,
    #[arg(long, default_value_t = 7.0)]
    pub visits_per_day: f64,
    #[arg(long, default_value_t = 6.0)]
    pub dwell_min: f64,
    #[arg(long, default_value_t = 30.0)]
    pub dwell_max: f64,
    /// Gaussian GPS noise per axis, meters.
    #[arg(long, default_value_t = 5.0)]
    pub gps_noise: f64,
    #[arg(long, default_value_t = 1)]
    pub world_seed: u64,
    #[arg(long, default_value_t = 23.7275)]
    pub origin_lon: f64,
    #[arg(long, default_value_t = 37.9838)]
    pub origin_lat: f64,
    #[arg(long, default_value = "2017-06-01")]
    pub start_day: NaiveDate,
    /// Weight of staying within a category between visits.
    #[arg(long, default_value_t = 0.6)]
    pub grammar_affinity: f64,
}

impl SynthOpts {
    pub fn config(&self, grid: &GridOpts) -> SynthConfig {
        SynthConfig {
            n_categories: self.n_categories,
            places_per_category: self.places_per_category,
            world_extent_m: self.world_extent,
            n_agents: self.agents,
            days: self.days,
            agent_activity_radius_m: self.activity_radius,
            visits_per_day_mean: self.visits_per_day,
            dwell_minutes_range: (self.dwell_min, self.dwell_max),
            gps_noise_sigma_m: self.gps_noise,
            seed: self.world_seed,
            origin: GeoPoint {
                lon: self.origin_lon,
                lat: self.origin_lat,
            },
            start_day: self.start_day,
            cell_size_m: grid.cell_size,
            grammar_affinity: self.grammar_affinity,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestOpts {
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Shift of the day boundary from UTC midnight, hours.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub day_offset_hours: i32,
}

impl IngestOpts {
    pub fn mode(&self) -> ParseMode {
        if self.strict {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        }
    }

    pub fn boundary(&self) -> DayBoundary {
        DayBoundary {
            offset_hours: self.day_offset_hours,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StopOpts {
    /// Minimum dwell, seconds.
    #[arg(long, default_value_t = 300)]
    pub min_duration: i64,
    /// Cluster radius, meters.
    #[arg(long, default_value_t = 50.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 2)]
    pub max_noise_run: usize,
}

impl StopOpts {
    pub fn params(&self) -> StopParams {
        StopParams {
            min_duration: self.min_duration,
            radius: self.radius,
            max_noise_run: self.max_noise_run,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CorpusOpts {
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr_start: f64,
    #[arg(long, default_value_t = 0.0001)]
    pub lr_end: f64,
    #[arg(long, default_value_t = 0.75)]
    pub unigram_power: f64,
    /// Subsampling threshold; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub subsample: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl TrainOpts {
    pub fn config(&self, threads: usize) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            unigram_power: self.unigram_power,
            subsample_t: self.subsample,
            seed: self.seed,
            threads,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QueryOpts {
    /// Target cell as a decimal Morton code; defaults to the most frequent cell.
    #[arg(long)]
    pub target: Option<CellId>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Metric::Haversine)]
    pub metric: Metric,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CategorySimOpts {
    /// Cells sampled per category.
    #[arg(long, default_value_t = 300)]
    pub sample_size: usize,
    /// Comma-separated categories; all labeled categories when omitted.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub sample_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DecayOpts {
    #[arg(long, default_value_t = 3000)]
    pub decay_sample: usize,
    /// Upper bound of the local range, meters.
    #[arg(long, default_value_t = 50_000.0)]
    pub local_max: f64,
    /// Lower bound of the long range, meters.
    #[arg(long, default_value_t = 3_000_000.0)]
    pub long_min: f64,
    /// Also write every `D,CS` pair.
    #[arg(long)]
    pub dump_pairs: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VariogramOpts {
    #[arg(long, default_value_t = 200)]
    pub variogram_sample: usize,
    /// Restrict the sample to cells of one category.
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = cellvec::analytics::DEFAULT_BIN_WIDTH_M)]
    pub bin_width: f64,
    #[arg(long, default_value_t = cellvec::analytics::DEFAULT_MAX_DIST_M)]
    pub max_dist: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalysisOpts {
    #[arg(long, value_enum, default_value_t = Metric::Haversine)]
    pub metric: Metric,
    #[arg(long, default_value_t = 1)]
    pub sample_seed: u64,
    /// Also write an SVG scatter plot.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestCmd {
    /// Waypoint CSV.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub ingest: IngestOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StopsCmd {
    /// Waypoint CSV.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub ingest: IngestOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub stops: StopOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CorpusCmd {
    /// Cell sequence file written by `stops`.
    #[arg(long, value_name = "FILE")]
    pub sequences: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainCmd {
    /// Directory written by `corpus`.
    #[arg(long, value_name = "DIR")]
    pub corpus_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub threads: ThreadOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelInputs {
    /// Embedding file written by `train`.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// POI CSV used to label cells.
    #[arg(long, value_name = "FILE")]
    pub pois: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QueryCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub query: QueryOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CategorySimCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: CategorySimOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DecayCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: DecayOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub analysis: AnalysisOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub threads: ThreadOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VariogramCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub inputs: ModelInputs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: VariogramOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub analysis: AnalysisOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub threads: ThreadOpts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineCmd {
    /// Waypoint CSV; a synthetic world is generated when omitted.
    #[arg(long, value_name = "FILE", requires = "pois")]
    pub input: Option<PathBuf>,
    /// POI CSV for labeling; required with --input.
    #[arg(long, value_name = "FILE")]
    pub pois: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub ingest: IngestOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub stops: StopOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub target: Option<CellId>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub category_sim: PipelineCategoryOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub decay: DecayOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub variogram: VariogramOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub analysis: AnalysisOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub threads: ThreadOpts,
}

/// Category-test options without the seed shared with other analyses.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineCategoryOpts {
    #[arg(long, default_value_t = 300)]
    pub sample_size: usize,
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayCmd {
    /// Manifest to replay.
    pub manifest: PathBuf,
    /// Write outputs here instead of the manifest's directory.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

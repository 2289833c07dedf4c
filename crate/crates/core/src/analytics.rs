//! Place-similarity analytics over a trained model:
//!
//! * neighbor reports: the most similar cells to a target, with labels and
//!   distances;
//! * category tests: intra-category vs. cross-category similarity, compared
//!   with Welch's t-test;
//! * distance decay: least-squares lines of cosine similarity against
//!   distance over all sampled cell pairs;
//! * empirical semi-variograms of the length-normalized embedding field,
//!   `γ(h) = mean(1 − cos)` over pairs in each distance bin.

use std::io::{self, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embed::{cosine_from_parts, dot, sq_norm, top_k, EmbeddingModel};
use crate::error::{Error, Result};
use crate::geo::{cell_centroid, CellId, DistanceAnchor, DistanceMetric, GeoPoint, GridSpec};
use crate::poi::{CellLabelMap, MIXED};
use crate::stats::{welch_t, LineFit, OlsAccumulator};

/// Which vocabulary cells a sample is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Population<'a> {
    All,
    /// Cells labeled exactly `category`.
    Category(&'a CellLabelMap, &'a str),
    /// Labeled cells whose label is neither `category` nor mixed.
    OtherThan(&'a CellLabelMap, &'a str),
}

impl Population<'_> {
    fn admits(&self, c: CellId) -> bool {
        match self {
            Population::All => true,
            Population::Category(labels, cat) => labels.get(c) == Some(*cat),
            Population::OtherThan(labels, cat) => {
                matches!(labels.get(c), Some(l) if l != *cat && l != MIXED)
            }
        }
    }

    /// Matching vocabulary cells in ascending Morton order.
    pub fn members(&self, model: &EmbeddingModel) -> Vec<CellId> {
        let mut cells: Vec<CellId> = model.vocab().tokens().filter(|c| self.admits(*c)).collect();
        cells.sort_unstable();
        cells
    }
}

fn sample_with(
    model: &EmbeddingModel,
    n: usize,
    pop: Population<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CellId>> {
    if n == 0 {
        return Err(Error::Config("sample size must be >= 1".into()));
    }
    let members = pop.members(model);
    if members.is_empty() {
        return Err(Error::Insufficient("sample population is empty".into()));
    }
    if members.len() <= n {
        return Ok(members);
    }
    let mut picked: Vec<usize> = index::sample(rng, members.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| members[i]).collect())
}

/// Uniform sample without replacement, returned in ascending Morton order.
/// When the population is no larger than `n` the whole population is
/// returned.
pub fn sample_cells(
    model: &EmbeddingModel,
    n: usize,
    seed: u64,
    pop: Population<'_>,
) -> Result<Vec<CellId>> {
    sample_with(model, n, pop, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub rank: usize,
    pub cell: CellId,
    pub similarity: f64,
    pub label: String,
    pub distance_m: f64,
    pub centroid: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub target: CellId,
    pub target_label: String,
    pub target_centroid: GeoPoint,
    pub neighbors: Vec<NeighborEntry>,
}

impl NeighborReport {
    pub fn to_geojson(&self) -> serde_json::Value {
        let point = |p: &GeoPoint| json!({ "type": "Point", "coordinates": [p.lon, p.lat] });
        let mut features = vec![json!({
            "type": "Feature",
            "geometry": point(&self.target_centroid),
            "properties": {
                "role": "target",
                "cell": self.target,
                "label": self.target_label,
            },
        })];
        features.extend(self.neighbors.iter().map(|n| {
            json!({
                "type": "Feature",
                "geometry": point(&n.centroid),
                "properties": {
                    "role": "neighbor",
                    "rank": n.rank,
                    "cell": n.cell,
                    "similarity": n.similarity,
                    "label": n.label,
                    "distance_m": n.distance_m,
                },
            })
        }));
        json!({ "type": "FeatureCollection", "features": features })
    }
}

pub fn neighbor_report(
    model: &EmbeddingModel,
    labels: &CellLabelMap,
    grid: &GridSpec,
    target: CellId,
    k: usize,
    metric: DistanceMetric,
) -> Result<NeighborReport> {
    let neighbors = top_k(model, target, k)?;
    let anchor = DistanceAnchor::new(target, grid);
    let neighbors = neighbors
        .into_iter()
        .enumerate()
        .map(|(i, (cell, similarity))| NeighborEntry {
            rank: i + 1,
            cell,
            similarity,
            label: labels.display(cell).to_string(),
            distance_m: anchor.distance(&DistanceAnchor::new(cell, grid), metric),
            centroid: cell_centroid(cell, grid),
        })
        .collect();
    Ok(NeighborReport {
        target,
        target_label: labels.display(target).to_string(),
        target_centroid: cell_centroid(target, grid),
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTestResult {
    pub category: String,
    /// Number of sampled cells of the category.
    pub sample_size: usize,
    /// Number of sampled cells with other labels.
    pub other_size: usize,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Copies of the sampled vectors, their squared norms and distance anchors.
struct SampleGeometry {
    vectors: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    anchors: Vec<DistanceAnchor>,
}

impl SampleGeometry {
    fn new(model: &EmbeddingModel, sample: &[CellId], grid: &GridSpec) -> Result<Self> {
        let mut vectors = Vec::with_capacity(sample.len());
        let mut sq_norms = Vec::with_capacity(sample.len());
        for &c in sample {
            let v = model.vector_of(c).ok_or(Error::NotInVocab(c))?;
            let n = sq_norm(v);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            vectors.push(v.to_vec());
            sq_norms.push(n);
        }
        let anchors = sample.iter().map(|&c| DistanceAnchor::new(c, grid)).collect();
        Ok(SampleGeometry {
            vectors,
            sq_norms,
            anchors,
        })
    }

    /// Equal to `cosine_similarity` on the raw vectors, bit for bit.
    #[inline]
    fn similarity(&self, i: usize, j: usize) -> f64 {
        cosine_from_parts(dot(&self.vectors[i], &self.vectors[j]), self.sq_norms[i], self.sq_norms[j])
    }

    #[inline]
    fn distance(&self, i: usize, j: usize, metric: DistanceMetric) -> f64 {
        self.anchors[i].distance(&self.anchors[j], metric)
    }

    fn len(&self) -> usize {
        self.vectors.len()
    }
}

/// Sample `min(n, |category|)` category cells and as many other-labeled
/// cells, then compare all within-category pair similarities against all
/// category × other similarities.
pub fn category_similarity_test(
    model: &EmbeddingModel,
    labels: &CellLabelMap,
    category: &str,
    n: usize,
    seed: u64,
) -> Result<CategoryTestResult> {
    let own_pop = Population::Category(labels, category);
    let other_pop = Population::OtherThan(labels, category);
    let own_count = own_pop.members(model).len();
    let other_count = other_pop.members(model).len();
    if own_count < 2 || other_count < 2 {
        return Err(Error::Insufficient(format!(
            "category {category:?} has {own_count} labeled cells in the model and {other_count} \
             cells with other labels; need at least 2 of each"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let own = sample_with(model, n, own_pop, &mut rng)?;
    let other = sample_with(model, own.len(), other_pop, &mut rng)?;

    let grid = GridSpec::default();
    let g_own = SampleGeometry::new(model, &own, &grid)?;
    let g_other = SampleGeometry::new(model, &other, &grid)?;

    let mut intra = Vec::with_capacity(own.len() * (own.len() - 1) / 2);
    for i in 0..g_own.len() {
        for j in i + 1..g_own.len() {
            intra.push(g_own.similarity(i, j));
        }
    }
    let mut inter = Vec::with_capacity(own.len() * other.len());
    for i in 0..g_own.len() {
        for j in 0..g_other.len() {
            inter.push(cosine_from_parts(
                dot(&g_own.vectors[i], &g_other.vectors[j]),
                g_own.sq_norms[i],
                g_other.sq_norms[j],
            ));
        }
    }
    let w = welch_t(&intra, &inter)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(CategoryTestResult {
        category: category.to_string(),
        sample_size: own.len(),
        other_size: other.len(),
        intra_pairs: intra.len(),
        inter_pairs: inter.len(),
        intra_mean: mean(&intra),
        inter_mean: mean(&inter),
        t_stat: w.t,
        df: w.df,
        p_two_sided: w.p_two_sided,
    })
}

/// Half-open distance interval `[min_m, max_m)`; `max_m = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRange {
    pub min_m: f64,
    pub max_m: Option<f64>,
}

impl DistanceRange {
    pub const ALL: DistanceRange = DistanceRange {
        min_m: 0.0,
        max_m: None,
    };

    pub fn new(min_m: f64, max_m: Option<f64>) -> Self {
        DistanceRange { min_m, max_m }
    }

    #[inline]
    pub fn contains(&self, d: f64) -> bool {
        d >= self.min_m && self.max_m.is_none_or(|m| d < m)
    }
}

/// Lazily enumerates `(distance, similarity)` for every unordered pair of
/// the sample, `i < j` in sample order, keeping pairs inside the range.
pub struct PairStream {
    geom: SampleGeometry,
    metric: DistanceMetric,
    range: DistanceRange,
    i: usize,
    j: usize,
}

impl Iterator for PairStream {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<(f64, f64)> {
        let n = self.geom.len();
        while self.i + 1 < n {
            if self.j >= n {
                self.i += 1;
                self.j = self.i + 1;
                continue;
            }
            let (i, j) = (self.i, self.j);
            self.j += 1;
            let d = self.geom.distance(i, j, self.metric);
            if self.range.contains(d) {
                return Some((d, self.geom.similarity(i, j)));
            }
        }
        None
    }
}

pub fn pairwise_decay(
    model: &EmbeddingModel,
    sample: &[CellId],
    grid: &GridSpec,
    metric: DistanceMetric,
    range: DistanceRange,
) -> Result<PairStream> {
    if sample.len() < 2 {
        return Err(Error::Insufficient("pairwise analysis needs at least 2 cells".into()));
    }
    Ok(PairStream {
        geom: SampleGeometry::new(model, sample, grid)?,
        metric,
        range,
        i: 0,
        j: 1,
    })
}

/// Linear fit `CS = slope·D + intercept` over one distance range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_pairs: u64,
    pub range_filter: DistanceRange,
}

impl DecayModel {
    fn from_fit(fit: LineFit, range: DistanceRange) -> Self {
        DecayModel {
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            n_pairs: fit.n,
            range_filter: range,
        }
    }
}

/// Fit outcome for one range; `model` is `None` when the range holds fewer
/// than two pairs or no distance variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayResult {
    pub range: DistanceRange,
    pub n_pairs: u64,
    pub model: Option<DecayModel>,
    pub error: Option<String>,
}

/// Sequential rows `[lo, hi)` of the upper-triangle pair loop.
fn row_blocks(n: usize, threads: usize) -> Vec<(usize, usize)> {
    if threads <= 1 {
        return vec![(0, n)];
    }
    // Equal pair counts per block: row i contributes n - 1 - i pairs.
    let blocks = threads * 4;
    let total = n * n.saturating_sub(1) / 2;
    let per = total.div_ceil(blocks).max(1);
    let mut out = Vec::new();
    let (mut lo, mut acc) = (0, 0);
    for i in 0..n {
        acc += n - 1 - i;
        if acc >= per {
            out.push((lo, i + 1));
            lo = i + 1;
            acc = 0;
        }
    }
    if lo < n {
        out.push((lo, n));
    }
    out
}

/// Evaluate `fold` over row blocks, in parallel when `threads > 1`, and
/// return per-block results in block order.
fn over_blocks<T, F>(n: usize, threads: usize, fold: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let blocks = row_blocks(n, threads);
    if threads <= 1 {
        return Ok(blocks.into_iter().map(|(lo, hi)| fold(lo, hi)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| blocks.par_iter().map(|&(lo, hi)| fold(lo, hi)).collect()))
}

/// Fit one decay line per range in a single pass over all pairs.
pub fn decay_fits(
    model: &EmbeddingModel,
    sample: &[CellId],
    grid: &GridSpec,
    metric: DistanceMetric,
    ranges: &[DistanceRange],
    threads: usize,
) -> Result<Vec<DecayResult>> {
    if sample.len() < 2 {
        return Err(Error::Insufficient("pairwise analysis needs at least 2 cells".into()));
    }
    let geom = SampleGeometry::new(model, sample, grid)?;
    let n = geom.len();
    let partials = over_blocks(n, threads, |lo, hi| {
        let mut accs = vec![OlsAccumulator::new(); ranges.len()];
        for i in lo..hi {
            for j in i + 1..n {
                let d = geom.distance(i, j, metric);
                let mut sim = None;
                for (acc, r) in accs.iter_mut().zip(ranges) {
                    if r.contains(d) {
                        let s = *sim.get_or_insert_with(|| geom.similarity(i, j));
                        acc.push(d, s);
                    }
                }
            }
        }
        accs
    })?;
    let mut totals = vec![OlsAccumulator::new(); ranges.len()];
    for part in &partials {
        for (t, p) in totals.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(totals
        .iter()
        .zip(ranges)
        .map(|(acc, &range)| match acc.finish() {
            Ok(fit) => DecayResult {
                range,
                n_pairs: acc.len(),
                model: Some(DecayModel::from_fit(fit, range)),
                error: None,
            },
            Err(e) => DecayResult {
                range,
                n_pairs: acc.len(),
                model: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// `D,CS` rows for external plotting.
pub fn write_pairs_csv(sink: impl Write, pairs: impl Iterator<Item = (f64, f64)>) -> io::Result<()> {
    let mut w = io::BufWriter::new(sink);
    writeln!(w, "D,CS")?;
    for (d, s) in pairs {
        writeln!(w, "{d},{s}")?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub h_lo: f64,
    pub h_hi: f64,
    pub n_pairs: u64,
    /// `None` for empty bins.
    pub gamma: Option<f64>,
}

impl VariogramBin {
    pub fn h_mid(&self) -> f64 {
        0.5 * (self.h_lo + self.h_hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramReport {
    pub bin_width: f64,
    pub max_dist: f64,
    pub metric: DistanceMetric,
    pub n_cells: usize,
    pub bins: Vec<VariogramBin>,
    /// Least-squares line through `(bin midpoint, γ)` of non-empty bins.
    pub fit: Option<LineFit>,
}

impl VariogramReport {
    /// `h_mid,n_pairs,gamma` rows; empty bins have an empty gamma field.
    pub fn write_csv(&self, sink: impl Write) -> io::Result<()> {
        let mut w = io::BufWriter::new(sink);
        writeln!(w, "h_mid,n_pairs,gamma")?;
        for b in &self.bins {
            match b.gamma {
                Some(g) => writeln!(w, "{},{},{}", b.h_mid(), b.n_pairs, g)?,
                None => writeln!(w, "{},{},", b.h_mid(), b.n_pairs)?,
            }
        }
        w.flush()
    }
}

pub const DEFAULT_BIN_WIDTH_M: f64 = 1_000.0;
pub const DEFAULT_MAX_DIST_M: f64 = 100_000.0;

pub fn empirical_variogram(
    model: &EmbeddingModel,
    sample: &[CellId],
    grid: &GridSpec,
    metric: DistanceMetric,
    bin_width: f64,
    max_dist: f64,
    threads: usize,
) -> Result<VariogramReport> {
    if !(bin_width > 0.0 && max_dist > 0.0 && bin_width.is_finite() && max_dist.is_finite()) {
        return Err(Error::Config("bin width and max distance must be positive".into()));
    }
    if sample.len() < 2 {
        return Err(Error::Insufficient("variogram needs at least 2 cells".into()));
    }
    let geom = SampleGeometry::new(model, sample, grid)?;
    let n = geom.len();
    let n_bins = (max_dist / bin_width).ceil() as usize;
    let partials = over_blocks(n, threads, |lo, hi| {
        let mut sums = vec![0.0f64; n_bins];
        let mut counts = vec![0u64; n_bins];
        for i in lo..hi {
            for j in i + 1..n {
                let d = geom.distance(i, j, metric);
                if d < max_dist {
                    let b = ((d / bin_width).floor() as usize).min(n_bins - 1);
                    sums[b] += 1.0 - geom.similarity(i, j);
                    counts[b] += 1;
                }
            }
        }
        (sums, counts)
    })?;
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0u64; n_bins];
    for (s, c) in &partials {
        for b in 0..n_bins {
            sums[b] += s[b];
            counts[b] += c[b];
        }
    }
    let bins: Vec<VariogramBin> = (0..n_bins)
        .map(|b| VariogramBin {
            h_lo: b as f64 * bin_width,
            h_hi: (b + 1) as f64 * bin_width,
            n_pairs: counts[b],
            gamma: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect();
    let mut acc = OlsAccumulator::new();
    for b in &bins {
        if let Some(g) = b.gamma {
            acc.push(b.h_mid(), g);
        }
    }
    Ok(VariogramReport {
        bin_width,
        max_dist,
        metric,
        n_cells: n,
        bins,
        fit: acc.finish().ok(),
    })
}

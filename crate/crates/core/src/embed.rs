//! Skip-gram with negative sampling over cell corpora, cosine similarity,
//! exact top-k neighbor search and the text vector format.
//!
//! Each training example pairs a center cell with one context cell drawn
//! from a randomly shrunk window, plus `negatives` noise cells drawn from the
//! unigram distribution raised to `unigram_power`. The per-example loss is
//!
//! ```text
//! L = -ln σ(u_ctx · v_center) - Σ_k ln σ(-u_k · v_center)
//! ```
//!
//! where `v` are input (published) vectors and `u` are output vectors.
//!
//! With `threads > 1` workers update the shared matrices without locks, so
//! results vary between runs. A single thread with a fixed seed is bit-for-bit
//! reproducible.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocab};
use crate::error::{Error, Result};
use crate::geo::CellId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub unigram_power: f64,
    /// Frequent-token subsampling threshold; 0 disables it.
    pub subsample_t: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 20,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            unigram_power: 0.75,
            subsample_t: 0.0,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start > self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start > lr_end > 0");
        }
        if !(self.subsample_t >= 0.0 && self.unigram_power.is_finite()) {
            return bad("subsample_t must be >= 0 and unigram_power finite");
        }
        Ok(())
    }
}

/// Trained (or loaded) embeddings. Row `i` of each matrix belongs to
/// vocabulary index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: Vocab,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingModel {
    /// Assemble a model from row-major matrices. `output` may be empty, in
    /// which case output vectors are zero.
    pub fn from_parts(vocab: Vocab, dim: usize, input: Vec<f64>, output: Vec<f64>) -> Result<Self> {
        let n = vocab.len() * dim;
        if dim == 0 || input.len() != n {
            return Err(Error::Config(format!(
                "input matrix has {} entries, expected {} x {}",
                input.len(),
                vocab.len(),
                dim
            )));
        }
        let output = if output.is_empty() { vec![0.0; n] } else { output };
        if output.len() != n {
            return Err(Error::Config("output matrix shape mismatch".into()));
        }
        if input.iter().chain(&output).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite vector component".into()));
        }
        Ok(EmbeddingModel {
            vocab,
            dim,
            input,
            output,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_vector(&self, i: usize) -> &[f64] {
        &self.output[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_of(&self, c: CellId) -> Option<&[f64]> {
        self.vocab.index_of(c).map(|i| self.vector(i as usize))
    }

    pub fn similarity(&self, a: CellId, b: CellId) -> Result<f64> {
        let va = self.vector_of(a).ok_or(Error::NotInVocab(a))?;
        let vb = self.vector_of(b).ok_or(Error::NotInVocab(b))?;
        cosine_similarity(va, vb)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cosine from a dot product and the two squared norms, computed exactly as
/// [`cosine_similarity`] does. Identical vectors give exactly 1.
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, sa: f64, sb: f64) -> f64 {
    (dot / (sa * sb).sqrt()).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (sq_norm(a), sq_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

/// The `k` most similar cells to `target`, excluding the target itself.
/// Ties are broken by ascending Morton code. Cells with zero-norm vectors
/// are never returned.
pub fn top_k(model: &EmbeddingModel, target: CellId, k: usize) -> Result<Vec<(CellId, f64)>> {
    let ti = model.vocab.index_of(target).ok_or(Error::NotInVocab(target))? as usize;
    let tv = model.vector(ti);
    let tn = sq_norm(tv);
    if tn == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(CellId, f64)> = (0..model.len())
        .filter(|&i| i != ti)
        .filter_map(|i| {
            let v = model.vector(i);
            let n = sq_norm(v);
            (n > 0.0).then(|| (model.vocab.token(i), cosine_from_parts(dot(tv, v), tn, n)))
        })
        .collect();
    let order = |a: &(CellId, f64), b: &(CellId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    Ok(scored)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one (center, context, negatives) example.
pub fn sgns_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    softplus(-dot(center, context)) + negatives.iter().map(|u| softplus(dot(center, u))).sum::<f64>()
}

/// Analytic gradient of [`sgns_loss`] with respect to every vector involved.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradient {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn sgns_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGradient {
    let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
    // d/dz softplus(-z) = σ(z) - 1, d/dz softplus(z) = σ(z).
    let g_pos = sigmoid(dot(center, context)) - 1.0;
    let mut g_center = scale(context, g_pos);
    let mut g_negs = Vec::with_capacity(negatives.len());
    for u in negatives {
        let g = sigmoid(dot(center, u));
        for (c, x) in g_center.iter_mut().zip(u.iter()) {
            *c += g * x;
        }
        g_negs.push(scale(center, g));
    }
    SgnsGradient {
        center: g_center,
        context: scale(center, g_pos),
        negatives: g_negs,
    }
}

/// Apply one target of an SGD step: `u` moves along its negative gradient and
/// the center's update is accumulated into `acc`. Returns the loss term.
#[inline]
fn update_target(center: &[f64], u: &mut [f64], acc: &mut [f64], label: f64, lr: f64) -> f64 {
    let f = dot(center, u);
    let g = (label - sigmoid(f)) * lr;
    for ((a, ui), ci) in acc.iter_mut().zip(u.iter_mut()).zip(center) {
        *a += g * *ui;
        *ui += g * ci;
    }
    if label > 0.5 {
        softplus(-f)
    } else {
        softplus(f)
    }
}

/// One plain SGD step on a single example, in place. Returns the loss before
/// the update.
pub fn sgd_step(center: &mut [f64], context: &mut [f64], negatives: &mut [Vec<f64>], lr: f64) -> f64 {
    let mut acc = vec![0.0; center.len()];
    let mut loss = update_target(center, context, &mut acc, 1.0, lr);
    for u in negatives.iter_mut() {
        loss += update_target(center, u, &mut acc, 0.0, lr);
    }
    for (c, a) in center.iter_mut().zip(&acc) {
        *c += a;
    }
    loss
}

/// Row-major matrix shared between training threads. Components are stored
/// as `f64` bit patterns in relaxed atomics, which permits racy updates
/// without undefined behavior.
struct SharedMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn new(values: Vec<f64>, dim: usize) -> Self {
        SharedMatrix {
            data: values.into_iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            dim,
        }
    }

    #[inline]
    fn load(&self, row: usize, buf: &mut [f64]) {
        let src = &self.data[row * self.dim..(row + 1) * self.dim];
        for (b, s) in buf.iter_mut().zip(src) {
            *b = f64::from_bits(s.load(Ordering::Relaxed));
        }
    }

    #[inline]
    fn store(&self, row: usize, buf: &[f64]) {
        let dst = &self.data[row * self.dim..(row + 1) * self.dim];
        for (b, d) in buf.iter().zip(dst) {
            d.store(b.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.data.into_iter().map(|a| f64::from_bits(a.into_inner())).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub examples: u64,
    pub tokens_per_epoch: u64,
}

struct Worker<'a> {
    sequences: &'a [Vec<u32>],
    rng: ChaCha8Rng,
}

struct Shared<'a> {
    cfg: &'a TrainConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    noise: WeightedAliasIndex<f64>,
    keep_prob: Option<Vec<f64>>,
    processed: AtomicU64,
    budget: f64,
}

impl Shared<'_> {
    fn learning_rate(&self, processed: u64) -> f64 {
        let progress = (processed as f64 / self.budget).min(1.0);
        self.cfg.lr_start + (self.cfg.lr_end - self.cfg.lr_start) * progress
    }
}

const PROGRESS_FLUSH: u64 = 256;

fn run_epoch(shared: &Shared<'_>, worker: &mut Worker<'_>) -> (f64, u64) {
    let cfg = shared.cfg;
    let dim = cfg.dim;
    let mut center = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    let mut sentence: Vec<u32> = Vec::new();
    let mut loss = 0.0;
    let mut examples = 0u64;
    let mut unflushed = 0u64;

    for seq in worker.sequences {
        sentence.clear();
        match &shared.keep_prob {
            Some(keep) => sentence.extend(
                seq.iter()
                    .copied()
                    .filter(|&w| worker.rng.random::<f64>() < keep[w as usize]),
            ),
            None => sentence.extend_from_slice(seq),
        }
        unflushed += (seq.len() - sentence.len()) as u64;

        for pos in 0..sentence.len() {
            let lr = shared.learning_rate(shared.processed.load(Ordering::Relaxed) + unflushed);
            unflushed += 1;
            if unflushed >= PROGRESS_FLUSH {
                shared.processed.fetch_add(unflushed, Ordering::Relaxed);
                unflushed = 0;
            }

            let span = cfg.window - worker.rng.random_range(0..cfg.window);
            let lo = pos.saturating_sub(span);
            let hi = (pos + span).min(sentence.len() - 1);
            let c = sentence[pos] as usize;
            for (ctx_pos, &ctx) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                if ctx_pos == pos {
                    continue;
                }
                let ctx = ctx as usize;
                shared.input.load(c, &mut center);
                acc.iter_mut().for_each(|a| *a = 0.0);

                shared.output.load(ctx, &mut u);
                loss += update_target(&center, &mut u, &mut acc, 1.0, lr);
                shared.output.store(ctx, &u);
                for _ in 0..cfg.negatives {
                    let neg = shared.noise.sample(&mut worker.rng);
                    if neg == ctx {
                        continue;
                    }
                    shared.output.load(neg, &mut u);
                    loss += update_target(&center, &mut u, &mut acc, 0.0, lr);
                    shared.output.store(neg, &u);
                }
                for (x, a) in center.iter_mut().zip(&acc) {
                    *x += a;
                }
                shared.input.store(c, &center);
                examples += 1;
            }
        }
    }
    shared.processed.fetch_add(unflushed, Ordering::Relaxed);
    (loss, examples)
}

/// Split sequences into `n` contiguous chunks of roughly equal token count.
fn partition(sequences: &[Vec<u32>], n: usize) -> Vec<&[Vec<u32>]> {
    let total: usize = sequences.iter().map(Vec::len).sum();
    let per = total.div_ceil(n).max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    let mut acc = 0;
    for (i, s) in sequences.iter().enumerate() {
        acc += s.len();
        if acc >= per && out.len() + 1 < n {
            out.push(&sequences[start..=i]);
            start = i + 1;
            acc = 0;
        }
    }
    out.push(&sequences[start..]);
    out
}

pub fn train_sgns(corpus: &Corpus, cfg: &TrainConfig) -> Result<EmbeddingModel> {
    train_sgns_with_report(corpus, cfg).map(|(m, _)| m)
}

pub fn train_sgns_with_report(
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport)> {
    cfg.validate()?;
    let vocab = &corpus.vocab;
    if vocab.len() < 2 {
        return Err(Error::Insufficient(format!(
            "need at least 2 vocabulary entries to train, got {}",
            vocab.len()
        )));
    }
    if corpus.sequences.is_empty() {
        return Err(Error::Insufficient("corpus has no sequences".into()));
    }

    let weights: Vec<f64> = (0..vocab.len())
        .map(|i| (vocab.count(i) as f64).powf(cfg.unigram_power))
        .collect();
    let noise = WeightedAliasIndex::new(weights)
        .map_err(|e| Error::Config(format!("invalid noise distribution: {e}")))?;

    let keep_prob = (cfg.subsample_t > 0.0).then(|| {
        let total = vocab.total_count() as f64;
        (0..vocab.len())
            .map(|i| {
                let f = vocab.count(i) as f64 / total;
                let r = cfg.subsample_t / f;
                (r.sqrt() + r).min(1.0)
            })
            .collect::<Vec<_>>()
    });

    let dim = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = 0.5 / dim as f64;
    let input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| init_rng.random_range(-half..half))
        .collect();

    let tokens_per_epoch: u64 = corpus.sequences.iter().map(|s| s.len() as u64).sum();
    let shared = Shared {
        cfg,
        input: SharedMatrix::new(input, dim),
        output: SharedMatrix::new(vec![0.0; vocab.len() * dim], dim),
        noise,
        keep_prob,
        processed: AtomicU64::new(0),
        budget: (tokens_per_epoch * cfg.epochs as u64).max(1) as f64,
    };

    let mut workers: Vec<Worker<'_>> = partition(&corpus.sequences, cfg.threads)
        .into_iter()
        .enumerate()
        .map(|(i, sequences)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            Worker { sequences, rng }
        })
        .collect();

    let mut report = TrainReport {
        tokens_per_epoch,
        ..TrainReport::default()
    };
    for epoch in 0..cfg.epochs {
        let results: Vec<(f64, u64)> = if workers.len() == 1 {
            vec![run_epoch(&shared, &mut workers[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .map(|w| {
                        let shared = &shared;
                        s.spawn(move || run_epoch(shared, w))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let loss: f64 = results.iter().map(|r| r.0).sum();
        let n: u64 = results.iter().map(|r| r.1).sum();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                detail: format!(
                    "accumulated loss {loss} over {n} examples (lr_start {}, dim {})",
                    cfg.lr_start, cfg.dim
                ),
            });
        }
        let mean = if n > 0 { loss / n as f64 } else { 0.0 };
        log::info!("epoch {}/{}: {} examples, mean loss {:.5}", epoch + 1, cfg.epochs, n, mean);
        report.epoch_loss.push(mean);
        report.examples += n;
    }

    drop(workers);
    let Shared { input, output, .. } = shared;
    let model = EmbeddingModel::from_parts(vocab.clone(), dim, input.into_vec(), output.into_vec())
        .map_err(|_| Error::Diverged {
            epoch: cfg.epochs,
            detail: "non-finite weights after training".into(),
        })?;
    Ok((model, report))
}

/// Round to 9 significant digits and print the shortest decimal that parses
/// back to the rounded value.
fn fmt_sig9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn write_matrix(sink: impl Write, vocab: &Vocab, dim: usize, data: &[f64]) -> io::Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "{} {}", vocab.len(), dim)?;
    for (i, tok) in vocab.tokens().enumerate() {
        write!(w, "{tok}")?;
        for v in &data[i * dim..(i + 1) * dim] {
            write!(w, " {}", fmt_sig9(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()
}

fn read_matrix(source: impl BufRead) -> Result<(Vec<CellId>, usize, Vec<f64>)> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::format(1, "empty file"))?;
    let mut h = header.split_whitespace();
    let (Some(n), Some(dim), None) = (h.next(), h.next(), h.next()) else {
        return Err(Error::format(1, "header must be `count dim`"));
    };
    let n: usize = n.parse().map_err(|_| Error::format(1, "bad vocabulary size"))?;
    let dim: usize = dim.parse().map_err(|_| Error::format(1, "bad dimension"))?;
    if dim == 0 {
        return Err(Error::format(1, "dimension must be >= 1"));
    }
    let mut tokens = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok: CellId = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(lineno, "bad token"))?;
        let before = data.len();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::format(lineno, format!("bad component {p:?}")))?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(Error::format(
                lineno,
                format!("expected {dim} components, found {}", data.len() - before),
            ));
        }
        tokens.push(tok);
    }
    if tokens.len() != n {
        return Err(Error::format(
            0,
            format!("header announces {n} rows, found {}", tokens.len()),
        ));
    }
    Ok((tokens, dim, data))
}

/// Write input vectors to `input_sink` and output vectors to `output_sink`,
/// both as `count dim` followed by `token v1 ... v_dim` rows.
pub fn save_embeddings(
    model: &EmbeddingModel,
    input_sink: impl Write,
    output_sink: Option<&mut dyn Write>,
) -> Result<()> {
    if model.is_empty() {
        return Err(Error::Insufficient("cannot save an empty model".into()));
    }
    write_matrix(input_sink, &model.vocab, model.dim, &model.input)?;
    if let Some(out) = output_sink {
        write_matrix(out, &model.vocab, model.dim, &model.output)?;
    }
    Ok(())
}

/// Load a model. Token counts are not part of the vector format; loaded
/// vocabularies carry a count of zero for every token and keep file order.
pub fn load_embeddings(input: impl Read, output: Option<&mut dyn Read>) -> Result<EmbeddingModel> {
    let (tokens, dim, data) = read_matrix(BufReader::new(input))?;
    let out = match output {
        Some(r) => {
            let (otokens, odim, odata) = read_matrix(BufReader::new(r))?;
            if otokens != tokens || odim != dim {
                return Err(Error::format(0, "output vectors do not match input vectors"));
            }
            odata
        }
        None => Vec::new(),
    };
    let vocab = Vocab::in_order(tokens.iter().map(|t| (*t, 0)).collect())?;
    EmbeddingModel::from_parts(vocab, dim, data, out)
}

/// Path of the output-vector sidecar for an embedding file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ctx");
    PathBuf::from(s)
}

pub fn save_embeddings_to(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let input = File::create(path)?;
    let mut output = File::create(sidecar_path(path))?;
    save_embeddings(model, input, Some(&mut output))
}

/// Load an embedding file, plus its sidecar when present.
pub fn load_embeddings_from(path: &Path) -> Result<EmbeddingModel> {
    let input = File::open(path)?;
    let side = sidecar_path(path);
    if side.exists() {
        let mut out = File::open(side)?;
        load_embeddings(input, Some(&mut out))
    } else {
        load_embeddings(input, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vocab_of(n: usize) -> Vocab {
        Vocab::from_counts((0..n).map(|i| (CellId(i as u64), 100 - i as u64)).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert_abs_diff_eq!(cosine_similarity(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let oracle = 32.0 / (14.0f64 * 77.0).sqrt();
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.974_631_846, epsilon = 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_properties(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(sq_norm(&a) > 1e-12 && sq_norm(&b) > 1e-12);
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_k_contract() {
        let vocab = vocab_of(5);
        let input = vec![
            1.0, 0.0, // 0
            1.0, 0.0, // 1: duplicate of 0
            0.0, 1.0, // 2
            1.0, 1.0, // 3
            -1.0, 0.0, // 4
        ];
        let m = EmbeddingModel::from_parts(vocab, 2, input, Vec::new()).unwrap();
        assert!(top_k(&m, CellId(0), 0).unwrap().is_empty());
        let all = top_k(&m, CellId(0), 4).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[0], (CellId(1), 1.0));
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(top_k(&m, CellId(1), 1).unwrap(), vec![(CellId(0), 1.0)]);
        assert_eq!(top_k(&m, CellId(0), 99).unwrap().len(), 4);
        assert!(matches!(top_k(&m, CellId(42), 3), Err(Error::NotInVocab(_))));
    }

    #[test]
    fn top_k_ties_by_code() {
        let vocab = vocab_of(4);
        let input = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let m = EmbeddingModel::from_parts(vocab, 2, input, Vec::new()).unwrap();
        let r = top_k(&m, CellId(0), 3).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![CellId(1), CellId(2), CellId(3)]);
    }

    #[test]
    fn single_step_moves_probabilities() {
        let mut center = vec![0.1, -0.2, 0.3];
        let mut ctx = vec![0.05, 0.1, -0.1];
        let mut negs = vec![vec![0.2, 0.1, 0.4]];
        let before_pos = sigmoid(dot(&center, &ctx));
        let before_neg = sigmoid(dot(&center, &negs[0]));

        // Hand-computed step with lr 0.025.
        let lr = 0.025;
        let g_pos = (1.0 - before_pos) * lr;
        let g_neg = (0.0 - before_neg) * lr;
        let expect_center: Vec<f64> = (0..3)
            .map(|i| center[i] + g_pos * ctx[i] + g_neg * negs[0][i])
            .collect();
        let expect_ctx: Vec<f64> = (0..3).map(|i| ctx[i] + g_pos * center[i]).collect();

        sgd_step(&mut center, &mut ctx, &mut negs, lr);
        for i in 0..3 {
            assert_abs_diff_eq!(center[i], expect_center[i], epsilon = 1e-15);
            assert_abs_diff_eq!(ctx[i], expect_ctx[i], epsilon = 1e-15);
        }
        assert!(sigmoid(dot(&center, &ctx)) > before_pos);
        assert!(sigmoid(dot(&center, &negs[0])) < before_neg);
    }

    #[test]
    fn gradient_matches_sgd_direction() {
        let center = vec![0.3, -0.1];
        let ctx = vec![0.2, 0.5];
        let neg = vec![-0.4, 0.1];
        let g = sgns_gradient(&center, &ctx, &[&neg]);
        let (mut c, mut x, mut n) = (center.clone(), ctx.clone(), vec![neg.clone()]);
        let lr = 1e-3;
        sgd_step(&mut c, &mut x, &mut n, lr);
        for i in 0..2 {
            assert_abs_diff_eq!(c[i], center[i] - lr * g.center[i], epsilon = 1e-15);
            assert_abs_diff_eq!(x[i], ctx[i] - lr * g.context[i], epsilon = 1e-15);
            assert_abs_diff_eq!(n[0][i], neg[i] - lr * g.negatives[0][i], epsilon = 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { window: 0, ..Default::default() },
            TrainConfig { negatives: 0, ..Default::default() },
            TrainConfig { lr_end: 0.1, ..Default::default() },
            TrainConfig { lr_end: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn toy_corpus() -> Corpus {
        let vocab = vocab_of(6);
        let sequences = (0..200)
            .map(|i| (0..8).map(|j| ((i + j) % 6) as u32).collect())
            .collect();
        Corpus { sequences, vocab }
    }

    #[test]
    fn training_shape_and_determinism() {
        let c = toy_corpus();
        let cfg = TrainConfig { dim: 7, ..Default::default() };
        let (a, report) = train_sgns_with_report(&c, &cfg).unwrap();
        assert_eq!((a.len(), a.dim()), (6, 7));
        assert_eq!(report.epoch_loss.len(), cfg.epochs);
        assert!(report.epoch_loss.last() < report.epoch_loss.first());
        let b = train_sgns(&c, &cfg).unwrap();
        assert_eq!(a, b);
        let other = train_sgns(&c, &TrainConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn multi_threaded_training_runs() {
        let c = toy_corpus();
        let cfg = TrainConfig { threads: 3, ..Default::default() };
        let m = train_sgns(&c, &cfg).unwrap();
        assert_eq!(m.len(), 6);
        assert!(m.input.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn subsampling_runs() {
        let cfg = TrainConfig { subsample_t: 1e-2, ..Default::default() };
        assert!(train_sgns(&toy_corpus(), &cfg).is_ok());
    }

    #[test]
    fn too_small_vocab() {
        let c = Corpus { sequences: vec![vec![0, 0]], vocab: vocab_of(1) };
        assert!(matches!(train_sgns(&c, &TrainConfig::default()), Err(Error::Insufficient(_))));
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let cfg = TrainConfig { lr_start: 1e300, lr_end: 1e299, ..Default::default() };
        assert!(matches!(train_sgns(&toy_corpus(), &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn partition_covers_everything() {
        let seqs: Vec<Vec<u32>> = (0..10).map(|i| vec![0; i + 1]).collect();
        for n in 1..6 {
            let parts = partition(&seqs, n);
            assert!(parts.len() <= n);
            assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), 10);
        }
    }

    #[test]
    fn small_file_is_exact() {
        let vocab = Vocab::from_counts(vec![(CellId(7), 3)]).unwrap();
        let m = EmbeddingModel::from_parts(vocab, 2, vec![0.5, -0.25], Vec::new()).unwrap();
        let mut buf = Vec::new();
        let mut side = Vec::new();
        save_embeddings(&m, &mut buf, Some(&mut side)).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1 2\n7 0.5 -0.25\n");
        assert_eq!(String::from_utf8(side.clone()).unwrap(), "1 2\n7 0 0\n");
        let back = load_embeddings(&buf[..], Some(&mut &side[..])).unwrap();
        assert_eq!(back.vector(0), &[0.5, -0.25]);
        assert_eq!(back.vocab().token(0), CellId(7));
    }

    #[test]
    fn empty_model_cannot_be_saved() {
        let vocab = Vocab::in_order(Vec::new()).unwrap();
        let m = EmbeddingModel::from_parts(vocab, 2, Vec::new(), Vec::new()).unwrap();
        assert!(save_embeddings(&m, Vec::new(), None).is_err());
    }

    #[test]
    fn malformed_files() {
        assert!(load_embeddings(&b""[..], None).is_err());
        assert!(load_embeddings(&b"1\n"[..], None).is_err());
        assert!(load_embeddings(&b"1 2\n7 0.5\n"[..], None).is_err());
        assert!(load_embeddings(&b"2 2\n7 0.5 1\n"[..], None).is_err());
        assert!(load_embeddings(&b"1 2\n7 0.5 x\n"[..], None).is_err());
    }

    #[test]
    fn loaded_order_is_file_order() {
        let text = "3 1\n9 1\n2 2\n5 3\n";
        let m = load_embeddings(text.as_bytes(), None).unwrap();
        assert_eq!(m.vocab().tokens().collect::<Vec<_>>(), vec![CellId(9), CellId(2), CellId(5)]);
        assert_eq!(m.vector_of(CellId(5)), Some(&[3.0][..]));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(-123_456_789_012.0), "-123456789000");
        assert_eq!(fmt_sig9(0.0), "0");
    }
}

//! Vocabulary construction and corpus encoding. Cells are the tokens and a
//! trajectory's collapsed cell sequence is a sentence.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::CellId;

/// Frequency-filtered token table. Indices are dense and ordered by
/// descending count, ties broken by ascending Morton code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<(CellId, u64)>,
    index: HashMap<CellId, u32>,
    total_count: u64,
}

impl Vocab {
    /// Build from `(token, count)` pairs; the order is normalized.
    pub fn from_counts(mut tokens: Vec<(CellId, u64)>) -> Result<Self> {
        tokens.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::in_order(tokens)
    }

    /// Build keeping the given order, e.g. the row order of a vector file.
    pub fn in_order(tokens: Vec<(CellId, u64)>) -> Result<Self> {
        if tokens.len() > u32::MAX as usize {
            return Err(Error::Config("vocabulary too large".into()));
        }
        let index: HashMap<CellId, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, (c, _))| (*c, i as u32))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::format(0, "duplicate token in vocabulary"));
        }
        let total_count = tokens.iter().map(|(_, n)| n).sum();
        Ok(Vocab {
            tokens,
            index,
            total_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, c: CellId) -> Option<u32> {
        self.index.get(&c).copied()
    }

    pub fn token(&self, i: usize) -> CellId {
        self.tokens[i].0
    }

    pub fn count(&self, i: usize) -> u64 {
        self.tokens[i].1
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn tokens(&self) -> impl ExactSizeIterator<Item = CellId> + '_ {
        self.tokens.iter().map(|(c, _)| *c)
    }

    pub fn entries(&self) -> &[(CellId, u64)] {
        &self.tokens
    }

    /// `token count` per line.
    pub fn write_to(&self, sink: impl Write) -> io::Result<()> {
        let mut w = io::BufWriter::new(sink);
        for (c, n) in &self.tokens {
            writeln!(w, "{c} {n}")?;
        }
        w.flush()
    }

    pub fn read_from(source: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(tok), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::format(i + 1, "expected `token count`"));
            };
            let tok = tok
                .parse::<CellId>()
                .map_err(|e| Error::format(i + 1, format!("bad token: {e}")))?;
            let count = count
                .parse::<u64>()
                .map_err(|e| Error::format(i + 1, format!("bad count: {e}")))?;
            tokens.push((tok, count));
        }
        Vocab::from_counts(tokens)
    }
}

/// Count post-collapse occurrences and keep tokens seen at least `min_count`
/// times.
pub fn build_vocab<'a, I>(seqs: I, min_count: u64) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [CellId]>,
{
    let mut counts: HashMap<CellId, u64> = HashMap::new();
    for seq in seqs {
        for c in seq {
            *counts.entry(*c).or_default() += 1;
        }
    }
    let kept: Vec<(CellId, u64)> = counts.into_iter().filter(|(_, n)| *n >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocab { min_count });
    }
    Vocab::from_counts(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<Vec<u32>>,
    pub vocab: Vocab,
}

/// Shortest sequence that still provides skip-gram context.
pub const MIN_SEQUENCE_LEN: usize = 2;

/// Map tokens to vocabulary indices. Out-of-vocabulary tokens are dropped,
/// runs of equal tokens left behind are collapsed, then sequences shorter
/// than two tokens are dropped.
pub fn encode_corpus<'a, I>(seqs: I, vocab: Vocab) -> Corpus
where
    I: IntoIterator<Item = &'a [CellId]>,
{
    let sequences = seqs
        .into_iter()
        .map(|s| {
            let mut ids: Vec<u32> = s.iter().filter_map(|c| vocab.index_of(*c)).collect();
            ids.dedup();
            ids
        })
        .filter(|s| s.len() >= MIN_SEQUENCE_LEN)
        .collect();
    Corpus { sequences, vocab }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sequences: usize,
    pub n_cells: usize,
    pub mean_len: f64,
    /// Population standard deviation.
    pub stddev_len: f64,
}

pub fn corpus_stats(c: &Corpus) -> Result<CorpusStats> {
    length_stats(c.sequences.iter().map(Vec::len))
}

pub fn length_stats(lengths: impl IntoIterator<Item = usize>) -> Result<CorpusStats> {
    let lengths: Vec<usize> = lengths.into_iter().collect();
    if lengths.is_empty() {
        return Err(Error::Insufficient("corpus has no sequences".into()));
    }
    let n = lengths.len() as f64;
    let n_cells: usize = lengths.iter().sum();
    let mean = n_cells as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(CorpusStats {
        n_sequences: lengths.len(),
        n_cells,
        mean_len: mean,
        stddev_len: var.sqrt(),
    })
}

/// One sequence per line, space-separated decimal Morton codes.
pub fn write_sequences<'a, I>(sink: impl Write, seqs: I) -> io::Result<()>
where
    I: IntoIterator<Item = &'a [CellId]>,
{
    let mut w = io::BufWriter::new(sink);
    for seq in seqs {
        let mut first = true;
        for c in seq {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{c}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_sequences(source: impl BufRead) -> Result<Vec<Vec<CellId>>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let seq = line
            .split_whitespace()
            .map(|t| t.parse::<CellId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(i + 1, format!("bad cell code: {e}")))?;
        if !seq.is_empty() {
            out.push(seq);
        }
    }
    Ok(out)
}

impl Corpus {
    /// Sequences decoded back to cell ids.
    pub fn cell_sequences(&self) -> impl Iterator<Item = Vec<CellId>> + '_ {
        self.sequences
            .iter()
            .map(|s| s.iter().map(|&i| self.vocab.token(i as usize)).collect())
    }
}

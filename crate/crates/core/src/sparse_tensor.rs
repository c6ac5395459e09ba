//! Coordinate-format sparse count tensors.
//!
//! Text format: the first non-comment line is `dims: n_1 ... n_K`; every
//! following non-comment line holds K zero-based indices and a positive
//! count separated by whitespace. Lines starting with `#` are comments.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Mode sizes of a K-way tensor, K ≥ 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Validation(format!("a tensor needs at least 2 modes, got {}", dims.len())));
        }
        if let Some(k) = dims.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("mode {k} has size 0")));
        }
        Ok(TensorShape { dims })
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of cells, saturating at `u128::MAX`.
    pub fn volume(&self) -> u128 {
        self.dims.iter().fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.dims.len() && index.iter().zip(&self.dims).all(|(i, n)| i < n)
    }
}

/// One stored cell: a K-tuple of zero-based indices and its count.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Entry {
    pub index: Vec<usize>,
    pub count: u64,
}

impl Entry {
    pub fn new(index: Vec<usize>, count: u64) -> Self {
        Entry { index, count }
    }
}

/// What to do with repeated coordinates while building a tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DuplicatePolicy {
    #[default]
    Reject,
    Sum,
}

/// Nonzero entries of a count tensor, with indices stored flat (N × K).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCountTensor {
    shape: TensorShape,
    indices: Vec<usize>,
    counts: Vec<u64>,
}

impl SparseCountTensor {
    /// Builds a tensor, rejecting out-of-range indices, zero counts, and repeated coordinates.
    pub fn new(shape: TensorShape, entries: Vec<Entry>) -> Result<Self> {
        Self::with_policy(shape, entries, DuplicatePolicy::Reject)
    }

    pub fn with_policy(shape: TensorShape, entries: Vec<Entry>, policy: DuplicatePolicy) -> Result<Self> {
        let mut builder = Builder::new(shape, policy);
        for (i, entry) in entries.into_iter().enumerate() {
            builder.push(entry, i + 1)?;
        }
        Ok(builder.finish())
    }

    pub fn empty(shape: TensorShape) -> Self {
        SparseCountTensor { shape, indices: Vec::new(), counts: Vec::new() }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn num_modes(&self) -> usize {
        self.shape.num_modes()
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize) -> &[usize] {
        let k = self.num_modes();
        &self.indices[n * k..(n + 1) * k]
    }

    #[inline]
    pub fn count(&self, n: usize) -> u64 {
        self.counts[n]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[usize], u64)> + '_ {
        self.indices.chunks_exact(self.num_modes()).zip(self.counts.iter().copied())
    }

    pub fn entries(&self) -> Vec<Entry> {
        self.iter().map(|(index, count)| Entry::new(index.to_vec(), count)).collect()
    }

    /// A new tensor holding the entries at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> SparseCountTensor {
        let k = self.num_modes();
        let mut indices = Vec::with_capacity(positions.len() * k);
        let mut counts = Vec::with_capacity(positions.len());
        for &n in positions {
            indices.extend_from_slice(self.index(n));
            counts.push(self.counts[n]);
        }
        SparseCountTensor { shape: self.shape.clone(), indices, counts }
    }

    /// Randomly partitions the stored entries into (train, heldout) with
    /// `round(fraction · N)` heldout entries.
    pub fn split_heldout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Argument(format!("heldout fraction must lie in (0, 1), got {fraction}")));
        }
        if self.nnz() < 2 {
            return Err(Error::Argument(format!("cannot split a tensor with {} entries", self.nnz())));
        }
        let mut order: Vec<usize> = (0..self.nnz()).collect();
        order.shuffle(&mut seeded_rng(seed));
        let num_heldout = (fraction * self.nnz() as f64).round() as usize;
        let (heldout, train) = order.split_at(num_heldout);
        let mut train = train.to_vec();
        let mut heldout = heldout.to_vec();
        train.sort_unstable();
        heldout.sort_unstable();
        Ok((self.select(&train), self.select(&heldout)))
    }

    pub fn read_from(reader: impl BufRead, policy: DuplicatePolicy) -> Result<Self> {
        let mut builder: Option<Builder> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match builder.as_mut() {
                None => {
                    let rest = trimmed.strip_prefix("dims:").ok_or_else(|| {
                        Error::Format(format!("line {lineno}: expected `dims: n_1 ... n_K` header before any entry"))
                    })?;
                    let dims = rest
                        .split_whitespace()
                        .map(|tok| parse_token::<usize>(tok, lineno))
                        .collect::<Result<Vec<_>>>()?;
                    builder = Some(Builder::new(TensorShape::new(dims)?, policy));
                }
                Some(b) => {
                    let k = b.shape.num_modes();
                    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
                    if tokens.len() != k + 1 {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("expected {} indices and a count, found {} fields", k, tokens.len()),
                        });
                    }
                    let index =
                        tokens[..k].iter().map(|tok| parse_token::<usize>(tok, lineno)).collect::<Result<Vec<_>>>()?;
                    let count = parse_token::<u64>(tokens[k], lineno)?;
                    b.push(Entry::new(index, count), lineno)?;
                }
            }
        }
        builder.map(Builder::finish).ok_or_else(|| Error::Format("missing `dims:` header".into()))
    }

    pub fn load(path: impl AsRef<Path>, policy: DuplicatePolicy) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), policy)
    }

    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        write!(writer, "dims:")?;
        for n in self.shape.dims() {
            write!(writer, " {n}")?;
        }
        writeln!(writer)?;
        for (index, count) in self.iter() {
            for i in index {
                write!(writer, "{i} ")?;
            }
            writeln!(writer, "{count}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        self.write_to(&mut writer).and_then(|_| writer.flush()).map_err(|e| Error::io(path, e))
    }
}

fn parse_token<T: std::str::FromStr>(token: &str, line: usize) -> Result<T> {
    token.parse().map_err(|_| Error::Parse { line, message: format!("`{token}` is not a non-negative integer") })
}

struct Builder {
    shape: TensorShape,
    policy: DuplicatePolicy,
    seen: std::collections::HashMap<Vec<usize>, usize>,
    indices: Vec<usize>,
    counts: Vec<u64>,
}

impl Builder {
    fn new(shape: TensorShape, policy: DuplicatePolicy) -> Self {
        Builder { shape, policy, seen: Default::default(), indices: Vec::new(), counts: Vec::new() }
    }

    fn push(&mut self, entry: Entry, line: usize) -> Result<()> {
        if entry.index.len() != self.shape.num_modes() {
            return Err(Error::Validation(format!(
                "line {line}: index {:?} has {} modes, tensor has {}",
                entry.index,
                entry.index.len(),
                self.shape.num_modes()
            )));
        }
        for (k, (&i, &n)) in entry.index.iter().zip(self.shape.dims()).enumerate() {
            if i >= n {
                return Err(Error::Validation(format!(
                    "line {line}: index {i} in mode {k} is out of range (size {n})"
                )));
            }
        }
        if entry.count == 0 {
            return Err(Error::Validation(format!("line {line}: stored counts must be positive")));
        }
        match self.seen.get(&entry.index) {
            Some(&pos) => match self.policy {
                DuplicatePolicy::Reject => return Err(Error::DuplicateIndex { index: entry.index, line }),
                DuplicatePolicy::Sum => {
                    self.counts[pos] = self.counts[pos]
                        .checked_add(entry.count)
                        .ok_or_else(|| Error::Validation(format!("line {line}: count overflow")))?;
                }
            },
            None => {
                self.seen.insert(entry.index.clone(), self.counts.len());
                self.indices.extend_from_slice(&entry.index);
                self.counts.push(entry.count);
            }
        }
        Ok(())
    }

    fn finish(self) -> SparseCountTensor {
        SparseCountTensor { shape: self.shape, indices: self.indices, counts: self.counts }
    }
}

/// Checks the no-duplicates invariant. Used by tests and debug assertions.
pub fn has_unique_indices(tensor: &SparseCountTensor) -> bool {
    let mut seen = HashSet::with_capacity(tensor.nnz());
    tensor.iter().all(|(index, _)| seen.insert(index.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SparseCountTensor> {
        SparseCountTensor::read_from(text.as_bytes(), DuplicatePolicy::Reject)
    }

    #[test]
    fn parses_header_and_entry() {
        let t = parse("# toy\ndims: 2 2\n0 1 3\n").unwrap();
        assert_eq!(t.shape().dims(), &[2, 2]);
        assert_eq!(t.nnz(), 1);
        assert_eq!(t.entries(), vec![Entry::new(vec![0, 1], 3)]);
    }

    #[test]
    fn out_of_range_index_is_a_validation_error() {
        let err = parse("dims: 2 2 2\n5 0 1 1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        // three tokens under a 3-mode header is an arity error
        let err = parse("dims: 2 2 2\n5 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_index_rejected_unless_summing() {
        let text = "dims: 2 2\n0 0 1\n0 0 2\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, Error::DuplicateIndex { line: 3, .. }), "{err}");
        let summed = SparseCountTensor::read_from(text.as_bytes(), DuplicatePolicy::Sum).unwrap();
        assert_eq!(summed.entries(), vec![Entry::new(vec![0, 0], 3)]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse("dims: 2 2\n\n0 x 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("dims: 2 2\n0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("dims: 2 2\n0 1 -4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_header_is_a_format_error() {
        assert!(matches!(parse("0 1 3\n"), Err(Error::Format(_))));
        assert!(matches!(parse("# only comments\n"), Err(Error::Format(_))));
    }

    #[test]
    fn shape_validation() {
        assert!(TensorShape::new(vec![3]).is_err());
        assert!(TensorShape::new(vec![3, 0]).is_err());
        assert!(parse("dims: 4\n").is_err());
        assert!(parse("dims: 0 1\n").is_err());
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(parse("dims: 2 2\n0 0 0\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let shape = TensorShape::new(vec![10, 10]).unwrap();
        let entries = (0..100).map(|i| Entry::new(vec![i / 10, i % 10], 1 + i as u64)).collect();
        let t = SparseCountTensor::new(shape, entries).unwrap();
        let (train, heldout) = t.split_heldout(0.05, 3).unwrap();
        assert_eq!((train.nnz(), heldout.nnz()), (95, 5));
        assert_eq!(t.split_heldout(0.05, 3).unwrap(), (train, heldout));
    }

    #[test]
    fn split_half_of_four() {
        let t = parse("dims: 2 2\n0 0 1\n0 1 2\n1 0 3\n1 1 4\n").unwrap();
        let (train, heldout) = t.split_heldout(0.5, 11).unwrap();
        assert_eq!((train.nnz(), heldout.nnz()), (2, 2));
        let a: HashSet<_> = train.entries().into_iter().collect();
        let b: HashSet<_> = heldout.entries().into_iter().collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn split_argument_errors() {
        let t = parse("dims: 2 2\n0 0 1\n0 1 2\n").unwrap();
        assert!(matches!(t.split_heldout(0.0, 1), Err(Error::Argument(_))));
        assert!(matches!(t.split_heldout(1.0, 1), Err(Error::Argument(_))));
        let single = parse("dims: 2 2\n0 0 1\n").unwrap();
        assert!(single.split_heldout(0.5, 1).is_err());
    }

    #[test]
    fn written_text_is_canonical() {
        let t = parse("dims: 3 2\n# c\n2 1 7\n0 0 1\n").unwrap();
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "dims: 3 2\n2 1 7\n0 0 1\n");
    }
}

//! Reconstruction, heldout scoring, and effective rank.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::sparse_tensor::SparseCountTensor;
use crate::special::ln_factorial;

/// Rates below this are floored before taking logs.
pub const RATE_FLOOR: f64 = 1e-12;

/// Default relative threshold on λ for counting a component as active.
pub const DEFAULT_RANK_THRESHOLD: f64 = 0.01;

/// Σ_r λ_r Π_k U^(k)[i_k, r].
#[inline]
pub fn reconstruct_rate(index: &[usize], model: &ModelState) -> f64 {
    let mut total = 0.0;
    for (r, &lambda) in model.lambda.iter().enumerate() {
        let mut term = lambda;
        for (f, &i) in model.factors.iter().zip(index) {
            term *= f.get(i, r);
        }
        total += term;
    }
    total
}

/// Poisson log-likelihood of the heldout counts under the plug-in rates.
pub fn heldout_loglik(heldout: &SparseCountTensor, model: &ModelState) -> f64 {
    heldout.iter().map(|(index, y)| poisson_log_pmf(y, reconstruct_rate(index, model))).sum()
}

/// Mean |y − rate| over heldout entries; zero for an empty heldout set.
pub fn heldout_mae(heldout: &SparseCountTensor, model: &ModelState) -> f64 {
    if heldout.is_empty() {
        return 0.0;
    }
    let total: f64 = heldout.iter().map(|(index, y)| (y as f64 - reconstruct_rate(index, model)).abs()).sum();
    total / heldout.nnz() as f64
}

/// log Pois(y; rate), with the rate floored at [`RATE_FLOOR`].
pub fn poisson_log_pmf(y: u64, rate: f64) -> f64 {
    let rate = rate.max(RATE_FLOOR);
    y as f64 * rate.ln() - rate - ln_factorial(y)
}

/// Number of components with λ_r > threshold · max λ.
pub fn effective_rank(lambda: &[f64], rel_threshold: f64) -> Result<usize> {
    let max = lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Argument("effective rank needs at least one positive weight".into()));
    }
    if !(rel_threshold >= 0.0 && rel_threshold.is_finite()) {
        return Err(Error::Argument(format!("rank threshold {rel_threshold} is invalid")));
    }
    Ok(lambda.iter().filter(|&&l| l > rel_threshold * max).count())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub heldout_loglik: f64,
    pub heldout_mae: f64,
    pub effective_rank: usize,
}

/// Per-evaluation record of a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iter,elapsed_sec,heldout_loglik,heldout_mae,effective_rank";

impl FitTrace {
    pub fn new() -> Self {
        FitTrace::default()
    }

    /// Appends a row; iterations must strictly increase and time must not go backwards.
    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration || row.elapsed_seconds < last.elapsed_seconds {
                return Err(Error::Validation(format!("trace row {row:?} does not follow {last:?}")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Scores `model` on `heldout` and appends the row.
    pub fn record(
        &mut self,
        iteration: usize,
        elapsed_seconds: f64,
        heldout: &SparseCountTensor,
        model: &ModelState,
        rank_threshold: f64,
    ) -> Result<TraceRow> {
        let row = TraceRow {
            iteration,
            elapsed_seconds,
            heldout_loglik: heldout_loglik(heldout, model),
            heldout_mae: heldout_mae(heldout, model),
            effective_rank: effective_rank(&model.lambda, rank_threshold)?,
        };
        self.push(row)?;
        Ok(row)
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration, r.elapsed_seconds, r.heldout_loglik, r.heldout_mae, r.effective_rank
            )?;
        }
        Ok(())
    }

    pub fn read_csv(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::Format(format!("trace must start with `{TRACE_HEADER}`"))),
        }
        let mut trace = FitTrace::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = |what: &str| Error::Parse { line: n + 1, message: format!("bad {what}") };
            if fields.len() != 5 {
                return Err(bad("field count"));
            }
            trace.push(TraceRow {
                iteration: fields[0].parse().map_err(|_| bad("iter"))?,
                elapsed_seconds: fields[1].parse().map_err(|_| bad("elapsed_sec"))?,
                heldout_loglik: fields[2].parse().map_err(|_| bad("heldout_loglik"))?,
                heldout_mae: fields[3].parse().map_err(|_| bad("heldout_mae"))?,
                effective_rank: fields[4].parse().map_err(|_| bad("effective_rank"))?,
            })?;
        }
        Ok(trace)
    }
}

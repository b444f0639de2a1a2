//! Map-quality and exploration metrics.
//!
//! The confidence histogram pools per-cell confidence values sampled from
//! the local map over a whole run set. From its shape a confidence
//! threshold is derived as the largest bin edge with at most a given tail
//! mass below it; the low-confidence ratio then scores a finished map by
//! the share of observed cells at or below that threshold.

use crate::elevation::GlobalConfidenceMap;
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 10;

/// Histogram of confidence values in [0, 1], bin width 0.1. The last bin
/// is closed so a confidence of exactly 1 lands in it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfidenceHistogram {
    counts: [u64; HISTOGRAM_BINS],
}

impl ConfidenceHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [u64; HISTOGRAM_BINS]) -> Self {
        ConfidenceHistogram { counts }
    }

    pub fn add(&mut self, confidence: f64) {
        assert!(
            (0.0..=1.0).contains(&confidence),
            "confidence out of range: {confidence}"
        );
        let bin = ((confidence * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        self.counts[bin] += 1;
    }

    pub fn add_all<I: IntoIterator<Item = f64>>(&mut self, values: I) {
        for v in values {
            self.add(v);
        }
    }

    pub fn merge(&mut self, other: &ConfidenceHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    pub fn counts(&self) -> &[u64; HISTOGRAM_BINS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mass strictly below the edge at `k / 10`.
    pub fn mass_below_edge(&self, k: usize) -> u64 {
        assert!(k <= HISTOGRAM_BINS);
        self.counts[..k].iter().sum()
    }
}

/// Largest bin edge `k / 10` whose below-edge mass is at most
/// `tail * total`. The zero edge always qualifies, so a histogram with no
/// thin tail yields 0.0. Errors on an empty histogram.
pub fn derive_threshold(hist: &ConfidenceHistogram, tail: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tail) {
        return Err(Error::Parameter(format!("tail fraction out of range: {tail}")));
    }
    let total = hist.total();
    if total == 0 {
        return Err(Error::Parameter("cannot derive a threshold from an empty histogram".into()));
    }
    let budget = tail * total as f64;
    let mut best = 0.0;
    for k in 1..HISTOGRAM_BINS {
        if hist.mass_below_edge(k) as f64 <= budget {
            best = k as f64 / HISTOGRAM_BINS as f64;
        }
    }
    Ok(best)
}

/// Percentage of observed cells whose confidence is at or below the
/// threshold. A cell at exactly the threshold counts as low. `None` when
/// nothing was observed.
pub fn low_confidence_ratio(map: &GlobalConfidenceMap<f64>, threshold: f64) -> Option<f64> {
    let mut total = 0u64;
    let mut low = 0u64;
    for (_, c) in map.recorded_cells() {
        total += 1;
        if c <= threshold {
            low += 1;
        }
    }
    if total == 0 {
        None
    } else {
        Some(100.0 * low as f64 / total as f64)
    }
}

/// Resamples a piecewise-constant time series onto a regular grid from 0
/// to `horizon` inclusive, with step `dt`. The value at a query time is
/// the last recorded value at or before it; queries before the first
/// record get the first value, and queries past the last record hold the
/// last one.
pub fn resample_hold(times: &[f64], values: &[f64], dt: f64, horizon: f64) -> Result<Vec<f64>> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::Parameter("resample needs matching, non-empty series".into()));
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Parameter("resample step and horizon must be positive".into()));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter("resample times must be non-decreasing".into()));
    }
    let steps = (horizon / dt).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut idx = 0usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        while idx + 1 < times.len() && times[idx + 1] <= t {
            idx += 1;
        }
        if times[idx] <= t {
            out.push(values[idx]);
        } else {
            out.push(values[0]);
        }
    }
    Ok(out)
}

/// Pointwise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = curves.first() else {
        return Err(Error::Parameter("mean of zero curves".into()));
    };
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::Parameter("curves must share a sample grid".into()));
    }
    let n = curves.len() as f64;
    let mut out = vec![0.0; first.len()];
    for curve in curves {
        for (o, v) in out.iter_mut().zip(curve) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    Ok(out)
}

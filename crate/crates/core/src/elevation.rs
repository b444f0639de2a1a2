//! Filtered elevation and confidence mapping.
//!
//! Each grid cell carries an independent scalar Kalman filter over the
//! terrain height. The motion model is identity with no process noise, so
//! `predict` leaves the state alone; `predict_with` exposes the general
//! transition for callers that want decaying or inflating behaviour. A
//! cell's confidence is derived from its height variance as
//! `1 - clamp(variance, 0, 1)`; cells never observed report zero.
//!
//! [`LocalMap`] owns a dense per-cell store over the whole arena and a
//! sliding analysis window centered on the robot. Observations are fused
//! where they land, whether or not the window currently covers them, so
//! revisited ground keeps its history. Negative variances indicate a bug
//! upstream and abort the process rather than corrupting the map.

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, CellRect, DenseGrid};
use crate::real::Real;
use crate::sensor::HeightObservation;
use crate::{Error, Result};

/// Scalar Kalman filter over one cell's height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElevationCell<R: Real> {
    height: R,
    variance: R,
    observed: bool,
}

impl<R: Real> Default for ElevationCell<R> {
    fn default() -> Self {
        ElevationCell { height: R::zero(), variance: R::zero(), observed: false }
    }
}

impl<R: Real> ElevationCell<R> {
    /// Identity transition with no process noise: a no-op, present so call
    /// sites read as a full predict/update cycle.
    pub fn predict(&mut self) {}

    /// General transition `h <- a h`, `var <- a^2 var + q`.
    pub fn predict_with(&mut self, a: R, q: R) {
        assert!(q >= R::zero(), "process noise must be non-negative");
        if self.observed {
            self.height *= a;
            self.variance = a * a * self.variance + q;
        }
    }

    /// Fuses one height measurement with variance `r`. The first
    /// measurement is adopted directly; afterwards the Kalman gain
    /// `var / (var + r)` blends, with the convention that two exact states
    /// (both variances zero) keep the current estimate.
    pub fn update(&mut self, z: R, r: R) {
        assert!(r >= R::zero(), "measurement variance must be non-negative");
        if !self.observed {
            self.height = z;
            self.variance = r;
            self.observed = true;
            return;
        }
        let denom = self.variance + r;
        let k = if denom > R::zero() { self.variance / denom } else { R::zero() };
        self.height += k * (z - self.height);
        self.variance = (R::one() - k) * self.variance;
    }

    pub fn is_observed(&self) -> bool {
        self.observed
    }

    pub fn height(&self) -> Option<R> {
        self.observed.then_some(self.height)
    }

    pub fn variance(&self) -> Option<R> {
        self.observed.then_some(self.variance)
    }

    /// `1 - clamp(variance, 0, 1)`; zero when never observed.
    pub fn confidence(&self) -> R {
        if !self.observed {
            return R::zero();
        }
        assert!(self.variance >= R::zero(), "cell variance went negative");
        R::one() - self.variance.clamp_to(R::zero(), R::one())
    }
}

/// Dense elevation store over the arena with a sliding analysis window.
#[derive(Clone, Debug)]
pub struct LocalMap<R: Real = f64> {
    arena: CellRect,
    resolution: f64,
    window_cells: i64,
    center: Cell,
    cells: DenseGrid<ElevationCell<R>>,
    dirty_mask: DenseGrid<bool>,
    dirty: Vec<Cell>,
    dropped: u64,
}

impl<R: Real> LocalMap<R> {
    /// `window_cells` is the window side length and must be odd so the
    /// window centers on the robot's cell.
    pub fn new(arena: CellRect, resolution: f64, window_cells: i64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::Parameter("map resolution must be positive".into()));
        }
        if window_cells < 3 || window_cells % 2 == 0 {
            return Err(Error::Parameter(format!(
                "window side must be odd and at least 3, got {window_cells}"
            )));
        }
        let center = Cell::new(
            (arena.min.i + arena.max.i).div_euclid(2),
            (arena.min.j + arena.max.j).div_euclid(2),
        );
        Ok(LocalMap {
            arena,
            resolution,
            window_cells,
            center,
            cells: DenseGrid::filled(arena, ElevationCell::default()),
            dirty_mask: DenseGrid::filled(arena, false),
            dirty: Vec::new(),
            dropped: 0,
        })
    }

    pub fn arena(&self) -> CellRect {
        self.arena
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn center(&self) -> Cell {
        self.center
    }

    /// Analysis window: the odd square around the center clipped to the
    /// arena.
    pub fn window(&self) -> CellRect {
        CellRect::centered(self.center, self.window_cells as usize)
            .intersect(&self.arena)
            .expect("window center is kept inside the arena")
    }

    /// Moves the analysis window. Centers outside the arena are clamped to
    /// its edge.
    pub fn recenter(&mut self, center: Cell) {
        self.center = Cell::new(
            center.i.clamp(self.arena.min.i, self.arena.max.i),
            center.j.clamp(self.arena.min.j, self.arena.max.j),
        );
    }

    /// Fuses a batch of height observations. Observations outside the
    /// arena are counted and dropped.
    pub fn ingest(&mut self, observations: &[HeightObservation]) {
        for obs in observations {
            let Some(cell) = self.cells.get_mut(obs.cell) else {
                self.dropped += 1;
                continue;
            };
            cell.predict();
            cell.update(R::c(obs.height), R::c(obs.variance));
            let mask = self.dirty_mask.get_mut(obs.cell).expect("same bounds as cells");
            if !*mask {
                *mask = true;
                self.dirty.push(obs.cell);
            }
        }
    }

    /// Cells touched since the previous drain, in first-touch order.
    pub fn drain_dirty(&mut self) -> Vec<Cell> {
        for &c in &self.dirty {
            *self.dirty_mask.get_mut(c).expect("dirty cells lie in the arena") = false;
        }
        std::mem::take(&mut self.dirty)
    }

    pub fn dropped_observations(&self) -> u64 {
        self.dropped
    }

    pub fn cell(&self, cell: Cell) -> Option<&ElevationCell<R>> {
        self.cells.get(cell)
    }

    pub fn height(&self, cell: Cell) -> Option<R> {
        self.cells.get(cell).and_then(|c| c.height())
    }

    pub fn confidence(&self, cell: Cell) -> R {
        self.cells.get(cell).map_or_else(R::zero, |c| c.confidence())
    }

    /// Observed cells in row-major arena order.
    pub fn observed_cells(&self) -> impl Iterator<Item = (Cell, &ElevationCell<R>)> + '_ {
        self.arena.iter().filter_map(|c| {
            let cell = self.cells.get(c).expect("iterating own bounds");
            cell.is_observed().then_some((c, cell))
        })
    }

    pub fn observed_count(&self) -> usize {
        self.observed_cells().count()
    }
}

/// Arena-wide record of the best confidence ever held per cell.
///
/// Local windows are folded in with a per-cell max. Under the identity
/// motion model confidences only grow, so this equals the final local map
/// confidence; the fold keeps the record honest if a caller ever inflates
/// variances between scans.
#[derive(Clone, Debug)]
pub struct GlobalConfidenceMap<R: Real = f64> {
    values: DenseGrid<Option<R>>,
    arena: CellRect,
}

impl<R: Real> GlobalConfidenceMap<R> {
    pub fn new(arena: CellRect) -> Self {
        GlobalConfidenceMap { values: DenseGrid::filled(arena, None), arena }
    }

    /// Folds one cell's current confidence into the record.
    pub fn record(&mut self, cell: Cell, confidence: R) {
        if let Some(slot) = self.values.get_mut(cell) {
            *slot = Some(match *slot {
                Some(prev) if prev >= confidence => prev,
                _ => confidence,
            });
        }
    }

    pub fn confidence(&self, cell: Cell) -> Option<R> {
        self.values.get(cell).copied().flatten()
    }

    pub fn arena(&self) -> CellRect {
        self.arena
    }

    /// Recorded cells in row-major arena order.
    pub fn recorded_cells(&self) -> impl Iterator<Item = (Cell, R)> + '_ {
        self.arena
            .iter()
            .filter_map(|c| self.values.get(c).copied().flatten().map(|v| (c, v)))
    }

    pub fn recorded_count(&self) -> usize {
        self.recorded_cells().count()
    }
}

//! Geometric traversability analysis over the filtered elevation map.
//!
//! Each cell is scored from the heights of its square neighborhood of side
//! `2n + 1`:
//!
//! * slope: angle between the vertical and the normal of the best-fit
//!   plane, taken as the eigenvector of the smallest eigenvalue of the
//!   mean-centered point covariance;
//! * roughness: mean absolute height deviation from the center cell;
//! * step height: largest absolute height deviation from the center cell.
//!
//! The three are normalized by critical values and blended left to right
//! with weights summing to one. A cell is traversable when the blended
//! cost does not exceed `cost_max`. Cells whose neighborhood is not fully
//! observed get no attributes and therefore never count as traversable.

use serde::{Deserialize, Serialize};

use crate::elevation::LocalMap;
use crate::grid::{Cell, CellRect, DenseGrid};
use crate::linalg::sym_eigen3;
use crate::real::Real;
use crate::{Error, Result};

/// Weights, critical values, and neighborhood size of the analysis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraversabilityParams<R: Real> {
    /// Blend weights for slope, roughness, and step, in that order. Must
    /// be non-negative and sum to one within 1e-9.
    pub weights: [R; 3],
    pub slope_critical_deg: R,
    pub roughness_critical: R,
    pub step_critical: R,
    /// Cells with a blended cost above this are not traversable.
    pub cost_max: R,
    /// Neighborhood half-width `n`; the window is `(2n + 1)^2` cells.
    pub neighborhood_radius: usize,
}

impl<R: Real> Default for TraversabilityParams<R> {
    fn default() -> Self {
        let third = R::one() / R::c(3.0);
        TraversabilityParams {
            // The last weight is written as the exact complement so the
            // three sum to one bit for bit.
            weights: [third, third, R::one() - (third + third)],
            slope_critical_deg: R::c(20.0),
            roughness_critical: R::c(0.15),
            step_critical: R::c(0.2),
            cost_max: R::c(0.4),
            neighborhood_radius: 2,
        }
    }
}

impl<R: Real> TraversabilityParams<R> {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| *w < R::zero()) {
            return Err(Error::Parameter("attribute weights must be non-negative".into()));
        }
        let sum = self.weights[0] + self.weights[1] + self.weights[2];
        if (sum - R::one()).abs() > R::c(1e-9) {
            return Err(Error::Parameter(format!("attribute weights must sum to one, got {sum}")));
        }
        for (name, v) in [
            ("slope", self.slope_critical_deg),
            ("roughness", self.roughness_critical),
            ("step", self.step_critical),
        ] {
            if !(v > R::zero()) {
                return Err(Error::Parameter(format!("critical {name} must be positive")));
            }
        }
        if !(self.cost_max > R::zero()) {
            return Err(Error::Parameter("cost_max must be positive".into()));
        }
        if self.neighborhood_radius == 0 {
            return Err(Error::Parameter("neighborhood radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-cell analysis results.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainAttributes<R: Real> {
    pub slope_deg: R,
    pub roughness: R,
    pub step_height: R,
    pub cost: R,
    pub traversable: bool,
}

/// Slope in degrees of the best-fit plane through the neighborhood
/// heights (row-major, side `2n + 1`, heights spaced `resolution` apart).
pub fn slope_degrees<R: Real>(heights: &[R], n: usize, resolution: R) -> R {
    let side = 2 * n + 1;
    debug_assert_eq!(heights.len(), side * side);
    let count = R::c((side * side) as f64);

    let mut mean_z = R::zero();
    for &h in heights {
        mean_z += h;
    }
    mean_z /= count;

    // Positions are a fixed centered lattice: their means are zero and the
    // xx and yy moments have a closed form; x and y are uncorrelated with
    // each other by symmetry.
    let mut sxx = R::zero();
    let mut sxz = R::zero();
    let mut syz = R::zero();
    let mut szz = R::zero();
    for (idx, &h) in heights.iter().enumerate() {
        let m = (idx / side) as f64 - n as f64;
        let l = (idx % side) as f64 - n as f64;
        let x = R::c(m) * resolution;
        let y = R::c(l) * resolution;
        let dz = h - mean_z;
        sxx += x * x;
        sxz += x * dz;
        syz += y * dz;
        szz += dz * dz;
    }
    let cov = [
        [sxx / count, R::zero(), sxz / count],
        [R::zero(), sxx / count, syz / count],
        [sxz / count, syz / count, szz / count],
    ];

    let eig = sym_eigen3(&cov);
    let scale = eig.values[0].max(R::c(1e-300));
    let tol = R::c(1e-12) * scale;
    let vertical = if eig.values[1] - eig.values[2] <= tol {
        // Smallest eigenvalue is not isolated: within the degenerate
        // eigenspace, pick the direction with the largest vertical
        // component. Its |z| is the norm of the vertical's projection.
        if eig.values[0] - eig.values[1] <= tol {
            R::one()
        } else {
            let z1 = eig.vectors[1][2];
            let z2 = eig.vectors[2][2];
            (z1 * z1 + z2 * z2).sqrt()
        }
    } else {
        eig.vectors[2][2].abs()
    };
    vertical.clamp_to(R::zero(), R::one()).acos() * R::c(180.0 / std::f64::consts::PI)
}

/// Mean absolute height deviation from the center cell over the rest of
/// the neighborhood.
pub fn roughness<R: Real>(heights: &[R], n: usize) -> R {
    let side = 2 * n + 1;
    debug_assert_eq!(heights.len(), side * side);
    let center = heights[heights.len() / 2];
    let mut sum = R::zero();
    for &h in heights {
        sum += (h - center).abs();
    }
    sum / R::c((side * side - 1) as f64)
}

/// Largest absolute height deviation from the center cell.
pub fn step_height<R: Real>(heights: &[R], n: usize) -> R {
    let side = 2 * n + 1;
    debug_assert_eq!(heights.len(), side * side);
    let center = heights[heights.len() / 2];
    heights.iter().fold(R::zero(), |acc, &h| acc.max((h - center).abs()))
}

/// Weighted blend of the normalized attributes, accumulated left to right
/// so the canonical critical triples evaluate exactly.
pub fn traversal_cost<R: Real>(
    slope_deg: R,
    roughness: R,
    step_height: R,
    params: &TraversabilityParams<R>,
) -> R {
    params.weights[0] * (slope_deg / params.slope_critical_deg)
        + params.weights[1] * (roughness / params.roughness_critical)
        + params.weights[2] * (step_height / params.step_critical)
}

/// Full analysis of one neighborhood.
pub fn attributes_from_heights<R: Real>(
    heights: &[R],
    resolution: R,
    params: &TraversabilityParams<R>,
) -> TerrainAttributes<R> {
    let n = params.neighborhood_radius;
    let slope_deg = slope_degrees(heights, n, resolution);
    let rough = roughness(heights, n);
    let step = step_height(heights, n);
    let cost = traversal_cost(slope_deg, rough, step, params);
    TerrainAttributes {
        slope_deg,
        roughness: rough,
        step_height: step,
        cost,
        traversable: cost <= params.cost_max,
    }
}

/// Neighborhood heights of `cell` from the map, row-major, or `None` when
/// any of them is unobserved.
pub fn neighborhood_heights<R: Real>(
    map: &LocalMap<R>,
    cell: Cell,
    n: usize,
    out: &mut Vec<R>,
) -> bool {
    out.clear();
    let n = n as i64;
    for i in (cell.i - n)..=(cell.i + n) {
        for j in (cell.j - n)..=(cell.j + n) {
            match map.height(Cell::new(i, j)) {
                Some(h) => out.push(h),
                None => return false,
            }
        }
    }
    true
}

/// Attribute layer kept in sync with the map's analysis window.
///
/// Attributes exist only for the window interior, the window eroded by the
/// neighborhood radius, so every neighborhood read stays inside the
/// window. Refreshes recompute just the cells whose neighborhoods saw new
/// observations plus the cells that entered the interior since the last
/// refresh; everything else keeps its stored value.
#[derive(Clone, Debug)]
pub struct AttributeLayer<R: Real = f64> {
    params: TraversabilityParams<R>,
    values: DenseGrid<Option<TerrainAttributes<R>>>,
    touch_mask: DenseGrid<bool>,
    interior: Option<CellRect>,
    scratch: Vec<R>,
}

impl<R: Real> AttributeLayer<R> {
    pub fn new(arena: CellRect, params: TraversabilityParams<R>) -> Result<Self> {
        params.validate()?;
        Ok(AttributeLayer {
            params,
            values: DenseGrid::filled(arena, None),
            touch_mask: DenseGrid::filled(arena, false),
            interior: None,
            scratch: Vec::new(),
        })
    }

    pub fn params(&self) -> &TraversabilityParams<R> {
        &self.params
    }

    /// Current window interior, if the window is large enough to have one.
    pub fn interior(&self) -> Option<CellRect> {
        self.interior
    }

    /// Recomputes the layer after the map ingested `dirty` cells and
    /// possibly recentered.
    pub fn refresh(&mut self, map: &LocalMap<R>, dirty: &[Cell]) {
        let n = self.params.neighborhood_radius as i64;
        let old_interior = self.interior;
        let interior = map.window().eroded(n);
        self.interior = interior;
        let Some(interior) = interior else {
            return;
        };

        let mut todo: Vec<Cell> = Vec::new();
        let push = |c: Cell, mask: &mut DenseGrid<bool>, todo: &mut Vec<Cell>| {
            let slot = mask.get_mut(c).expect("interior lies inside the arena");
            if !*slot {
                *slot = true;
                todo.push(c);
            }
        };

        for &d in dirty {
            let reach = CellRect::new(
                Cell::new(d.i - n, d.j - n),
                Cell::new(d.i + n, d.j + n),
            );
            if let Some(affected) = reach.intersect(&interior) {
                for c in affected.iter() {
                    push(c, &mut self.touch_mask, &mut todo);
                }
            }
        }
        for c in interior.iter() {
            if old_interior.is_none_or(|old| !old.contains(c)) {
                push(c, &mut self.touch_mask, &mut todo);
            }
        }

        for &c in &todo {
            *self.touch_mask.get_mut(c).expect("queued from the interior") = false;
            let attrs = if neighborhood_heights(
                map,
                c,
                self.params.neighborhood_radius,
                &mut self.scratch,
            ) {
                Some(attributes_from_heights(
                    &self.scratch,
                    R::c(map.resolution()),
                    &self.params,
                ))
            } else {
                None
            };
            *self.values.get_mut(c).expect("interior lies inside the arena") = attrs;
        }
    }

    /// Attributes of a cell, `None` outside the interior or where the
    /// neighborhood is not fully observed.
    pub fn attributes(&self, cell: Cell) -> Option<&TerrainAttributes<R>> {
        if !self.interior.is_some_and(|w| w.contains(cell)) {
            return None;
        }
        self.values.get(cell).and_then(|v| v.as_ref())
    }

    pub fn traversable(&self, cell: Cell) -> bool {
        self.attributes(cell).is_some_and(|a| a.traversable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, CellRect};
    use crate::sensor::HeightObservation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn heights_from<F: Fn(f64, f64) -> f64>(n: usize, resolution: f64, f: F) -> Vec<f64> {
        let side = 2 * n + 1;
        let mut out = Vec::with_capacity(side * side);
        for m in 0..side {
            for l in 0..side {
                let x = (m as f64 - n as f64) * resolution;
                let y = (l as f64 - n as f64) * resolution;
                out.push(f(x, y));
            }
        }
        out
    }

    #[test]
    fn flat_neighborhood_scores_zero_everywhere() {
        let params = TraversabilityParams::<f64>::default();
        let heights = heights_from(2, 0.1, |_, _| 1.3);
        let attrs = attributes_from_heights(&heights, 0.1, &params);
        assert_eq!(attrs.slope_deg, 0.0);
        assert_eq!(attrs.roughness, 0.0);
        assert_eq!(attrs.step_height, 0.0);
        assert_eq!(attrs.cost, 0.0);
        assert!(attrs.traversable);
    }

    #[test]
    fn inclined_planes_recover_analytic_slope() {
        for &(a, b) in &[(0.1, 0.0), (0.0, 0.25), (0.2, -0.15), (1.0, 0.5), (-2.0, 1.0)] {
            let heights = heights_from(2, 0.1, |x, y| 0.4 + a * x + b * y);
            let slope = slope_degrees(&heights, 2, 0.1);
            let expected = f64::hypot(a, b).atan().to_degrees();
            assert_relative_eq!(slope, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn roughness_and_step_match_hand_computation() {
        // 3x3 with a single raised center.
        let mut heights = vec![0.0; 9];
        heights[4] = 0.1;
        assert_relative_eq!(roughness(&heights, 1), 0.1);
        assert_relative_eq!(step_height(&heights, 1), 0.1);

        // Center zero, one neighbor at 0.3, another at -0.1.
        let mut heights = vec![0.0; 9];
        heights[0] = 0.3;
        heights[8] = -0.1;
        assert_relative_eq!(roughness(&heights, 1), 0.4 / 8.0);
        assert_relative_eq!(step_height(&heights, 1), 0.3);
    }

    #[test]
    fn critical_triples_cost_exactly_one_and_half() {
        let params = TraversabilityParams::<f64>::default();
        let full = traversal_cost(20.0, 0.15, 0.2, &params);
        assert_eq!(full.to_bits(), 1.0f64.to_bits());
        let half = traversal_cost(10.0, 0.075, 0.1, &params);
        assert_eq!(half.to_bits(), 0.5f64.to_bits());
        assert!(!(full <= params.cost_max));
        assert!(!(half <= params.cost_max));
        assert!(traversal_cost(2.0, 0.015, 0.02, &params) <= params.cost_max);
    }

    #[test]
    fn isotropic_neighborhood_reports_level_ground() {
        // A checkerboard scaled so all three covariance eigenvalues agree:
        // the degenerate tie resolves toward the vertical.
        let scale = (3.0f64 / 2.0).sqrt();
        let heights = heights_from(1, 1.0, |x, y| scale * x * y);
        let slope = slope_degrees(&heights, 1, 1.0);
        assert!(slope.abs() < 1e-6, "tie should resolve vertical, got {slope}");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut params =
            TraversabilityParams::<f64> { weights: [0.5, 0.5, 0.5], ..Default::default() };
        assert!(params.validate().is_err());
        params.weights = [0.5, 0.6, -0.1];
        assert!(params.validate().is_err());
        assert!(TraversabilityParams::<f64>::default().validate().is_ok());
    }

    #[test]
    fn f32_analysis_behaves() {
        let params = TraversabilityParams::<f32>::default();
        params.validate().unwrap();
        let heights: Vec<f32> =
            heights_from(2, 0.1, |x, _| 0.3 * x).into_iter().map(|h| h as f32).collect();
        let attrs = attributes_from_heights(&heights, 0.1f32, &params);
        assert_relative_eq!(attrs.slope_deg, 0.3f32.atan().to_degrees(), epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn slope_bounded_and_invariant_to_height_offset(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            bias in -50.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<f64> = (0..25).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let mut base = heights_from(2, 0.1, |x, y| a * x + b * y);
            for (h, n) in base.iter_mut().zip(&noise) {
                *h += n;
            }
            let shifted: Vec<f64> = base.iter().map(|h| h + bias).collect();
            let s0 = slope_degrees(&base, 2, 0.1);
            let s1 = slope_degrees(&shifted, 2, 0.1);
            prop_assert!((0.0..=90.0).contains(&s0));
            prop_assert!((s0 - s1).abs() < 1e-6);
            prop_assert!(roughness(&base, 2) >= 0.0);
            prop_assert!(step_height(&base, 2) >= roughness(&base, 2) - 1e-15);
        }

        #[test]
        fn cost_is_monotone_in_each_attribute(
            s in 0.0f64..45.0, r in 0.0f64..0.5, d in 0.0f64..0.5,
            ds in 0.0f64..5.0, dr in 0.0f64..0.2, dd in 0.0f64..0.2,
        ) {
            let params = TraversabilityParams::<f64>::default();
            let base = traversal_cost(s, r, d, &params);
            prop_assert!(traversal_cost(s + ds, r, d, &params) >= base);
            prop_assert!(traversal_cost(s, r + dr, d, &params) >= base);
            prop_assert!(traversal_cost(s, r, d + dd, &params) >= base);
        }
    }

    fn obs(i: i64, j: i64, height: f64) -> HeightObservation {
        HeightObservation { cell: Cell::new(i, j), height, variance: 0.01 }
    }

    fn observe_plane(map: &mut LocalMap<f64>, rect: CellRect, f: impl Fn(f64, f64) -> f64) {
        let batch: Vec<_> = rect
            .iter()
            .map(|c| {
                let x = (c.i as f64 + 0.5) * map.resolution();
                let y = (c.j as f64 + 0.5) * map.resolution();
                obs(c.i, c.j, f(x, y))
            })
            .collect();
        map.ingest(&batch);
    }

    #[test]
    fn layer_requires_full_neighborhoods() {
        let arena = CellRect::centered(Cell::new(0, 0), 41);
        let mut map = LocalMap::<f64>::new(arena, 0.1, 11).unwrap();
        let mut layer = AttributeLayer::new(arena, TraversabilityParams::default()).unwrap();
        // Observe everything but one corner neighbor of the center.
        let rect = CellRect::centered(Cell::new(0, 0), 11);
        let batch: Vec<_> = rect
            .iter()
            .filter(|c| *c != Cell::new(2, 2))
            .map(|c| obs(c.i, c.j, 0.0))
            .collect();
        map.ingest(&batch);
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);
        assert!(layer.attributes(Cell::new(0, 0)).is_none());
        assert!(layer.attributes(Cell::new(-1, -1)).is_some());
        assert!(layer.traversable(Cell::new(-1, -1)));
        // Fill the hole: the affected cells recover on the next refresh.
        map.ingest(&[obs(2, 2, 0.0)]);
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);
        assert!(layer.attributes(Cell::new(0, 0)).is_some());
    }

    #[test]
    fn attributes_hidden_outside_interior() {
        let arena = CellRect::centered(Cell::new(0, 0), 81);
        let mut map = LocalMap::<f64>::new(arena, 0.1, 11).unwrap();
        let mut layer = AttributeLayer::new(arena, TraversabilityParams::default()).unwrap();
        observe_plane(&mut map, CellRect::centered(Cell::new(0, 0), 31), |_, _| 0.0);
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);
        assert!(layer.attributes(Cell::new(0, 0)).is_some());
        // Inside the window but too close to its edge for a full
        // neighborhood.
        assert!(layer.attributes(Cell::new(5, 0)).is_none());
        assert!(layer.attributes(Cell::new(4, 0)).is_none());
        assert!(layer.attributes(Cell::new(3, 0)).is_some());
    }

    #[test]
    fn incremental_refresh_matches_fresh_analysis() {
        let arena = CellRect::centered(Cell::new(0, 0), 61);
        let mut map = LocalMap::<f64>::new(arena, 0.1, 13).unwrap();
        let params = TraversabilityParams::<f64>::default();
        let mut layer = AttributeLayer::new(arena, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);

        for round in 0..30 {
            // Random batch of observations anywhere in the arena.
            let batch: Vec<_> = (0..120)
                .map(|_| {
                    obs(
                        rng.gen_range(-30..=30),
                        rng.gen_range(-30..=30),
                        rng.gen_range(-0.2..0.2),
                    )
                })
                .collect();
            map.ingest(&batch);
            if round % 3 == 2 {
                map.recenter(Cell::new(rng.gen_range(-25..=25), rng.gen_range(-25..=25)));
            }
            let dirty = map.drain_dirty();
            layer.refresh(&map, &dirty);

            let interior = layer.interior().unwrap();
            let mut buf = Vec::new();
            for c in interior.iter() {
                let expected = if neighborhood_heights(&map, c, 2, &mut buf) {
                    Some(attributes_from_heights(&buf, 0.1, &params))
                } else {
                    None
                };
                assert_eq!(layer.attributes(c).copied(), expected, "cell {c:?} round {round}");
            }
        }
    }
}

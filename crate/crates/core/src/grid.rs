//! Uniform-grid geometry shared by the mapping, analysis and planning layers.
//!
//! World coordinates are meters in the map frame; a cell index is the pair
//! `(i, j) = (floor(x / resolution), floor(y / resolution))`. The floor
//! convention makes cell boundaries map upward: `x = k * resolution` belongs
//! to cell `k`, including for negative coordinates.

use serde::{Deserialize, Serialize};

/// Integer index of one grid cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: i64,
    pub j: i64,
}

impl Cell {
    pub fn new(i: i64, j: i64) -> Self {
        Cell { i, j }
    }

    pub fn offset(self, di: i64, dj: i64) -> Self {
        Cell { i: self.i + di, j: self.j + dj }
    }
}

/// Maps a planar position to the index of the cell containing it.
pub fn grid_index(x: f64, y: f64, resolution: f64) -> Cell {
    assert!(resolution > 0.0, "grid resolution must be positive");
    Cell { i: (x / resolution).floor() as i64, j: (y / resolution).floor() as i64 }
}

/// Center of a cell in map coordinates.
pub fn cell_center(cell: Cell, resolution: f64) -> (f64, f64) {
    (
        (cell.i as f64 + 0.5) * resolution,
        (cell.j as f64 + 0.5) * resolution,
    )
}

/// Relative cell offsets covered by a disc of radius `robot_radius`.
///
/// The disc is rasterized conservatively: the cell count half-width is
/// `ceil(robot_radius / resolution)` and an offset belongs to the footprint
/// when `di^2 + dj^2` does not exceed the squared half-width. Offsets come
/// out in row-major order, so repeated calls enumerate identically.
pub fn footprint_offsets(robot_radius: f64, resolution: f64) -> Vec<(i64, i64)> {
    assert!(robot_radius > 0.0, "robot radius must be positive");
    assert!(resolution > 0.0, "grid resolution must be positive");
    let half = (robot_radius / resolution).ceil() as i64;
    let mut offsets = Vec::new();
    for di in -half..=half {
        for dj in -half..=half {
            if di * di + dj * dj <= half * half {
                offsets.push((di, dj));
            }
        }
    }
    offsets
}

// ---------------------------------------------------------------------------
// Rectangular index ranges and dense storage
// ---------------------------------------------------------------------------

/// Inclusive rectangle of cell indices.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CellRect {
    pub min: Cell,
    pub max: Cell,
}

impl CellRect {
    pub fn new(min: Cell, max: Cell) -> Self {
        assert!(min.i <= max.i && min.j <= max.j, "degenerate cell rectangle");
        CellRect { min, max }
    }

    /// Square rectangle of odd side `size` centered on `center`.
    pub fn centered(center: Cell, size: usize) -> Self {
        assert!(size % 2 == 1, "window size must be odd");
        let h = (size / 2) as i64;
        CellRect {
            min: Cell::new(center.i - h, center.j - h),
            max: Cell::new(center.i + h, center.j + h),
        }
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.i >= self.min.i && c.i <= self.max.i && c.j >= self.min.j && c.j <= self.max.j
    }

    /// Overlap of two rectangles, `None` when disjoint.
    pub fn intersect(&self, other: &CellRect) -> Option<CellRect> {
        let min = Cell::new(self.min.i.max(other.min.i), self.min.j.max(other.min.j));
        let max = Cell::new(self.max.i.min(other.max.i), self.max.j.min(other.max.j));
        if min.i > max.i || min.j > max.j {
            None
        } else {
            Some(CellRect { min, max })
        }
    }

    /// Largest rectangle whose cells keep a full `margin`-cell border inside
    /// `self`; `None` when the rectangle is too small to erode.
    pub fn eroded(&self, margin: i64) -> Option<CellRect> {
        let min = Cell::new(self.min.i + margin, self.min.j + margin);
        let max = Cell::new(self.max.i - margin, self.max.j - margin);
        if min.i > max.i || min.j > max.j {
            None
        } else {
            Some(CellRect { min, max })
        }
    }

    pub fn rows(&self) -> i64 {
        self.max.i - self.min.i + 1
    }

    pub fn cols(&self) -> i64 {
        self.max.j - self.min.j + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        let r = *self;
        (r.min.i..=r.max.i).flat_map(move |i| (r.min.j..=r.max.j).map(move |j| Cell::new(i, j)))
    }
}

/// Dense storage over a fixed cell rectangle.
///
/// Used for the persistent map stores; lookups are plain array reads so the
/// hot paths (footprint and corridor checks) stay cheap.
#[derive(Clone, Debug)]
pub struct DenseGrid<T> {
    rect: CellRect,
    cols: i64,
    data: Vec<T>,
}

impl<T: Clone> DenseGrid<T> {
    pub fn filled(rect: CellRect, value: T) -> Self {
        let len = (rect.rows() * rect.cols()) as usize;
        DenseGrid { rect, cols: rect.cols(), data: vec![value; len] }
    }

    pub fn rect(&self) -> CellRect {
        self.rect
    }

    #[inline]
    fn slot(&self, c: Cell) -> Option<usize> {
        if self.rect.contains(c) {
            Some(((c.i - self.rect.min.i) * self.cols + (c.j - self.rect.min.j)) as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn get(&self, c: Cell) -> Option<&T> {
        self.slot(c).map(|s| &self.data[s])
    }

    #[inline]
    pub fn get_mut(&mut self, c: Cell) -> Option<&mut T> {
        self.slot(c).map(move |s| &mut self.data[s])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_mapping_matches_expected_cells() {
        assert_eq!(grid_index(0.0, 0.0, 0.1), Cell::new(0, 0));
        assert_eq!(grid_index(0.05, 0.19, 0.1), Cell::new(0, 1));
        assert_eq!(grid_index(-0.05, -0.19, 0.1), Cell::new(-1, -2));
    }

    #[test]
    fn boundary_coordinates_map_upward() {
        assert_eq!(grid_index(0.5, 0.5, 0.5), Cell::new(1, 1));
        assert_eq!(grid_index(-0.5, -1.0, 0.5), Cell::new(-1, -2));
    }

    #[test]
    fn footprint_small_radius_gives_plus_shape() {
        let offs = footprint_offsets(0.05, 0.1);
        assert_eq!(offs.len(), 5);
        assert!(offs.contains(&(0, 0)));
        assert!(offs.contains(&(1, 0)));
        assert!(!offs.contains(&(1, 1)));
    }

    #[test]
    fn footprint_disc_count_for_three_cell_halfwidth() {
        // ceil(0.3 / 0.1) = 3; lattice points with di^2 + dj^2 <= 9.
        assert_eq!(footprint_offsets(0.3, 0.1).len(), 29);
    }

    #[test]
    fn centered_rect_spans_window() {
        let r = CellRect::centered(Cell::new(0, 0), 5);
        assert_eq!(r.min, Cell::new(-2, -2));
        assert_eq!(r.max, Cell::new(2, 2));
        assert_eq!(r.rows() * r.cols(), 25);
        assert!(r.contains(Cell::new(2, -2)));
        assert!(!r.contains(Cell::new(3, 0)));
    }

    #[test]
    fn eroded_rect_shrinks_and_bottoms_out() {
        let r = CellRect::centered(Cell::new(0, 0), 5);
        assert_eq!(r.eroded(2), Some(CellRect::centered(Cell::new(0, 0), 1)));
        assert_eq!(r.eroded(3), None);
    }

    #[test]
    fn dense_grid_reads_and_writes_inside_rect_only() {
        let rect = CellRect::new(Cell::new(-2, -3), Cell::new(4, 1));
        let mut g = DenseGrid::filled(rect, 0u32);
        *g.get_mut(Cell::new(-2, -3)).unwrap() = 7;
        *g.get_mut(Cell::new(4, 1)).unwrap() = 9;
        assert_eq!(g.get(Cell::new(-2, -3)), Some(&7));
        assert_eq!(g.get(Cell::new(4, 1)), Some(&9));
        assert_eq!(g.get(Cell::new(5, 0)), None);
        assert_eq!(g.get(Cell::new(0, 2)), None);
    }

    proptest! {
        #[test]
        fn grid_index_is_floor_consistent(x in -1e3..1e3f64, y in -1e3..1e3f64) {
            let c = grid_index(x, y, 0.1);
            prop_assert!(c.i as f64 * 0.1 <= x + 1e-9);
            prop_assert!((c.i + 1) as f64 * 0.1 >= x - 1e-9);
            prop_assert!(c.j as f64 * 0.1 <= y + 1e-9);
            prop_assert!((c.j + 1) as f64 * 0.1 >= y - 1e-9);
        }

        #[test]
        fn footprint_is_symmetric_and_bounded(radius in 0.05..1.0f64) {
            let offs = footprint_offsets(radius, 0.1);
            let half = (radius / 0.1).ceil() as i64;
            for &(di, dj) in &offs {
                prop_assert!(di.abs() <= half && dj.abs() <= half);
                prop_assert!(offs.contains(&(-di, -dj)));
                prop_assert!(offs.contains(&(dj, di)));
            }
            prop_assert!(offs.contains(&(0, 0)));
        }
    }
}

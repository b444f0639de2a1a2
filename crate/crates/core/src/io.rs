//! CSV import and export for grid layers, histograms and curve tables.
//!
//! Every grid layer shares one header convention:
//!
//! ```text
//! # origin_x=<x>,origin_y=<y>,resolution=<r>,rows=<n>,cols=<m>
//! ```
//!
//! followed by `rows` lines of `cols` comma-separated values. Line `k` holds
//! the cells with `j = min.j + k`, field `m` the cell `i = min.i + m`, so the
//! file is row-major from the minimum corner with x running across a line.
//! Cells that were never observed serialize as empty fields. Floats are
//! written with `Display`, which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::elevation::LocalMap;
use crate::grid::{Cell, CellRect};
use crate::metrics::{ConfidenceHistogram, HISTOGRAM_BINS};
use crate::terrain::GroundTruthTerrain;
use crate::traversability::AttributeLayer;
use crate::{cell_center, grid_index, Error, Result};

/// Geometry line shared by all grid layer files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerHeader {
    pub origin_x: f64,
    pub origin_y: f64,
    pub resolution: f64,
    pub rows: i64,
    pub cols: i64,
}

impl LayerHeader {
    fn for_rect(rect: CellRect, resolution: f64) -> Self {
        LayerHeader {
            origin_x: rect.min.i as f64 * resolution,
            origin_y: rect.min.j as f64 * resolution,
            resolution,
            rows: rect.rows(),
            cols: rect.cols(),
        }
    }
}

/// One layer as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayer {
    pub header: LayerHeader,
    values: Vec<Option<f64>>,
}

impl GridLayer {
    /// Value at (row, col), counted from the minimum corner.
    pub fn value(&self, row: i64, col: i64) -> Option<f64> {
        if row < 0 || row >= self.header.rows || col < 0 || col >= self.header.cols {
            return None;
        }
        self.values[(row * self.header.cols + col) as usize]
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Render a layer to its canonical byte form.
pub fn layer_to_csv(rect: CellRect, resolution: f64, mut value: impl FnMut(Cell) -> Option<f64>) -> String {
    let header = LayerHeader::for_rect(rect, resolution);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# origin_x={},origin_y={},resolution={},rows={},cols={}",
        header.origin_x, header.origin_y, header.resolution, header.rows, header.cols
    );
    for j in rect.min.j..=rect.max.j {
        let mut line = String::new();
        for i in rect.min.i..=rect.max.i {
            if i > rect.min.i {
                line.push(',');
            }
            if let Some(v) = value(Cell::new(i, j)) {
                let _ = write!(line, "{v}");
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Write one layer file.
pub fn write_layer(
    path: &Path,
    rect: CellRect,
    resolution: f64,
    value: impl FnMut(Cell) -> Option<f64>,
) -> Result<()> {
    let body = layer_to_csv(rect, resolution, value);
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a layer file produced by [`write_layer`].
pub fn parse_layer(text: &str) -> Result<GridLayer> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty layer file".into()))?;
    let head = head
        .strip_prefix("# ")
        .ok_or_else(|| Error::Parse(format!("layer header missing '# ': {head}")))?;
    let mut origin_x = None;
    let mut origin_y = None;
    let mut resolution = None;
    let mut rows = None;
    let mut cols = None;
    for field in head.split(',') {
        let (key, val) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header field: {field}")))?;
        let parse_f = || {
            val.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad header value for {key}: {val}")))
        };
        let parse_i = || {
            val.parse::<i64>()
                .map_err(|_| Error::Parse(format!("bad header value for {key}: {val}")))
        };
        match key {
            "origin_x" => origin_x = Some(parse_f()?),
            "origin_y" => origin_y = Some(parse_f()?),
            "resolution" => resolution = Some(parse_f()?),
            "rows" => rows = Some(parse_i()?),
            "cols" => cols = Some(parse_i()?),
            other => return Err(Error::Parse(format!("unknown header field: {other}"))),
        }
    }
    let header = LayerHeader {
        origin_x: origin_x.ok_or_else(|| Error::Parse("header missing origin_x".into()))?,
        origin_y: origin_y.ok_or_else(|| Error::Parse("header missing origin_y".into()))?,
        resolution: resolution.ok_or_else(|| Error::Parse("header missing resolution".into()))?,
        rows: rows.ok_or_else(|| Error::Parse("header missing rows".into()))?,
        cols: cols.ok_or_else(|| Error::Parse("header missing cols".into()))?,
    };
    if header.rows <= 0 || header.cols <= 0 {
        return Err(Error::Parse("layer header has non-positive dimensions".into()));
    }
    let mut values = Vec::with_capacity((header.rows * header.cols) as usize);
    for (k, line) in lines.enumerate() {
        if k as i64 >= header.rows {
            return Err(Error::Parse(format!("layer has more than {} rows", header.rows)));
        }
        let mut fields = 0i64;
        for field in line.split(',') {
            fields += 1;
            if field.is_empty() {
                values.push(None);
            } else {
                let v = field
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad cell value: {field}")))?;
                values.push(Some(v));
            }
        }
        if fields != header.cols {
            return Err(Error::Parse(format!(
                "row {k} has {fields} fields, expected {}",
                header.cols
            )));
        }
    }
    if values.len() as i64 != header.rows * header.cols {
        return Err(Error::Parse(format!(
            "layer has {} values, expected {}",
            values.len(),
            header.rows * header.cols
        )));
    }
    Ok(GridLayer { header, values })
}

/// Read one layer file.
pub fn read_layer(path: &Path) -> Result<GridLayer> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_layer(&text)
}

/// Export the filtered map as elevation, variance and confidence layers.
///
/// Writes `elevation.csv`, `variance.csv` and `confidence.csv` into `dir`,
/// covering `rect`. Unobserved cells are empty in all three.
pub fn write_map_layers(map: &LocalMap<f64>, rect: CellRect, dir: &Path) -> Result<()> {
    let res = map.resolution();
    write_layer(&dir.join("elevation.csv"), rect, res, |c| {
        map.cell(c).and_then(|cell| cell.height())
    })?;
    write_layer(&dir.join("variance.csv"), rect, res, |c| {
        map.cell(c).and_then(|cell| cell.variance())
    })?;
    write_layer(&dir.join("confidence.csv"), rect, res, |c| {
        map.cell(c).filter(|cell| cell.is_observed()).map(|cell| cell.confidence())
    })
}

/// Export the derived attribute layers.
///
/// Writes `slope.csv`, `roughness.csv`, `step.csv`, `cost.csv` and
/// `valid.csv` into `dir`. The first four are empty where no attributes
/// exist; `valid.csv` is a dense 0/1 mask.
pub fn write_attribute_layers(
    layer: &AttributeLayer<f64>,
    rect: CellRect,
    resolution: f64,
    dir: &Path,
) -> Result<()> {
    write_layer(&dir.join("slope.csv"), rect, resolution, |c| {
        layer.attributes(c).map(|a| a.slope_deg)
    })?;
    write_layer(&dir.join("roughness.csv"), rect, resolution, |c| {
        layer.attributes(c).map(|a| a.roughness)
    })?;
    write_layer(&dir.join("step.csv"), rect, resolution, |c| {
        layer.attributes(c).map(|a| a.step_height)
    })?;
    write_layer(&dir.join("cost.csv"), rect, resolution, |c| {
        layer.attributes(c).map(|a| a.cost)
    })?;
    write_layer(&dir.join("valid.csv"), rect, resolution, |c| {
        Some(if layer.attributes(c).map(|a| a.traversable).unwrap_or(false) { 1.0 } else { 0.0 })
    })
}

/// Export the ground-truth height field sampled at cell centers.
pub fn write_terrain_heights(
    terrain: &GroundTruthTerrain,
    resolution: f64,
    path: &Path,
) -> Result<()> {
    let (ex, ey) = terrain.extent();
    let rect = CellRect::new(
        grid_index(-ex * 0.5, -ey * 0.5, resolution),
        grid_index(ex * 0.5, ey * 0.5, resolution),
    );
    write_layer(path, rect, resolution, |c| {
        let (x, y) = cell_center(c, resolution);
        Some(terrain.height(x, y))
    })
}

/// Render a histogram artifact: a version comment, then one `bin,count`
/// line per bin.
pub fn histogram_to_csv(hist: &ConfidenceHistogram) -> String {
    let mut out = String::from("# confidence-histogram v1\n");
    for (bin, count) in hist.counts().iter().enumerate() {
        let _ = writeln!(out, "{bin},{count}");
    }
    out
}

/// Parse a histogram artifact produced by [`histogram_to_csv`].
pub fn histogram_from_csv(text: &str) -> Result<ConfidenceHistogram> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty histogram file".into()))?;
    if head != "# confidence-histogram v1" {
        return Err(Error::Parse(format!("unexpected histogram header: {head}")));
    }
    let mut counts = [0u64; HISTOGRAM_BINS];
    let mut seen = 0usize;
    for line in lines {
        let (bin, count) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("malformed histogram line: {line}")))?;
        let bin: usize = bin
            .parse()
            .map_err(|_| Error::Parse(format!("bad histogram bin: {bin}")))?;
        if bin >= HISTOGRAM_BINS || bin != seen {
            return Err(Error::Parse(format!("histogram bins out of order at {bin}")));
        }
        counts[bin] = count
            .parse()
            .map_err(|_| Error::Parse(format!("bad histogram count: {count}")))?;
        seen += 1;
    }
    if seen != HISTOGRAM_BINS {
        return Err(Error::Parse(format!("histogram has {seen} bins, expected {HISTOGRAM_BINS}")));
    }
    Ok(ConfidenceHistogram::from_counts(counts))
}

/// Render a curve table: a schema comment, a column-name line, then one
/// comma-separated line per row.
pub fn table_to_csv(schema: &str, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {schema}");
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Write a string artifact, mapping failures to [`Error::Io`].
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a string artifact, mapping failures to [`Error::Io`].
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

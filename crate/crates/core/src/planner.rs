//! Confidence-aware local exploration planning.
//!
//! Each planning iteration builds a small random graph over the analysis
//! window: vertices are rejection-sampled positions whose whole robot
//! footprint passes the traversability check, edges connect vertices whose
//! straight-line corridor passes the same check at sub-cell steps. Paths
//! from the robot to every reachable vertex are scored by the product of
//!
//! * volumetric gain: unknown exploration volume still visible from the
//!   path's terminal vertex, and
//! * confidence gain: 1 when every path vertex sits on confidently mapped
//!   ground, `exp(beta * (threshold - C_min))` otherwise,
//!
//! so among equally informative paths the planner prefers those that pass
//! through poorly confirmed terrain and repair it. The best path is then
//! shortcut where corridors allow.
//!
//! Two toggles carve out the ablation variants: `require_traversable`
//! gates sampling and corridors on the traversability verdict (otherwise
//! any fully analyzed cell is accepted), and `use_confidence_gain`
//! switches the confidence factor into the path score.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elevation::LocalMap;
use crate::exploration::VoxelGrid;
use crate::grid::{footprint_offsets, grid_index, Cell, CellRect};
use crate::traversability::AttributeLayer;
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlannerParams {
    pub robot_radius: f64,
    /// Vertices below this confidence contribute to the confidence gain.
    pub confidence_threshold: f64,
    /// Sensitivity of the confidence gain exponent.
    pub beta: f64,
    /// Sampled vertices per planning iteration (the root is extra).
    pub vertex_budget: usize,
    /// Sampling attempts before one vertex draw gives up.
    pub rejection_budget: usize,
    /// Edges also connect vertices closer than this, besides the nearest.
    pub connection_radius: f64,
    /// Corridor checks step at most this far between footprint tests.
    pub corridor_step: f64,
    /// Range and vertical field of view of the volumetric gain model.
    pub gain_range: f64,
    pub gain_elev_min_deg: f64,
    pub gain_elev_max_deg: f64,
    /// Sensor mast height above a vertex when evaluating volumetric gain.
    /// Keep this well above the voxel size: an eye inside or right on top
    /// of the occupied surface voxel layer has its grazing sightlines
    /// blocked by that layer and sees no unknown volume at all.
    pub sensor_height: f64,
    /// Require footprint cells to be traversable, not merely analyzed.
    pub require_traversable: bool,
    /// Multiply the confidence gain into the path score.
    pub use_confidence_gain: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            robot_radius: 0.3,
            confidence_threshold: 0.8,
            beta: 2.0,
            vertex_budget: 200,
            rejection_budget: 1000,
            connection_radius: 2.0,
            corridor_step: 0.05,
            gain_range: 30.0,
            gain_elev_min_deg: -15.0,
            gain_elev_max_deg: 15.0,
            sensor_height: 1.1,
            require_traversable: true,
            use_confidence_gain: true,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.robot_radius > 0.0) {
            return Err(Error::Parameter("robot radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Parameter("confidence threshold must lie in [0, 1]".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Parameter("beta must be positive".into()));
        }
        if !(self.connection_radius > 0.0) || !(self.corridor_step > 0.0) {
            return Err(Error::Parameter("connection radius and corridor step must be positive".into()));
        }
        if !(self.gain_range > 0.0) {
            return Err(Error::Parameter("gain range must be positive".into()));
        }
        if self.gain_elev_min_deg >= self.gain_elev_max_deg {
            return Err(Error::Parameter("gain elevation band is empty".into()));
        }
        Ok(())
    }
}

/// Graph vertex: a sampled robot position with the confidence of its cell.
#[derive(Clone, Copy, Debug)]
pub struct Vertex {
    pub id: usize,
    pub position: Vector3<f64>,
    pub cell: Cell,
    /// Highest map confidence observed at `cell` since creation.
    pub confidence: f64,
}

/// Undirected local graph rooted at the robot.
#[derive(Clone, Debug, Default)]
pub struct LocalGraph {
    vertices: Vec<Vertex>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl LocalGraph {
    pub fn with_root(position: Vector3<f64>, cell: Cell, confidence: f64) -> Self {
        LocalGraph {
            vertices: vec![Vertex { id: 0, position, cell, confidence }],
            adjacency: vec![Vec::new()],
        }
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, f64)] {
        &self.adjacency[id]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    fn add_vertex(&mut self, position: Vector3<f64>, cell: Cell, confidence: f64) -> usize {
        let id = self.vertices.len();
        self.vertices.push(Vertex { id, position, cell, confidence });
        self.adjacency.push(Vec::new());
        id
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        let len = (self.vertices[a].position - self.vertices[b].position).norm();
        self.adjacency[a].push((b, len));
        self.adjacency[b].push((a, len));
    }

    /// Folds fresher map confidence into every vertex; confidences only
    /// ever rise.
    pub fn update_vertex_confidence(&mut self, map: &LocalMap<f64>) {
        for v in &mut self.vertices {
            let fresh = map.confidence(v.cell);
            if fresh > v.confidence {
                v.confidence = fresh;
            }
        }
    }
}

/// One scored candidate: the shortest path from the root to a terminal
/// vertex.
#[derive(Clone, Debug)]
pub struct CandidatePath {
    /// Vertex ids from the root to the terminal, after any shortcutting.
    pub vertices: Vec<usize>,
    pub positions: Vec<Vector3<f64>>,
    /// Dijkstra length of the original (pre-shortcut) path.
    pub length: f64,
    pub volumetric_gain: f64,
    pub confidence_gain: f64,
    /// Score used for selection.
    pub gain: f64,
}

/// Per-iteration planning record for offline inspection, one JSON object
/// per line when serialized.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PlanTrace {
    pub vertices: Vec<TraceVertex>,
    pub edges: Vec<(usize, usize)>,
    pub candidates: Vec<TraceCandidate>,
    /// Terminal vertex id of the selected path.
    pub selected: Option<usize>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceVertex {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceCandidate {
    pub terminal: usize,
    pub length: f64,
    pub volumetric_gain: f64,
    pub confidence_gain: f64,
    pub gain: f64,
}

#[derive(Clone, Debug)]
pub enum PlanOutcome {
    /// Best path, at least two vertices long.
    Selected(CandidatePath),
    /// Graph built but no candidate had positive gain.
    NoPath,
    /// The robot's own footprint fails the check; planning is impossible.
    Stranded,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub outcome: PlanOutcome,
    pub trace: PlanTrace,
}

/// Whether a cell may carry the robot under the given gate: it must have
/// attributes (fully observed neighborhood inside the window) and, when
/// the gate is on, be traversable.
fn cell_ok(layer: &AttributeLayer<f64>, cell: Cell, require_traversable: bool) -> bool {
    match layer.attributes(cell) {
        None => false,
        Some(a) => !require_traversable || a.traversable,
    }
}

/// Footprint check of Eq-style offset sets: every covered cell passes.
pub fn footprint_ok(
    layer: &AttributeLayer<f64>,
    center: Cell,
    offsets: &[(i64, i64)],
    require_traversable: bool,
) -> bool {
    offsets
        .iter()
        .all(|&(di, dj)| cell_ok(layer, Cell::new(center.i + di, center.j + dj), require_traversable))
}

/// Straight-corridor check: footprint tests at sub-cell steps along the
/// segment, endpoints included.
///
/// `exempt` is a disc of poses whose footprint tests are skipped. Planning
/// passes the robot's own pose here: the ground it stands on is proven
/// occupiable by presence, and without the exemption one rough cell under
/// the chassis would veto every way out.
pub fn corridor_ok(
    layer: &AttributeLayer<f64>,
    from: (f64, f64),
    to: (f64, f64),
    resolution: f64,
    offsets: &[(i64, i64)],
    step: f64,
    require_traversable: bool,
    exempt: Option<((f64, f64), f64)>,
) -> bool {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    let dist = f64::hypot(dx, dy);
    let steps = (dist / step).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = from.0 + dx * t;
        let y = from.1 + dy * t;
        if let Some(((ex, ey), er)) = exempt {
            if f64::hypot(x - ex, y - ey) <= er {
                continue;
            }
        }
        if !footprint_ok(layer, grid_index(x, y, resolution), offsets, require_traversable) {
            return false;
        }
    }
    true
}

/// Rejection-samples one admissible vertex position inside `bounds`
/// (world coordinates spanned by the cell rectangle). Draws two uniforms
/// per attempt; `None` when the budget runs out.
pub fn sample_traversable_vertex<R: Rng>(
    layer: &AttributeLayer<f64>,
    map: &LocalMap<f64>,
    bounds: &CellRect,
    offsets: &[(i64, i64)],
    params: &PlannerParams,
    rng: &mut R,
) -> Option<(Vector3<f64>, Cell)> {
    let res = map.resolution();
    let x0 = bounds.min.i as f64 * res;
    let x1 = (bounds.max.i + 1) as f64 * res;
    let y0 = bounds.min.j as f64 * res;
    let y1 = (bounds.max.j + 1) as f64 * res;
    for _ in 0..params.rejection_budget {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        let cell = grid_index(x, y, res);
        if !footprint_ok(layer, cell, offsets, params.require_traversable) {
            continue;
        }
        let Some(z) = map.height(cell) else {
            continue;
        };
        return Some((Vector3::new(x, y, z), cell));
    }
    None
}

/// Builds the local graph: the root plus up to `vertex_budget` sampled
/// vertices, each joined to its nearest predecessor (resampled when that
/// corridor fails) and to every other vertex in connection range whose
/// corridor also passes. The result is connected by construction.
pub fn build_local_graph<R: Rng>(
    root_position: Vector3<f64>,
    root_cell: Cell,
    layer: &AttributeLayer<f64>,
    map: &LocalMap<f64>,
    params: &PlannerParams,
    rng: &mut R,
) -> LocalGraph {
    let offsets = footprint_offsets(params.robot_radius, map.resolution());
    let mut graph = LocalGraph::with_root(root_position, root_cell, map.confidence(root_cell));

    let margin = (params.robot_radius / map.resolution()).ceil() as i64;
    let Some(interior) = layer.interior() else {
        return graph;
    };
    let Some(bounds) = interior.eroded(margin) else {
        return graph;
    };

    // Twice the radius: far enough out that a tested footprint no longer
    // overlaps any cell under the robot itself.
    let exempt = Some(((root_position.x, root_position.y), 2.0 * params.robot_radius));
    let res = map.resolution();
    for _ in 0..params.vertex_budget {
        let mut placed = false;
        for _ in 0..params.rejection_budget {
            let Some((pos, cell)) =
                sample_traversable_vertex(layer, map, &bounds, &offsets, params, rng)
            else {
                break;
            };
            let nearest = graph
                .vertices
                .iter()
                .min_by(|a, b| {
                    let da = (a.position - pos).norm();
                    let db = (b.position - pos).norm();
                    da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
                })
                .expect("graph always holds the root")
                .id;
            let near_pos = graph.vertices[nearest].position;
            if !corridor_ok(
                layer,
                (near_pos.x, near_pos.y),
                (pos.x, pos.y),
                res,
                &offsets,
                params.corridor_step,
                params.require_traversable,
                exempt,
            ) {
                continue;
            }
            let id = graph.add_vertex(pos, cell, map.confidence(cell));
            graph.add_edge(nearest, id);
            for other in 0..id {
                if other == nearest {
                    continue;
                }
                let opos = graph.vertices[other].position;
                if (opos - pos).norm() > params.connection_radius {
                    continue;
                }
                if corridor_ok(
                    layer,
                    (opos.x, opos.y),
                    (pos.x, pos.y),
                    res,
                    &offsets,
                    params.corridor_step,
                    params.require_traversable,
                    exempt,
                ) {
                    graph.add_edge(other, id);
                }
            }
            placed = true;
            break;
        }
        if !placed {
            break;
        }
    }
    graph
}

/// Dijkstra over Euclidean edge lengths from vertex 0. Distances are
/// accumulated strictly left to right along each path so results compare
/// exactly against path-sum oracles. Unreachable vertices get infinity.
pub fn shortest_paths(graph: &LocalGraph) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = graph.vertices.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    dist[0] = 0.0;
    for _ in 0..n {
        let mut u = None;
        let mut best = f64::INFINITY;
        for (i, &d) in dist.iter().enumerate() {
            if !done[i] && d < best {
                best = d;
                u = Some(i);
            }
        }
        let Some(u) = u else {
            break;
        };
        done[u] = true;
        for &(v, w) in &graph.adjacency[u] {
            let alt = dist[u] + w;
            if alt < dist[v] {
                dist[v] = alt;
                parent[v] = Some(u);
            }
        }
    }
    (dist, parent)
}

/// Confidence gain of a path: the literal per-vertex maximum of
/// `1` (confident vertex) or `exp(beta * (threshold - confidence))`.
pub fn confidence_gain(confidences: &[f64], threshold: f64, beta: f64) -> f64 {
    let mut gain = 1.0f64;
    for &c in confidences {
        assert!((0.0..=1.0).contains(&c), "vertex confidence out of range: {c}");
        let factor = if c >= threshold { 1.0 } else { (beta * (threshold - c)).exp() };
        gain = gain.max(factor);
    }
    gain
}

/// Volumetric gain at a viewpoint: unknown volume still visible from the
/// sensor mounted `sensor_height` above the vertex.
pub fn volumetric_gain(voxels: &VoxelGrid, vertex: Vector3<f64>, params: &PlannerParams) -> f64 {
    let eye = vertex + Vector3::new(0.0, 0.0, params.sensor_height);
    let count = voxels.visible_unknown_count(
        &eye,
        params.gain_range,
        params.gain_elev_min_deg,
        params.gain_elev_max_deg,
    );
    count as f64 * voxels.voxel_volume()
}

/// Index of the best candidate under strict-improvement argmax in list
/// order; `None` when no candidate scores above zero.
pub fn select_best(candidates: &[CandidatePath]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut best_gain = 0.0f64;
    for (i, c) in candidates.iter().enumerate() {
        if c.gain > best_gain {
            best_gain = c.gain;
            best = Some(i);
        }
    }
    best
}

/// Greedy shortcutting: from each kept vertex, jump to the farthest later
/// vertex whose direct corridor passes the check.
fn optimize_path(
    vertices: &[usize],
    graph: &LocalGraph,
    layer: &AttributeLayer<f64>,
    resolution: f64,
    offsets: &[(i64, i64)],
    params: &PlannerParams,
    exempt: Option<((f64, f64), f64)>,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(vertices.len());
    let mut a = 0;
    out.push(vertices[0]);
    while a + 1 < vertices.len() {
        let pa = graph.vertices[vertices[a]].position;
        let mut next = a + 1;
        for b in (a + 2..vertices.len()).rev() {
            let pb = graph.vertices[vertices[b]].position;
            if corridor_ok(
                layer,
                (pa.x, pa.y),
                (pb.x, pb.y),
                resolution,
                offsets,
                params.corridor_step,
                params.require_traversable,
                exempt,
            ) {
                next = b;
                break;
            }
        }
        out.push(vertices[next]);
        a = next;
    }
    out
}

/// One full planning iteration: build the graph, score every shortest
/// path, select by strict argmax, shortcut the winner.
pub fn plan_local<R: Rng>(
    robot_position: Vector3<f64>,
    layer: &AttributeLayer<f64>,
    map: &LocalMap<f64>,
    voxels: &VoxelGrid,
    params: &PlannerParams,
    rng: &mut R,
) -> PlanResult {
    let offsets = footprint_offsets(params.robot_radius, map.resolution());
    let root_cell = grid_index(robot_position.x, robot_position.y, map.resolution());
    // Presence only, never the gate: the robot plans from wherever it
    // actually stands, and the gate constrains where it goes, not where it
    // already is. Planning is impossible only off the analyzed map.
    if !footprint_ok(layer, root_cell, &offsets, false) {
        return PlanResult { outcome: PlanOutcome::Stranded, trace: PlanTrace::default() };
    }

    let mut graph = build_local_graph(robot_position, root_cell, layer, map, params, rng);
    graph.update_vertex_confidence(map);
    let (dist, parent) = shortest_paths(&graph);

    let mut trace = PlanTrace {
        vertices: graph
            .vertices()
            .iter()
            .map(|v| TraceVertex {
                x: v.position.x,
                y: v.position.y,
                z: v.position.z,
                confidence: v.confidence,
            })
            .collect(),
        edges: {
            let mut edges = Vec::new();
            for v in 0..graph.vertices().len() {
                for &(u, _) in graph.neighbors(v) {
                    if v < u {
                        edges.push((v, u));
                    }
                }
            }
            edges
        },
        candidates: Vec::new(),
        selected: None,
    };

    let mut candidates = Vec::new();
    for terminal in 1..graph.vertices().len() {
        if !dist[terminal].is_finite() {
            continue;
        }
        let mut ids = vec![terminal];
        while let Some(p) = parent[*ids.last().unwrap()] {
            ids.push(p);
        }
        ids.reverse();
        debug_assert_eq!(ids[0], 0);

        let confidences: Vec<f64> = ids.iter().map(|&id| graph.vertices()[id].confidence).collect();
        let g_conf = confidence_gain(&confidences, params.confidence_threshold, params.beta);
        let g_vol = volumetric_gain(voxels, graph.vertices()[terminal].position, params);
        let gain = if params.use_confidence_gain { g_vol * g_conf } else { g_vol };
        trace.candidates.push(TraceCandidate {
            terminal,
            length: dist[terminal],
            volumetric_gain: g_vol,
            confidence_gain: g_conf,
            gain,
        });
        candidates.push(CandidatePath {
            vertices: ids,
            positions: Vec::new(),
            length: dist[terminal],
            volumetric_gain: g_vol,
            confidence_gain: g_conf,
            gain,
        });
    }

    let Some(best_idx) = select_best(&candidates) else {
        return PlanResult { outcome: PlanOutcome::NoPath, trace };
    };
    let mut best = candidates.swap_remove(best_idx);
    trace.selected = Some(*best.vertices.last().unwrap());

    let exempt = Some(((robot_position.x, robot_position.y), 2.0 * params.robot_radius));
    best.vertices =
        optimize_path(&best.vertices, &graph, layer, map.resolution(), &offsets, params, exempt);
    best.positions =
        best.vertices.iter().map(|&id| graph.vertices()[id].position).collect();

    PlanResult { outcome: PlanOutcome::Selected(best), trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::HeightObservation;
    use crate::traversability::TraversabilityParams;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_setup(side: usize) -> (LocalMap<f64>, AttributeLayer<f64>) {
        let arena = CellRect::centered(Cell::new(0, 0), 2 * side + 1);
        let mut map = LocalMap::new(arena, 0.1, (2 * side - 1) as i64).unwrap();
        let mut layer = AttributeLayer::new(arena, TraversabilityParams::default()).unwrap();
        let batch: Vec<_> = arena
            .iter()
            .map(|c| HeightObservation { cell: c, height: 0.0, variance: 0.01 })
            .collect();
        map.ingest(&batch);
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);
        (map, layer)
    }

    fn default_params() -> PlannerParams {
        PlannerParams { vertex_budget: 50, gain_range: 5.0, ..PlannerParams::default() }
    }

    #[test]
    fn flat_graph_reaches_budget_and_is_connected() {
        let (map, layer) = flat_setup(60);
        let params = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let graph = build_local_graph(
            Vector3::zeros(),
            Cell::new(0, 0),
            &layer,
            &map,
            &params,
            &mut rng,
        );
        assert_eq!(graph.vertices().len(), 51);
        // Connectivity by construction: breadth-first reach from the root.
        let mut seen = vec![false; graph.vertices().len()];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(u) = queue.pop() {
            for &(v, _) in graph.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push(v);
                }
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn every_edge_passes_an_independent_corridor_recheck() {
        let (map, layer) = flat_setup(60);
        let params = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let graph = build_local_graph(
            Vector3::zeros(),
            Cell::new(0, 0),
            &layer,
            &map,
            &params,
            &mut rng,
        );
        let offsets = footprint_offsets(params.robot_radius, map.resolution());
        for v in 0..graph.vertices().len() {
            for &(u, _) in graph.neighbors(v) {
                let a = graph.vertices()[v].position;
                let b = graph.vertices()[u].position;
                // Denser sampling than the planner uses.
                let steps = 400;
                for k in 0..=steps {
                    let t = k as f64 / steps as f64;
                    let x = a.x + (b.x - a.x) * t;
                    let y = a.y + (b.y - a.y) * t;
                    let cell = grid_index(x, y, map.resolution());
                    assert!(footprint_ok(&layer, cell, &offsets, true));
                }
            }
        }
    }

    /// Observes a sloped wall of cells so their cost exceeds the limit.
    fn setup_with_wall() -> (LocalMap<f64>, AttributeLayer<f64>) {
        let arena = CellRect::centered(Cell::new(0, 0), 121);
        let mut map = LocalMap::new(arena, 0.1, 119).unwrap();
        let mut layer = AttributeLayer::new(arena, TraversabilityParams::default()).unwrap();
        // Wall: a steep ridge along j at i in [18, 22].
        let batch: Vec<_> = arena
            .iter()
            .map(|c| {
                let h = if (18..=22).contains(&c.i) { 1.0 } else { 0.0 };
                HeightObservation { cell: c, height: h, variance: 0.01 }
            })
            .collect();
        map.ingest(&batch);
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);
        (map, layer)
    }

    #[test]
    fn no_edge_crosses_a_wall() {
        let (map, layer) = setup_with_wall();
        let params = PlannerParams { vertex_budget: 80, ..default_params() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let graph = build_local_graph(
            Vector3::zeros(),
            Cell::new(0, 0),
            &layer,
            &map,
            &params,
            &mut rng,
        );
        assert!(graph.vertices().len() > 10, "sampling should still work left of the wall");
        // The wall spans i in [18, 22]; with footprint and neighborhood
        // margins nothing traversable exists beyond i = 14 or so. No
        // vertex may lie beyond the wall and no edge may cross it.
        for v in graph.vertices() {
            assert!(
                v.position.x < 1.5,
                "vertex sampled beyond the wall at {:?}",
                v.position
            );
        }
    }

    #[test]
    fn confidence_gain_matches_reduction_and_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.gen_range(1..8);
            let confs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.8..=1.0)).collect();
            assert_eq!(confidence_gain(&confs, 0.8, 2.0), 1.0);
        }
        // Below-threshold case reduces to the minimum vertex.
        for _ in 0..1000 {
            let n = rng.gen_range(1..8);
            let confs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g = confidence_gain(&confs, 0.8, 2.0);
            let min = confs.iter().cloned().fold(f64::INFINITY, f64::min);
            let expected = if min >= 0.8 { 1.0 } else { (2.0 * (0.8 - min)).exp() };
            assert_eq!(g, expected);
            assert!(g >= 1.0);
        }
        let g = confidence_gain(&[0.9, 0.6, 0.85], 0.8, 2.0);
        assert!((g - 0.4f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn combined_gain_examples() {
        // Zero volumetric gain absorbs everything.
        let zero = 0.0 * confidence_gain(&[0.1], 0.8, 2.0);
        assert_eq!(zero, 0.0);
        let g = 10.0 * confidence_gain(&[0.6], 0.8, 2.0);
        assert_relative_eq!(g, 10.0 * 0.4f64.exp(), max_relative = 1e-12);
    }

    fn path(gain: f64, g_vol: f64) -> CandidatePath {
        CandidatePath {
            vertices: vec![0, 1],
            positions: Vec::new(),
            length: 1.0,
            volumetric_gain: g_vol,
            confidence_gain: if g_vol > 0.0 { gain / g_vol } else { 1.0 },
            gain,
        }
    }

    #[test]
    fn argmax_is_strict_and_scale_invariant() {
        // Strict improvement: the first of equal gains wins.
        let cands = vec![path(5.0, 5.0), path(5.0, 5.0), path(4.0, 4.0)];
        assert_eq!(select_best(&cands), Some(0));
        // All zero means no path.
        assert_eq!(select_best(&[path(0.0, 0.0), path(0.0, 0.0)]), None);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..10);
            let cands: Vec<CandidatePath> = (0..n)
                .map(|_| {
                    let g_vol: f64 = rng.gen_range(0.0..10.0);
                    let g_conf: f64 = rng.gen_range(1.0..2.0);
                    let mut c = path(g_vol * g_conf, g_vol);
                    c.confidence_gain = g_conf;
                    c
                })
                .collect();
            let baseline = select_best(&cands);
            let scale: f64 = rng.gen_range(0.01..100.0);
            let scaled: Vec<CandidatePath> = cands
                .iter()
                .map(|c| {
                    let mut s = c.clone();
                    s.volumetric_gain *= scale;
                    s.gain = s.volumetric_gain * s.confidence_gain;
                    s
                })
                .collect();
            assert_eq!(select_best(&scaled), baseline);
        }
    }

    #[test]
    fn low_confidence_path_wins_at_equal_volumetric_gain() {
        let confident = {
            let mut c = path(0.0, 3.0);
            c.confidence_gain = confidence_gain(&[0.9, 0.95], 0.8, 2.0);
            c.gain = c.volumetric_gain * c.confidence_gain;
            c
        };
        let uncertain = {
            let mut c = path(0.0, 3.0);
            c.vertices = vec![0, 2];
            c.confidence_gain = confidence_gain(&[0.9, 0.6], 0.8, 2.0);
            c.gain = c.volumetric_gain * c.confidence_gain;
            c
        };
        assert_eq!(select_best(&[confident, uncertain]), Some(1));
    }

    /// Exhaustive shortest-path oracle: enumerate all simple paths,
    /// summing edge weights left to right exactly as Dijkstra does.
    fn exhaustive_shortest(graph: &LocalGraph, target: usize) -> f64 {
        fn dfs(
            graph: &LocalGraph,
            u: usize,
            target: usize,
            visited: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
        ) {
            if u == target {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for &(v, w) in graph.neighbors(u) {
                if !visited[v] {
                    visited[v] = true;
                    dfs(graph, v, target, visited, acc + w, best);
                    visited[v] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut visited = vec![false; graph.vertices().len()];
        visited[0] = true;
        dfs(graph, 0, target, &mut visited, 0.0, &mut best);
        best
    }

    #[test]
    fn dijkstra_matches_exhaustive_enumeration_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8);
            let mut graph = LocalGraph::with_root(Vector3::zeros(), Cell::new(0, 0), 1.0);
            for i in 1..n {
                let pos = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), 0.0);
                let id = graph.add_vertex(pos, Cell::new(i as i64, 0), 1.0);
                // Guarantee connectivity, then sprinkle extra edges.
                let anchor = rng.gen_range(0..id);
                graph.add_edge(anchor, id);
            }
            for _ in 0..n {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b && !graph.neighbors(a).iter().any(|&(v, _)| v == b) {
                    graph.add_edge(a, b);
                }
            }
            let (dist, _) = shortest_paths(&graph);
            for target in 0..n {
                let oracle = exhaustive_shortest(&graph, target);
                assert_eq!(
                    dist[target].to_bits(),
                    oracle.to_bits(),
                    "target {target} of {n}"
                );
            }
        }
    }

    #[test]
    fn vertex_confidence_updates_keep_the_max() {
        let arena = CellRect::centered(Cell::new(0, 0), 21);
        let mut map = LocalMap::<f64>::new(arena, 0.1, 19).unwrap();
        map.ingest(&[HeightObservation { cell: Cell::new(1, 1), height: 0.0, variance: 0.5 }]);
        let mut graph = LocalGraph::with_root(Vector3::zeros(), Cell::new(0, 0), 0.0);
        let v = graph.add_vertex(Vector3::new(0.1, 0.1, 0.0), Cell::new(1, 1), 0.0);
        graph.update_vertex_confidence(&map);
        assert_relative_eq!(graph.vertices()[v].confidence, 0.5);
        // More observations raise the cell confidence; the vertex follows.
        map.ingest(&[HeightObservation { cell: Cell::new(1, 1), height: 0.0, variance: 0.1 }]);
        graph.update_vertex_confidence(&map);
        let c_after = graph.vertices()[v].confidence;
        assert!(c_after > 0.5);
        // A vertex never loses confidence even if the map were degraded.
        let stale_map = LocalMap::<f64>::new(arena, 0.1, 19).unwrap();
        graph.update_vertex_confidence(&stale_map);
        assert_eq!(graph.vertices()[v].confidence, c_after);
    }

    fn plan_setup() -> (LocalMap<f64>, AttributeLayer<f64>, VoxelGrid) {
        let (map, layer) = flat_setup(60);
        let voxels = VoxelGrid::new(
            Vector3::new(-6.0, -6.0, -1.0),
            Vector3::new(6.0, 6.0, 2.0),
            0.5,
        )
        .unwrap();
        (map, layer, voxels)
    }

    #[test]
    fn plan_selects_a_path_and_shortcut_is_safe() {
        let (map, layer, voxels) = plan_setup();
        let params = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let result = plan_local(Vector3::zeros(), &layer, &map, &voxels, &params, &mut rng);
        let PlanOutcome::Selected(best) = &result.outcome else {
            panic!("expected a path, got {:?}", result.outcome);
        };
        assert!(best.vertices.len() >= 2);
        assert_eq!(best.vertices[0], 0);
        assert!(best.gain > 0.0);
        assert_eq!(best.positions.len(), best.vertices.len());
        // Every leg of the shortcut path must still pass the corridor
        // check.
        let offsets = footprint_offsets(params.robot_radius, map.resolution());
        for w in best.positions.windows(2) {
            assert!(corridor_ok(
                &layer,
                (w[0].x, w[0].y),
                (w[1].x, w[1].y),
                map.resolution(),
                &offsets,
                params.corridor_step,
                true,
                None,
            ));
        }
        assert_eq!(result.trace.selected, Some(*best.vertices.last().unwrap()));
        assert!(!result.trace.candidates.is_empty());
    }

    #[test]
    fn fully_explored_space_yields_no_path() {
        let (map, layer, mut voxels) = plan_setup();
        // Carve every voxel free.
        for x in 0..voxels.dims()[0] {
            for y in 0..voxels.dims()[1] {
                let a = voxels.center([x, y, 0]);
                let b = voxels.center([x, y, voxels.dims()[2] - 1]);
                voxels.integrate_ray(&(a - Vector3::new(0.0, 0.0, 1.0)), &b, false);
            }
        }
        assert_eq!(voxels.unknown_count(), 0);
        let params = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let result = plan_local(Vector3::zeros(), &layer, &map, &voxels, &params, &mut rng);
        assert!(matches!(result.outcome, PlanOutcome::NoPath));
    }

    #[test]
    fn unobserved_root_is_stranded() {
        let arena = CellRect::centered(Cell::new(0, 0), 121);
        let map = LocalMap::<f64>::new(arena, 0.1, 119).unwrap();
        let mut layer = AttributeLayer::new(arena, TraversabilityParams::default()).unwrap();
        layer.refresh(&map, &[]);
        let voxels = VoxelGrid::new(
            Vector3::new(-6.0, -6.0, -1.0),
            Vector3::new(6.0, 6.0, 2.0),
            0.5,
        )
        .unwrap();
        let params = default_params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let result = plan_local(Vector3::zeros(), &layer, &map, &voxels, &params, &mut rng);
        assert!(matches!(result.outcome, PlanOutcome::Stranded));
    }

    #[test]
    fn planning_is_deterministic_per_seed() {
        let (map, layer, voxels) = plan_setup();
        let params = default_params();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let result = plan_local(Vector3::zeros(), &layer, &map, &voxels, &params, &mut rng);
            serde_json::to_string(&result.trace).unwrap()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn shortcut_straightens_a_zigzag() {
        let (map, layer) = flat_setup(60);
        let params = default_params();
        let offsets = footprint_offsets(params.robot_radius, map.resolution());
        let mut graph = LocalGraph::with_root(Vector3::zeros(), Cell::new(0, 0), 1.0);
        let mut prev = 0;
        for (x, y) in [(0.6, 0.8), (1.1, -0.4), (1.9, 0.7), (2.5, 0.0)] {
            let cell = grid_index(x, y, 0.1);
            let id = graph.add_vertex(Vector3::new(x, y, 0.0), cell, 1.0);
            graph.add_edge(prev, id);
            prev = id;
        }
        let ids = vec![0, 1, 2, 3, 4];
        let out = optimize_path(&ids, &graph, &layer, map.resolution(), &offsets, &params, None);
        assert_eq!(out, vec![0, 4], "flat ground shortcuts to the direct segment");
    }
}

//! Closed-loop mission simulation.
//!
//! One episode runs the full pipeline on simulated hardware: scans at the
//! sensor rate feed the elevation map and the exploration grid, and the
//! attribute layer refreshes incrementally. Planning opportunities come
//! at the plan rate; an idle robot takes one, picks a path and executes
//! its first segment to completion, turning in place before translating
//! at constant speed. The robot follows the true ground kinematically;
//! tipping over is decided against the true terrain every simulation
//! step, not against the map, so mapping errors have consequences.
//!
//! Episodes are deterministic per seed. A single random stream serves the
//! whole episode with a fixed draw order: the sensor's systematic error
//! field once up front, then per planning period the scans in time order
//! (three normals per hit) followed by the planner's sampler. Successive
//! scans advance their azimuth phase by the golden angle so a stationary
//! robot does not resample the identical ray pattern forever.

use std::fmt;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::elevation::{GlobalConfidenceMap, LocalMap};
use crate::exploration::VoxelGrid;
use crate::grid::{footprint_offsets, grid_index, Cell, CellRect};
use crate::metrics::ConfidenceHistogram;
use crate::planner::{corridor_ok, plan_local, PlanOutcome, PlannerParams};
use crate::sensor::{cast_scan, measurements_from_casts, project_measurement, HeightObservation, SensorModel, SensorPose, SmoothField};
use crate::terrain::GroundTruthTerrain;
use crate::traversability::{AttributeLayer, TraversabilityParams};
use crate::{Error, Result};

/// Golden angle in radians; scan azimuth phase advances by this per scan.
pub(crate) const GOLDEN_ANGLE: f64 = 2.399963229728653;

/// Golden ratio conjugate; multiples mod 1 fill the unit interval evenly.
const GOLDEN_FRAC: f64 = 0.618033988749895;

/// Pitch dither for the scan with the given index: a low-discrepancy
/// sweep over the +-amplitude range.
pub(crate) fn nod_pitch(scan_index: u64, amplitude_deg: f64) -> f64 {
    let phase = (scan_index as f64 * GOLDEN_FRAC).fract();
    (2.0 * phase - 1.0) * amplitude_deg.to_radians()
}

/// Linear discharge model. The defaults normalize capacity to 1 so the
/// state of charge falls by exactly 0.04 percent per second.
#[derive(Clone, Copy, Debug)]
pub struct BatteryModel {
    pub capacity: f64,
    pub initial_charge: f64,
    pub discharge_current: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel { capacity: 1.0, initial_charge: 1.0, discharge_current: 1.44 }
    }
}

impl BatteryModel {
    /// State of charge in percent after `t` seconds. The expression is
    /// kept in this exact shape: with the default parameters it yields
    /// bit-exact 60.0 at t = 1000 and 4.0 at t = 2400.
    pub fn soc_at(&self, t: f64) -> f64 {
        100.0 * (self.initial_charge / self.capacity)
            - (100.0 * self.discharge_current) / (3600.0 * self.capacity) * t
    }
}

#[derive(Clone, Debug)]
pub struct MissionParams {
    pub duration_s: f64,
    pub scan_hz: f64,
    pub plan_hz: f64,
    pub speed: f64,
    /// Turn-in-place rate, rad/s.
    pub turn_rate: f64,
    /// True-terrain slope beyond which the robot tips over.
    pub tip_slope_deg: f64,
    /// True height spread under the footprint beyond which it tips.
    pub tip_spread_m: f64,
    /// Consecutive failed planning iterations before the run counts as
    /// stranded.
    pub stranded_after: usize,
    /// Sensor mount height above the ground contact point.
    pub sensor_height: f64,
    /// Half-range of the per-scan sensor pitch dither, degrees. A fixed
    /// ring pattern from a stationary robot only ever paints circles on
    /// the ground; the nod sweeps those circles radially so neighborhoods
    /// between rings fill in.
    pub nod_amplitude_deg: f64,
    /// Radius of the contact patch seeded into the map at start, and its
    /// measurement variance. The robot knows the ground it stands on.
    pub bootstrap_radius: f64,
    pub bootstrap_variance: f64,
    /// A waypoint closer than this counts as reached.
    pub goal_tolerance: f64,
    pub map_resolution: f64,
    pub map_window_cells: i64,
    pub voxel_size: f64,
    /// Keep per-iteration planner traces in the episode output.
    pub record_traces: bool,
}

impl Default for MissionParams {
    fn default() -> Self {
        MissionParams {
            duration_s: 2400.0,
            scan_hz: 10.0,
            plan_hz: 1.0,
            speed: 0.8,
            turn_rate: 1.5,
            tip_slope_deg: 30.0,
            tip_spread_m: 0.35,
            stranded_after: 10,
            sensor_height: 1.1,
            nod_amplitude_deg: 3.0,
            bootstrap_radius: 1.0,
            bootstrap_variance: 1e-4,
            goal_tolerance: 0.05,
            map_resolution: 0.1,
            map_window_cells: 121,
            voxel_size: 0.5,
            record_traces: false,
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Parameter("mission duration must be positive".into()));
        }
        if !(self.scan_hz > 0.0 && self.plan_hz > 0.0) {
            return Err(Error::Parameter("rates must be positive".into()));
        }
        let ratio = self.scan_hz / self.plan_hz;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Parameter("scan rate must be an integer multiple of the plan rate".into()));
        }
        if !(self.speed > 0.0 && self.turn_rate > 0.0) {
            return Err(Error::Parameter("speed and turn rate must be positive".into()));
        }
        if !(self.map_resolution > 0.0 && self.voxel_size > 0.0) {
            return Err(Error::Parameter("resolutions must be positive".into()));
        }
        if self.stranded_after == 0 {
            return Err(Error::Parameter("stranded_after must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Completed,
    TippedOver,
    Stranded,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Completed => "completed",
            Termination::TippedOver => "tipped_over",
            Termination::Stranded => "stranded",
        })
    }
}

impl std::str::FromStr for Termination {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completed" => Ok(Termination::Completed),
            "tipped_over" => Ok(Termination::TippedOver),
            "stranded" => Ok(Termination::Stranded),
            other => Err(Error::Parse(format!("unknown termination: {other}"))),
        }
    }
}

/// What a record row reports for its iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordEvent {
    /// A path was selected and its first segment dispatched.
    Path,
    /// The planner found no path with positive gain.
    NoPath,
    /// The robot's own footprint failed the check.
    StrandedSignal,
    /// Terminal row markers.
    Completed,
    TippedOver,
    Stranded,
}

impl RecordEvent {
    fn as_str(&self) -> &'static str {
        match self {
            RecordEvent::Path => "path",
            RecordEvent::NoPath => "no_path",
            RecordEvent::StrandedSignal => "stranded_signal",
            RecordEvent::Completed => "completed",
            RecordEvent::TippedOver => "tipped_over",
            RecordEvent::Stranded => "stranded",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "path" => RecordEvent::Path,
            "no_path" => RecordEvent::NoPath,
            "stranded_signal" => RecordEvent::StrandedSignal,
            "completed" => RecordEvent::Completed,
            "tipped_over" => RecordEvent::TippedOver,
            "stranded" => RecordEvent::Stranded,
            other => return Err(Error::Parse(format!("unknown record event: {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissionRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub soc: f64,
    pub explored_volume: f64,
    pub event: RecordEvent,
}

/// Full per-episode record: one row per planning iteration plus a
/// terminal row. `wall_clock_s` is measured and therefore excluded from
/// the canonical byte form used for determinism comparisons.
#[derive(Clone, Debug)]
pub struct MissionRecord {
    pub rows: Vec<MissionRow>,
    pub termination: Termination,
    /// Simulated operating time at termination.
    pub duration_s: f64,
    pub wall_clock_s: f64,
}

impl MissionRecord {
    /// Canonical CSV bytes. Floats use the shortest round-trip form, so
    /// parsing and re-serializing is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# mission-record v1\n");
        out.push_str(&format!("# termination={}\n", self.termination));
        out.push_str(&format!("# duration_s={}\n", self.duration_s));
        out.push_str("t,x,y,z,heading,soc,explored_volume,event\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t, r.x, r.y, r.z, r.heading, r.soc, r.explored_volume,
                r.event.as_str()
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let version = lines.next().unwrap_or_default();
        if version != "# mission-record v1" {
            return Err(Error::Parse(format!("unsupported record header: {version}")));
        }
        let termination: Termination = lines
            .next()
            .and_then(|l| l.strip_prefix("# termination="))
            .ok_or_else(|| Error::Parse("missing termination line".into()))?
            .parse()?;
        let duration_s: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("# duration_s="))
            .ok_or_else(|| Error::Parse("missing duration line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad duration: {e}")))?;
        let header = lines.next().unwrap_or_default();
        if header != "t,x,y,z,heading,soc,explored_volume,event" {
            return Err(Error::Parse(format!("unexpected column header: {header}")));
        }
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Parse(format!("bad row: {line}")));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse().map_err(|e| Error::Parse(format!("bad number in row: {e}")))
            };
            rows.push(MissionRow {
                t: num(0)?,
                x: num(1)?,
                y: num(2)?,
                z: num(3)?,
                heading: num(4)?,
                soc: num(5)?,
                explored_volume: num(6)?,
                event: RecordEvent::parse(fields[7])?,
            });
        }
        Ok(MissionRecord { rows, termination, duration_s, wall_clock_s: 0.0 })
    }
}

pub struct EpisodeOutput {
    pub record: MissionRecord,
    /// Confidence values of observed window cells, pooled at the plan rate.
    pub snapshot_histogram: ConfidenceHistogram,
    /// Confidence distribution of the final global map.
    pub final_histogram: ConfidenceHistogram,
    /// Arena-wide confidence state at termination.
    pub global_map: GlobalConfidenceMap<f64>,
    /// One JSON object per planning iteration when tracing is enabled.
    pub trace_lines: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct SpawnPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// True-terrain tip-over test at a planar position.
pub fn hazard_check(
    terrain: &GroundTruthTerrain,
    x: f64,
    y: f64,
    footprint_radius: f64,
    params: &MissionParams,
) -> bool {
    terrain.slope_deg(x, y) > params.tip_slope_deg
        || terrain.height_spread(x, y, footprint_radius) > params.tip_spread_m
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    a - tau * (a / tau).round()
}

/// Advances the robot by one simulation step toward the current waypoint:
/// turn in place until aligned, then translate at constant speed with the
/// height slaved to the true ground.
fn step_execute(
    terrain: &GroundTruthTerrain,
    position: &mut Vector3<f64>,
    heading: &mut f64,
    target: &mut Option<Vector3<f64>>,
    params: &MissionParams,
    dt: f64,
) {
    let Some(goal) = *target else {
        return;
    };
    let dx = goal.x - position.x;
    let dy = goal.y - position.y;
    let dist = f64::hypot(dx, dy);
    if dist <= params.goal_tolerance {
        *target = None;
        return;
    }
    let desired = dy.atan2(dx);
    let err = wrap_angle(desired - *heading);
    if err.abs() > 1e-3 {
        let max_turn = params.turn_rate * dt;
        *heading = wrap_angle(*heading + err.clamp(-max_turn, max_turn));
        return;
    }
    let step = (params.speed * dt).min(dist);
    position.x += heading.cos() * step;
    position.y += heading.sin() * step;
    position.z = terrain.height(position.x, position.y);
}

/// Runs one mission episode. Deterministic per seed: re-running with the
/// same inputs reproduces the record byte for byte.
pub fn run_episode(
    terrain: &GroundTruthTerrain,
    sensor: &SensorModel,
    mission: &MissionParams,
    planner: &PlannerParams,
    trav: &TraversabilityParams<f64>,
    spawn: SpawnPose,
    seed: u64,
) -> Result<EpisodeOutput> {
    mission.validate()?;
    planner.validate()?;
    trav.validate()?;
    sensor.validate()?;

    if !terrain.contains(spawn.x, spawn.y) {
        return Err(Error::Config("spawn lies outside the arena".into()));
    }
    if hazard_check(terrain, spawn.x, spawn.y, planner.robot_radius, mission) {
        return Err(Error::Config("spawn position is hazardous".into()));
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = SmoothField::draw(&mut rng, sensor.noise_wavelength);
    let rays = sensor.ray_directions();
    let res = mission.map_resolution;
    let (ex, ey) = terrain.extent();
    let arena = CellRect::new(
        grid_index(-ex * 0.5, -ey * 0.5, res),
        grid_index(ex * 0.5, ey * 0.5, res),
    );
    let mut map: LocalMap<f64> = LocalMap::new(arena, res, mission.map_window_cells)?;
    let mut layer = AttributeLayer::new(arena, *trav)?;
    let mut gmap: GlobalConfidenceMap<f64> = GlobalConfidenceMap::new(arena);
    let (z_lo, z_hi) = terrain.height_bounds();
    let mut voxels = VoxelGrid::new(
        Vector3::new(-ex * 0.5, -ey * 0.5, z_lo - 1.0),
        Vector3::new(ex * 0.5, ey * 0.5, z_hi + 2.0),
        mission.voxel_size,
    )?;

    let mut position = Vector3::new(spawn.x, spawn.y, terrain.height(spawn.x, spawn.y));
    let mut heading = spawn.heading;
    let mut target: Option<Vector3<f64>> = None;

    // Contact patch: the robot trusts the ground under and right around
    // itself without needing a scan first.
    let spawn_cell = grid_index(spawn.x, spawn.y, res);
    let reach = (mission.bootstrap_radius / res).ceil() as i64;
    let mut seedobs = Vec::new();
    for di in -reach..=reach {
        for dj in -reach..=reach {
            let dx = di as f64 * res;
            let dy = dj as f64 * res;
            if dx * dx + dy * dy > mission.bootstrap_radius * mission.bootstrap_radius {
                continue;
            }
            let cell = Cell::new(spawn_cell.i + di, spawn_cell.j + dj);
            if !arena.contains(cell) {
                continue;
            }
            let (cx, cy) = crate::grid::cell_center(cell, res);
            seedobs.push(HeightObservation {
                cell,
                height: terrain.height(cx, cy),
                variance: mission.bootstrap_variance,
            });
        }
    }
    map.ingest(&seedobs);

    let battery = BatteryModel::default();
    let dt = 1.0 / mission.scan_hz;
    let steps_per_tick = (mission.scan_hz / mission.plan_hz).round() as usize;
    let mut tick: u64 = 0;
    let mut scan_index: u64 = 0;
    let mut failures = 0usize;
    let mut rows = Vec::new();
    let mut snapshot_histogram = ConfidenceHistogram::new();
    let mut trace_lines = Vec::new();

    let (termination, end_t) = 'mission: loop {
        if tick as f64 >= mission.duration_s {
            break (Termination::Completed, tick as f64);
        }
        for sub in 0..steps_per_tick {
            let eye = position + Vector3::new(0.0, 0.0, mission.sensor_height);
            let yaw = heading + scan_index as f64 * GOLDEN_ANGLE;
            let pitch = nod_pitch(scan_index, mission.nod_amplitude_deg);
            let pose = SensorPose::yaw_pitch(eye, yaw, pitch);
            let casts = cast_scan(terrain, &pose, &rays, sensor.max_range);
            let meas = measurements_from_casts(&pose, sensor, &rays, &casts, &field, &mut rng);
            let rot = *pose.rotation();
            let origin = pose.position();
            let mut mi = 0usize;
            let mut batch = Vec::with_capacity(meas.len());
            for (dir_s, cast) in rays.iter().zip(&casts) {
                if cast.is_some() {
                    let m = &meas[mi];
                    mi += 1;
                    let end = rot * m.point() + origin;
                    voxels.integrate_ray(&origin, &end, true);
                    if let Some(obs) = project_measurement(m, &pose, res, &arena) {
                        batch.push(obs);
                    }
                } else {
                    let end = origin + (rot * dir_s) * sensor.max_range;
                    voxels.integrate_ray(&origin, &end, false);
                }
            }
            map.ingest(&batch);
            scan_index += 1;

            step_execute(terrain, &mut position, &mut heading, &mut target, mission, dt);
            if hazard_check(terrain, position.x, position.y, planner.robot_radius, mission) {
                let t_tip = tick as f64 + (sub + 1) as f64 * dt;
                break 'mission (Termination::TippedOver, t_tip);
            }
        }
        tick += 1;
        let t_now = tick as f64;

        // The robot straddles the ground it drives on: cells under and
        // right around the footprint are measured by contact, covering the
        // ring the sensor cannot see below itself. Two extra cells so the
        // footprint's own attribute windows rest on contact data too.
        let here = grid_index(position.x, position.y, res);
        let touch_r = planner.robot_radius + 2.0 * res;
        let contact = (touch_r / res).ceil() as i64;
        let mut touch = Vec::new();
        for di in -contact..=contact {
            for dj in -contact..=contact {
                let cell = Cell::new(here.i + di, here.j + dj);
                if !arena.contains(cell) {
                    continue;
                }
                let (cx, cy) = crate::grid::cell_center(cell, res);
                if f64::hypot(cx - position.x, cy - position.y) > touch_r {
                    continue;
                }
                touch.push(HeightObservation {
                    cell,
                    height: terrain.height(cx, cy),
                    variance: mission.bootstrap_variance,
                });
            }
        }
        map.ingest(&touch);

        map.recenter(grid_index(position.x, position.y, res));
        let dirty = map.drain_dirty();
        layer.refresh(&map, &dirty);

        for cell in map.window().iter() {
            if map.height(cell).is_some() {
                let c = map.confidence(cell);
                snapshot_histogram.add(c);
                gmap.record(cell, c);
            }
        }

        // A dispatched segment is committed, but watched: the corridor is
        // rechecked against the refreshed map every period, and a segment
        // chosen under estimates that no longer hold is abandoned rather
        // than driven to the end.
        if let Some(tgt) = target {
            let exempt = Some(((position.x, position.y), 2.0 * planner.robot_radius));
            let offsets = footprint_offsets(planner.robot_radius, res);
            if !corridor_ok(
                &layer,
                (position.x, position.y),
                (tgt.x, tgt.y),
                res,
                &offsets,
                planner.corridor_step,
                planner.require_traversable,
                exempt,
            ) {
                target = None;
            }
        }

        // Planning opportunities come at the plan rate; an idle robot
        // takes one.
        if target.is_some() {
            continue;
        }

        let result = plan_local(position, &layer, &map, &voxels, planner, &mut rng);
        if mission.record_traces {
            trace_lines.push(serde_json::to_string(&result.trace).expect("trace serializes"));
        }
        let event = match result.outcome {
            PlanOutcome::Selected(best) => {
                target = Some(best.positions[1]);
                failures = 0;
                RecordEvent::Path
            }
            PlanOutcome::NoPath => {
                target = None;
                failures += 1;
                RecordEvent::NoPath
            }
            PlanOutcome::Stranded => {
                target = None;
                failures += 1;
                RecordEvent::StrandedSignal
            }
        };
        rows.push(MissionRow {
            t: t_now,
            x: position.x,
            y: position.y,
            z: position.z,
            heading,
            soc: battery.soc_at(t_now),
            explored_volume: voxels.explored_volume(),
            event,
        });
        if failures >= mission.stranded_after {
            break (Termination::Stranded, t_now);
        }
    };

    rows.push(MissionRow {
        t: end_t,
        x: position.x,
        y: position.y,
        z: position.z,
        heading,
        soc: battery.soc_at(end_t),
        explored_volume: voxels.explored_volume(),
        event: match termination {
            Termination::Completed => RecordEvent::Completed,
            Termination::TippedOver => RecordEvent::TippedOver,
            Termination::Stranded => RecordEvent::Stranded,
        },
    });

    let mut final_histogram = ConfidenceHistogram::new();
    for (_, c) in gmap.recorded_cells() {
        final_histogram.add(c);
    }

    Ok(EpisodeOutput {
        record: MissionRecord {
            rows,
            termination,
            duration_s: end_t,
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
        snapshot_histogram,
        final_histogram,
        global_map: gmap,
        trace_lines,
    })
}

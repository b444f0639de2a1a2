//! Batch trial driver and metrics aggregation.
//!
//! An experiment runs every planner variant over the same arenas, seeds and
//! spawn poses, pools the per-snapshot confidence observations to derive the
//! low-confidence threshold, and reduces the trials to a report: success
//! counts, average operating time, low-confidence region ratio and mean
//! exploration curves. Everything downstream of the seed list is
//! deterministic, so a rerun reproduces the report byte for byte.
//!
//! Trial artifacts (mission record, snapshot histogram, final confidence
//! layer) are written per trial, and [`recompute_metrics`] rebuilds the
//! identical report from those files alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;

use crate::elevation::GlobalConfidenceMap;
use crate::io;
use crate::metrics::{derive_threshold, mean_curve, resample_hold, ConfidenceHistogram};
use crate::mission::{
    hazard_check, run_episode, MissionParams, MissionRecord, SpawnPose, Termination,
};
use crate::planner::PlannerParams;
use crate::sensor::SensorModel;
use crate::terrain::{Feature, GroundTruthTerrain, NoiseConfig, TerrainConfig};
use crate::traversability::TraversabilityParams;
use crate::{Error, Result};

/// Planner variants under comparison. They differ only in the two toggles;
/// every other parameter is shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Unrestricted sampling, volumetric gain only.
    BaselineGbp,
    /// Traversability-gated sampling, volumetric gain only.
    OnlyTrav,
    /// Traversability-gated sampling with the confidence gain.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::BaselineGbp, Variant::OnlyTrav, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineGbp => "baseline_gbp",
            Variant::OnlyTrav => "only_trav",
            Variant::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown variant: {name}")))
    }

    /// Base parameters with this variant's toggles applied.
    pub fn apply(self, base: &PlannerParams) -> PlannerParams {
        let mut p = base.clone();
        match self {
            Variant::BaselineGbp => {
                p.require_traversable = false;
                p.use_confidence_gain = false;
            }
            Variant::OnlyTrav => {
                p.require_traversable = true;
                p.use_confidence_gain = false;
            }
            Variant::Full => {
                p.require_traversable = true;
                p.use_confidence_gain = true;
            }
        }
        p
    }
}

/// Built-in evaluation arenas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArenaPreset {
    /// Two pits in an otherwise open field.
    CraterSparse,
    /// A ring of pits around the spawn zone; most sightlines end in a wall.
    CraterDense,
}

impl ArenaPreset {
    pub const ALL: [ArenaPreset; 2] = [ArenaPreset::CraterSparse, ArenaPreset::CraterDense];

    pub fn name(self) -> &'static str {
        match self {
            ArenaPreset::CraterSparse => "crater_sparse",
            ArenaPreset::CraterDense => "crater_dense",
        }
    }

    pub fn from_name(name: &str) -> Result<ArenaPreset> {
        ArenaPreset::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown arena: {name}")))
    }

    pub fn terrain_config(self) -> TerrainConfig {
        let mut config = TerrainConfig::flat(22.0, 22.0, match self {
            ArenaPreset::CraterSparse => 101,
            ArenaPreset::CraterDense => 202,
        });
        config.noise = NoiseConfig { amplitude: 0.1, wavelength: 6.0, octaves: 2, persistence: 0.5 };
        config.spawn.position = [0.0, 0.0];
        config.spawn.clear_radius = 3.0;
        let crater = |dist: f64, angle_deg: f64, radius: f64, depth: f64| {
            let a = angle_deg.to_radians();
            Feature::Crater { center: [dist * a.cos(), dist * a.sin()], radius, depth }
        };
        match self {
            ArenaPreset::CraterSparse => {
                config.features.push(crater(6.5, 60.0, 3.0, 2.5));
                config.features.push(crater(7.0, 200.0, 3.2, 2.7));
                config.features.push(crater(6.8, 310.0, 3.0, 2.6));
            }
            ArenaPreset::CraterDense => {
                config.features.push(crater(6.5, 45.0, 3.0, 2.5));
                config.features.push(crater(6.5, 135.0, 3.0, 2.6));
                config.features.push(crater(6.5, 225.0, 3.0, 2.5));
                config.features.push(crater(6.5, 315.0, 3.0, 2.6));
            }
        }
        config
    }

    pub fn terrain(self) -> Result<GroundTruthTerrain> {
        GroundTruthTerrain::new(self.terrain_config())
    }
}

/// Sensor preset for the evaluation arenas: steep, dense fan so a nodding
/// scan fills the map near the robot. The range error rides a long, smooth
/// field and the reported envelope is padded threefold, so first-pass
/// long-range cells sit well below the confidence threshold while the
/// realized error stays small and locally coherent; relative geometry (and
/// with it the cost estimate) survives at range.
pub fn desk_sensor() -> SensorModel {
    SensorModel {
        rings: 10,
        elev_min_deg: -45.0,
        elev_max_deg: -10.0,
        // Dense enough that the hit arcs at 5-6 m land on adjacent cells.
        // Cost analysis then unlocks mid-range cells on first-pass data,
        // while the variance of that data still holds their confidence
        // down: the planner variants get something to disagree about.
        azimuth_steps: 192,
        max_range: 8.0,
        noise_std: 0.01,
        range_noise_coeff: 0.13,
        noise_wavelength: 10.0,
        range_noise_margin: 4.0,
    }
}

/// Mission preset matching [`desk_sensor`] coverage.
pub fn desk_mission() -> MissionParams {
    MissionParams {
        duration_s: 150.0,
        map_resolution: 0.2,
        map_window_cells: 81,
        bootstrap_radius: 1.2,
        // Early cost estimates are noisy until cells accumulate hits, so
        // give the map time to mature before a quiet stretch counts as
        // being stuck.
        stranded_after: 20,
        ..MissionParams::default()
    }
}

/// Attribute preset for the 0.2 m evaluation grid: a 3x3 neighborhood spans
/// 0.6 m, matching the metric extent the default 5x5 window has on a 0.1 m
/// grid. The default radius at this resolution would double the window and
/// turn plain slopes into apparent steps.
pub fn desk_traversability() -> TraversabilityParams<f64> {
    TraversabilityParams { neighborhood_radius: 1, ..TraversabilityParams::default() }
}

/// Planner preset matching [`desk_sensor`] coverage. Variant toggles are
/// applied on top of this.
pub fn desk_planner() -> PlannerParams {
    PlannerParams {
        vertex_budget: 12,
        rejection_budget: 300,
        gain_range: 5.0,
        gain_elev_min_deg: -45.0,
        // Level sightlines included: unknown terrain past the mapped rim
        // sits near eye height, and a band capped below horizontal would
        // hide it from any vertex more than a couple of meters back.
        gain_elev_max_deg: 0.0,
        // At desk scale a first-pass cell sits only a little under the
        // confidence threshold and for only a few seconds, so the reward
        // for crossing it has to be sharp to ever outbid a frontier.
        beta: 6.0,
        ..PlannerParams::default()
    }
}

/// Full description of a trial matrix.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub arenas: Vec<ArenaPreset>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub mission: MissionParams,
    pub sensor: SensorModel,
    pub planner: PlannerParams,
    pub traversability: TraversabilityParams<f64>,
    /// Resampling step for exploration curves, seconds.
    pub curve_dt: f64,
    /// Tail fraction handed to threshold derivation.
    pub tail: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arenas: ArenaPreset::ALL.to_vec(),
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            mission: desk_mission(),
            sensor: desk_sensor(),
            planner: desk_planner(),
            traversability: desk_traversability(),
            curve_dt: 1.0,
            tail: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arenas.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("experiment needs arenas, variants and seeds".into()));
        }
        if !(self.curve_dt > 0.0) {
            return Err(Error::Config("curve step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tail) {
            return Err(Error::Config(format!("tail fraction out of range: {}", self.tail)));
        }
        self.mission.validate()?;
        self.sensor.validate()?;
        self.planner.validate()?;
        self.traversability.validate()
    }
}

/// Everything the aggregation needs from one executed trial.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub termination: Termination,
    pub duration_s: f64,
    pub snapshot_histogram: ConfidenceHistogram,
    /// Confidence values of the final global map, arena order.
    pub final_confidences: Vec<f64>,
    /// Explored volume resampled on the curve grid.
    pub volume_curve: Vec<f64>,
}

/// One cell of the trial matrix. `data` is an error string when the episode
/// could not run at all.
#[derive(Clone, Debug)]
pub struct Trial {
    pub arena: ArenaPreset,
    pub variant: Variant,
    pub seed: u64,
    pub data: std::result::Result<TrialData, String>,
}

/// Aggregated results for one (arena, variant) group.
#[derive(Clone, Debug)]
pub struct VariantSummary {
    pub arena: ArenaPreset,
    pub variant: Variant,
    pub trials: usize,
    pub successes: usize,
    pub errors: usize,
    /// Mean operating time over all trials that ran, failures included.
    pub avg_time_s: f64,
    /// Seed-averaged low-confidence region ratio, percent. Missing when no
    /// trial produced an observed map.
    pub avg_ratio_pct: Option<f64>,
    /// Pointwise mean explored volume on the curve grid.
    pub mean_volume_curve: Vec<f64>,
}

/// Final experiment report.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub threshold: f64,
    pub tail: f64,
    pub curve_dt: f64,
    pub duration_s: f64,
    pub trials: Vec<Trial>,
    pub summaries: Vec<VariantSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, arena: ArenaPreset, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.arena == arena && s.variant == variant)
    }

    /// Canonical structured-text form of the report.
    pub fn summary_text(&self) -> String {
        let mut out = String::from("# experiment-summary v1\n");
        let _ = writeln!(out, "threshold={}", self.threshold);
        let _ = writeln!(out, "tail={}", self.tail);
        let _ = writeln!(out, "curve_dt_s={}", self.curve_dt);
        let _ = writeln!(out, "duration_s={}", self.duration_s);
        out.push('\n');
        for t in &self.trials {
            match &t.data {
                Ok(d) => {
                    let ratio = ratio_pct(&d.final_confidences, self.threshold);
                    let _ = writeln!(
                        out,
                        "trial arena={} variant={} seed={} termination={} time_s={} ratio_pct={}",
                        t.arena.name(),
                        t.variant.name(),
                        t.seed,
                        d.termination,
                        d.duration_s,
                        ratio.map(|r| r.to_string()).unwrap_or_else(|| "missing".into()),
                    );
                }
                Err(reason) => {
                    let _ = writeln!(
                        out,
                        "trial arena={} variant={} seed={} error={reason}",
                        t.arena.name(),
                        t.variant.name(),
                        t.seed,
                    );
                }
            }
        }
        out.push('\n');
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "summary arena={} variant={} successes={}/{} errors={} avg_time_s={} avg_ratio_pct={}",
                s.arena.name(),
                s.variant.name(),
                s.successes,
                s.trials,
                s.errors,
                s.avg_time_s,
                s.avg_ratio_pct.map(|r| r.to_string()).unwrap_or_else(|| "missing".into()),
            );
        }
        out
    }
}

/// Percentage of values at or below the threshold; `None` for an empty set.
fn ratio_pct(confidences: &[f64], threshold: f64) -> Option<f64> {
    if confidences.is_empty() {
        return None;
    }
    let low = confidences.iter().filter(|c| **c <= threshold).count();
    Some(100.0 * low as f64 / confidences.len() as f64)
}

// Distinct stream for spawn sampling so it cannot alias the episode stream,
// which is seeded with the raw trial seed.
const SPAWN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Draws the trial's spawn pose from its own seeded stream: a point in the
/// arena's clear zone plus a uniform heading, rejecting hazardous spots.
/// The pose depends only on (terrain, seed), never on the variant.
pub fn sample_spawn(
    terrain: &GroundTruthTerrain,
    mission: &MissionParams,
    footprint_radius: f64,
    seed: u64,
) -> Result<SpawnPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPAWN_STREAM);
    let zone = terrain.spawn();
    let radius = (zone.clear_radius - 1.0).max(0.5);
    for _ in 0..64 {
        let r = radius * rng.gen_range(0.0..1.0f64).sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = zone.position[0] + r * a.cos();
        let y = zone.position[1] + r * a.sin();
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        if !hazard_check(terrain, x, y, footprint_radius, mission) {
            return Ok(SpawnPose { x, y, heading });
        }
    }
    Err(Error::Config(format!("no safe spawn pose found for seed {seed}")))
}

/// Runs the full trial matrix. With an output directory, per-trial
/// artifacts, per-group curves, a manifest and the summary are written.
///
/// Trials run serially: arenas in config order, seeds in order, variants in
/// order, and aggregation folds them the same way, so the report does not
/// depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let mut trials = Vec::new();
    for &arena in &config.arenas {
        let terrain = arena.terrain()?;
        for &seed in &config.seeds {
            let spawn =
                sample_spawn(&terrain, &config.mission, config.planner.robot_radius, seed)?;
            for &variant in &config.variants {
                let planner = variant.apply(&config.planner);
                let data = match run_episode(
                    &terrain,
                    &config.sensor,
                    &config.mission,
                    &planner,
                    &config.traversability,
                    spawn,
                    seed,
                ) {
                    Ok(out) => {
                        let times: Vec<f64> = out.record.rows.iter().map(|r| r.t).collect();
                        let volumes: Vec<f64> =
                            out.record.rows.iter().map(|r| r.explored_volume).collect();
                        let curve = resample_hold(
                            &times,
                            &volumes,
                            config.curve_dt,
                            config.mission.duration_s,
                        )?;
                        if let Some(dir) = out_dir {
                            write_trial_artifacts(
                                dir,
                                arena,
                                variant,
                                seed,
                                &out.record,
                                &out.snapshot_histogram,
                                &out.global_map,
                            )?;
                        }
                        Ok(TrialData {
                            termination: out.record.termination,
                            duration_s: out.record.duration_s,
                            snapshot_histogram: out.snapshot_histogram,
                            final_confidences: out
                                .global_map
                                .recorded_cells()
                                .map(|(_, c)| c)
                                .collect(),
                            volume_curve: curve,
                        })
                    }
                    Err(Error::Config(reason)) => Err(reason),
                    Err(other) => return Err(other),
                };
                trials.push(Trial { arena, variant, seed, data });
            }
        }
    }
    let report = aggregate(trials, config.tail, config.curve_dt, config.mission.duration_s)?;
    if let Some(dir) = out_dir {
        write_report_artifacts(dir, config, &report)?;
    }
    Ok(report)
}

/// Reduces executed trials to the report. Threshold derivation pools the
/// snapshot histograms of every trial that ran; group order follows first
/// appearance in `trials`.
pub fn aggregate(
    trials: Vec<Trial>,
    tail: f64,
    curve_dt: f64,
    duration_s: f64,
) -> Result<ExperimentReport> {
    let mut pooled = ConfidenceHistogram::new();
    for t in &trials {
        if let Ok(d) = &t.data {
            pooled.merge(&d.snapshot_histogram);
        }
    }
    let threshold = derive_threshold(&pooled, tail)?;

    let mut groups: Vec<(ArenaPreset, Variant)> = Vec::new();
    for t in &trials {
        if !groups.contains(&(t.arena, t.variant)) {
            groups.push((t.arena, t.variant));
        }
    }

    let mut summaries = Vec::with_capacity(groups.len());
    for (arena, variant) in groups {
        let members: Vec<&Trial> =
            trials.iter().filter(|t| t.arena == arena && t.variant == variant).collect();
        let ran: Vec<&TrialData> = members.iter().filter_map(|t| t.data.as_ref().ok()).collect();
        let errors = members.len() - ran.len();
        let successes = ran.iter().filter(|d| d.termination == Termination::Completed).count();
        let avg_time_s = if ran.is_empty() {
            0.0
        } else {
            ran.iter().map(|d| d.duration_s).sum::<f64>() / ran.len() as f64
        };
        let ratios: Vec<f64> =
            ran.iter().filter_map(|d| ratio_pct(&d.final_confidences, threshold)).collect();
        let avg_ratio_pct = if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        };
        let curves: Vec<Vec<f64>> = ran.iter().map(|d| d.volume_curve.clone()).collect();
        let mean_volume_curve = if curves.is_empty() { Vec::new() } else { mean_curve(&curves)? };
        summaries.push(VariantSummary {
            arena,
            variant,
            trials: members.len(),
            successes,
            errors,
            avg_time_s,
            avg_ratio_pct,
            mean_volume_curve,
        });
    }
    Ok(ExperimentReport { threshold, tail, curve_dt, duration_s, trials, summaries })
}

fn trial_dir(root: &Path, arena: ArenaPreset, variant: Variant, seed: u64) -> PathBuf {
    root.join(arena.name()).join(variant.name()).join(format!("seed_{seed}"))
}

fn write_trial_artifacts(
    root: &Path,
    arena: ArenaPreset,
    variant: Variant,
    seed: u64,
    record: &MissionRecord,
    snapshot: &ConfidenceHistogram,
    global: &GlobalConfidenceMap<f64>,
) -> Result<()> {
    let dir = trial_dir(root, arena, variant, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    io::write_text(&dir.join("record.csv"), &record.to_csv())?;
    io::write_text(&dir.join("snapshot_hist.csv"), &io::histogram_to_csv(snapshot))?;
    // Resolution is not needed to recompute the ratio; 1.0 keeps the header
    // well-formed without smuggling in a map parameter.
    let arena_rect = global.arena();
    io::write_layer(&dir.join("confidence.csv"), arena_rect, 1.0, |c| global.confidence(c))
}

fn write_report_artifacts(
    root: &Path,
    config: &ExperimentConfig,
    report: &ExperimentReport,
) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut manifest = String::from("# experiment-manifest v1\n");
    let _ = writeln!(manifest, "duration_s={}", config.mission.duration_s);
    let _ = writeln!(manifest, "curve_dt_s={}", config.curve_dt);
    let _ = writeln!(manifest, "tail={}", config.tail);
    manifest.push_str("arena,variant,seed\n");
    for t in &report.trials {
        let _ = writeln!(manifest, "{},{},{}", t.arena.name(), t.variant.name(), t.seed);
    }
    io::write_text(&root.join("manifest.csv"), &manifest)?;

    for s in &report.summaries {
        let rows: Vec<Vec<f64>> = s
            .mean_volume_curve
            .iter()
            .enumerate()
            .map(|(k, v)| vec![k as f64 * report.curve_dt, *v])
            .collect();
        let csv = io::table_to_csv("exploration-curve v1", &["t_s", "volume_m3"], &rows);
        let name = format!("curve_{}_{}.csv", s.arena.name(), s.variant.name());
        io::write_text(&root.join(name), &csv)?;
    }
    io::write_text(&root.join("summary.txt"), &report.summary_text())
}

/// Rebuilds the report from stored artifacts alone. The result is byte
/// identical to the report written by the run that produced them.
pub fn recompute_metrics(root: &Path) -> Result<ExperimentReport> {
    let manifest = io::read_text(&root.join("manifest.csv"))?;
    let mut lines = manifest.lines();
    let head = lines.next().unwrap_or_default();
    if head != "# experiment-manifest v1" {
        return Err(Error::Parse(format!("unexpected manifest header: {head}")));
    }
    let mut duration_s = None;
    let mut curve_dt = None;
    let mut tail = None;
    let mut rows = Vec::new();
    let mut in_rows = false;
    for line in lines {
        if line == "arena,variant,seed" {
            in_rows = true;
            continue;
        }
        if !in_rows {
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed manifest line: {line}")))?;
            let v: f64 = val
                .parse()
                .map_err(|_| Error::Parse(format!("bad manifest value for {key}: {val}")))?;
            match key {
                "duration_s" => duration_s = Some(v),
                "curve_dt_s" => curve_dt = Some(v),
                "tail" => tail = Some(v),
                other => return Err(Error::Parse(format!("unknown manifest key: {other}"))),
            }
        } else {
            let mut parts = line.split(',');
            let arena = ArenaPreset::from_name(
                parts.next().ok_or_else(|| Error::Parse("manifest row missing arena".into()))?,
            )?;
            let variant = Variant::from_name(
                parts.next().ok_or_else(|| Error::Parse("manifest row missing variant".into()))?,
            )?;
            let seed: u64 = parts
                .next()
                .ok_or_else(|| Error::Parse("manifest row missing seed".into()))?
                .parse()
                .map_err(|_| Error::Parse("bad manifest seed".into()))?;
            rows.push((arena, variant, seed));
        }
    }
    let duration_s =
        duration_s.ok_or_else(|| Error::Parse("manifest missing duration_s".into()))?;
    let curve_dt = curve_dt.ok_or_else(|| Error::Parse("manifest missing curve_dt_s".into()))?;
    let tail = tail.ok_or_else(|| Error::Parse("manifest missing tail".into()))?;

    let mut trials = Vec::with_capacity(rows.len());
    for (arena, variant, seed) in rows {
        let dir = trial_dir(root, arena, variant, seed);
        let record = MissionRecord::from_csv(&io::read_text(&dir.join("record.csv"))?)?;
        let snapshot = io::histogram_from_csv(&io::read_text(&dir.join("snapshot_hist.csv"))?)?;
        let layer = io::read_layer(&dir.join("confidence.csv"))?;
        let mut final_confidences = Vec::new();
        for r in 0..layer.header.rows {
            for c in 0..layer.header.cols {
                if let Some(v) = layer.value(r, c) {
                    final_confidences.push(v);
                }
            }
        }
        let times: Vec<f64> = record.rows.iter().map(|r| r.t).collect();
        let volumes: Vec<f64> = record.rows.iter().map(|r| r.explored_volume).collect();
        let volume_curve = resample_hold(&times, &volumes, curve_dt, duration_s)?;
        trials.push(Trial {
            arena,
            variant,
            seed,
            data: Ok(TrialData {
                termination: record.termination,
                duration_s: record.duration_s,
                snapshot_histogram: snapshot,
                final_confidences,
                volume_curve,
            }),
        });
    }
    aggregate(trials, tail, curve_dt, duration_s)
}

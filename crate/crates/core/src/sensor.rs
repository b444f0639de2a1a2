//! Simulated ranging sensor.
//!
//! A scan casts a fixed pattern of rays (rings of elevation angles swept
//! over azimuth) from the sensor pose against the ground-truth terrain.
//! Rays march with steps bounded by the terrain's slope bound, then refine
//! the hit by bisection, so reported hit points lie on the true surface to
//! well under a tenth of a millimeter.
//!
//! Measurement noise has two parts, both reflected in the per-measurement
//! covariance:
//!
//! * isotropic per-axis noise with standard deviation `noise_std`;
//! * a beam-aligned range error that grows with the square of the range,
//!   taken from a smooth spatial field. The field stands for systematic
//!   ranging error (incidence geometry, surface response), so it is a fixed
//!   function of the hit location: rescanning the same spot from the same
//!   place repeats the error instead of averaging it away. Distant surfaces
//!   therefore look locally plausible but carry large absolute error, which
//!   is exactly the regime the confidence tracking exists for. The reported
//!   covariance carries the spec-sheet envelope of that error; the realized
//!   error runs at `1 / range_noise_margin` of the envelope, and only
//!   closer approaches, not repetition, shrink it.
//!
//! The field's lifetime is the caller's choice: [`simulate_scan`] draws a
//! fresh one per call, while the mission loop draws one per run and feeds
//! [`measurements_from_casts`]. Random draws are strictly ordered: the
//! field coefficients (frequency, direction, phase per component) when a
//! field is drawn, then three standard normals per hit ray, rays enumerated
//! ring-major. Equally seeded generators reproduce a scan bit for bit.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::{grid_index, Cell, CellRect};
use crate::terrain::GroundTruthTerrain;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Sensor model and pose
// ---------------------------------------------------------------------------

/// Ray pattern and noise parameters of the simulated sensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensorModel {
    pub rings: u32,
    pub elev_min_deg: f64,
    pub elev_max_deg: f64,
    pub azimuth_steps: u32,
    pub max_range: f64,
    /// Standard deviation of the independent per-axis noise, meters.
    pub noise_std: f64,
    /// Beam-range error envelope per squared meter of range: the reported
    /// covariance carries `range_noise_coeff * range^2` meters of standard
    /// deviation along the beam.
    pub range_noise_coeff: f64,
    /// Spatial wavelength of the smooth range-error field, meters.
    pub noise_wavelength: f64,
    /// How conservative the reported envelope is: the realized systematic
    /// error runs at `1 / range_noise_margin` of it. Spec-sheet covariances
    /// overstate the error of a typical unit; 1 means reported = realized.
    pub range_noise_margin: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            rings: 16,
            elev_min_deg: -15.0,
            elev_max_deg: 15.0,
            azimuth_steps: 360,
            max_range: 30.0,
            noise_std: 0.02,
            range_noise_coeff: 0.0,
            noise_wavelength: 3.0,
            range_noise_margin: 1.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 || self.azimuth_steps == 0 {
            return Err(Error::Parameter("sensor needs at least one ray".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Parameter("sensor max range must be positive".into()));
        }
        if self.noise_std < 0.0 || self.range_noise_coeff < 0.0 {
            return Err(Error::Parameter("sensor noise parameters must be non-negative".into()));
        }
        if self.range_noise_coeff > 0.0 && !(self.noise_wavelength > 0.0) {
            return Err(Error::Parameter("noise wavelength must be positive".into()));
        }
        if !(self.range_noise_margin >= 1.0) {
            return Err(Error::Parameter("range noise margin must be at least 1".into()));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame, ring-major. This is also
    /// the enumeration order of the per-ray noise draws.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let mut dirs = Vec::with_capacity((self.rings * self.azimuth_steps) as usize);
        for r in 0..self.rings {
            let f = if self.rings == 1 { 0.0 } else { r as f64 / (self.rings - 1) as f64 };
            let elev = (self.elev_min_deg + f * (self.elev_max_deg - self.elev_min_deg))
                .to_radians();
            let (se, ce) = elev.sin_cos();
            for a in 0..self.azimuth_steps {
                let az = std::f64::consts::TAU * a as f64 / self.azimuth_steps as f64;
                let (sa, ca) = az.sin_cos();
                dirs.push(Vector3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }
}

/// Sensor pose in the map frame: position plus the rotation taking
/// sensor-frame vectors into the map frame.
#[derive(Clone, Copy, Debug)]
pub struct SensorPose {
    position: Vector3<f64>,
    rotation: Matrix3<f64>,
}

impl SensorPose {
    /// Validates that `rotation` is proper: orthonormal within 1e-9 and of
    /// determinant +1 within 1e-9.
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).norm();
        if dev > 1e-9 {
            return Err(Error::Parameter(format!(
                "sensor orientation is not orthonormal (deviation {dev:.2e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "sensor orientation must be proper (det {det:.12})"
            )));
        }
        Ok(SensorPose { position, rotation })
    }

    /// Level pose: sensor axes aligned with the map after a yaw rotation.
    pub fn level(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        SensorPose { position, rotation }
    }

    /// Yawed pose with an additional nose-down pitch about the body y
    /// axis. A small per-scan pitch dither sweeps the ring hit circles
    /// radially, which is what lets a stationary sensor fill the gaps
    /// between its fixed ring elevations.
    pub fn yaw_pitch(position: Vector3<f64>, yaw: f64, pitch: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        SensorPose { position, rotation: rz * ry }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.position
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
}

/// One returned range measurement: hit point in the sensor frame plus its
/// noise covariance in the same frame.
#[derive(Clone, Copy, Debug)]
pub struct RangeMeasurement {
    point: Vector3<f64>,
    covariance: Matrix3<f64>,
}

impl RangeMeasurement {
    /// Validates symmetry and positive semidefiniteness (via the leading
    /// principal minors) of the covariance.
    pub fn new(point: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self> {
        let sym_dev = (covariance - covariance.transpose()).norm();
        if sym_dev > 1e-12 * (1.0 + covariance.norm()) {
            return Err(Error::Parameter("measurement covariance must be symmetric".into()));
        }
        let tol = 1e-12 * (1.0 + covariance.norm());
        let m1 = covariance[(0, 0)];
        let m2 = covariance[(0, 0)] * covariance[(1, 1)] - covariance[(0, 1)] * covariance[(1, 0)];
        let m3 = covariance.determinant();
        if m1 < -tol || m2 < -tol * tol.max(1.0) || m3 < -tol {
            return Err(Error::Parameter("measurement covariance must be PSD".into()));
        }
        Ok(RangeMeasurement { point, covariance })
    }

    pub fn point(&self) -> Vector3<f64> {
        self.point
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }
}

/// Height observation produced by projecting a measurement into the map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightObservation {
    pub cell: Cell,
    pub height: f64,
    pub variance: f64,
}

// ---------------------------------------------------------------------------
// Ray casting
// ---------------------------------------------------------------------------

/// Range along `dir` (unit, map frame) at which the ray first meets the
/// terrain, or `None` within `max_range`. The march steps by the current
/// clearance over the terrain's slope bound, so it cannot step across the
/// surface; the bracket is then bisected until it is 1e-6 m wide.
pub fn cast_ray(
    terrain: &GroundTruthTerrain,
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    max_range: f64,
) -> Option<f64> {
    let slope_bound = terrain.slope_bound();
    let (_, h_hi) = terrain.height_bounds();
    let denom = dir.z.abs() + slope_bound * dir.xy().norm() + 1e-9;

    let clearance_at = |t: f64| {
        let p = origin + dir * t;
        p.z - terrain.height(p.x, p.y)
    };

    let mut t = 0.0;
    let mut f = clearance_at(0.0);
    if f <= 0.0 {
        // Sensor at or below the surface: treat as immediate contact.
        return Some(0.0);
    }
    loop {
        // Ascending ray already above every surface: cannot hit.
        if dir.z >= 0.0 && origin.z + dir.z * t > h_hi {
            return None;
        }
        let step = (f / denom).clamp(0.02, 2.0);
        let t_next = t + step;
        if t_next > max_range {
            return None;
        }
        let f_next = clearance_at(t_next);
        if f_next <= 0.0 {
            // Bracketed: bisect.
            let mut lo = t;
            let mut hi = t_next;
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if clearance_at(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t = t_next;
        f = f_next;
    }
}

// ---------------------------------------------------------------------------
// Scanning
// ---------------------------------------------------------------------------

/// Smooth error field with unit pointwise variance: a sum of random plane
/// waves. Models the systematic part of the range error as a function of
/// the hit location.
#[derive(Clone, Debug)]
pub struct SmoothField {
    comps: [(f64, f64, f64); 4],
}

impl SmoothField {
    pub fn draw<R: Rng>(rng: &mut R, wavelength: f64) -> Self {
        let mut comps = [(0.0, 0.0, 0.0); 4];
        for c in comps.iter_mut() {
            let freq = rng.gen_range(0.5..1.0) / wavelength;
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            *c = (freq * angle.cos(), freq * angle.sin(), phase);
        }
        SmoothField { comps }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let scale = (2.0 / self.comps.len() as f64).sqrt();
        let mut acc = 0.0;
        for &(fx, fy, phase) in &self.comps {
            acc += (std::f64::consts::TAU * (fx * x + fy * y) + phase).cos();
        }
        acc * scale
    }
}

/// Simulates one scan with a field drawn fresh for it. Rays that do not
/// meet the terrain within range are omitted. See the module docs for the
/// randomness contract.
pub fn simulate_scan<R: Rng>(
    terrain: &GroundTruthTerrain,
    pose: &SensorPose,
    model: &SensorModel,
    rng: &mut R,
) -> Vec<RangeMeasurement> {
    let rays = model.ray_directions();
    simulate_scan_with_rays(terrain, pose, model, &rays, rng)
}

/// Same as [`simulate_scan`] but reusing a precomputed ray table.
pub fn simulate_scan_with_rays<R: Rng>(
    terrain: &GroundTruthTerrain,
    pose: &SensorPose,
    model: &SensorModel,
    rays: &[Vector3<f64>],
    rng: &mut R,
) -> Vec<RangeMeasurement> {
    let casts = cast_scan(terrain, pose, rays, model.max_range);
    let field = SmoothField::draw(rng, model.noise_wavelength);
    measurements_from_casts(pose, model, rays, &casts, &field, rng)
}

/// Ranges at which each ray of the pattern meets the terrain, `None` for
/// misses. Indexes match `rays`.
pub fn cast_scan(
    terrain: &GroundTruthTerrain,
    pose: &SensorPose,
    rays: &[Vector3<f64>],
    max_range: f64,
) -> Vec<Option<f64>> {
    let rot = pose.rotation();
    let origin = pose.position();
    rays.iter()
        .map(|dir_s| cast_ray(terrain, origin, rot * dir_s, max_range))
        .collect()
}

/// Applies the noise model to the hits of a cast scan against the given
/// error field, consuming three standard normals per hit.
pub fn measurements_from_casts<R: Rng>(
    pose: &SensorPose,
    model: &SensorModel,
    rays: &[Vector3<f64>],
    casts: &[Option<f64>],
    field: &SmoothField,
    rng: &mut R,
) -> Vec<RangeMeasurement> {
    let rot = pose.rotation();
    let origin = pose.position();
    let mut out = Vec::with_capacity(casts.iter().filter(|c| c.is_some()).count());
    for (dir_s, cast) in rays.iter().zip(casts) {
        let Some(t) = *cast else {
            continue;
        };
        let dir_m = rot * dir_s;
        let hit_m = origin + dir_m * t;
        let exact_s = rot.transpose() * (hit_m - origin);

        let n: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let amp = model.range_noise_coeff * t * t;
        let beam_err = if amp > 0.0 {
            amp / model.range_noise_margin * field.sample(hit_m.x, hit_m.y)
        } else {
            0.0
        };
        let point = exact_s
            + Vector3::new(n[0], n[1], n[2]) * model.noise_std
            + dir_s * beam_err;

        let iso = model.noise_std * model.noise_std;
        let covariance = Matrix3::identity() * iso + (dir_s * dir_s.transpose()) * (amp * amp);
        out.push(RangeMeasurement { point, covariance });
    }
    out
}

/// Projects a measurement into the map frame and reduces it to a height
/// observation for the cell under the hit. Returns `None` when the hit
/// falls outside `bounds`.
///
/// The height variance is the covariance mapped through the height row of
/// the rotation: with `j` the third row of the sensor-to-map rotation,
/// `variance = j * cov * j^T`.
pub fn project_measurement(
    meas: &RangeMeasurement,
    pose: &SensorPose,
    resolution: f64,
    bounds: &CellRect,
) -> Option<HeightObservation> {
    let p_map = pose.rotation() * meas.point() + pose.position();
    let cell = grid_index(p_map.x, p_map.y, resolution);
    if !bounds.contains(cell) {
        return None;
    }
    let j = pose.rotation().row(2).transpose();
    let variance = (j.transpose() * meas.covariance() * j)[(0, 0)];
    Some(HeightObservation { cell, height: p_map.z, variance })
}

//! Analytic ground-truth terrain.
//!
//! An arena is a continuous heightfield: seeded fractal value noise plus a
//! list of parametric features (craters, rocks, scattered rock fields,
//! ramps). The field is a pure function of the configuration, so the same
//! config yields bit-identical heights on every run and on every platform
//! that rounds IEEE doubles the same way.
//!
//! The mission layer also uses the terrain as the safety referee: it asks
//! for the true local slope and the true height spread under the robot
//! footprint, independent of whatever the mapping stack believes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Fractal value-noise parameters for the terrain base layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Amplitude of the first octave in meters. Zero disables the layer.
    pub amplitude: f64,
    /// Wavelength of the first octave in meters.
    pub wavelength: f64,
    #[serde(default = "default_octaves")]
    pub octaves: u32,
    /// Amplitude ratio between consecutive octaves.
    #[serde(default = "default_persistence")]
    pub persistence: f64,
}

fn default_octaves() -> u32 {
    2
}

fn default_persistence() -> f64 {
    0.5
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { amplitude: 0.0, wavelength: 8.0, octaves: 2, persistence: 0.5 }
    }
}

/// Robot start area. Features may not intrude into the clear disc, which is
/// what makes the spawn pose checks satisfiable by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpawnConfig {
    pub position: [f64; 2],
    pub clear_radius: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig { position: [0.0, 0.0], clear_radius: 4.0 }
    }
}

/// One parametric terrain feature.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// Smooth bowl: depth `d` at the center, back to base level at `radius`.
    Crater { center: [f64; 2], radius: f64, depth: f64 },
    /// Smooth bump of the given peak height.
    Rock { center: [f64; 2], radius: f64, height: f64 },
    /// Deterministic scatter of rocks inside a disc. Rock positions and
    /// sizes derive from the terrain seed and the feature's position in the
    /// feature list, so the scatter is stable across runs.
    RockField {
        center: [f64; 2],
        radius: f64,
        count: u32,
        rock_radius: [f64; 2],
        rock_height: [f64; 2],
    },
    /// Inclined band starting at `start`, rising along `direction_deg` with
    /// the given grade (rise per meter) for `length` meters, then holding
    /// its final height. Lateral extent is `width` with a smooth falloff.
    Ramp {
        start: [f64; 2],
        direction_deg: f64,
        length: f64,
        width: f64,
        grade: f64,
    },
}

/// Terrain configuration as stored in arena files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TerrainConfig {
    /// Arena side lengths in meters; the arena is centered on the origin.
    pub extent: [f64; 2],
    pub seed: u64,
    /// Grid resolution used when exporting the heightfield.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub spawn: SpawnConfig,
    #[serde(default, rename = "feature")]
    pub features: Vec<Feature>,
}

fn default_resolution() -> f64 {
    0.1
}

impl TerrainConfig {
    /// Featureless, noiseless arena; `height` is identically zero.
    pub fn flat(extent_x: f64, extent_y: f64, seed: u64) -> Self {
        TerrainConfig {
            extent: [extent_x, extent_y],
            seed,
            resolution: default_resolution(),
            noise: NoiseConfig::default(),
            spawn: SpawnConfig::default(),
            features: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("terrain config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("terrain config serializes")
    }
}

// ---------------------------------------------------------------------------
// Deterministic hashing and value noise
// ---------------------------------------------------------------------------

fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hash2(seed: u64, xi: i64, yi: i64) -> u64 {
    mix64(seed ^ mix64((xi as u64).wrapping_mul(0x517c_c1b7_2722_0a95)) ^ (yi as u64))
}

/// Hash mapped to `[-1, 1]`.
fn lattice_value(seed: u64, xi: i64, yi: i64) -> f64 {
    let h = hash2(seed, xi, yi);
    (h >> 11) as f64 / ((1u64 << 53) as f64) * 2.0 - 1.0
}

/// Hash mapped to `[0, 1)`.
fn unit_hash(h: u64) -> f64 {
    (h >> 11) as f64 / ((1u64 << 53) as f64)
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Reference evaluation the precomputed octave tables are checked against.
#[cfg(test)]
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let xf = x.floor();
    let yf = y.floor();
    let xi = xf as i64;
    let yi = yf as i64;
    let tx = fade(x - xf);
    let ty = fade(y - yf);
    let v00 = lattice_value(seed, xi, yi);
    let v10 = lattice_value(seed, xi + 1, yi);
    let v01 = lattice_value(seed, xi, yi + 1);
    let v11 = lattice_value(seed, xi + 1, yi + 1);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

// ---------------------------------------------------------------------------
// Resolved terrain
// ---------------------------------------------------------------------------

/// Feature reduced to an evaluation primitive (rock fields are scattered
/// into individual rocks at construction).
#[derive(Clone, Debug)]
enum Primitive {
    Crater { cx: f64, cy: f64, radius: f64, depth: f64 },
    Rock { cx: f64, cy: f64, radius: f64, height: f64 },
    Ramp {
        sx: f64,
        sy: f64,
        ux: f64,
        uy: f64,
        length: f64,
        half_width: f64,
        rolloff: f64,
        grade: f64,
    },
}

impl Primitive {
    /// Conservative radius of influence around the primitive's anchor.
    fn reach(&self) -> f64 {
        match *self {
            Primitive::Crater { radius, .. } | Primitive::Rock { radius, .. } => radius,
            Primitive::Ramp { length, half_width, rolloff, .. } => {
                // Anchored at the segment midpoint when bucketing.
                (length * 0.5).hypot(half_width + rolloff)
            }
        }
    }

    fn anchor(&self) -> (f64, f64) {
        match *self {
            Primitive::Crater { cx, cy, .. } | Primitive::Rock { cx, cy, .. } => (cx, cy),
            Primitive::Ramp { sx, sy, ux, uy, length, .. } => {
                (sx + ux * length * 0.5, sy + uy * length * 0.5)
            }
        }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Primitive::Crater { cx, cy, radius, depth } => {
                -depth * bump_profile(x - cx, y - cy, radius)
            }
            Primitive::Rock { cx, cy, radius, height } => {
                height * bump_profile(x - cx, y - cy, radius)
            }
            Primitive::Ramp { sx, sy, ux, uy, length, half_width, rolloff, grade } => {
                let dx = x - sx;
                let dy = y - sy;
                let t = (dx * ux + dy * uy).clamp(0.0, length);
                let lateral = (dx * -uy + dy * ux).abs();
                let w = if lateral <= half_width {
                    1.0
                } else if lateral >= half_width + rolloff {
                    0.0
                } else {
                    let s = (lateral - half_width) / rolloff;
                    1.0 - fade(s)
                };
                grade * t * w
            }
        }
    }

    /// Upper bound on the gradient magnitude this primitive contributes.
    fn slope_bound(&self) -> f64 {
        // Quartic bump: max |d/drho| = 8 h / (3 sqrt(3) r).
        const BUMP: f64 = 8.0 / (3.0 * 1.732_050_807_568_877_2);
        match *self {
            Primitive::Crater { radius, depth, .. } => BUMP * depth / radius,
            Primitive::Rock { radius, height, .. } => BUMP * height / radius,
            Primitive::Ramp { length, rolloff, grade, .. } => {
                let peak = (grade * length).abs();
                grade.abs() + peak * 1.875 / rolloff
            }
        }
    }

    fn peak_height(&self) -> (f64, f64) {
        match *self {
            Primitive::Crater { depth, .. } => (-depth, 0.0),
            Primitive::Rock { height, .. } => (0.0, height),
            Primitive::Ramp { length, grade, .. } => {
                let peak = grade * length;
                (peak.min(0.0), peak.max(0.0))
            }
        }
    }
}

/// `(1 - (rho/r)^2)^2` inside the radius, zero outside.
fn bump_profile(dx: f64, dy: f64, radius: f64) -> f64 {
    let q = (dx * dx + dy * dy) / (radius * radius);
    if q >= 1.0 {
        0.0
    } else {
        let s = 1.0 - q;
        s * s
    }
}

/// Precomputed noise lattice for one octave: hashes are resolved once over
/// the arena so the per-sample path is a fetch plus the fade interpolation.
#[derive(Clone, Debug)]
struct OctaveTable {
    seed: u64,
    inv_wavelength: f64,
    amplitude: f64,
    x0: i64,
    y0: i64,
    cols: i64,
    rows: i64,
    values: Vec<f64>,
}

impl OctaveTable {
    fn build(seed: u64, wavelength: f64, amplitude: f64, half_x: f64, half_y: f64) -> Self {
        let margin = 2.0;
        let x0 = (-(half_x + margin) / wavelength).floor() as i64 - 1;
        let y0 = (-(half_y + margin) / wavelength).floor() as i64 - 1;
        let x1 = ((half_x + margin) / wavelength).ceil() as i64 + 1;
        let y1 = ((half_y + margin) / wavelength).ceil() as i64 + 1;
        let cols = x1 - x0 + 1;
        let rows = y1 - y0 + 1;
        let mut values = Vec::with_capacity((cols * rows) as usize);
        for yi in y0..=y1 {
            for xi in x0..=x1 {
                values.push(lattice_value(seed, xi, yi));
            }
        }
        OctaveTable {
            seed,
            inv_wavelength: 1.0 / wavelength,
            amplitude,
            x0,
            y0,
            cols,
            rows,
            values,
        }
    }

    #[inline]
    fn lattice(&self, xi: i64, yi: i64) -> f64 {
        if xi >= self.x0 && xi < self.x0 + self.cols && yi >= self.y0 && yi < self.y0 + self.rows
        {
            self.values[((yi - self.y0) * self.cols + (xi - self.x0)) as usize]
        } else {
            lattice_value(self.seed, xi, yi)
        }
    }

    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        let u = x * self.inv_wavelength;
        let v = y * self.inv_wavelength;
        let uf = u.floor();
        let vf = v.floor();
        let xi = uf as i64;
        let yi = vf as i64;
        let tx = fade(u - uf);
        let ty = fade(v - vf);
        let v00 = self.lattice(xi, yi);
        let v10 = self.lattice(xi + 1, yi);
        let v01 = self.lattice(xi, yi + 1);
        let v11 = self.lattice(xi + 1, yi + 1);
        let a = v00 + (v10 - v00) * tx;
        let b = v01 + (v11 - v01) * tx;
        self.amplitude * (a + (b - a) * ty)
    }
}

/// Continuous heightfield resolved from a [`TerrainConfig`].
#[derive(Clone, Debug)]
pub struct GroundTruthTerrain {
    config: TerrainConfig,
    octaves: Vec<OctaveTable>,
    primitives: Vec<Primitive>,
    /// Uniform buckets over the arena mapping to primitive indices.
    buckets: Vec<Vec<u32>>,
    bucket_size: f64,
    bucket_cols: i64,
    bucket_rows: i64,
    bucket_x0: f64,
    bucket_y0: f64,
    slope_bound: f64,
    height_lo: f64,
    height_hi: f64,
}

const BUCKET_SIZE: f64 = 4.0;

impl GroundTruthTerrain {
    pub fn new(config: TerrainConfig) -> Result<Self> {
        validate(&config)?;
        let primitives = scatter(&config);

        let half_x = config.extent[0] * 0.5;
        let half_y = config.extent[1] * 0.5;
        let mut octaves = Vec::new();
        if config.noise.amplitude > 0.0 {
            for o in 0..config.noise.octaves {
                let wavelength = config.noise.wavelength / (1u64 << o) as f64;
                let amplitude = config.noise.amplitude * config.noise.persistence.powi(o as i32);
                octaves.push(OctaveTable::build(
                    config.seed.wrapping_add(o as u64).wrapping_mul(0x9e37_79b9),
                    wavelength,
                    amplitude,
                    half_x,
                    half_y,
                ));
            }
        }

        let bucket_x0 = -half_x - BUCKET_SIZE;
        let bucket_y0 = -half_y - BUCKET_SIZE;
        let bucket_cols = ((2.0 * (half_x + BUCKET_SIZE)) / BUCKET_SIZE).ceil() as i64 + 1;
        let bucket_rows = ((2.0 * (half_y + BUCKET_SIZE)) / BUCKET_SIZE).ceil() as i64 + 1;
        let mut buckets = vec![Vec::new(); (bucket_cols * bucket_rows) as usize];
        for (idx, prim) in primitives.iter().enumerate() {
            let (ax, ay) = prim.anchor();
            let reach = prim.reach();
            let c0 = (((ax - reach) - bucket_x0) / BUCKET_SIZE).floor() as i64;
            let c1 = (((ax + reach) - bucket_x0) / BUCKET_SIZE).floor() as i64;
            let r0 = (((ay - reach) - bucket_y0) / BUCKET_SIZE).floor() as i64;
            let r1 = (((ay + reach) - bucket_y0) / BUCKET_SIZE).floor() as i64;
            for r in r0.max(0)..=r1.min(bucket_rows - 1) {
                for c in c0.max(0)..=c1.min(bucket_cols - 1) {
                    buckets[(r * bucket_cols + c) as usize].push(idx as u32);
                }
            }
        }

        let noise_slope: f64 = octaves
            .iter()
            .map(|o| 6.0 * o.amplitude * o.inv_wavelength)
            .sum();
        let mut feature_slopes: Vec<f64> = primitives.iter().map(|p| p.slope_bound()).collect();
        feature_slopes.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let slope_bound = noise_slope
            + feature_slopes.first().copied().unwrap_or(0.0)
            + feature_slopes.get(1).copied().unwrap_or(0.0);

        let noise_amp: f64 = octaves.iter().map(|o| o.amplitude).sum();
        let mut height_lo = -noise_amp;
        let mut height_hi = noise_amp;
        for p in &primitives {
            let (lo, hi) = p.peak_height();
            height_lo = height_lo.min(lo - noise_amp);
            height_hi = height_hi.max(hi + noise_amp);
        }

        Ok(GroundTruthTerrain {
            config,
            octaves,
            primitives,
            buckets,
            bucket_size: BUCKET_SIZE,
            bucket_cols,
            bucket_rows,
            bucket_x0,
            bucket_y0,
            slope_bound,
            height_lo,
            height_hi,
        })
    }

    pub fn config(&self) -> &TerrainConfig {
        &self.config
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.config.extent[0], self.config.extent[1])
    }

    pub fn spawn(&self) -> &SpawnConfig {
        &self.config.spawn
    }

    /// Ground height at a planar position.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let mut h = 0.0;
        for o in &self.octaves {
            h += o.sample(x, y);
        }
        let c = ((x - self.bucket_x0) / self.bucket_size).floor() as i64;
        let r = ((y - self.bucket_y0) / self.bucket_size).floor() as i64;
        if c >= 0 && c < self.bucket_cols && r >= 0 && r < self.bucket_rows {
            for &idx in &self.buckets[(r * self.bucket_cols + c) as usize] {
                h += self.primitives[idx as usize].height(x, y);
            }
        } else {
            for p in &self.primitives {
                h += p.height(x, y);
            }
        }
        h
    }

    /// True surface inclination at a position, in degrees, from central
    /// differences at a sub-cell probe distance.
    pub fn slope_deg(&self, x: f64, y: f64) -> f64 {
        let e = 0.02;
        let gx = (self.height(x + e, y) - self.height(x - e, y)) / (2.0 * e);
        let gy = (self.height(x, y + e) - self.height(x, y - e)) / (2.0 * e);
        (gx * gx + gy * gy).sqrt().atan().to_degrees()
    }

    /// Largest true height difference inside a disc, probing on a fixed
    /// sub-resolution lattice.
    pub fn height_spread(&self, x: f64, y: f64, radius: f64) -> f64 {
        let step = 0.05f64;
        let n = (radius / step).ceil() as i64;
        let r2 = radius * radius;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for di in -n..=n {
            for dj in -n..=n {
                let dx = di as f64 * step;
                let dy = dj as f64 * step;
                if dx * dx + dy * dy <= r2 {
                    let h = self.height(x + dx, y + dy);
                    lo = lo.min(h);
                    hi = hi.max(h);
                }
            }
        }
        hi - lo
    }

    /// Upper bound on the gradient magnitude of the whole field; the ray
    /// caster uses it to choose safe marching steps.
    pub fn slope_bound(&self) -> f64 {
        self.slope_bound
    }

    /// Conservative bounds on the height values over the arena.
    pub fn height_bounds(&self) -> (f64, f64) {
        (self.height_lo, self.height_hi)
    }

    /// Whether a planar position lies inside the arena extent.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (ex, ey) = self.extent();
        x >= -ex * 0.5 && x <= ex * 0.5 && y >= -ey * 0.5 && y <= ey * 0.5
    }
}

// ---------------------------------------------------------------------------
// Validation and rock-field scattering
// ---------------------------------------------------------------------------

fn validate(config: &TerrainConfig) -> Result<()> {
    if !(config.extent[0] > 0.0 && config.extent[1] > 0.0) {
        return Err(Error::Config("arena extent must be positive".into()));
    }
    if config.noise.amplitude < 0.0 {
        return Err(Error::Config("noise amplitude must be non-negative".into()));
    }
    if config.noise.amplitude > 0.0 {
        if !(config.noise.wavelength > 0.0) {
            return Err(Error::Config("noise wavelength must be positive".into()));
        }
        if config.noise.octaves == 0 {
            return Err(Error::Config("noise octaves must be at least 1".into()));
        }
        if !(config.noise.persistence > 0.0 && config.noise.persistence <= 1.0) {
            return Err(Error::Config("noise persistence must lie in (0, 1]".into()));
        }
    }
    if config.spawn.clear_radius < 0.0 {
        return Err(Error::Config("spawn clear radius must be non-negative".into()));
    }
    for (k, f) in config.features.iter().enumerate() {
        match f {
            Feature::Crater { radius, depth, .. } => {
                if !(*radius > 0.0 && *depth > 0.0) {
                    return Err(Error::Config(format!(
                        "feature {k}: crater radius and depth must be positive"
                    )));
                }
            }
            Feature::Rock { radius, height, .. } => {
                if !(*radius > 0.0 && *height > 0.0) {
                    return Err(Error::Config(format!(
                        "feature {k}: rock radius and height must be positive"
                    )));
                }
            }
            Feature::RockField { radius, count, rock_radius, rock_height, .. } => {
                if !(*radius > 0.0) || *count == 0 {
                    return Err(Error::Config(format!(
                        "feature {k}: rock field needs positive radius and count"
                    )));
                }
                if !(rock_radius[0] > 0.0 && rock_radius[1] >= rock_radius[0]) {
                    return Err(Error::Config(format!(
                        "feature {k}: rock radius range must be positive and ordered"
                    )));
                }
                if !(rock_height[0] > 0.0 && rock_height[1] >= rock_height[0]) {
                    return Err(Error::Config(format!(
                        "feature {k}: rock height range must be positive and ordered"
                    )));
                }
            }
            Feature::Ramp { length, width, grade, .. } => {
                if !(*length > 0.0 && *width > 0.0) {
                    return Err(Error::Config(format!(
                        "feature {k}: ramp length and width must be positive"
                    )));
                }
                if !(grade.is_finite() && *grade != 0.0) {
                    return Err(Error::Config(format!(
                        "feature {k}: ramp grade must be finite and nonzero"
                    )));
                }
            }
        }
    }

    // Features must stay out of the spawn-clear disc.
    let spawn = &config.spawn;
    for (k, prim) in scatter(config).iter().enumerate() {
        let clearance = primitive_clearance(prim, spawn.position[0], spawn.position[1]);
        if clearance < spawn.clear_radius {
            return Err(Error::Config(format!(
                "scattered feature {k} intrudes into the spawn clear zone \
                 (clearance {clearance:.2} m < {:.2} m)",
                spawn.clear_radius
            )));
        }
    }
    Ok(())
}

/// Distance from a point to the primitive's zone of influence.
fn primitive_clearance(prim: &Primitive, px: f64, py: f64) -> f64 {
    match *prim {
        Primitive::Crater { cx, cy, radius, .. } | Primitive::Rock { cx, cy, radius, .. } => {
            (px - cx).hypot(py - cy) - radius
        }
        Primitive::Ramp { sx, sy, ux, uy, length, half_width, rolloff, .. } => {
            let dx = px - sx;
            let dy = py - sy;
            let t = (dx * ux + dy * uy).clamp(0.0, length);
            let lateral = (dx * -uy + dy * ux).abs();
            let along = (dx * ux + dy * uy) - t;
            let lat_excess = (lateral - half_width - rolloff).max(0.0);
            along.abs().hypot(lat_excess)
        }
    }
}

/// Resolves the feature list into primitives, expanding rock fields with a
/// deterministic hash-driven scatter.
fn scatter(config: &TerrainConfig) -> Vec<Primitive> {
    let mut prims = Vec::new();
    for (fi, f) in config.features.iter().enumerate() {
        match *f {
            Feature::Crater { center, radius, depth } => {
                prims.push(Primitive::Crater { cx: center[0], cy: center[1], radius, depth });
            }
            Feature::Rock { center, radius, height } => {
                prims.push(Primitive::Rock { cx: center[0], cy: center[1], radius, height });
            }
            Feature::RockField { center, radius, count, rock_radius, rock_height } => {
                for k in 0..count {
                    let tag = config
                        .seed
                        .wrapping_mul(0x2545_f491_4f6c_dd1d)
                        .wrapping_add((fi as u64) << 32)
                        .wrapping_add(k as u64);
                    let u = unit_hash(mix64(tag ^ 0x01));
                    let v = unit_hash(mix64(tag ^ 0x02));
                    let rho = radius * u.sqrt();
                    let phi = std::f64::consts::TAU * v;
                    let rr = rock_radius[0]
                        + (rock_radius[1] - rock_radius[0]) * unit_hash(mix64(tag ^ 0x03));
                    let rh = rock_height[0]
                        + (rock_height[1] - rock_height[0]) * unit_hash(mix64(tag ^ 0x04));
                    prims.push(Primitive::Rock {
                        cx: center[0] + rho * phi.cos(),
                        cy: center[1] + rho * phi.sin(),
                        radius: rr,
                        height: rh,
                    });
                }
            }
            Feature::Ramp { start, direction_deg, length, width, grade } => {
                let theta = direction_deg.to_radians();
                prims.push(Primitive::Ramp {
                    sx: start[0],
                    sy: start[1],
                    ux: theta.cos(),
                    uy: theta.sin(),
                    length,
                    half_width: width * 0.5,
                    rolloff: (width * 0.25).clamp(0.5, 2.0),
                    grade,
                });
            }
        }
    }
    prims
}

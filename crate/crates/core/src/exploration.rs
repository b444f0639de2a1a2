//! Coarse 3D exploration bookkeeping.
//!
//! A voxel grid over the arena volume records which space the sensor has
//! swept. Scan rays carve free space along their length and mark the hit
//! voxel occupied; the grid never forgets, so explored volume can only
//! grow. Candidate viewpoints are scored by counting the unknown voxels a
//! sensor there could still see: within range, inside the vertical field
//! of view, and with line of sight not blocked by occupied space. Unknown
//! space does not block, which is what makes frontier regions attractive.

use nalgebra::Vector3;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoxelState {
    Unknown,
    Free,
    Occupied,
}

const UNKNOWN: u8 = 0;
const FREE: u8 = 1;
const OCCUPIED: u8 = 2;

/// Dense voxel grid over an axis-aligned box.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    min: Vector3<f64>,
    voxel: f64,
    dims: [i64; 3],
    states: Vec<u8>,
    free: usize,
    occupied: usize,
}

impl VoxelGrid {
    /// Grid covering at least the box `[min, max]`; each dimension rounds
    /// up to a whole number of voxels.
    pub fn new(min: Vector3<f64>, max: Vector3<f64>, voxel: f64) -> Result<Self> {
        if !(voxel > 0.0) {
            return Err(Error::Parameter("voxel size must be positive".into()));
        }
        let mut dims = [0i64; 3];
        for a in 0..3 {
            if !(max[a] > min[a]) {
                return Err(Error::Parameter("voxel grid box must have positive extent".into()));
            }
            dims[a] = ((max[a] - min[a]) / voxel).ceil().max(1.0) as i64;
        }
        let len = (dims[0] * dims[1] * dims[2]) as usize;
        Ok(VoxelGrid { min, voxel, dims, states: vec![UNKNOWN; len], free: 0, occupied: 0 })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    pub fn dims(&self) -> [i64; 3] {
        self.dims
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel * self.voxel * self.voxel
    }

    pub fn total_count(&self) -> usize {
        self.states.len()
    }

    pub fn unknown_count(&self) -> usize {
        self.states.len() - self.free - self.occupied
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied
    }

    /// Volume of all voxels that are no longer unknown.
    pub fn explored_volume(&self) -> f64 {
        (self.free + self.occupied) as f64 * self.voxel_volume()
    }

    fn offset(&self, v: [i64; 3]) -> Option<usize> {
        for a in 0..3 {
            if v[a] < 0 || v[a] >= self.dims[a] {
                return None;
            }
        }
        Some(((v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]) as usize)
    }

    /// Voxel containing a point, `None` outside the grid.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<[i64; 3]> {
        let mut v = [0i64; 3];
        for a in 0..3 {
            let idx = ((p[a] - self.min[a]) / self.voxel).floor();
            v[a] = idx as i64;
            if v[a] < 0 || v[a] >= self.dims[a] {
                return None;
            }
        }
        Some(v)
    }

    pub fn state(&self, v: [i64; 3]) -> Option<VoxelState> {
        self.offset(v).map(|o| match self.states[o] {
            FREE => VoxelState::Free,
            OCCUPIED => VoxelState::Occupied,
            _ => VoxelState::Unknown,
        })
    }

    pub fn center(&self, v: [i64; 3]) -> Vector3<f64> {
        Vector3::new(
            self.min.x + (v[0] as f64 + 0.5) * self.voxel,
            self.min.y + (v[1] as f64 + 0.5) * self.voxel,
            self.min.z + (v[2] as f64 + 0.5) * self.voxel,
        )
    }

    fn mark_free(&mut self, v: [i64; 3]) {
        if let Some(o) = self.offset(v) {
            if self.states[o] == UNKNOWN {
                self.states[o] = FREE;
                self.free += 1;
            }
        }
    }

    fn mark_occupied(&mut self, v: [i64; 3]) {
        if let Some(o) = self.offset(v) {
            match self.states[o] {
                OCCUPIED => {}
                FREE => {
                    self.states[o] = OCCUPIED;
                    self.free -= 1;
                    self.occupied += 1;
                }
                _ => {
                    self.states[o] = OCCUPIED;
                    self.occupied += 1;
                }
            }
        }
    }

    /// Integrates one sensor ray: voxels along the segment become free and,
    /// for a hit, the voxel containing the endpoint becomes occupied.
    /// Occupied voxels are never freed again. Segments may start or end
    /// outside the grid; only the overlap is touched.
    pub fn integrate_ray(&mut self, origin: &Vector3<f64>, end: &Vector3<f64>, hit: bool) {
        let (min, voxel, dims) = (self.min, self.voxel, self.dims);
        let mut visited = |v: [i64; 3]| {
            self.mark_free(v);
            true
        };
        walk_segment(&min, voxel, &dims, origin, end, &mut visited);
        if hit {
            if let Some(v) = self.voxel_of(end) {
                self.mark_occupied(v);
            }
        }
    }

    /// Whether the segment from `eye` to the center of `target` crosses no
    /// occupied voxel. Unknown voxels do not block. The target voxel
    /// itself is exempt so occupied frontiers stay visible.
    pub fn line_of_sight(&self, eye: &Vector3<f64>, target: [i64; 3]) -> bool {
        let end = self.center(target);
        let mut clear = true;
        let mut visit = |v: [i64; 3]| {
            if v == target {
                return false;
            }
            if let Some(o) = self.offset(v) {
                if self.states[o] == OCCUPIED {
                    clear = false;
                    return false;
                }
            }
            true
        };
        walk_segment(&self.min, self.voxel, &self.dims, eye, &end, &mut visit);
        clear
    }

    /// Number of unknown voxels a sensor at `eye` could still observe:
    /// center within `range`, elevation angle inside the given band, and
    /// clear line of sight.
    pub fn visible_unknown_count(
        &self,
        eye: &Vector3<f64>,
        range: f64,
        elev_min_deg: f64,
        elev_max_deg: f64,
    ) -> usize {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            lo[a] = (((eye[a] - range) - self.min[a]) / self.voxel).floor().max(0.0) as i64;
            hi[a] = ((((eye[a] + range) - self.min[a]) / self.voxel).floor() as i64)
                .min(self.dims[a] - 1);
        }
        let mut count = 0;
        for vx in lo[0]..=hi[0] {
            for vy in lo[1]..=hi[1] {
                for vz in lo[2]..=hi[2] {
                    let v = [vx, vy, vz];
                    let o = self.offset(v).expect("clamped to grid bounds");
                    if self.states[o] != UNKNOWN {
                        continue;
                    }
                    let c = self.center(v);
                    let delta = c - eye;
                    let dist = delta.norm();
                    if dist > range {
                        continue;
                    }
                    if dist > 1e-12 {
                        let elev = delta.z.atan2(delta.xy().norm()).to_degrees();
                        if elev < elev_min_deg || elev > elev_max_deg {
                            continue;
                        }
                    }
                    if self.line_of_sight(eye, v) {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Visits the voxels a segment passes through, in order, restricted to the
/// grid box. `visit` returns `false` to stop early.
fn walk_segment(
    min: &Vector3<f64>,
    voxel: f64,
    dims: &[i64; 3],
    origin: &Vector3<f64>,
    end: &Vector3<f64>,
    visit: &mut impl FnMut([i64; 3]) -> bool,
) {
    let d = end - origin;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for a in 0..3 {
        let o = origin[a] - min[a];
        let extent = dims[a] as f64 * voxel;
        if d[a] == 0.0 {
            if o < 0.0 || o >= extent {
                return;
            }
        } else {
            let inv = 1.0 / d[a];
            let (ta, tb) = {
                let ta = -o * inv;
                let tb = (extent - o) * inv;
                if ta <= tb { (ta, tb) } else { (tb, ta) }
            };
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    if t0 > t1 {
        return;
    }

    let p0 = origin + d * t0;
    let mut v = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let idx = ((p0[a] - min[a]) / voxel).floor() as i64;
        v[a] = idx.clamp(0, dims[a] - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = voxel / d[a];
            let boundary = min[a] + (v[a] + 1) as f64 * voxel;
            t_max[a] = (boundary - origin[a]) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = voxel / -d[a];
            let boundary = min[a] + v[a] as f64 * voxel;
            t_max[a] = (boundary - origin[a]) / d[a];
        }
    }

    loop {
        if !visit(v) {
            return;
        }
        let mut a = 0;
        if t_max[1] < t_max[a] {
            a = 1;
        }
        if t_max[2] < t_max[a] {
            a = 2;
        }
        if t_max[a] > t1 {
            return;
        }
        v[a] += step[a];
        if v[a] < 0 || v[a] >= dims[a] {
            return;
        }
        t_max[a] += t_delta[a];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: i64) -> VoxelGrid {
        VoxelGrid::new(
            Vector3::zeros(),
            Vector3::new(n as f64, n as f64, n as f64),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn miss_ray_frees_a_straight_row() {
        let mut g = unit_grid(10);
        g.integrate_ray(
            &Vector3::new(0.5, 0.5, 0.5),
            &Vector3::new(9.5, 0.5, 0.5),
            false,
        );
        assert_eq!(g.explored_volume(), 10.0);
        assert_eq!(g.occupied_count(), 0);
        for x in 0..10 {
            assert_eq!(g.state([x, 0, 0]), Some(VoxelState::Free));
        }
        assert_eq!(g.state([0, 1, 0]), Some(VoxelState::Unknown));
    }

    #[test]
    fn hit_ray_marks_endpoint_occupied() {
        let mut g = unit_grid(10);
        g.integrate_ray(
            &Vector3::new(0.5, 0.5, 0.5),
            &Vector3::new(3.5, 0.5, 0.5),
            true,
        );
        assert_eq!(g.state([0, 0, 0]), Some(VoxelState::Free));
        assert_eq!(g.state([2, 0, 0]), Some(VoxelState::Free));
        assert_eq!(g.state([3, 0, 0]), Some(VoxelState::Occupied));
        assert_eq!(g.state([4, 0, 0]), Some(VoxelState::Unknown));
        assert_eq!(g.occupied_count(), 1);
    }

    #[test]
    fn occupied_survives_later_free_marks() {
        let mut g = unit_grid(10);
        g.integrate_ray(&Vector3::new(0.5, 0.5, 0.5), &Vector3::new(3.5, 0.5, 0.5), true);
        g.integrate_ray(&Vector3::new(0.5, 0.5, 0.5), &Vector3::new(9.5, 0.5, 0.5), false);
        assert_eq!(g.state([3, 0, 0]), Some(VoxelState::Occupied));
        assert_eq!(g.state([5, 0, 0]), Some(VoxelState::Free));
    }

    #[test]
    fn segments_outside_the_grid_are_clipped() {
        let mut g = unit_grid(4);
        // Fully outside.
        g.integrate_ray(&Vector3::new(-5.0, -5.0, -5.0), &Vector3::new(-1.0, -5.0, -5.0), false);
        assert_eq!(g.explored_volume(), 0.0);
        // Crossing through.
        g.integrate_ray(&Vector3::new(-1.0, 0.5, 0.5), &Vector3::new(5.0, 0.5, 0.5), false);
        assert_eq!(g.explored_volume(), 4.0);
        // Hit endpoint outside: frees the overlap, marks nothing occupied.
        g.integrate_ray(&Vector3::new(0.5, 1.5, 0.5), &Vector3::new(0.5, 7.5, 0.5), true);
        assert_eq!(g.occupied_count(), 0);
    }

    /// Independent enumeration of the voxels a segment crosses: collect
    /// every grid-plane crossing parameter, then classify the interval
    /// midpoints.
    fn oracle_voxels(g: &VoxelGrid, o: &Vector3<f64>, e: &Vector3<f64>) -> Vec<[i64; 3]> {
        let d = e - o;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for a in 0..3 {
            let rel = o[a] - g.min[a];
            let extent = g.dims[a] as f64 * g.voxel;
            if d[a] == 0.0 {
                if rel < 0.0 || rel >= extent {
                    return Vec::new();
                }
            } else {
                let ta = -rel / d[a];
                let tb = (extent - rel) / d[a];
                let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if t0 > t1 {
            return Vec::new();
        }
        let mut ts = vec![t0, t1];
        for a in 0..3 {
            if d[a] != 0.0 {
                for k in 0..=g.dims[a] {
                    let t = (g.min[a] + k as f64 * g.voxel - o[a]) / d[a];
                    if t > t0 && t < t1 {
                        ts.push(t);
                    }
                }
            }
        }
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut out: Vec<[i64; 3]> = Vec::new();
        for w in ts.windows(2) {
            let tm = 0.5 * (w[0] + w[1]);
            if w[1] - w[0] < 1e-12 {
                continue;
            }
            let p = o + d * tm;
            let mut v = [0i64; 3];
            let mut inside = true;
            for a in 0..3 {
                v[a] = ((p[a] - g.min[a]) / g.voxel).floor() as i64;
                inside &= v[a] >= 0 && v[a] < g.dims[a];
            }
            if inside && out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn walk_matches_interval_midpoint_oracle() {
        let g = unit_grid(20);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let p = Vector3::new(
                rng.gen_range(-3.0..23.0),
                rng.gen_range(-3.0..23.0),
                rng.gen_range(-3.0..23.0),
            );
            let q = Vector3::new(
                rng.gen_range(-3.0..23.0),
                rng.gen_range(-3.0..23.0),
                rng.gen_range(-3.0..23.0),
            );
            let mut walked = Vec::new();
            walk_segment(&g.min, g.voxel, &g.dims, &p, &q, &mut |v| {
                walked.push(v);
                true
            });
            let expected = oracle_voxels(&g, &p, &q);
            assert_eq!(walked, expected, "segment {p:?} -> {q:?}");
        }
    }

    #[test]
    fn explored_volume_never_shrinks() {
        let mut g = unit_grid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut last = 0.0;
        for _ in 0..200 {
            let o = Vector3::new(
                rng.gen_range(0.0..12.0),
                rng.gen_range(0.0..12.0),
                rng.gen_range(0.0..12.0),
            );
            let e = Vector3::new(
                rng.gen_range(-2.0..14.0),
                rng.gen_range(-2.0..14.0),
                rng.gen_range(-2.0..14.0),
            );
            g.integrate_ray(&o, &e, rng.gen_bool(0.5));
            let vol = g.explored_volume();
            assert!(vol >= last);
            last = vol;
            let known = (vol / g.voxel_volume()).round() as usize;
            assert_eq!(g.unknown_count() + known, g.total_count());
        }
    }

    #[test]
    fn vertical_fov_gates_gain() {
        let g = unit_grid(9);
        let eye = Vector3::new(4.5, 4.5, 4.5);
        // Narrow band looking level: the column straight above the eye is
        // outside it.
        let narrow = g.visible_unknown_count(&eye, 10.0, -10.0, 10.0);
        let wide = g.visible_unknown_count(&eye, 10.0, -90.0, 90.0);
        assert!(narrow < wide);
        // Everything is within range and unknown, so the wide band sees
        // every voxel.
        assert_eq!(wide, g.total_count());
    }

    #[test]
    fn occupied_blocks_and_unknown_does_not() {
        let mut g = unit_grid(9);
        let eye = Vector3::new(0.5, 4.5, 4.5);
        // Unknown corridor: the far voxel along +x is visible.
        assert!(g.line_of_sight(&eye, [8, 4, 4]));
        // Drop an occupied wall voxel between.
        g.integrate_ray(&eye, &Vector3::new(4.5, 4.5, 4.5), true);
        assert_eq!(g.state([4, 4, 4]), Some(VoxelState::Occupied));
        assert!(!g.line_of_sight(&eye, [8, 4, 4]));
        // The occupied voxel itself stays visible as a frontier target.
        assert!(g.line_of_sight(&eye, [4, 4, 4]));
    }

    #[test]
    fn visible_count_matches_brute_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for round in 0..12 {
            let mut g = unit_grid(14);
            for vx in 0..14 {
                for vy in 0..14 {
                    for vz in 0..14 {
                        let r: f64 = rng.gen();
                        if r < 0.15 {
                            g.mark_occupied([vx, vy, vz]);
                        } else if r < 0.45 {
                            g.mark_free([vx, vy, vz]);
                        }
                    }
                }
            }
            let eye = Vector3::new(
                rng.gen_range(1.0..13.0),
                rng.gen_range(1.0..13.0),
                rng.gen_range(1.0..13.0),
            );
            let range = rng.gen_range(3.0..9.0);
            let (emin, emax) = (-50.0, 25.0);

            let mut expected = 0;
            for vx in 0..14 {
                for vy in 0..14 {
                    for vz in 0..14 {
                        let v = [vx, vy, vz];
                        if g.state(v) != Some(VoxelState::Unknown) {
                            continue;
                        }
                        let c = g.center(v);
                        let delta = c - eye;
                        if delta.norm() > range {
                            continue;
                        }
                        let elev = delta.z.atan2(delta.xy().norm()).to_degrees();
                        if elev < emin || elev > emax {
                            continue;
                        }
                        let blocked = oracle_voxels(&g, &eye, &c)
                            .into_iter()
                            .filter(|w| *w != v)
                            .any(|w| g.state(w) == Some(VoxelState::Occupied));
                        if !blocked {
                            expected += 1;
                        }
                    }
                }
            }
            let got = g.visible_unknown_count(&eye, range, emin, emax);
            assert_eq!(got, expected, "round {round}");
        }
    }
}

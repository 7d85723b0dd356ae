use crate::error::{Error, Result};
use crate::state::CrowdState;
use crate::vec2::Vec2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Result<Self> {
        if (a - b).norm_sq() == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "segment endpoints coincide at ({}, {})",
                a.x, a.y
            )));
        }
        Ok(Segment { a, b })
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Closest point on the segment to `x` (projection clamped to [a, b]).
    pub fn nearest_point(&self, x: Vec2) -> Vec2 {
        let ab = self.b - self.a;
        let t = (x - self.a).dot(ab) / ab.norm_sq();
        let t = t.clamp(0.0, 1.0);
        self.a + ab * t
    }

    /// Parametric coordinate of the nearest point, already clamped to [0, 1].
    pub fn nearest_t(&self, x: Vec2) -> f64 {
        let ab = self.b - self.a;
        ((x - self.a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitWall {
    Right,
    Left,
    Top,
    Bottom,
}

impl Default for ExitWall {
    fn default() -> Self {
        ExitWall::Right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpawnMode {
    Uniform,
    BimodalClusters,
    /// Whole crowd in one small square patch at a random spot in the room;
    /// keeps agents interacting at close range for the entire walk out.
    PackedGroup,
}

impl Default for SpawnMode {
    fn default() -> Self {
        SpawnMode::Uniform
    }
}

/// Square room [0, H] x [0, H] whose boundary is covered by wall segments
/// except for one exit gap centered on the chosen wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub side_length: f64,
    pub walls: Vec<Segment>,
    pub exit: Segment,
    pub exit_center: Vec2,
}

/// Fraction of the side length kept clear of the boundary when spawning.
const SPAWN_MARGIN_FRAC: f64 = 0.05;
/// Depth of each bimodal cluster band as a fraction of the side length.
const CLUSTER_DEPTH_FRAC: f64 = 0.2;
/// Packed-group patch side = spread * min_separation * sqrt(n). Random
/// sequential placement jams near 0.7 * (side / min_separation)^2 points;
/// 1.6 keeps the patch at roughly half that density.
const PACKED_SPREAD_FACTOR: f64 = 1.6;
const MAX_SAMPLE_ATTEMPTS: usize = 200_000;

impl Scene {
    /// Builds the room with an exit of width `exit_width` centered on
    /// `exit_wall`. The exit wall splits into two segments, so the boundary
    /// is always five wall segments.
    pub fn square(side_length: f64, exit_width: f64, exit_wall: ExitWall) -> Result<Self> {
        if side_length <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "scene.side_length must be positive, got {side_length}"
            )));
        }
        if exit_width <= 0.0 || exit_width >= side_length {
            return Err(Error::InvalidConfig(format!(
                "scene.exit_width must lie in (0, side_length), got {exit_width}"
            )));
        }
        let h = side_length;
        let c = h / 2.0;
        let half = exit_width / 2.0;
        let p = |x: f64, y: f64| Vec2::new(x, y);

        // Corners in CCW order with the exit wall's two pieces appended last.
        let (full_walls, lo, hi, center): ([Segment; 3], Segment, Segment, Vec2) = match exit_wall
        {
            ExitWall::Right => (
                [
                    Segment::new(p(0.0, 0.0), p(h, 0.0))?,
                    Segment::new(p(0.0, h), p(h, h))?,
                    Segment::new(p(0.0, 0.0), p(0.0, h))?,
                ],
                Segment::new(p(h, 0.0), p(h, c - half))?,
                Segment::new(p(h, c + half), p(h, h))?,
                p(h, c),
            ),
            ExitWall::Left => (
                [
                    Segment::new(p(0.0, 0.0), p(h, 0.0))?,
                    Segment::new(p(0.0, h), p(h, h))?,
                    Segment::new(p(h, 0.0), p(h, h))?,
                ],
                Segment::new(p(0.0, 0.0), p(0.0, c - half))?,
                Segment::new(p(0.0, c + half), p(0.0, h))?,
                p(0.0, c),
            ),
            ExitWall::Top => (
                [
                    Segment::new(p(0.0, 0.0), p(h, 0.0))?,
                    Segment::new(p(0.0, 0.0), p(0.0, h))?,
                    Segment::new(p(h, 0.0), p(h, h))?,
                ],
                Segment::new(p(0.0, h), p(c - half, h))?,
                Segment::new(p(c + half, h), p(h, h))?,
                p(c, h),
            ),
            ExitWall::Bottom => (
                [
                    Segment::new(p(0.0, h), p(h, h))?,
                    Segment::new(p(0.0, 0.0), p(0.0, h))?,
                    Segment::new(p(h, 0.0), p(h, h))?,
                ],
                Segment::new(p(0.0, 0.0), p(c - half, 0.0))?,
                Segment::new(p(c + half, 0.0), p(h, 0.0))?,
                p(c, 0.0),
            ),
        };

        let exit = Segment::new(lo.b, hi.a)?;
        let mut walls = full_walls.to_vec();
        walls.push(lo);
        walls.push(hi);
        Ok(Scene {
            side_length,
            walls,
            exit,
            exit_center: center,
        })
    }

    pub fn nearest_point_on_wall(&self, wall_index: usize, x: Vec2) -> Result<Vec2> {
        let seg = self.walls.get(wall_index).ok_or(Error::IndexOutOfRange {
            index: wall_index,
            len: self.walls.len(),
        })?;
        Ok(seg.nearest_point(x))
    }

    /// True iff `x` lies strictly outside the room square; boundary points
    /// count as inside.
    pub fn has_exited(&self, x: Vec2) -> bool {
        let h = self.side_length;
        x.x < 0.0 || x.x > h || x.y < 0.0 || x.y > h
    }

    /// Rectangle [x0, x1] x [y0, y1] agents spawn in for the given mode and
    /// cluster choice (`cluster` is ignored for uniform spawning). Packed
    /// patches depend on the per-call rng, so `sample_initial_state` sizes
    /// them itself and never asks here.
    fn spawn_rect(&self, mode: SpawnMode, cluster: usize) -> (f64, f64, f64, f64) {
        let h = self.side_length;
        let m = SPAWN_MARGIN_FRAC * h;
        let depth = CLUSTER_DEPTH_FRAC * h;
        match mode {
            SpawnMode::Uniform => (m, h - m, m, h - m),
            SpawnMode::PackedGroup => unreachable!("sized in sample_initial_state"),
            SpawnMode::BimodalClusters => {
                // Band hugging the exit wall vs band hugging the opposite wall.
                let d = self.exit_center;
                let (near, far);
                if d.x == h || d.x == 0.0 {
                    let (x_near, x_far) = if d.x == h {
                        ((h - m - depth, h - m), (m, m + depth))
                    } else {
                        ((m, m + depth), (h - m - depth, h - m))
                    };
                    near = (x_near.0, x_near.1, m, h - m);
                    far = (x_far.0, x_far.1, m, h - m);
                } else {
                    let (y_near, y_far) = if d.y == h {
                        ((h - m - depth, h - m), (m, m + depth))
                    } else {
                        ((m, m + depth), (h - m - depth, h - m))
                    };
                    near = (m, h - m, y_near.0, y_near.1);
                    far = (m, h - m, y_far.0, y_far.1);
                }
                if cluster == 0 {
                    near
                } else {
                    far
                }
            }
        }
    }

    /// Draws N agent positions with pairwise separation >= `min_separation`
    /// and zero velocities. Bimodal mode puts the whole crowd in one of two
    /// bands (near-exit or far-wall), chosen by a seeded coin per call, so
    /// evacuation times across repeated runs split into two modes. Packed
    /// mode squeezes everyone into a randomly placed patch a few body
    /// diameters wide.
    pub fn sample_initial_state(
        &self,
        n_agents: usize,
        mode: SpawnMode,
        min_separation: f64,
        rng_seed: u64,
    ) -> Result<CrowdState> {
        if n_agents == 0 {
            return Err(Error::InvalidConfig("n_agents must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let cluster = if mode == SpawnMode::BimodalClusters {
            usize::from(rng.gen_bool(0.5))
        } else {
            0
        };
        let (x0, x1, y0, y1) = if mode == SpawnMode::PackedGroup {
            let h = self.side_length;
            let m = SPAWN_MARGIN_FRAC * h;
            let side = (min_separation * (n_agents as f64).sqrt() * PACKED_SPREAD_FACTOR)
                .min(h - 2.0 * m);
            let ox = rng.gen_range(m..=(h - m - side));
            let oy = rng.gen_range(m..=(h - m - side));
            (ox, ox + side, oy, oy + side)
        } else {
            self.spawn_rect(mode, cluster)
        };

        let mut positions: Vec<Vec2> = Vec::with_capacity(n_agents);
        let mut attempts = 0usize;
        while positions.len() < n_agents {
            if attempts >= MAX_SAMPLE_ATTEMPTS {
                return Err(Error::PackingInfeasible {
                    n_agents,
                    min_separation,
                    attempts,
                });
            }
            attempts += 1;
            let cand = Vec2::new(rng.gen_range(x0..=x1), rng.gen_range(y0..=y1));
            if positions
                .iter()
                .all(|p| (*p - cand).norm() >= min_separation)
            {
                positions.push(cand);
            }
        }
        CrowdState::new(positions, vec![Vec2::default(); n_agents], 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene {
        Scene::square(10.0, 1.0, ExitWall::Right).unwrap()
    }

    #[test]
    fn square_scene_has_five_walls_covering_perimeter() {
        let s = scene();
        assert_eq!(s.walls.len(), 5);
        let total: f64 = s.walls.iter().map(|w| w.length()).sum();
        assert!((total + s.exit.length() - 40.0).abs() < 1e-12);
        assert_eq!(s.exit_center, Vec2::new(10.0, 5.0));
        assert!((s.exit.a - Vec2::new(10.0, 4.5)).norm() < 1e-12);
        assert!((s.exit.b - Vec2::new(10.0, 5.5)).norm() < 1e-12);
    }

    #[test]
    fn nearest_point_perpendicular_projection() {
        let s = scene();
        // Bottom wall runs (0,0)-(10,0); offset 1 m above its midpoint.
        let q = s.nearest_point_on_wall(0, Vec2::new(5.0, 1.0)).unwrap();
        assert!((q - Vec2::new(5.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn nearest_point_clamps_to_endpoint() {
        let s = scene();
        // Beyond endpoint a of the bottom wall along the segment line.
        let q = s.nearest_point_on_wall(0, Vec2::new(-3.0, 0.0)).unwrap();
        assert!((q - Vec2::new(0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn nearest_point_matches_dense_sampling() {
        // Brute-force oracle: discretize the segment with 1e5 points.
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = Vec2::new(rng.gen_range(-2.0..12.0), rng.gen_range(-2.0..12.0));
            for (wi, w) in s.walls.iter().enumerate() {
                let fast = s.nearest_point_on_wall(wi, x).unwrap();
                let mut best = w.a;
                let mut best_d = (x - w.a).norm();
                let n = 100_000;
                for i in 0..=n {
                    let t = i as f64 / n as f64;
                    let p = w.a + (w.b - w.a) * t;
                    let d = (x - p).norm();
                    if d < best_d {
                        best_d = d;
                        best = p;
                    }
                }
                assert!(
                    (fast - best).norm() < 1e-4,
                    "wall {wi}: fast {fast:?} vs sampled {best:?}"
                );
            }
        }
    }

    #[test]
    fn nearest_point_out_of_range_errors() {
        let s = scene();
        assert!(matches!(
            s.nearest_point_on_wall(5, Vec2::new(0.0, 0.0)),
            Err(Error::IndexOutOfRange { index: 5, len: 5 })
        ));
    }

    #[test]
    fn has_exited_boundary_is_inside() {
        let s = scene();
        assert!(!s.has_exited(Vec2::new(5.0, 5.0)));
        assert!(s.has_exited(Vec2::new(10.5, 5.0)));
        assert!(!s.has_exited(Vec2::new(10.0, 5.0)));
        assert!(!s.has_exited(Vec2::new(0.0, 0.0)));
        assert!(s.has_exited(Vec2::new(-1e-9, 5.0)));
    }

    #[test]
    fn spawn_single_agent_inside_at_rest() {
        let s = scene();
        let st = s
            .sample_initial_state(1, SpawnMode::Uniform, 0.7, 3)
            .unwrap();
        assert_eq!(st.len(), 1);
        assert!(!s.has_exited(st.positions[0]));
        assert_eq!(st.velocities[0], Vec2::default());
    }

    #[test]
    fn spawn_respects_min_separation_exhaustively() {
        let s = scene();
        let st = s
            .sample_initial_state(20, SpawnMode::Uniform, 0.7, 11)
            .unwrap();
        for i in 0..20 {
            assert!(!s.has_exited(st.positions[i]));
            for j in (i + 1)..20 {
                let d = (st.positions[i] - st.positions[j]).norm();
                assert!(d >= 0.7, "pair ({i},{j}) at distance {d}");
            }
        }
    }

    #[test]
    fn spawn_is_deterministic() {
        let s = scene();
        let a = s
            .sample_initial_state(8, SpawnMode::BimodalClusters, 0.7, 42)
            .unwrap();
        let b = s
            .sample_initial_state(8, SpawnMode::BimodalClusters, 0.7, 42)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn packed_group_stays_tight_and_separated() {
        let s = scene();
        for seed in 0..16 {
            let st = s
                .sample_initial_state(5, SpawnMode::PackedGroup, 0.62, seed)
                .unwrap();
            let side = 0.62 * 5f64.sqrt() * PACKED_SPREAD_FACTOR;
            for i in 0..5 {
                assert!(!s.has_exited(st.positions[i]));
                for j in (i + 1)..5 {
                    let d = (st.positions[i] - st.positions[j]).norm();
                    assert!(d >= 0.62, "pair ({i},{j}) at distance {d}");
                    assert!(
                        d <= side * 2f64.sqrt(),
                        "pair ({i},{j}) at {d} exceeds the patch diagonal"
                    );
                }
            }
        }
    }

    #[test]
    fn spawn_infeasible_packing_errors() {
        let s = Scene::square(2.0, 0.5, ExitWall::Right).unwrap();
        let r = s.sample_initial_state(200, SpawnMode::Uniform, 0.7, 1);
        assert!(matches!(r, Err(Error::PackingInfeasible { .. })));
    }

    #[test]
    fn bimodal_clusters_land_in_disjoint_bands() {
        let s = scene();
        let mut seen_near = false;
        let mut seen_far = false;
        for seed in 0..32 {
            let st = s
                .sample_initial_state(5, SpawnMode::BimodalClusters, 0.7, seed)
                .unwrap();
            let xs: Vec<f64> = st.positions.iter().map(|p| p.x).collect();
            let near = xs.iter().all(|&x| x >= 7.5 - 1e-12);
            let far = xs.iter().all(|&x| x <= 2.5 + 1e-12);
            assert!(near || far, "seed {seed}: crowd straddles bands: {xs:?}");
            seen_near |= near;
            seen_far |= far;
        }
        assert!(seen_near && seen_far, "coin never flipped both ways");
    }
}

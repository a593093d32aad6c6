//! Mobility simulation: devices move between road waypoints in straight
//! inter-sample legs, with per-mode speeds and irregular sampling gaps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geo::GeoPoint;
use crate::mrdata::Mode;

use super::{SamplingConfig, SpeedRanges, World};

/// Epoch base for synthetic timestamps.
const T0: i64 = 1_600_000_000;

/// Ordered constant-mode periods.
#[derive(Debug, Clone)]
pub struct ModeSchedule {
    segments: Vec<(Mode, f64)>,
    total: f64,
}

impl ModeSchedule {
    pub fn new(segments: Vec<(Mode, f64)>) -> Self {
        assert!(!segments.is_empty() && segments.iter().all(|s| s.1 > 0.0));
        let total = segments.iter().map(|s| s.1).sum();
        Self { segments, total }
    }

    pub fn from_segments(modes: &[Mode], segment_s: f64) -> Self {
        Self::new(modes.iter().map(|&m| (m, segment_s)).collect())
    }

    pub fn single(mode: Mode, duration_s: f64) -> Self {
        Self::new(vec![(mode, duration_s)])
    }

    pub fn total_duration(&self) -> f64 {
        self.total
    }

    /// Mode active at a relative time; the last segment covers the tail.
    pub fn mode_at(&self, t_rel: f64) -> Mode {
        let mut acc = 0.0;
        for &(mode, d) in &self.segments {
            acc += d;
            if t_rel < acc {
                return mode;
            }
        }
        self.segments.last().unwrap().0
    }
}

/// Integer gap sampler over weighted intervals. The first bucket is
/// closed; later buckets exclude their lower edge, matching interval
/// tables written as [a, b], (b, c], (c, d], ...
#[derive(Debug, Clone)]
pub struct GapSampler {
    /// Inclusive integer ranges per bucket.
    ranges: Vec<(i64, i64)>,
    cumulative: Vec<f64>,
}

impl GapSampler {
    pub fn new(config: &SamplingConfig) -> Result<Self, String> {
        if config.interval_buckets.len() != config.bucket_weights.len() {
            return Err("bucket/weight length mismatch".into());
        }
        let total: f64 = config.bucket_weights.iter().sum();
        if total <= 0.0 {
            return Err("bucket weights must sum to a positive value".into());
        }
        let mut cumulative = Vec::with_capacity(config.bucket_weights.len());
        let mut acc = 0.0;
        for &w in &config.bucket_weights {
            if w < 0.0 {
                return Err("negative bucket weight".into());
            }
            acc += w / total;
            cumulative.push(acc);
        }
        let mut ranges: Vec<(i64, i64)> = Vec::with_capacity(config.interval_buckets.len());
        for (k, b) in config.interval_buckets.iter().enumerate() {
            if b[1] < b[0] || b[0] < 1.0 {
                return Err("buckets must be ordered ranges of at least 1 second".into());
            }
            let lo = if k == 0 { b[0].ceil() as i64 } else { b[0].floor() as i64 + 1 };
            let hi = b[1].floor() as i64;
            if hi < lo {
                return Err(format!("bucket {k} holds no integer gap"));
            }
            if k > 0 && lo <= ranges[k - 1].1 {
                return Err(format!("bucket {k} overlaps its predecessor"));
            }
            ranges.push((lo, hi));
        }
        Ok(Self { ranges, cumulative })
    }

    /// Draw an integer gap in seconds.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> i64 {
        let u: f64 = rng.random();
        let mut idx = self.cumulative.len() - 1;
        for (i, &c) in self.cumulative.iter().enumerate() {
            if u <= c {
                idx = i;
                break;
            }
        }
        let (lo, hi) = self.ranges[idx];
        rng.random_range(lo..=hi)
    }

    /// Which bucket an integer gap falls into.
    pub fn bucket_of(&self, gap: f64) -> Option<usize> {
        let g = gap.round() as i64;
        self.ranges.iter().position(|&(lo, hi)| g >= lo && g <= hi)
    }
}

/// One ground-truth track point.
#[derive(Debug, Clone, Copy)]
pub struct TrackPoint {
    pub timestamp: i64,
    pub position: GeoPoint,
    pub mode: Mode,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Pick a road waypoint at least `min_dist` away from `pos`, preferring
/// nodes adjacent to `near` (the node just reached) so motion follows the
/// grid when steps are short.
fn pick_waypoint(
    world: &World,
    pos: [f64; 2],
    near: usize,
    min_dist: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let neighbors = &world.road_adjacency[near];
    let mut order: Vec<usize> = neighbors.clone();
    for _ in 0..order.len() {
        let i = rng.random_range(0..order.len());
        let cand = order[i];
        if dist(world.road_nodes[cand], pos) >= min_dist {
            return cand;
        }
        order.remove(i);
        if order.is_empty() {
            break;
        }
    }
    // Fall back to any node far enough away; sample rather than scan so the
    // walk stays random.
    for _ in 0..64 {
        let cand = rng.random_range(0..world.road_nodes.len());
        if dist(world.road_nodes[cand], pos) >= min_dist {
            return cand;
        }
    }
    // Worst case: the farthest node.
    (0..world.road_nodes.len())
        .max_by(|&a, &b| {
            dist(world.road_nodes[a], pos)
                .partial_cmp(&dist(world.road_nodes[b], pos))
                .unwrap()
        })
        .unwrap()
}

/// Conservative lower bound on the distance from `pos` to the farthest
/// road node: the farthest corner minus the node margin and one grid cell.
fn reach_bound(world: &World, pos: [f64; 2], spacing_hint: f64) -> f64 {
    let corners = [
        [0.0, 0.0],
        [world.extent_m[0], 0.0],
        [0.0, world.extent_m[1]],
        world.extent_m,
    ];
    let corner_max = corners.iter().map(|&c| dist(pos, c)).fold(0.0, f64::max);
    (corner_max - 1.5 * spacing_hint).max(1.0)
}

/// Simulate one device. Every inter-sample leg is a straight segment of
/// exactly speed x gap meters toward a road waypoint, so the ground-truth
/// speed between consecutive labeled positions always sits inside the
/// active mode's range. Gaps whose step cannot fit inside the world are
/// redrawn (a sub-percent correction at desk scale).
pub fn simulate_trajectory(
    world: &World,
    schedule: &ModeSchedule,
    gaps: &GapSampler,
    speeds: &SpeedRanges,
    constant_speed: bool,
    seed: u64,
) -> Vec<TrackPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_node = rng.random_range(0..world.road_nodes.len());
    let mut pos = world.road_nodes[start_node];
    let mut waypoint = pick_waypoint(world, pos, start_node, 1.0, &mut rng);
    let spacing_hint = {
        // Largest neighbor distance of the start node approximates the
        // grid pitch, which bounds how far nodes sit from the walls.
        world.road_adjacency[start_node]
            .iter()
            .map(|&n| dist(world.road_nodes[start_node], world.road_nodes[n]))
            .fold(40.0, f64::max)
    };

    let mut mode = schedule.mode_at(0.0);
    let draw_speed = |mode: Mode, rng: &mut ChaCha8Rng| {
        let [lo, hi] = speeds.range(mode);
        rng.random_range(lo..hi)
    };
    let mut speed = draw_speed(mode, &mut rng);

    let mut points = vec![TrackPoint { timestamp: T0, position: world.to_geo(pos), mode }];
    let mut t_rel = 0.0;

    loop {
        let reach = reach_bound(world, pos, spacing_hint);

        // Candidate gap; the mode (and with it the speed) may switch at
        // the new timestamp, so settle mode and speed before the fit
        // check, then redraw the gap if the straight step cannot fit.
        let mut gap = 0i64;
        let mut done = false;
        for attempt in 0..32 {
            gap = gaps.draw(&mut rng);
            if t_rel + gap as f64 > schedule.total_duration() {
                done = true;
                break;
            }
            let mode_next = schedule.mode_at(t_rel + gap as f64);
            if mode_next != mode {
                mode = mode_next;
                speed = draw_speed(mode, &mut rng);
            }
            if speed * gap as f64 <= reach {
                break;
            }
            if attempt == 31 {
                // Shrink the gap so the step fits while the speed stays
                // inside its mode range.
                gap = ((reach / speed).floor() as i64).max(1);
            }
        }
        if done {
            break;
        }
        let t_next = t_rel + gap as f64;
        let step_len = speed * gap as f64;

        // Retarget when the current waypoint is nearer than this step;
        // reaching a waypoint starts a new road segment, which redraws the
        // speed unless the schedule pins it.
        if dist(world.road_nodes[waypoint], pos) < step_len {
            if !constant_speed {
                let [lo, hi] = speeds.range(mode);
                // Keep the step feasible: cap the redraw so it fits.
                let cap = (reach / gap as f64).min(hi).max(lo);
                speed = rng.random_range(lo..cap.max(lo + 1e-9));
            }
            let need = speed * gap as f64;
            waypoint = pick_waypoint(world, pos, waypoint, need, &mut rng);
        }
        let step_len = speed * gap as f64;
        let target = world.road_nodes[waypoint];
        let d = dist(target, pos).max(1e-9);
        let dir = [(target[0] - pos[0]) / d, (target[1] - pos[1]) / d];
        pos = [pos[0] + dir[0] * step_len, pos[1] + dir[1] * step_len];
        debug_assert!(world.contains(pos), "stepped outside the world: {pos:?}");

        t_rel = t_next;
        points.push(TrackPoint {
            timestamp: T0 + t_rel.round() as i64,
            position: world.to_geo(pos),
            mode,
        });
    }
    points
}

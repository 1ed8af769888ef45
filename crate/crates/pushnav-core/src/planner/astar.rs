//! Hybrid A* over forward motion primitives with grid-plus-heading
//! deduplication and footprint collision checks along every arc.

use super::{CoarsePath, PlannerConfig, PlannerError};
use crate::world::{footprint_collides, normalize_angle, GridMap, Pose2};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy)]
struct Node {
    f: f64,
    g: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.seq == other.seq
    }
}
impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, ties broken by insertion order for determinism.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Advances a pose along an arc of the given curvature and length.
fn propagate(pose: Pose2, curvature: f64, length: f64) -> Pose2 {
    if curvature.abs() < 1e-12 {
        Pose2::new(
            pose.x + length * pose.yaw.cos(),
            pose.y + length * pose.yaw.sin(),
            pose.yaw,
        )
    } else {
        let yaw1 = pose.yaw + curvature * length;
        Pose2::new(
            pose.x + (yaw1.sin() - pose.yaw.sin()) / curvature,
            pose.y - (yaw1.cos() - pose.yaw.cos()) / curvature,
            yaw1,
        )
    }
}

/// Collision check along one primitive: samples at no more than half a cell
/// of arc length, excluding the (already checked) arc start.
fn arc_collides(map: &GridMap, from: Pose2, curvature: f64, length: f64) -> bool {
    let steps = (length / (map.resolution / 2.0)).ceil().max(1.0) as usize;
    for k in 1..=steps {
        let s = length * k as f64 / steps as f64;
        if footprint_collides(map, propagate(from, curvature, s)) {
            return true;
        }
    }
    false
}

pub fn hybrid_astar(
    map: &GridMap,
    start: Pose2,
    goal: Pose2,
    config: &PlannerConfig,
) -> Result<CoarsePath, PlannerError> {
    if footprint_collides(map, start) {
        return Err(PlannerError::InvalidInput("start pose in collision".into()));
    }
    if footprint_collides(map, goal) {
        return Err(PlannerError::InvalidInput("goal pose in collision".into()));
    }

    let bins = config.heading_bins;
    let bin_of = |yaw: f64| -> usize {
        let b = ((yaw + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * bins as f64).floor()
            as usize;
        b % bins
    };
    let cell_of = |p: &Pose2| -> Option<usize> {
        let col = (p.x / map.resolution) as usize;
        let row = (p.y / map.resolution) as usize;
        if col >= map.width || row >= map.height {
            return None;
        }
        Some((row * map.width + col) * bins + bin_of(p.yaw))
    };

    let at_goal = |p: &Pose2| -> bool {
        p.distance(&goal) <= config.goal_tol_pos
            && normalize_angle(p.yaw - goal.yaw).abs() <= config.goal_tol_yaw
    };

    let heuristic = |p: &Pose2| -> f64 { p.distance(&goal) };

    // Arena of explored states with parent links.
    let mut states: Vec<(Pose2, Option<usize>, f64)> = vec![(start, None, 0.0)];
    let mut best_g = vec![f64::INFINITY; map.width * map.height * bins];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    if let Some(c) = cell_of(&start) {
        best_g[c] = 0.0;
    }
    heap.push(Node {
        f: heuristic(&start),
        g: 0.0,
        seq,
        idx: 0,
    });

    while let Some(node) = heap.pop() {
        let (pose, _, g) = states[node.idx];
        if g > node.g + 1e-12 {
            continue; // Stale queue entry.
        }
        if at_goal(&pose) {
            let mut path = vec![];
            let mut cur = Some(node.idx);
            while let Some(i) = cur {
                path.push(states[i].0);
                cur = states[i].1;
            }
            path.reverse();
            return Ok(CoarsePath { states: path });
        }
        for &kappa in &config.curvatures {
            let next = propagate(pose, kappa, config.arc_length);
            let Some(cell) = cell_of(&next) else { continue };
            let g_next = g + config.arc_length;
            if g_next >= best_g[cell] - 1e-9 {
                continue;
            }
            if arc_collides(map, pose, kappa, config.arc_length) {
                continue;
            }
            best_g[cell] = g_next;
            states.push((next, Some(node.idx), g_next));
            seq += 1;
            heap.push(Node {
                f: g_next + heuristic(&next),
                g: g_next,
                seq,
                idx: states.len() - 1,
            });
        }
    }
    Err(PlannerError::NoPath)
}

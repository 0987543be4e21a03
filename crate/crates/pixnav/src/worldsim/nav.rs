//! Discrete agent stepping and grid path oracles: Dijkstra distance fields
//! over the free-cell graph (8-connected, diagonal cost sqrt(2)) and a greedy
//! gradient follower that interpolates turn actions toward the next cell.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{angle_diff_deg, normalize_deg, ActionId, Pose, StepParams, World, WorldError};

pub fn step(world: &World, pose: &Pose, action: ActionId, params: &StepParams) -> Pose {
    let mut next = *pose;
    match action {
        ActionId::Stop => {}
        ActionId::MoveAhead => {
            let (hx, hy) = pose.heading();
            let nx = pose.x + params.move_m * hx;
            let ny = pose.y + params.move_m * hy;
            let mx = pose.x + 0.5 * params.move_m * hx;
            let my = pose.y + 0.5 * params.move_m * hy;
            if world.is_free_point(nx, ny) && world.is_free_point(mx, my) {
                next.x = nx;
                next.y = ny;
            }
        }
        ActionId::TurnLeft => next.yaw_deg = normalize_deg(pose.yaw_deg + params.turn_deg),
        ActionId::TurnRight => next.yaw_deg = normalize_deg(pose.yaw_deg - params.turn_deg),
        ActionId::LookUp => {
            next.pitch_deg = (pose.pitch_deg + params.look_deg).min(params.pitch_max_deg)
        }
        ActionId::LookDown => {
            next.pitch_deg = (pose.pitch_deg - params.look_deg).max(params.pitch_min_deg)
        }
    }
    next
}

const SQRT2: f64 = std::f64::consts::SQRT_2;
const NEIGHBORS: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
];

struct HeapEntry {
    dist: f64,
    idx: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.idx == other.idx
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap by distance, ties by index for determinism.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Shortest-path distances from one source cell to every free cell,
/// in cell units (multiply by `cell_size` for meters).
pub struct DistanceField {
    pub source: (usize, usize),
    width: usize,
    cell_size: f64,
    dist: Vec<f64>,
}

impl DistanceField {
    /// `corner_safe` forbids diagonal moves that would cut a wall corner;
    /// the plain metric allows them (both orthogonal steps stay free
    /// otherwise).
    pub fn compute(world: &World, source: (usize, usize), corner_safe: bool) -> DistanceField {
        let n = world.width * world.height;
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        let sidx = world.idx(source.0, source.1);
        dist[sidx] = 0.0;
        heap.push(HeapEntry { dist: 0.0, idx: sidx });
        while let Some(HeapEntry { dist: d, idx }) = heap.pop() {
            if d > dist[idx] {
                continue;
            }
            let (cx, cy) = (idx % world.width, idx / world.width);
            for &(dx, dy, cost) in &NEIGHBORS {
                let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                if !world.in_bounds(nx, ny) {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !world.is_free_cell(nx, ny) {
                    continue;
                }
                if corner_safe && dx != 0 && dy != 0 {
                    let ox = (cx as i64 + dx) as usize;
                    let oy = (cy as i64 + dy) as usize;
                    if !world.is_free_cell(ox, cy) || !world.is_free_cell(cx, oy) {
                        continue;
                    }
                }
                let nidx = world.idx(nx, ny);
                let nd = d + cost;
                if nd < dist[nidx] {
                    dist[nidx] = nd;
                    heap.push(HeapEntry { dist: nd, idx: nidx });
                }
            }
        }
        DistanceField { source, width: world.width, cell_size: world.cell_size, dist }
    }

    /// Distance in meters, None when unreachable.
    pub fn meters_at_cell(&self, cx: usize, cy: usize) -> Option<f64> {
        let d = self.dist[cy * self.width + cx];
        d.is_finite().then_some(d * self.cell_size)
    }

    pub fn cells_at(&self, cx: usize, cy: usize) -> f64 {
        self.dist[cy * self.width + cx]
    }
}

/// Shortest free-space path length between two points, in meters.
pub fn geodesic_distance(world: &World, a: (f64, f64), b: (f64, f64)) -> Result<f64, WorldError> {
    let ca = world
        .cell_of_point(a.0, a.1)
        .filter(|&(x, y)| world.is_free_cell(x, y))
        .ok_or(WorldError::PointInWall { x: a.0, y: a.1 })?;
    let cb = world
        .cell_of_point(b.0, b.1)
        .filter(|&(x, y)| world.is_free_cell(x, y))
        .ok_or(WorldError::PointInWall { x: b.0, y: b.1 })?;
    let field = DistanceField::compute(world, cb, false);
    field
        .meters_at_cell(ca.0, ca.1)
        .ok_or(WorldError::Unreachable)
}

#[derive(Debug, Clone, Copy)]
pub struct PathParams {
    pub step: StepParams,
    pub max_actions: usize,
}

impl Default for PathParams {
    fn default() -> Self {
        PathParams { step: StepParams::default(), max_actions: 512 }
    }
}

/// Expert action sequence from `pose` to within `stop_radius` geodesic of
/// `target`, ending with Stop. Greedy descent on the target distance field
/// with headings quantized to the turn increment.
pub fn shortest_path_actions(
    world: &World,
    pose: &Pose,
    target: (f64, f64),
    stop_radius: f64,
    params: &PathParams,
) -> Result<Vec<ActionId>, WorldError> {
    let field = expert_field(world, target)?;
    let mut cur = *pose;
    let mut actions = Vec::new();
    loop {
        if actions.len() >= params.max_actions {
            return Err(WorldError::PathFollowFailed(params.max_actions));
        }
        let action = next_expert_action(world, &field, &cur, stop_radius, &params.step)?;
        actions.push(action);
        if action == ActionId::Stop {
            return Ok(actions);
        }
        cur = step(world, &cur, action, &params.step);
    }
}

/// Corner-safe distance field rooted at the cell containing `target`.
pub fn expert_field(world: &World, target: (f64, f64)) -> Result<DistanceField, WorldError> {
    let ct = world
        .cell_of_point(target.0, target.1)
        .filter(|&(x, y)| world.is_free_cell(x, y))
        .ok_or(WorldError::PointInWall { x: target.0, y: target.1 })?;
    Ok(DistanceField::compute(world, ct, true))
}

/// One step of the greedy expert: Stop inside the radius, otherwise move
/// along or turn toward the descending neighbor of the current cell.
pub fn next_expert_action(
    world: &World,
    field: &DistanceField,
    pose: &Pose,
    stop_radius: f64,
    step_params: &StepParams,
) -> Result<ActionId, WorldError> {
    let (cx, cy) = world
        .cell_of_point(pose.x, pose.y)
        .filter(|&(x, y)| world.is_free_cell(x, y))
        .ok_or(WorldError::PointInWall { x: pose.x, y: pose.y })?;
    let geo = field
        .meters_at_cell(cx, cy)
        .ok_or(WorldError::Unreachable)?;
    if geo <= stop_radius {
        return Ok(ActionId::Stop);
    }
    // Neighbors ordered by descent score; first one that is actually
    // approachable under the quantized heading wins.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(8);
    for &(dx, dy, cost) in &NEIGHBORS {
        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
        if !world.in_bounds(nx, ny) {
            continue;
        }
        let (nx, ny) = (nx as usize, ny as usize);
        if !world.is_free_cell(nx, ny) {
            continue;
        }
        if dx != 0 && dy != 0 {
            let ox = (cx as i64 + dx) as usize;
            let oy = (cy as i64 + dy) as usize;
            if !world.is_free_cell(ox, cy) || !world.is_free_cell(cx, oy) {
                continue;
            }
        }
        let d = field.cells_at(nx, ny);
        if d.is_finite() {
            candidates.push((d + cost, nx, ny));
        }
    }
    if candidates.is_empty() {
        return Err(WorldError::Unreachable);
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half_turn = step_params.turn_deg / 2.0 + 1e-9;
    for &(_, nx, ny) in &candidates {
        let (tx, ty) = world.cell_center(nx, ny);
        let bearing = (ty - pose.y).atan2(tx - pose.x).to_degrees();
        let delta = angle_diff_deg(bearing, pose.yaw_deg);
        if delta.abs() <= half_turn {
            let moved = step(world, pose, ActionId::MoveAhead, step_params);
            if moved.x != pose.x || moved.y != pose.y {
                return Ok(ActionId::MoveAhead);
            }
            // Aligned but blocked by corner quantization: try the next
            // neighbor instead of oscillating in place.
            continue;
        }
        return Ok(if delta > 0.0 { ActionId::TurnLeft } else { ActionId::TurnRight });
    }
    // Every descending neighbor is aligned-but-blocked; rotate to re-approach.
    Ok(ActionId::TurnLeft)
}

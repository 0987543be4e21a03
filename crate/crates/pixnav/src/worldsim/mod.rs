//! Procedurally generated indoor environments with a software raycaster,
//! discrete agent embodiment, and grid-based path oracles.
//!
//! Worlds are 2.5-D: a cell grid of walls/free space, per-cell room labels,
//! and axis-aligned furniture boxes. Rendering produces RGB plus privileged
//! depth and per-pixel instance ids; the privileged channels feed oracles and
//! mock perception, never the policy.

mod gen;
mod io;
mod nav;
mod project;
mod render;
#[cfg(test)]
mod tests;

pub use gen::{generate_world, WorldSpec};
pub use io::{draw_path, topdown_image, world_from_json, world_to_json};
pub use nav::{
    expert_field, geodesic_distance, next_expert_action, shortest_path_actions, step,
    DistanceField, PathParams,
};
pub use project::{pixel_to_point, project_point, CameraBasis, PointResolution};
pub use render::render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Semantic id of pixels that hit nothing (never produced indoors).
pub const SEMANTIC_NONE: u32 = 0;
pub const SEMANTIC_FLOOR: u32 = 1;
pub const SEMANTIC_WALL: u32 = 2;
pub const SEMANTIC_CEILING: u32 = 3;
/// Object instance ids start here; `World::objects[i].id == OBJECT_ID_BASE + i`.
pub const OBJECT_ID_BASE: u32 = 4;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("world generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: u32 },
    #[error("point ({x:.3}, {y:.3}) is not in free space")]
    PointInWall { x: f64, y: f64 },
    #[error("no free-space path between the given points")]
    Unreachable,
    #[error("pixel ({0}, {1}) out of image bounds")]
    PixelOutOfBounds(u32, u32),
    #[error("pixel ({0}, {1}) has no valid surface hit")]
    InvalidDepth(u32, u32),
    #[error("path follower exceeded {0} actions without reaching the target")]
    PathFollowFailed(usize),
    #[error("world invariant violated: {0}")]
    InvariantViolated(String),
    #[error("unsupported world document version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed world document: {0}")]
    MalformedDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Free,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    Bedroom,
    Bathroom,
    Kitchen,
    LivingRoom,
    Corridor,
}

impl RoomKind {
    pub const ALL: [RoomKind; 5] = [
        RoomKind::Bedroom,
        RoomKind::Bathroom,
        RoomKind::Kitchen,
        RoomKind::LivingRoom,
        RoomKind::Corridor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoomKind::Bedroom => "bedroom",
            RoomKind::Bathroom => "bathroom",
            RoomKind::Kitchen => "kitchen",
            RoomKind::LivingRoom => "living_room",
            RoomKind::Corridor => "corridor",
        }
    }

    pub fn parse(s: &str) -> Option<RoomKind> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for RoomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectCategory {
    Bed,
    Wardrobe,
    Nightstand,
    Toilet,
    Sink,
    Bathtub,
    Fridge,
    Stove,
    Counter,
    Sofa,
    TvStand,
    Table,
    Plant,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 13] = [
        ObjectCategory::Bed,
        ObjectCategory::Wardrobe,
        ObjectCategory::Nightstand,
        ObjectCategory::Toilet,
        ObjectCategory::Sink,
        ObjectCategory::Bathtub,
        ObjectCategory::Fridge,
        ObjectCategory::Stove,
        ObjectCategory::Counter,
        ObjectCategory::Sofa,
        ObjectCategory::TvStand,
        ObjectCategory::Table,
        ObjectCategory::Plant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectCategory::Bed => "bed",
            ObjectCategory::Wardrobe => "wardrobe",
            ObjectCategory::Nightstand => "nightstand",
            ObjectCategory::Toilet => "toilet",
            ObjectCategory::Sink => "sink",
            ObjectCategory::Bathtub => "bathtub",
            ObjectCategory::Fridge => "fridge",
            ObjectCategory::Stove => "stove",
            ObjectCategory::Counter => "counter",
            ObjectCategory::Sofa => "sofa",
            ObjectCategory::TvStand => "tv_stand",
            ObjectCategory::Table => "table",
            ObjectCategory::Plant => "plant",
        }
    }

    pub fn parse(s: &str) -> Option<ObjectCategory> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

impl std::fmt::Display for ObjectCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive cell-coordinate rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl GridRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u16,
    pub kind: RoomKind,
    pub bounds: GridRect,
}

/// Axis-aligned box in meters; z spans [min[2], max[2]] with the floor at z=0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn intersects_xy(&self, other: &Aabb, margin: f64) -> bool {
        self.min[0] - margin < other.max[0]
            && self.max[0] + margin > other.min[0]
            && self.min[1] - margin < other.max[1]
            && self.max[1] + margin > other.min[1]
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x < self.max[0] && y >= self.min[1] && y < self.max[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    /// Semantic instance id rendered into frames (`OBJECT_ID_BASE + index`).
    pub id: u32,
    pub category: ObjectCategory,
    pub room_id: u16,
    pub aabb: Aabb,
    pub texture_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub cell_size: f64,
    pub wall_height: f64,
    pub width: usize,
    pub height: usize,
    pub occupancy: Vec<CellKind>,
    /// Room-instance id per cell; 0 for wall cells.
    pub room_labels: Vec<u16>,
    pub rooms: Vec<Room>,
    pub objects: Vec<WorldObject>,
}

impl World {
    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> CellKind {
        self.occupancy[self.idx(x, y)]
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn is_free_cell(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.cell(x, y) == CellKind::Free
    }

    /// Cell containing a continuous point, or None when outside the grid.
    pub fn cell_of_point(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as usize;
        let cy = (y / self.cell_size).floor() as usize;
        if cx < self.width && cy < self.height {
            Some((cx, cy))
        } else {
            None
        }
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        (
            (cx as f64 + 0.5) * self.cell_size,
            (cy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.cell_of_point(x, y)
            .map(|(cx, cy)| self.cell(cx, cy) == CellKind::Free)
            .unwrap_or(false)
    }

    #[inline]
    pub fn room_label(&self, cx: usize, cy: usize) -> u16 {
        self.room_labels[self.idx(cx, cy)]
    }

    pub fn room(&self, id: u16) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn object_by_id(&self, id: u32) -> Option<&WorldObject> {
        let idx = id.checked_sub(OBJECT_ID_BASE)? as usize;
        self.objects.get(idx)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == CellKind::Free)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Free cells whose center is not covered by any object footprint;
    /// used for agent spawn sampling.
    pub fn spawnable_cells(&self) -> Vec<(usize, usize)> {
        self.free_cells()
            .filter(|&(cx, cy)| {
                let (x, y) = self.cell_center(cx, cy);
                !self.objects.iter().any(|o| o.aabb.contains_xy(x, y))
            })
            .collect()
    }

    pub fn world_width_m(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    pub fn world_height_m(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    /// Checks the structural invariants: walled boundary, labeled free cells,
    /// connected free space, and objects inside their declared rooms.
    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |msg: String| Err(WorldError::InvariantViolated(msg));
        if self.occupancy.len() != self.width * self.height
            || self.room_labels.len() != self.occupancy.len()
        {
            return fail("grid buffer sizes do not match dimensions".into());
        }
        for x in 0..self.width {
            if self.cell(x, 0) != CellKind::Wall || self.cell(x, self.height - 1) != CellKind::Wall
            {
                return fail(format!("boundary cell in column {x} is not a wall"));
            }
        }
        for y in 0..self.height {
            if self.cell(0, y) != CellKind::Wall || self.cell(self.width - 1, y) != CellKind::Wall {
                return fail(format!("boundary cell in row {y} is not a wall"));
            }
        }
        for (cx, cy) in self.free_cells() {
            let label = self.room_label(cx, cy);
            if label == 0 {
                return fail(format!("free cell ({cx}, {cy}) has no room label"));
            }
            if self.room(label).is_none() {
                return fail(format!("cell ({cx}, {cy}) labeled with unknown room {label}"));
            }
        }
        // Free-cell graph connectivity (4-neighborhood is enough for this check).
        let free: Vec<(usize, usize)> = self.free_cells().collect();
        if let Some(&start) = free.first() {
            let mut seen = vec![false; self.occupancy.len()];
            let mut queue = std::collections::VecDeque::new();
            seen[self.idx(start.0, start.1)] = true;
            queue.push_back(start);
            let mut count = 1usize;
            while let Some((cx, cy)) = queue.pop_front() {
                for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if self.in_bounds(nx, ny) {
                        let (nx, ny) = (nx as usize, ny as usize);
                        if self.cell(nx, ny) == CellKind::Free && !seen[self.idx(nx, ny)] {
                            seen[self.idx(nx, ny)] = true;
                            count += 1;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            if count != free.len() {
                return fail(format!(
                    "free-cell graph disconnected: reached {count} of {} cells",
                    free.len()
                ));
            }
        }
        for obj in &self.objects {
            let room = self
                .room(obj.room_id)
                .ok_or_else(|| WorldError::InvariantViolated(format!(
                    "object {} declares unknown room {}",
                    obj.id, obj.room_id
                )))?;
            let c = obj.aabb.center();
            let (cx, cy) = self
                .cell_of_point(c[0], c[1])
                .ok_or_else(|| WorldError::InvariantViolated(format!(
                    "object {} center outside the grid",
                    obj.id
                )))?;
            if !room.bounds.contains(cx, cy) {
                return fail(format!(
                    "object {} center not inside bounds of room {}",
                    obj.id, obj.room_id
                ));
            }
            if obj.id != OBJECT_ID_BASE + (obj.id - OBJECT_ID_BASE) {
                return fail("object id below OBJECT_ID_BASE".into());
            }
        }
        Ok(())
    }

    /// Builds a single-room world from ASCII art ('#' wall, '.' free).
    /// All free cells belong to one living room; intended for tests.
    pub fn from_ascii(rows: &[&str], cell_size: f64) -> World {
        let height = rows.len();
        let width = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == width), "ragged ascii map");
        let mut occupancy = Vec::with_capacity(width * height);
        let mut room_labels = Vec::with_capacity(width * height);
        // Row 0 of the art is the top of the map (max y); flip so y grows north.
        for row in rows.iter().rev() {
            for ch in row.chars() {
                match ch {
                    '#' => {
                        occupancy.push(CellKind::Wall);
                        room_labels.push(0);
                    }
                    '.' => {
                        occupancy.push(CellKind::Free);
                        room_labels.push(1);
                    }
                    other => panic!("unexpected map char {other:?}"),
                }
            }
        }
        World {
            seed: 0,
            cell_size,
            wall_height: 2.5,
            width,
            height,
            occupancy,
            room_labels,
            rooms: vec![Room {
                id: 1,
                kind: RoomKind::LivingRoom,
                bounds: GridRect { x0: 1, y0: 1, x1: width - 2, y1: height - 2 },
            }],
            objects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in degrees, 0 = +x, counter-clockwise, normalized to [0, 360).
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    /// Camera eye height in meters.
    pub height: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw_deg: f64, camera: &Camera) -> Pose {
        Pose {
            x,
            y,
            yaw_deg: normalize_deg(yaw_deg),
            pitch_deg: 0.0,
            height: camera.height_m,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn heading(&self) -> (f64, f64) {
        let r = self.yaw_deg.to_radians();
        (r.cos(), r.sin())
    }
}

pub fn normalize_deg(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d < 0.0 {
        d += 360.0;
    }
    d
}

/// Smallest signed angular difference `a - b`, in (-180, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height_px: u32,
    pub hfov_deg: f64,
    pub height_m: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera { width: 160, height_px: 120, hfov_deg: 79.0, height_m: 0.88 }
    }
}

impl Camera {
    pub fn with_variation(height_m: f64, hfov_deg: f64) -> Camera {
        Camera { height_m, hfov_deg, ..Camera::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height_px: u32,
    pub rgb: Vec<u8>,
    /// Euclidean ray-hit distance per pixel (privileged).
    pub depth: Vec<f32>,
    /// Per-pixel instance id (privileged); see SEMANTIC_* constants.
    pub semantic: Vec<u32>,
    pub pose: Pose,
    pub camera: Camera,
}

impl Frame {
    #[inline]
    pub fn pix(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    pub fn rgb_at(&self, u: u32, v: u32) -> [u8; 3] {
        let i = self.pix(u, v) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f32 {
        self.depth[self.pix(u, v)]
    }

    pub fn semantic_at(&self, u: u32, v: u32) -> u32 {
        self.semantic[self.pix(u, v)]
    }

    pub fn in_bounds(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height_px
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        crate::util::rgb_to_png(self.width, self.height_px, &self.rgb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ActionId {
    Stop = 0,
    MoveAhead = 1,
    TurnLeft = 2,
    TurnRight = 3,
    LookUp = 4,
    LookDown = 5,
}

impl ActionId {
    pub const ALL: [ActionId; 6] = [
        ActionId::Stop,
        ActionId::MoveAhead,
        ActionId::TurnLeft,
        ActionId::TurnRight,
        ActionId::LookUp,
        ActionId::LookDown,
    ];
    pub const COUNT: usize = 6;

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionId> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionId::Stop => "stop",
            ActionId::MoveAhead => "move_ahead",
            ActionId::TurnLeft => "turn_left",
            ActionId::TurnRight => "turn_right",
            ActionId::LookUp => "look_up",
            ActionId::LookDown => "look_down",
        }
    }
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepParams {
    pub move_m: f64,
    pub turn_deg: f64,
    pub look_deg: f64,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            move_m: 0.25,
            turn_deg: 30.0,
            look_deg: 30.0,
            pitch_min_deg: -30.0,
            pitch_max_deg: 30.0,
        }
    }
}

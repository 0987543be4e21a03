//! Procedural floorplan generation: a central corridor with rooms docked on
//! both sides, doorways into the corridor, and furniture placed per room type.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Aabb, CellKind, GridRect, ObjectCategory, Room, RoomKind, World, WorldError, WorldObject,
    OBJECT_ID_BASE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// World extent bounds along x, in meters (min, max).
    pub width_m: (f64, f64),
    /// World extent bounds along y, in meters (min, max).
    pub depth_m: (f64, f64),
    /// Requested number of rooms excluding the connecting corridor.
    pub rooms: (usize, usize),
    pub objects_per_room: (usize, usize),
    pub cell_size: f64,
    pub wall_height: f64,
    pub max_retries: u32,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            width_m: (9.0, 12.0),
            depth_m: (7.0, 10.0),
            rooms: (3, 5),
            objects_per_room: (2, 3),
            cell_size: 0.25,
            wall_height: 2.5,
            max_retries: 32,
        }
    }
}

impl WorldSpec {
    fn validate(&self) -> Result<(), WorldError> {
        let err = |msg: &str| Err(WorldError::InvalidSpec(msg.to_string()));
        if self.cell_size <= 0.0 || self.wall_height <= 0.0 {
            return err("cell size and wall height must be positive");
        }
        if self.width_m.0 <= 0.0 || self.depth_m.0 <= 0.0 {
            return err("world extent bounds must be positive");
        }
        if self.width_m.1 < self.width_m.0 || self.depth_m.1 < self.depth_m.0 {
            return err("extent bounds must satisfy min <= max");
        }
        if self.rooms.0 < 2 {
            return err("at least 2 rooms must be requested");
        }
        if self.rooms.1 < self.rooms.0 {
            return err("room bounds must satisfy min <= max");
        }
        Ok(())
    }
}

/// Minimum room span along the corridor, in cells.
const MIN_ROOM_W: usize = 9;
/// Minimum room depth away from the corridor, in cells.
const MIN_ROOM_D: usize = 9;
const CORRIDOR_ROOM_ID: u16 = 1;

pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..spec.max_retries {
        if let Some(world) = try_generate(seed, spec, &mut rng) {
            if world.validate().is_ok() {
                return Ok(world);
            }
        }
    }
    Err(WorldError::GenerationFailed { seed, attempts: spec.max_retries })
}

fn try_generate(seed: u64, spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Option<World> {
    let cells = |m: f64| (m / spec.cell_size).round() as usize;
    let width = rng.random_range(cells(spec.width_m.0)..=cells(spec.width_m.1));
    let height = rng.random_range(cells(spec.depth_m.0)..=cells(spec.depth_m.1));
    if width < 2 * MIN_ROOM_W || height < 2 * MIN_ROOM_D + 5 {
        return None;
    }

    let corridor_h = rng.random_range(2..=3usize);
    // Corridor rows cy0..cy0+corridor_h-1 with wall rows on both sides; keep
    // at least MIN_ROOM_D rows of room space in each strip.
    let cy_min = MIN_ROOM_D + 2;
    let cy_max = height - 2 - corridor_h - MIN_ROOM_D;
    if cy_min > cy_max {
        return None;
    }
    let cy0 = rng.random_range(cy_min..=cy_max);

    let cap = (width - 1) / (MIN_ROOM_W + 1);
    let max_rooms = (2 * cap).min(spec.rooms.1);
    if max_rooms < spec.rooms.0 {
        return None;
    }
    let n_rooms = rng.random_range(spec.rooms.0..=max_rooms);
    let n_top = n_rooms.div_ceil(2).min(cap);
    let n_bot = n_rooms - n_top;
    if n_bot > cap {
        return None;
    }

    let mut occupancy = vec![CellKind::Wall; width * height];
    let mut room_labels = vec![0u16; width * height];
    let carve = |rect: GridRect, label: u16, occ: &mut Vec<CellKind>, lab: &mut Vec<u16>| {
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                occ[y * width + x] = CellKind::Free;
                lab[y * width + x] = label;
            }
        }
    };

    let corridor_rect = GridRect { x0: 1, y0: cy0, x1: width - 2, y1: cy0 + corridor_h - 1 };
    carve(corridor_rect, CORRIDOR_ROOM_ID, &mut occupancy, &mut room_labels);

    let mut rooms = vec![Room { id: CORRIDOR_ROOM_ID, kind: RoomKind::Corridor, bounds: corridor_rect }];

    let kinds = assign_room_kinds(n_rooms, rng);
    let mut kind_iter = kinds.into_iter();
    let mut next_id: u16 = CORRIDOR_ROOM_ID + 1;
    let mut door_rects: Vec<GridRect> = Vec::new();

    for (strip_rows, k, door_row, door_inward) in [
        ((1usize, cy0 - 2), n_top, cy0 - 1, -1i64),
        ((cy0 + corridor_h + 1, height - 2), n_bot, cy0 + corridor_h, 1i64),
    ] {
        if k == 0 {
            continue;
        }
        let spans = split_span(1, width - 2, k, rng)?;
        for (x0, x1) in spans {
            let bounds = GridRect { x0, y0: strip_rows.0, x1, y1: strip_rows.1 };
            let id = next_id;
            next_id += 1;
            carve(bounds, id, &mut occupancy, &mut room_labels);
            rooms.push(Room { id, kind: kind_iter.next()?, bounds });
            // Doorway through the wall row between the room and the corridor.
            let door_w = rng.random_range(2..=3usize).min(bounds.width() - 2);
            let dx0 = rng.random_range(bounds.x0 + 1..=bounds.x1 - door_w);
            let door = GridRect { x0: dx0, y0: door_row, x1: dx0 + door_w - 1, y1: door_row };
            carve(door, id, &mut occupancy, &mut room_labels);
            // Clearance zone just inside the room so furniture never fronts a door.
            let clear_y = door_row as i64 + door_inward * 3;
            let (cy_a, cy_b) = if door_inward < 0 {
                (clear_y.max(bounds.y0 as i64) as usize, door_row - 1)
            } else {
                (door_row + 1, clear_y.min(bounds.y1 as i64) as usize)
            };
            door_rects.push(GridRect { x0: dx0.saturating_sub(1), y0: cy_a, x1: dx0 + door_w, y1: cy_b });
        }
    }

    let mut world = World {
        seed,
        cell_size: spec.cell_size,
        wall_height: spec.wall_height,
        width,
        height,
        occupancy,
        room_labels,
        rooms,
        objects: Vec::new(),
    };
    place_objects(&mut world, spec, &door_rects, rng);
    Some(world)
}

/// Splits [x0, x1] into k room spans separated by single-cell wall columns.
fn split_span(x0: usize, x1: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let total = x1 - x0 + 1;
    let needed = k * MIN_ROOM_W + (k - 1);
    if total < needed {
        return None;
    }
    let mut extras = total - needed;
    let mut widths = vec![MIN_ROOM_W; k];
    while extras > 0 {
        let i = rng.random_range(0..k);
        widths[i] += 1;
        extras -= 1;
    }
    let mut spans = Vec::with_capacity(k);
    let mut x = x0;
    for w in widths {
        spans.push((x, x + w - 1));
        x += w + 1;
    }
    Some(spans)
}

fn assign_room_kinds(n: usize, rng: &mut ChaCha8Rng) -> Vec<RoomKind> {
    // Cycle guarantees a bedroom from n>=2 and a bathroom from n>=3.
    const PATTERN: [RoomKind; 8] = [
        RoomKind::LivingRoom,
        RoomKind::Bedroom,
        RoomKind::Bathroom,
        RoomKind::Kitchen,
        RoomKind::Bedroom,
        RoomKind::LivingRoom,
        RoomKind::Bedroom,
        RoomKind::Bathroom,
    ];
    let mut kinds: Vec<RoomKind> = PATTERN.iter().copied().cycle().take(n).collect();
    // Fisher-Yates with the world rng.
    for i in (1..kinds.len()).rev() {
        let j = rng.random_range(0..=i);
        kinds.swap(i, j);
    }
    kinds
}

/// (category, along-wall length, depth from wall, height, free-standing)
type FurnitureItem = (ObjectCategory, f64, f64, f64, bool);

fn furniture_for(kind: RoomKind) -> &'static [FurnitureItem] {
    match kind {
        RoomKind::Bedroom => &[
            (ObjectCategory::Bed, 2.0, 1.5, 0.55, false),
            (ObjectCategory::Wardrobe, 1.2, 0.6, 1.8, false),
            (ObjectCategory::Nightstand, 0.45, 0.45, 0.55, false),
        ],
        RoomKind::Bathroom => &[
            (ObjectCategory::Toilet, 0.6, 0.42, 0.45, false),
            (ObjectCategory::Sink, 0.55, 0.45, 0.85, false),
            (ObjectCategory::Bathtub, 1.6, 0.7, 0.55, false),
        ],
        RoomKind::Kitchen => &[
            (ObjectCategory::Fridge, 0.65, 0.65, 1.7, false),
            (ObjectCategory::Stove, 0.6, 0.6, 0.9, false),
            (ObjectCategory::Counter, 1.4, 0.6, 0.9, false),
        ],
        RoomKind::LivingRoom => &[
            (ObjectCategory::Sofa, 1.8, 0.85, 0.75, false),
            (ObjectCategory::TvStand, 1.2, 0.45, 0.5, false),
            (ObjectCategory::Table, 0.9, 0.9, 0.72, true),
            (ObjectCategory::Plant, 0.4, 0.4, 1.1, true),
        ],
        RoomKind::Corridor => &[],
    }
}

fn place_objects(world: &mut World, spec: &WorldSpec, door_rects: &[GridRect], rng: &mut ChaCha8Rng) {
    let cs = world.cell_size;
    let gap = 0.06;
    let rooms = world.rooms.clone();
    for room in rooms.iter().filter(|r| r.kind != RoomKind::Corridor) {
        let items = furniture_for(room.kind);
        if items.is_empty() {
            continue;
        }
        let count = rng
            .random_range(spec.objects_per_room.0..=spec.objects_per_room.1)
            .clamp(1, items.len());
        // Room interior in meters, shrunk by the placement gap.
        let rx0 = room.bounds.x0 as f64 * cs + gap;
        let ry0 = room.bounds.y0 as f64 * cs + gap;
        let rx1 = (room.bounds.x1 + 1) as f64 * cs - gap;
        let ry1 = (room.bounds.y1 + 1) as f64 * cs - gap;
        for &(category, len, depth, h, free_standing) in items.iter().take(count) {
            let mut placed = None;
            for _ in 0..12 {
                let aabb = if free_standing {
                    // Anywhere in the interior, away from walls.
                    let (w, d) = (len, depth);
                    if rx1 - rx0 < w + 0.5 || ry1 - ry0 < d + 0.5 {
                        break;
                    }
                    let x = rx0 + 0.25 + rng.random_range(0.0..(rx1 - rx0 - w - 0.5));
                    let y = ry0 + 0.25 + rng.random_range(0.0..(ry1 - ry0 - d - 0.5));
                    Aabb { min: [x, y, 0.0], max: [x + w, y + d, h] }
                } else {
                    // Flush against one of the four walls, long side parallel.
                    let side = rng.random_range(0..4u8);
                    let (w, d) = if side < 2 { (len, depth) } else { (depth, len) };
                    if rx1 - rx0 < w || ry1 - ry0 < d {
                        continue;
                    }
                    let x = rng.random_range(rx0..=(rx1 - w));
                    let y = rng.random_range(ry0..=(ry1 - d));
                    let (x, y) = match side {
                        0 => (x, ry1 - d), // north wall
                        1 => (x, ry0),     // south wall
                        2 => (rx1 - w, y), // east wall
                        _ => (rx0, y),     // west wall
                    };
                    Aabb { min: [x, y, 0.0], max: [x + w, y + d, h] }
                };
                let overlaps = world
                    .objects
                    .iter()
                    .any(|o| o.aabb.intersects_xy(&aabb, 0.08));
                let blocks_door = door_rects.iter().any(|dr| {
                    let drb = Aabb {
                        min: [dr.x0 as f64 * cs, dr.y0 as f64 * cs, 0.0],
                        max: [(dr.x1 + 1) as f64 * cs, (dr.y1 + 1) as f64 * cs, 1.0],
                    };
                    drb.intersects_xy(&aabb, 0.0)
                });
                if !overlaps && !blocks_door {
                    placed = Some(aabb);
                    break;
                }
            }
            if let Some(aabb) = placed {
                let idx = world.objects.len() as u32;
                world.objects.push(WorldObject {
                    id: OBJECT_ID_BASE + idx,
                    category,
                    room_id: room.id,
                    aabb,
                    texture_id: idx,
                });
            }
        }
    }
}

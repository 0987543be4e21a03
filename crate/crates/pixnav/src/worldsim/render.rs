//! Flat-shaded software raycaster. Per pixel: grid DDA against wall cells,
//! plane tests against floor/ceiling, and slab tests against object boxes.
//! Surfaces get a per-face brightness and a positional texture hash so the
//! policy sees parallax cues; no lighting model.

use super::project::CameraBasis;
use super::{
    Camera, CellKind, Frame, Pose, RoomKind, World, SEMANTIC_CEILING, SEMANTIC_FLOOR,
    SEMANTIC_NONE, SEMANTIC_WALL,
};

#[derive(Debug, Clone, Copy)]
pub(super) struct RayHit {
    pub t: f64,
    pub semantic: u32,
    pub rgb: [u8; 3],
}

const WALL_PALETTE: [[u8; 3]; 8] = [
    [208, 202, 192],
    [196, 180, 158],
    [178, 196, 200],
    [204, 188, 204],
    [186, 200, 174],
    [200, 186, 166],
    [174, 186, 206],
    [206, 196, 176],
];

const CEILING_RGB: [u8; 3] = [233, 233, 230];

fn floor_rgb(kind: Option<RoomKind>) -> [u8; 3] {
    match kind {
        Some(RoomKind::Corridor) => [205, 198, 184],
        Some(RoomKind::Bedroom) => [183, 158, 128],
        Some(RoomKind::Bathroom) => [198, 210, 214],
        Some(RoomKind::Kitchen) => [211, 199, 168],
        Some(RoomKind::LivingRoom) => [168, 148, 118],
        None => [150, 150, 150],
    }
}

pub(super) fn category_rgb(category: super::ObjectCategory) -> [u8; 3] {
    use super::ObjectCategory::*;
    match category {
        Bed => [66, 103, 210],
        Wardrobe => [139, 90, 43],
        Nightstand => [154, 123, 79],
        Toilet => [240, 240, 245],
        Sink => [160, 190, 210],
        Bathtub => [205, 225, 235],
        Fridge => [190, 200, 205],
        Stove => [60, 60, 65],
        Counter => [170, 140, 95],
        Sofa => [190, 70, 70],
        TvStand => [45, 45, 50],
        Table => [160, 118, 60],
        Plant => [58, 138, 58],
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn hash01(a: u64, b: u64, c: u64) -> f64 {
    let h = splitmix(a ^ splitmix(b ^ splitmix(c)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn shade(base: [u8; 3], factor: f64) -> [u8; 3] {
    [
        (base[0] as f64 * factor).clamp(0.0, 255.0) as u8,
        (base[1] as f64 * factor).clamp(0.0, 255.0) as u8,
        (base[2] as f64 * factor).clamp(0.0, 255.0) as u8,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Face {
    XNeg,
    XPos,
    YNeg,
    YPos,
    Top,
    Bottom,
}

fn face_brightness(face: Face) -> f64 {
    match face {
        Face::XPos => 0.92,
        Face::XNeg => 0.80,
        Face::YPos => 1.00,
        Face::YNeg => 0.72,
        Face::Top => 0.98,
        Face::Bottom => 0.60,
    }
}

pub(super) fn cast_ray(world: &World, origin: [f64; 3], dir: [f64; 3]) -> RayHit {
    let cs = world.cell_size;

    let t_floor = if dir[2] < -1e-12 { -origin[2] / dir[2] } else { f64::INFINITY };
    let t_ceil = if dir[2] > 1e-12 {
        (world.wall_height - origin[2]) / dir[2]
    } else {
        f64::INFINITY
    };

    // Nearest object hit.
    let mut t_obj = f64::INFINITY;
    let mut obj_hit: Option<(usize, Face)> = None;
    for (i, obj) in world.objects.iter().enumerate() {
        if let Some((t, face)) = aabb_entry(&obj.aabb, origin, dir) {
            if t < t_obj {
                t_obj = t;
                obj_hit = Some((i, face));
            }
        }
    }

    let t_limit = t_floor.min(t_ceil).min(t_obj);

    // Grid DDA for walls, parameterized by the same 3-D ray parameter t.
    let mut wall: Option<(f64, usize, usize, Face, u16)> = None;
    if let Some((mut cx, mut cy)) = world.cell_of_point(origin[0], origin[1]) {
        let (dx, dy) = (dir[0], dir[1]);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let mut t_max_x = if dx.abs() > 1e-12 {
            let edge = if dx > 0.0 { (cx as f64 + 1.0) * cs } else { cx as f64 * cs };
            (edge - origin[0]) / dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy.abs() > 1e-12 {
            let edge = if dy > 0.0 { (cy as f64 + 1.0) * cs } else { cy as f64 * cs };
            (edge - origin[1]) / dy
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dx.abs() > 1e-12 { cs / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy.abs() > 1e-12 { cs / dy.abs() } else { f64::INFINITY };
        let mut last_label = world.room_label(cx, cy);
        let max_steps = world.width + world.height + 4;
        for _ in 0..max_steps {
            let (t_cross, into_x) = if t_max_x <= t_max_y {
                (t_max_x, true)
            } else {
                (t_max_y, false)
            };
            if t_cross > t_limit {
                break;
            }
            if into_x {
                let nx = cx as i64 + step_x;
                if nx < 0 || nx as usize >= world.width {
                    break;
                }
                cx = nx as usize;
                t_max_x += t_delta_x;
            } else {
                let ny = cy as i64 + step_y;
                if ny < 0 || ny as usize >= world.height {
                    break;
                }
                cy = ny as usize;
                t_max_y += t_delta_y;
            }
            if world.cell(cx, cy) == CellKind::Wall {
                let face = if into_x {
                    if step_x > 0 { Face::XNeg } else { Face::XPos }
                } else if step_y > 0 {
                    Face::YNeg
                } else {
                    Face::YPos
                };
                wall = Some((t_cross, cx, cy, face, last_label));
                break;
            }
            last_label = world.room_label(cx, cy);
        }
    }

    if let Some((t, cx, cy, face, label)) = wall {
        if t <= t_limit {
            let base = WALL_PALETTE[(label as usize) % WALL_PALETTE.len()];
            let z = origin[2] + t * dir[2];
            let band = (z / 0.625).floor() as i64 as u64;
            let tex = 0.88 + 0.24 * hash01(cx as u64, cy as u64, band ^ (face as u64) << 8);
            return RayHit {
                t,
                semantic: SEMANTIC_WALL,
                rgb: shade(base, face_brightness(face) * tex),
            };
        }
    }

    // No wall before the limit: the nearest of object / floor / ceiling wins.
    if t_obj <= t_floor && t_obj <= t_ceil {
        if let Some((i, face)) = obj_hit {
            let obj = &world.objects[i];
            let p = [origin[0] + t_obj * dir[0], origin[1] + t_obj * dir[1], origin[2] + t_obj * dir[2]];
            let lu = ((p[0] - obj.aabb.min[0]) / 0.2).floor() as i64 as u64;
            let lv = ((p[1] - obj.aabb.min[1]) / 0.2).floor() as i64 as u64;
            let lw = ((p[2] - obj.aabb.min[2]) / 0.2).floor() as i64 as u64;
            let tex = 0.9 + 0.2 * hash01(obj.texture_id as u64 ^ (face as u64) << 16, lu ^ lw << 8, lv);
            return RayHit {
                t: t_obj,
                semantic: obj.id,
                rgb: shade(category_rgb(obj.category), face_brightness(face) * tex),
            };
        }
    }
    if t_floor <= t_ceil && t_floor.is_finite() {
        let x = origin[0] + t_floor * dir[0];
        let y = origin[1] + t_floor * dir[1];
        let (kind, cxy) = match world.cell_of_point(x, y) {
            Some((cx, cy)) => {
                let label = world.room_label(cx, cy);
                (world.room(label).map(|r| r.kind), (cx as u64, cy as u64))
            }
            None => (None, (0, 0)),
        };
        let checker = if (cxy.0 + cxy.1) % 2 == 0 { 1.0 } else { 0.94 };
        let tex = 0.92 + 0.16 * hash01(cxy.0, cxy.1, 0xF100);
        return RayHit {
            t: t_floor,
            semantic: SEMANTIC_FLOOR,
            rgb: shade(floor_rgb(kind), checker * tex),
        };
    }
    if t_ceil.is_finite() {
        let x = origin[0] + t_ceil * dir[0];
        let y = origin[1] + t_ceil * dir[1];
        let (cu, cv) = match world.cell_of_point(x, y) {
            Some((cx, cy)) => (cx as u64, cy as u64),
            None => (0, 0),
        };
        let tex = 0.96 + 0.08 * hash01(cu, cv, 0xCE11);
        return RayHit { t: t_ceil, semantic: SEMANTIC_CEILING, rgb: shade(CEILING_RGB, tex) };
    }
    // Unreachable indoors: boundary walls terminate every ray.
    RayHit { t: 1e9, semantic: SEMANTIC_NONE, rgb: [0, 0, 0] }
}

/// Entry parameter and face of a ray into an AABB; None when the box is
/// missed or the origin is inside it (interiors render as see-through).
fn aabb_entry(aabb: &super::Aabb, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, Face)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut face = Face::Top;
    for axis in 0..3 {
        let d = dir[axis];
        let (lo, hi) = (aabb.min[axis], aabb.max[axis]);
        if d.abs() < 1e-12 {
            if origin[axis] < lo || origin[axis] > hi {
                return None;
            }
            continue;
        }
        let mut t0 = (lo - origin[axis]) / d;
        let mut t1 = (hi - origin[axis]) / d;
        let entering_lo = t0 < t1;
        if !entering_lo {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            face = match (axis, entering_lo) {
                (0, true) => Face::XNeg,
                (0, false) => Face::XPos,
                (1, true) => Face::YNeg,
                (1, false) => Face::YPos,
                (2, true) => Face::Bottom,
                _ => Face::Top,
            };
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near > 1e-9 {
        Some((t_near, face))
    } else {
        None
    }
}

pub fn render(world: &World, pose: &Pose, camera: &Camera) -> Frame {
    let basis = CameraBasis::new(pose, camera);
    let (w, h) = (camera.width, camera.height_px);
    let n = (w * h) as usize;
    let mut rgb = vec![0u8; n * 3];
    let mut depth = vec![0f32; n];
    let mut semantic = vec![0u32; n];
    for v in 0..h {
        for u in 0..w {
            let dir = basis.pixel_ray(u as f64, v as f64);
            let hit = cast_ray(world, basis.eye, dir);
            let i = (v * w + u) as usize;
            rgb[i * 3] = hit.rgb[0];
            rgb[i * 3 + 1] = hit.rgb[1];
            rgb[i * 3 + 2] = hit.rgb[2];
            depth[i] = hit.t as f32;
            semantic[i] = hit.semantic;
        }
    }
    Frame { width: w, height_px: h, rgb, depth, semantic, pose: *pose, camera: *camera }
}

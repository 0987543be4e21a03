//! Versioned JSON world documents (grids run-length-encoded) and top-down
//! debug rendering.

use serde::{Deserialize, Serialize};

use super::{CellKind, Room, World, WorldError, WorldObject};

pub const WORLD_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WorldDoc {
    version: u32,
    seed: u64,
    cell_size: f64,
    wall_height: f64,
    width: usize,
    height: usize,
    occupancy_rle: Vec<(u32, u8)>,
    room_labels_rle: Vec<(u32, u16)>,
    rooms: Vec<Room>,
    objects: Vec<WorldObject>,
}

fn rle_encode<T: Copy + PartialEq>(values: impl Iterator<Item = T>) -> Vec<(u32, T)> {
    let mut out: Vec<(u32, T)> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some((count, last)) if *last == v => *count += 1,
            _ => out.push((1, v)),
        }
    }
    out
}

fn rle_decode<T: Copy>(runs: &[(u32, T)], expected: usize) -> Result<Vec<T>, WorldError> {
    let mut out = Vec::with_capacity(expected);
    for &(count, v) in runs {
        for _ in 0..count {
            out.push(v);
        }
    }
    if out.len() != expected {
        return Err(WorldError::MalformedDocument(format!(
            "rle grid has {} cells, expected {expected}",
            out.len()
        )));
    }
    Ok(out)
}

pub fn world_to_json(world: &World) -> String {
    let doc = WorldDoc {
        version: WORLD_DOC_VERSION,
        seed: world.seed,
        cell_size: world.cell_size,
        wall_height: world.wall_height,
        width: world.width,
        height: world.height,
        occupancy_rle: rle_encode(
            world
                .occupancy
                .iter()
                .map(|c| if *c == CellKind::Wall { 1u8 } else { 0u8 }),
        ),
        room_labels_rle: rle_encode(world.room_labels.iter().copied()),
        rooms: world.rooms.clone(),
        objects: world.objects.clone(),
    };
    serde_json::to_string(&doc).expect("world document serialization cannot fail")
}

pub fn world_from_json(json: &str) -> Result<World, WorldError> {
    let doc: WorldDoc =
        serde_json::from_str(json).map_err(|e| WorldError::MalformedDocument(e.to_string()))?;
    if doc.version != WORLD_DOC_VERSION {
        return Err(WorldError::UnsupportedVersion(doc.version));
    }
    let n = doc.width * doc.height;
    let occupancy = rle_decode(&doc.occupancy_rle, n)?
        .into_iter()
        .map(|v| if v == 1 { CellKind::Wall } else { CellKind::Free })
        .collect();
    let room_labels = rle_decode(&doc.room_labels_rle, n)?;
    let world = World {
        seed: doc.seed,
        cell_size: doc.cell_size,
        wall_height: doc.wall_height,
        width: doc.width,
        height: doc.height,
        occupancy,
        room_labels,
        rooms: doc.rooms,
        objects: doc.objects,
    };
    world.validate()?;
    Ok(world)
}

/// Top-down map image at `scale` pixels per cell: walls, room floors, object
/// footprints. Trajectory overlays are drawn on top by the caller.
pub fn topdown_image(world: &World, scale: u32) -> image::RgbImage {
    let w = world.width as u32 * scale;
    let h = world.height as u32 * scale;
    let mut img = image::RgbImage::new(w, h);
    for py in 0..h {
        for px in 0..w {
            let cx = (px / scale) as usize;
            // Image rows grow downward; world y grows upward.
            let cy = world.height - 1 - (py / scale) as usize;
            let rgb = if world.cell(cx, cy) == CellKind::Wall {
                [40u8, 40, 40]
            } else {
                let label = world.room_label(cx, cy);
                let kind = world.room(label).map(|r| r.kind);
                match kind {
                    Some(super::RoomKind::Corridor) => [215, 210, 200],
                    Some(super::RoomKind::Bedroom) => [196, 176, 150],
                    Some(super::RoomKind::Bathroom) => [205, 218, 222],
                    Some(super::RoomKind::Kitchen) => [220, 210, 180],
                    Some(super::RoomKind::LivingRoom) => [186, 168, 140],
                    None => [150, 150, 150],
                }
            };
            img.put_pixel(px, py, image::Rgb(rgb));
        }
    }
    for obj in &world.objects {
        let rgb = super::render::category_rgb(obj.category);
        let x0 = (obj.aabb.min[0] / world.cell_size * scale as f64) as u32;
        let x1 = (obj.aabb.max[0] / world.cell_size * scale as f64) as u32;
        let ybot = (obj.aabb.min[1] / world.cell_size * scale as f64) as u32;
        let ytop = (obj.aabb.max[1] / world.cell_size * scale as f64) as u32;
        for py in (h.saturating_sub(ytop))..(h.saturating_sub(ybot)).min(h) {
            for px in x0..x1.min(w) {
                img.put_pixel(px, py, image::Rgb(rgb));
            }
        }
    }
    img
}

/// Draws a polyline of world-space points onto a topdown image.
pub fn draw_path(
    img: &mut image::RgbImage,
    world: &World,
    scale: u32,
    points: &[(f64, f64)],
    rgb: [u8; 3],
) {
    let h = img.height() as f64;
    let to_px = |p: (f64, f64)| -> (f64, f64) {
        (
            p.0 / world.cell_size * scale as f64,
            h - p.1 / world.cell_size * scale as f64,
        )
    };
    for pair in points.windows(2) {
        let (x0, y0) = to_px(pair[0]);
        let (x1, y1) = to_px(pair[1]);
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = x0 + t * (x1 - x0);
            let y = y0 + t * (y1 - y0);
            if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
            }
        }
    }
}

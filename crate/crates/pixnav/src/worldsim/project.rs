//! Pinhole camera model shared by the raycaster and the pixel/point
//! conversion oracles.

use super::render::cast_ray;
use super::{Camera, Frame, Pose, World, WorldError, SEMANTIC_FLOOR, SEMANTIC_NONE};

/// Eye position plus orthonormal camera axes; focal length in pixels is the
/// same horizontally and vertically (square pixels, vfov derived from hfov).
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub eye: [f64; 3],
    pub fwd: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub focal_px: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraBasis {
    pub fn new(pose: &Pose, camera: &Camera) -> CameraBasis {
        let yaw = pose.yaw_deg.to_radians();
        let pitch = pose.pitch_deg.to_radians();
        let (cy, sy) = (yaw.cos(), yaw.sin());
        let (cp, sp) = (pitch.cos(), pitch.sin());
        let fwd = [cp * cy, cp * sy, sp];
        let right = [sy, -cy, 0.0];
        let up = cross(right, fwd);
        let focal_px = (camera.width as f64 / 2.0) / (camera.hfov_deg.to_radians() / 2.0).tan();
        CameraBasis {
            eye: [pose.x, pose.y, pose.height],
            fwd,
            right,
            up,
            focal_px,
            width: camera.width as f64,
            height: camera.height_px as f64,
        }
    }

    /// Normalized world-space ray direction through pixel center (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        let xc = (u + 0.5 - self.width / 2.0) / self.focal_px;
        let yc = (v + 0.5 - self.height / 2.0) / self.focal_px;
        let d = [
            self.fwd[0] + xc * self.right[0] - yc * self.up[0],
            self.fwd[1] + xc * self.right[1] - yc * self.up[1],
            self.fwd[2] + xc * self.right[2] - yc * self.up[2],
        ];
        normalize(d)
    }

    /// Continuous pixel coordinates of a world point plus its forward depth.
    /// The pixel is meaningful only when `z_fwd` is positive.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let d = [p[0] - self.eye[0], p[1] - self.eye[1], p[2] - self.eye[2]];
        let zf = dot(d, self.fwd);
        let xr = dot(d, self.right);
        let yu = dot(d, self.up);
        let z_eff = zf.max(1e-9);
        let u = xr / z_eff * self.focal_px + self.width / 2.0 - 0.5;
        let v = -yu / z_eff * self.focal_px + self.height / 2.0 - 0.5;
        (u, v, zf)
    }
}

pub(super) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(super) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(super) fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// A pixel resolved into 3-D: the exact surface hit and the navigable point
/// used as a movement target (floor hits are their own target; other hits
/// snap back along the ray to the nearest free cell center).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResolution {
    pub surface: [f64; 3],
    pub navigable: [f64; 3],
    pub on_floor: bool,
}

pub fn pixel_to_point(
    world: &World,
    frame: &Frame,
    pixel: (u32, u32),
) -> Result<PointResolution, WorldError> {
    let (u, v) = pixel;
    if !frame.in_bounds(u, v) {
        return Err(WorldError::PixelOutOfBounds(u, v));
    }
    let depth = frame.depth_at(u, v) as f64;
    let semantic = frame.semantic_at(u, v);
    if depth <= 0.0 || semantic == SEMANTIC_NONE {
        return Err(WorldError::InvalidDepth(u, v));
    }
    let basis = CameraBasis::new(&frame.pose, &frame.camera);
    let dir = basis.pixel_ray(u as f64, v as f64);
    let surface = [
        basis.eye[0] + depth * dir[0],
        basis.eye[1] + depth * dir[1],
        basis.eye[2] + depth * dir[2],
    ];
    if semantic == SEMANTIC_FLOOR && world.is_free_point(surface[0], surface[1]) {
        return Ok(PointResolution { surface, navigable: [surface[0], surface[1], 0.0], on_floor: true });
    }
    // Walk back along the ray until the ground projection lands in a free
    // cell, then snap to that cell's center.
    let step = world.cell_size * 0.5;
    let mut t = depth - 1e-6;
    while t > 0.0 {
        let (x, y) = (basis.eye[0] + t * dir[0], basis.eye[1] + t * dir[1]);
        if let Some((cx, cy)) = world.cell_of_point(x, y) {
            if world.is_free_cell(cx, cy) {
                let (nx, ny) = world.cell_center(cx, cy);
                return Ok(PointResolution { surface, navigable: [nx, ny, 0.0], on_floor: false });
            }
        }
        t -= step;
    }
    // The eye itself sits in free space; fall back to its cell.
    let (cx, cy) = world
        .cell_of_point(basis.eye[0], basis.eye[1])
        .ok_or(WorldError::InvalidDepth(u, v))?;
    let (nx, ny) = world.cell_center(cx, cy);
    Ok(PointResolution { surface, navigable: [nx, ny, 0.0], on_floor: false })
}

/// Projects a world point into the image. `visible` is false when the point
/// is behind the camera, outside the frustum, or occluded; the returned pixel
/// is clamped to the image bounds in that case.
pub fn project_point(
    world: &World,
    pose: &Pose,
    camera: &Camera,
    point: [f64; 3],
) -> (f32, f32, bool) {
    let basis = CameraBasis::new(pose, camera);
    let (u, v, zf) = basis.project(point);
    let in_frustum = zf > 1e-9 && u >= -0.5 && u < basis.width - 0.5 && v >= -0.5 && v < basis.height - 0.5;
    let mut visible = in_frustum;
    if visible {
        let d = [
            point[0] - basis.eye[0],
            point[1] - basis.eye[1],
            point[2] - basis.eye[2],
        ];
        let dist = dot(d, d).sqrt();
        if dist > 1e-9 {
            let dir = [d[0] / dist, d[1] / dist, d[2] / dist];
            let hit = cast_ray(world, basis.eye, dir);
            visible = hit.t >= dist - 1e-6 * dist.max(1.0);
        }
    }
    let cu = u.clamp(0.0, basis.width - 1.0) as f32;
    let cv = v.clamp(0.0, basis.height - 1.0) as f32;
    (cu, cv, visible)
}

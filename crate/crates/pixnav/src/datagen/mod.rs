//! Pixel-goal imitation episodes: expert rollouts labeled with per-frame
//! tracked pixels and temporal distances, plus the on-disk dataset format.

mod io;
#[cfg(test)]
mod tests;

pub use io::{read_dataset, write_dataset, DatasetManifest, DatasetReader, EpisodeEntry};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::EpisodeLabels;
use crate::worldsim::{
    expert_field, generate_world, next_expert_action, pixel_to_point, project_point, render, step,
    ActionId, Camera, Frame, Pose, StepParams, World, WorldError, WorldSpec,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("episode skipped: {0}")]
    Skip(SkipReason),
    #[error("could not generate episode {index} after {attempts} attempts")]
    ExhaustedAttempts { index: usize, attempts: usize },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset corrupt: {0}")]
    Corrupt(String),
    #[error("dataset version {0} unsupported")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoValidPixel,
    PathPlanningFailed,
    ExceedsHorizon,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::NoValidPixel => write!(f, "no valid goal pixel found"),
            SkipReason::PathPlanningFailed => write!(f, "expert path planning failed"),
            SkipReason::ExceedsHorizon => write!(f, "expert trajectory exceeds the step horizon"),
        }
    }
}

/// RGB-only frame as persisted in datasets; privileged channels are
/// regenerable from (world_seed, pose).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height_px: u32,
    pub rgb: Vec<u8>,
}

impl From<&Frame> for RgbFrame {
    fn from(f: &Frame) -> Self {
        RgbFrame { width: f.width, height_px: f.height_px, rgb: f.rgb.clone() }
    }
}

impl crate::policy::RgbSource for RgbFrame {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height_px)
    }
    fn rgb_data(&self) -> &[u8] {
        &self.rgb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub world_seed: u64,
    pub camera: Camera,
    pub start_pose: Pose,
    pub goal_pixel: (u32, u32),
    /// Navigable movement target (floor point or snapped free-cell center).
    pub goal_point: [f64; 3],
    /// Exact ray hit of the goal pixel; the tracking labels follow this.
    pub surface_point: [f64; 3],
    /// Geodesic from the start to the goal point, in meters.
    pub initial_geodesic: f64,
    pub frames: Vec<RgbFrame>,
    pub poses: Vec<Pose>,
    pub expert_actions: Vec<ActionId>,
    /// Tracked-pixel labels in pixel units (clamped when out of view).
    pub tracked_pixels: Vec<(f32, f32)>,
    pub tracked_visible: Vec<bool>,
    /// Remaining steps including the final Stop; strictly decreasing to 1.
    pub temporal_distances: Vec<u32>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.expert_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expert_actions.is_empty()
    }

    /// Loss labels with pixel coordinates normalized to [0,1]^2.
    pub fn labels(&self) -> EpisodeLabels {
        let wm1 = (self.camera.width - 1) as f32;
        let hm1 = (self.camera.height_px - 1) as f32;
        EpisodeLabels {
            actions: self.expert_actions.clone(),
            pixels: self
                .tracked_pixels
                .iter()
                .map(|&(x, y)| (x / wm1, y / hm1))
                .collect(),
            visible: self.tracked_visible.clone(),
            distances: self.temporal_distances.clone(),
        }
    }

    /// Structural label invariants; used by tests and the dataset writer.
    pub fn check_invariants(&self, max_steps: usize) -> Result<(), String> {
        let n = self.len();
        if n == 0 || n > max_steps {
            return Err(format!("episode length {n} outside 1..={max_steps}"));
        }
        if self.frames.len() != n
            || self.poses.len() != n
            || self.tracked_pixels.len() != n
            || self.tracked_visible.len() != n
            || self.temporal_distances.len() != n
        {
            return Err("per-step buffers disagree on length".into());
        }
        if *self.expert_actions.last().unwrap() != ActionId::Stop {
            return Err("last expert action is not Stop".into());
        }
        for (t, d) in self.temporal_distances.iter().enumerate() {
            if *d != (n - t) as u32 {
                return Err(format!("temporal distance at {t} is {d}, want {}", n - t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub episodes: usize,
    pub seed: u64,
    pub world_seeds: Vec<u64>,
    pub world_spec: WorldSpec,
    pub camera: Camera,
    pub step: StepParams,
    pub min_goal_m: f64,
    pub max_goal_m: f64,
    /// Fraction of episodes whose goal is forced beyond `far_threshold_m`,
    /// so the far evaluation band is represented in training.
    pub far_fraction: f64,
    pub far_threshold_m: f64,
    pub max_steps: usize,
    pub stop_radius: f64,
    pub pixel_draws: usize,
    pub shard_size: usize,
    /// Pitch down when the goal is this close and drifting out of frame.
    pub look_down_within_m: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            episodes: 10_000,
            seed: 1,
            world_seeds: (0..40).collect(),
            world_spec: WorldSpec::default(),
            camera: Camera::default(),
            step: StepParams::default(),
            min_goal_m: 0.5,
            max_goal_m: 6.0,
            far_fraction: 0.35,
            far_threshold_m: 3.0,
            max_steps: 64,
            stop_radius: 1.0,
            pixel_draws: 200,
            shard_size: 512,
            look_down_within_m: 1.5,
        }
    }
}

/// Uniformly samples a pixel whose resolved point is navigable, reachable,
/// and within the geodesic range; rejection-sampled over the frame.
pub fn sample_pixel_goal(
    world: &World,
    frame: &Frame,
    goal_range: (f64, f64),
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(u32, u32, crate::worldsim::PointResolution, f64), DatagenError> {
    let agent = (frame.pose.x, frame.pose.y);
    for _ in 0..draws {
        let u = rng.random_range(0..frame.width);
        let v = rng.random_range(0..frame.height_px);
        let Ok(res) = pixel_to_point(world, frame, (u, v)) else { continue };
        let Ok(geo) = crate::worldsim::geodesic_distance(
            world,
            agent,
            (res.navigable[0], res.navigable[1]),
        ) else {
            continue;
        };
        if geo >= goal_range.0 && geo <= goal_range.1 {
            return Ok((u, v, res, geo));
        }
    }
    Err(DatagenError::Skip(SkipReason::NoValidPixel))
}

/// Rolls out the expert to the sampled pixel goal, rendering each step and
/// recording action / tracked-pixel / temporal-distance labels.
pub fn generate_episode(
    world: &World,
    start_pose: &Pose,
    camera: &Camera,
    rng: &mut ChaCha8Rng,
    cfg: &DatagenConfig,
) -> Result<Episode, DatagenError> {
    let frame0 = render(world, start_pose, camera);
    let far_band = rng.random_range(0.0..1.0) < cfg.far_fraction;
    let range = if far_band {
        (cfg.far_threshold_m.max(cfg.min_goal_m), cfg.max_goal_m)
    } else {
        (cfg.min_goal_m, cfg.max_goal_m)
    };
    let (gx, gy, res, geo) = sample_pixel_goal(world, &frame0, range, cfg.pixel_draws, rng)?;
    episode_from_goal(world, start_pose, camera, (gx, gy), res, geo, cfg)
}

/// Expert rollout for a fixed, already-resolved goal pixel.
pub fn episode_from_goal(
    world: &World,
    start_pose: &Pose,
    camera: &Camera,
    goal_pixel: (u32, u32),
    res: crate::worldsim::PointResolution,
    initial_geodesic: f64,
    cfg: &DatagenConfig,
) -> Result<Episode, DatagenError> {
    let target = (res.navigable[0], res.navigable[1]);
    let field = expert_field(world, target)
        .map_err(|_| DatagenError::Skip(SkipReason::PathPlanningFailed))?;

    let mut pose = *start_pose;
    let mut frames = Vec::new();
    let mut poses = Vec::new();
    let mut actions = Vec::new();
    let mut tracked = Vec::new();
    let mut visible = Vec::new();
    loop {
        if actions.len() >= cfg.max_steps {
            return Err(DatagenError::Skip(SkipReason::ExceedsHorizon));
        }
        let frame = render(world, &pose, camera);
        let (tx, ty, vis) = project_point(world, &pose, camera, res.surface);
        frames.push(RgbFrame::from(&frame));
        poses.push(pose);
        tracked.push((tx, ty));
        visible.push(vis);

        let action = expert_action_with_framing(world, &field, &pose, res.surface, camera, cfg)
            .map_err(|_| DatagenError::Skip(SkipReason::PathPlanningFailed))?;
        actions.push(action);
        if action == ActionId::Stop {
            break;
        }
        pose = step(world, &pose, action, &cfg.step);
    }
    let n = actions.len();
    let episode = Episode {
        world_seed: world.seed,
        camera: *camera,
        start_pose: *start_pose,
        goal_pixel,
        goal_point: res.navigable,
        surface_point: res.surface,
        initial_geodesic,
        frames,
        poses,
        expert_actions: actions,
        tracked_pixels: tracked,
        tracked_visible: visible,
        temporal_distances: (0..n).map(|t| (n - t) as u32).collect(),
    };
    debug_assert!(episode.check_invariants(cfg.max_steps).is_ok());
    Ok(episode)
}

/// Expert action with a near-goal framing rule: pitch down once when the
/// tracked surface point slides off the bottom of the image close to the
/// goal, keeping the tracking label visible through the final approach.
fn expert_action_with_framing(
    world: &World,
    field: &crate::worldsim::DistanceField,
    pose: &Pose,
    surface_point: [f64; 3],
    camera: &Camera,
    cfg: &DatagenConfig,
) -> Result<ActionId, WorldError> {
    let (cx, cy) = world
        .cell_of_point(pose.x, pose.y)
        .ok_or(WorldError::PointInWall { x: pose.x, y: pose.y })?;
    let geo = field.meters_at_cell(cx, cy).ok_or(WorldError::Unreachable)?;
    if geo > cfg.stop_radius && pose.pitch_deg == 0.0 && geo <= cfg.look_down_within_m {
        let (_, v, _) = project_point(world, pose, camera, surface_point);
        if v >= 0.92 * (camera.height_px - 1) as f32 {
            return Ok(ActionId::LookDown);
        }
    }
    next_expert_action(world, field, pose, cfg.stop_radius, &cfg.step)
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform random spawn pose: a free, unoccupied cell center and a yaw on
/// the turn lattice.
pub fn sample_start_pose(world: &World, camera: &Camera, rng: &mut ChaCha8Rng) -> Pose {
    let cells = world.spawnable_cells();
    let (cx, cy) = cells[rng.random_range(0..cells.len())];
    let (x, y) = world.cell_center(cx, cy);
    let yaw = 30.0 * rng.random_range(0..12) as f64;
    Pose::new(x, y, yaw, camera)
}

/// Generates `cfg.episodes` episodes round-robin over the world seeds and
/// streams them into `out_dir` shard files. Deterministic for a fixed config.
pub fn generate_dataset(
    cfg: &DatagenConfig,
    out_dir: &std::path::Path,
    mut progress: impl FnMut(usize, usize),
) -> Result<DatasetManifest, DatagenError> {
    let mut worlds: std::collections::BTreeMap<u64, World> = std::collections::BTreeMap::new();
    let mut writer = io::DatasetWriter::create(out_dir, cfg)?;
    for index in 0..cfg.episodes {
        let world_seed = cfg.world_seeds[index % cfg.world_seeds.len()];
        let world = match worlds.get(&world_seed) {
            Some(w) => w,
            None => {
                let w = generate_world(world_seed, &cfg.world_spec)?;
                worlds.entry(world_seed).or_insert(w)
            }
        };
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index as u64));
        let mut episode = None;
        let attempts = 50;
        for _ in 0..attempts {
            let start = sample_start_pose(world, &cfg.camera, &mut rng);
            match generate_episode(world, &start, &cfg.camera, &mut rng, cfg) {
                Ok(ep) => {
                    episode = Some(ep);
                    break;
                }
                Err(DatagenError::Skip(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let episode = episode.ok_or(DatagenError::ExhaustedAttempts { index, attempts })?;
        writer.append(&episode)?;
        progress(index + 1, cfg.episodes);
    }
    writer.finish()
}

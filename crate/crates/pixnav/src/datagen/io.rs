//! Dataset on disk: `manifest.json` plus shard files of binary episode
//! records. Record layout (all integers little-endian):
//!
//! ```text
//! [u32 magic "PXEP"] [u32 header_len] [header JSON] [PNG frame 0] [PNG 1]...
//! ```
//!
//! The header carries every label field and the per-frame PNG sizes; the
//! manifest carries per-episode (shard, offset, length, sha256) entries that
//! are verified on load.

use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatagenConfig, DatagenError, Episode, RgbFrame};
use crate::util::{png_to_rgb, rgb_to_png, sha256_hex};
use crate::worldsim::{ActionId, Camera, Pose};

pub const DATASET_VERSION: u32 = 1;
const RECORD_MAGIC: u32 = 0x50584550; // "PXEP"

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub index: usize,
    pub shard: usize,
    pub offset: u64,
    pub len: u64,
    pub sha256: String,
    /// Initial geodesic distance to the goal, for band statistics.
    pub geodesic: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub episode_count: usize,
    pub camera: Camera,
    pub seed: u64,
    pub world_seeds: Vec<u64>,
    pub config: DatagenConfig,
    pub shards: Vec<String>,
    pub episodes: Vec<EpisodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    world_seed: u64,
    camera: Camera,
    start_pose: Pose,
    goal_pixel: (u32, u32),
    goal_point: [f64; 3],
    surface_point: [f64; 3],
    initial_geodesic: f64,
    poses: Vec<Pose>,
    expert_actions: Vec<u8>,
    tracked_pixels: Vec<(f32, f32)>,
    tracked_visible: Vec<bool>,
    temporal_distances: Vec<u32>,
    frame_dims: (u32, u32),
    frame_sizes: Vec<u32>,
}

fn encode_record(episode: &Episode) -> Result<Vec<u8>, DatagenError> {
    let pngs: Vec<Vec<u8>> = episode
        .frames
        .iter()
        .map(|f| rgb_to_png(f.width, f.height_px, &f.rgb))
        .collect();
    let header = RecordHeader {
        world_seed: episode.world_seed,
        camera: episode.camera,
        start_pose: episode.start_pose,
        goal_pixel: episode.goal_pixel,
        goal_point: episode.goal_point,
        surface_point: episode.surface_point,
        initial_geodesic: episode.initial_geodesic,
        poses: episode.poses.clone(),
        expert_actions: episode.expert_actions.iter().map(|a| a.index() as u8).collect(),
        tracked_pixels: episode.tracked_pixels.clone(),
        tracked_visible: episode.tracked_visible.clone(),
        temporal_distances: episode.temporal_distances.clone(),
        frame_dims: (episode.camera.width, episode.camera.height_px),
        frame_sizes: pngs.iter().map(|p| p.len() as u32).collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| DatagenError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(
        12 + header_json.len() + pngs.iter().map(|p| p.len()).sum::<usize>(),
    );
    out.extend_from_slice(&RECORD_MAGIC.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for png in &pngs {
        out.extend_from_slice(png);
    }
    Ok(out)
}

fn decode_record(bytes: &[u8]) -> Result<Episode, DatagenError> {
    let corrupt = |msg: &str| DatagenError::Corrupt(msg.to_string());
    if bytes.len() < 8 {
        return Err(corrupt("record shorter than its preamble"));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != RECORD_MAGIC {
        return Err(corrupt("bad record magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(corrupt("record header truncated"));
    }
    let header: RecordHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| DatagenError::Corrupt(e.to_string()))?;
    let mut frames = Vec::with_capacity(header.frame_sizes.len());
    let mut cursor = 8 + header_len;
    for size in &header.frame_sizes {
        let end = cursor + *size as usize;
        if end > bytes.len() {
            return Err(corrupt("frame data truncated"));
        }
        let (w, h, rgb) = png_to_rgb(&bytes[cursor..end]).map_err(DatagenError::Corrupt)?;
        if (w, h) != header.frame_dims {
            return Err(corrupt("frame dims disagree with header"));
        }
        frames.push(RgbFrame { width: w, height_px: h, rgb });
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(corrupt("trailing bytes after the last frame"));
    }
    let actions: Option<Vec<ActionId>> = header
        .expert_actions
        .iter()
        .map(|i| ActionId::from_index(*i as usize))
        .collect();
    Ok(Episode {
        world_seed: header.world_seed,
        camera: header.camera,
        start_pose: header.start_pose,
        goal_pixel: header.goal_pixel,
        goal_point: header.goal_point,
        surface_point: header.surface_point,
        initial_geodesic: header.initial_geodesic,
        frames,
        poses: header.poses,
        expert_actions: actions.ok_or_else(|| corrupt("unknown action id"))?,
        tracked_pixels: header.tracked_pixels,
        tracked_visible: header.tracked_visible,
        temporal_distances: header.temporal_distances,
    })
}

pub(super) struct DatasetWriter {
    dir: PathBuf,
    config: DatagenConfig,
    shard_size: usize,
    shards: Vec<String>,
    episodes: Vec<EpisodeEntry>,
    current: Option<std::io::BufWriter<std::fs::File>>,
    current_offset: u64,
}

impl DatasetWriter {
    pub fn create(dir: &Path, config: &DatagenConfig) -> Result<Self, DatagenError> {
        std::fs::create_dir_all(dir)?;
        Ok(DatasetWriter {
            dir: dir.to_path_buf(),
            config: config.clone(),
            shard_size: config.shard_size.max(1),
            shards: Vec::new(),
            episodes: Vec::new(),
            current: None,
            current_offset: 0,
        })
    }

    pub fn append(&mut self, episode: &Episode) -> Result<(), DatagenError> {
        episode
            .check_invariants(self.config.max_steps)
            .map_err(DatagenError::Corrupt)?;
        let index = self.episodes.len();
        if index % self.shard_size == 0 {
            if let Some(mut w) = self.current.take() {
                w.flush()?;
            }
            let name = format!("shard_{:05}.bin", self.shards.len());
            let file = std::fs::File::create(self.dir.join(&name))?;
            self.shards.push(name);
            self.current = Some(std::io::BufWriter::new(file));
            self.current_offset = 0;
        }
        let record = encode_record(episode)?;
        let entry = EpisodeEntry {
            index,
            shard: self.shards.len() - 1,
            offset: self.current_offset,
            len: record.len() as u64,
            sha256: sha256_hex(&record),
            geodesic: episode.initial_geodesic,
            steps: episode.len(),
        };
        self.current.as_mut().unwrap().write_all(&record)?;
        self.current_offset += record.len() as u64;
        self.episodes.push(entry);
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest, DatagenError> {
        if let Some(mut w) = self.current.take() {
            w.flush()?;
        }
        let manifest = DatasetManifest {
            version: DATASET_VERSION,
            episode_count: self.episodes.len(),
            camera: self.config.camera,
            seed: self.config.seed,
            world_seeds: self.config.world_seeds.clone(),
            config: self.config,
            shards: self.shards,
            episodes: self.episodes,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DatagenError::Corrupt(e.to_string()))?;
        std::fs::write(self.dir.join("manifest.json"), json)?;
        Ok(manifest)
    }
}

/// Writes a fully materialized episode list; used by tests and small tools.
pub fn write_dataset(
    episodes: &[Episode],
    dir: &Path,
    config: &DatagenConfig,
) -> Result<DatasetManifest, DatagenError> {
    let mut writer = DatasetWriter::create(dir, config)?;
    for ep in episodes {
        writer.append(ep)?;
    }
    writer.finish()
}

pub struct DatasetReader {
    pub manifest: DatasetManifest,
    dir: PathBuf,
    shards: Vec<std::fs::File>,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self, DatagenError> {
        let manifest_path = dir.join("manifest.json");
        let json = std::fs::read_to_string(&manifest_path)?;
        let manifest: DatasetManifest =
            serde_json::from_str(&json).map_err(|e| DatagenError::Corrupt(e.to_string()))?;
        if manifest.version != DATASET_VERSION {
            return Err(DatagenError::UnsupportedVersion(manifest.version));
        }
        let mut shards = Vec::with_capacity(manifest.shards.len());
        for name in &manifest.shards {
            shards.push(std::fs::File::open(dir.join(name))?);
        }
        Ok(DatasetReader { manifest, dir: dir.to_path_buf(), shards })
    }

    pub fn len(&self) -> usize {
        self.manifest.episode_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Reads, checksum-verifies, and decodes one episode.
    pub fn load_episode(&self, index: usize) -> Result<Episode, DatagenError> {
        let entry = self
            .manifest
            .episodes
            .get(index)
            .ok_or_else(|| DatagenError::Corrupt(format!("episode {index} out of range")))?;
        let mut bytes = vec![0u8; entry.len as usize];
        self.shards[entry.shard]
            .read_exact_at(&mut bytes, entry.offset)
            .map_err(|e| DatagenError::Corrupt(format!("episode {index}: {e}")))?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(DatagenError::Corrupt(format!(
                "episode {index} checksum mismatch: stored {} computed {digest}",
                entry.sha256
            )));
        }
        decode_record(&bytes)
    }

    /// Verifies every record checksum without decoding frames.
    pub fn verify_all(&self) -> Result<(), DatagenError> {
        for entry in &self.manifest.episodes {
            let mut bytes = vec![0u8; entry.len as usize];
            self.shards[entry.shard]
                .read_exact_at(&mut bytes, entry.offset)
                .map_err(|e| DatagenError::Corrupt(format!("episode {}: {e}", entry.index)))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(DatagenError::Corrupt(format!(
                    "episode {} checksum mismatch",
                    entry.index
                )));
            }
        }
        Ok(())
    }
}

pub fn read_dataset(dir: &Path) -> Result<DatasetReader, DatagenError> {
    DatasetReader::open(dir)
}

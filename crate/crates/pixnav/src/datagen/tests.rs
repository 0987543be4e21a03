use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::worldsim::{generate_world, geodesic_distance, WorldSpec};

fn small_cfg() -> DatagenConfig {
    DatagenConfig { episodes: 6, world_seeds: vec![0, 1], ..DatagenConfig::default() }
}

fn test_world(seed: u64) -> World {
    generate_world(seed, &WorldSpec::default()).unwrap()
}

#[test]
fn sampled_goal_is_reachable_and_in_range() {
    let world = test_world(0);
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = sample_start_pose(&world, &cfg.camera, &mut rng);
    let frame = render(&world, &start, &cfg.camera);
    let (u, v, res, geo) =
        sample_pixel_goal(&world, &frame, (0.5, 6.0), 200, &mut rng).unwrap();
    assert!(frame.in_bounds(u, v));
    assert!(world.is_free_point(res.navigable[0], res.navigable[1]));
    let check = geodesic_distance(
        &world,
        (start.x, start.y),
        (res.navigable[0], res.navigable[1]),
    )
    .unwrap();
    assert!((check - geo).abs() < 1e-9);
    assert!((0.5..=6.0).contains(&geo));
}

#[test]
fn boxed_in_agent_skips_episode() {
    // One free cell: every pixel resolves to the agent's own cell (geodesic 0).
    let rows = ["###", "#.#", "###"];
    let world = World::from_ascii(&rows, 0.25);
    let camera = Camera::default();
    let pose = Pose::new(0.375, 0.375, 0.0, &camera);
    let frame = render(&world, &pose, &camera);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let got = sample_pixel_goal(&world, &frame, (0.5, 6.0), 200, &mut rng);
    assert!(matches!(got, Err(DatagenError::Skip(SkipReason::NoValidPixel))));
}

#[test]
fn fixed_seed_fixed_pixel() {
    let world = test_world(1);
    let cfg = small_cfg();
    let mut rng_a = ChaCha8Rng::seed_from_u64(7);
    let start = sample_start_pose(&world, &cfg.camera, &mut rng_a);
    let frame = render(&world, &start, &cfg.camera);
    let a = sample_pixel_goal(&world, &frame, (0.5, 6.0), 200, &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    let b = sample_pixel_goal(&world, &frame, (0.5, 6.0), 200, &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    assert_eq!((a.0, a.1), (b.0, b.1));
}

fn make_episode(world: &World, seed: u64) -> Episode {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let start = sample_start_pose(world, &cfg.camera, &mut rng);
        if let Ok(ep) = generate_episode(world, &start, &cfg.camera, &mut rng, &cfg) {
            return ep;
        }
    }
    panic!("could not generate an episode in 50 attempts");
}

#[test]
fn episode_invariants_hold() {
    let world = test_world(0);
    for seed in [3u64, 4, 5, 6] {
        let ep = make_episode(&world, seed);
        ep.check_invariants(64).unwrap();
        assert_eq!(*ep.expert_actions.last().unwrap(), ActionId::Stop);
        assert_eq!(*ep.temporal_distances.last().unwrap(), 1);
        // Temporal distance strictly decreases by one.
        for pair in ep.temporal_distances.windows(2) {
            assert_eq!(pair[0], pair[1] + 1);
        }
        // Frame-0 tracked pixel reproduces the goal pixel and is visible.
        assert!(ep.tracked_visible[0]);
        assert!((ep.tracked_pixels[0].0 - ep.goal_pixel.0 as f32).abs() < 0.01);
        assert!((ep.tracked_pixels[0].1 - ep.goal_pixel.1 as f32).abs() < 0.01);
    }
}

#[test]
fn expert_replay_ends_within_stop_radius() {
    let world = test_world(1);
    let cfg = small_cfg();
    for seed in [10u64, 11, 12] {
        let ep = make_episode(&world, seed);
        // Independent replay through the simulator stepper.
        let mut pose = ep.start_pose;
        for &a in &ep.expert_actions {
            pose = crate::worldsim::step(&world, &pose, a, &cfg.step);
        }
        let final_geo = geodesic_distance(
            &world,
            (pose.x, pose.y),
            (ep.goal_point[0], ep.goal_point[1]),
        )
        .unwrap();
        assert!(final_geo <= cfg.stop_radius + 1e-9, "ended {final_geo} m away");
        // Replayed poses match the recorded ones.
        assert!((pose.x - ep.poses.last().unwrap().x).abs() < 1e-12);
    }
}

#[test]
fn labels_are_normalized() {
    let world = test_world(0);
    let ep = make_episode(&world, 20);
    let labels = ep.labels();
    assert_eq!(labels.len(), ep.len());
    for (x, y) in &labels.pixels {
        assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
    }
}

#[test]
fn dataset_roundtrip_five_episodes() {
    let world = test_world(0);
    let episodes: Vec<Episode> = (0..5).map(|i| make_episode(&world, 30 + i)).collect();
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let manifest = write_dataset(&episodes, dir.path(), &cfg).unwrap();
    assert_eq!(manifest.episode_count, 5);
    let reader = read_dataset(dir.path()).unwrap();
    reader.verify_all().unwrap();
    for (i, ep) in episodes.iter().enumerate() {
        let loaded = reader.load_episode(i).unwrap();
        assert_eq!(&loaded, ep);
    }
}

#[test]
fn truncated_shard_fails_checksum() {
    let world = test_world(0);
    let episodes = vec![make_episode(&world, 40)];
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&episodes, dir.path(), &small_cfg()).unwrap();
    let shard = dir.path().join(&manifest.shards[0]);
    let bytes = std::fs::read(&shard).unwrap();
    std::fs::write(&shard, &bytes[..bytes.len() / 2]).unwrap();
    let reader = read_dataset(dir.path()).unwrap();
    assert!(matches!(reader.load_episode(0), Err(DatagenError::Corrupt(_))));
}

#[test]
fn empty_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&[], dir.path(), &small_cfg()).unwrap();
    assert_eq!(manifest.episode_count, 0);
    let reader = read_dataset(dir.path()).unwrap();
    assert!(reader.is_empty());
}

#[test]
fn generate_dataset_is_deterministic_and_covers_far_band() {
    let cfg = DatagenConfig {
        episodes: 24,
        seed: 3,
        world_seeds: vec![0, 1],
        ..DatagenConfig::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let man_a = generate_dataset(&cfg, dir_a.path(), |_, _| {}).unwrap();
    let man_b = generate_dataset(&cfg, dir_b.path(), |_, _| {}).unwrap();
    let sums = |m: &DatasetManifest| -> Vec<String> {
        m.episodes.iter().map(|e| e.sha256.clone()).collect()
    };
    assert_eq!(sums(&man_a), sums(&man_b));
    assert_eq!(man_a.episode_count, 24);
    // The far-fraction stratification keeps long goals represented.
    let far = man_a.episodes.iter().filter(|e| e.geodesic >= 3.0).count();
    assert!(
        far as f64 >= 0.3 * man_a.episode_count as f64,
        "only {far}/24 episodes have goals beyond 3 m"
    );
    // Every episode fits the horizon.
    assert!(man_a.episodes.iter().all(|e| e.steps <= 64));
}

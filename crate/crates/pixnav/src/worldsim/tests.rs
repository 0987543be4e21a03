use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn open_room() -> World {
    // 24x16 cells (6.0m x 4.0m), all interior free.
    let cols = "#".to_string() + &".".repeat(22) + "#";
    let wall = "#".repeat(24);
    let mut rows = vec![wall.as_str()];
    let inner: Vec<String> = (0..14).map(|_| cols.clone()).collect();
    let mut refs: Vec<&str> = inner.iter().map(|s| s.as_str()).collect();
    rows.append(&mut refs);
    rows.push(wall.as_str());
    World::from_ascii(&rows, 0.25)
}

fn default_spec() -> WorldSpec {
    WorldSpec::default()
}

#[test]
fn generate_is_deterministic_bytes() {
    let spec = WorldSpec { rooms: (4, 4), ..default_spec() };
    let a = generate_world(7, &spec).unwrap();
    let b = generate_world(7, &spec).unwrap();
    assert_eq!(world_to_json(&a), world_to_json(&b));
}

#[test]
fn generate_free_graph_connected_bfs_oracle() {
    let spec = WorldSpec { rooms: (4, 4), ..default_spec() };
    let world = generate_world(7, &spec).unwrap();
    // Independent BFS over the occupancy grid.
    let free: Vec<(usize, usize)> = world.free_cells().collect();
    let mut seen = std::collections::HashSet::new();
    let mut queue = std::collections::VecDeque::new();
    seen.insert(free[0]);
    queue.push_back(free[0]);
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if world.in_bounds(nx, ny) && world.is_free_cell(nx as usize, ny as usize) {
                let c = (nx as usize, ny as usize);
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
    }
    assert_eq!(seen.len(), free.len());
}

#[test]
fn generate_object_centers_match_declared_rooms() {
    let spec = WorldSpec { rooms: (2, 2), ..default_spec() };
    let world = generate_world(1, &spec).unwrap();
    assert!(!world.objects.is_empty());
    for obj in &world.objects {
        let c = obj.aabb.center();
        let (cx, cy) = world.cell_of_point(c[0], c[1]).unwrap();
        assert_eq!(world.room_label(cx, cy), obj.room_id, "object {}", obj.id);
    }
}

#[test]
fn generate_has_connecting_corridor_and_room_variety() {
    for seed in [0u64, 3, 9] {
        let world = generate_world(seed, &default_spec()).unwrap();
        assert!(world.rooms.iter().any(|r| r.kind == RoomKind::Corridor));
        assert!(world.rooms.iter().any(|r| r.kind == RoomKind::Bedroom));
        assert!(world.rooms.len() >= 4); // corridor + at least 3 rooms
    }
}

#[test]
fn generate_rejects_bad_spec() {
    let mut spec = default_spec();
    spec.rooms = (1, 1);
    assert!(matches!(generate_world(0, &spec), Err(WorldError::InvalidSpec(_))));
    let mut spec = default_spec();
    spec.width_m = (-1.0, 5.0);
    assert!(generate_world(0, &spec).is_err());
}

#[test]
fn world_json_roundtrip() {
    let world = generate_world(11, &default_spec()).unwrap();
    let json = world_to_json(&world);
    let back = world_from_json(&json).unwrap();
    assert_eq!(world, back);
    assert!(matches!(
        world_from_json(&json.replace("\"version\":1", "\"version\":99")),
        Err(WorldError::UnsupportedVersion(99))
    ));
}

#[test]
fn render_center_depth_matches_analytic_wall_distance() {
    let world = open_room();
    let camera = Camera::default();
    // East wall face at x = 5.75; stand 1.0 m away from it.
    let pose = Pose::new(4.75, 2.0, 0.0, &camera);
    let frame = render(&world, &pose, &camera);
    let (u, v) = (camera.width / 2, camera.height_px / 2);
    assert_eq!(frame.semantic_at(u, v), SEMANTIC_WALL);
    // Analytic oracle: ray through the pixel center against the wall plane.
    let basis = CameraBasis::new(&pose, &camera);
    let dir = basis.pixel_ray(u as f64, v as f64);
    let expected = 1.0 / dir[0];
    assert!((frame.depth_at(u, v) as f64 - expected).abs() < 1e-4);
    assert!((frame.depth_at(u, v) as f64 - 1.0).abs() < 0.01);
}

#[test]
fn render_floor_in_bottom_rows_at_pitch_zero() {
    let world = open_room();
    let camera = Camera::default();
    let pose = Pose::new(1.5, 2.0, 0.0, &camera);
    let frame = render(&world, &pose, &camera);
    let v = camera.height_px - 1;
    let floor_count = (0..camera.width)
        .filter(|&u| frame.semantic_at(u, v) == SEMANTIC_FLOOR)
        .count();
    assert!(floor_count > (camera.width / 2) as usize);
}

#[test]
fn render_identical_pose_identical_bytes() {
    let world = generate_world(5, &default_spec()).unwrap();
    let camera = Camera::default();
    let (cx, cy) = world.spawnable_cells()[10];
    let (x, y) = world.cell_center(cx, cy);
    let pose = Pose::new(x, y, 60.0, &camera);
    let a = render(&world, &pose, &camera);
    let b = render(&world, &pose, &camera);
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.depth, b.depth);
    assert_eq!(a.semantic, b.semantic);
}

#[test]
fn render_depth_positive_everywhere() {
    let world = generate_world(2, &default_spec()).unwrap();
    let camera = Camera::default();
    let (cx, cy) = world.spawnable_cells()[0];
    let (x, y) = world.cell_center(cx, cy);
    for yaw in [0.0, 90.0, 210.0] {
        let frame = render(&world, &Pose::new(x, y, yaw, &camera), &camera);
        assert!(frame.depth.iter().all(|&d| d > 0.0));
        assert!(frame.semantic.iter().all(|&s| s != SEMANTIC_NONE));
    }
}

#[test]
fn step_move_into_wall_is_blocked() {
    let world = open_room();
    let camera = Camera::default();
    let params = StepParams::default();
    // 0.2 m from the east wall face, facing it.
    let pose = Pose::new(5.55, 2.0, 0.0, &camera);
    let next = step(&world, &pose, ActionId::MoveAhead, &params);
    assert_eq!((next.x, next.y, next.yaw_deg), (pose.x, pose.y, pose.yaw_deg));
}

#[test]
fn step_twelve_left_turns_return_to_start() {
    let world = open_room();
    let camera = Camera::default();
    let params = StepParams::default();
    let mut pose = Pose::new(2.0, 2.0, 30.0, &camera);
    for _ in 0..12 {
        pose = step(&world, &pose, ActionId::TurnLeft, &params);
    }
    assert!((pose.yaw_deg - 30.0).abs() < 1e-9);
}

#[test]
fn step_pitch_clamps() {
    let world = open_room();
    let camera = Camera::default();
    let params = StepParams::default();
    let mut pose = Pose::new(2.0, 2.0, 0.0, &camera);
    pose.pitch_deg = -30.0;
    let next = step(&world, &pose, ActionId::LookDown, &params);
    assert_eq!(next.pitch_deg, -30.0);
    let up = step(&world, &step(&world, &pose, ActionId::LookUp, &params), ActionId::LookUp, &params);
    let up3 = step(&world, &up, ActionId::LookUp, &params);
    assert_eq!(up3.pitch_deg, 30.0);
    let stopped = step(&world, &pose, ActionId::Stop, &params);
    assert_eq!(stopped, pose);
}

#[test]
fn geodesic_zero_for_same_point() {
    let world = open_room();
    assert_eq!(geodesic_distance(&world, (2.0, 2.0), (2.0, 2.0)).unwrap(), 0.0);
}

#[test]
fn geodesic_straight_corridor_four_cells() {
    let world = open_room();
    let a = world.cell_center(4, 8);
    let b = world.cell_center(8, 8);
    assert!((geodesic_distance(&world, a, b).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn geodesic_errors_for_wall_points() {
    let world = open_room();
    assert!(matches!(
        geodesic_distance(&world, (0.1, 0.1), (2.0, 2.0)),
        Err(WorldError::PointInWall { .. })
    ));
}

#[test]
fn geodesic_dominates_euclidean_on_sampled_pairs() {
    let world = generate_world(3, &default_spec()).unwrap();
    let free: Vec<_> = world.free_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let (ax, ay) = free[rng.random_range(0..free.len())];
        let (bx, by) = free[rng.random_range(0..free.len())];
        let a = world.cell_center(ax, ay);
        let b = world.cell_center(bx, by);
        let g = geodesic_distance(&world, a, b).unwrap();
        let e = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        assert!(g >= e - 1e-9, "geodesic {g} < euclidean {e}");
    }
}

#[test]
fn geodesic_is_a_metric_on_sampled_triples() {
    let world = generate_world(4, &default_spec()).unwrap();
    let free: Vec<_> = world.free_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..40 {
        let pick = |rng: &mut ChaCha8Rng| {
            let (x, y) = free[rng.random_range(0..free.len())];
            world.cell_center(x, y)
        };
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let ab = geodesic_distance(&world, a, b).unwrap();
        let ba = geodesic_distance(&world, b, a).unwrap();
        let ac = geodesic_distance(&world, a, c).unwrap();
        let cb = geodesic_distance(&world, c, b).unwrap();
        assert!((ab - ba).abs() < 1e-9, "symmetry");
        assert!(ab <= ac + cb + 1e-9, "triangle inequality");
    }
}

#[test]
fn shortest_path_at_target_is_just_stop() {
    let world = open_room();
    let camera = Camera::default();
    let pose = Pose::new(2.0, 2.0, 0.0, &camera);
    let actions =
        shortest_path_actions(&world, &pose, (2.0, 2.0), 1.0, &PathParams::default()).unwrap();
    assert_eq!(actions, vec![ActionId::Stop]);
}

#[test]
fn shortest_path_unreachable_target_errors() {
    let rows = ["#######", "#...#.#", "#.....#", "#######"];
    // Top-right pocket cell (5, 2) is reachable; a wall point is not.
    let world = World::from_ascii(&rows, 0.25);
    let camera = Camera::default();
    let pose = Pose::new(0.375, 0.375, 0.0, &camera);
    assert!(shortest_path_actions(&world, &pose, (1.0, 0.9), 0.2, &PathParams::default()).is_err());
}

#[test]
fn shortest_path_replay_reaches_target_within_bound() {
    // 200 random start/target pairs across four generated worlds; replay must
    // end within the stop radius and stay within 1.2x of the geodesic.
    let camera = Camera::default();
    let params = PathParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    for seed in [10u64, 11, 12, 13] {
        let world = generate_world(seed, &default_spec()).unwrap();
        let free = world.spawnable_cells();
        while trials < 200 * (seed - 9) {
            let (sx, sy) = free[rng.random_range(0..free.len())];
            let (tx, ty) = free[rng.random_range(0..free.len())];
            let start = world.cell_center(sx, sy);
            let target = world.cell_center(tx, ty);
            let geo = geodesic_distance(&world, start, target).unwrap();
            if geo < 1.5 {
                continue;
            }
            let yaw = 30.0 * rng.random_range(0..12) as f64;
            let pose = Pose::new(start.0, start.1, yaw, &camera);
            let stop_radius = 0.25;
            let actions =
                shortest_path_actions(&world, &pose, target, stop_radius, &params).unwrap();
            assert_eq!(*actions.last().unwrap(), ActionId::Stop);
            let mut cur = pose;
            let mut path_len = 0.0;
            for &a in &actions {
                let next = step(&world, &cur, a, &params.step);
                path_len += ((next.x - cur.x).powi(2) + (next.y - cur.y).powi(2)).sqrt();
                cur = next;
            }
            let final_geo = geodesic_distance(&world, (cur.x, cur.y), target).unwrap();
            assert!(final_geo <= stop_radius + 1e-9, "ended {final_geo} m away");
            assert!(
                path_len <= 1.2 * geo + 0.26,
                "path {path_len} m vs geodesic {geo} m"
            );
            trials += 1;
        }
    }
}

#[test]
fn pixel_to_point_wall_hit_snaps_to_free_cell() {
    let world = open_room();
    let camera = Camera::default();
    // East wall face at 5.75; stand 2.0 m away.
    let pose = Pose::new(3.75, 2.0, 0.0, &camera);
    let frame = render(&world, &pose, &camera);
    let res = pixel_to_point(&world, &frame, (camera.width / 2, camera.height_px / 2)).unwrap();
    assert!(!res.on_floor);
    assert!((res.surface[0] - 5.75).abs() < 1e-3);
    // Navigable point: a free cell center just in front of the wall.
    assert!(world.is_free_point(res.navigable[0], res.navigable[1]));
    assert!((res.navigable[0] - pose.x) > 1.5 && (res.navigable[0] - pose.x) < 2.0 + 1e-9);
    assert_eq!(res.navigable[2], 0.0);
}

#[test]
fn pixel_to_point_floor_roundtrip_within_one_pixel() {
    let world = generate_world(6, &default_spec()).unwrap();
    let camera = Camera::default();
    let (cx, cy) = world.spawnable_cells()[5];
    let (x, y) = world.cell_center(cx, cy);
    let pose = Pose::new(x, y, 90.0, &camera);
    let frame = render(&world, &pose, &camera);
    let mut checked = 0;
    for v in (0..camera.height_px).step_by(7) {
        for u in (0..camera.width).step_by(11) {
            if frame.semantic_at(u, v) != SEMANTIC_FLOOR {
                continue;
            }
            let res = match pixel_to_point(&world, &frame, (u, v)) {
                Ok(r) if r.on_floor => r,
                _ => continue,
            };
            let (pu, pv, visible) = project_point(&world, &pose, &camera, res.surface);
            assert!(visible, "floor point at ({u},{v}) should be visible");
            assert!((pu - u as f32).abs() <= 1.0, "u {pu} vs {u}");
            assert!((pv - v as f32).abs() <= 1.0, "v {pv} vs {v}");
            checked += 1;
        }
    }
    assert!(checked > 20, "only {checked} floor pixels checked");
}

#[test]
fn pixel_to_point_bottom_pixel_analytic_distance() {
    let world = open_room();
    let camera = Camera::default();
    let pose = Pose::new(1.0, 2.0, 0.0, &camera);
    let frame = render(&world, &pose, &camera);
    let (u, v) = (camera.width / 2, camera.height_px - 1);
    assert_eq!(frame.semantic_at(u, v), SEMANTIC_FLOOR);
    let res = pixel_to_point(&world, &frame, (u, v)).unwrap();
    // Analytic projection oracle: the bottom-center ray drops focal-scaled
    // 59.5 px below the axis; the hit is height / tan(angle) ahead.
    let basis = CameraBasis::new(&pose, &camera);
    let expected_ground = camera.height_m * basis.focal_px
        / (v as f64 + 0.5 - camera.height_px as f64 / 2.0);
    let ground = ((res.surface[0] - pose.x).powi(2) + (res.surface[1] - pose.y).powi(2)).sqrt();
    assert!((ground - expected_ground).abs() < 2e-3, "{ground} vs {expected_ground}");
    // Looking down, the bottom pixel lands within a meter of the agent.
    let mut down = pose;
    down.pitch_deg = -30.0;
    let dframe = render(&world, &down, &camera);
    let dres = pixel_to_point(&world, &dframe, (u, v)).unwrap();
    let dground = ((dres.surface[0] - pose.x).powi(2) + (dres.surface[1] - pose.y).powi(2)).sqrt();
    assert!(dground < 1.0, "pitch-down bottom pixel at {dground} m");
}

#[test]
fn project_point_straight_ahead_hits_center() {
    let world = open_room();
    let camera = Camera::default();
    let pose = Pose::new(2.0, 2.0, 0.0, &camera);
    let point = [4.0, 2.0, camera.height_m];
    let (u, v, visible) = project_point(&world, &pose, &camera, point);
    assert!(visible);
    assert!((u - 79.5).abs() < 0.51, "u = {u}");
    assert!((v - 59.5).abs() < 0.51, "v = {v}");
}

#[test]
fn project_point_behind_is_invisible_and_clamped() {
    let world = open_room();
    let camera = Camera::default();
    let pose = Pose::new(2.0, 2.0, 0.0, &camera);
    let (u, v, visible) = project_point(&world, &pose, &camera, [0.5, 2.0, 0.9]);
    assert!(!visible);
    assert!(u >= 0.0 && u <= (camera.width - 1) as f32);
    assert!(v >= 0.0 && v <= (camera.height_px - 1) as f32);
}

#[test]
fn project_point_occluded_by_wall_is_invisible() {
    let rows = [
        "###########",
        "#....#....#",
        "#....#....#",
        "#....#....#",
        "#....######",
        "#.........#",
        "###########",
    ];
    let world = World::from_ascii(&rows, 0.25);
    let camera = Camera::default();
    // Agent in the left chamber looking east at a point in the right chamber.
    let pose = Pose::new(0.625, 1.125, 0.0, &camera);
    let point = [2.125, 1.125, 0.9];
    let (_, _, visible) = project_point(&world, &pose, &camera, point);
    assert!(!visible);
    // Same bearing, unobstructed point in front of the wall: visible.
    let (_, _, vis2) = project_point(&world, &pose, &camera, [1.1, 1.125, 0.9]);
    assert!(vis2);
}

#[test]
fn spawnable_cells_avoid_objects() {
    let world = generate_world(8, &default_spec()).unwrap();
    for (cx, cy) in world.spawnable_cells() {
        let (x, y) = world.cell_center(cx, cy);
        assert!(world.is_free_cell(cx, cy));
        assert!(!world.objects.iter().any(|o| o.aabb.contains_xy(x, y)));
    }
}

#[test]
fn topdown_image_has_expected_size() {
    let world = generate_world(3, &default_spec()).unwrap();
    let img = topdown_image(&world, 4);
    assert_eq!(img.width(), world.width as u32 * 4);
    assert_eq!(img.height(), world.height as u32 * 4);
}

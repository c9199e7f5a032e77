//! Small generated scenes for tests, demos and smoke runs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Command, EgoState, FramePoint, FrameRecord, QaError, Scene};
use crate::spatial::CameraCalib;

pub const FRONT_CAMERA: &str = "CAM_FRONT";

/// Forward-looking camera: ego x is the optical axis, ego y points left and
/// ego z up.
pub fn front_camera(id: &str) -> CameraCalib {
    let k = [[800.0, 0.0, 800.0], [0.0, 800.0, 450.0], [0.0, 0.0, 1.0]];
    let e = [
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    CameraCalib::new(id, k, e, Some([1600, 900])).expect("valid calibration")
}

const CATEGORIES: [&str; 5] = ["car", "truck", "pedestrian", "bicycle", "traffic cone"];
const SIGNS: [&str; 4] = ["stop", "speed limit 30", "yield", "no parking"];

struct Actor {
    id: String,
    category: &'static str,
    start: [f64; 2],
    velocity: [f64; 2],
    z: f64,
}

/// Driving scene at 2 Hz. The ego drives along world x at a constant speed
/// while a few actors move at constant velocity.
pub fn driving_scene(id: &str, seed: u64, seconds: f64) -> Result<Scene, QaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed = rng.random_range(2.0..8.0);
    let actors: Vec<Actor> = (0..6)
        .map(|i| Actor {
            id: format!("{id}-obj{i}"),
            category: CATEGORIES[rng.random_range(0..CATEGORIES.len())],
            start: [rng.random_range(8.0..35.0), rng.random_range(-12.0..12.0)],
            velocity: [speed + rng.random_range(-2.0..1.0), rng.random_range(-0.5..0.5)],
            z: rng.random_range(-0.5..1.0),
        })
        .collect();
    let n = (seconds / 0.5).round() as usize + 1;
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = 0.5 * k as f64;
        let ego_x = speed * t;
        let points = actors
            .iter()
            .filter_map(|a| {
                let wx = a.start[0] + a.velocity[0] * t;
                let wy = a.start[1] + a.velocity[1] * t;
                let p = [wx - ego_x, wy, a.z];
                (p[0].abs() < 45.0 && p[1].abs() < 45.0).then(|| FramePoint {
                    xyz: p,
                    category: Some(a.category.to_string()),
                    track_id: Some(a.id.clone()),
                })
            })
            .collect();
        let signs = (k % 5 == 2).then(|| vec![SIGNS[(k / 5) % SIGNS.len()].to_string()]);
        frames.push(FrameRecord {
            image: format!("{id}/{k:04}.jpg"),
            timestamp: t,
            calib_id: FRONT_CAMERA.to_string(),
            points,
            narration: None,
            traffic_signs: signs.or_else(|| (k % 5 == 0).then(Vec::new)),
            description: Some(format!("a road with {} moving objects ahead", actors.len())),
            decision: Some(if k % 7 == 3 { "slow down" } else { "keep lane" }.to_string()),
            ego: Some(EgoState {
                speed,
                command: Some(Command::KeepForward),
                pose: Some([ego_x, 0.0, 0.0]),
            }),
        });
    }
    Scene::new(id, frames)
}

const ACTIVITIES: [&str; 8] = [
    "picks up a knife",
    "cuts an onion on the board",
    "opens the fridge",
    "pours water into a glass",
    "washes hands in the sink",
    "puts a pan on the stove",
    "stirs the soup with a spoon",
    "wipes the counter with a cloth",
];

/// First-person video at 1 Hz with a narration every few seconds.
pub fn ego_video_scene(id: &str, seed: u64, seconds: f64) -> Result<Scene, QaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = seconds.round() as usize + 1;
    let mut next = rng.random_range(1..5);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let narration = (k == next).then(|| {
            next += rng.random_range(3..7);
            format!("the person {}", ACTIVITIES[rng.random_range(0..ACTIVITIES.len())])
        });
        frames.push(FrameRecord {
            image: format!("{id}/{k:05}.jpg"),
            timestamp: k as f64,
            calib_id: FRONT_CAMERA.to_string(),
            points: Vec::new(),
            narration,
            traffic_signs: None,
            description: None,
            decision: None,
            ego: None,
        });
    }
    Scene::new(id, frames)
}

/// Two driving scenes and one first-person video, with the calibration they
/// reference.
pub fn fixture_scenes(seed: u64) -> Result<(Vec<Scene>, BTreeMap<String, CameraCalib>), QaError> {
    let scenes = vec![
        driving_scene("drive-a", seed, 12.0)?,
        driving_scene("drive-b", seed.wrapping_add(1), 12.0)?,
        ego_video_scene("kitchen", seed.wrapping_add(2), 150.0)?,
    ];
    let calibs = BTreeMap::from([(FRONT_CAMERA.to_string(), front_camera(FRONT_CAMERA))]);
    Ok((scenes, calibs))
}

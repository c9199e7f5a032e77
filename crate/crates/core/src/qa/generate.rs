use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::answer::encode_cells;
use super::template::{fill_template, Binding, Template, TemplateBank};
use super::{fps_sample, FrameRef, QaError, QaMeta, QaPair, Scene, StructuredGt, TaskKind};
use crate::spatial::{CameraCalib, GridIndex, GridSpec, SpaceVocab};
use crate::token_bank::nearest_frame;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub tasks: BTreeSet<TaskKind>,
    pub fps_threshold: f64,
    pub fps_cap: usize,
    /// Largest gap between a requested time and the frame used for it.
    pub frame_tolerance: f64,
    /// Smallest look-back for moment recap questions, seconds.
    pub min_recap_gap: f64,
    /// Largest look-ahead for activity prediction questions, seconds.
    pub max_prediction_lead: f64,
    /// Length of the long-video windows, seconds.
    pub window: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: TaskKind::ALL.into_iter().collect(),
            fps_threshold: super::FPS_THRESHOLD,
            fps_cap: super::FPS_CAP,
            frame_tolerance: 0.1,
            min_recap_gap: 20.0,
            max_prediction_lead: 20.0,
            window: 60.0,
        }
    }
}

/// Time span asked about by the temporal localization tasks.
const TRACK_SPAN: f64 = 3.5;
const STEP: f64 = 0.5;
const TRACK_STEPS: usize = 7;
const PLAN_INPUTS: usize = 3;
const PLAN_WAYPOINTS: usize = 6;

fn hash64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Per-scene seed: the global seed mixed with a hash of the scene id.
pub fn scene_seed(global: u64, scene_id: &str) -> u64 {
    global ^ hash64(scene_id)
}

fn task_rng(scene_seed: u64, task: TaskKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let stream = TaskKind::ALL.iter().position(|t| *t == task).expect("known task");
    rng.set_stream(stream as u64);
    rng
}

/// Expresses `p`, given in the ego frame of `from`, in the ego frame of
/// `to`. Without both poses the ego is taken as static.
fn to_frame(p: [f64; 3], from: Option<[f64; 3]>, to: Option<[f64; 3]>) -> [f64; 3] {
    let (Some(a), Some(b)) = (from, to) else {
        return p;
    };
    let (sa, ca) = a[2].sin_cos();
    let wx = a[0] + ca * p[0] - sa * p[1];
    let wy = a[1] + sa * p[0] + ca * p[1];
    let (sb, cb) = b[2].sin_cos();
    let (dx, dy) = (wx - b[0], wy - b[1]);
    [cb * dx + sb * dy, -sb * dx + cb * dy, p[2]]
}

/// Turns scenes into QA pairs.
pub struct Generator<'a> {
    pub spec: &'a GridSpec,
    pub vocab: &'a SpaceVocab,
    pub bank: &'a TemplateBank,
    pub calibs: &'a BTreeMap<String, CameraCalib>,
    pub config: GenConfig,
}

struct Draft {
    frames: Vec<usize>,
    question: String,
    answer: String,
    gt: Option<StructuredGt>,
    meta: QaMeta,
}

impl<'a> Generator<'a> {
    /// All pairs for all scenes, merged in scene-id order. Scenes are
    /// processed in parallel with independent seeds.
    pub fn generate(&self, scenes: &[Scene]) -> Result<Vec<QaPair>, QaError> {
        let mut order: Vec<&Scene> = scenes.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        let per_scene = order
            .par_iter()
            .map(|s| self.generate_scene(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(per_scene.into_iter().flatten().collect())
    }

    pub fn generate_scene(&self, scene: &Scene) -> Result<Vec<QaPair>, QaError> {
        let seed = scene_seed(self.config.seed, &scene.id);
        let mut out = Vec::new();
        for task in TaskKind::ALL {
            if !self.config.tasks.contains(&task) {
                continue;
            }
            let mut rng = task_rng(seed, task);
            let drafts = self.task_drafts(task, scene, &mut rng)?;
            for (i, d) in drafts.into_iter().enumerate() {
                out.push(QaPair {
                    id: format!("{}-{}-{:05}", scene.id, task, i),
                    task,
                    frames: d.frames.iter().map(|&f| FrameRef::from(&scene.frames[f])).collect(),
                    question: d.question,
                    answer: d.answer,
                    structured_gt: d.gt,
                    meta: d.meta,
                });
            }
        }
        Ok(out)
    }

    /// Pairs of one task for one scene. Moments that lack the needed
    /// annotations or frames are skipped.
    pub fn task_pairs(&self, task: TaskKind, scene: &Scene, seed: u64) -> Result<Vec<QaPair>, QaError> {
        let cfg = GenConfig {
            seed,
            tasks: BTreeSet::from([task]),
            ..self.config.clone()
        };
        Generator { config: cfg, ..*self }.generate_scene(scene)
    }

    fn task_drafts(&self, task: TaskKind, scene: &Scene, rng: &mut ChaCha8Rng) -> Result<Vec<Draft>, QaError> {
        let mut out = Vec::new();
        match task {
            TaskKind::MomentRecap | TaskKind::EventQuery | TaskKind::ActivityPrediction => {
                for now in self.window_ends(scene) {
                    match self.window_draft(task, scene, now, rng) {
                        Ok(d) => out.push(d),
                        Err(QaError::NoCandidates(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            _ => {
                for now in 0..scene.frames.len() {
                    match self.frame_drafts(task, scene, now, rng) {
                        Ok(ds) => out.extend(ds),
                        Err(QaError::NoCandidates(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(out)
    }

    fn draw(&self, task: TaskKind, rng: &mut ChaCha8Rng) -> Result<&'a Template, QaError> {
        let options = self.bank.for_task(task);
        if options.is_empty() {
            return Err(QaError::Template(format!("bank has no templates for {task}")));
        }
        Ok(options[rng.random_range(0..options.len())])
    }

    fn frame_at(&self, scene: &Scene, t: f64) -> Option<usize> {
        let times = scene.timestamps();
        let i = nearest_frame(&times, t)?;
        ((times[i] - t).abs() <= self.config.frame_tolerance).then_some(i)
    }

    /// `count` frames ending at frame `now`, `step` seconds apart, oldest
    /// first.
    fn frames_back(&self, scene: &Scene, now: usize, count: usize, step: f64) -> Option<Vec<usize>> {
        let t0 = scene.frames[now].timestamp;
        let mut out: Vec<usize> = (0..count)
            .map(|k| self.frame_at(scene, t0 - step * k as f64))
            .collect::<Option<_>>()?;
        out.reverse();
        let mut dedup = out.clone();
        dedup.dedup();
        (dedup.len() == count).then_some(out)
    }

    fn meta(&self, scene: &Scene, now: usize, tpl: &Template) -> QaMeta {
        QaMeta {
            scene_id: scene.id.clone(),
            template_id: tpl.id.clone(),
            now: scene.frames[now].timestamp,
            ..Default::default()
        }
    }

    fn frame_drafts(
        &self,
        task: TaskKind,
        scene: &Scene,
        now: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, QaError> {
        let frame = &scene.frames[now];
        let none = || QaError::NoCandidates(format!("{task} at frame {now}"));
        let text_pair = |frames: Vec<usize>, answer: &str, rng: &mut ChaCha8Rng| -> Result<Draft, QaError> {
            let tpl = self.draw(task, rng)?;
            let mut meta = self.meta(scene, now, tpl);
            meta.source_ids = vec![frame.image.clone()];
            Ok(Draft {
                frames,
                question: fill_template(tpl, &BTreeMap::new())?,
                answer: answer.to_string(),
                gt: None,
                meta,
            })
        };
        match task {
            TaskKind::SurroundingNarration => {
                let d = frame.description.as_deref().ok_or_else(none)?;
                Ok(vec![text_pair(vec![now], d, rng)?])
            }
            TaskKind::EgocentricNarration => {
                let n = frame.narration.as_deref().ok_or_else(none)?;
                Ok(vec![text_pair(vec![now], n, rng)?])
            }
            TaskKind::ActionDecision => {
                let d = frame.decision.as_deref().ok_or_else(none)?;
                let window = self.frames_back(scene, now, TRACK_STEPS, STEP).ok_or_else(none)?;
                Ok(vec![text_pair(window, d, rng)?])
            }
            TaskKind::TrafficSignInquiry => {
                let window = self.frames_back(scene, now, TRACK_STEPS, STEP).ok_or_else(none)?;
                let past = &window[..window.len() - 1];
                if past.iter().all(|&i| scene.frames[i].traffic_signs.is_none()) {
                    return Err(none());
                }
                let signs = past_signs(scene, past);
                let answer = if signs.is_empty() { "none".to_string() } else { signs.join(", ") };
                Ok(vec![text_pair(window, &answer, rng)?])
            }
            TaskKind::BoxDetection => self.box_detection(scene, now, rng),
            TaskKind::Tracking | TaskKind::BoxPrediction => self.track_pairs(task, scene, now, rng),
            TaskKind::Planning => Ok(vec![self.planning(scene, now, rng)?]),
            _ => Err(none()),
        }
    }

    fn calib(&self, scene: &Scene, now: usize) -> Result<&'a CameraCalib, QaError> {
        let id = &scene.frames[now].calib_id;
        self.calibs.get(id).ok_or_else(|| QaError::Scene {
            scene: scene.id.clone(),
            message: format!("unknown calibration {id:?}"),
        })
    }

    /// Candidate query points of frame `now`: inside the grid, FPS-thinned,
    /// then projected. Returns `(point index, u, v)`.
    fn query_points(
        &self,
        scene: &Scene,
        now: usize,
        needs_track: bool,
    ) -> Result<Vec<(usize, i64, i64)>, QaError> {
        let frame = &scene.frames[now];
        let eligible: Vec<usize> = frame
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.category.is_some() && (!needs_track || p.track_id.is_some()))
            .filter(|(_, p)| self.spec.contains(p.xyz))
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(QaError::NoCandidates(format!("no labeled points at frame {now}")));
        }
        let calib = self.calib(scene, now)?;
        let xyz: Vec<[f64; 3]> = eligible.iter().map(|&i| frame.points[i].xyz).collect();
        let picked = fps_sample(&xyz, self.config.fps_threshold, self.config.fps_cap)?;
        let out: Vec<(usize, i64, i64)> = picked
            .into_iter()
            .filter_map(|k| {
                let px = calib.project(xyz[k]).ok()?;
                calib
                    .in_image(&px)
                    .then(|| (eligible[k], px.u.round() as i64, px.v.round() as i64))
            })
            .collect();
        if out.is_empty() {
            return Err(QaError::NoCandidates(format!("no projectable points at frame {now}")));
        }
        Ok(out)
    }

    fn pixel_bindings(&self, scene: &Scene, now: usize, u: i64, v: i64) -> BTreeMap<&'static str, Binding> {
        BTreeMap::from([
            ("c", Binding::Text(scene.frames[now].calib_id.clone())),
            ("u", Binding::Int(u)),
            ("v", Binding::Int(v)),
        ])
    }

    fn box_detection(&self, scene: &Scene, now: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Draft>, QaError> {
        let frame = &scene.frames[now];
        let mut out = Vec::new();
        for (pi, u, v) in self.query_points(scene, now, false)? {
            let point = &frame.points[pi];
            let category = point.category.clone().expect("filtered to labeled points");
            let cell = self.spec.quantize(point.xyz)?;
            let tpl = self.draw(TaskKind::BoxDetection, rng)?;
            let mut meta = self.meta(scene, now, tpl);
            meta.camera_id = Some(frame.calib_id.clone());
            meta.pixel = Some([u as f64, v as f64]);
            meta.source_ids = vec![frame.image.clone()];
            out.push(Draft {
                frames: vec![now],
                question: fill_template(tpl, &self.pixel_bindings(scene, now, u, v))?,
                answer: format!("{category} {}", encode_cells(&[cell], self.vocab)?),
                gt: Some(StructuredGt::Box {
                    category,
                    center: point.xyz,
                    grid: cell.as_array(),
                }),
                meta,
            });
        }
        Ok(out)
    }

    /// Position of `track` at frame `at`, in the ego frame of `now`.
    fn track_position(&self, scene: &Scene, track: &str, at: usize, now: usize) -> Option<[f64; 3]> {
        let f = &scene.frames[at];
        let p = f.points.iter().find(|p| p.track_id.as_deref() == Some(track))?;
        let pose = |i: usize| scene.frames[i].ego.as_ref().and_then(|e| e.pose);
        Some(to_frame(p.xyz, pose(at), pose(now)))
    }

    fn track_pairs(
        &self,
        task: TaskKind,
        scene: &Scene,
        now: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, QaError> {
        let none = || QaError::NoCandidates(format!("{task} at frame {now}"));
        let window = self.frames_back(scene, now, TRACK_STEPS, STEP).ok_or_else(none)?;
        let t0 = scene.frames[now].timestamp;
        let targets: Vec<usize> = if task == TaskKind::Tracking {
            window.clone()
        } else {
            (1..=TRACK_STEPS)
                .map(|k| self.frame_at(scene, t0 + STEP * k as f64))
                .collect::<Option<_>>()
                .ok_or_else(none)?
        };
        let frame = &scene.frames[now];
        let mut out = Vec::new();
        for (pi, u, v) in self.query_points(scene, now, true)? {
            let point = &frame.points[pi];
            let track = point.track_id.as_deref().expect("filtered to tracked points");
            let positions: Option<Vec<[f64; 3]>> = targets
                .iter()
                .map(|&j| self.track_position(scene, track, j, now))
                .collect();
            let Some(positions) = positions else { continue };
            let cells: Result<Vec<GridIndex>, _> = positions.iter().map(|p| self.spec.quantize(*p)).collect();
            let Ok(cells) = cells else { continue };
            let category = point.category.clone().expect("filtered to labeled points");
            let tpl = self.draw(task, rng)?;
            let mut b = self.pixel_bindings(scene, now, u, v);
            b.insert("t", Binding::Decimal(TRACK_SPAN));
            let mut meta = self.meta(scene, now, tpl);
            meta.camera_id = Some(frame.calib_id.clone());
            meta.pixel = Some([u as f64, v as f64]);
            meta.source_ids = vec![track.to_string()];
            out.push(Draft {
                frames: window.clone(),
                question: fill_template(tpl, &b)?,
                answer: format!("{category} {}", encode_cells(&cells, self.vocab)?),
                gt: Some(StructuredGt::Track {
                    category,
                    timestamps: targets.iter().map(|&j| scene.frames[j].timestamp).collect(),
                    positions,
                    grids: cells.iter().map(GridIndex::as_array).collect(),
                }),
                meta,
            });
        }
        Ok(out)
    }

    fn planning(&self, scene: &Scene, now: usize, rng: &mut ChaCha8Rng) -> Result<Draft, QaError> {
        let none = || QaError::NoCandidates(format!("planning at frame {now}"));
        let frame = &scene.frames[now];
        let ego = frame.ego.as_ref().ok_or_else(none)?;
        let command = ego.command.ok_or_else(none)?;
        let here = ego.pose.ok_or_else(none)?;
        let inputs = self.frames_back(scene, now, PLAN_INPUTS, STEP).ok_or_else(none)?;
        let t0 = frame.timestamp;
        let mut timestamps = Vec::with_capacity(PLAN_WAYPOINTS);
        let mut points = Vec::with_capacity(PLAN_WAYPOINTS);
        let mut cells = Vec::with_capacity(PLAN_WAYPOINTS);
        for k in 1..=PLAN_WAYPOINTS {
            let j = self.frame_at(scene, t0 + STEP * k as f64).ok_or_else(none)?;
            let pose = scene.frames[j].ego.as_ref().and_then(|e| e.pose).ok_or_else(none)?;
            let local = to_frame([0.0, 0.0, 0.0], Some(pose), Some(here));
            let cell = self.spec.quantize([local[0], local[1], 0.0]).map_err(|_| none())?;
            timestamps.push(scene.frames[j].timestamp);
            points.push([local[0], local[1]]);
            cells.push(cell);
        }
        let tpl = self.draw(TaskKind::Planning, rng)?;
        let b = BTreeMap::from([
            ("direction", Binding::Text(command.phrase().to_string())),
            ("s", Binding::Decimal(ego.speed)),
        ]);
        let mut meta = self.meta(scene, now, tpl);
        meta.source_ids = vec![frame.image.clone()];
        Ok(Draft {
            frames: inputs,
            question: fill_template(tpl, &b)?,
            answer: encode_cells(&cells, self.vocab)?,
            gt: Some(StructuredGt::Trajectory {
                timestamps,
                points,
                grids: cells.iter().map(GridIndex::as_array).collect(),
            }),
            meta,
        })
    }

    /// Current-moment frame of each long-video window: one per full window
    /// length from the scene start.
    fn window_ends(&self, scene: &Scene) -> Vec<usize> {
        let (Some(first), Some(last)) = (scene.frames.first(), scene.frames.last()) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut j = 1;
        loop {
            let t = first.timestamp + self.config.window * j as f64;
            if t > last.timestamp + self.config.frame_tolerance {
                break;
            }
            if let Some(i) = self.frame_at(scene, t) {
                out.push(i);
            }
            j += 1;
        }
        out
    }

    /// 20 frames spread over the window ending at `now`.
    fn window_frames(&self, scene: &Scene, now: usize) -> Option<Vec<usize>> {
        let task = TaskKind::MomentRecap;
        let n = task.frame_count();
        self.frames_back(scene, now, n, task.frame_step())
    }

    fn window_draft(
        &self,
        task: TaskKind,
        scene: &Scene,
        now: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Draft, QaError> {
        let none = || QaError::NoCandidates(format!("{task} for window ending at frame {now}"));
        let frames = self.window_frames(scene, now).ok_or_else(none)?;
        let t_now = scene.frames[now].timestamp;
        let narrated = |lo: f64, hi: f64, lo_open: bool| -> Vec<usize> {
            scene
                .frames
                .iter()
                .enumerate()
                .filter(|(_, f)| f.narration.is_some())
                .filter(|(_, f)| {
                    let t = f.timestamp;
                    t <= hi && if lo_open { t > lo } else { t >= lo }
                })
                .map(|(i, _)| i)
                .collect()
        };
        let text = |i: usize| scene.frames[i].narration.clone().expect("filtered to narrated frames");
        match task {
            TaskKind::MomentRecap => {
                let cands = narrated(t_now - self.config.window, t_now - self.config.min_recap_gap, false);
                if cands.is_empty() {
                    return Err(none());
                }
                let pick = cands[rng.random_range(0..cands.len())];
                let offset = t_now - scene.frames[pick].timestamp;
                let tpl = self.draw(task, rng)?;
                let mut meta = self.meta(scene, now, tpl);
                meta.offset_s = Some(offset);
                meta.source_ids = vec![scene.frames[pick].image.clone()];
                Ok(Draft {
                    frames,
                    question: fill_template(tpl, &BTreeMap::from([("t", Binding::Decimal(offset))]))?,
                    answer: text(pick),
                    gt: None,
                    meta,
                })
            }
            TaskKind::ActivityPrediction => {
                let cands = narrated(t_now, t_now + self.config.max_prediction_lead, true);
                if cands.is_empty() {
                    return Err(none());
                }
                let pick = cands[rng.random_range(0..cands.len())];
                let lead = scene.frames[pick].timestamp - t_now;
                let tpl = self.draw(task, rng)?;
                let mut meta = self.meta(scene, now, tpl);
                meta.offset_s = Some(lead);
                meta.source_ids = vec![scene.frames[pick].image.clone()];
                Ok(Draft {
                    frames,
                    question: fill_template(tpl, &BTreeMap::from([("t", Binding::Decimal(lead))]))?,
                    answer: text(pick),
                    gt: None,
                    meta,
                })
            }
            TaskKind::EventQuery => {
                let cands = narrated(t_now - self.config.window, t_now, false);
                if cands.len() < 3 {
                    return Err(none());
                }
                let start = rng.random_range(0..cands.len() - 2);
                let (a, b, c) = (cands[start], cands[start + 1], cands[start + 2]);
                let tpl = self.draw(task, rng)?;
                let binds = BTreeMap::from([
                    ("event_a", Binding::Text(text(a))),
                    ("event_b", Binding::Text(text(c))),
                ]);
                let question = fill_template(tpl, &binds)?;
                if question.contains(&text(b)) {
                    return Err(none());
                }
                let mut meta = self.meta(scene, now, tpl);
                meta.source_ids = [a, b, c].iter().map(|&i| scene.frames[i].image.clone()).collect();
                Ok(Draft {
                    frames,
                    question,
                    answer: text(b),
                    gt: None,
                    meta,
                })
            }
            _ => Err(none()),
        }
    }
}

/// Signs seen in `past` frames, in first-seen order without repeats.
fn past_signs(scene: &Scene, past: &[usize]) -> Vec<String> {
    let mut seen = Vec::new();
    for &i in past {
        for s in scene.frames[i].traffic_signs.iter().flatten() {
            if !seen.contains(s) {
                seen.push(s.clone());
            }
        }
    }
    seen
}

/// Number of pairs per task, including tasks with none.
pub fn task_counts(pairs: &[QaPair], tasks: &BTreeSet<TaskKind>) -> BTreeMap<TaskKind, usize> {
    let mut out: BTreeMap<TaskKind, usize> = tasks.iter().map(|t| (*t, 0)).collect();
    for p in pairs {
        *out.entry(p.task).or_default() += 1;
    }
    out
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(pairs: &[QaPair], mut w: W) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_transform_round_trip() {
        let a = Some([3.0, -2.0, 0.7]);
        let b = Some([-1.0, 4.0, -1.2]);
        let p = [1.5, 2.5, 0.3];
        let q = to_frame(to_frame(p, a, b), b, a);
        for k in 0..3 {
            assert!((p[k] - q[k]).abs() < 1e-12);
        }
        assert_eq!(to_frame(p, a, None), p);
        // moving forward one meter puts a fixed point one meter closer
        let moved = to_frame([5.0, 0.0, 0.0], Some([0.0, 0.0, 0.0]), Some([1.0, 0.0, 0.0]));
        assert!((moved[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_by_scene_and_task() {
        assert_ne!(scene_seed(1, "a"), scene_seed(1, "b"));
        assert_eq!(scene_seed(1, "a"), scene_seed(1, "a"));
        let mut r1 = task_rng(5, TaskKind::Tracking);
        let mut r2 = task_rng(5, TaskKind::Planning);
        assert_ne!(r1.random::<u64>(), r2.random::<u64>());
    }
}

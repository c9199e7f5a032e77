//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use embodia_core::qa::synthetic::{front_camera, FRONT_CAMERA};
use embodia_core::qa::{FrameRecord, GenConfig, Generator, QaPair, Scene, TaskKind, TemplateBank};
use embodia_core::metrics::BoxAnswer;
use embodia_core::review::{Decision, MockCaptioner, NewItem, PromptKind, Store, StoreConfig, BLACKLIST_AT};
use embodia_core::spatial::{synthetic_base_vocab, CameraCalib, GridSpec, SpaceVocab};
use embodia_core::tensor::gradcheck::{finite_diff_check, flatten, GradReport};
use embodia_core::tensor::{mhca, Matrix};
use embodia_core::token_bank::{
    hard_select, soft_select_backward, soft_select_traced, BankConfig, BankParams, ProjectedStack, Selected, TextualTimestamps,
    TokenStack,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Env {
    pub spec: GridSpec,
    pub vocab: SpaceVocab,
    pub bank: TemplateBank,
    pub calibs: BTreeMap<String, CameraCalib>,
}

impl Env {
    pub fn new() -> Self {
        let spec = GridSpec::default();
        Env {
            vocab: SpaceVocab::build(&synthetic_base_vocab(1000), &spec).unwrap(),
            spec,
            bank: TemplateBank::builtin(),
            calibs: BTreeMap::from([(FRONT_CAMERA.to_string(), front_camera(FRONT_CAMERA))]),
        }
    }

    pub fn generator(&self, seed: u64) -> Generator<'_> {
        Generator {
            spec: &self.spec,
            vocab: &self.vocab,
            bank: &self.bank,
            calibs: &self.calibs,
            config: GenConfig {
                seed,
                ..GenConfig::default()
            },
        }
    }

    pub fn pairs(&self, task: TaskKind, scene: &Scene, seed: u64) -> Vec<QaPair> {
        self.generator(seed).task_pairs(task, scene, seed).unwrap()
    }
}

pub fn frame(t: f64) -> FrameRecord {
    FrameRecord {
        image: format!("img-{t:.1}"),
        timestamp: t,
        calib_id: FRONT_CAMERA.to_string(),
        points: Vec::new(),
        narration: None,
        traffic_signs: None,
        description: None,
        decision: None,
        ego: None,
    }
}

/// Frames every `step` seconds from 0 to `end` inclusive.
pub fn timeline(end: f64, step: f64) -> Vec<FrameRecord> {
    let n = (end / step).round() as usize;
    (0..=n).map(|k| frame(step * k as f64)).collect()
}

/// Literal greedy farthest-point selection, written independently of the
/// library: seed nearest the centroid, then repeatedly take the point with
/// the largest distance to the chosen set.
pub fn greedy_fps(points: &[[f64; 3]], threshold: f64, cap: usize) -> Vec<usize> {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    let dist = |p: &[f64; 3], q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let mut seed = 0;
    for i in 1..points.len() {
        if dist(&points[i], &c) < dist(&points[seed], &c) {
            seed = i;
        }
    }
    let mut chosen = vec![seed];
    while chosen.len() < cap {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&j| dist(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, d)) if d >= threshold => chosen.push(i),
            _ => break,
        }
    }
    chosen
}

/// Checks the frame contract of one pair against its scene. Returns a
/// description of the first violation.
pub fn frame_contract(pair: &QaPair, scene: &Scene) -> Result<(), String> {
    let task = pair.task;
    let n = task.frame_count();
    if pair.frames.len() != n {
        return Err(format!("{}: {} frames, expected {n}", pair.id, pair.frames.len()));
    }
    let (lo, hi) = (scene.frames[0].timestamp, scene.frames.last().unwrap().timestamp);
    for f in &pair.frames {
        if f.timestamp < lo || f.timestamp > hi {
            return Err(format!("{}: frame at {} outside scene", pair.id, f.timestamp));
        }
        if !scene.frames.iter().any(|r| r.image == f.image && r.timestamp == f.timestamp) {
            return Err(format!("{}: unknown frame {}", pair.id, f.image));
        }
    }
    let step = task.frame_step();
    for w in pair.frames.windows(2) {
        let gap = w[1].timestamp - w[0].timestamp;
        if (gap - step).abs() > 0.2 + 1e-9 {
            return Err(format!("{}: frame gap {gap}, expected {step}", pair.id));
        }
    }
    let last = pair.frames.last().unwrap().timestamp;
    if (last - pair.meta.now).abs() > 1e-9 {
        return Err(format!("{}: context ends at {last}, not at {}", pair.id, pair.meta.now));
    }
    if pair.structured_gt.is_some() != task.has_structured_gt() {
        return Err(format!("{}: structured_gt presence is wrong", pair.id));
    }
    Ok(())
}

// metric oracles

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Every injective map from `0..k` into `0..m` (k <= m).
pub fn injections(k: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..m {
            if !cur.contains(&j) {
                cur.push(j);
                go(k, m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(k, m, &mut Vec::new(), &mut out);
    out
}

pub fn predicate(p: &BoxAnswer, g: &BoxAnswer, k: f64) -> bool {
    let d2: f64 = (0..3).map(|i| (p.center[i] - g.center[i]).powi(2)).sum();
    let same = p.category.to_lowercase().split_whitespace().collect::<Vec<_>>()
        == g.category.to_lowercase().split_whitespace().collect::<Vec<_>>();
    d2.sqrt() < k && same
}

// camera

pub fn random_calib(rng: &mut ChaCha8Rng) -> CameraCalib {
    // rotation from a random unit quaternion
    let mut q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let mut e = [[0.0; 4]; 4];
    for i in 0..3 {
        e[i][..3].copy_from_slice(&r[i]);
        e[i][3] = rng.random_range(-2.0..2.0);
    }
    e[3][3] = 1.0;
    let k = [
        [rng.random_range(300.0..1500.0), rng.random_range(-1.0..1.0), rng.random_range(200.0..900.0)],
        [0.0, rng.random_range(300.0..1500.0), rng.random_range(200.0..600.0)],
        [0.0, 0.0, 1.0],
    ];
    CameraCalib::new("rand", k, e, None).unwrap()
}

// token bank

pub fn desk_config(seed: u64) -> BankConfig {
    BankConfig {
        visual_dim: 8,
        text_dim: 8,
        n_queries: 2,
        heads: 2,
        tokens_per_frame: 4,
        slot_iters: 3,
        seed,
    }
}

pub fn random_stack(t: usize, s: usize, d: usize, rng: &mut ChaCha8Rng) -> TokenStack {
    let frames = (0..t).map(|_| Matrix::seeded_uniform(s, d, 1, rng)).collect();
    let mut times: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..30.0)).collect();
    times.sort_by(f64::total_cmp);
    TokenStack::new(frames, times).unwrap()
}

pub fn random_projected(t: usize, s: usize, d: usize, rng: &mut ChaCha8Rng) -> ProjectedStack {
    ProjectedStack::new((0..t).map(|_| Matrix::seeded_uniform(s, d, 1, rng)).collect()).unwrap()
}

// review loop

pub fn items(prefix: &str, n: usize) -> Vec<NewItem> {
    (0..n)
        .map(|i| NewItem {
            id: format!("{prefix}-{i}"),
            image: format!("{prefix}-{i}"),
            prompt: [PromptKind::A, PromptKind::B, PromptKind::C][i % 3],
        })
        .collect()
}

/// One random operation; invalid ones are expected to fail cleanly.
pub fn random_step(s: &mut Store, rng: &mut ChaCha8Rng, step: usize) {
    let sources = ["yt-a", "yt-b", "yt-c", "dash-d"];
    let batches: Vec<String> = s.state().batches.keys().cloned().collect();
    match rng.random_range(0..10) {
        0..=2 => {
            let src = sources.choose(rng).unwrap();
            let n = rng.random_range(1..25);
            let _ = s.ingest(src, items(&format!("k{step}"), n)).unwrap();
        }
        3..=6 if !batches.is_empty() => {
            let b = batches.choose(rng).unwrap().clone();
            let sampled = s.state().batch(&b).unwrap().sampled_ids.clone();
            let d = if rng.random_bool(0.4) {
                Decision::Accept
            } else {
                let k = rng.random_range(0..=4.min(sampled.len() + 1));
                let mut worst: Vec<String> = sampled.choose_multiple(rng, k).cloned().collect();
                if rng.random_bool(0.1) {
                    worst.push("ghost".into());
                }
                Decision::Reject {
                    worst_item_ids: worst,
                    feedback: "blurry".into(),
                }
            };
            if rng.random_bool(0.3) {
                let _ = s.start_review(&b);
            }
            let _ = s.decide(&b, d);
        }
        7..=8 if !batches.is_empty() => {
            let b = batches.choose(rng).unwrap().clone();
            let images: Vec<String> = s.state().items.keys().filter(|_| rng.random_bool(0.2)).cloned().collect();
            let _ = s.request_relabel(&b, &MockCaptioner::failing(images));
        }
        _ => {
            if let Some(id) = s.state().items.keys().collect::<Vec<_>>().choose(rng).map(|s| s.to_string()) {
                let _ = s.edit_caption(&id, "fixed", "ed");
            }
        }
    }
}

pub fn run_machine(seed: u64, steps: usize, config: StoreConfig) -> Store {
    let mut s = Store::open(StoreConfig { seed, ..config }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in 0..steps {
        random_step(&mut s, &mut rng, step);
        s.state().check_invariants().unwrap_or_else(|e| panic!("step {step}: {e}"));
        let l = &s.state().ledger;
        for (src, n) in &l.return_counts {
            assert_eq!(*n >= BLACKLIST_AT, l.blacklist.contains(src));
        }
    }
    s
}

/// Central-difference check of every soft-selection gradient on a desk-sized
/// bank: T = 4 frames of S = 4 tokens, d = d' = 8, two queries, two heads.
pub fn soft_select_gradcheck(seed: u64) -> GradReport {
    let cfg = desk_config(seed);
    let bank = BankParams::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let stack = random_stack(4, 4, 8, &mut rng);
    let proj = random_projected(4, 4, 8, &mut rng);
    let prompt = Matrix::seeded_uniform(3, 8, 1, &mut rng);
    let g_out = Matrix::seeded_uniform(2, 8, 1, &mut rng);
    let text = bank.text.clone();
    let ts = TextualTimestamps(&text);

    let trace = soft_select_traced(&bank, &prompt, &stack, &proj, &ts).unwrap();
    let g = soft_select_backward(&bank, &prompt, &stack, &trace, &g_out).unwrap();
    let mut analytic = vec![g.queries.clone()];
    analytic.extend(g.prompt_attn.iter().cloned());
    analytic.extend(g.select_attn.iter().cloned());
    analytic.push(g.prompt.clone());
    analytic.extend(g.projected.iter().cloned());
    analytic.extend(g.stack.iter().cloned());
    let analytic = flatten(&analytic.iter().collect::<Vec<_>>());

    let mut tensors = vec![bank.queries.clone()];
    tensors.extend(bank.prompt_attn.tensors().into_iter().cloned());
    tensors.extend(bank.select_attn.tensors().into_iter().cloned());
    tensors.push(prompt.clone());
    tensors.extend(proj.frames().iter().cloned());
    tensors.extend(stack.frames().iter().cloned());
    let shapes: Vec<(usize, usize)> = tensors.iter().map(|m| m.shape()).collect();
    let point = flatten(&tensors.iter().collect::<Vec<_>>());

    finite_diff_check(
        |x| {
            let mut off = 0;
            let mut parts = Vec::new();
            for &(r, c) in &shapes {
                parts.push(Matrix::new(r, c, x[off..off + r * c].to_vec()).unwrap());
                off += r * c;
            }
            let mut b = bank.clone();
            b.queries = parts[0].clone();
            for (dst, src) in b.prompt_attn.tensors_mut().into_iter().zip(&parts[1..5]) {
                *dst = src.clone();
            }
            for (dst, src) in b.select_attn.tensors_mut().into_iter().zip(&parts[5..9]) {
                *dst = src.clone();
            }
            let p = &parts[9];
            let pj = ProjectedStack::new(parts[10..14].to_vec()).unwrap();
            let st = TokenStack::new(parts[14..18].to_vec(), stack.timestamps().to_vec()).unwrap();
            let out = soft_select_traced(&b, p, &st, &pj, &ts).unwrap();
            out.features().hadamard(&g_out).unwrap().sum()
        },
        &point,
        &analytic,
        1e-5,
    )
    .unwrap()
}

/// Builds a stack where frame `k` carries projected tokens along the mean
/// prompt-conditioned query, then asks hard selection for one frame.
pub fn planted_frame_wins(trial: u64, rng: &mut ChaCha8Rng) -> bool {
    let bank = BankParams::init(&desk_config(trial)).unwrap();
    let t = rng.random_range(2..10);
    let k = rng.random_range(0..t);
    let stack = random_stack(t, 4, 8, rng);
    let prompt = Matrix::seeded_uniform(rng.random_range(1..5), 8, 1, rng);
    let q = mhca(&bank.queries, &prompt, &prompt, &bank.prompt_attn).unwrap().output;
    let qbar = q.mean_rows();
    let norm = qbar.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    // random tokens have norm at most sqrt(8); the planted ones have 10
    let planted = Matrix::vstack(&vec![qbar.scale(10.0 / norm); 4]).unwrap();
    let mut frames: Vec<Matrix> = (0..t).map(|_| Matrix::seeded_uniform(4, 8, 1, rng)).collect();
    frames[k] = planted;
    let proj = ProjectedStack::new(frames).unwrap();
    let out = hard_select(&bank, &prompt, &stack, &proj, 1).unwrap();
    let Selected::Frames { indices, tokens } = out.selected else { return false };
    indices == vec![k] && tokens[0] == *stack.frame(k)
}

/// Linear-scan nearest timestamp, first index on ties.
pub fn nearest_oracle(times: &[f64], g: f64) -> usize {
    let best = times.iter().map(|x| (x - g).abs()).fold(f64::INFINITY, f64::min);
    times.iter().position(|x| (x - g).abs() == best).unwrap()
}

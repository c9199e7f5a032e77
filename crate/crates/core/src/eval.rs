//! Scores model predictions against generated QA pairs.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    ade_fde, corpus_bleu, cider, ngram_diversity, pr_at_k, pr_star_at_k, rouge_l, tokenize, BoxAnswer,
    MetricsError, BLEU_EPSILON, CIDER_SIGMA, ROUGE_BETA,
};
use crate::qa::{decode_answer, QaPair, StructuredGt, TaskKind};
use crate::spatial::{GridSpec, SpaceVocab};

pub const REPORT_FORMAT: &str = "embodia-eval/1";
pub const DEFAULT_K: [f64; 3] = [1.0, 2.0, 4.0];
/// Stand-in for a prediction whose text has no tokens; it matches nothing.
pub const EMPTY_TEXT: &str = "<empty>";

/// One line of a predictions file. Text is always accepted; localization
/// and planning answers may instead be given as numbers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Positions of a tracked object, for tracking and box prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Vec<[f64; 3]>>,
    /// Planned waypoints `[x, y]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<[f64; 2]>>,
}

impl Prediction {
    /// A prediction that repeats the ground truth exactly.
    pub fn echo(gt: &QaPair) -> Self {
        let mut p = Prediction {
            id: gt.id.clone(),
            text: Some(gt.answer.clone()),
            ..Default::default()
        };
        match &gt.structured_gt {
            Some(StructuredGt::Box { category, center, .. }) => {
                p.center = Some(*center);
                p.category = Some(category.clone());
            }
            Some(StructuredGt::Track { category, positions, .. }) => {
                p.track = Some(positions.clone());
                p.category = Some(category.clone());
            }
            Some(StructuredGt::Trajectory { points, .. }) => p.trajectory = Some(points.clone()),
            None => {}
        }
        p
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions")]
    NoPredictions,
    #[error("no ground truth")]
    NoGroundTruth,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("ids do not line up: {} missing predictions {:?}, {} unknown ids {:?}", missing.len(), missing, unexpected.len(), unexpected)]
    IdMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub k_values: Vec<f64>,
    /// Metric names to keep; empty keeps all.
    pub metrics: BTreeSet<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: DEFAULT_K.to_vec(),
            metrics: BTreeSet::new(),
        }
    }
}

/// Every metric name a report can contain under the default k values.
pub fn metric_names(k_values: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    for k in k_values {
        out.push(format!("pr@{k}"));
        out.push(format!("pr*@{k}"));
    }
    out.extend((1..=4).map(|n| format!("bleu_{n}")));
    out.extend(["bleu", "rouge_l", "cider_raw", "cider_rescaled", "ade", "fde"].map(String::from));
    out.extend((1..=4).map(|n| format!("diversity_{n}")));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// Rates and text scores on `[0, 1]`, raw CIDEr, or meters.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent: Option<f64>,
    /// Samples behind the value.
    pub n: usize,
}

impl MetricValue {
    fn scaled(value: f64, n: usize) -> Self {
        Self {
            value,
            percent: Some(100.0 * value),
            n,
        }
    }

    fn plain(value: f64, n: usize) -> Self {
        Self { value, percent: None, n }
    }
}

pub type MetricMap = BTreeMap<String, MetricValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k_values: Vec<f64>,
    pub bleu_epsilon: f64,
    pub rouge_beta: f64,
    pub cider_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub n_samples: usize,
    pub metrics: MetricMap,
    pub per_task: BTreeMap<TaskKind, MetricMap>,
    /// Predictions that could not be read as the answer their task needs.
    pub unscored: Vec<String>,
    pub config: ConfigEcho,
}

/// Turns answer tokens back into meters, when predictions only carry text.
pub struct Codec<'a> {
    pub spec: &'a GridSpec,
    pub vocab: &'a SpaceVocab,
}

impl Codec<'_> {
    fn cells(&self, text: &str) -> Option<(String, Vec<[f64; 3]>)> {
        let d = decode_answer(text, self.vocab).ok()?;
        let centers = d
            .cells
            .iter()
            .map(|c| self.spec.dequantize(*c).ok())
            .collect::<Option<Vec<_>>>()?;
        Some((d.category, centers))
    }
}

/// Pairs each ground truth with its prediction, rejecting any id mismatch.
pub fn align<'a>(preds: &'a [Prediction], gts: &'a [QaPair]) -> Result<Vec<(&'a QaPair, &'a Prediction)>, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let mut by_id = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
    }
    let gt_ids: BTreeSet<&str> = gts.iter().map(|g| g.id.as_str()).collect();
    if gt_ids.len() != gts.len() {
        let mut seen = BTreeSet::new();
        let dup = gts.iter().find(|g| !seen.insert(g.id.as_str())).expect("a duplicate exists");
        return Err(EvalError::DuplicateId(dup.id.clone()));
    }
    let missing: Vec<String> = gts
        .iter()
        .filter(|g| !by_id.contains_key(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    let unexpected: Vec<String> = preds
        .iter()
        .filter(|p| !gt_ids.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(EvalError::IdMismatch { missing, unexpected });
    }
    Ok(gts.iter().map(|g| (g, by_id[g.id.as_str()])).collect())
}

/// Localization samples: one box per answer position.
#[derive(Default)]
struct Boxes {
    preds: Vec<Option<BoxAnswer>>,
    gts: Vec<BoxAnswer>,
    /// Frame-level groups for the matched rate: (predictions, ground truths).
    groups: BTreeMap<(String, String), (Vec<BoxAnswer>, Vec<BoxAnswer>)>,
}

#[derive(Default)]
struct Texts {
    cands: Vec<String>,
    refs: Vec<Vec<String>>,
}

#[derive(Default)]
struct Trajectories {
    pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

#[derive(Default)]
struct Bucket {
    boxes: Boxes,
    texts: Texts,
    trajs: Trajectories,
}

fn box_answers(pred: &Prediction, gt: &QaPair, codec: Option<&Codec>) -> Option<(String, Vec<[f64; 3]>)> {
    let numeric = match gt.task {
        TaskKind::BoxDetection => pred.center.map(|c| vec![c]),
        _ => pred.track.clone(),
    };
    match (numeric, &pred.category) {
        (Some(c), Some(cat)) => Some((cat.clone(), c)),
        _ => codec.and_then(|c| c.cells(pred.text.as_deref()?)),
    }
}

impl Bucket {
    fn add(&mut self, gt: &QaPair, pred: &Prediction, codec: Option<&Codec>, unscored: &mut Vec<String>) {
        match &gt.structured_gt {
            Some(StructuredGt::Box { category, center, .. }) => {
                let g = BoxAnswer::new(*center, category);
                let p = box_answers(pred, gt, codec)
                    .and_then(|(cat, c)| c.first().map(|c| BoxAnswer::new(*c, &cat)))
                    .filter(|b| b.center.iter().all(|v| v.is_finite()));
                if p.is_none() {
                    unscored.push(gt.id.clone());
                }
                let key = (gt.meta.scene_id.clone(), format!("{}@{}", gt.meta.camera_id.as_deref().unwrap_or(""), gt.meta.now));
                let group = self.boxes.groups.entry(key).or_default();
                group.1.push(g.clone());
                group.0.extend(p.clone());
                self.boxes.preds.push(p);
                self.boxes.gts.push(g);
            }
            Some(StructuredGt::Track { category, positions, .. }) => {
                let p = box_answers(pred, gt, codec);
                if p.is_none() {
                    unscored.push(gt.id.clone());
                }
                for (i, pos) in positions.iter().enumerate() {
                    self.boxes.gts.push(BoxAnswer::new(*pos, category));
                    let b = p
                        .as_ref()
                        .and_then(|(cat, c)| c.get(i).map(|c| BoxAnswer::new(*c, cat)))
                        .filter(|b| b.center.iter().all(|v| v.is_finite()));
                    self.boxes.preds.push(b);
                }
            }
            Some(StructuredGt::Trajectory { points, .. }) => {
                let p: Option<Vec<[f64; 2]>> = pred.trajectory.clone().or_else(|| {
                    let (_, cells) = codec?.cells(pred.text.as_deref()?)?;
                    Some(cells.iter().map(|c| [c[0], c[1]]).collect())
                });
                match p {
                    Some(p) if p.len() == points.len() && p.iter().flatten().all(|v| v.is_finite()) => {
                        self.trajs.pairs.push((
                            p.iter().map(|x| x.to_vec()).collect(),
                            points.iter().map(|x| x.to_vec()).collect(),
                        ));
                    }
                    _ => unscored.push(gt.id.clone()),
                }
            }
            None => {
                let text = pred.text.clone().unwrap_or_default();
                let text = if tokenize(&text).is_empty() { EMPTY_TEXT.to_string() } else { text };
                self.texts.cands.push(text);
                self.texts.refs.push(vec![gt.answer.clone()]);
            }
        }
    }

    fn score(&self, k_values: &[f64]) -> Result<MetricMap, EvalError> {
        let mut m = MetricMap::new();
        let b = &self.boxes;
        if !b.gts.is_empty() {
            let n = b.gts.len();
            let (rp, rg): (Vec<BoxAnswer>, Vec<BoxAnswer>) = b
                .preds
                .iter()
                .zip(&b.gts)
                .filter_map(|(p, g)| Some((p.clone()?, g.clone())))
                .unzip();
            for &k in k_values {
                let resolved = if rg.is_empty() { 0.0 } else { pr_at_k(&rp, &rg, k)? * rg.len() as f64 / 100.0 };
                m.insert(format!("pr@{k}"), MetricValue::scaled(resolved / n as f64, n));
            }
            if !b.groups.is_empty() {
                let total: usize = b.groups.values().map(|(_, g)| g.len()).sum();
                for &k in k_values {
                    let mut hits = 0.0;
                    for (p, g) in b.groups.values() {
                        hits += pr_star_at_k(p, g, k)? * g.len() as f64 / 100.0;
                    }
                    m.insert(format!("pr*@{k}"), MetricValue::scaled(hits / total as f64, total));
                }
            }
        }
        let t = &self.texts;
        if !t.cands.is_empty() {
            let n = t.cands.len();
            let bleu = corpus_bleu(&t.cands, &t.refs)?;
            for (i, v) in bleu.per_n.iter().enumerate() {
                m.insert(format!("bleu_{}", i + 1), MetricValue::scaled(*v, n));
            }
            m.insert("bleu".into(), MetricValue::scaled(bleu.aggregate, n));
            let rouge: Vec<f64> = t
                .cands
                .par_iter()
                .zip(&t.refs)
                .map(|(c, r)| rouge_l(c, r))
                .collect::<Result<_, _>>()?;
            m.insert("rouge_l".into(), MetricValue::scaled(rouge.iter().sum::<f64>() / n as f64, n));
            if n >= 2 {
                let c = cider(&t.cands, &t.refs)?;
                m.insert("cider_raw".into(), MetricValue::plain(c.raw, n));
                m.insert("cider_rescaled".into(), MetricValue::scaled(c.rescaled, n));
            }
            for order in 1..=4 {
                match ngram_diversity(&t.cands, order) {
                    Ok(v) => {
                        m.insert(format!("diversity_{order}"), MetricValue::scaled(v, n));
                    }
                    Err(MetricsError::NoNgrams(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if !self.trajs.pairs.is_empty() {
            let n = self.trajs.pairs.len();
            let (mut ade, mut fde) = (0.0, 0.0);
            for (p, g) in &self.trajs.pairs {
                let (a, f) = ade_fde(p, g)?;
                ade += a;
                fde += f;
            }
            m.insert("ade".into(), MetricValue::plain(ade / n as f64, n));
            m.insert("fde".into(), MetricValue::plain(fde / n as f64, n));
        }
        Ok(m)
    }
}

/// Scores aligned predictions. `codec` lets text-only predictions of
/// localization and planning pairs be decoded into meters.
pub fn evaluate(
    preds: &[Prediction],
    gts: &[QaPair],
    config: &EvalConfig,
    codec: Option<&Codec>,
) -> Result<Report, EvalError> {
    let known = metric_names(&config.k_values);
    if let Some(bad) = config.metrics.iter().find(|m| !known.contains(m)) {
        return Err(EvalError::UnknownMetric(bad.clone()));
    }
    let pairs = align(preds, gts)?;
    let mut all = Bucket::default();
    let mut tasks: BTreeMap<TaskKind, Bucket> = BTreeMap::new();
    let mut unscored = Vec::new();
    for (gt, pred) in &pairs {
        let mut ignore = Vec::new();
        all.add(gt, pred, codec, &mut unscored);
        tasks.entry(gt.task).or_default().add(gt, pred, codec, &mut ignore);
    }
    let keep = |mut m: MetricMap| {
        if !config.metrics.is_empty() {
            m.retain(|k, _| config.metrics.contains(k));
        }
        m
    };
    let per_task = tasks
        .iter()
        .map(|(t, b)| Ok((*t, keep(b.score(&config.k_values)?))))
        .collect::<Result<_, EvalError>>()?;
    Ok(Report {
        format: REPORT_FORMAT.to_string(),
        n_samples: pairs.len(),
        metrics: keep(all.score(&config.k_values)?),
        per_task,
        unscored,
        config: ConfigEcho {
            k_values: config.k_values.clone(),
            bleu_epsilon: BLEU_EPSILON,
            rouge_beta: ROUGE_BETA,
            cider_sigma: CIDER_SIGMA,
            seed: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::{FrameRef, QaMeta};

    fn text_pair(id: &str, answer: &str) -> QaPair {
        QaPair {
            id: id.into(),
            task: TaskKind::SurroundingNarration,
            frames: vec![FrameRef {
                image: "a".into(),
                timestamp: 0.0,
            }],
            question: "q".into(),
            answer: answer.into(),
            structured_gt: None,
            meta: QaMeta::default(),
        }
    }

    #[test]
    fn mismatched_ids_are_listed() {
        let gts = vec![text_pair("a", "x y"), text_pair("b", "y z")];
        let preds = vec![Prediction::echo(&gts[0]), Prediction { id: "c".into(), ..Default::default() }];
        match evaluate(&preds, &gts, &EvalConfig::default(), None) {
            Err(EvalError::IdMismatch { missing, unexpected }) => {
                assert_eq!(missing, ["b"]);
                assert_eq!(unexpected, ["c"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(evaluate(&[], &gts, &EvalConfig::default(), None), Err(EvalError::NoPredictions)));
    }

    #[test]
    fn empty_text_scores_zero_without_failing() {
        let gts = vec![text_pair("a", "a red light"), text_pair("b", "a green car")];
        let preds = vec![
            Prediction { id: "a".into(), text: Some("  ".into()), ..Default::default() },
            Prediction::echo(&gts[1]),
        ];
        let r = evaluate(&preds, &gts, &EvalConfig::default(), None).unwrap();
        assert!((r.metrics["rouge_l"].value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metric_filter() {
        let gts = vec![text_pair("a", "x y"), text_pair("b", "y z")];
        let preds: Vec<_> = gts.iter().map(Prediction::echo).collect();
        let cfg = EvalConfig {
            metrics: BTreeSet::from(["rouge_l".to_string()]),
            ..Default::default()
        };
        let r = evaluate(&preds, &gts, &cfg, None).unwrap();
        assert_eq!(r.metrics.keys().collect::<Vec<_>>(), ["rouge_l"]);
        let cfg = EvalConfig {
            metrics: BTreeSet::from(["nope".to_string()]),
            ..Default::default()
        };
        assert!(matches!(evaluate(&preds, &gts, &cfg, None), Err(EvalError::UnknownMetric(_))));
    }
}

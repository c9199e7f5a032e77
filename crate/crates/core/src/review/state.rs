use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PromptKind, ReviewError};

/// Returns at which a source is blacklisted.
pub const BLACKLIST_AT: u32 = 5;
/// Most items an inspector may flag in one rejection.
pub const MAX_WORST: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Unlabeled,
    Labeled,
    Approved,
    Returned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionVersion {
    pub caption: String,
    /// `captioner` or the editing inspector.
    pub author: String,
    /// Sequence number of the event that wrote it.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelItem {
    pub id: String,
    pub image: String,
    pub source_id: String,
    pub caption: Option<String>,
    pub prompt: PromptKind,
    pub state: ItemState,
    pub history: Vec<CaptionVersion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Image quality check before captioning.
    RawQc,
    /// Caption quality check.
    CaptionQc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Pending,
    InReview,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub id: String,
    pub stage: Stage,
    pub item_ids: Vec<String>,
    pub sampled_ids: Vec<String>,
    pub status: BatchStatus,
    pub feedback: Option<String>,
    pub worst_ids: Vec<String>,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SourceLedger {
    pub return_counts: BTreeMap<String, u32>,
    pub blacklist: BTreeSet<String>,
}

impl SourceLedger {
    fn mark_returned(&mut self, source: &str) {
        let n = self.return_counts.entry(source.to_string()).or_default();
        *n += 1;
        if *n >= BLACKLIST_AT {
            self.blacklist.insert(source.to_string());
        }
    }

    /// Whether the blacklist is exactly the set of sources at the limit.
    pub fn consistent(&self) -> bool {
        let want: BTreeSet<&String> = self
            .return_counts
            .iter()
            .filter(|(_, &n)| n >= BLACKLIST_AT)
            .map(|(s, _)| s)
            .collect();
        want == self.blacklist.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewItem {
    pub id: String,
    pub image: String,
    #[serde(default = "default_prompt")]
    pub prompt: PromptKind,
}

fn default_prompt() -> PromptKind {
    PromptKind::A
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject { worst_item_ids: Vec<String>, feedback: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Ingested {
        source_id: String,
        items: Vec<NewItem>,
    },
    BatchCreated {
        batch_id: String,
        stage: Stage,
        item_ids: Vec<String>,
        sampled_ids: Vec<String>,
    },
    ReviewStarted {
        batch_id: String,
    },
    Decided {
        batch_id: String,
        decision: Decision,
    },
    Captioned {
        item_id: String,
        caption: String,
    },
    CaptionEdited {
        item_id: String,
        caption: String,
        editor: String,
    },
    Requeued {
        batch_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum IngestOutcome {
    Accepted { batch_id: String },
    Refused { reason: String },
}

/// Items to inspect in a batch of `n`: a tenth, rounded up.
pub fn sample_size(n: usize) -> usize {
    n.div_ceil(10)
}

/// Seeded uniform sample of `sample_size(ids.len())` ids, kept in batch
/// order.
pub fn sample_ids(ids: &[String], seed: u64, batch_id: &str) -> Vec<String> {
    let digest = Sha256::digest(batch_id.as_bytes());
    let mix = u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix);
    let mut picks = sample(&mut rng, ids.len(), sample_size(ids.len())).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| ids[i].clone()).collect()
}

/// Everything the review loop knows, rebuilt by folding events.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReviewState {
    pub items: BTreeMap<String, LabelItem>,
    pub batches: BTreeMap<String, Batch>,
    pub ledger: SourceLedger,
    pub next_batch: u64,
    /// Sequence number of the last applied event.
    pub seq: u64,
}

fn corrupt(msg: impl Into<String>) -> ReviewError {
    ReviewError::Corrupt(msg.into())
}

impl ReviewState {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, ReviewError> {
        let mut s = Self::default();
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    pub fn batch(&self, id: &str) -> Result<&Batch, ReviewError> {
        self.batches.get(id).ok_or_else(|| ReviewError::UnknownBatch(id.to_string()))
    }

    pub fn item(&self, id: &str) -> Result<&LabelItem, ReviewError> {
        self.items.get(id).ok_or_else(|| ReviewError::UnknownItem(id.to_string()))
    }

    fn batch_mut(&mut self, id: &str) -> Result<&mut Batch, ReviewError> {
        self.batches.get_mut(id).ok_or_else(|| corrupt(format!("unknown batch {id}")))
    }

    fn item_mut(&mut self, id: &str) -> Result<&mut LabelItem, ReviewError> {
        self.items.get_mut(id).ok_or_else(|| corrupt(format!("unknown item {id}")))
    }

    pub fn new_batch_id(&self) -> String {
        format!("b{:06}", self.next_batch)
    }

    /// Applies one event. Events are validated when planned, so an error
    /// here means the log is damaged.
    pub fn apply(&mut self, event: &Event) -> Result<(), ReviewError> {
        self.seq += 1;
        let seq = self.seq;
        match event {
            Event::Ingested { source_id, items } => {
                for it in items {
                    if self.items.contains_key(&it.id) {
                        return Err(corrupt(format!("item {} ingested twice", it.id)));
                    }
                    self.items.insert(
                        it.id.clone(),
                        LabelItem {
                            id: it.id.clone(),
                            image: it.image.clone(),
                            source_id: source_id.clone(),
                            caption: None,
                            prompt: it.prompt,
                            state: ItemState::Unlabeled,
                            history: Vec::new(),
                        },
                    );
                }
            }
            Event::BatchCreated {
                batch_id,
                stage,
                item_ids,
                sampled_ids,
            } => {
                if self.batches.contains_key(batch_id) {
                    return Err(corrupt(format!("batch {batch_id} created twice")));
                }
                self.batches.insert(
                    batch_id.clone(),
                    Batch {
                        id: batch_id.clone(),
                        stage: *stage,
                        item_ids: item_ids.clone(),
                        sampled_ids: sampled_ids.clone(),
                        status: BatchStatus::Pending,
                        feedback: None,
                        worst_ids: Vec::new(),
                        round: 0,
                    },
                );
                self.next_batch += 1;
            }
            Event::ReviewStarted { batch_id } => self.batch_mut(batch_id)?.status = BatchStatus::InReview,
            Event::Decided { batch_id, decision } => {
                let batch = self.batch_mut(batch_id)?;
                let stage = batch.stage;
                let items = batch.item_ids.clone();
                match decision {
                    Decision::Accept => {
                        batch.status = BatchStatus::Accepted;
                        if stage == Stage::CaptionQc {
                            for id in &items {
                                let it = self.item_mut(id)?;
                                if it.caption.is_none() {
                                    return Err(corrupt(format!("approving uncaptioned item {id}")));
                                }
                                it.state = ItemState::Approved;
                            }
                        }
                    }
                    Decision::Reject {
                        worst_item_ids,
                        feedback,
                    } => {
                        batch.status = BatchStatus::Rejected;
                        batch.round += 1;
                        batch.feedback = Some(feedback.clone());
                        batch.worst_ids = worst_item_ids.clone();
                        let returned = match stage {
                            Stage::RawQc => items,
                            Stage::CaptionQc => worst_item_ids.clone(),
                        };
                        let mut sources = BTreeSet::new();
                        for id in &returned {
                            let it = self.item_mut(id)?;
                            it.state = ItemState::Returned;
                            sources.insert(it.source_id.clone());
                        }
                        for s in sources {
                            self.ledger.mark_returned(&s);
                        }
                    }
                }
            }
            Event::Captioned { item_id, caption } => {
                let it = self.item_mut(item_id)?;
                it.caption = Some(caption.clone());
                it.state = ItemState::Labeled;
                it.history.push(CaptionVersion {
                    caption: caption.clone(),
                    author: "captioner".into(),
                    seq,
                });
            }
            Event::CaptionEdited { item_id, caption, editor } => {
                let it = self.item_mut(item_id)?;
                it.caption = Some(caption.clone());
                it.history.push(CaptionVersion {
                    caption: caption.clone(),
                    author: editor.clone(),
                    seq,
                });
            }
            Event::Requeued { batch_id } => self.batch_mut(batch_id)?.status = BatchStatus::Pending,
        }
        Ok(())
    }

    /// Events for a new raw batch from `source`, or a refusal when the
    /// source is blacklisted.
    pub fn plan_ingest(
        &self,
        source_id: &str,
        items: Vec<NewItem>,
        seed: u64,
    ) -> Result<(IngestOutcome, Vec<Event>), ReviewError> {
        if self.ledger.blacklist.contains(source_id) {
            let n = self.ledger.return_counts.get(source_id).copied().unwrap_or(0);
            return Ok((
                IngestOutcome::Refused {
                    reason: format!("source {source_id} is blacklisted after {n} returns"),
                },
                Vec::new(),
            ));
        }
        if items.is_empty() {
            return Err(ReviewError::Empty("item list"));
        }
        let mut seen = BTreeSet::new();
        for it in &items {
            if self.items.contains_key(&it.id) || !seen.insert(it.id.as_str()) {
                return Err(ReviewError::DuplicateItem(it.id.clone()));
            }
        }
        let batch_id = self.new_batch_id();
        let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
        let sampled_ids = sample_ids(&ids, seed, &batch_id);
        let events = vec![
            Event::Ingested {
                source_id: source_id.to_string(),
                items,
            },
            Event::BatchCreated {
                batch_id: batch_id.clone(),
                stage: Stage::RawQc,
                item_ids: ids,
                sampled_ids,
            },
        ];
        Ok((IngestOutcome::Accepted { batch_id }, events))
    }

    pub fn plan_start_review(&self, batch_id: &str) -> Result<Vec<Event>, ReviewError> {
        let b = self.batch(batch_id)?;
        if b.status != BatchStatus::Pending {
            return Err(ReviewError::InvalidTransition {
                batch: b.id.clone(),
                status: b.status,
                action: "start review",
            });
        }
        Ok(vec![Event::ReviewStarted {
            batch_id: batch_id.to_string(),
        }])
    }

    /// Events for an inspector decision. Accepting a raw batch also opens
    /// its caption batch.
    pub fn plan_decision(&self, batch_id: &str, decision: Decision, seed: u64) -> Result<Vec<Event>, ReviewError> {
        let b = self.batch(batch_id)?;
        if !matches!(b.status, BatchStatus::Pending | BatchStatus::InReview) {
            return Err(ReviewError::InvalidTransition {
                batch: b.id.clone(),
                status: b.status,
                action: "take a decision",
            });
        }
        if b.stage == Stage::CaptionQc {
            if let Some(id) = b.item_ids.iter().find(|id| self.items[*id].state != ItemState::Labeled) {
                return Err(ReviewError::InvalidDecision(format!("item {id} has no caption to review yet")));
            }
        }
        if let Decision::Reject {
            worst_item_ids,
            feedback,
        } = &decision
        {
            let distinct: BTreeSet<&String> = worst_item_ids.iter().collect();
            if distinct.is_empty() || distinct.len() > MAX_WORST || distinct.len() != worst_item_ids.len() {
                return Err(ReviewError::InvalidDecision(format!(
                    "a rejection flags 1 to {MAX_WORST} distinct items, got {}",
                    worst_item_ids.len()
                )));
            }
            if let Some(id) = worst_item_ids.iter().find(|id| !b.sampled_ids.contains(id)) {
                return Err(ReviewError::InvalidDecision(format!("item {id} was not sampled for inspection")));
            }
            if feedback.trim().is_empty() {
                return Err(ReviewError::InvalidDecision("a rejection needs feedback".into()));
            }
        }
        let mut events = vec![Event::Decided {
            batch_id: batch_id.to_string(),
            decision: decision.clone(),
        }];
        if b.stage == Stage::RawQc && decision == Decision::Accept {
            let next = self.new_batch_id();
            events.push(Event::BatchCreated {
                sampled_ids: sample_ids(&b.item_ids, seed, &next),
                batch_id: next,
                stage: Stage::CaptionQc,
                item_ids: b.item_ids.clone(),
            });
        }
        Ok(events)
    }

    /// Items of a caption batch the captioner should (re)label now.
    pub fn caption_targets(&self, batch_id: &str) -> Result<Vec<&LabelItem>, ReviewError> {
        let b = self.batch(batch_id)?;
        let want = match (b.stage, b.status) {
            (Stage::CaptionQc, BatchStatus::Pending) => ItemState::Unlabeled,
            (Stage::CaptionQc, BatchStatus::Rejected) => ItemState::Returned,
            _ => {
                return Err(ReviewError::InvalidTransition {
                    batch: b.id.clone(),
                    status: b.status,
                    action: "request captions",
                })
            }
        };
        Ok(b.item_ids.iter().map(|id| &self.items[id]).filter(|it| it.state == want).collect())
    }

    /// Events for captions obtained for `batch_id`. A rejected batch goes
    /// back to review once none of its items is still returned.
    pub fn plan_captions(&self, batch_id: &str, captions: &[(String, String)]) -> Result<Vec<Event>, ReviewError> {
        let b = self.batch(batch_id)?;
        let targets: BTreeSet<&str> = self.caption_targets(batch_id)?.iter().map(|i| i.id.as_str()).collect();
        let mut events = Vec::new();
        for (id, caption) in captions {
            if !targets.contains(id.as_str()) {
                return Err(ReviewError::InvalidDecision(format!("item {id} is not awaiting a caption")));
            }
            events.push(Event::Captioned {
                item_id: id.clone(),
                caption: caption.clone(),
            });
        }
        let done: BTreeSet<&str> = captions.iter().map(|(id, _)| id.as_str()).collect();
        if b.status == BatchStatus::Rejected && !captions.is_empty() && targets.iter().all(|t| done.contains(t)) {
            events.push(Event::Requeued {
                batch_id: batch_id.to_string(),
            });
        }
        Ok(events)
    }

    pub fn plan_edit(&self, item_id: &str, caption: &str, editor: &str) -> Result<Vec<Event>, ReviewError> {
        let it = self.item(item_id)?;
        if caption.trim().is_empty() {
            return Err(ReviewError::InvalidDecision("caption must not be empty".into()));
        }
        if !matches!(it.state, ItemState::Labeled | ItemState::Approved) {
            return Err(ReviewError::InvalidDecision(format!(
                "item {item_id} is {:?} and has no caption to edit",
                it.state
            )));
        }
        Ok(vec![Event::CaptionEdited {
            item_id: item_id.to_string(),
            caption: caption.to_string(),
            editor: editor.to_string(),
        }])
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.ledger.consistent() {
            return Err(format!("blacklist out of sync: {:?}", self.ledger));
        }
        for b in self.batches.values() {
            if b.sampled_ids.len() != sample_size(b.item_ids.len()) {
                return Err(format!("batch {} samples {} of {}", b.id, b.sampled_ids.len(), b.item_ids.len()));
            }
            if b.sampled_ids.iter().any(|s| !b.item_ids.contains(s)) {
                return Err(format!("batch {} samples outside itself", b.id));
            }
        }
        for it in self.items.values() {
            if it.state == ItemState::Approved {
                if it.caption.is_none() {
                    return Err(format!("approved item {} has no caption", it.id));
                }
                let accepted = self.batches.values().any(|b| {
                    b.stage == Stage::CaptionQc && b.status == BatchStatus::Accepted && b.item_ids.contains(&it.id)
                });
                if !accepted {
                    return Err(format!("approved item {} is in no accepted batch", it.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_ids(&ids(10), 0, "b").len(), 1);
        assert_eq!(sample_ids(&ids(95), 0, "b").len(), 10);
        assert_eq!(sample_ids(&ids(1), 0, "b").len(), 1);
        assert_eq!(sample_ids(&ids(95), 3, "b"), sample_ids(&ids(95), 3, "b"));
        assert_ne!(sample_ids(&ids(95), 3, "b"), sample_ids(&ids(95), 4, "b"));
    }

    #[test]
    fn fifth_return_blacklists() {
        let mut l = SourceLedger::default();
        for k in 1..=5 {
            l.mark_returned("yt");
            assert_eq!(l.blacklist.contains("yt"), k == 5);
            assert!(l.consistent());
        }
    }
}

mod common;

use common::{items, run_machine};
use embodia_core::review::{
    sample_size, BatchStatus, CaptionError, CaptionRequest, Captioner, Decision, Event, IngestOutcome, ItemState,
    MockCaptioner, ReviewError, ReviewState, Stage, Store, StoreConfig, BLACKLIST_AT,
};
use proptest::prelude::*;


fn accepted(o: IngestOutcome) -> String {
    match o {
        IngestOutcome::Accepted { batch_id } => batch_id,
        IngestOutcome::Refused { reason } => panic!("{reason}"),
    }
}

/// Ingests, passes raw review and captions everything; returns the caption
/// batch id.
fn captioned_batch(s: &mut Store, prefix: &str, source: &str, n: usize) -> String {
    let raw = accepted(s.ingest(source, items(prefix, n)).unwrap());
    s.decide(&raw, Decision::Accept).unwrap();
    let cap = s.state().batches.keys().last().unwrap().clone();
    assert_eq!(s.state().batch(&cap).unwrap().stage, Stage::CaptionQc);
    s.request_relabel(&cap, &MockCaptioner::default()).unwrap();
    cap
}

fn reject(s: &Store, batch: &str, k: usize) -> Decision {
    let b = s.state().batch(batch).unwrap();
    Decision::Reject {
        worst_item_ids: b.sampled_ids.iter().take(k).cloned().collect(),
        feedback: "the red light is mislabeled".into(),
    }
}

#[test]
fn sample_sizes_follow_ceiling() {
    let mut s = Store::in_memory(0);
    for (n, want) in [(10, 1), (95, 10), (1, 1), (11, 2), (100, 10)] {
        let b = accepted(s.ingest(&format!("s{n}"), items(&format!("n{n}"), n)).unwrap());
        let batch = s.state().batch(&b).unwrap();
        assert_eq!(batch.sampled_ids.len(), want);
        assert_eq!(want, sample_size(n));
    }
    // same seed and inputs give the same samples
    let mut a = Store::in_memory(9);
    let mut b = Store::in_memory(9);
    let x = accepted(a.ingest("s", items("z", 95)).unwrap());
    let y = accepted(b.ingest("s", items("z", 95)).unwrap());
    assert_eq!(a.state().batch(&x).unwrap().sampled_ids, b.state().batch(&y).unwrap().sampled_ids);
}

#[test]
fn accept_makes_items_exportable() {
    let mut s = Store::in_memory(2);
    let cap = captioned_batch(&mut s, "a", "cam", 8);
    assert!(s.export().is_empty());
    s.start_review(&cap).unwrap();
    s.decide(&cap, Decision::Accept).unwrap();
    let out = s.export();
    assert_eq!(out.len(), 8);
    assert!(out.windows(2).all(|w| w[0].id < w[1].id));
    let mut first = Vec::new();
    let mut second = Vec::new();
    s.export_jsonl(&mut first).unwrap();
    s.export_jsonl(&mut second).unwrap();
    assert_eq!(first, second);
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 8);
    let mut empty = Vec::new();
    Store::in_memory(0).export_jsonl(&mut empty).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn fifth_return_blacklists_and_refuses_ingest() {
    let mut s = Store::in_memory(3);
    for k in 0..BLACKLIST_AT {
        let raw = accepted(s.ingest("channel-7", items(&format!("r{k}"), 10)).unwrap());
        s.decide(&raw, reject(&s, &raw, 1)).unwrap();
        let count = s.state().ledger.return_counts["channel-7"];
        assert_eq!(count, k + 1);
        assert_eq!(s.state().ledger.blacklist.contains("channel-7"), count >= BLACKLIST_AT);
        // raw rejection returns the whole set
        let b = s.state().batch(&raw).unwrap();
        assert!(b.item_ids.iter().all(|id| s.state().items[id].state == ItemState::Returned));
    }
    match s.ingest("channel-7", items("late", 3)).unwrap() {
        IngestOutcome::Refused { reason } => assert!(reason.contains("blacklisted")),
        other => panic!("{other:?}"),
    }
    accepted(s.ingest("channel-8", items("fresh", 3)).unwrap());
}

#[test]
fn decision_bounds_are_enforced() {
    let mut s = Store::in_memory(4);
    let cap = captioned_batch(&mut s, "d", "src", 40);
    let sampled = s.state().batch(&cap).unwrap().sampled_ids.clone();
    let bad = |ids: Vec<String>, fb: &str| Decision::Reject {
        worst_item_ids: ids,
        feedback: fb.into(),
    };
    for d in [
        bad(vec![], "x"),
        bad(sampled.clone(), "x"),
        bad(vec!["d-nope".into()], "x"),
        bad(vec![sampled[0].clone()], "  "),
        bad(vec![sampled[0].clone(), sampled[0].clone()], "x"),
    ] {
        assert!(matches!(s.decide(&cap, d), Err(ReviewError::InvalidDecision(_))));
    }
    s.decide(&cap, reject(&s, &cap, 3)).unwrap();
    assert!(matches!(s.decide(&cap, Decision::Accept), Err(ReviewError::InvalidTransition { .. })));
    assert!(matches!(s.decide("b999", Decision::Accept), Err(ReviewError::UnknownBatch(_))));
}

#[test]
fn caption_batch_waits_for_captions() {
    let mut s = Store::in_memory(5);
    let raw = accepted(s.ingest("src", items("w", 5)).unwrap());
    s.decide(&raw, Decision::Accept).unwrap();
    let cap = s.state().batches.keys().last().unwrap().clone();
    assert!(matches!(s.decide(&cap, Decision::Accept), Err(ReviewError::InvalidDecision(_))));
}

#[test]
fn mock_captioner_labels_returned_items() {
    let mut s = Store::in_memory(6);
    let cap = captioned_batch(&mut s, "m", "src", 30);
    s.decide(&cap, reject(&s, &cap, 3)).unwrap();
    let returned: Vec<String> = s.state().batch(&cap).unwrap().worst_ids.clone();
    let report = s.request_relabel(&cap, &MockCaptioner::default()).unwrap();
    assert_eq!(report.relabeled, returned);
    assert!(report.requeued);
    for id in &returned {
        let it = &s.state().items[id];
        assert_eq!(it.caption.as_deref(), Some(format!("caption:{id}").as_str()));
        assert_eq!(it.state, ItemState::Labeled);
    }
    assert_eq!(s.state().batch(&cap).unwrap().status, BatchStatus::Pending);
}

/// Records every request it sees.
struct Recording(std::sync::Mutex<Vec<CaptionRequest>>);

impl Captioner for Recording {
    fn caption(&self, r: &CaptionRequest) -> Result<String, CaptionError> {
        self.0.lock().unwrap().push(r.clone());
        Ok(format!("v2 {}", r.image_ref))
    }
}

#[test]
fn relabel_requests_carry_prompt_and_feedback() {
    let mut s = Store::in_memory(7);
    let cap = captioned_batch(&mut s, "f", "src", 20);
    s.decide(&cap, reject(&s, &cap, 2)).unwrap();
    let rec = Recording(Default::default());
    s.request_relabel(&cap, &rec).unwrap();
    let seen = rec.0.into_inner().unwrap();
    assert_eq!(seen.len(), 2);
    for r in seen {
        assert_eq!(r.feedback.as_deref(), Some("the red light is mislabeled"));
        let item = s.state().items.values().find(|i| i.image == r.image_ref).unwrap();
        assert_eq!(r.prompt, item.prompt.prompt());
    }
}

#[test]
fn partial_captioner_failure_keeps_batch_rejected() {
    let mut s = Store::in_memory(8);
    let cap = captioned_batch(&mut s, "p", "src", 30);
    s.decide(&cap, reject(&s, &cap, 3)).unwrap();
    let worst = s.state().batch(&cap).unwrap().worst_ids.clone();
    let report = s.request_relabel(&cap, &MockCaptioner::failing([worst[1].clone()])).unwrap();
    assert_eq!(report.relabeled.len(), 2);
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].0, worst[1]);
    assert!(!report.requeued);
    assert_eq!(s.state().items[&worst[1]].state, ItemState::Returned);
    assert_eq!(s.state().batch(&cap).unwrap().status, BatchStatus::Rejected);
    let retry = s.request_relabel(&cap, &MockCaptioner::default()).unwrap();
    assert_eq!(retry.relabeled, vec![worst[1].clone()]);
    assert!(retry.requeued);
}

#[test]
fn rounds_and_caption_history() {
    let mut s = Store::in_memory(9);
    let cap = captioned_batch(&mut s, "h", "src", 10);
    let target = s.state().batch(&cap).unwrap().sampled_ids[0].clone();
    let rounds = 4;
    for _ in 0..rounds {
        s.decide(&cap, reject(&s, &cap, 1)).unwrap();
        s.request_relabel(&cap, &MockCaptioner::default()).unwrap();
    }
    assert_eq!(s.state().batch(&cap).unwrap().round, rounds);
    s.edit_caption(&target, "a corrected caption", "inspector-1").unwrap();
    let hist = &s.state().items[&target].history;
    assert_eq!(hist.len(), rounds as usize + 2);
    assert_eq!(hist.last().unwrap().author, "inspector-1");
    assert!(hist.windows(2).all(|w| w[0].seq < w[1].seq));
    assert!(matches!(s.edit_caption(&target, "", "x"), Err(ReviewError::InvalidDecision(_))));
}



fn replay_bytes(events: &[Event]) -> Vec<u8> {
    serde_json::to_vec(&ReviewState::replay(events).unwrap()).unwrap()
}

#[test]
fn random_sequences_keep_invariants_and_replay_exactly() {
    for seed in 0..8 {
        let s = run_machine(seed, 500, StoreConfig::default());
        assert_eq!(replay_bytes(s.events()), serde_json::to_vec(s.state()).unwrap());
    }
}

#[test]
fn replay_from_disk_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StoreConfig {
        dir: Some(dir.path().to_path_buf()),
        snapshot_every: 37,
        record_time: true,
        ..Default::default()
    };
    let before = {
        let s = run_machine(21, 500, cfg.clone());
        serde_json::to_vec(s.state()).unwrap()
    };
    let reopened = Store::open(StoreConfig { seed: 21, ..cfg }).unwrap();
    assert_eq!(serde_json::to_vec(reopened.state()).unwrap(), before);
}

#[test]
fn damaged_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StoreConfig {
        dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    {
        let mut s = Store::open(cfg.clone()).unwrap();
        s.ingest("a", items("q", 3)).unwrap();
    }
    let path = dir.path().join("events.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    std::fs::write(&path, format!("{first}\n{first}\n")).unwrap();
    assert!(matches!(Store::open(cfg), Err(ReviewError::Corrupt(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn machine_invariants_hold(seed in any::<u64>()) {
        let s = run_machine(seed, 500, StoreConfig::default());
        prop_assert_eq!(replay_bytes(s.events()), serde_json::to_vec(s.state()).unwrap());
        for b in s.state().batches.values() {
            prop_assert_eq!(b.sampled_ids.len(), b.item_ids.len().div_ceil(10));
        }
    }
}

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use embodia_core::review::{Store, StoreConfig};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_embodia"));
    for var in ["EMBODIA_CONFIG", "EMBODIA_SEED", "EMBODIA_PORT", "EMBODIA_STORE_DIR", "EMBODIA_TOKEN"] {
        c.env_remove(var);
    }
    c
}

fn ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixtures(dir: &Path) -> PathBuf {
    let scenes = dir.join("scenes");
    ok(&["synth", "--out", p(&scenes), "--seed", "3"]);
    scenes
}

#[test]
fn generation_is_reproducible_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = fixtures(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let out = ok(&["generate", "--scenes", p(&scenes), "--out", p(&a), "--seed", "7"]);
    ok(&["generate", "--scenes", p(&scenes), "--out", p(&b), "--seed", "7"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let lines = fs::read_to_string(&a).unwrap().lines().count();
    assert_eq!(summary["total"], lines);
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["counts"].as_object().unwrap().len(), 11);
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    assert_eq!(side, summary);

    let c = dir.path().join("c.jsonl");
    let out = ok(&["generate", "--scenes", p(&scenes), "--out", p(&c), "--seed", "8", "--tasks", "tracking,planning"]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["counts"].as_object().unwrap().len(), 2);
    assert!(fs::read_to_string(&c).unwrap().lines().all(|l| l.contains("\"tracking\"") || l.contains("\"planning\"")));
}

#[test]
fn empty_scene_dir_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("none");
    fs::create_dir(&scenes).unwrap();
    let out_file = dir.path().join("out.jsonl");
    let out = ok(&["generate", "--scenes", p(&scenes), "--out", p(&out_file)]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["total"], 0);
    assert!(summary["counts"].as_object().unwrap().values().all(|v| v == 0));
    assert_eq!(fs::read(&out_file).unwrap(), b"");
}

#[test]
fn unknown_task_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--scenes", p(dir.path()), "--out", "x.jsonl", "--tasks", "juggling"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("juggling"));
}

#[test]
fn scene_parse_errors_carry_positions() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.jsonl"), "{\"image\": \"a\", \"timestamp\": 0, \"calib_id\": \"c\"}\n{\"image\": 3}\n").unwrap();
    let out = bin()
        .args(["generate", "--scenes", p(dir.path()), "--out", p(&dir.path().join("o.jsonl"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s.jsonl:2:"), "{}", String::from_utf8_lossy(&out.stderr));
}

fn validate_report(report: &Value) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/report.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(root).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn echo_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = fixtures(dir.path());
    let gt = dir.path().join("gt.jsonl");
    ok(&["generate", "--scenes", p(&scenes), "--out", p(&gt), "--seed", "1"]);
    for style in ["full", "text"] {
        let preds = dir.path().join(format!("{style}.jsonl"));
        let report_path = dir.path().join(format!("{style}.report.json"));
        ok(&["echo-predict", "--gt", p(&gt), "--out", p(&preds), "--style", style]);
        ok(&["eval", "--predictions", p(&preds), "--gt", p(&gt), "--out", p(&report_path), "--seed", "1"]);
        let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
        validate_report(&report);
        let m = &report["metrics"];
        for k in ["pr@1", "pr@2", "pr@4"] {
            assert_eq!(m[k]["percent"], 100.0, "{style} {k}");
        }
        for k in ["bleu", "rouge_l"] {
            assert!((m[k]["value"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{style} {k}");
        }
        let ade = m["ade"]["value"].as_f64().unwrap();
        if style == "full" {
            assert_eq!(ade, 0.0);
        } else {
            // decoded waypoints sit at cell centers, at most half a cell diagonal away
            assert!(ade > 0.0 && ade <= 0.5f64.sqrt(), "{ade}");
        }
        assert_eq!(report["config"]["seed"], 1);
    }

    let out = bin()
        .args(["eval", "--predictions", p(&dir.path().join("full.jsonl")), "--gt", p(&gt), "--metrics", "pr@1,bleu"])
        .output()
        .unwrap();
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"].as_object().unwrap().len(), 2);
}

#[test]
fn eval_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = fixtures(dir.path());
    let gt = dir.path().join("gt.jsonl");
    ok(&["generate", "--scenes", p(&scenes), "--out", p(&gt), "--tasks", "box_detection"]);
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = bin().args(["eval", "--predictions", p(&empty), "--gt", p(&gt)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no predictions"));

    let text = fs::read_to_string(&gt).unwrap();
    let first_id = serde_json::from_str::<Value>(text.lines().next().unwrap()).unwrap()["id"].as_str().unwrap().to_string();
    let preds: String = text
        .lines()
        .skip(1)
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            json!({"id": v["id"], "text": v["answer"]}).to_string() + "\n"
        })
        .collect();
    let partial = dir.path().join("partial.jsonl");
    fs::write(&partial, preds).unwrap();
    let out = bin().args(["eval", "--predictions", p(&partial), "--gt", p(&gt)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&first_id));

    let out = bin().args(["eval", "--predictions", p(&partial), "--gt", p(&gt), "--metrics", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn pipe(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn codec_round_trips_on_stdio() {
    let points = "0.2 0.2 0.2\n-49.7 12.3 -4.9\n17 -3.25 2\n";
    let enc = pipe(&["codec", "encode"], points);
    assert!(enc.status.success());
    let tokens = String::from_utf8(enc.stdout).unwrap();
    let dec = pipe(&["codec", "decode"], &tokens);
    assert!(dec.status.success());
    assert_eq!(String::from_utf8(dec.stdout).unwrap(), "0.5 0.5 0.5\n-49.5 12.5 -4.5\n17.5 -3.5 2.5\n");

    let coarse = pipe(&["codec", "encode", "--resolution", "2"], points);
    assert!(coarse.status.success());
    let dec = pipe(&["codec", "decode", "--resolution", "2"], &String::from_utf8(coarse.stdout).unwrap());
    assert_eq!(String::from_utf8(dec.stdout).unwrap(), "1 1 0\n-49 13 -4\n17 -3 2\n");
}

#[test]
fn codec_rejects_malformed_input() {
    for (op, input) in [("encode", "1 2\n"), ("encode", "a b c\n"), ("decode", "not space tokens\n")] {
        let out = pipe(&["codec", op], input);
        assert_eq!(out.status.code(), Some(1), "{op} {input:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    }
}

#[test]
fn codec_help_lists_grid_defaults() {
    let out = ok(&["codec", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    assert!(help.contains("1 m cells"));
    assert!(help.contains("[-50, 50]"));
    assert!(help.contains("-50,-50,-5"));
}

#[test]
fn codec_projection_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("cam.json");
    let c = json!({
        "camera_id": "cam",
        "intrinsics": [800.0, 0.0, 640.0, 0.0, 810.0, 360.0, 0.0, 0.0, 1.0],
        "extrinsics": [0.0, -1.0, 0.0, 0.1, 0.0, 0.0, -1.0, 1.5, 1.0, 0.0, 0.0, -0.3, 0.0, 0.0, 0.0, 1.0],
    });
    fs::write(&calib, c.to_string()).unwrap();
    let points = "12.5 -3.25 0.75\n40.125 7.5 -1.5\n";
    let px = pipe(&["codec", "project", "--calib", p(&calib)], points);
    assert!(px.status.success(), "{}", String::from_utf8_lossy(&px.stderr));
    let back = pipe(&["codec", "unproject", "--calib", p(&calib)], &String::from_utf8(px.stdout).unwrap());
    let got: Vec<f64> = String::from_utf8(back.stdout)
        .unwrap()
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    let want: Vec<f64> = points.split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9, "{got:?}");
    }
    let behind = pipe(&["codec", "project", "--calib", p(&calib)], "-5 0 0\n");
    assert_eq!(behind.status.code(), Some(1));
}

#[test]
fn select_modes() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    let dims = ["--visual-dim", "8", "--text-dim", "8", "--queries", "4", "--heads", "2", "--tokens-per-frame", "3"];
    let mut init = vec!["init-params", "--out", p(&params), "--seed", "5"];
    init.extend(dims);
    ok(&init);

    let one = dir.path().join("one.json");
    ok(&["synth-stack", "--params", p(&params), "--frames", "1", "--out", p(&one)]);
    let out = ok(&["select", "--stack", p(&one), "--params", p(&params), "--prompt", "where is the bus", "--mode", "soft"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["relevance"], json!([1.0]));
    assert_eq!(v["params_seed"], 5);
    assert_eq!(v["features_shape"], json!([4, 8]));

    let six = dir.path().join("six.json");
    ok(&["synth-stack", "--params", p(&params), "--frames", "6", "--out", p(&six)]);
    let base = ["select", "--stack", p(&six), "--params", p(&params), "--prompt", "red light"];
    let run = |extra: &[&str]| -> Value {
        let mut args = base.to_vec();
        args.extend(extra);
        serde_json::from_slice(&ok(&args).stdout).unwrap()
    };
    let hard = run(&["--mode", "hard", "--top", "3"]);
    let scores: Vec<f64> = serde_json::from_value(hard["relevance"].clone()).unwrap();
    let top = (0..6).max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a))).unwrap();
    assert_eq!(hard["indices"][0], top);
    assert_eq!(hard["indices"].as_array().unwrap().len(), 3);

    let soft = run(&["--mode", "soft"]);
    let abl = run(&["--mode", "sinusoidal-ablation"]);
    for v in [&soft, &abl] {
        let r: Vec<f64> = serde_json::from_value(v["relevance"].clone()).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_ne!(soft["relevance"], abl["relevance"]);

    let manual = run(&["--mode", "manual", "--at", "0.4,2.6"]);
    assert_eq!(manual["indices"], json!([1, 5]));
    let out = bin().args(base).args(["--mode", "manual"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    let out = bin()
        .args(["select", "--stack", p(&six), "--params", p(&missing), "--prompt", "x", "--mode", "soft"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn config_file_and_env_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, json!({"seed": 11, "grid": {"resolution": 2.0, "extent_min": [-8, -8, -2], "extent_max": [8, 8, 2]}}).to_string()).unwrap();
    let params = dir.path().join("p.json");

    // file value
    let out = bin().args(["init-params", "--out", p(&params), "--config", p(&cfg), "--text-dim", "4", "--visual-dim", "4", "--queries", "2", "--heads", "1", "--tokens-per-frame", "2"]).output().unwrap();
    assert!(out.status.success());
    let seed = |path: &Path| -> Value {
        serde_json::from_str::<Value>(&fs::read_to_string(path).unwrap()).unwrap()["manifest"]["seed"].clone()
    };
    assert_eq!(seed(&params), 11);
    // env beats file
    let out = bin().env("EMBODIA_SEED", "12").args(["init-params", "--out", p(&params), "--config", p(&cfg)]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(seed(&params), 12);
    // flag beats env
    let out = bin().env("EMBODIA_SEED", "12").args(["init-params", "--out", p(&params), "--config", p(&cfg), "--seed", "13"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(seed(&params), 13);

    // grid from the file: 2 m cells, so 7.9 lands in the cell centered at 7
    let enc = pipe(&["codec", "encode", "--config", p(&cfg)], "7.9 7.9 1.9\n");
    let dec = pipe(&["codec", "decode", "--config", p(&cfg)], &String::from_utf8(enc.stdout).unwrap());
    assert_eq!(String::from_utf8(dec.stdout).unwrap(), "7 7 1\n");
    let out = pipe(&["codec", "encode", "--config", p(&cfg)], "9 0 0\n");
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"sed": 1}"#).unwrap();
    let out = bin().args(["codec", "encode", "--config", p(&bad)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(args: &[&str]) -> Server {
        let mut child = bin()
            .arg("review-serve")
            .args(args)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut stderr = BufReader::new(child.stderr.take().unwrap());
        let mut line = String::new();
        let base = loop {
            line.clear();
            if stderr.read_line(&mut line).unwrap() == 0 {
                panic!("server exited before listening");
            }
            if let Some(rest) = line.trim().strip_prefix("listening on ") {
                break rest.to_string();
            }
        };
        std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
        Server { child, base }
    }

    fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        self.child.wait().unwrap()
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

#[test]
fn review_server_flushes_on_sigterm_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let server = Server::start(&["--port", "0", "--store-dir", p(&store), "--seed", "42", "--token", "tkn"]);
    let a = agent();

    let mut health = a.get(format!("{}/health", server.base)).call().unwrap();
    let health: Value = health.body_mut().read_json().unwrap();
    assert_eq!(health["seed"], 42);
    assert_eq!(health["version"], env!("CARGO_PKG_VERSION"));

    let unauth = a.get(format!("{}/ledger", server.base)).call().unwrap();
    assert_eq!(unauth.status(), 401);

    let items: Vec<Value> = (0..12).map(|i| json!({"id": format!("i{i}"), "image": format!("img/{i}.jpg")})).collect();
    let mut resp = a
        .post(format!("{}/ingest", server.base))
        .header("authorization", "Bearer tkn")
        .send_json(json!({"source_id": "clip-1", "items": items}))
        .unwrap();
    assert_eq!(resp.status(), 201);
    let out: Value = resp.body_mut().read_json().unwrap();
    let batch = out["batch_id"].as_str().unwrap();
    let mut resp = a
        .get(format!("{}/batches/{batch}", server.base))
        .header("authorization", "Bearer tkn")
        .call()
        .unwrap();
    let view: Value = resp.body_mut().read_json().unwrap();
    assert_eq!(view["sampled_items"].as_array().unwrap().len(), 2);
    let resp = a
        .post(format!("{}/batches/{batch}/decision", server.base))
        .header("authorization", "Bearer tkn")
        .send_json(json!({"action": "reject", "worst_item_ids": [view["sampled_ids"][0]], "feedback": "too dark"}))
        .unwrap();
    assert_eq!(resp.status(), 200);

    assert!(server.terminate().success());
    assert!(store.join("snapshot.json").is_file());
    let events = fs::read_to_string(store.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 3, "{events}");

    let reopened = Store::open(StoreConfig {
        dir: Some(store.clone()),
        seed: 42,
        snapshot_every: 0,
        record_time: false,
    })
    .unwrap();
    assert_eq!(reopened.state().ledger.return_counts["clip-1"], 1);
    assert_eq!(reopened.state().batches[batch].round, 1);

    // a restarted server sees the same state
    let server = Server::start(&["--port", "0", "--store-dir", p(&store), "--seed", "42"]);
    let mut resp = a.get(format!("{}/ledger", server.base)).call().unwrap();
    let ledger: Value = resp.body_mut().read_json().unwrap();
    assert_eq!(ledger["return_counts"]["clip-1"], 1);
    assert!(server.terminate().success());
}

#[test]
fn review_server_port_conflict_fails_fast() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = bin().args(["review-serve", "--port", &port]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));
}

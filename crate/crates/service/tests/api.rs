use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};
use ttsforge::align::asr::AsrSpec;
use ttsforge::align::BatchConfig;
use ttsforge::audio::{encode_wav, AudioBuffer};
use ttsforge::corpus::SentenceType;
use ttsforge::script::ScriptEntry;
use ttsforge::store::{ManualClock, NewSample, Store, StoreOptions};
use ttsforge::synth::{generate_batch, SynthConfig};
use ttsforge_service::{router, serve, Allowlist, AppState, ErrorBody, ServiceConfig, Workers, ROUTES};

const ADMIN: &str = "tok-admin";
const ANA: &str = "tok-ana";
const BEN: &str = "tok-ben";

struct Server {
    base: String,
    store: Arc<Store>,
    clock: Arc<ManualClock>,
    client: Client,
    dir: tempfile::TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
    workers: Option<Workers>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        if let Some(w) = self.workers.take() {
            w.shutdown();
        }
    }
}

fn start(tune: impl FnOnce(&mut ServiceConfig)) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::default());
    let store =
        Arc::new(Store::open_with(&dir.path().join("store"), clock.clone(), StoreOptions { sync: false }).unwrap());
    let allowlist = Allowlist::parse(&format!(
        "lead@x.org admin {ADMIN}\nana@x.org annotator {ANA}\nben@x.org annotator {BEN}\n"
    ))
    .unwrap();
    let mut config = ServiceConfig::new(dir.path().join("spool"));
    config.cors_origin = Some("http://ui.example".into());
    tune(&mut config);
    let state = AppState {
        store: store.clone(),
        allowlist: Arc::new(allowlist),
        config: Arc::new(config),
    };
    let asr = AsrSpec::Mock {
        truth: None,
        corruption_rate: 0.0,
        seed: 1,
    };
    let workers = Workers::spawn(store.clone(), 2, asr, BatchConfig::default());
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    std_listener.set_nonblocking(true).unwrap();
    let base = format!("http://{}", std_listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(state);
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
            serve(listener, app, async move {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
    });
    Server {
        base,
        store,
        clock,
        client: Client::new(),
        dir,
        stop: Some(tx),
        thread: Some(thread),
        workers: Some(workers),
    }
}

impl Server {
    fn req(&self, method: &str, path: &str, token: Option<&str>) -> RequestBuilder {
        let m = reqwest::Method::from_bytes(method.as_bytes()).unwrap();
        let rb = self.client.request(m, format!("{}{path}", self.base));
        match token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn get(&self, path: &str, token: &str) -> Response {
        self.req("GET", path, Some(token)).send().unwrap()
    }

    fn post(&self, path: &str, token: &str, body: Value) -> Response {
        self.req("POST", path, Some(token)).json(&body).send().unwrap()
    }

    fn dataset(&self, name: &str) -> u64 {
        let r = self.post("/api/datasets", ADMIN, json!({"name": name, "language": "en"}));
        assert_eq!(r.status(), StatusCode::CREATED);
        r.json::<Value>().unwrap()["id"].as_u64().unwrap()
    }

    fn assign(&self, ds: u64, who: &str) {
        let r = self.post(
            &format!("/api/datasets/{ds}/assignments"),
            ADMIN,
            json!({"annotator": who}),
        );
        assert_eq!(r.status(), StatusCode::OK);
    }

    /// Adds samples directly; sample `i` has `wrong[i]` of ten words wrong.
    fn seed_samples(&self, ds: u64, wrong: &[usize]) {
        let wav = self.dir.path().join("seed.wav");
        std::fs::write(&wav, encode_wav(&AudioBuffer::new(vec![0, 5, -5, 0], 16000))).unwrap();
        let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
        for (i, &w) in wrong.iter().enumerate() {
            let asr: Vec<&str> = words
                .iter()
                .enumerate()
                .map(|(k, x)| if k < w { "z" } else { x })
                .collect();
            self.store
                .add_sample(
                    ds,
                    NewSample {
                        sentence_id: format!("EN{:08}", i + 1),
                        original_text: words.join(" "),
                        asr_text: asr.join(" "),
                        audio: wav.clone(),
                        duration_s: 3.0,
                    },
                )
                .unwrap();
        }
    }

    /// Path and content of every file in the store.
    fn snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        fn walk(dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
            for e in std::fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    walk(&p, out);
                } else {
                    out.insert(p.display().to_string(), std::fs::read(&p).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(&self.dir.path().join("store"), &mut out);
        out
    }
}

fn error(r: Response) -> (StatusCode, ErrorBody) {
    let status = r.status();
    (status, r.json().unwrap())
}

fn entries(n: usize) -> Vec<ScriptEntry> {
    let words = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    ];
    (1..=n)
        .map(|i| {
            let text: Vec<&str> = (0..6).map(|k| words[(i * 7 + k * 3) % words.len()]).collect();
            ScriptEntry {
                id: format!("EN{i:08}"),
                text: format!("{} {i}x.", text.join(" ")).replace(&format!(" {i}x."), "."),
                language: "en".into(),
                sentence_type: SentenceType::Declarative,
                word_count: 6,
                estimated_seconds: None,
            }
        })
        .collect()
}

#[test]
fn every_api_route_requires_a_known_token() {
    let s = start(|_| {});
    assert_eq!(s.req("GET", "/health", None).send().unwrap().status(), StatusCode::OK);
    for (method, path) in ROUTES {
        for token in [None, Some("nope")] {
            let r = s.req(method, path, token).send().unwrap();
            assert_eq!(r.status(), StatusCode::UNAUTHORIZED, "{method} {path} {token:?}");
            assert_eq!(r.json::<ErrorBody>().unwrap().code, "unauthorized");
        }
    }
}

#[test]
fn dataset_creation_rules() {
    let s = start(|_| {});
    s.dataset("de");
    let (status, body) = error(s.post("/api/datasets", ADMIN, json!({"name": "de", "language": "de"})));
    assert_eq!((status, body.code.as_str()), (StatusCode::CONFLICT, "duplicate_name"));
    let r = s.post("/api/datasets", ANA, json!({"name": "x", "language": "de"}));
    assert_eq!(r.status(), StatusCode::FORBIDDEN);
    let r = s.req("POST", "/api/datasets", Some(ADMIN)).body("{").send().unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

fn upload(s: &Server, ds: u64, name: &str, wav: Vec<u8>, truth: Option<String>) -> Response {
    let mut form = Form::new().part("file", Part::bytes(wav).file_name(name.to_string()));
    if let Some(t) = truth {
        form = form.part("truth", Part::text(t).file_name("truth.tsv"));
    }
    s.req("POST", &format!("/api/datasets/{ds}/batches"), Some(ADMIN))
        .multipart(form)
        .send()
        .unwrap()
}

fn wait_job(s: &Server, id: u64) -> Value {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let job: Value = s.get(&format!("/api/jobs/{id}"), ADMIN).json().unwrap();
        let status = job["status"].as_str().unwrap().to_string();
        assert!(["pending", "running", "done", "failed"].contains(&status.as_str()));
        if status == "done" || status == "failed" {
            return job;
        }
        assert!(Instant::now() < deadline, "job {id} stuck: {job}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn upload_annotate_and_export_end_to_end() {
    let s = start(|_| {});
    let ds = s.dataset("en");
    let script = entries(5);
    let jsonl: String = script
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    let r = s
        .req("PUT", &format!("/api/datasets/{ds}/script"), Some(ADMIN))
        .body(jsonl)
        .send()
        .unwrap();
    assert_eq!(r.json::<Value>().unwrap()["entries"], 5);

    let cfg = SynthConfig {
        sample_rate: 16000,
        ..SynthConfig::default()
    };
    let batch = generate_batch(&script, &cfg);
    let r = upload(
        &s,
        ds,
        "EN00000001-EN00000005.wav",
        encode_wav(&batch.audio),
        Some(batch.truth.to_tsv()),
    );
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let job_id = r.json::<Value>().unwrap()["job_id"].as_u64().unwrap();
    let job = wait_job(&s, job_id);
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["result"]["samples"]["created"], 5);

    let r = s.post(&format!("/api/datasets/{ds}/next-sample"), ANA, json!({}));
    assert_eq!(r.status(), StatusCode::FORBIDDEN);
    s.assign(ds, "ana@x.org");
    let r = s.post(
        &format!("/api/datasets/{ds}/next-sample"),
        ANA,
        json!({"annotator_id": "ana@x.org"}),
    );
    assert_eq!(r.status(), StatusCode::OK);
    let sample: Value = r.json().unwrap();
    for field in ["original_text", "asr_text", "wer", "audio_url"] {
        assert!(sample.get(field).is_some(), "{field}");
    }
    let id = sample["id"].as_u64().unwrap();

    let audio = s.get(sample["audio_url"].as_str().unwrap(), ANA);
    assert_eq!(audio.headers()["content-type"], "audio/wav");
    let len: usize = audio.headers()["content-length"].to_str().unwrap().parse().unwrap();
    let bytes = audio.bytes().unwrap();
    assert_eq!(bytes.len(), len);
    assert_eq!(&bytes[..4], b"RIFF");

    let r = s.post(
        &format!("/api/samples/{id}/annotation"),
        ANA,
        json!({"action": "approve", "final_text": "edited words"}),
    );
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.json::<Value>().unwrap()["status"], "annotated");
    let stats: Value = s.get(&format!("/api/datasets/{ds}/stats"), ANA).json().unwrap();
    assert_eq!(
        (stats["n_annotated"].as_u64(), stats["n_edited"].as_u64()),
        (Some(1), Some(1))
    );
    assert_eq!(stats["percent_edited"], 20.0);

    let r = s.get(&format!("/api/datasets/{ds}/export"), ANA);
    assert_eq!(r.status(), StatusCode::FORBIDDEN);
    let r = s.get(&format!("/api/datasets/{ds}/export"), ADMIN);
    assert_eq!(r.headers()["content-type"], "application/x-tar");
    let mut archive = tar::Archive::new(std::io::Cursor::new(r.bytes().unwrap().to_vec()));
    let names: BTreeSet<String> = archive
        .entries()
        .unwrap()
        .map(|e| e.unwrap().path().unwrap().display().to_string())
        .collect();
    assert!(names.iter().any(|n| n.ends_with("manifest.jsonl")), "{names:?}");
    assert!(names.iter().any(|n| n.ends_with("index.txt")));
    assert_eq!(names.iter().filter(|n| n.ends_with(".wav")).count(), 1);
}

#[test]
fn upload_errors() {
    let s = start(|c| c.max_upload_bytes = 4096);
    let ds = s.dataset("en");
    let wav = encode_wav(&AudioBuffer::new(vec![0; 100], 16000));
    let (status, body) = error(upload(&s, ds, "bad.wav", wav.clone(), None));
    assert_eq!((status, body.code.as_str()), (StatusCode::BAD_REQUEST, "bad_request"));
    let big = encode_wav(&AudioBuffer::new(vec![0; 10_000], 16000));
    assert_eq!(
        upload(&s, ds, "EN00000001-EN00000002.wav", big, None).status(),
        StatusCode::PAYLOAD_TOO_LARGE
    );
    assert_eq!(
        upload(&s, 99, "EN00000001-EN00000002.wav", wav.clone(), None).status(),
        StatusCode::NOT_FOUND
    );
    // A single-id name is a re-match of a segmented file.
    let r = upload(&s, ds, "EN00000002.wav", wav, None);
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let job = wait_job(&s, r.json::<Value>().unwrap()["job_id"].as_u64().unwrap());
    assert_eq!(job["kind"], "rematch");
}

#[test]
fn dispatch_and_annotation_errors() {
    let s = start(|c| c.lease_s = 60);
    let ds = s.dataset("en");
    s.assign(ds, "ana@x.org");
    s.assign(ds, "ben@x.org");
    let r = s.post(&format!("/api/datasets/{ds}/next-sample"), ANA, json!({}));
    assert_eq!(r.status(), StatusCode::NO_CONTENT);
    assert_eq!(
        s.post("/api/datasets/77/next-sample", ANA, json!({})).status(),
        StatusCode::NOT_FOUND
    );
    s.seed_samples(ds, &[0, 4, 1]);

    let first: Value = s
        .post(&format!("/api/datasets/{ds}/next-sample"), ANA, json!({}))
        .json()
        .unwrap();
    assert_eq!(first["wer"], 0.4);
    let id = first["id"].as_u64().unwrap();
    let path = format!("/api/samples/{id}/annotation");
    let (status, _) = error(s.post(&path, BEN, json!({"action": "approve", "final_text": "x"})));
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = error(s.post(&path, ANA, json!({"action": "discard", "reasons": []})));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = s.post(&path, ANA, json!({"action": "discard", "reasons": ["repetition"]}));
    assert_eq!(r.json::<Value>().unwrap()["status"], "discarded");
    let (status, body) = error(s.post(&path, ANA, json!({"action": "approve", "final_text": "x"})));
    assert_eq!((status, body.code.as_str()), (StatusCode::CONFLICT, "conflict"));

    let second: Value = s
        .post(&format!("/api/datasets/{ds}/next-sample"), BEN, json!({}))
        .json()
        .unwrap();
    s.clock.advance(chrono::Duration::seconds(61));
    let path = format!("/api/samples/{}/annotation", second["id"]);
    let (status, _) = error(s.post(&path, BEN, json!({"action": "approve", "final_text": "x"})));
    assert_eq!(status, StatusCode::GONE);

    let stats: Value = s.get(&format!("/api/datasets/{ds}/stats"), ADMIN).json().unwrap();
    assert_eq!(stats["discard_reasons"]["repetition"], 1);
    assert_eq!(s.get("/api/samples/999/audio", ADMIN).status(), StatusCode::NOT_FOUND);
}

#[test]
fn concurrent_next_sample_calls_get_distinct_samples() {
    let s = start(|_| {});
    let ds = s.dataset("en");
    let annotators = ["ana@x.org", "ben@x.org"];
    for a in annotators {
        s.assign(ds, a);
    }
    s.seed_samples(ds, &[1; 16]);
    let ids: Vec<u64> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let s = &s;
                scope.spawn(move || {
                    let token = if i % 2 == 0 { ANA } else { BEN };
                    let v: Value = s
                        .post(&format!("/api/datasets/{ds}/next-sample"), token, json!({}))
                        .json()
                        .unwrap();
                    v["id"].as_u64().unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 16);
}

#[test]
fn reads_do_not_mutate_the_store() {
    let s = start(|_| {});
    let ds = s.dataset("en");
    s.assign(ds, "ana@x.org");
    s.seed_samples(ds, &[2, 3]);
    let before = s.snapshot();
    for (method, path) in ROUTES.iter().filter(|(m, _)| *m == "GET") {
        let path = path.replace("/1", &format!("/{ds}"));
        let _ = s.req(method, &path, Some(ADMIN)).send().unwrap();
        let _ = s.req(method, &path, Some(ANA)).send().unwrap();
    }
    assert_eq!(s.snapshot(), before);
}

#[test]
fn empty_export_has_an_empty_manifest() {
    let s = start(|_| {});
    let ds = s.dataset("en");
    let r = s.get(&format!("/api/datasets/{ds}/export"), ADMIN);
    assert_eq!(r.status(), StatusCode::OK);
    let mut archive = tar::Archive::new(std::io::Cursor::new(r.bytes().unwrap().to_vec()));
    let mut manifest = String::new();
    for e in archive.entries().unwrap() {
        let mut e = e.unwrap();
        if e.path().unwrap().ends_with("manifest.jsonl") {
            std::io::Read::read_to_string(&mut e, &mut manifest).unwrap();
        }
    }
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("{\"summary\""));
}

#[test]
fn cors_preflight_for_the_configured_origin() {
    let s = start(|_| {});
    let r = s
        .req("OPTIONS", "/api/datasets", None)
        .header("Origin", "http://ui.example")
        .header("Access-Control-Request-Method", "POST")
        .header("Access-Control-Request-Headers", "authorization")
        .send()
        .unwrap();
    assert_eq!(r.headers()["access-control-allow-origin"], "http://ui.example");
}

#[test]
fn annotators_only_see_assigned_datasets() {
    let s = start(|_| {});
    let a = s.dataset("a");
    s.dataset("b");
    s.assign(a, "ana@x.org");
    let list: Vec<Value> = s.get("/api/datasets", ANA).json().unwrap();
    assert_eq!(list.len(), 1);
    let list: Vec<Value> = s.get("/api/datasets", ADMIN).json().unwrap();
    assert_eq!(list.len(), 2);
    let me: Value = s.get("/api/me", ANA).json().unwrap();
    assert_eq!(me["role"], "annotator");
}

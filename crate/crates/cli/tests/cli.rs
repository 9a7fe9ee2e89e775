use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ttsforge::audio::{write_wav, AudioBuffer};
use ttsforge::corpus::SentenceType;
use ttsforge::qa::DiscardReason;
use ttsforge::script::{write_script, ScriptEntry};
use ttsforge::store::{AnnotationInput, NewSample, Store};

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run forge")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

const WORDS: [&str; 12] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
];

/// Sentences of 6 to 9 distinct words, so every reading lasts over 2 s.
fn script(dir: &Path, n: usize) -> PathBuf {
    let entries: Vec<ScriptEntry> = (1..=n)
        .map(|i| {
            let count = 6 + i % 4;
            let words: Vec<&str> = (0..count).map(|k| WORDS[(i * 5 + k * 7) % WORDS.len()]).collect();
            ScriptEntry {
                id: format!("EN{i:08}"),
                text: words.join(" ") + ".",
                language: "en".into(),
                sentence_type: SentenceType::Declarative,
                word_count: count,
                estimated_seconds: None,
            }
        })
        .collect();
    let path = dir.join("script.jsonl");
    write_script(&path, &entries, None).unwrap();
    path
}

#[test]
fn select_is_deterministic_and_checks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&forge(d, &["gen-corpus", "--out", "corpus.txt", "--sentences", "1500"]));
    let args = [
        "select",
        "--corpus",
        "corpus.txt",
        "--lang",
        "en",
        "--target-words",
        "800",
        "--out",
    ];
    let first = ok(&forge(d, &[&args[..], &["a.jsonl"]].concat()));
    let second = ok(&forge(d, &[&args[..], &["b.jsonl"]].concat()));
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("b.jsonl")).unwrap()
    );
    for key in ["words:", "estimated hours:", "divergence:", "interrogative:"] {
        assert!(first.contains(key), "{first}");
    }
    let words: usize = first
        .lines()
        .find_map(|l| l.strip_prefix("words:"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((800..=813).contains(&words), "{words}");

    let other_seed = ok(&forge(d, &[&["--seed", "7"], &args[..], &["c.jsonl"]].concat()));
    assert_ne!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("c.jsonl")).unwrap(),
        "{other_seed}"
    );

    assert_eq!(
        code(&forge(
            d,
            &[
                "select",
                "--corpus",
                "missing.txt",
                "--lang",
                "en",
                "--target-words",
                "5",
                "--out",
                "x"
            ]
        )),
        2
    );
    assert_eq!(
        code(&forge(
            d,
            &[
                "select",
                "--corpus",
                "corpus.txt",
                "--lang",
                "en",
                "--target-words",
                "0",
                "--out",
                "x"
            ]
        )),
        2
    );
}

#[test]
fn synthetic_batch_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    script(d, 5);
    let gen = [
        "gen-synthetic",
        "--script",
        "script.jsonl",
        "--out",
        "EN00000001-EN00000005.wav",
        "--gap-s",
        "2.5",
        "--truth",
        "truth.tsv",
        "--sample-rate",
        "16000",
    ];
    ok(&forge(d, &gen));
    let wav = std::fs::read(d.join("EN00000001-EN00000005.wav")).unwrap();
    let truth = std::fs::read_to_string(d.join("truth.tsv")).unwrap();
    assert_eq!(truth.lines().count(), 5);
    ok(&forge(d, &gen));
    assert_eq!(std::fs::read(d.join("EN00000001-EN00000005.wav")).unwrap(), wav);

    let run = |out: &str| {
        forge(
            d,
            &[
                "process-batch",
                "--script",
                "script.jsonl",
                "--audio",
                "EN00000001-EN00000005.wav",
                "--asr",
                "mock",
                "--truth",
                "truth.tsv",
                "--out-dir",
                out,
            ],
        )
    };
    let table = ok(&run("out"));
    assert!(table.contains("100.0%"), "{table}");
    assert_eq!(table, ok(&run("out2")));
    let report = std::fs::read_to_string(d.join("out/report.json")).unwrap();
    assert_eq!(
        report.replace("out/", ""),
        std::fs::read_to_string(d.join("out2/report.json"))
            .unwrap()
            .replace("out2/", "")
    );
    for i in 1..=5 {
        assert!(d.join(format!("out/EN{i:08}.wav")).is_file());
    }

    std::fs::copy(d.join("EN00000001-EN00000005.wav"), d.join("batch.wav")).unwrap();
    let bad = forge(
        d,
        &[
            "process-batch",
            "--script",
            "script.jsonl",
            "--audio",
            "batch.wav",
            "--asr",
            "mock",
            "--out-dir",
            "o",
        ],
    );
    assert_eq!(code(&bad), 2);
    let bad = forge(
        d,
        &[
            "process-batch",
            "--script",
            "script.jsonl",
            "--audio",
            "EN00000001-EN00000005.wav",
            "--asr",
            "command:cat",
            "--corruption",
            "0.1",
            "--out-dir",
            "o",
        ],
    );
    assert_eq!(code(&bad), 2);
    let bad = forge(
        d,
        &[
            "process-batch",
            "--script",
            "script.jsonl",
            "--audio",
            "EN00000001-EN00000005.wav",
            "--asr",
            "whisper",
            "--out-dir",
            "o",
        ],
    );
    assert_eq!(code(&bad), 2);
}

#[test]
fn validate_reports_per_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    script(d, 4);
    ok(&forge(
        d,
        &[
            "gen-synthetic",
            "--script",
            "script.jsonl",
            "--out",
            "EN00000001-EN00000004.wav",
        ],
    ));
    ok(&forge(
        d,
        &[
            "process-batch",
            "--script",
            "script.jsonl",
            "--audio",
            "EN00000001-EN00000004.wav",
            "--out-dir",
            "seg",
        ],
    ));
    std::fs::remove_file(d.join("seg/report.json")).unwrap();
    let out = ok(&forge(d, &["validate", "--dir", "seg", "--report", "qa.json"]));
    assert!(out.ends_with("4 files, 4 passed, 0 failed\n"), "{out}");

    // A one-second clip only fails the minimum duration.
    std::fs::create_dir(d.join("short")).unwrap();
    let rate = 88000;
    let mut samples = vec![0i16; rate as usize];
    for (i, s) in samples.iter_mut().enumerate() {
        *s = if (5500..82500).contains(&i) {
            (18000.0 * (i as f64 * 0.0143).sin()) as i16
        } else if i % 2 == 0 {
            3
        } else {
            -3
        };
    }
    write_wav(&AudioBuffer::new(samples, rate), &d.join("short/clip.wav")).unwrap();
    ok(&forge(d, &["validate", "--dir", "short", "--report", "short.json"]));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("short.json")).unwrap()).unwrap();
    let failed: Vec<&str> = reports[0]["results"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["criterion"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["duration_min"]);

    // A criteria file can relax it.
    std::fs::write(d.join("loose.cfg"), "# shorter clips are fine\nmin_duration_s = 0.5\n").unwrap();
    let out = ok(&forge(d, &["validate", "--dir", "short", "--criteria", "loose.cfg"]));
    assert!(out.ends_with("1 files, 1 passed, 0 failed\n"), "{out}");
    std::fs::write(d.join("bad.cfg"), "min_snr = 3\n").unwrap();
    assert_eq!(
        code(&forge(d, &["validate", "--dir", "short", "--criteria", "bad.cfg"])),
        2
    );

    std::fs::create_dir(d.join("empty")).unwrap();
    let out = ok(&forge(d, &["validate", "--dir", "empty", "--report", "empty.json"]));
    assert_eq!(out, "0 files, 0 passed, 0 failed\n");
    assert_eq!(std::fs::read_to_string(d.join("empty.json")).unwrap().trim(), "[]");
    assert_eq!(code(&forge(d, &["validate", "--dir", "nowhere"])), 2);
}

#[test]
fn settings_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("forge.cfg"), "matching.max_norm_distance = 0.3\n").unwrap();
    let out = ok(&forge(
        d,
        &[
            "--config",
            "forge.cfg",
            "--set",
            "min_gap_s=1.5",
            "--seed",
            "9",
            "config",
        ],
    ));
    for line in [
        "matching.max_norm_distance = 0.3",
        "min_gap_s = 1.5",
        "seed = 9",
        "selection.rng_seed = 9",
        "synth.seed = 9",
    ] {
        assert!(out.lines().any(|l| l == line), "{line} missing from\n{out}");
    }
    assert_eq!(code(&forge(d, &["--set", "nope=1", "config"])), 2);
    assert_eq!(code(&forge(d, &["--set", "nope", "config"])), 2);
    assert_eq!(code(&forge(d, &["--config", "missing.cfg", "config"])), 2);
    assert_eq!(code(&forge(d, &["frobnicate"])), 2);
}

fn seeded_store(root: &Path) {
    let store = Store::open(root).unwrap();
    let ds = store.create_dataset("german", "de").unwrap();
    let wav = root.join("clip.wav");
    write_wav(&AudioBuffer::new(vec![0, 100, -100, 0], 16000), &wav).unwrap();
    for i in 1..=20 {
        store
            .add_sample(
                ds.id,
                NewSample {
                    sentence_id: format!("DE{i:08}"),
                    original_text: format!("satz {i}"),
                    asr_text: format!("satz {i}"),
                    audio: wav.clone(),
                    duration_s: 2.5,
                },
            )
            .unwrap();
    }
    for i in 0..3 {
        let s = store.acquire_next_sample(ds.id, "ana@x.org", 60).unwrap().unwrap();
        let input = match i {
            0 => AnnotationInput::approve("anders"),
            1 => AnnotationInput::approve(s.original_text.clone()),
            _ => AnnotationInput::discard(vec![DiscardReason::SoundArtifact], None),
        };
        store.submit_annotation(s.id, "ana@x.org", input).unwrap();
    }
}

#[test]
fn stats_and_export_read_a_store() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seeded_store(&d.join("store"));
    let table = ok(&forge(d, &["stats", "--store", "store", "--dataset", "german"]));
    let header = table.lines().next().unwrap();
    assert!(
        header.starts_with("Dataset") && header.contains("# of Samples") && header.contains("% Edited"),
        "{table}"
    );
    let row = table.lines().nth(2).unwrap();
    assert!(row.starts_with("german"), "{row}");
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cells[1], "20");
    assert_eq!(cells[cells.len() - 2..], ["5.00%", "5.00%"], "{row}");
    let json: serde_json::Value =
        serde_json::from_slice(&forge(d, &["stats", "--store", "store", "--dataset", "1", "--json"]).stdout).unwrap();
    assert_eq!(json["n_edited"], 1);
    assert_eq!(
        code(&forge(d, &["stats", "--store", "store", "--dataset", "french"])),
        2
    );
    assert_eq!(code(&forge(d, &["stats", "--store", "nostore", "--dataset", "1"])), 2);

    let out = ok(&forge(
        d,
        &["export", "--store", "store", "--dataset", "german", "--out", "exp"],
    ));
    assert!(out.starts_with("exported 2 samples"), "{out}");
    let manifest = std::fs::read_to_string(d.join("exp/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.contains("\"final_text\":\"anders\""));
}

#[test]
fn serve_answers_health_probes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("allow.txt"), "lead@x.org admin secret\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_forge"))
        .current_dir(d)
        .args([
            "serve",
            "--addr",
            "127.0.0.1:0",
            "--store",
            "store",
            "--allowlist",
            "allow.txt",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect(&line)
        .to_string();
    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    conn.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut response = String::new();
    conn.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");

    std::fs::write(d.join("empty.txt"), "# nobody\n").unwrap();
    let out = forge(
        d,
        &[
            "serve",
            "--addr",
            "127.0.0.1:0",
            "--store",
            "store",
            "--allowlist",
            "empty.txt",
        ],
    );
    assert_eq!(code(&out), 2);
}

//! Crash safety: a child process runs random store operations and is
//! killed at random points; after each kill the store is reopened and
//! compared against a model built from what the child reported.
//!
//! The child prints `B <op>` before each operation and `D <result>` after
//! it returns, where the result carries the state diff the operation made.
//! An operation with a `B` line but no `D` line was in flight when the
//! process died: its effect may or may not be on disk, but if it is, it
//! must be the whole of a legal transition.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ttsforge::audio::{write_wav, AudioBuffer};
use ttsforge::qa::DiscardReason;
use ttsforge::store::{AnnotationInput, NewSample, Store};

const CHILD_ENV: &str = "FORGE_ACCEPTANCE_CRASH_CHILD";
const OPS: usize = 1000;
const ANNOTATORS: [&str; 3] = ["ana@x.org", "ben@x.org", "cem@x.org"];

type Snapshot = BTreeMap<String, String>;

/// Key, value before, value after.
type Diff = Vec<(String, Option<String>, Option<String>)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Op {
    CreateDataset {
        name: String,
    },
    Add {
        dataset: u64,
        sentence: String,
    },
    Acquire {
        dataset: u64,
        annotator: String,
    },
    Submit {
        sample: u64,
        annotator: String,
        approve: Option<String>,
    },
    Release {
        sample: u64,
        annotator: String,
    },
    Assign {
        dataset: u64,
        annotator: String,
    },
    Unassign {
        dataset: u64,
        annotator: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Done {
    ok: bool,
    diff: Diff,
}

pub fn is_child() -> bool {
    std::env::var_os(CHILD_ENV).is_some()
}

fn snapshot(store: &Store) -> Snapshot {
    let mut s = Snapshot::new();
    for d in store.datasets() {
        s.insert(format!("ds/{}", d.id), d.name.clone());
        for a in store.assignments(d.id) {
            s.insert(format!("asg/{}/{a}", d.id), "1".into());
        }
        for x in store.samples(d.id).expect("samples") {
            let lock = x.lock.as_ref().map_or("-", |l| l.annotator_id.as_str());
            let text = x.final_text.as_deref().unwrap_or("-");
            s.insert(
                format!("sample/{}", x.id),
                format!("{}|{}|{}|{}|{}", d.id, x.sentence_id, x.status.as_str(), lock, text),
            );
        }
        for a in store.annotations(d.id).expect("annotations") {
            s.insert(
                format!("ann/{}", a.sample_id),
                format!("{}|{:?}|{:?}", a.annotator_id, a.final_text, a.discard_reasons),
            );
        }
    }
    s
}

fn diff(before: &Snapshot, after: &Snapshot) -> Diff {
    let mut out = Diff::new();
    for (k, v) in before {
        if after.get(k) != Some(v) {
            out.push((k.clone(), Some(v.clone()), after.get(k).cloned()));
        }
    }
    for (k, v) in after {
        if !before.contains_key(k) {
            out.push((k.clone(), None, Some(v.clone())));
        }
    }
    out.sort();
    out
}

fn fields(v: &Option<String>) -> Vec<String> {
    v.as_deref()
        .map(|s| s.split('|').map(str::to_string).collect())
        .unwrap_or_default()
}

/// Whether `d` is exactly the effect of a successful `op`. An empty diff is
/// what a refused operation leaves.
fn legal(op: &Op, d: &Diff) -> bool {
    if d.is_empty() {
        return true;
    }
    let samples: Vec<_> = d.iter().filter(|(k, ..)| k.starts_with("sample/")).collect();
    match op {
        Op::CreateDataset { name } => {
            d.len() == 1 && d[0].0.starts_with("ds/") && d[0].1.is_none() && d[0].2.as_deref() == Some(name.as_str())
        }
        Op::Add { dataset, sentence } => {
            let created: Vec<_> = samples.iter().filter(|(_, b, _)| b.is_none()).collect();
            let removed: Vec<_> = samples.iter().filter(|(_, _, a)| a.is_none()).collect();
            samples.len() == d.len()
                && created.len() == 1
                && fields(&created[0].2)
                    == [
                        dataset.to_string(),
                        sentence.clone(),
                        "pending".into(),
                        "-".into(),
                        "-".into(),
                    ]
                && removed.len() + 1 == d.len()
                && removed.iter().all(|(_, b, _)| {
                    let f = fields(b);
                    f[1] == *sentence && (f[2] == "pending" || f[2] == "locked")
                })
        }
        Op::Acquire { dataset, annotator } => {
            d.len() == 1 && samples.len() == 1 && {
                let (b, a) = (fields(&d[0].1), fields(&d[0].2));
                b.len() == 5
                    && a.len() == 5
                    && b[0] == dataset.to_string()
                    && a[..2] == b[..2]
                    && b[2..] == ["pending", "-", "-"]
                    && a[2..] == ["locked".to_string(), annotator.clone(), "-".into()]
            }
        }
        Op::Submit {
            sample,
            annotator,
            approve,
        } => {
            let key = format!("sample/{sample}");
            let ann = format!("ann/{sample}");
            d.len() == 2
                && d.iter().any(|(k, b, a)| {
                    let (b, a) = (fields(b), fields(a));
                    *k == key
                        && b.len() == 5
                        && a.len() == 5
                        && b[2] == "locked"
                        && b[3] == *annotator
                        && a[..2] == b[..2]
                        && a[3] == "-"
                        && match approve {
                            Some(text) => a[2] == "annotated" && a[4] == *text,
                            None => a[2] == "discarded" && a[4] == "-",
                        }
                })
                && d.iter().any(|(k, b, a)| {
                    *k == ann && b.is_none() && a.as_deref().is_some_and(|v| v.starts_with(annotator.as_str()))
                })
        }
        Op::Release { sample, annotator } => {
            d.len() == 1 && d[0].0 == format!("sample/{sample}") && {
                let (b, a) = (fields(&d[0].1), fields(&d[0].2));
                b.len() == 5
                    && a.len() == 5
                    && b[2..4] == ["locked".to_string(), annotator.clone()]
                    && a[2..4] == ["pending", "-"]
            }
        }
        Op::Assign { dataset, annotator } => {
            d.len() == 1 && d[0] == (format!("asg/{dataset}/{annotator}"), None, Some("1".into()))
        }
        Op::Unassign { dataset, annotator } => {
            d.len() == 1 && d[0] == (format!("asg/{dataset}/{annotator}"), Some("1".into()), None)
        }
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> Option<&'a T> {
    (!items.is_empty()).then(|| &items[rng.random_range(0..items.len())])
}

/// Chooses an operation from the current state. Some choices are meant to
/// be refused, like submitting for someone else's lock.
fn choose(rng: &mut ChaCha8Rng, snap: &Snapshot) -> Op {
    let datasets: Vec<u64> = snap
        .keys()
        .filter_map(|k| k.strip_prefix("ds/")?.parse().ok())
        .collect();
    let samples: Vec<(u64, Vec<String>)> = snap
        .iter()
        .filter_map(|(k, v)| {
            Some((
                k.strip_prefix("sample/")?.parse().ok()?,
                v.split('|').map(str::to_string).collect(),
            ))
        })
        .collect();
    let locked: Vec<&(u64, Vec<String>)> = samples.iter().filter(|(_, f)| f[2] == "locked").collect();
    let annotator = ANNOTATORS[rng.random_range(0..ANNOTATORS.len())].to_string();
    let Some(&dataset) = pick(rng, &datasets) else {
        return Op::CreateDataset { name: "d0".into() };
    };
    loop {
        let roll = rng.random_range(0..100);
        return match roll {
            0..=3 if datasets.len() < 3 => Op::CreateDataset {
                name: format!("d{}", datasets.len()),
            },
            4..=29 => Op::Add {
                dataset,
                sentence: format!("EN{:08}", rng.random_range(1..100_000_000u64)),
            },
            30..=35 => match pick(rng, &samples) {
                Some((_, f)) => Op::Add {
                    dataset: f[0].parse().unwrap(),
                    sentence: f[1].clone(),
                },
                None => continue,
            },
            36..=57 => Op::Acquire { dataset, annotator },
            58..=79 => match pick(rng, &locked) {
                Some((id, f)) => Op::Submit {
                    sample: *id,
                    annotator: f[3].clone(),
                    approve: rng.random_bool(0.8).then(|| format!("text {}", rng.random_range(0..5))),
                },
                None => continue,
            },
            80..=85 => match pick(rng, &samples) {
                Some((id, _)) => Op::Submit {
                    sample: *id,
                    annotator,
                    approve: Some("intruder".into()),
                },
                None => continue,
            },
            86..=91 => match pick(rng, &locked) {
                Some((id, f)) => Op::Release {
                    sample: *id,
                    annotator: f[3].clone(),
                },
                None => continue,
            },
            92..=95 => Op::Assign { dataset, annotator },
            96..=99 => Op::Unassign { dataset, annotator },
            _ => continue,
        };
    }
}

fn apply(store: &Store, op: &Op, wav: &Path) -> bool {
    match op {
        Op::CreateDataset { name } => store.create_dataset(name, "en").is_ok(),
        Op::Add { dataset, sentence } => store
            .add_sample(
                *dataset,
                NewSample {
                    sentence_id: sentence.clone(),
                    original_text: "alpha bravo charlie delta".into(),
                    asr_text: "alpha bravo charly delta".into(),
                    audio: wav.to_path_buf(),
                    duration_s: 2.5,
                },
            )
            .is_ok(),
        Op::Acquire { dataset, annotator } => store.acquire_next_sample(*dataset, annotator, 3600).is_ok(),
        Op::Submit {
            sample,
            annotator,
            approve,
        } => {
            let input = match approve {
                Some(t) => AnnotationInput::approve(t.clone()),
                None => AnnotationInput::discard(vec![DiscardReason::Truncation], None),
            };
            store.submit_annotation(*sample, annotator, input).is_ok()
        }
        Op::Release { sample, annotator } => store.release_lock(*sample, annotator).is_ok(),
        Op::Assign { dataset, annotator } => store.assign(*dataset, annotator).is_ok(),
        Op::Unassign { dataset, annotator } => store.unassign(*dataset, annotator).is_ok(),
    }
}

/// Runs operations until killed or `limit` have completed.
pub fn child_main() -> ExitCode {
    let root = std::path::PathBuf::from(std::env::var(CHILD_ENV).expect("child env"));
    let seed: u64 = std::env::var("FORGE_ACCEPTANCE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let limit: usize = std::env::var("FORGE_ACCEPTANCE_LIMIT")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(OPS);
    let store = Store::open(&root.join("store")).expect("open store");
    let wav = root.join("clip.wav");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = std::io::stdout().lock();
    let mut snap = snapshot(&store);
    for _ in 0..limit {
        let op = choose(&mut rng, &snap);
        writeln!(out, "B {}", serde_json::to_string(&op).unwrap()).unwrap();
        out.flush().unwrap();
        let ok = apply(&store, &op, &wav);
        let after = snapshot(&store);
        let done = Done {
            ok,
            diff: diff(&snap, &after),
        };
        writeln!(out, "D {}", serde_json::to_string(&done).unwrap()).unwrap();
        out.flush().unwrap();
        snap = after;
    }
    ExitCode::SUCCESS
}

fn apply_diff(model: &mut Snapshot, d: &Diff) {
    for (k, _, after) in d {
        match after {
            Some(v) => model.insert(k.clone(), v.clone()),
            None => model.remove(k),
        };
    }
}

pub fn crash_safety() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_wav(
        &AudioBuffer::new(vec![3, -3, 3, -3], 16000),
        &dir.path().join("clip.wav"),
    )
    .map_err(|e| e.to_string())?;
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut model = Snapshot::new();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut done_total, mut rounds, mut kills, mut in_flight_applied, mut in_flight_lost) = (0, 0u64, 0, 0, 0);
    while done_total < OPS {
        rounds += 1;
        let mut child = Command::new(&exe)
            .env(CHILD_ENV, dir.path())
            .env("FORGE_ACCEPTANCE_SEED", rounds.to_string())
            .env("FORGE_ACCEPTANCE_LIMIT", (OPS - done_total).to_string())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        // Kill a random delay after the child announces an operation, so the
        // signal lands inside store writes as well as between operations.
        let kill_at = rng.random_range(1..=80);
        let kill_delay = std::time::Duration::from_micros(rng.random_range(0..=1500));
        let mut begun = 0;
        let mut reader = BufReader::new(child.stdout.take().unwrap());
        let mut pending: Option<Op> = None;
        let mut done_here = 0;
        let mut killed = false;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
                break;
            }
            // A line cut off by the kill was never fully reported.
            let Some(text) = line.strip_suffix('\n') else { break };
            if let Some(op) = text.strip_prefix("B ") {
                pending = Some(serde_json::from_str(op).map_err(|e| e.to_string())?);
                begun += 1;
                if begun == kill_at && !killed {
                    std::thread::sleep(kill_delay);
                    child.kill().map_err(|e| e.to_string())?;
                    killed = true;
                    kills += 1;
                }
            } else if let Some(done) = text.strip_prefix("D ") {
                let done: Done = serde_json::from_str(done).map_err(|e| e.to_string())?;
                let op = pending.take().ok_or("result without operation")?;
                if !legal(&op, &done.diff) || (!done.ok && !done.diff.is_empty()) {
                    return Err(format!("illegal transition for {op:?}: {:?}", done.diff));
                }
                apply_diff(&mut model, &done.diff);
                done_here += 1;
            }
        }
        child.wait().map_err(|e| e.to_string())?;
        done_total += done_here;

        let store = Store::open(&dir.path().join("store")).map_err(|e| format!("reopen after round {rounds}: {e}"))?;
        store.check_invariants().map_err(|e| format!("round {rounds}: {e}"))?;
        let actual = snapshot(&store);
        let d = diff(&model, &actual);
        match &pending {
            _ if d.is_empty() => {
                if pending.is_some() {
                    in_flight_lost += 1;
                }
            }
            Some(op) if legal(op, &d) => {
                apply_diff(&mut model, &d);
                in_flight_applied += 1;
            }
            _ => {
                return Err(format!(
                    "round {rounds}: store differs from committed operations ({pending:?}): {d:?}"
                ))
            }
        }
    }
    let samples = model.keys().filter(|k| k.starts_with("sample/")).count();
    Ok(format!(
        "{done_total} operations over {rounds} processes ({kills} killed, in-flight op kept {in_flight_applied} / dropped {in_flight_lost}), {samples} samples match the model"
    ))
}

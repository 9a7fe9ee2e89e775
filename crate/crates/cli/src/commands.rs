use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use ttsforge::align::asr::AsrSpec;
use ttsforge::align::{parse_batch_filename, process_batch};
use ttsforge::config::ForgeConfig;
use ttsforge::corpus::{filter_corpus, load_corpus, SentenceType};
use ttsforge::phoneme::{Phonemizer, ALL_ORDERS};
use ttsforge::qa::{render_assignment_table, render_qa_table, render_stats_table, validate_dir};
use ttsforge::script::{read_script, write_script, ScriptEntry};
use ttsforge::select::{build_entries, run_selection};
use ttsforge::store::{DatasetId, Store};
use ttsforge::synth::{generate_batch, generate_corpus, truth_path_for, write_batch, CorpusSynthConfig};
use ttsforge_service::{router, serve, Allowlist, AppState, ServiceConfig, Workers};

use crate::fail::{require, Fail, Result};
use crate::{
    Cli, Command, ExportArgs, GenCorpusArgs, GenSyntheticArgs, ProcessBatchArgs, SelectArgs, ServeArgs, StatsArgs,
    ValidateArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = settings(&cli)?;
    match cli.command {
        Command::Select(a) => select(&cfg, a),
        Command::ProcessBatch(a) => process(&cfg, a),
        Command::Validate(a) => validate(&cfg, a),
        Command::GenSynthetic(a) => gen_synthetic(&cfg, a),
        Command::GenCorpus(a) => gen_corpus(&cfg, a),
        Command::Serve(a) => serve_cmd(&cfg, a),
        Command::Export(a) => export(a),
        Command::Stats(a) => stats(a),
        Command::Config => emit(&cfg.render()),
    }
}

fn settings(cli: &Cli) -> Result<ForgeConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require(path, "settings file")?;
            ForgeConfig::load(path)?
        }
        None => ForgeConfig::default(),
    };
    let pairs = cli
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Fail::usage(format!("--set expects KEY=VALUE, got {kv:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    cfg = cfg.with_overrides(pairs)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Fail::internal(format!("cannot write to stdout: {e}")))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Fail::internal)?;
    std::fs::write(path, text + "\n").map_err(|e| Fail::internal(format!("cannot write {}: {e}", path.display())))
}

fn select(cfg: &ForgeConfig, a: SelectArgs) -> Result<()> {
    require(&a.corpus, "corpus")?;
    let mut sel = cfg.selection.clone();
    if let Some(n) = a.target_words {
        sel.target_words = n;
    }
    sel.validate()?;
    let filter = cfg.corpus.filter_config(&a.lang)?;
    let lines = load_corpus(&a.corpus)?.collect::<std::result::Result<Vec<_>, _>>()?;
    let filtered = filter_corpus(&lines, &filter, &a.lang)?;
    let accepted = filtered.sentences.len();
    let phonemizer = Phonemizer::from_spec(&cfg.phonemizer)?;
    let entries = build_entries(filtered.sentences, &phonemizer, &ALL_ORDERS)?;
    let outcome = run_selection(&entries, &sel)?;
    let script: Vec<ScriptEntry> = outcome
        .script
        .iter()
        .map(|s| ScriptEntry::from_sentence(s, Some(sel.words_per_second)))
        .collect();
    write_script(&a.out, &script, Some(&outcome.summary))?;

    let s = &outcome.summary;
    let mut text = String::new();
    let _ = writeln!(text, "corpus lines:      {}", lines.len());
    let _ = writeln!(text, "accepted:          {accepted}");
    for (reason, n) in &filtered.rejected {
        let _ = writeln!(text, "{:<18} {n}", format!("rejected {}:", reason.as_str()));
    }
    let _ = writeln!(text, "selected:          {} sentences", s.sentences);
    let _ = writeln!(text, "words:             {}", s.total_words);
    let _ = writeln!(text, "estimated hours:   {:.2}", s.estimated_hours);
    let _ = writeln!(text, "divergence:        {:.6}", s.final_divergence);
    for t in SentenceType::ALL {
        let f = s.type_fractions.get(&t).copied().unwrap_or(0.0);
        let _ = writeln!(text, "{:<18} {:.3}", format!("{}:", t.as_str()), f);
    }
    for w in &s.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    emit(&text)
}

/// Reads `--asr`: `mock`, `command:<template>` or `http`.
fn asr_spec(cfg: &ForgeConfig, a: &ProcessBatchArgs) -> Result<AsrSpec> {
    let mut spec = match a.asr.as_deref() {
        None => cfg.asr.clone(),
        Some("mock") => match &cfg.asr {
            m @ AsrSpec::Mock { .. } => m.clone(),
            _ => AsrSpec::Mock {
                truth: None,
                corruption_rate: 0.0,
                seed: cfg.seed,
            },
        },
        Some("http") => AsrSpec::Http,
        Some(other) => match other.strip_prefix("command:") {
            Some(command) if !command.trim().is_empty() => AsrSpec::Command {
                command: command.to_string(),
            },
            _ => {
                return Err(Fail::usage(format!(
                    "unknown recognizer {other:?}; use mock, command:<template> or http"
                )))
            }
        },
    };
    match &mut spec {
        AsrSpec::Mock {
            truth, corruption_rate, ..
        } => {
            if let Some(t) = &a.truth {
                *truth = Some(t.clone());
            }
            if let Some(c) = a.corruption {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Fail::usage("--corruption must be within [0, 1]"));
                }
                *corruption_rate = c;
            }
        }
        _ if a.truth.is_some() || a.corruption.is_some() => {
            return Err(Fail::usage(
                "--truth and --corruption only apply to the mock recognizer",
            ));
        }
        _ => {}
    }
    Ok(spec)
}

fn process(cfg: &ForgeConfig, a: ProcessBatchArgs) -> Result<()> {
    require(&a.script, "script")?;
    require(&a.audio, "batch recording")?;
    let name = a.audio.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    parse_batch_filename(name)?;
    let script = read_script(&a.script)?;
    let spec = asr_spec(cfg, &a)?;
    let fallback = truth_path_for(&a.audio);
    let client = spec.client(&fallback).map_err(Fail::usage)?;
    let outcome = process_batch(&a.audio, &script, client.as_ref(), &cfg.batch(), &a.out_dir)?;
    write_json(&a.out_dir.join("report.json"), &outcome)?;
    emit(&render_assignment_table(std::slice::from_ref(&outcome.report)))
}

fn validate(cfg: &ForgeConfig, a: ValidateArgs) -> Result<()> {
    require(&a.dir, "directory")?;
    let mut criteria = cfg.criteria.clone();
    if let Some(path) = &a.criteria {
        require(path, "criteria file")?;
        let text =
            std::fs::read_to_string(path).map_err(|e| Fail::usage(format!("cannot read {}: {e}", path.display())))?;
        // The criteria file may use bare names or the `criteria.` section.
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Fail::usage(format!("{} line {}: expected `key = value`", path.display(), i + 1)))?;
            let k = k.trim();
            let key = if k.starts_with("criteria.") {
                k.to_string()
            } else {
                format!("criteria.{k}")
            };
            pairs.push((key, v.trim().to_string()));
        }
        criteria = cfg.with_overrides(pairs)?.criteria;
    }
    criteria.validate()?;
    let reports = validate_dir(&a.dir, &criteria, &cfg.vad)?;
    if let Some(path) = &a.report {
        write_json(path, &reports)?;
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let mut text = if reports.is_empty() {
        String::new()
    } else {
        render_qa_table(&reports)
    };
    let _ = writeln!(
        text,
        "{} files, {passed} passed, {} failed",
        reports.len(),
        reports.len() - passed
    );
    emit(&text)
}

fn gen_synthetic(cfg: &ForgeConfig, a: GenSyntheticArgs) -> Result<()> {
    require(&a.script, "script")?;
    let script = read_script(&a.script)?;
    let start = match &a.from {
        Some(id) => script
            .entries()
            .iter()
            .position(|e| &e.id == id)
            .ok_or_else(|| Fail::usage(format!("{id} is not in the script")))?,
        None => 0,
    };
    let entries = &script.entries()[start..];
    let entries = &entries[..a.count.unwrap_or(entries.len()).min(entries.len())];
    if entries.is_empty() {
        return Err(Fail::data("no sentences to render"));
    }
    let mut synth = cfg.synth.clone();
    if let Some(g) = a.gap_s {
        synth.gap_s = g;
    }
    if let Some(r) = a.sample_rate {
        synth.sample_rate = r;
    }
    if !(synth.gap_s >= 0.0) || synth.sample_rate == 0 {
        return Err(Fail::usage("gap must be non-negative and the sample rate positive"));
    }
    let batch = generate_batch(entries, &synth);
    let truth = a.truth.clone().unwrap_or_else(|| truth_path_for(&a.out));
    write_batch(&batch, &a.out, &truth)?;
    let expected = format!("{}-{}.wav", entries[0].id, entries[entries.len() - 1].id);
    let mut text = format!(
        "wrote {} ({} utterances, {:.2} s) and {}\n",
        a.out.display(),
        entries.len(),
        batch.audio.duration_s(),
        truth.display()
    );
    if a.out.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
        let _ = writeln!(text, "note: process-batch expects the name {expected}");
    }
    emit(&text)
}

fn gen_corpus(cfg: &ForgeConfig, a: GenCorpusArgs) -> Result<()> {
    let corpus = generate_corpus(&CorpusSynthConfig {
        sentences: a.sentences,
        seed: cfg.seed,
        ..CorpusSynthConfig::default()
    });
    let mut text = corpus.join("\n");
    text.push('\n');
    std::fs::write(&a.out, text).map_err(|e| Fail::internal(format!("cannot write {}: {e}", a.out.display())))?;
    emit(&format!("wrote {} sentences to {}\n", corpus.len(), a.out.display()))
}

fn open_store(path: &Path) -> Result<Store> {
    require(path, "store")?;
    Ok(Store::open(path)?)
}

/// Resolves a dataset by numeric id, then by name.
fn resolve(store: &Store, key: &str) -> Result<(DatasetId, String)> {
    let all = store.datasets();
    let found = key
        .parse::<DatasetId>()
        .ok()
        .and_then(|id| all.iter().find(|d| d.id == id))
        .or_else(|| all.iter().find(|d| d.name == key));
    found
        .map(|d| (d.id, d.name.clone()))
        .ok_or_else(|| Fail::usage(format!("no dataset {key:?}")))
}

fn export(a: ExportArgs) -> Result<()> {
    let store = open_store(&a.store)?;
    let (id, _) = resolve(&store, &a.dataset)?;
    let (manifest, s) = store.export_dataset(id, &a.out)?;
    emit(&format!(
        "exported {} samples ({:.2} s), {} discarded, {} unfinished\nmanifest: {}\n",
        s.exported,
        s.total_duration_s,
        s.discarded,
        s.unfinished,
        manifest.display()
    ))
}

fn stats(a: StatsArgs) -> Result<()> {
    let store = open_store(&a.store)?;
    let (id, name) = resolve(&store, &a.dataset)?;
    let s = store.stats(id)?;
    if a.json {
        let text = serde_json::to_string_pretty(&s).map_err(Fail::internal)?;
        return emit(&(text + "\n"));
    }
    let mut text = render_stats_table(&[(name, s.clone())]);
    let _ = writeln!(
        text,
        "\npending {}, locked {}, annotated {}, discarded {} ({:.2}% reviewed)",
        s.n_pending, s.n_locked, s.n_annotated, s.n_discarded, s.percent_annotated
    );
    emit(&text)
}

fn serve_cmd(cfg: &ForgeConfig, a: ServeArgs) -> Result<()> {
    require(&a.allowlist, "allowlist")?;
    let allowlist = Allowlist::load(&a.allowlist).map_err(Fail::usage)?;
    if allowlist.is_empty() {
        return Err(Fail::usage("the allowlist has no accounts"));
    }
    std::fs::create_dir_all(&a.store)
        .map_err(|e| Fail::internal(format!("cannot create {}: {e}", a.store.display())))?;
    let store = Arc::new(Store::open(&a.store)?);
    let s = &cfg.service;
    let mut config = ServiceConfig::new(a.store.join("spool"));
    config.lease_s = s.lease_s;
    config.max_upload_bytes = s.max_upload_bytes;
    config.cors_origin = s.cors_origin.clone();
    let state = AppState {
        store: store.clone(),
        allowlist: Arc::new(allowlist),
        config: Arc::new(config),
    };
    let addr = a.addr.clone().unwrap_or_else(|| s.addr.clone());
    let rt = tokio::runtime::Runtime::new().map_err(Fail::internal)?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(&addr))
        .map_err(|e| Fail::usage(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(Fail::internal)?;
    let workers = Workers::spawn(store, s.workers.max(1), cfg.asr.clone(), cfg.batch());
    emit(&format!("listening on http://{local}\n"))?;
    let result = rt.block_on(serve(listener, router(state), async {
        let _ = tokio::signal::ctrl_c().await;
    }));
    workers.shutdown();
    result.map_err(Fail::internal)
}

//! `overture`: generate and ingest data, train and transfer models, run
//! manifests, probe checkpoints and print result tables.
//!
//! Errors go to stderr as one JSON line `{"error": <kind>, "message": ...}`
//! with exit code 1 (2 for usage errors).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use overture::corpus::{
    load_maestro, maestro_stream, split_wikitext_documents, subsample_documents, ChunkSet, Provenance, SubwordCodec,
    VocabId, WordCodec,
};
use overture::exp::results::{rows_from_jsonl, rows_from_log, rows_to_jsonl, table, table9};
use overture::exp::runner::{prepare_model, read_json, train_into_dir, write_json, DirLock, PhaseJob, RunSnapshot, DONE, SNAPSHOT};
use overture::exp::{collect_rows, desk, probes, Manifest, ManifestKind, Registry, ResultRow, Runner};
use overture::midi::GridSpec;
use overture::model::{Checkpoint, ModelConfig};
use overture::nn::Rng;
use overture::par::{self, Execution};
use overture::synth::{gen_corpus, GenConfig};
use overture::train::{MetricsLog, StopRule, TrainConfig};
use overture::transfer::{selective_transfer, TransferSpec};
use overture::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "overture", version, about = "Staged music-to-language pre-training workbench")]
struct Cli {
    /// Root for run directories and shared checkpoints.
    #[arg(long, global = true, env = "OVERTURE_RUN_ROOT", default_value = "runs")]
    root: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "OVERTURE_THREADS")]
    threads: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic music corpus.
    GenSynth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        chunks: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize a MAESTRO-style note table into a music corpus.
    IngestMaestro {
        /// CSV with piece_id, split, onset_sec, offset_sec, pitch, velocity.
        #[arg(long)]
        table: PathBuf,
        /// Tempo of the sixteenth-note grid.
        #[arg(long, default_value_t = 120.0)]
        bpm: f64,
        /// Only pieces of this split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_enum, default_value = "all")]
        volume: Volume,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize text into a language corpus.
    IngestText {
        /// Text files or directories of `.txt` files.
        #[arg(long, required = true, num_args = 1..)]
        source: Vec<PathBuf>,
        #[arg(long, value_enum)]
        codec: CodecKind,
        /// Directory with `encoder.json` and `vocab.bpe` (subword codec).
        #[arg(long)]
        codec_dir: Option<PathBuf>,
        /// Existing word codec to reuse; built from the sources otherwise.
        #[arg(long)]
        word_codec: Option<PathBuf>,
        /// Word vocabulary size when building a word codec.
        #[arg(long, default_value_t = 2048)]
        vocab: usize,
        /// Keep this fraction of documents (` = Title = ` headings split them).
        #[arg(long, default_value_t = 1.0)]
        subsample_fraction: f64,
        /// Keep at most this many chunks, drawn at random.
        #[arg(long)]
        max_chunks: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one phase into a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation chunks; split off `data` otherwise.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Training hyperparameters as JSON; defaults to the paper settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        d_model: usize,
        /// fixed:N, early:P[:MAX] or plateau[:MAX].
        #[arg(long, default_value = "fixed:3")]
        stop: StopRule,
        /// Checkpoint to continue from (transferred if the vocabulary differs).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        phase: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Selective weight transfer of a checkpoint into a new vocabulary.
    Transfer {
        #[arg(long)]
        src: PathBuf,
        #[arg(long, value_enum)]
        dst_vocab: VocabArg,
        /// Required for the word-level vocabulary.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) a manifest condition.
    Pipeline {
        /// Manifest file (JSON lines).
        #[arg(long, conflicts_with = "paper")]
        manifest: Option<PathBuf>,
        /// One of the built-in manifests: 1, 2, 3, convergence, compute-matched, desk.
        #[arg(long)]
        paper: Option<String>,
        #[arg(long)]
        condition: String,
        /// Defaults to every seed of the condition.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of prepared chunk sets.
        #[arg(long)]
        data: PathBuf,
    },
    /// Prepare the desk-scale data registry from plain-text files.
    PrepareDesk {
        #[arg(long)]
        text_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Behavioural probes of a checkpoint.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        kind: ProbeKind,
        /// Validation chunks (grammar and attention probes).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        max_chunks: usize,
        #[arg(long, default_value_t = 8)]
        threshold: usize,
    },
    /// Print a result table from a run root or an exported rows file.
    Stats {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(5..=9))]
        table: u32,
        /// Model width of the convergence table.
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Export the result rows of a run root or a single run directory.
    ExportMetrics {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: RowFormat,
    },
    /// Write a built-in manifest.
    Manifest {
        /// 1, 2, 3, convergence, compute-matched or desk.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Volume {
    #[value(name = "3k")]
    K3,
    #[value(name = "12k")]
    K12,
    #[value(name = "36k")]
    K36,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecKind {
    Subword,
    Word,
}

#[derive(Clone, Copy, ValueEnum)]
enum VocabArg {
    Music160,
    Subword50257,
    Wordlevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Grammar,
    Motif,
    Attention,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum RowFormat {
    Jsonl,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        par::set_threads(n)?;
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.cmd {
        Cmd::GenSynth { seed, chunks, out } => {
            let set = gen_corpus(&Rng::new(seed, "synth"), &GenConfig::default(), chunks, exec)?;
            set.save(&out)?;
            report(json!({"out": out, "chunks": set.len(), "vocab": set.vocab().name()}))
        }
        Cmd::IngestMaestro { table, bpm, split, volume, out } => {
            let pieces = load_maestro(&table)?;
            let stream = maestro_stream(&pieces, &GridSpec::from_bpm(bpm), split.as_deref());
            let source = format!("maestro:{}", table.display());
            let all = ChunkSet::from_stream(&stream, VocabId::Music160, Provenance { source, seed: 42 })?;
            let target = match volume {
                Volume::K3 => Some(3_000),
                Volume::K12 => Some(12_000),
                Volume::K36 => Some(36_000),
                Volume::All => None,
            };
            let set = match target {
                Some(n) => all.subsample(n, &mut Rng::new(42, format!("maestro/{n}")))?,
                None => all,
            };
            set.save(&out)?;
            report(json!({"out": out, "pieces": pieces.len(), "chunks": set.len()}))
        }
        Cmd::IngestText {
            source,
            codec,
            codec_dir,
            word_codec,
            vocab,
            subsample_fraction,
            max_chunks,
            seed,
            out,
        } => {
            let set = ingest_text(&source, codec, codec_dir, word_codec, vocab, subsample_fraction, seed)?;
            let set = match max_chunks {
                Some(n) if n < set.len() => set.subsample(n, &mut Rng::new(seed, "chunks"))?,
                _ => set,
            };
            set.save(&out)?;
            report(json!({"out": out, "chunks": set.len(), "vocab_size": set.vocab_size()}))
        }
        Cmd::Train {
            data,
            val,
            val_fraction,
            config,
            d_model,
            stop,
            init,
            phase,
            seed,
            out,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.exec = exec;
            train_cmd(&data, val.as_deref(), val_fraction, cfg, d_model, stop, init.as_deref(), &phase, &out)
        }
        Cmd::Transfer {
            src,
            dst_vocab,
            vocab_size,
            seed,
            out,
        } => {
            let ck = Checkpoint::load(&src)?;
            let (vocab, size) = match (dst_vocab, vocab_size) {
                (VocabArg::Music160, _) => (VocabId::Music160, overture::midi::VOCAB_SIZE),
                (VocabArg::Subword50257, _) => (VocabId::Subword50257, overture::corpus::GPT2_VOCAB_SIZE),
                (VocabArg::Wordlevel, Some(n)) => (VocabId::WordLevel, n),
                (VocabArg::Wordlevel, None) => {
                    return Err(Error::Config("--vocab-size is required for the word-level vocabulary".into()))
                }
            };
            let config = ck.meta.config.with_vocab(size);
            let t = selective_transfer(&ck, &config, vocab, &TransferSpec::default(), seed)?;
            let hash = Checkpoint::from_model(&t.model, t.meta).save(&out)?;
            report(json!({"out": out, "vocab": vocab.name(), "sha256": hash}))
        }
        Cmd::Pipeline {
            manifest,
            paper,
            condition,
            seed,
            data,
        } => {
            let m = match (manifest, paper) {
                (Some(p), _) => Manifest::load(&p)?,
                (None, Some(k)) => builtin_manifest(&k)?,
                (None, None) => return Err(Error::Config("give --manifest or --paper".into())),
            };
            let cond = m.condition(&condition)?;
            let runner = Runner::new(&cli.root, Registry::new(data), &m).with_exec(exec);
            let seeds = seed.map_or_else(|| cond.seeds.clone(), |s| vec![s]);
            for s in seeds {
                let summary = runner.run(cond, s)?;
                report(serde_json::to_value(&summary)?)?;
            }
            Ok(())
        }
        Cmd::PrepareDesk { text_dir, data } => {
            let codec = desk::prepare_registry(&text_dir, &Registry::new(&data), exec)?;
            report(json!({"data": data, "vocab": codec.vocab_size()}))
        }
        Cmd::Probe {
            ckpt,
            kind,
            data,
            max_chunks,
            threshold,
        } => {
            let model = Checkpoint::load(&ckpt)?.to_model()?;
            let val = || -> Result<ChunkSet> {
                let p = data.as_ref().ok_or_else(|| Error::Config("--data is required for this probe".into()))?;
                ChunkSet::load(p)
            };
            let v = match kind {
                ProbeKind::Grammar => serde_json::to_value(probes::probe_grammar(&model, &val()?, max_chunks, exec)?)?,
                ProbeKind::Motif => serde_json::to_value(probes::probe_motif(&model)?)?,
                ProbeKind::Attention => {
                    let f = probes::probe_attention_distance(&model, &val()?, threshold, max_chunks, exec)?;
                    json!({"threshold": threshold, "fraction": f})
                }
            };
            report(v)
        }
        Cmd::Stats {
            results,
            table: n,
            d_model,
            format,
        } => {
            let rows = load_rows(&results)?;
            let t = if n == 9 { table9(&rows, d_model)? } else { table(n, &rows)? };
            let text = match format {
                Format::Text => t.to_text(),
                Format::Csv => t.to_csv()?,
            };
            print!("{text}");
            Ok(())
        }
        Cmd::ExportMetrics { run_dir, out, format } => {
            let rows = load_rows(&run_dir)?;
            let body = match format {
                RowFormat::Jsonl => rows_to_jsonl(&rows)?,
                RowFormat::Csv => rows_to_csv(&rows)?,
            };
            fs::write(&out, body).map_err(|e| io_err(&out, e))?;
            report(json!({"out": out, "rows": rows.len()}))
        }
        Cmd::Manifest { kind, out } => {
            let m = builtin_manifest(&kind)?;
            m.save(&out)?;
            report(json!({"out": out, "conditions": m.conditions.len()}))
        }
    }
}

fn report(v: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{v}").map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn io_err(p: &Path, e: std::io::Error) -> Error {
    Error::Format(format!("{}: {e}", p.display()))
}

fn builtin_manifest(kind: &str) -> Result<Manifest> {
    if kind == "desk" {
        return Ok(desk::desk_manifest());
    }
    Ok(Manifest::paper(kind.parse::<ManifestKind>()?))
}

fn text_files(sources: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for s in sources {
        if s.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(s)
                .map_err(|e| io_err(s, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else if s.exists() {
            files.push(s.clone());
        } else {
            return Err(Error::MissingArtifact(s.clone()));
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyData("no text files in the given sources".into()));
    }
    Ok(files)
}

#[allow(clippy::too_many_arguments)]
fn ingest_text(
    sources: &[PathBuf],
    codec: CodecKind,
    codec_dir: Option<PathBuf>,
    word_codec: Option<PathBuf>,
    vocab: usize,
    fraction: f64,
    seed: u64,
) -> Result<ChunkSet> {
    let mut docs = Vec::new();
    for f in text_files(sources)? {
        let bytes = fs::read(&f).map_err(|e| io_err(&f, e))?;
        docs.extend(split_wikitext_documents(&String::from_utf8_lossy(&bytes)));
    }
    if fraction < 1.0 {
        docs = subsample_documents(&docs, fraction, &mut Rng::new(seed, "subsample"))?;
    }
    let source = sources.iter().map(|s| s.display().to_string()).collect::<Vec<_>>().join(",");
    let prov = Provenance { source, seed };
    Ok(match codec {
        CodecKind::Subword => {
            let dir = codec_dir.ok_or_else(|| Error::Config("--codec-dir is required for the subword codec".into()))?;
            let c = SubwordCodec::load_dir(&dir)?;
            let stream: Vec<u32> = docs.iter().flat_map(|d| c.encode(d)).collect();
            ChunkSet::from_stream(&stream, VocabId::Subword50257, prov)?
        }
        CodecKind::Word => {
            let c = match word_codec {
                Some(p) if p.exists() => WordCodec::load(&p)?,
                other => {
                    let c = WordCodec::build(docs.iter().map(|d| d.as_str()), vocab)?;
                    if let Some(p) = other {
                        c.save(&p)?;
                    }
                    c
                }
            };
            let stream: Vec<u32> = docs.iter().flat_map(|d| c.encode(d)).collect();
            ChunkSet::chunk(&stream, VocabId::WordLevel, c.vocab_size(), prov)?
        }
    })
}

#[derive(serde::Serialize, serde::Deserialize, PartialEq)]
struct TrainSnapshot {
    data: PathBuf,
    val: Option<PathBuf>,
    val_fraction: f64,
    train: TrainConfig,
    d_model: usize,
    stop: StopRule,
    init: Option<PathBuf>,
    phase: String,
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    val: Option<&Path>,
    val_fraction: f64,
    cfg: TrainConfig,
    d_model: usize,
    stop: StopRule,
    init: Option<&Path>,
    phase: &str,
    out: &Path,
) -> Result<()> {
    let summary_path = out.join("summary.json");
    if out.join(DONE).exists() {
        let s: serde_json::Value = read_json(&summary_path)?;
        return report(s);
    }
    let _lock = DirLock::acquire(out)?;
    let snap = TrainSnapshot {
        data: data.into(),
        val: val.map(Into::into),
        val_fraction,
        train: cfg,
        d_model,
        stop,
        init: init.map(Into::into),
        phase: phase.into(),
    };
    let snap_path = out.join(SNAPSHOT);
    if snap_path.exists() {
        let old: TrainSnapshot = read_json(&snap_path)?;
        let same = TrainSnapshot {
            train: TrainConfig { exec: cfg.exec, ..old.train },
            ..old
        } == snap;
        if !same {
            return Err(Error::Config(format!("{} holds a run with a different configuration", out.display())));
        }
    }
    write_json(&snap_path, &snap)?;
    let (train, val) = match val {
        Some(v) => (ChunkSet::load(data)?, ChunkSet::load(v)?),
        None => ChunkSet::load(data)?.split_train_val(val_fraction, &mut Rng::new(42, "split/train"))?,
    };
    let prev = init.map(Checkpoint::load).transpose()?;
    let config = ModelConfig::paper(d_model, train.vocab_size());
    let (model, lineage) = prepare_model(prev.as_ref(), &config, train.vocab(), cfg.seed)?;
    let label = data.display().to_string();
    let job = PhaseJob {
        name: phase,
        data: &label,
        stop,
        train: cfg,
        shared: false,
    };
    let (summary, _) = train_into_dir(out, model, lineage, &train, &val, &job)?;
    report(serde_json::to_value(&summary)?)
}

/// Rows of a run root (`runs/...`), a single run directory, or an exported
/// rows file.
fn load_rows(path: &Path) -> Result<Vec<ResultRow>> {
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        return rows_from_jsonl(&text);
    }
    if path.join(SNAPSHOT).exists() {
        let snap: RunSnapshot = read_json(&path.join(SNAPSHOT))?;
        let log = MetricsLog::load(&path.join("metrics.jsonl"))?;
        return Ok(rows_from_log(&snap.condition.name, snap.seed, snap.condition.d_model, &log));
    }
    if path.join("runs").exists() {
        return collect_rows(path);
    }
    Err(Error::MissingArtifact(path.into()))
}

fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

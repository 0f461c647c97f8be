//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{prepare_manifest, synthetic_band, synthetic_chorales, synthetic_manifest, synthetic_piano, Manifest, Split};
use crate::error::{Error, Result};
use crate::instrument::InstrumentTable;
use crate::midi::{ingest_midi, write_midi, IngestConfig, Windowing};
use crate::nn::Model;
use crate::rearrange::{rearrange_long, LongReference, RearrangeOptions, ReferenceDb};
use crate::score::{condense_mixture, Segment, TrackRoll};
use crate::training::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use crate::training::{TrainConfig, Trainer};
use crate::voicesep::{entry_hints, evaluate_voicesep, finetune_voicesep, separate_voices, voice_order, FinetuneConfig};

/// Default checkpoint directory when `--checkpoint` / `--out` are omitted.
pub const CHECKPOINT_DIR_ENV: &str = "TRACKQUERY_CHECKPOINT_DIR";

const PIANO: &str = "Acoustic Piano";

#[derive(Debug, Parser)]
#[command(name = "trackquery", version, about = "Query-based multi-track music rearrangement")]
pub struct Cli {
    /// Instrument taxonomy (TOML). Defaults to the built-in table.
    #[arg(long, global = true)]
    pub instruments: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a MIDI directory (or generate a synthetic corpus) into a manifest.
    Prepare(PrepareArgs),
    /// Train a model from a manifest, or fine-tune one for voice separation.
    Train(TrainArgs),
    /// Rearrange a piece under the track system of a reference piece.
    Reinstrument(RearrangeArgs),
    /// Rearrange a piece into a solo piano track.
    Pianocover(RearrangeArgs),
    /// Rearrange a piano piece into a multi-track arrangement.
    Orchestrate(RearrangeArgs),
    /// Split a mixture into four voices.
    Voicesep(VoicesepArgs),
    /// Cross-validated voice-separation accuracy over a manifest.
    EvalVoicesep(EvalVoicesepArgs),
    /// Build a reference database from a manifest.
    BuildRefdb(BuildRefdbArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SyntheticKind {
    Band,
    Piano,
    Chorales,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of .mid/.midi files.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading MIDI.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 16)]
    pub pieces: usize,
    /// Bars per synthetic piece.
    #[arg(long, default_value_t = 8)]
    pub bars: usize,
    /// Train:validation:test ratio over pieces.
    #[arg(long, default_value = "8:1:1")]
    pub split: String,
    /// Cut 8-beat windows irrespective of meter (voice-separation corpora).
    #[arg(long)]
    pub fixed_beats: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hyperparameters (TOML); defaults to the full-size configuration.
    #[arg(long, conflicts_with = "desk")]
    pub config: Option<PathBuf>,
    /// Use the small desk-scale configuration.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $TRACKQUERY_CHECKPOINT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with = "voicesep")]
    pub resume: Option<PathBuf>,
    /// Fine-tune the checkpoint given by --init for voice separation and
    /// write `voicesep.ckpt`.
    #[arg(long, requires = "init")]
    pub voicesep: bool,
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RearrangeArgs {
    #[arg(long)]
    pub source: PathBuf,
    /// Reference MIDI file.
    #[arg(long, conflicts_with = "refdb")]
    pub reference: Option<PathBuf>,
    /// Reference database directory to search.
    #[arg(long)]
    pub refdb: Option<PathBuf>,
    /// Checkpoint file; defaults to best.ckpt in $TRACKQUERY_CHECKPOINT_DIR.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Weight of the random term in reference search.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Keep the source melody as an extra track.
    #[arg(long)]
    pub preserve_melody: bool,
    /// Sample the melody track latent instead of taking its mean.
    #[arg(long)]
    pub sample_melody: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct VoicesepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Fine-tuned checkpoint; defaults to voicesep.ckpt in $TRACKQUERY_CHECKPOINT_DIR.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Give the model the first note of each voice, read from the input's
    /// own tracks.
    #[arg(long)]
    pub hints: bool,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalVoicesepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Base (not yet fine-tuned) checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildRefdbArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one split of the manifest.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Keep only piano pieces (every track a piano class).
    #[arg(long)]
    pub piano_only: bool,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other}")),
    }
}

fn parse_ratio(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad split ratio {s}")))?;
    match parts.as_slice() {
        [a, b, c] if a + b + c > 0 => Ok([*a, *b, *c]),
        _ => Err(Error::Config(format!("bad split ratio {s}; expected a:b:c"))),
    }
}

fn checkpoint_dir() -> Result<PathBuf> {
    std::env::var_os(CHECKPOINT_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("no checkpoint given and ${CHECKPOINT_DIR_ENV} is not set")))
}

fn checkpoint_path(given: Option<&Path>, file: &str) -> Result<PathBuf> {
    match given {
        Some(p) => Ok(p.to_path_buf()),
        None => Ok(checkpoint_dir()?.join(file)),
    }
}

fn read_piece(path: &Path, windowing: Windowing, table: &InstrumentTable) -> Result<Vec<Segment>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let cfg = IngestConfig {
        windowing,
        instruments: table.clone(),
    };
    let segs = ingest_midi(&bytes, &name, &cfg)?;
    if segs.is_empty() {
        return Err(Error::MidiParse(format!("{} has no 4/4 two-bar windows with notes", path.display())));
    }
    Ok(segs)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path, table: &InstrumentTable) -> Result<Model> {
    Ok(load_checkpoint(path, table)?.model)
}

/// Every track is played by a piano class.
fn is_piano(seg: &Segment, table: &InstrumentTable) -> bool {
    seg.n_tracks() > 0 && seg.tracks.iter().all(|t| table.name(t.instrument).contains("Piano"))
}

/// Entries whose segments are piano-only.
fn piano_entries(db: ReferenceDb, table: &InstrumentTable) -> ReferenceDb {
    ReferenceDb {
        entries: db
            .entries
            .into_iter()
            .filter(|e| is_piano(&e.segment, table))
            .collect(),
    }
}

/// Parses argv and runs the command. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let table = match &cli.instruments {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            InstrumentTable::from_toml_str(&text)?
        }
        None => InstrumentTable::standard(),
    };
    match cli.command {
        Command::Prepare(a) => prepare(a, &table),
        Command::Train(a) => train(a, &table),
        Command::Reinstrument(a) => rearrange_cmd(a, Task::Reinstrument, &table),
        Command::Pianocover(a) => rearrange_cmd(a, Task::PianoCover, &table),
        Command::Orchestrate(a) => rearrange_cmd(a, Task::Orchestrate, &table),
        Command::Voicesep(a) => voicesep(a, &table),
        Command::EvalVoicesep(a) => eval_voicesep(a, &table),
        Command::BuildRefdb(a) => build_refdb(a, &table),
    }
}

fn prepare(a: PrepareArgs, table: &InstrumentTable) -> Result<()> {
    let ratio = parse_ratio(&a.split)?;
    let manifest = match (a.synthetic, &a.input) {
        (Some(kind), _) => {
            let pieces = match kind {
                SyntheticKind::Band => synthetic_band(a.pieces, a.bars, a.seed, table),
                SyntheticKind::Piano => synthetic_piano(a.pieces, a.bars, a.seed, table),
                SyntheticKind::Chorales => synthetic_chorales(a.pieces, a.bars, a.seed, table),
            };
            synthetic_manifest(&pieces, ratio, a.seed, table)
        }
        (None, Some(dir)) => {
            let cfg = IngestConfig {
                windowing: if a.fixed_beats { Windowing::FixedBeats } else { Windowing::FourFourBars },
                instruments: table.clone(),
            };
            let (manifest, failures) = prepare_manifest(dir, &cfg, ratio, a.seed)?;
            for (name, err) in failures {
                eprintln!("warning: skipped {name}: {err}");
            }
            manifest
        }
        (None, None) => return Err(Error::Config("give --input or --synthetic".into())),
    };
    manifest.save(&a.output)?;
    println!("{} segments written to {}", manifest.segments.len(), a.output.display());
    Ok(())
}

fn train(a: TrainArgs, table: &InstrumentTable) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let out = match a.out {
        Some(p) => p,
        None => checkpoint_dir()?,
    };
    if a.voicesep {
        let init = a.init.as_deref().expect("clap enforces --init");
        let ck = load_checkpoint(init, table)?;
        let mut model = ck.model;
        let seed = a.seed.unwrap_or(ck.train.seed);
        model.attach_inferrer(seed)?;
        let cfg = FinetuneConfig {
            epochs: a.epochs.unwrap_or(FinetuneConfig::default().epochs),
            batch_size: a.batch_size.unwrap_or(FinetuneConfig::default().batch_size),
            seed,
            ..FinetuneConfig::default()
        };
        let segs = manifest.training_segments(Split::Train, table)?;
        let losses = finetune_voicesep(&model, &segs, &ck.train, &cfg)?;
        for (i, l) in losses.iter().enumerate() {
            println!("fine-tune epoch {i}: {l:.4}");
        }
        let path = out.join("voicesep.ckpt");
        let state = TrainState {
            next_epoch: ck.state.next_epoch,
            best_validation: None,
        };
        save_checkpoint(&path, &model, &ck.train, table, &state, None)?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(p, table)?,
        None => {
            let mut cfg = match (&a.config, a.desk) {
                (Some(p), _) => TrainConfig::load(p)?,
                (None, true) => TrainConfig::desk(),
                (None, false) => TrainConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            Trainer::new(cfg, table)?
        }
    };
    if let Some(e) = a.epochs {
        trainer.cfg.schedule.total_epochs = e;
    }
    let train = manifest.training_segments(Split::Train, table)?;
    let validation = manifest.training_segments(Split::Validation, table)?;
    trainer.fit(&train, &validation, Some(&out), |rec| {
        println!(
            "epoch {:>3}  train {:>10.4}  val {:>10}  pitch acc {}",
            rec.epoch,
            rec.train.total,
            rec.validation.map(|v| format!("{:.4}", v.total)).unwrap_or_else(|| "-".into()),
            rec.validation_pitch_accuracy.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
        );
    })?;
    println!("checkpoints in {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Task {
    Reinstrument,
    PianoCover,
    Orchestrate,
}

fn rearrange_cmd(a: RearrangeArgs, task: Task, table: &InstrumentTable) -> Result<()> {
    let model = load_model(&checkpoint_path(a.checkpoint.as_deref(), "best.ckpt")?, table)?;
    let source = read_piece(&a.source, Windowing::FourFourBars, table)?;
    let opts = RearrangeOptions {
        preserve_melody: a.preserve_melody || task == Task::Orchestrate,
        sample_melody_posterior: a.sample_melody,
        alpha: a.alpha,
        seed: a.seed,
    };
    if task == Task::Orchestrate && source.iter().all(|s| s.melody_index().is_none()) {
        return Err(Error::MissingMelody);
    }
    let out = match (&a.reference, &a.refdb) {
        (Some(r), _) => {
            let reference = read_piece(r, Windowing::FourFourBars, table)?;
            if task == Task::PianoCover && !reference.iter().all(|s| is_piano(s, table)) {
                return Err(Error::Config(format!("{} is not a piano piece", r.display())));
            }
            rearrange_long(&model, table, &source, LongReference::Fixed(&reference), &opts)?
        }
        (None, Some(dir)) => {
            let mut db = ReferenceDb::load(dir, table)?;
            if task == Task::PianoCover {
                db = piano_entries(db, table);
            }
            rearrange_long(&model, table, &source, LongReference::Database(&db), &opts)?
        }
        (None, None) if task == Task::PianoCover => {
            // Query with the source's own condensed texture.
            let piano = table.by_name(PIANO)?;
            let reference: Vec<Segment> = source
                .iter()
                .map(|s| Segment::new(vec![TrackRoll::new(condense_mixture(s).grid, piano)], s.source_id.clone()))
                .collect();
            rearrange_long(&model, table, &source, LongReference::Fixed(&reference), &opts)?
        }
        (None, None) => return Err(Error::Config("give --reference or --refdb".into())),
    };
    write_file(&a.output, &write_midi(&out, table)?)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn voicesep(a: VoicesepArgs, table: &InstrumentTable) -> Result<()> {
    let model = load_model(&checkpoint_path(a.checkpoint.as_deref(), "voicesep.ckpt")?, table)?;
    let piece = read_piece(&a.input, Windowing::FixedBeats, table)?;
    let mut out = Vec::with_capacity(piece.len());
    for seg in &piece {
        let ordered = voice_order(seg);
        let instrument = seg.tracks.first().map(|t| t.instrument).unwrap_or(table.by_name(PIANO)?);
        let hints = a.hints.then(|| entry_hints(&ordered.tracks));
        let sep = separate_voices(&model, seg, hints.as_deref(), instrument)?;
        out.push(Segment {
            tempo: seg.tempo,
            ..Segment::new(sep.voices, seg.source_id.clone())
        });
    }
    write_file(&a.output, &write_midi(&out, table)?)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn eval_voicesep(a: EvalVoicesepArgs, table: &InstrumentTable) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let pieces = manifest.pieces(None, table)?;
    let ckpt = checkpoint_path(a.checkpoint.as_deref(), "best.ckpt")?;
    let cfg = FinetuneConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..FinetuneConfig::default()
    };
    let report = evaluate_voicesep(&pieces, &ckpt, table, a.folds, &cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.output {
        Some(p) => {
            write_file(p, json.as_bytes())?;
            println!(
                "accuracy {:.2}% ({:.2}% with hints), random baseline {:.2}%; report in {}",
                report.mean_accuracy,
                report.mean_accuracy_with_hints,
                report.random_baseline,
                p.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn build_refdb(a: BuildRefdbArgs, table: &InstrumentTable) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mut db = ReferenceDb::from_manifest(&manifest, a.split, table)?;
    if a.piano_only {
        db = piano_entries(db, table);
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    db.save(&a.output, table)?;
    println!("{} reference segments written to {}", db.len(), a.output.display());
    Ok(())
}

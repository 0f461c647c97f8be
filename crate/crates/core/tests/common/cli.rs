use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trackquery::cli::CHECKPOINT_DIR_ENV;
use trackquery::corpus::{synthetic_band, synthetic_chorales, synthetic_piano};
use trackquery::instrument::InstrumentTable;
use trackquery::midi::write_midi;
use trackquery::nn::ModelConfig;
use trackquery::training::{ScheduleConfig, TrainConfig};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trackquery")
}

/// Runs the binary inside `dir` with relative paths.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove(CHECKPOINT_DIR_ENV)
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// MIDI corpora and a tiny training config inside `dir`.
pub fn write_inputs(dir: &Path) {
    let table = InstrumentTable::standard();
    let sets = [
        ("band", synthetic_band(3, 4, 1, &table)),
        ("piano", synthetic_piano(2, 4, 2, &table)),
        ("chorales", synthetic_chorales(4, 2, 3, &table)),
    ];
    for (kind, pieces) in sets {
        let d = dir.join("midi").join(kind);
        std::fs::create_dir_all(&d).unwrap();
        for (name, segs) in pieces {
            std::fs::write(d.join(format!("{name}.mid")), write_midi(&segs, &table).unwrap()).unwrap();
        }
    }
    std::fs::write(dir.join("midi/band/broken.mid"), b"not a midi file").unwrap();
    let cfg = TrainConfig {
        model: ModelConfig::tiny(),
        batch_size: 4,
        validation_batch_size: 4,
        schedule: ScheduleConfig {
            total_epochs: 2,
            ..ScheduleConfig::default()
        },
        ..TrainConfig::default()
    };
    std::fs::write(dir.join("tiny.toml"), toml::to_string(&cfg).unwrap()).unwrap();
}

/// Every subcommand in turn. Returns the artifacts written, relative to `dir`.
pub fn scenario(dir: &Path) -> Vec<PathBuf> {
    write_inputs(dir);
    let steps: &[&[&str]] = &[
        &["prepare", "--input", "midi/band", "--split", "2:1:0", "--seed", "1", "-o", "band.json"],
        &["prepare", "--input", "midi/piano", "--split", "1:1:0", "-o", "piano.json"],
        &["prepare", "--input", "midi/chorales", "--fixed-beats", "-o", "chorales.json"],
        &["prepare", "--synthetic", "chorales", "--pieces", "3", "--bars", "2", "-o", "syn.json"],
        &["train", "--manifest", "band.json", "--config", "tiny.toml", "--seed", "3", "--out", "ck"],
        &["build-refdb", "--manifest", "band.json", "-o", "db"],
        &["build-refdb", "--manifest", "piano.json", "--piano-only", "-o", "pdb"],
        &["reinstrument", "--source", "midi/band/band001.mid", "--refdb", "db", "--checkpoint", "ck/best.ckpt", "--seed", "7", "-o", "reins.mid"],
        &["reinstrument", "--source", "midi/band/band001.mid", "--reference", "midi/band/band002.mid", "--checkpoint", "ck/best.ckpt", "-o", "reins_ref.mid"],
        &["pianocover", "--source", "midi/band/band000.mid", "--refdb", "pdb", "--checkpoint", "ck/best.ckpt", "--seed", "2", "-o", "cover.mid"],
        &["pianocover", "--source", "midi/band/band000.mid", "--checkpoint", "ck/best.ckpt", "-o", "cover_self.mid"],
        &["orchestrate", "--source", "midi/piano/piano000.mid", "--refdb", "db", "--checkpoint", "ck/best.ckpt", "--alpha", "0.2", "--preserve-melody", "--seed", "7", "-o", "orch.mid"],
        &["orchestrate", "--source", "midi/piano/piano001.mid", "--refdb", "db", "--checkpoint", "ck/best.ckpt", "--sample-melody", "--seed", "7", "-o", "orch_sampled.mid"],
        &["train", "--manifest", "chorales.json", "--voicesep", "--init", "ck/best.ckpt", "--epochs", "1", "--batch-size", "4", "--out", "vs"],
        &["voicesep", "--input", "midi/chorales/chorale000.mid", "--checkpoint", "vs/voicesep.ckpt", "--hints", "-o", "voices_hints.mid"],
        &["voicesep", "--input", "midi/chorales/chorale001.mid", "--checkpoint", "vs/voicesep.ckpt", "-o", "voices.mid"],
        &["eval-voicesep", "--manifest", "chorales.json", "--checkpoint", "ck/best.ckpt", "--folds", "2", "--epochs", "1", "-o", "report.json"],
    ];
    for args in steps {
        run_ok(dir, args);
    }
    let env_run = Command::new(bin())
        .args(["orchestrate", "--source", "midi/piano/piano000.mid", "--refdb", "db", "--seed", "7", "-o", "orch_env.mid"])
        .current_dir(dir)
        .env(CHECKPOINT_DIR_ENV, "ck")
        .output()
        .unwrap();
    assert!(env_run.status.success(), "{}", String::from_utf8_lossy(&env_run.stderr));
    [
        "band.json", "piano.json", "chorales.json", "syn.json",
        "ck/best.ckpt", "ck/last.ckpt", "ck/train_log.jsonl",
        "db/manifest.json", "db/features.bin", "pdb/manifest.json", "pdb/features.bin",
        "reins.mid", "reins_ref.mid", "cover.mid", "cover_self.mid", "orch.mid", "orch_sampled.mid", "orch_env.mid",
        "vs/voicesep.ckpt", "voices_hints.mid", "voices.mid", "report.json",
    ]
    .iter()
    .map(PathBuf::from)
    .collect()
}

//! Trains two epochs, checkpoints, resumes and trains one more.
//!
//! ```text
//! cargo run --release --example checkpoint_resume -- [dir]
//! ```

use std::path::PathBuf;

use trackquery::corpus::synthetic_band;
use trackquery::instrument::InstrumentTable;
use trackquery::nn::ModelConfig;
use trackquery::score::Segment;
use trackquery::training::{TrainConfig, Trainer};

fn main() -> trackquery::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "resume_demo".into()));
    std::fs::create_dir_all(&dir).map_err(|e| trackquery::Error::io(&dir, e))?;
    let table = InstrumentTable::standard();
    let segs: Vec<Segment> = synthetic_band(4, 4, 61, &table).into_iter().flat_map(|(_, s)| s).collect();

    let mut cfg = TrainConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.batch_size = 4;
    cfg.schedule.total_epochs = 3;

    let mut trainer = Trainer::new(cfg, &table)?;
    for _ in 0..2 {
        let stats = trainer.run_epoch(&segs)?;
        println!("epoch {}: loss {:.3}", trainer.state.next_epoch - 1, stats.total);
    }
    let path = dir.join("last.ckpt");
    trainer.save(&path)?;

    let mut resumed = Trainer::resume(&path, &table)?;
    let stats = resumed.run_epoch(&segs)?;
    println!("resumed epoch {}: loss {:.3}", resumed.state.next_epoch - 1, stats.total);
    Ok(())
}

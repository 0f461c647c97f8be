//! Trains a desk-scale model on a synthetic multi-track corpus and reports
//! the loss and teacher-forced pitch accuracy after every epoch.
//!
//! ```text
//! cargo run --release --example train_desk -- [segments] [epochs] [out_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use trackquery::corpus::synthetic_band;
use trackquery::instrument::InstrumentTable;
use trackquery::score::Segment;
use trackquery::training::{TrainConfig, Trainer};

fn main() -> trackquery::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n_segments: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(32);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);
    let out_dir = args.next().map(PathBuf::from);

    let table = InstrumentTable::standard();
    let pieces = synthetic_band(n_segments.div_ceil(2), 4, 7, &table);
    let segments: Vec<Segment> = pieces.into_iter().flat_map(|(_, s)| s).take(n_segments).collect();

    let mut cfg = TrainConfig::desk();
    cfg.schedule.total_epochs = epochs;
    let mut trainer = Trainer::new(cfg, &table)?;
    println!("parameters: {}", trainer.model.params.num_scalars());

    let start = Instant::now();
    trainer.fit(&segments, &segments, out_dir.as_deref(), |rec| {
        println!(
            "epoch {:>2}  loss {:>9.3}  track {:>8.3}  val {:>9.3}  pitch acc {:.3}  [{:.0}s]",
            rec.epoch,
            rec.train.total,
            rec.train.track_recon,
            rec.validation.map(|v| v.total).unwrap_or(f64::NAN),
            rec.validation_pitch_accuracy.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
    })?;
    Ok(())
}

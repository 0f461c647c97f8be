//! Rearranges one synthetic band segment under another's instrumentation.
//!
//! ```text
//! cargo run --release --example reinstrument -- [checkpoint] [out.mid]
//! ```
//!
//! Without a checkpoint an untrained tiny model is used, which shows the
//! pipeline but not a musical result.

use std::path::Path;

use candle_core::DType;
use trackquery::corpus::synthetic_band;
use trackquery::instrument::InstrumentTable;
use trackquery::midi::write_midi;
use trackquery::nn::{Model, ModelConfig};
use trackquery::rearrange::{rearrange, RearrangeOptions};
use trackquery::training::load_checkpoint;

fn main() -> trackquery::Result<()> {
    let mut args = std::env::args().skip(1);
    let table = InstrumentTable::standard();
    let model = match args.next() {
        Some(path) => load_checkpoint(Path::new(&path), &table)?.model,
        None => Model::new(ModelConfig::tiny(), table.len(), DType::F32, 0)?,
    };
    let out = args.next().unwrap_or_else(|| "reinstrument.mid".into());

    let pieces = synthetic_band(2, 2, 11, &table);
    let (source, reference) = (&pieces[0].1[0], &pieces[1].1[0]);
    let result = rearrange(&model, source, reference, &RearrangeOptions::default())?;

    let name = |id| table.get(id).map(|c| c.name.clone()).unwrap_or_default();
    println!("source:    {:?}", source.instruments().into_iter().map(name).collect::<Vec<_>>());
    println!("reference: {:?}", reference.instruments().into_iter().map(name).collect::<Vec<_>>());
    for t in &result.tracks {
        println!("  {} -> {} notes", name(t.instrument), t.grid.note_count());
    }
    std::fs::write(&out, write_midi(&[result], &table)?).map_err(|e| trackquery::Error::io(Path::new(&out), e))?;
    println!("wrote {out}");
    Ok(())
}

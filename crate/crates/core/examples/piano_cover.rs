//! Covers a band segment for piano by using a piano segment as reference.
//!
//! ```text
//! cargo run --release --example piano_cover -- [checkpoint]
//! ```

use std::path::Path;

use candle_core::DType;
use trackquery::corpus::{synthetic_band, synthetic_piano};
use trackquery::instrument::InstrumentTable;
use trackquery::nn::{Model, ModelConfig};
use trackquery::rearrange::{rearrange, RearrangeOptions};
use trackquery::score::{condense_mixture, note_f1};
use trackquery::training::load_checkpoint;

fn main() -> trackquery::Result<()> {
    let table = InstrumentTable::standard();
    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(Path::new(&path), &table)?.model,
        None => Model::new(ModelConfig::tiny(), table.len(), DType::F32, 0)?,
    };
    let source = synthetic_band(1, 2, 21, &table).remove(0).1.remove(0);
    let piano = synthetic_piano(1, 2, 22, &table).remove(0).1.remove(0);

    let cover = rearrange(&model, &source, &piano, &RearrangeOptions::default())?;
    for t in &cover.tracks {
        println!("{}: {} notes", table.get(t.instrument)?.name, t.grid.note_count());
    }
    let f1 = note_f1(&condense_mixture(&cover).grid, &condense_mixture(&source).grid);
    println!("note-F1 of the cover against the source mixture: {:.1}%", 100.0 * f1);
    Ok(())
}

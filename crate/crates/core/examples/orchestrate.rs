//! Orchestrates a piano piece with a tagged melody into a band texture,
//! keeping the melody as an extra track.
//!
//! ```text
//! cargo run --release --example orchestrate -- [checkpoint]
//! ```

use std::path::Path;

use candle_core::DType;
use trackquery::corpus::{synthetic_band, synthetic_piano};
use trackquery::instrument::InstrumentTable;
use trackquery::nn::{Model, ModelConfig};
use trackquery::rearrange::{melody_instrument, orchestrate, RearrangeOptions};
use trackquery::training::load_checkpoint;

fn main() -> trackquery::Result<()> {
    let table = InstrumentTable::standard();
    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(Path::new(&path), &table)?.model,
        None => Model::new(ModelConfig::tiny(), table.len(), DType::F32, 0)?,
    };
    let source = synthetic_piano(1, 2, 31, &table).remove(0).1.remove(0);
    let reference = synthetic_band(1, 2, 32, &table).remove(0).1.remove(0);
    println!("melody track in source: {:?}", source.melody_index());
    println!("melody instrument: {}", table.get(melody_instrument(&reference, &table)?)?.name);

    for sample in [false, true] {
        let opts = RearrangeOptions {
            preserve_melody: true,
            sample_melody_posterior: sample,
            ..Default::default()
        };
        let out = orchestrate(&model, &table, &source, &reference, &opts)?;
        let summary: Vec<String> = out
            .tracks
            .iter()
            .map(|t| format!("{}:{}", table.get(t.instrument).map(|c| c.name.as_str()).unwrap_or("?"), t.grid.note_count()))
            .collect();
        println!("sampled melody {sample}: {}", summary.join(" "));
    }
    Ok(())
}

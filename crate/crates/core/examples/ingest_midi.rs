//! Writes a synthetic piece to MIDI, reads it back and prints the segments.
//!
//! ```text
//! cargo run --release --example ingest_midi -- [file.mid]
//! ```

use trackquery::corpus::synthetic_band;
use trackquery::midi::{ingest_midi, write_midi, IngestConfig};

fn main() -> trackquery::Result<()> {
    let cfg = IngestConfig::default();
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(&path).map_err(|e| trackquery::Error::io(std::path::Path::new(&path), e))?,
        None => {
            let (_, piece) = synthetic_band(1, 4, 3, &cfg.instruments).remove(0);
            write_midi(&piece, &cfg.instruments)?
        }
    };
    let segments = ingest_midi(&bytes, "example", &cfg)?;
    for (i, seg) in segments.iter().enumerate() {
        let names: Vec<String> = seg
            .tracks
            .iter()
            .map(|t| {
                let class = cfg.instruments.get(t.instrument).map(|c| c.name.as_str()).unwrap_or("?");
                format!("{class} ({} notes)", t.grid.note_count())
            })
            .collect();
        println!("segment {i}: {}", names.join(", "));
    }
    Ok(())
}

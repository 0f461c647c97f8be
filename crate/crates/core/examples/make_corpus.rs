//! Writes the synthetic corpora as MIDI files, ready for `trackquery prepare`.
//!
//! ```text
//! cargo run --release --example make_corpus -- <out_dir> [pieces] [bars] [seed]
//! ```
//!
//! Creates `<out_dir>/band`, `<out_dir>/piano` and `<out_dir>/chorales`.

use std::path::PathBuf;

use trackquery::corpus::{synthetic_band, synthetic_chorales, synthetic_piano};
use trackquery::instrument::InstrumentTable;
use trackquery::midi::write_midi;

fn main() -> trackquery::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "corpus".into()));
    let pieces: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let bars: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let table = InstrumentTable::standard();
    let sets = [
        ("band", synthetic_band(pieces, bars, seed, &table)),
        ("piano", synthetic_piano(pieces, bars, seed + 1, &table)),
        ("chorales", synthetic_chorales(pieces, bars, seed + 2, &table)),
    ];
    for (kind, set) in sets {
        let dir = out.join(kind);
        std::fs::create_dir_all(&dir).map_err(|e| trackquery::Error::io(&dir, e))?;
        for (name, segs) in &set {
            let path = dir.join(format!("{name}.mid"));
            std::fs::write(&path, write_midi(segs, &table)?).map_err(|e| trackquery::Error::io(&path, e))?;
        }
        println!("{}: {} files", dir.display(), set.len());
    }
    Ok(())
}

//! Prints the pitch and time functions of a small track and the mixture
//! similarity between two segments.

use trackquery::corpus::synthetic_band;
use trackquery::features::{aux_features, mixture_similarity, track_function};
use trackquery::instrument::InstrumentTable;
use trackquery::score::{condense_mixture, Grid, Note};

fn main() -> trackquery::Result<()> {
    // A C major arpeggio, one note per beat.
    let grid = Grid::from_notes([Note::new(60, 0, 4), Note::new(64, 4, 4), Note::new(67, 8, 4), Note::new(72, 12, 4)])?;
    let f = track_function(&grid);
    let active: Vec<(usize, f32)> = f.pitch.iter().copied().enumerate().filter(|(_, v)| *v > 0.0).collect();
    println!("pitch function (non-zero): {active:?}");
    println!("time function: {:?}", f.time);

    let aux = aux_features(&grid);
    println!("beat 0 aux: centre {:.3}, intensity {:.3}, rhythm {}", aux.pitch_centre[0], aux.voice_intensity[0], aux.rhythm[0]);

    let table = InstrumentTable::standard();
    let pieces = synthetic_band(2, 2, 5, &table);
    let (a, b) = (&pieces[0].1[0], &pieces[1].1[0]);
    let fa = track_function(&condense_mixture(a).grid);
    let fb = track_function(&condense_mixture(b).grid);
    println!("mixture similarity: self {:.3}, other {:.3}", mixture_similarity(&fa, &fa)?, mixture_similarity(&fa, &fb)?);
    Ok(())
}

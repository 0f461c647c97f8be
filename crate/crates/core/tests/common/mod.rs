#![allow(dead_code)]

pub mod cli;
pub mod voices;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trackquery::corpus::synthetic_band;
use trackquery::instrument::{InstrumentId, InstrumentTable};
use trackquery::score::{Grid, Note, Segment, TrackRoll, PITCHES, STEPS};
use trackquery::training::usable;

pub fn random_note(rng: &mut ChaCha8Rng, pitches: std::ops::Range<u8>) -> Note {
    let onset = rng.random_range(0..STEPS as u8);
    Note::new(rng.random_range(pitches), onset, rng.random_range(1..=(STEPS as u8 - onset)))
}

pub fn random_grid(rng: &mut ChaCha8Rng, max_notes: usize) -> Grid {
    random_grid_in(rng, max_notes, 0..PITCHES as u8)
}

pub fn random_grid_in(rng: &mut ChaCha8Rng, max_notes: usize, pitches: std::ops::Range<u8>) -> Grid {
    let n = rng.random_range(0..=max_notes);
    Grid::from_notes((0..n).map(|_| random_note(rng, pitches.clone()))).unwrap()
}

pub fn random_segment(rng: &mut ChaCha8Rng, tracks: usize, n_instruments: usize) -> Segment {
    Segment::new(
        (0..tracks)
            .map(|_| {
                let g = random_grid_in(rng, 12, 36..96);
                TrackRoll::new(g, InstrumentId(rng.random_range(0..n_instruments) as u16))
            })
            .collect(),
        "random",
    )
}

/// Usable band segments from `pieces` synthetic 4-bar pieces.
pub fn band(pieces: usize, seed: u64, table: &InstrumentTable) -> Vec<Segment> {
    let segs: Vec<Segment> = synthetic_band(pieces, 4, seed, table).into_iter().flat_map(|(_, s)| s).collect();
    usable(&segs)
}

/// A batch of `size` segments sharing one track count.
pub fn same_width_batch(segments: &[Segment], size: usize) -> Vec<Segment> {
    let n = segments[0].n_tracks();
    segments.iter().filter(|s| s.n_tracks() == n).take(size).cloned().collect()
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::score::{transpose, Segment};

/// Key offsets used for augmentation: one of the 12 keys.
pub const KEY_OFFSETS: std::ops::RangeInclusive<i32> = -5..=6;

/// Generator for one training step, derived from the run seed so that any
/// step can be replayed without replaying its predecessors.
pub fn step_rng(seed: u64, epoch: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | step as u64);
    rng
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c_u64);
    rng.set_stream(epoch as u64);
    rng
}

/// Drops empty tracks and silent segments.
pub fn usable(segments: &[Segment]) -> Vec<Segment> {
    segments.iter().filter_map(Segment::without_empty_tracks).collect()
}

/// Batches of indices into `segments`. Segments are grouped by track count,
/// shuffled within each group and chunked; batch order is then shuffled.
pub fn make_batches(segments: &[Segment], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = epoch_rng(seed, epoch);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        groups.entry(s.n_tracks()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

pub fn draw_key_offset(rng: &mut impl Rng) -> i32 {
    rng.random_range(KEY_OFFSETS)
}

/// Transposes every segment of a batch by one shared offset.
pub fn augment(batch: &[Segment], semitones: i32) -> Result<Vec<Segment>> {
    batch.iter().map(|s| transpose(s, semitones)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::InstrumentId;
    use crate::score::{Grid, Note, TrackRoll};

    fn seg(n: usize) -> Segment {
        let tracks = (0..n)
            .map(|i| TrackRoll::new(Grid::from_notes([Note::new(60 + i as u8, 0, 4)]).unwrap(), InstrumentId(0)))
            .collect();
        Segment::new(tracks, "s")
    }

    #[test]
    fn batches_share_track_count() {
        let segs: Vec<Segment> = (0..20).map(|i| seg(1 + i % 3)).collect();
        let batches = make_batches(&segs, 4, 1, 0);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.iter().all(|&i| segs[i].n_tracks() == segs[b[0]].n_tracks()));
        }
    }

    #[test]
    fn step_rng_is_replayable() {
        let a: u64 = step_rng(3, 2, 5).random();
        let b: u64 = step_rng(3, 2, 5).random();
        let c: u64 = step_rng(3, 2, 6).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

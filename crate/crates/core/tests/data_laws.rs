mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackquery::features::{aux_features, track_function};
use trackquery::instrument::InstrumentId;
use trackquery::score::{condense_mixture, events_to_roll, roll_to_events, transpose, Grid, Segment, TrackRoll, PITCHES, STEPS};

use common::{random_grid, random_grid_in, random_segment};

fn grid_from(seed: u64) -> Grid {
    random_grid(&mut ChaCha8Rng::seed_from_u64(seed), 24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mixture_is_cellwise_max(seed in any::<u64>(), tracks in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = Segment::new(
            (0..tracks).map(|_| TrackRoll::new(random_grid(&mut rng, 16), InstrumentId(0))).collect(),
            "p",
        );
        let mix = condense_mixture(&seg);
        for i in 0..PITCHES * STEPS {
            let want = seg.tracks.iter().map(|t| t.grid.cells()[i]).max().unwrap();
            prop_assert_eq!(mix.grid.cells()[i], want);
        }
    }

    #[test]
    fn events_round_trip(seed in any::<u64>()) {
        let g = grid_from(seed);
        let ev = roll_to_events(&g);
        prop_assert_eq!(ev.note_count(), g.note_count());
        for step in &ev.steps {
            prop_assert!(step.windows(2).all(|w| w[0].pitch < w[1].pitch));
        }
        prop_assert_eq!(events_to_roll(&ev).unwrap(), g);
    }

    #[test]
    fn transposition_shifts_pitch_function(seed in any::<u64>(), k in -11i32..=11) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid_in(&mut rng, 20, 11..117);
        let (f, h) = (track_function(&g), track_function(&g.shifted(k)));
        for p in 0..PITCHES as i32 {
            let q = p - k;
            let want = if (0..PITCHES as i32).contains(&q) { f.pitch[q as usize] } else { 0.0 };
            prop_assert_eq!(h.pitch[p as usize], want);
        }
        prop_assert_eq!(h.time, f.time);
    }

    #[test]
    fn transpose_commutes_with_mixture(seed in any::<u64>(), k in -11i32..=11) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = random_segment(&mut rng, 3, 4);
        let lhs = condense_mixture(&transpose(&seg, k).unwrap()).grid;
        prop_assert_eq!(lhs, condense_mixture(&seg).grid.shifted(k));
    }

    #[test]
    fn functions_stay_in_unit_range(seed in any::<u64>()) {
        let g = grid_from(seed);
        let f = track_function(&g);
        prop_assert!(f.pitch.iter().chain(&f.time).all(|v| (0.0..=1.0).contains(v)));
        let a = aux_features(&g);
        for t in 0..STEPS {
            prop_assert!((0.0..=1.0).contains(&a.pitch_centre[t]));
            prop_assert!((0.0..=1.0).contains(&a.voice_intensity[t]));
            prop_assert!(a.rhythm[t] == 0.0 || a.rhythm[t] == 1.0);
            if a.rhythm[t] == 0.0 {
                prop_assert_eq!((a.pitch_centre[t], a.voice_intensity[t]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn function_matches_onset_counts(seed in any::<u64>()) {
        let g = grid_from(seed);
        let f = track_function(&g);
        for p in 0..PITCHES {
            let n = (0..STEPS).filter(|&t| g.get(p, t) > 0).count();
            prop_assert_eq!(f.pitch[p], n as f32 / STEPS as f32);
        }
        for t in 0..STEPS {
            let n = (0..PITCHES).filter(|&p| g.get(p, t) > 0).count();
            prop_assert_eq!(f.time[t], n as f32 / PITCHES as f32);
        }
    }
}

#[test]
fn transposing_past_an_octave_is_rejected() {
    let seg = Segment::new(vec![TrackRoll::new(Grid::empty(), InstrumentId(0))], "p");
    assert!(transpose(&seg, 12).is_err());
    assert!(transpose(&seg, -12).is_err());
}

#[test]
fn zero_track_has_zero_features() {
    let f = track_function(&Grid::empty());
    assert!(f.is_zero());
    let a = aux_features(&Grid::empty());
    assert!(a.rhythm.iter().all(|&v| v == 0.0));
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trackquery::score::Note;
use trackquery::voicesep::{conflict_count, voice_distances, N_VOICES};

use super::{random_grid_in, random_note};

/// Minimal total distance over all conflict-free assignments, by brute force.
pub fn exhaustive(notes: &[Note], generated: &[Vec<Note>]) -> Option<u64> {
    let dist = voice_distances(notes, generated);
    let k = generated.len();
    let mut best: Option<u64> = None;
    let mut voices = vec![0usize; notes.len()];
    for code in 0..k.pow(notes.len() as u32) {
        let mut c = code;
        for v in voices.iter_mut() {
            *v = c % k;
            c /= k;
        }
        if conflict_count(notes, &voices) > 0 || voices.iter().enumerate().any(|(i, &v)| dist[i][v] == u32::MAX) {
            continue;
        }
        let cost: u64 = voices.iter().enumerate().map(|(i, &v)| dist[i][v] as u64).sum();
        best = Some(best.map_or(cost, |b| b.min(cost)));
    }
    best
}

pub fn cost(notes: &[Note], generated: &[Vec<Note>], voices: &[usize]) -> u64 {
    let dist = voice_distances(notes, generated);
    voices.iter().enumerate().map(|(i, &v)| dist[i][v] as u64).sum()
}

pub fn n(p: u8, t: u8, d: u8) -> Note {
    Note::new(p, t, d)
}

pub fn crafted() -> Vec<(Vec<Note>, Vec<Vec<Note>>)> {
    vec![
        // two overlapping notes drawn to the same voice
        (vec![n(70, 0, 4), n(64, 0, 4)], vec![vec![n(68, 0, 4)], vec![n(62, 8, 4)], vec![], vec![]]),
        // a triad whose notes all sit nearest the top voice
        (
            vec![n(72, 0, 4), n(67, 0, 4), n(64, 0, 4)],
            vec![vec![n(70, 0, 4)], vec![n(60, 0, 4)], vec![n(55, 0, 4)], vec![n(40, 0, 4)]],
        ),
        // a four-note chord against slightly detuned anchors
        (
            vec![n(76, 0, 8), n(69, 0, 8), n(64, 0, 8), n(45, 0, 8)],
            vec![vec![n(77, 0, 8)], vec![n(71, 0, 8)], vec![n(71, 2, 4)], vec![n(44, 0, 8)]],
        ),
        // two separate conflicts at different times
        (
            vec![n(67, 0, 2), n(65, 0, 2), n(55, 8, 2), n(53, 8, 2)],
            vec![vec![n(66, 0, 2)], vec![n(60, 0, 2), n(60, 8, 2)], vec![n(54, 8, 2)], vec![n(40, 8, 2)]],
        ),
        // a note above a sustained bass moves to its second-nearest voice
        (
            vec![n(72, 4, 4), n(71, 4, 4), n(60, 0, 8)],
            vec![vec![n(72, 4, 4)], vec![n(58, 0, 8)], vec![n(66, 4, 4)], vec![n(40, 0, 8)]],
        ),
        // two three-note chords
        (
            vec![n(79, 0, 4), n(74, 0, 4), n(67, 0, 4), n(77, 4, 4), n(72, 4, 4), n(65, 4, 4)],
            vec![
                vec![n(78, 0, 4), n(76, 4, 4)],
                vec![n(73, 0, 4), n(73, 4, 4)],
                vec![n(60, 0, 8)],
                vec![n(48, 0, 8)],
            ],
        ),
        // sequential notes in one voice need no moves
        (
            vec![n(60, 0, 4), n(62, 4, 4), n(64, 8, 4), n(65, 12, 4)],
            vec![vec![n(61, 0, 16)], vec![n(50, 0, 4)], vec![], vec![]],
        ),
    ]
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Note>, Vec<Vec<Note>>) {
    let notes = random_grid_in(rng, 10, 40..90).notes();
    let generated = (0..N_VOICES)
        .map(|_| (0..rng.random_range(0..5)).map(|_| random_note(rng, 40..90)).collect())
        .collect();
    (notes, generated)
}

pub fn nearest_neighbour(notes: &[Note], generated: &[Vec<Note>]) -> Vec<usize> {
    voice_distances(notes, generated)
        .iter()
        .zip(notes)
        .map(|(d, note)| {
            generated
                .iter()
                .position(|g| g.iter().any(|m| m.pitch == note.pitch && m.onset == note.onset))
                .unwrap_or_else(|| (0..d.len()).min_by_key(|&v| (d[v], v)).unwrap())
        })
        .collect()
}


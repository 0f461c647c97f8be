//! Modified piano-roll data model: a track is a 128x32 matrix holding note
//! durations (in 1/4-beat steps) at onset positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::InstrumentId;

pub const PITCHES: usize = 128;
pub const STEPS: usize = 32;
pub const STEPS_PER_BEAT: usize = 4;
pub const BEATS_PER_BAR: usize = 4;
pub const BARS_PER_SEGMENT: usize = 2;

pub const DEFAULT_TEMPO: u32 = 500_000;

/// A single note inside a segment. `onset` is the step index, `duration`
/// the length in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u8,
    pub duration: u8,
}

impl Note {
    pub fn new(pitch: u8, onset: u8, duration: u8) -> Self {
        Note {
            pitch,
            onset,
            duration,
        }
    }

    /// Last step (inclusive) during which the note sounds.
    pub fn last_step(&self) -> u8 {
        self.onset + self.duration.max(1) - 1
    }

    pub fn overlaps(&self, other: &Note) -> bool {
        self.onset <= other.last_step() && other.onset <= self.last_step()
    }
}

/// P x T duration matrix, pitch-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    cells: Vec<u8>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("notes", &self.notes()).finish()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::empty()
    }
}

impl Grid {
    pub fn empty() -> Self {
        Grid {
            cells: vec![0; PITCHES * STEPS],
        }
    }

    /// Builds a grid from notes. Durations are clipped at the segment end and
    /// duplicate (pitch, onset) pairs keep the longer duration.
    pub fn from_notes<I: IntoIterator<Item = Note>>(notes: I) -> Result<Self> {
        let mut grid = Grid::empty();
        for note in notes {
            grid.insert(note)?;
        }
        Ok(grid)
    }

    pub fn insert(&mut self, note: Note) -> Result<()> {
        let (p, t) = (note.pitch as usize, note.onset as usize);
        if p >= PITCHES || t >= STEPS {
            return Err(Error::InvalidGrid(format!(
                "note ({}, {}) outside the {}x{} grid",
                note.pitch, note.onset, PITCHES, STEPS
            )));
        }
        if note.duration == 0 {
            return Err(Error::InvalidGrid(format!(
                "note ({}, {}) has zero duration",
                note.pitch, note.onset
            )));
        }
        let dur = note.duration.min((STEPS - t) as u8);
        let cell = &mut self.cells[p * STEPS + t];
        *cell = (*cell).max(dur);
        Ok(())
    }

    /// Validates raw cell values (pitch-major, `PITCHES * STEPS` long).
    pub fn from_cells(cells: Vec<u8>) -> Result<Self> {
        if cells.len() != PITCHES * STEPS {
            return Err(Error::InvalidGrid(format!(
                "expected {} cells, got {}",
                PITCHES * STEPS,
                cells.len()
            )));
        }
        for (i, &v) in cells.iter().enumerate() {
            let t = i % STEPS;
            if v as usize > STEPS - t {
                return Err(Error::InvalidGrid(format!(
                    "duration {v} at step {t} runs past the segment end"
                )));
            }
        }
        Ok(Grid { cells })
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, pitch: usize, step: usize) -> u8 {
        self.cells[pitch * STEPS + step]
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&v| v == 0)
    }

    pub fn note_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v > 0).count()
    }

    /// Notes ordered by onset, then ascending pitch.
    pub fn notes(&self) -> Vec<Note> {
        let mut out = Vec::new();
        for t in 0..STEPS {
            for p in 0..PITCHES {
                let d = self.get(p, t);
                if d > 0 {
                    out.push(Note::new(p as u8, t as u8, d));
                }
            }
        }
        out
    }

    /// Position-wise maximum with another grid.
    pub fn max_with(&mut self, other: &Grid) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a = (*a).max(b);
        }
    }

    /// Shifts every note by `semitones`, dropping notes that leave [0, 127].
    pub fn shifted(&self, semitones: i32) -> Grid {
        let mut out = Grid::empty();
        for note in self.notes() {
            let p = note.pitch as i32 + semitones;
            if (0..PITCHES as i32).contains(&p) {
                out.cells[p as usize * STEPS + note.onset as usize] = note.duration;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackRole {
    Melody,
    Accompaniment,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrackRoll {
    pub grid: Grid,
    pub instrument: InstrumentId,
    pub role: Option<TrackRole>,
}

impl TrackRoll {
    pub fn new(grid: Grid, instrument: InstrumentId) -> Self {
        TrackRoll {
            grid,
            instrument,
            role: None,
        }
    }

    pub fn with_role(mut self, role: TrackRole) -> Self {
        self.role = Some(role);
        self
    }
}

/// An N-track, 2-bar, 4/4 excerpt at 4 steps per beat.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segment {
    pub tracks: Vec<TrackRoll>,
    pub source_id: String,
    /// Microseconds per quarter note.
    pub tempo: u32,
}

impl Segment {
    pub fn new(tracks: Vec<TrackRoll>, source_id: impl Into<String>) -> Self {
        Segment {
            tracks,
            source_id: source_id.into(),
            tempo: DEFAULT_TEMPO,
        }
    }

    pub fn n_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn instruments(&self) -> Vec<InstrumentId> {
        self.tracks.iter().map(|t| t.instrument).collect()
    }

    pub fn is_silent(&self) -> bool {
        self.tracks.iter().all(|t| t.grid.is_empty())
    }

    pub fn melody_index(&self) -> Option<usize> {
        self.tracks
            .iter()
            .position(|t| t.role == Some(TrackRole::Melody))
    }

    pub fn mixture(&self) -> Mixture {
        condense_mixture(self)
    }

    /// Drops tracks with no notes. Returns `None` when nothing is left.
    pub fn without_empty_tracks(&self) -> Option<Segment> {
        let tracks: Vec<_> = self
            .tracks
            .iter()
            .filter(|t| !t.grid.is_empty())
            .cloned()
            .collect();
        (!tracks.is_empty()).then(|| Segment {
            tracks,
            source_id: self.source_id.clone(),
            tempo: self.tempo,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mixture {
    pub grid: Grid,
}

impl Mixture {
    pub fn notes(&self) -> Vec<Note> {
        self.grid.notes()
    }
}

pub fn condense_mixture(seg: &Segment) -> Mixture {
    let mut grid = Grid::empty();
    for track in &seg.tracks {
        grid.max_with(&track.grid);
    }
    Mixture { grid }
}

pub fn transpose(seg: &Segment, semitones: i32) -> Result<Segment> {
    if semitones.abs() > 11 {
        return Err(Error::TransposeRange(semitones));
    }
    Ok(Segment {
        tracks: seg
            .tracks
            .iter()
            .map(|t| TrackRoll {
                grid: t.grid.shifted(semitones),
                instrument: t.instrument,
                role: t.role,
            })
            .collect(),
        source_id: seg.source_id.clone(),
        tempo: seg.tempo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub duration: u8,
}

/// Per-step, ascending-pitch note lists: the token layout consumed by the
/// hierarchical encoder and produced by the track decoder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NoteEventSequence {
    pub steps: Vec<Vec<NoteEvent>>,
}

impl Default for NoteEventSequence {
    fn default() -> Self {
        NoteEventSequence {
            steps: vec![Vec::new(); STEPS],
        }
    }
}

impl NoteEventSequence {
    pub fn max_notes_per_step(&self) -> usize {
        self.steps.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn note_count(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

pub fn roll_to_events(grid: &Grid) -> NoteEventSequence {
    let steps = (0..STEPS)
        .map(|t| {
            (0..PITCHES)
                .filter_map(|p| {
                    let d = grid.get(p, t);
                    (d > 0).then_some(NoteEvent {
                        pitch: p as u8,
                        duration: d,
                    })
                })
                .collect()
        })
        .collect();
    NoteEventSequence { steps }
}

pub fn events_to_roll(seq: &NoteEventSequence) -> Result<Grid> {
    if seq.steps.len() != STEPS {
        return Err(Error::InvalidEvents(format!(
            "expected {STEPS} steps, got {}",
            seq.steps.len()
        )));
    }
    let mut grid = Grid::empty();
    for (t, events) in seq.steps.iter().enumerate() {
        for ev in events {
            if ev.pitch as usize >= PITCHES {
                return Err(Error::InvalidEvents(format!("pitch {} out of range", ev.pitch)));
            }
            if ev.duration == 0 || ev.duration as usize > STEPS {
                return Err(Error::InvalidEvents(format!(
                    "duration {} out of range",
                    ev.duration
                )));
            }
            if ev.duration as usize > STEPS - t {
                return Err(Error::InvalidEvents(format!(
                    "duration {} at step {t} runs past the segment end",
                    ev.duration
                )));
            }
            let cell = &mut grid.cells[ev.pitch as usize * STEPS + t];
            if *cell != 0 {
                return Err(Error::InvalidEvents(format!(
                    "pitch {} appears twice at step {t}",
                    ev.pitch
                )));
            }
            *cell = ev.duration;
        }
    }
    Ok(grid)
}

/// Note-level F1 between two grids, matching notes on (pitch, onset).
/// Two empty grids score 1.
pub fn note_f1(predicted: &Grid, truth: &Grid) -> f64 {
    let (np, nt) = (predicted.note_count(), truth.note_count());
    if np == 0 && nt == 0 {
        return 1.0;
    }
    let hits = predicted
        .cells
        .iter()
        .zip(&truth.cells)
        .filter(|(&a, &b)| a > 0 && b > 0)
        .count();
    2.0 * hits as f64 / (np + nt) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(grids: Vec<Grid>) -> Segment {
        Segment::new(
            grids
                .into_iter()
                .map(|g| TrackRoll::new(g, InstrumentId(0)))
                .collect(),
            "test",
        )
    }

    #[test]
    fn f1_ignores_duration() {
        let a = Grid::from_notes([Note::new(60, 0, 2), Note::new(62, 4, 1)]).unwrap();
        let b = Grid::from_notes([Note::new(60, 0, 8)]).unwrap();
        assert!((note_f1(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(note_f1(&Grid::empty(), &Grid::empty()), 1.0);
        assert_eq!(note_f1(&a, &Grid::empty()), 0.0);
    }

    #[test]
    fn mixture_keeps_longer_duration() {
        let a = Grid::from_notes([Note::new(60, 0, 2)]).unwrap();
        let b = Grid::from_notes([Note::new(60, 0, 4)]).unwrap();
        assert_eq!(seg(vec![a, b]).mixture().grid.get(60, 0), 4);
    }

    #[test]
    fn single_track_mixture_is_identity() {
        let a = Grid::from_notes([Note::new(60, 3, 2), Note::new(40, 9, 7)]).unwrap();
        assert_eq!(seg(vec![a.clone()]).mixture().grid, a);
    }

    #[test]
    fn disjoint_tracks_union() {
        let a = Grid::from_notes([Note::new(60, 0, 2)]).unwrap();
        let b = Grid::from_notes([Note::new(48, 4, 4)]).unwrap();
        let m = seg(vec![a, b]).mixture();
        assert_eq!(
            m.notes(),
            vec![Note::new(60, 0, 2), Note::new(48, 4, 4)]
        );
    }

    #[test]
    fn transpose_shifts_and_drops() {
        let g = Grid::from_notes([Note::new(60, 3, 5), Note::new(127, 0, 1)]).unwrap();
        let s = seg(vec![g]);
        assert_eq!(transpose(&s, 0).unwrap(), s);
        let up = transpose(&s, 1).unwrap();
        assert_eq!(up.tracks[0].grid.notes(), vec![Note::new(61, 3, 5)]);
        assert!(matches!(transpose(&s, 12), Err(Error::TransposeRange(12))));
    }

    #[test]
    fn clipping_at_segment_end() {
        let g = Grid::from_notes([Note::new(60, 30, 8)]).unwrap();
        assert_eq!(g.get(60, 30), 2);
        assert!(Grid::from_cells({
            let mut c = vec![0u8; PITCHES * STEPS];
            c[31] = 2;
            c
        })
        .is_err());
    }

    #[test]
    fn events_codec_examples() {
        let empty = roll_to_events(&Grid::empty());
        assert_eq!(empty.steps.len(), STEPS);
        assert!(empty.steps.iter().all(Vec::is_empty));
        assert_eq!(events_to_roll(&empty).unwrap(), Grid::empty());

        let g = Grid::from_notes([Note::new(64, 0, 4), Note::new(60, 0, 4)]).unwrap();
        let ev = roll_to_events(&g);
        assert_eq!(
            ev.steps[0],
            vec![
                NoteEvent { pitch: 60, duration: 4 },
                NoteEvent { pitch: 64, duration: 4 }
            ]
        );

        let mut seq = NoteEventSequence::default();
        seq.steps[3].push(NoteEvent { pitch: 60, duration: 4 });
        let g = events_to_roll(&seq).unwrap();
        assert_eq!(g.notes(), vec![Note::new(60, 3, 4)]);
    }

    #[test]
    fn duplicate_pitch_in_step_rejected() {
        let mut seq = NoteEventSequence::default();
        seq.steps[0].push(NoteEvent { pitch: 60, duration: 1 });
        seq.steps[0].push(NoteEvent { pitch: 60, duration: 2 });
        assert!(matches!(events_to_roll(&seq), Err(Error::InvalidEvents(_))));
    }

    #[test]
    fn overlap_is_duration_aware() {
        let a = Note::new(60, 0, 4);
        assert!(a.overlaps(&Note::new(50, 3, 1)));
        assert!(!a.overlaps(&Note::new(50, 4, 1)));
    }
}

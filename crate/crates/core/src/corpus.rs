//! Corpus manifests and the synthetic desk-scale corpora.
//!
//! A manifest is a JSON document listing every segment with its notes,
//! instrument names and split assignment. Instruments are stored by name so
//! the file stays readable and survives vocabulary re-ordering.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::{InstrumentId, InstrumentTable};
use crate::midi::{ingest_midi, IngestConfig};
use crate::score::{Grid, Note, Segment, TrackRole, TrackRoll, DEFAULT_TEMPO, STEPS};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub instrument: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<TrackRole>,
    /// `[pitch, onset, duration]` triples.
    pub notes: Vec<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub id: String,
    pub piece: String,
    /// Position of the segment inside its piece, in 2-bar windows.
    pub index: usize,
    pub split: Split,
    pub tempo: u32,
    pub tracks: Vec<TrackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub segments: Vec<SegmentEntry>,
}

/// A manifest entry resolved against an instrument table.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSegment {
    pub piece: String,
    pub index: usize,
    pub split: Split,
    pub segment: Segment,
}

impl SegmentEntry {
    pub fn from_segment(
        seg: &Segment,
        piece: &str,
        index: usize,
        split: Split,
        table: &InstrumentTable,
    ) -> Self {
        SegmentEntry {
            id: seg.source_id.clone(),
            piece: piece.to_string(),
            index,
            split,
            tempo: seg.tempo,
            tracks: seg
                .tracks
                .iter()
                .map(|t| TrackEntry {
                    instrument: table.name(t.instrument).to_string(),
                    role: t.role,
                    notes: t
                        .grid
                        .notes()
                        .iter()
                        .map(|n| [n.pitch, n.onset, n.duration])
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_segment(&self, table: &InstrumentTable) -> Result<Segment> {
        let tracks = self
            .tracks
            .iter()
            .map(|t| {
                let grid = Grid::from_notes(t.notes.iter().map(|&[p, o, d]| Note::new(p, o, d)))?;
                Ok(TrackRoll {
                    grid,
                    instrument: table.by_name(&t.instrument)?,
                    role: t.role,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Segment {
            tracks,
            source_id: self.id.clone(),
            tempo: self.tempo,
        })
    }
}

impl Manifest {
    pub fn new() -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            segments: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} is not supported",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn push_piece(&mut self, piece: &str, segments: &[Segment], split: Split, table: &InstrumentTable) {
        for (i, s) in segments.iter().enumerate() {
            self.segments
                .push(SegmentEntry::from_segment(s, piece, i, split, table));
        }
    }

    pub fn resolve(&self, table: &InstrumentTable) -> Result<Vec<CorpusSegment>> {
        self.segments
            .iter()
            .map(|e| {
                Ok(CorpusSegment {
                    piece: e.piece.clone(),
                    index: e.index,
                    split: e.split,
                    segment: e.to_segment(table)?,
                })
            })
            .collect()
    }

    /// Segments of one split with empty tracks removed and silent segments
    /// dropped, ready for training.
    pub fn training_segments(&self, split: Split, table: &InstrumentTable) -> Result<Vec<Segment>> {
        Ok(self
            .resolve(table)?
            .into_iter()
            .filter(|c| c.split == split)
            .filter_map(|c| c.segment.without_empty_tracks())
            .collect())
    }

    /// Pieces (ordered segment lists) of one split.
    pub fn pieces(&self, split: Option<Split>, table: &InstrumentTable) -> Result<Vec<(String, Vec<Segment>)>> {
        let mut by_piece: BTreeMap<String, Vec<(usize, Segment)>> = BTreeMap::new();
        for c in self.resolve(table)? {
            if split.is_none_or(|s| s == c.split) {
                by_piece.entry(c.piece).or_default().push((c.index, c.segment));
            }
        }
        Ok(by_piece
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|(i, _)| *i);
                (k, v.into_iter().map(|(_, s)| s).collect())
            })
            .collect())
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new()
    }
}

/// Assigns pieces to train/validation/test with the given ratio, shuffling
/// piece names with `seed`.
pub fn split_pieces(pieces: &[String], ratio: [u32; 3], seed: u64) -> BTreeMap<String, Split> {
    let mut names: Vec<String> = pieces.to_vec();
    names.sort();
    names.dedup();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: u32 = ratio.iter().sum::<u32>().max(1);
    let n = names.len();
    let n_val = (n as u64 * ratio[1] as u64 / total as u64) as usize;
    let n_test = (n as u64 * ratio[2] as u64 / total as u64) as usize;
    names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let split = if i < n_val {
                Split::Validation
            } else if i < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            (name, split)
        })
        .collect()
}

/// Ingests every `.mid`/`.midi` file under `dir` (non-recursive, sorted by
/// name). Files that fail to parse are reported and skipped.
pub fn prepare_manifest(
    dir: &Path,
    cfg: &IngestConfig,
    ratio: [u32; 3],
    seed: u64,
) -> Result<(Manifest, Vec<(String, Error)>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    files.sort();

    let mut failures = Vec::new();
    let mut pieces = Vec::new();
    for path in files {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                failures.push((name, Error::io(&path, e)));
                continue;
            }
        };
        match ingest_midi(&bytes, &name, cfg) {
            Ok(segs) if !segs.is_empty() => pieces.push((name, segs)),
            Ok(_) => log::warn!("{name}: no pitched notes"),
            Err(e) => failures.push((name, e)),
        }
    }
    let names: Vec<String> = pieces.iter().map(|(n, _)| n.clone()).collect();
    let splits = split_pieces(&names, ratio, seed);
    let mut manifest = Manifest::new();
    for (name, segs) in &pieces {
        manifest.push_piece(name, segs, splits[name], &cfg.instruments);
    }
    Ok((manifest, failures))
}

// ---------------------------------------------------------------------------
// Synthetic corpora

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

/// Triad (root position pitch classes, relative to key) on a scale degree.
fn triad(degree: usize) -> [i32; 3] {
    [0, 2, 4].map(|k| {
        let d = degree + k;
        MAJOR[d % 7] + 12 * (d / 7) as i32
    })
}

fn progression(rng: &mut ChaCha8Rng, bars: usize) -> Vec<usize> {
    const PROGS: [[usize; 4]; 5] = [
        [0, 4, 5, 3],
        [0, 5, 3, 4],
        [5, 3, 0, 4],
        [0, 3, 4, 0],
        [1, 4, 0, 0],
    ];
    let p = PROGS[rng.random_range(0..PROGS.len())];
    (0..bars).map(|b| p[b % 4]).collect()
}

fn clamp_pitch(p: i32) -> u8 {
    p.clamp(0, 127) as u8
}

/// Notes for one texture over a whole piece of `bars` bars (16 steps each).
fn texture_notes(kind: Texture, key: i32, chords: &[usize], rng: &mut ChaCha8Rng) -> Vec<(u32, u8, u8)> {
    let mut out = Vec::new();
    let rhythm_variant = rng.random_range(0..2);
    for (bar, &deg) in chords.iter().enumerate() {
        let base = bar as u32 * 16;
        let tri = triad(deg);
        match kind {
            Texture::Bass => {
                let root = clamp_pitch(36 + key + tri[0]);
                if rhythm_variant == 0 {
                    for beat in 0..4 {
                        out.push((base + beat * 4, root, 4));
                    }
                } else {
                    out.push((base, root, 6));
                    out.push((base + 6, root, 2));
                    out.push((base + 8, clamp_pitch(36 + key + tri[2]), 8));
                }
            }
            Texture::Pad => {
                for &iv in &tri {
                    out.push((base, clamp_pitch(60 + key + iv), 16));
                }
            }
            Texture::Strum => {
                for beat in 0..4 {
                    if rhythm_variant == 1 && beat % 2 == 0 {
                        continue;
                    }
                    for &iv in &tri {
                        out.push((base + beat * 4 + 2, clamp_pitch(55 + key + iv), 2));
                    }
                }
            }
            Texture::Arpeggio => {
                let pattern = [0usize, 1, 2, 1];
                for i in 0..8 {
                    let iv = tri[pattern[i % 4]] + if i >= 4 && rhythm_variant == 1 { 12 } else { 0 };
                    out.push((base + i as u32 * 2, clamp_pitch(60 + key + iv), 2));
                }
            }
            Texture::Melody => {
                let mut deg_i = MAJOR.iter().position(|&m| m == tri[0] % 12).unwrap_or(0) as i32 + 7;
                let mut t = 0u32;
                while t < 16 {
                    let len = if rng.random_bool(0.5) { 2 } else { 4 };
                    let len = len.min(16 - t);
                    let d = deg_i.clamp(0, 20) as usize;
                    let pitch = 60 + key + MAJOR[d % 7] + 12 * (d / 7) as i32;
                    out.push((base + t, clamp_pitch(pitch), len as u8));
                    deg_i += rng.random_range(-2..=2);
                    t += len;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Texture {
    Bass,
    Pad,
    Strum,
    Arpeggio,
    Melody,
}

fn piece_segments(
    tracks: &[(InstrumentId, Option<TrackRole>, Vec<(u32, u8, u8)>)],
    bars: usize,
    source: &str,
) -> Vec<Segment> {
    let n_segs = bars.div_ceil(2);
    (0..n_segs)
        .map(|s| {
            let lo = (s * STEPS) as u32;
            let hi = lo + STEPS as u32;
            let rolls = tracks
                .iter()
                .map(|(inst, role, notes)| {
                    let grid = Grid::from_notes(
                        notes
                            .iter()
                            .filter(|(t, _, _)| *t >= lo && *t < hi)
                            .map(|&(t, p, d)| Note::new(p, (t - lo) as u8, d)),
                    )
                    .expect("synthetic notes are in range");
                    TrackRoll {
                        grid,
                        instrument: *inst,
                        role: *role,
                    }
                })
                .collect();
            Segment {
                tracks: rolls,
                source_id: format!("{source}#{s}"),
                tempo: DEFAULT_TEMPO,
            }
        })
        .collect()
}

fn inst(table: &InstrumentTable, name: &str) -> InstrumentId {
    table.by_name(name).expect("instrument exists in the standard table")
}

/// Multi-track pop-style pieces: a bass line plus two to four other textures,
/// each on its own instrument.
pub fn synthetic_band(n_pieces: usize, bars: usize, seed: u64, table: &InstrumentTable) -> Vec<(String, Vec<Segment>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices: [(Texture, &[&str]); 4] = [
        (Texture::Pad, &["Organ", "String Ensemble", "Synth Pad", "Electric Piano"]),
        (Texture::Strum, &["Clean Electric Guitar", "Acoustic Guitar", "Distorted Electric Guitar"]),
        (Texture::Arpeggio, &["Acoustic Guitar", "Orchestral Harp", "Electric Piano", "Chromatic Percussion"]),
        (Texture::Melody, &["Synth Lead", "Pipe", "Soprano/Alto Sax", "Violin", "Trumpet"]),
    ];
    (0..n_pieces)
        .map(|i| {
            let key = rng.random_range(-5..=6);
            let chords = progression(&mut rng, bars);
            let bass = if rng.random_bool(0.5) { "Electric Bass" } else { "Acoustic Bass" };
            let mut tracks = vec![(
                inst(table, bass),
                None,
                texture_notes(Texture::Bass, key, &chords, &mut rng),
            )];
            let n_extra = rng.random_range(1..=3);
            let mut picks: Vec<usize> = (0..choices.len()).collect();
            picks.shuffle(&mut rng);
            picks.truncate(n_extra);
            picks.sort();
            for k in picks {
                let (tex, names) = choices[k];
                let name = names[rng.random_range(0..names.len())];
                let role = (tex == Texture::Melody).then_some(TrackRole::Melody);
                tracks.push((inst(table, name), role, texture_notes(tex, key, &chords, &mut rng)));
            }
            let name = format!("band{i:03}");
            let segs = piece_segments(&tracks, bars, &name);
            (name, segs)
        })
        .collect()
}

/// Piano arrangements with melody, optional lead line, and accompaniment.
pub fn synthetic_piano(n_pieces: usize, bars: usize, seed: u64, table: &InstrumentTable) -> Vec<(String, Vec<Segment>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pieces)
        .map(|i| {
            let key = rng.random_range(-5..=6);
            let chords = progression(&mut rng, bars);
            let melody = texture_notes(Texture::Melody, key + 12, &chords, &mut rng);
            let mut acc = texture_notes(Texture::Bass, key, &chords, &mut rng);
            acc.extend(texture_notes(
                if rng.random_bool(0.5) { Texture::Arpeggio } else { Texture::Strum },
                key - 5,
                &chords,
                &mut rng,
            ));
            let mut tracks = vec![
                (inst(table, "Piano Melody"), Some(TrackRole::Melody), melody),
                (inst(table, "Piano Accompaniment"), Some(TrackRole::Accompaniment), acc),
            ];
            if rng.random_bool(0.4) {
                tracks.insert(
                    1,
                    (inst(table, "Piano Lead"), None, texture_notes(Texture::Pad, key, &chords, &mut rng)),
                );
            }
            let name = format!("piano{i:03}");
            let segs = piece_segments(&tracks, bars, &name);
            (name, segs)
        })
        .collect()
}

/// Four-voice, strictly non-crossing chorale-like pieces. Voices are ordered
/// high to low and occupy disjoint registers.
pub fn synthetic_chorales(n_pieces: usize, bars: usize, seed: u64, table: &InstrumentTable) -> Vec<(String, Vec<Segment>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = inst(table, "Choir and Voice");
    // Register floors for soprano, alto, tenor, bass.
    let floors: [i32; 4] = [72, 60, 48, 36];
    (0..n_pieces)
        .map(|i| {
            let key = rng.random_range(-2..=2);
            let chords = progression(&mut rng, bars);
            let mut voices: Vec<Vec<(u32, u8, u8)>> = vec![Vec::new(); 4];
            for (bar, &deg) in chords.iter().enumerate() {
                let tri = triad(deg);
                let mut t = 0u32;
                while t < 16 {
                    let len = if rng.random_bool(0.7) { 4 } else { 8 }.min(16 - t);
                    for (v, notes) in voices.iter_mut().enumerate() {
                        // Chord tone at or above the voice floor, within 8 semitones.
                        let floor = floors[v] + key;
                        let pc = tri[(v + bar + t as usize / 4) % 3].rem_euclid(12);
                        let mut p = floor - floor.rem_euclid(12) + pc;
                        while p < floor {
                            p += 12;
                        }
                        notes.push((bar as u32 * 16 + t, clamp_pitch(p), len as u8));
                    }
                    t += len;
                }
            }
            let tracks: Vec<_> = voices.into_iter().map(|n| (voice, None, n)).collect();
            let name = format!("chorale{i:03}");
            let segs = piece_segments(&tracks, bars, &name);
            (name, segs)
        })
        .collect()
}

/// Manifest from synthetic pieces with a seeded piece-level split.
pub fn synthetic_manifest(
    pieces: &[(String, Vec<Segment>)],
    ratio: [u32; 3],
    seed: u64,
    table: &InstrumentTable,
) -> Manifest {
    let names: Vec<String> = pieces.iter().map(|(n, _)| n.clone()).collect();
    let splits = split_pieces(&names, ratio, seed);
    let mut m = Manifest::new();
    for (name, segs) in pieces {
        m.push_piece(name, segs, splits[name], table);
    }
    m
}

//! Standard MIDI file ingestion into 2-bar segments, and export back to MIDI.

use std::collections::BTreeMap;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use crate::error::{Error, Result};
use crate::instrument::{InstrumentId, InstrumentTable};
use crate::score::{Grid, Note, Segment, TrackRole, TrackRoll, DEFAULT_TEMPO, STEPS, STEPS_PER_BEAT};

const DRUM_CHANNEL: u8 = 9;
const EXPORT_PPQ: u16 = 480;
const EXPORT_VELOCITY: u8 = 80;

/// How a file is cut into 32-step windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Windowing {
    /// Two-bar windows aligned to bar lines inside 4/4 sections. Other meters
    /// are skipped.
    #[default]
    FourFourBars,
    /// Consecutive 8-beat windows from the start of the file, whatever the
    /// meter. Used for voice-separation corpora.
    FixedBeats,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub windowing: Windowing,
    pub instruments: InstrumentTable,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            windowing: Windowing::FourFourBars,
            instruments: InstrumentTable::standard(),
        }
    }
}

#[derive(Debug, Default)]
struct RawTrack {
    name: Option<String>,
    program: Option<u8>,
    // (start tick, end tick, key)
    notes: Vec<(u64, u64, u8)>,
}

fn to_step(tick: u64, ppq: u64) -> u64 {
    (tick * STEPS_PER_BEAT as u64 + ppq / 2) / ppq
}

/// Splits `"Violin [melody]"` into the class part and the role tag.
fn split_track_name(name: &str) -> (&str, Option<TrackRole>) {
    let name = name.trim();
    if let Some(open) = name.rfind('[') {
        if name.ends_with(']') {
            let tag = name[open + 1..name.len() - 1].trim().to_ascii_lowercase();
            let role = match tag.as_str() {
                "melody" => Some(TrackRole::Melody),
                "accompaniment" => Some(TrackRole::Accompaniment),
                "other" => Some(TrackRole::Other),
                _ => None,
            };
            return (name[..open].trim(), role);
        }
    }
    let lower = name.to_ascii_lowercase();
    let role = if lower.contains("melody") || lower.contains("vocal") {
        Some(TrackRole::Melody)
    } else if lower.contains("accomp") || lower == "piano" {
        Some(TrackRole::Accompaniment)
    } else {
        None
    };
    (name, role)
}

pub fn ingest_midi(bytes: &[u8], source_id: &str, cfg: &IngestConfig) -> Result<Vec<Segment>> {
    let smf = Smf::parse(bytes).map_err(|e| Error::MidiParse(e.to_string()))?;
    let ppq = match smf.header.timing {
        Timing::Metrical(t) => t.as_int() as u64,
        Timing::Timecode(..) => {
            return Err(Error::MidiParse("SMPTE timecode timing is not supported".into()))
        }
    };
    if ppq == 0 {
        return Err(Error::MidiParse("zero ticks per beat".into()));
    }

    let mut tempo = None;
    let mut meters: Vec<(u64, u8, u8)> = Vec::new();
    let mut raw: BTreeMap<(usize, u8), RawTrack> = BTreeMap::new();
    let mut channel_program = [0u8; 16];

    for (ti, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        let mut name: Option<String> = None;
        let mut open: BTreeMap<(u8, u8), Vec<u64>> = BTreeMap::new();
        for ev in track {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::Tempo(t)) => {
                    tempo.get_or_insert(t.as_int());
                }
                TrackEventKind::Meta(MetaMessage::TimeSignature(num, pow, ..)) => {
                    meters.push((tick, num, 1u8.checked_shl(pow as u32).unwrap_or(0)));
                }
                TrackEventKind::Meta(MetaMessage::TrackName(n))
                | TrackEventKind::Meta(MetaMessage::InstrumentName(n)) => {
                    if name.is_none() {
                        name = Some(String::from_utf8_lossy(n).into_owned());
                    }
                }
                TrackEventKind::Midi { channel, message } => {
                    let ch = channel.as_int();
                    match message {
                        MidiMessage::ProgramChange { program } => {
                            channel_program[ch as usize] = program.as_int();
                        }
                        MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                            open.entry((ch, key.as_int())).or_default().push(tick);
                            let rt = raw.entry((ti, ch)).or_default();
                            rt.program.get_or_insert(channel_program[ch as usize]);
                        }
                        MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                            if let Some(starts) = open.get_mut(&(ch, key.as_int())) {
                                if !starts.is_empty() {
                                    let start = starts.remove(0);
                                    raw.entry((ti, ch))
                                        .or_default()
                                        .notes
                                        .push((start, tick, key.as_int()));
                                }
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        // Unterminated notes end with their track.
        for ((ch, key), starts) in open {
            for start in starts {
                raw.entry((ti, ch)).or_default().notes.push((start, tick, key));
            }
        }
        for ((t, _), rt) in raw.iter_mut() {
            if *t == ti && rt.name.is_none() {
                rt.name = name.clone();
            }
        }
    }

    let groups: Vec<(InstrumentId, Option<TrackRole>, Vec<(u64, u64, u8)>)> = raw
        .into_iter()
        .filter(|((_, ch), rt)| *ch != DRUM_CHANNEL && !rt.notes.is_empty())
        .map(|(_, rt)| {
            let (class_name, role) = rt
                .name
                .as_deref()
                .map(split_track_name)
                .unwrap_or(("", None));
            let instrument = cfg
                .instruments
                .for_track_name(class_name)
                .unwrap_or_else(|| cfg.instruments.for_program(rt.program.unwrap_or(0)));
            let notes = rt
                .notes
                .iter()
                .map(|&(s, e, k)| (to_step(s, ppq), to_step(e, ppq), k))
                .collect();
            (instrument, role, notes)
        })
        .collect();

    if groups.is_empty() {
        return Ok(Vec::new());
    }

    let last_onset = groups
        .iter()
        .flat_map(|g| g.2.iter().map(|n| n.0))
        .max()
        .unwrap_or(0);
    let seg_len = STEPS as u64;

    let windows: Vec<u64> = match cfg.windowing {
        Windowing::FixedBeats => (0..=last_onset / seg_len).map(|k| k * seg_len).collect(),
        Windowing::FourFourBars => {
            meters.sort_by_key(|m| m.0);
            if meters.first().is_none_or(|m| m.0 > 0) {
                meters.insert(0, (0, 4, 4));
            }
            let mut out = Vec::new();
            for (i, &(start, num, den)) in meters.iter().enumerate() {
                let start_step = to_step(start, ppq);
                let next = meters.get(i + 1).map(|m| to_step(m.0, ppq));
                if next == Some(start_step) {
                    continue;
                }
                if (num, den) != (4, 4) {
                    log::warn!("{source_id}: skipping {num}/{den} section at tick {start}");
                    continue;
                }
                let mut w = start_step;
                loop {
                    let fits = match next {
                        Some(end) => w + seg_len <= end,
                        None => w <= last_onset,
                    };
                    if !fits {
                        break;
                    }
                    out.push(w);
                    w += seg_len;
                }
            }
            out
        }
    };

    let tempo = tempo.unwrap_or(DEFAULT_TEMPO);
    let mut segments = Vec::with_capacity(windows.len());
    for (wi, &w) in windows.iter().enumerate() {
        let mut tracks = Vec::with_capacity(groups.len());
        for (instrument, role, notes) in &groups {
            let mut grid = Grid::empty();
            for &(s, e, k) in notes {
                if s >= w && s < w + seg_len {
                    let dur = e.saturating_sub(s).clamp(1, seg_len) as u8;
                    grid.insert(Note::new(k, (s - w) as u8, dur))?;
                }
            }
            tracks.push(TrackRoll {
                grid,
                instrument: *instrument,
                role: *role,
            });
        }
        segments.push(Segment {
            tracks,
            source_id: format!("{source_id}#{wi}"),
            tempo,
        });
    }
    Ok(segments)
}

fn export_channel(track_index: usize) -> u8 {
    const CHANNELS: [u8; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15];
    CHANNELS[track_index % CHANNELS.len()]
}

fn role_tag(role: Option<TrackRole>) -> &'static str {
    match role {
        Some(TrackRole::Melody) => " [melody]",
        Some(TrackRole::Accompaniment) => " [accompaniment]",
        Some(TrackRole::Other) => " [other]",
        None => "",
    }
}

/// Writes consecutive segments as one format-1 file. Track `i` of the output
/// takes its instrument from the first segment that has an `i`-th track.
pub fn write_midi(piece: &[Segment], instruments: &InstrumentTable) -> Result<Vec<u8>> {
    let n_tracks = piece.iter().map(Segment::n_tracks).max().unwrap_or(0);
    let tempo = piece.first().map(|s| s.tempo).unwrap_or(DEFAULT_TEMPO);
    let ticks_per_step = (EXPORT_PPQ as u64) / STEPS_PER_BEAT as u64;

    let names: Vec<Vec<u8>> = (0..n_tracks)
        .map(|i| {
            let track = piece.iter().find_map(|s| s.tracks.get(i));
            let (inst, role) = track.map(|t| (t.instrument, t.role)).unwrap_or((InstrumentId(0), None));
            format!("{}{}", instruments.name(inst), role_tag(role)).into_bytes()
        })
        .collect();

    let mut smf = Smf::new(Header::new(
        Format::Parallel,
        Timing::Metrical(u15::new(EXPORT_PPQ)),
    ));
    smf.tracks.push(vec![
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(tempo))),
        },
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::TimeSignature(4, 2, 24, 8)),
        },
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
        },
    ]);

    for (i, name) in names.iter().enumerate() {
        let channel = u4::new(export_channel(i));
        let instrument = piece
            .iter()
            .find_map(|s| s.tracks.get(i))
            .map(|t| t.instrument)
            .unwrap_or(InstrumentId(0));
        // (tick, is_on, key); offs sort before ons at equal ticks.
        let mut timed: Vec<(u64, bool, u8)> = Vec::new();
        for (si, seg) in piece.iter().enumerate() {
            let Some(track) = seg.tracks.get(i) else { continue };
            let base = si as u64 * STEPS as u64;
            for note in track.grid.notes() {
                let on = (base + note.onset as u64) * ticks_per_step;
                let off = on + note.duration as u64 * ticks_per_step;
                timed.push((on, true, note.pitch));
                timed.push((off, false, note.pitch));
            }
        }
        timed.sort();

        let mut events = vec![
            TrackEvent {
                delta: u28::new(0),
                kind: TrackEventKind::Meta(MetaMessage::TrackName(name)),
            },
            TrackEvent {
                delta: u28::new(0),
                kind: TrackEventKind::Midi {
                    channel,
                    message: MidiMessage::ProgramChange {
                        program: u7::new(instruments.program_out(instrument)),
                    },
                },
            },
        ];
        let mut last = 0u64;
        for (tick, on, key) in timed {
            let message = if on {
                MidiMessage::NoteOn {
                    key: u7::new(key),
                    vel: u7::new(EXPORT_VELOCITY),
                }
            } else {
                MidiMessage::NoteOff {
                    key: u7::new(key),
                    vel: u7::new(0),
                }
            };
            events.push(TrackEvent {
                delta: u28::new((tick - last) as u32),
                kind: TrackEventKind::Midi { channel, message },
            });
            last = tick;
        }
        events.push(TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
        });
        smf.tracks.push(events);
    }

    let mut out = Vec::new();
    smf.write_std(&mut out)
        .map_err(|e| Error::MidiParse(format!("write failed: {e}")))?;
    Ok(out)
}

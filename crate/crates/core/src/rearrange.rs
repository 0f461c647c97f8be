//! Rearrangement: the source mixture answers the reference's track-function
//! queries, so the output carries the source content in the reference's
//! track system.

use std::path::Path;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, Split};
use crate::error::{Error, Result};
use crate::features::{aux_features, mixture_similarity, track_function, AuxFeatures, TrackFunction};
use crate::instrument::{InstrumentId, InstrumentTable};
use crate::nn::{query_vectors, Mode, Model};
use crate::score::{condense_mixture, events_to_roll, Grid, Segment, TrackRole, TrackRoll};

/// Instrument used for a preserved melody when the reference offers none.
pub const FALLBACK_MELODY_INSTRUMENT: &str = "Pipe";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearrangeOptions {
    /// Add the source melody's function as an extra query.
    pub preserve_melody: bool,
    /// Sample the melody track latent instead of using its mean.
    pub sample_melody_posterior: bool,
    /// Weight of the random term in reference search.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for RearrangeOptions {
    fn default() -> Self {
        RearrangeOptions {
            preserve_melody: false,
            sample_melody_posterior: false,
            alpha: 0.2,
            seed: 0,
        }
    }
}

/// Latents of one rearrangement, exposed for inspection.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Mixture posterior mean, (1, mix_latent).
    pub z_mix: Tensor,
    /// Query vectors fed to the separator, (1, Q, 2 * fn_latent).
    pub queries: Tensor,
    /// Track latents handed to the decoders, (Q, track_latent).
    pub z_tracks: Tensor,
    pub instruments: Vec<InstrumentId>,
    pub aux: Vec<AuxFeatures>,
}

/// Rearranges `source` under the track system of `reference`.
pub fn rearrange(model: &Model, source: &Segment, reference: &Segment, opts: &RearrangeOptions) -> Result<Segment> {
    run(model, source, reference, opts, None, None)
}

/// [`rearrange`] that also reports its intermediate latents.
pub fn rearrange_traced(
    model: &Model,
    source: &Segment,
    reference: &Segment,
    opts: &RearrangeOptions,
    hook: &mut dyn FnMut(&Trace),
) -> Result<Segment> {
    run(model, source, reference, opts, None, Some(hook))
}

/// Rearranges a piano `source` with a melody-tagged track into the
/// reference's track system plus one melody track.
pub fn orchestrate(
    model: &Model,
    table: &InstrumentTable,
    source: &Segment,
    reference: &Segment,
    opts: &RearrangeOptions,
) -> Result<Segment> {
    if opts.preserve_melody && source.melody_index().is_none() {
        return Err(Error::MissingMelody);
    }
    run(model, source, reference, opts, Some(table), None)
}

/// [`orchestrate`] that also reports its intermediate latents.
pub fn orchestrate_traced(
    model: &Model,
    table: &InstrumentTable,
    source: &Segment,
    reference: &Segment,
    opts: &RearrangeOptions,
    hook: &mut dyn FnMut(&Trace),
) -> Result<Segment> {
    if opts.preserve_melody && source.melody_index().is_none() {
        return Err(Error::MissingMelody);
    }
    run(model, source, reference, opts, Some(table), Some(hook))
}

/// Instrument of the reference track with the highest mean pitch centre.
pub fn melody_instrument(reference: &Segment, table: &InstrumentTable) -> Result<InstrumentId> {
    let best = reference
        .tracks
        .iter()
        .filter_map(|t| aux_features(&t.grid).mean_pitch_centre().map(|c| (c, t.instrument)))
        .fold(None, |acc: Option<(f32, InstrumentId)>, (c, i)| match acc {
            Some((bc, _)) if bc >= c => acc,
            _ => Some((c, i)),
        });
    match best {
        Some((_, id)) => Ok(id),
        None => table.by_name(FALLBACK_MELODY_INSTRUMENT),
    }
}

fn run(
    model: &Model,
    source: &Segment,
    reference: &Segment,
    opts: &RearrangeOptions,
    table: Option<&InstrumentTable>,
    hook: Option<&mut dyn FnMut(&Trace)>,
) -> Result<Segment> {
    let reference = reference
        .without_empty_tracks()
        .ok_or_else(|| Error::Config(format!("reference {} has no notes", reference.source_id)))?;
    if let Some(bad) = reference.tracks.iter().find(|t| t.instrument.index() >= model.n_instruments()) {
        return Err(Error::UnknownInstrument(bad.instrument.to_string()));
    }
    let mut functions: Vec<TrackFunction> = reference.tracks.iter().map(|t| track_function(&t.grid)).collect();
    let mut instruments = reference.instruments();
    let mut roles: Vec<Option<TrackRole>> = reference.tracks.iter().map(|t| t.role).collect();
    let melody = match (opts.preserve_melody, source.melody_index()) {
        (true, Some(m)) => {
            let id = match table {
                Some(table) => melody_instrument(&reference, table)?,
                None => instruments[0],
            };
            functions.push(track_function(&source.tracks[m].grid));
            instruments.push(id);
            roles.push(Some(TrackRole::Melody));
            Some(functions.len() - 1)
        }
        (true, None) => return Err(Error::MissingMelody),
        (false, _) => None,
    };
    let q = functions.len();

    if source.is_silent() {
        let tracks = instruments
            .iter()
            .zip(&roles)
            .map(|(&i, &role)| TrackRoll { role, ..TrackRoll::new(Grid::empty(), i) })
            .collect();
        return Ok(Segment {
            tempo: source.tempo,
            ..Segment::new(tracks, source.source_id.clone())
        });
    }

    let mix = condense_mixture(source);
    let z_mix = model.encode_mixture(&[&mix])?.mean;
    let fn_refs: Vec<&TrackFunction> = functions.iter().collect();
    let (q_p, q_t) = model.encode_function(&fn_refs)?;
    let queries = query_vectors(&q_p.mean, &q_t.mean)?.reshape((1, q, ()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let posterior = model.separate(
        &z_mix,
        &queries,
        &instruments,
        Mode {
            train: false,
            rng: &mut rng,
        },
    )?;
    let z_tracks = match melody {
        Some(m) if opts.sample_melody_posterior => {
            let sampled = posterior.narrow_rows(m, 1)?.sample(&mut rng)?;
            let mut rows = Vec::with_capacity(q);
            for i in 0..q {
                rows.push(if i == m { sampled.clone() } else { posterior.mean.narrow(0, i, 1)? });
            }
            Tensor::cat(&rows, 0)?
        }
        _ => posterior.mean.clone(),
    };
    let aux = model.predict_aux(&z_tracks)?;
    let events = model.decode_tracks(&z_tracks, &aux)?;
    if let Some(hook) = hook {
        hook(&Trace {
            z_mix: z_mix.clone(),
            queries: queries.clone(),
            z_tracks: z_tracks.clone(),
            instruments: instruments.clone(),
            aux: aux.clone(),
        });
    }
    let tracks = events
        .iter()
        .zip(instruments.iter().zip(&roles))
        .map(|(ev, (&i, &role))| Ok(TrackRoll { role, ..TrackRoll::new(events_to_roll(ev)?, i) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Segment {
        tempo: source.tempo,
        ..Segment::new(tracks, source.source_id.clone())
    })
}

/// One indexed reference segment with cached features.
#[derive(Debug, Clone, PartialEq)]
pub struct RefEntry {
    pub piece: String,
    pub index: usize,
    pub segment: Segment,
    pub mixture_function: TrackFunction,
    pub track_functions: Vec<TrackFunction>,
}

impl RefEntry {
    pub fn new(piece: &str, index: usize, segment: Segment) -> Self {
        RefEntry {
            piece: piece.to_string(),
            index,
            mixture_function: track_function(&condense_mixture(&segment).grid),
            track_functions: segment.tracks.iter().map(|t| track_function(&t.grid)).collect(),
            segment,
        }
    }
}

/// Reference database: segments with their mixture and track functions.
/// Persisted as `manifest.json` plus a binary `features.bin` cache.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceDb {
    pub entries: Vec<RefEntry>,
}

const DB_MAGIC: &[u8; 4] = b"TQDB";
const DB_VERSION: u32 = 1;

fn similarity_or_zero(a: &TrackFunction, b: &TrackFunction) -> f64 {
    mixture_similarity(a, b).unwrap_or(0.0)
}

impl ReferenceDb {
    pub fn from_pieces(pieces: &[(String, Vec<Segment>)]) -> Self {
        let entries = pieces
            .iter()
            .flat_map(|(name, segs)| {
                segs.iter()
                    .filter(|s| !s.is_silent())
                    .enumerate()
                    .map(move |(i, s)| RefEntry::new(name, i, s.clone()))
            })
            .collect();
        ReferenceDb { entries }
    }

    pub fn from_manifest(manifest: &Manifest, split: Option<Split>, table: &InstrumentTable) -> Result<Self> {
        Ok(Self::from_pieces(&manifest.pieces(split, table)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries grouped by piece, in database order.
    pub fn pieces(&self) -> Vec<(String, Vec<&RefEntry>)> {
        let mut out: Vec<(String, Vec<&RefEntry>)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((p, v)) if *p == e.piece => v.push(e),
                _ => out.push((e.piece.clone(), vec![e])),
            }
        }
        out
    }

    fn features(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DB_MAGIC);
        out.extend_from_slice(&DB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let put = |f: &TrackFunction, out: &mut Vec<u8>| {
            for v in f.concat() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for e in &self.entries {
            put(&e.mixture_function, &mut out);
            out.extend_from_slice(&(e.track_functions.len() as u32).to_le_bytes());
            for f in &e.track_functions {
                put(f, &mut out);
            }
        }
        out
    }

    pub fn save(&self, dir: &Path, table: &InstrumentTable) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest::new();
        for (piece, entries) in self.pieces() {
            let segs: Vec<Segment> = entries.iter().map(|e| e.segment.clone()).collect();
            manifest.push_piece(&piece, &segs, Split::Train, table);
        }
        manifest.save(&dir.join("manifest.json"))?;
        let p = dir.join("features.bin");
        std::fs::write(&p, self.features()).map_err(|e| Error::io(&p, e))
    }

    /// Loads a database and checks that the cached features match the
    /// segments they were computed from.
    pub fn load(dir: &Path, table: &InstrumentTable) -> Result<Self> {
        let manifest = Manifest::load(&dir.join("manifest.json"))?;
        let db = Self::from_manifest(&manifest, None, table)?;
        let p = dir.join("features.bin");
        let cached = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if cached.len() < 8 || &cached[..4] != DB_MAGIC {
            return Err(Error::Config(format!("{} is not a feature cache", p.display())));
        }
        if cached != db.features() {
            return Err(Error::Config(format!(
                "{} does not match the segments in its manifest; rebuild the database",
                p.display()
            )));
        }
        Ok(db)
    }
}

/// Index of the entry maximising `cos(f(y_mix), f(x_mix)) + alpha * eps`,
/// with one standard-normal `eps` drawn per entry. Ties go to the lowest
/// index.
pub fn search_reference(source: &Segment, db: &ReferenceDb, alpha: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let f = track_function(&condense_mixture(source).grid);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, e) in db.entries.iter().enumerate() {
        let eps: f64 = StandardNormal.sample(rng);
        let score = similarity_or_zero(&f, &e.mixture_function) + alpha * eps;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

/// Reference material for a multi-segment piece.
pub enum LongReference<'a> {
    /// Use these segments in order, one per source segment.
    Fixed(&'a [Segment]),
    /// Pick one piece, at least as long as the source, by mean aligned
    /// mixture similarity plus `alpha` times a per-piece normal draw.
    Database(&'a ReferenceDb),
}

/// Index into `db.pieces()` of the piece chosen for `source`.
pub fn search_piece(source: &[Segment], db: &ReferenceDb, alpha: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let fns: Vec<TrackFunction> = source.iter().map(|s| track_function(&condense_mixture(s).grid)).collect();
    let pieces = db.pieces();
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, entries)) in pieces.iter().enumerate() {
        let eps: f64 = StandardNormal.sample(rng);
        if entries.len() < source.len() {
            continue;
        }
        let mean = fns
            .iter()
            .zip(entries)
            .map(|(f, e)| similarity_or_zero(f, &e.mixture_function))
            .sum::<f64>()
            / fns.len().max(1) as f64;
        let score = mean + alpha * eps;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::ReferenceTooShort {
        reference: pieces.iter().map(|(_, e)| e.len()).max().unwrap_or(0),
        source_len: source.len(),
    })
}

/// Rearranges every 2-bar segment of `source` independently.
pub fn rearrange_long(
    model: &Model,
    table: &InstrumentTable,
    source: &[Segment],
    reference: LongReference<'_>,
    opts: &RearrangeOptions,
) -> Result<Vec<Segment>> {
    let refs: Vec<Segment> = match reference {
        LongReference::Fixed(segs) => {
            if segs.len() < source.len() {
                return Err(Error::ReferenceTooShort {
                    reference: segs.len(),
                    source_len: source.len(),
                });
            }
            segs[..source.len()].to_vec()
        }
        LongReference::Database(db) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let i = search_piece(source, db, opts.alpha, &mut rng)?;
            let pieces = db.pieces();
            log::info!("reference piece: {}", pieces[i].0);
            pieces[i].1[..source.len()].iter().map(|e| e.segment.clone()).collect()
        }
    };
    source
        .iter()
        .zip(&refs)
        .enumerate()
        .map(|(i, (s, r))| {
            let seg_opts = RearrangeOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..*opts
            };
            if opts.preserve_melody {
                orchestrate(model, table, s, r, &seg_opts)
            } else {
                rearrange(model, s, r, &seg_opts)
            }
        })
        .collect()
}

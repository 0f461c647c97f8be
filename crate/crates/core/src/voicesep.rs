//! Voice separation. A recurrent inferrer predicts one function latent per
//! voice (highest first) from the mixture latent; the separator and track
//! decoder turn those queries into four generated voices, and every mixture
//! note then joins the voice of its nearest generated note.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{track_function, TrackFunction};
use crate::instrument::{InstrumentId, InstrumentTable};
use crate::nn::inferrer::hint_tensor;
use crate::nn::{query, query_vectors, Mode, Model};
use crate::score::{condense_mixture, events_to_roll, Grid, Note, Segment, TrackRoll};
use crate::training::{
    augment, draw_key_offset, elbo_loss, load_checkpoint, make_batches, step_rng, step_schedule, Adam, LossMode,
    TrainConfig,
};

pub const N_VOICES: usize = 4;
/// Weight of onset distance (in steps) relative to pitch distance.
pub const ONSET_WEIGHT: u32 = 2;

pub fn note_distance(a: &Note, b: &Note) -> u32 {
    (a.pitch as i32 - b.pitch as i32).unsigned_abs() + ONSET_WEIGHT * (a.onset as i32 - b.onset as i32).unsigned_abs()
}

/// Voice of every mixture note, in the order the notes were given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceAssignment {
    pub voices: Vec<usize>,
    /// Same-voice overlaps that no legal move could resolve.
    pub residual_conflicts: usize,
}

impl VoiceAssignment {
    pub fn has_residual_conflicts(&self) -> bool {
        self.residual_conflicts > 0
    }
}

/// Pairs of notes that share a voice and sound at the same time.
pub fn conflict_count(notes: &[Note], voices: &[usize]) -> usize {
    let mut n = 0;
    for i in 0..notes.len() {
        for j in i + 1..notes.len() {
            if voices[i] == voices[j] && notes[i].overlaps(&notes[j]) {
                n += 1;
            }
        }
    }
    n
}

/// Distance from each note to the nearest generated note of each voice
/// (`u32::MAX` for voices without notes).
pub fn voice_distances(notes: &[Note], generated: &[Vec<Note>]) -> Vec<Vec<u32>> {
    notes
        .iter()
        .map(|n| {
            generated
                .iter()
                .map(|g| g.iter().map(|m| note_distance(n, m)).min().unwrap_or(u32::MAX))
                .collect()
        })
        .collect()
}

fn nearest(dist: &[u32]) -> usize {
    dist.iter()
        .enumerate()
        .min_by_key(|&(v, &d)| (d, v))
        .map(|(v, _)| v)
        .unwrap_or(0)
}

/// Assigns every mixture note to a voice.
///
/// A note reproduced exactly (pitch and onset) by a generated voice takes
/// that voice; any other note takes the voice of its nearest generated note
/// under `|dp| + 2|dt|`, ties going to the higher voice. Then, while two
/// notes of one voice overlap, the conflicting note whose move to a
/// non-overlapping voice adds the least distance is moved. Overlaps with no
/// legal move left are counted as residual.
pub fn assign_mixture_notes(notes: &[Note], generated: &[Vec<Note>]) -> VoiceAssignment {
    let n_voices = generated.len().max(1);
    let dist = voice_distances(notes, generated);
    let mut voices: Vec<usize> = notes
        .iter()
        .zip(&dist)
        .map(|(n, d)| {
            generated
                .iter()
                .position(|g| g.iter().any(|m| m.pitch == n.pitch && m.onset == n.onset))
                .unwrap_or_else(|| nearest(d))
        })
        .collect();

    let overlaps_voice = |voices: &[usize], i: usize, v: usize| {
        (0..notes.len()).any(|j| j != i && voices[j] == v && notes[i].overlaps(&notes[j]))
    };
    loop {
        let mut best: Option<(u64, usize, usize)> = None;
        for i in 0..notes.len() {
            if !overlaps_voice(&voices, i, voices[i]) {
                continue;
            }
            let here = dist[i][voices[i]] as u64;
            for v in 0..n_voices {
                if v == voices[i] || overlaps_voice(&voices, i, v) {
                    continue;
                }
                let added = (dist[i][v] as u64).saturating_sub(here);
                let cand = (added, i, v);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some((_, i, v)) => voices[i] = v,
            None => break,
        }
    }
    VoiceAssignment {
        residual_conflicts: conflict_count(notes, &voices),
        voices,
    }
}

/// Builds the voice tracks holding exactly the mixture's notes.
pub fn partition(notes: &[Note], assignment: &VoiceAssignment, n_voices: usize, instrument: InstrumentId) -> Result<Vec<TrackRoll>> {
    let mut grids = vec![Grid::empty(); n_voices];
    for (n, &v) in notes.iter().zip(&assignment.voices) {
        grids[v].insert(*n)?;
    }
    Ok(grids.into_iter().map(|g| TrackRoll::new(g, instrument)).collect())
}

/// First note (by onset, then highest pitch) of each ground-truth voice.
pub fn entry_hints(voices: &[TrackRoll]) -> Vec<Option<Note>> {
    voices
        .iter()
        .map(|t| {
            t.grid
                .notes()
                .into_iter()
                .min_by_key(|n| (n.onset, std::cmp::Reverse(n.pitch)))
        })
        .collect()
}

/// Orders tracks high to low by mean pitch (empty tracks last) and pads or
/// truncates to `N_VOICES`.
pub fn voice_order(seg: &Segment) -> Segment {
    let mut tracks = seg.tracks.clone();
    let mean = |t: &TrackRoll| {
        let ns = t.grid.notes();
        if ns.is_empty() {
            f64::NEG_INFINITY
        } else {
            ns.iter().map(|n| n.pitch as f64).sum::<f64>() / ns.len() as f64
        }
    };
    tracks.sort_by(|a, b| mean(b).total_cmp(&mean(a)));
    let inst = tracks.first().map(|t| t.instrument).unwrap_or(InstrumentId(0));
    tracks.truncate(N_VOICES);
    while tracks.len() < N_VOICES {
        tracks.push(TrackRoll::new(Grid::empty(), inst));
    }
    Segment {
        tracks,
        ..seg.clone()
    }
}

#[derive(Debug, Clone)]
pub struct VoiceSeparation {
    pub voices: Vec<TrackRoll>,
    pub assignment: VoiceAssignment,
    /// Mixture notes in the order of `assignment.voices`.
    pub notes: Vec<Note>,
    /// The generated voices used as assignment anchors.
    pub generated: Vec<Vec<Note>>,
}

fn model_inferrer(model: &Model) -> Result<&crate::nn::FunctionInferrer> {
    model
        .inferrer
        .as_ref()
        .ok_or_else(|| Error::Config("model has no voice-function inferrer; fine-tune it first".into()))
}

/// Separates a mixture (any segment; its tracks are condensed) into four
/// voices. `hints` gives the first note of each voice when known.
pub fn separate_voices(
    model: &Model,
    mixture: &Segment,
    hints: Option<&[Option<Note>]>,
    instrument: InstrumentId,
) -> Result<VoiceSeparation> {
    let inferrer = model_inferrer(model)?;
    let mix = condense_mixture(mixture);
    let notes = mix.notes();
    if notes.is_empty() {
        return Ok(VoiceSeparation {
            voices: (0..N_VOICES).map(|_| TrackRoll::new(Grid::empty(), instrument)).collect(),
            assignment: VoiceAssignment {
                voices: Vec::new(),
                residual_conflicts: 0,
            },
            notes,
            generated: vec![Vec::new(); N_VOICES],
        });
    }
    let z_mix = model.encode_mixture(&[&mix])?.mean;
    let hint_t = match hints {
        Some(h) => Some(
            (0..N_VOICES)
                .map(|k| hint_tensor(&[h.to_vec()], k, model.dtype()))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let latents = inferrer.infer(&z_mix, N_VOICES, hint_t.as_deref(), None)?;
    let means: Vec<Tensor> = latents.iter().map(|g| g.mean.clone()).collect();
    let queries = Tensor::stack(&means, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let post = model.separate(
        &z_mix,
        &queries,
        &vec![instrument; N_VOICES],
        Mode {
            train: false,
            rng: &mut rng,
        },
    )?;
    let aux = model.predict_aux(&post.mean)?;
    let events = model.decode_tracks(&post.mean, &aux)?;
    let generated = events
        .iter()
        .map(|e| Ok(events_to_roll(e)?.notes()))
        .collect::<Result<Vec<_>>>()?;
    let assignment = assign_mixture_notes(&notes, &generated);
    Ok(VoiceSeparation {
        voices: partition(&notes, &assignment, N_VOICES, instrument)?,
        assignment,
        notes,
        generated,
    })
}

/// Ground-truth voice of every mixture note; a note present in several
/// voices (unison) lists all of them.
pub fn true_voices(seg: &Segment, notes: &[Note]) -> Vec<Vec<usize>> {
    notes
        .iter()
        .map(|n| {
            seg.tracks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.grid.get(n.pitch as usize, n.onset as usize) > 0)
                .map(|(v, _)| v)
                .collect()
        })
        .collect()
}

/// Correct and total note counts for one predicted assignment.
pub fn score_assignment(truth: &[Vec<usize>], predicted: &[usize]) -> (usize, usize) {
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t.contains(p)).count();
    (correct, truth.len())
}

/// Note-level voice accuracy in percent.
pub fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Accuracy of uniformly random voice labels on `segments`.
pub fn random_baseline(segments: &[Segment], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c, mut t) = (0, 0);
    for seg in segments {
        let seg = voice_order(seg);
        let notes = condense_mixture(&seg).notes();
        let truth = true_voices(&seg, &notes);
        let guess: Vec<usize> = notes.iter().map(|_| rng.random_range(0..N_VOICES)).collect();
        let (a, b) = score_assignment(&truth, &guess);
        c += a;
        t += b;
    }
    accuracy(c, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of training a batch with entry hints.
    pub hint_rate: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            hint_rate: 0.5,
            seed: 0,
            augment: true,
        }
    }
}

/// Loss of the inferrer for one batch of voice-ordered segments: the
/// reconstruction of the ground-truth voice functions from the inferred
/// latents plus the squared distance between inferred and encoded latents.
pub fn inferrer_loss(model: &Model, batch: &[Segment], hints: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let inferrer = model_inferrer(model)?;
    let dtype = model.dtype();
    let b = batch.len();
    let mixes: Vec<_> = batch.iter().map(condense_mixture).collect();
    let mix_refs: Vec<_> = mixes.iter().collect();
    let z_mix = model.encode_mixture(&mix_refs)?.sample(rng)?;

    let mut functions: Vec<Vec<TrackFunction>> = vec![Vec::with_capacity(b); N_VOICES];
    for seg in batch {
        for (k, t) in seg.tracks.iter().enumerate().take(N_VOICES) {
            functions[k].push(track_function(&t.grid));
        }
    }
    let mut teacher = Vec::with_capacity(N_VOICES);
    let mut targets = Vec::with_capacity(N_VOICES);
    for f in &functions {
        let refs: Vec<&TrackFunction> = f.iter().collect();
        let (p, t) = model.encode_function(&refs)?;
        teacher.push(query_vectors(&p.mean, &t.mean)?.detach());
        targets.push(query::function_tensors(&refs, dtype)?);
    }
    let hint_t = if hints {
        let rows: Vec<Vec<Option<Note>>> = batch.iter().map(|s| entry_hints(&s.tracks)).collect();
        Some((0..N_VOICES).map(|k| hint_tensor(&rows, k, dtype)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let latents = inferrer.infer(&z_mix, N_VOICES, hint_t.as_deref(), Some(&teacher))?;
    let half = model.config.fn_latent;
    let mut total = Tensor::zeros((), dtype, &candle_core::Device::Cpu)?;
    for (k, q) in latents.iter().enumerate() {
        let z = q.sample(rng)?;
        let (p_hat, t_hat) = model.dec_fn.decode(&z.narrow(1, 0, half)?, &z.narrow(1, half, half)?)?;
        let (p_tgt, t_tgt) = &targets[k];
        let recon = ((p_hat - p_tgt)?.sqr()?.sum(1)? + (t_hat - t_tgt)?.sqr()?.sum(1)?)?.mean(0)?;
        let matching = (&q.mean - &teacher[k])?.sqr()?.sum(1)?.mean(0)?;
        total = ((total + recon)? + matching)?;
    }
    Ok(total)
}

/// Fine-tunes a Q&A model for voice separation: the inferrer is trained
/// together with the full objective on the four-voice segments.
pub fn finetune_voicesep(model: &Model, train: &[Segment], base: &TrainConfig, cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    let segs: Vec<Segment> = train.iter().map(voice_order).filter(|s| !s.is_silent()).collect();
    if segs.is_empty() {
        return Err(Error::Config("no voice segments to fine-tune on".into()));
    }
    let mut opt = Adam::new(base.adam);
    let sched = {
        let mut s = step_schedule(&base.schedule, base.schedule.total_epochs);
        s.tf_rate = 1.0;
        s
    };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = make_batches(&segs, cfg.batch_size, cfg.seed, epoch);
        for (step, idx) in batches.iter().enumerate() {
            let mut rng = step_rng(cfg.seed, epoch, step);
            let batch: Vec<Segment> = idx.iter().map(|&i| segs[i].clone()).collect();
            let batch = if cfg.augment {
                augment(&batch, draw_key_offset(&mut rng))?
            } else {
                batch
            };
            let hints = rng.random_bool(cfg.hint_rate);
            let elbo = elbo_loss(model, &batch, &sched, LossMode::TRAIN, &mut rng)?;
            let inf = inferrer_loss(model, &batch, hints, &mut rng)?;
            let total = (elbo.total + &inf)?;
            let grads = total.backward()?;
            opt.step(&model.params, &grads, cfg.lr)?;
            sum += total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
        let mean = sum / batches.len() as f64;
        log::info!("voicesep fine-tune epoch {epoch}: {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}

/// Correct and total notes over `segments`, with or without entry hints.
pub fn evaluate_segments(model: &Model, segments: &[Segment], hints: bool) -> Result<(usize, usize)> {
    let (mut c, mut t) = (0, 0);
    for seg in segments {
        let seg = voice_order(seg);
        let inst = seg.tracks[0].instrument;
        let h = entry_hints(&seg.tracks);
        let out = separate_voices(model, &seg, if hints { Some(&h) } else { None }, inst)?;
        let truth = true_voices(&seg, &out.notes);
        let (a, b) = score_assignment(&truth, &out.assignment.voices);
        c += a;
        t += b;
    }
    Ok((c, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_segments: usize,
    pub test_segments: usize,
    pub notes: usize,
    pub accuracy: f64,
    pub accuracy_with_hints: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceSepReport {
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_accuracy_with_hints: f64,
    pub random_baseline: f64,
}

/// Splits pieces into `folds` groups after a seeded shuffle.
pub fn fold_pieces(pieces: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if folds < 2 || pieces.len() < folds {
        return Err(Error::Config(format!(
            "{} pieces cannot be split into {folds} folds",
            pieces.len()
        )));
    }
    let mut p = pieces.to_vec();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, name) in p.into_iter().enumerate() {
        out[i % folds].push(name);
    }
    Ok(out)
}

/// k-fold cross validation: each fold fine-tunes a fresh copy of the base
/// checkpoint on the other folds and is scored on its own pieces.
pub fn evaluate_voicesep(
    pieces: &[(String, Vec<Segment>)],
    checkpoint: &Path,
    table: &InstrumentTable,
    folds: usize,
    cfg: &FinetuneConfig,
) -> Result<VoiceSepReport> {
    let names: Vec<String> = pieces.iter().map(|(n, _)| n.clone()).collect();
    let by_name: BTreeMap<&str, &Vec<Segment>> = pieces.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let groups = fold_pieces(&names, folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds);
    let mut all_test = Vec::new();
    for (k, test_names) in groups.iter().enumerate() {
        let gather = |names: &mut dyn Iterator<Item = &String>| -> Vec<Segment> {
            names.flat_map(|n| by_name[n.as_str()].iter().cloned()).collect()
        };
        let train = gather(&mut groups.iter().enumerate().filter(|(i, _)| *i != k).flat_map(|(_, g)| g.iter()));
        let test = gather(&mut test_names.iter());
        let ck = load_checkpoint(checkpoint, table)?;
        let mut model = ck.model;
        model.attach_inferrer(cfg.seed.wrapping_add(k as u64))?;
        finetune_voicesep(&model, &train, &ck.train, cfg)?;
        let (c, t) = evaluate_segments(&model, &test, false)?;
        let (ch, _) = evaluate_segments(&model, &test, true)?;
        log::info!("fold {k}: {:.2}% ({:.2}% with hints)", accuracy(c, t), accuracy(ch, t));
        reports.push(FoldReport {
            fold: k,
            train_segments: train.len(),
            test_segments: test.len(),
            notes: t,
            accuracy: accuracy(c, t),
            accuracy_with_hints: accuracy(ch, t),
        });
        all_test.extend(test);
    }
    let n = reports.len() as f64;
    Ok(VoiceSepReport {
        mean_accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / n,
        mean_accuracy_with_hints: reports.iter().map(|r| r.accuracy_with_hints).sum::<f64>() / n,
        random_baseline: random_baseline(&all_test, cfg.seed),
        folds: reports,
    })
}

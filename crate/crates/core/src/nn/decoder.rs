//! Auxiliary-feature predictor and the hierarchical track decoder.
//!
//! The track decoder runs a time-wise GRU over the 32 steps. Each step input
//! is the track latent, that step's auxiliary features and a summary of the
//! previous step's notes. A pitch-wise GRU then emits the step's notes in
//! ascending pitch order, closed by an end symbol. Durations are predicted
//! per note from the pitch state and the note's pitch.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{sigmoid, Embedding, GruCell, Linear};
use super::params::Init;
use super::{PITCH_END, PITCH_START, PITCH_VOCAB};
use crate::error::Result;
use crate::score::{NoteEvent, NoteEventSequence, STEPS};

pub const AUX_DIM: usize = 3;

#[derive(Debug, Clone)]
pub struct AuxDecoder {
    init: Linear,
    cell: GruCell,
    out: Linear,
}

impl AuxDecoder {
    pub fn new(init: &mut Init, latent: usize, hidden: usize) -> Result<Self> {
        Ok(AuxDecoder {
            init: Linear::new(init, "init", latent, hidden)?,
            cell: GruCell::new(init, "cell", latent, hidden)?,
            out: Linear::new(init, "out", hidden, AUX_DIM)?,
        })
    }

    /// (B, latent) -> (B, 32, 3) with every value in [0, 1]; the last
    /// channel is the onset probability.
    pub fn predict(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.init.forward(z)?.tanh()?;
        let mut outs = Vec::with_capacity(STEPS);
        for _ in 0..STEPS {
            h = self.cell.step(z, &h)?;
            outs.push(self.out.forward(&h)?);
        }
        sigmoid(&Tensor::stack(&outs, 1)?)
    }
}

/// Per-row decoder losses (summed over tokens) for a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct DecoderLoss {
    pub pitch_nll: Tensor,
    pub duration_nll: Tensor,
    /// Count of ground-truth notes whose pitch logit argmax was correct, and
    /// total ground-truth notes. Only filled when requested.
    pub pitch_hits: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TrackDecoder {
    init_time: Linear,
    time_cell: GruCell,
    init_pitch: Linear,
    pitch_emb: Embedding,
    pitch_cell: GruCell,
    pitch_out: Linear,
    dur_out: Linear,
    max_notes: usize,
}

fn host_matrix(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2()?)
}

/// Constrained argmax over pitch logits: strictly above `floor`, or the end
/// symbol. `force_end` leaves only the end symbol.
fn pick_pitch(logits: &[f32], floor: Option<u8>, force_end: bool) -> u32 {
    if force_end {
        return PITCH_END;
    }
    let lo = floor.map(|f| f as usize + 1).unwrap_or(0);
    let mut best = (PITCH_END, logits[PITCH_END as usize]);
    for (p, &v) in logits.iter().enumerate().take(128).skip(lo) {
        if v > best.1 {
            best = (p as u32, v);
        }
    }
    best.0
}

impl TrackDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        latent: usize,
        note_embed: usize,
        time_hidden: usize,
        pitch_hidden: usize,
        max_notes: usize,
    ) -> Result<Self> {
        Ok(TrackDecoder {
            init_time: Linear::new(init, "init_time", latent, time_hidden)?,
            time_cell: GruCell::new(init, "time_cell", latent + AUX_DIM + note_embed, time_hidden)?,
            init_pitch: Linear::new(init, "init_pitch", time_hidden, pitch_hidden)?,
            pitch_emb: Embedding::new(init, "pitch_emb", PITCH_VOCAB, note_embed, 1.0)?,
            pitch_cell: GruCell::new(init, "pitch_cell", note_embed + time_hidden, pitch_hidden)?,
            pitch_out: Linear::new(init, "pitch_out", pitch_hidden, PITCH_VOCAB)?,
            dur_out: Linear::new(init, "dur_out", pitch_hidden + note_embed, STEPS)?,
            max_notes,
        })
    }

    /// Mean pitch embedding of each row's notes; zero for rows without notes.
    fn summary(&self, notes: &[Vec<u8>], dtype: DType) -> Result<Tensor> {
        let b = notes.len();
        let len = notes.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = vec![0u32; b * len];
        let mut w = vec![0f64; b * len];
        for (r, row) in notes.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                ids[r * len + k] = p as u32;
                w[r * len + k] = 1.0 / row.len() as f64;
            }
        }
        let emb = self.pitch_emb.lookup(&ids, &[b, len])?;
        let w = Tensor::from_vec(w, (b, len, 1), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(emb.broadcast_mul(&w)?.sum(1)?)
    }

    fn time_input(&self, z: &Tensor, aux: &Tensor, t: usize, summary: &Tensor) -> Result<Tensor> {
        Ok(Tensor::cat(&[z.clone(), aux.narrow(1, t, 1)?.squeeze(1)?, summary.clone()], 1)?)
    }

    /// Teacher-forced pass against `targets`. At every decision point the
    /// ground-truth token is fed with probability `tf_rate`, otherwise the
    /// model's own (constrained greedy) choice.
    pub fn loss(
        &self,
        z: &Tensor,
        aux: &Tensor,
        targets: &[NoteEventSequence],
        tf_rate: f64,
        rng: &mut ChaCha8Rng,
        count_hits: bool,
    ) -> Result<DecoderLoss> {
        let b = targets.len();
        let dtype = z.dtype();
        let dev = Device::Cpu;
        let mut h_time = self.init_time.forward(z)?.tanh()?;
        let mut summary = Tensor::zeros((b, self.pitch_emb.dim()), dtype, &dev)?;
        let mut pitch_nll = Tensor::zeros(b, dtype, &dev)?;
        let mut dur_nll = Tensor::zeros(b, dtype, &dev)?;
        let mut hits = Tensor::zeros(b, DType::F32, &dev)?;
        let mut total_notes = 0usize;

        for t in 0..STEPS {
            h_time = self.time_cell.step(&self.time_input(z, aux, t, &summary)?, &h_time)?;
            let gt: Vec<&Vec<NoteEvent>> = targets.iter().map(|s| &s.steps[t]).collect();
            let len = gt.iter().map(|v| v.len()).max().unwrap_or(0);
            total_notes += gt.iter().map(|v| v.len()).sum::<usize>();

            let mut h_p = self.init_pitch.forward(&h_time)?.tanh()?;
            let mut prev: Vec<u32> = vec![PITCH_START; b];
            // Tokens actually fed, per row, for the free-running summary.
            let mut fed: Vec<Vec<u8>> = vec![Vec::new(); b];
            let mut ended = vec![false; b];

            for k in 0..=len {
                let inp = Tensor::cat(&[self.pitch_emb.lookup(&prev, &[b])?, h_time.clone()], 1)?;
                h_p = self.pitch_cell.step(&inp, &h_p)?;
                let logits = self.pitch_out.forward(&h_p)?;

                let mut target = vec![0u32; b];
                let mut mask = vec![0f64; b];
                let mut note_target = vec![0u32; b];
                let mut note_pitch = vec![0u32; b];
                let mut note_mask = vec![0f64; b];
                for r in 0..b {
                    let n = gt[r].len();
                    if k < n {
                        target[r] = gt[r][k].pitch as u32;
                        mask[r] = 1.0;
                        note_target[r] = gt[r][k].duration as u32 - 1;
                        note_pitch[r] = gt[r][k].pitch as u32;
                        note_mask[r] = 1.0;
                    } else if k == n {
                        target[r] = PITCH_END;
                        mask[r] = 1.0;
                    }
                }
                let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
                let tgt = Tensor::from_vec(target.clone(), (b, 1), &dev)?;
                let m = Tensor::from_vec(mask, b, &dev)?.to_dtype(dtype)?;
                pitch_nll = (pitch_nll - logp.gather(&tgt, 1)?.squeeze(1)?.mul(&m)?)?;

                let dur_in = Tensor::cat(&[h_p.clone(), self.pitch_emb.lookup(&note_pitch, &[b])?], 1)?;
                let dur_logp = candle_nn::ops::log_softmax(&self.dur_out.forward(&dur_in)?, D::Minus1)?;
                let dt = Tensor::from_vec(note_target, (b, 1), &dev)?;
                let nm = Tensor::from_vec(note_mask, b, &dev)?.to_dtype(dtype)?;
                dur_nll = (dur_nll - dur_logp.gather(&dt, 1)?.squeeze(1)?.mul(&nm)?)?;

                if count_hits {
                    let am = logits.argmax(D::Minus1)?;
                    let eq = am.eq(&tgt.squeeze(1)?)?.to_dtype(DType::F32)?;
                    hits = (hits + eq.mul(&nm.to_dtype(DType::F32)?)?)?;
                }

                // Choose what to feed next.
                let coins: Vec<bool> = (0..b).map(|_| rng.random_bool(tf_rate.clamp(0.0, 1.0))).collect();
                let host = if coins.iter().all(|&c| c) {
                    None
                } else {
                    Some(host_matrix(&logits)?)
                };
                for r in 0..b {
                    let chosen = if coins[r] {
                        target[r]
                    } else {
                        let host = host.as_ref().expect("host logits fetched");
                        let floor = fed[r].last().copied();
                        pick_pitch(&host[r], floor, ended[r] || fed[r].len() >= self.max_notes)
                    };
                    if !ended[r] {
                        if chosen == PITCH_END || chosen >= 128 {
                            ended[r] = true;
                        } else {
                            fed[r].push(chosen as u8);
                        }
                    }
                    prev[r] = if chosen >= 128 { PITCH_END } else { chosen };
                }
            }

            let step_coins: Vec<bool> = (0..b).map(|_| rng.random_bool(tf_rate.clamp(0.0, 1.0))).collect();
            let notes: Vec<Vec<u8>> = (0..b)
                .map(|r| {
                    if step_coins[r] {
                        gt[r].iter().map(|e| e.pitch).collect()
                    } else {
                        fed[r].clone()
                    }
                })
                .collect();
            summary = self.summary(&notes, dtype)?;
        }

        let pitch_hits = if count_hits {
            let h: f32 = hits.sum_all()?.to_scalar()?;
            Some((h.round() as usize, total_notes))
        } else {
            None
        };
        Ok(DecoderLoss {
            pitch_nll,
            duration_nll: dur_nll,
            pitch_hits,
        })
    }

    /// Greedy decoding. `aux` is (B, 32, 3).
    pub fn generate(&self, z: &Tensor, aux: &Tensor) -> Result<Vec<NoteEventSequence>> {
        let b = z.dims()[0];
        let dtype = z.dtype();
        let mut out = vec![NoteEventSequence::default(); b];
        let mut h_time = self.init_time.forward(z)?.tanh()?;
        let mut summary = Tensor::zeros((b, self.pitch_emb.dim()), dtype, &Device::Cpu)?;

        for t in 0..STEPS {
            h_time = self.time_cell.step(&self.time_input(z, aux, t, &summary)?, &h_time)?;
            let mut h_p = self.init_pitch.forward(&h_time)?.tanh()?;
            let mut prev = vec![PITCH_START; b];
            let mut notes: Vec<Vec<u8>> = vec![Vec::new(); b];
            let mut ended = vec![false; b];
            let max_dur = STEPS - t;

            for _ in 0..=self.max_notes {
                if ended.iter().all(|&e| e) {
                    break;
                }
                let inp = Tensor::cat(&[self.pitch_emb.lookup(&prev, &[b])?, h_time.clone()], 1)?;
                h_p = self.pitch_cell.step(&inp, &h_p)?;
                let logits = host_matrix(&self.pitch_out.forward(&h_p)?)?;
                let mut chosen = vec![PITCH_END; b];
                for r in 0..b {
                    if ended[r] {
                        continue;
                    }
                    let c = pick_pitch(&logits[r], notes[r].last().copied(), notes[r].len() >= self.max_notes);
                    if c == PITCH_END {
                        ended[r] = true;
                    } else {
                        chosen[r] = c;
                        notes[r].push(c as u8);
                    }
                }
                let dur_in = Tensor::cat(&[h_p.clone(), self.pitch_emb.lookup(&chosen, &[b])?], 1)?;
                let dur = host_matrix(&self.dur_out.forward(&dur_in)?)?;
                for r in 0..b {
                    if chosen[r] != PITCH_END {
                        let d = dur[r][..max_dur]
                            .iter()
                            .enumerate()
                            .fold((0usize, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                            .0;
                        out[r].steps[t].push(NoteEvent {
                            pitch: chosen[r] as u8,
                            duration: (d + 1) as u8,
                        });
                    }
                }
                prev = chosen;
            }
            summary = self.summary(&notes, dtype)?;
        }
        Ok(out)
    }
}

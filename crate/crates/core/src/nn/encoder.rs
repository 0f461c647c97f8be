//! Hierarchical mixture encoder: a bidirectional pitch-wise GRU condenses the
//! notes sounding at each step, then a bidirectional time-wise GRU condenses
//! the 32 step summaries into the mixture posterior.

use candle_core::{DType, Device, Tensor};

use super::latent::LatentGaussian;
use super::layers::{Embedding, GruCell, Linear};
use super::params::Init;
use super::{DURATION_VOCAB, PITCH_VOCAB};
use crate::error::Result;
use crate::score::{NoteEventSequence, STEPS};

/// Note tokens of a batch laid out as (rows = batch * 32, max notes).
pub(crate) struct PackedSteps {
    pub rows: usize,
    pub len: usize,
    pub pitch: Vec<u32>,
    pub duration: Vec<u32>,
    pub mask: Vec<f64>,
}

pub(crate) fn pack_steps(seqs: &[NoteEventSequence]) -> PackedSteps {
    let len = seqs
        .iter()
        .map(NoteEventSequence::max_notes_per_step)
        .max()
        .unwrap_or(0)
        .max(1);
    let rows = seqs.len() * STEPS;
    let mut packed = PackedSteps {
        rows,
        len,
        pitch: vec![0; rows * len],
        duration: vec![0; rows * len],
        mask: vec![0.0; rows * len],
    };
    for (b, seq) in seqs.iter().enumerate() {
        for (t, events) in seq.steps.iter().enumerate() {
            let row = b * STEPS + t;
            for (k, ev) in events.iter().enumerate() {
                let i = row * len + k;
                packed.pitch[i] = ev.pitch as u32;
                packed.duration[i] = ev.duration as u32;
                packed.mask[i] = 1.0;
            }
        }
    }
    packed
}

#[derive(Debug, Clone)]
pub struct MixtureEncoder {
    pitch_emb: Embedding,
    dur_emb: Embedding,
    pitch_fwd: GruCell,
    pitch_bwd: GruCell,
    time_fwd: GruCell,
    time_bwd: GruCell,
    mean: Linear,
    log_var: Linear,
}

impl MixtureEncoder {
    pub fn new(
        init: &mut Init,
        note_embed: usize,
        pitch_hidden: usize,
        time_hidden: usize,
        latent: usize,
    ) -> Result<Self> {
        Ok(MixtureEncoder {
            pitch_emb: Embedding::new(init, "pitch_emb", PITCH_VOCAB, note_embed, 1.0)?,
            dur_emb: Embedding::new(init, "dur_emb", DURATION_VOCAB, note_embed, 1.0)?,
            pitch_fwd: GruCell::new(init, "pitch_fwd", note_embed, pitch_hidden)?,
            pitch_bwd: GruCell::new(init, "pitch_bwd", note_embed, pitch_hidden)?,
            time_fwd: GruCell::new(init, "time_fwd", 2 * pitch_hidden, time_hidden)?,
            time_bwd: GruCell::new(init, "time_bwd", 2 * pitch_hidden, time_hidden)?,
            mean: Linear::new(init, "mean", 2 * time_hidden, latent)?,
            log_var: Linear::log_var_head(init, "log_var", 2 * time_hidden, latent)?,
        })
    }

    pub fn encode(&self, seqs: &[NoteEventSequence], dtype: DType) -> Result<LatentGaussian> {
        let b = seqs.len();
        let packed = pack_steps(seqs);
        let shape = [packed.rows, packed.len];
        let notes = (self.pitch_emb.lookup(&packed.pitch, &shape)?
            + self.dur_emb.lookup(&packed.duration, &shape)?)?;
        let mask = Tensor::from_vec(packed.mask, (packed.rows, packed.len), &Device::Cpu)?
            .to_dtype(dtype)?;
        let fwd = self.pitch_fwd.run(&notes, Some(&mask), false)?;
        let bwd = self.pitch_bwd.run(&notes, Some(&mask), true)?;
        let simu = Tensor::cat(&[fwd, bwd], 1)?.reshape((b, STEPS, ()))?;
        let tf = self.time_fwd.run(&simu, None, false)?;
        let tb = self.time_bwd.run(&simu, None, true)?;
        let h = Tensor::cat(&[tf, tb], 1)?;
        LatentGaussian::new(self.mean.forward(&h)?, self.log_var.forward(&h)?)
    }
}

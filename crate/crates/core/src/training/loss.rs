use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{aux_features, track_function, AuxFeatures, TrackFunction};
use crate::instrument::InstrumentId;
use crate::nn::{aux_tensor, query, query_vectors, Mode, Model};
use crate::score::{condense_mixture, roll_to_events, Mixture, NoteEventSequence, Segment};

use super::schedule::ScheduleState;

/// Loss terms averaged over the tracks of a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub track_recon: f64,
    pub function_recon: f64,
    pub aux_recon: f64,
    pub kl_mix: f64,
    pub kl_function: f64,
    pub kl_track: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.track_recon += w * other.track_recon;
        self.function_recon += w * other.function_recon;
        self.aux_recon += w * other.aux_recon;
        self.kl_mix += w * other.kl_mix;
        self.kl_function += w * other.kl_function;
        self.kl_track += w * other.kl_track;
        self.total += w * other.total;
    }
}

pub struct Elbo {
    /// Scalar loss tensor to differentiate.
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    /// (correct, total) ground-truth pitches under argmax, when requested.
    pub pitch_hits: Option<(usize, usize)>,
}

/// How a loss pass treats randomness.
#[derive(Debug, Clone, Copy)]
pub struct LossMode {
    /// Sample latents and apply dropout; otherwise use posterior means.
    pub sample: bool,
    pub count_hits: bool,
}

impl LossMode {
    pub const TRAIN: LossMode = LossMode {
        sample: true,
        count_hits: false,
    };
    pub const EVAL: LossMode = LossMode {
        sample: false,
        count_hits: true,
    };
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Squared error summed over all but the first axis, averaged over rows.
fn sum_sq(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let rows = pred.dims()[0];
    Ok(((pred - target)?.sqr()?.reshape((rows, ()))?.sum(1)?.mean(0))?)
}

/// Per-track supervision derived from the ground-truth grids.
struct Targets {
    mixtures: Vec<Mixture>,
    functions: Vec<TrackFunction>,
    aux: Vec<AuxFeatures>,
    events: Vec<NoteEventSequence>,
    instruments: Vec<InstrumentId>,
}

fn targets(batch: &[Segment]) -> Result<(usize, Targets)> {
    let n = batch.first().map(Segment::n_tracks).unwrap_or(0);
    if n == 0 {
        return Err(Error::Config("loss batch needs segments with at least one track".into()));
    }
    if batch.iter().any(|s| s.n_tracks() != n) {
        return Err(Error::Config("loss batch mixes track counts".into()));
    }
    let tracks = batch.iter().flat_map(|s| &s.tracks);
    Ok((
        n,
        Targets {
            mixtures: batch.iter().map(condense_mixture).collect(),
            functions: tracks.clone().map(|t| track_function(&t.grid)).collect(),
            aux: tracks.clone().map(|t| aux_features(&t.grid)).collect(),
            events: tracks.clone().map(|t| roll_to_events(&t.grid)).collect(),
            instruments: tracks.map(|t| t.instrument).collect(),
        },
    ))
}

/// Negative ELBO of a batch of segments with equal track counts.
///
/// Reconstruction terms are summed within a track (over tokens or vector
/// entries) and averaged over tracks; KL terms are summed over latent
/// dimensions and averaged likewise. During the pass the decoder is fed the
/// ground-truth auxiliary features.
pub fn elbo_loss(
    model: &Model,
    batch: &[Segment],
    sched: &ScheduleState,
    mode: LossMode,
    rng: &mut ChaCha8Rng,
) -> Result<Elbo> {
    let dtype = model.dtype();
    let (n, tg) = targets(batch)?;
    let b = batch.len();

    let mix_refs: Vec<&Mixture> = tg.mixtures.iter().collect();
    let q_mix = model.encode_mixture(&mix_refs)?;
    let z_mix = q_mix.draw(mode.sample, rng)?;

    let fn_refs: Vec<&TrackFunction> = tg.functions.iter().collect();
    let (q_p, q_t) = model.encode_function(&fn_refs)?;
    let z_p = q_p.draw(mode.sample, rng)?;
    let z_t = q_t.draw(mode.sample, rng)?;
    let queries = query_vectors(&z_p, &z_t)?.reshape((b, n, ()))?;

    let q_track = model.separate(
        &z_mix,
        &queries,
        &tg.instruments,
        Mode {
            train: mode.sample,
            rng,
        },
    )?;
    let z_track = q_track.draw(mode.sample, rng)?;

    let (p_hat, t_hat) = model.dec_fn.decode(&z_p, &z_t)?;
    let (p_tgt, t_tgt) = query::function_tensors(&fn_refs, dtype)?;
    let function_recon = (sum_sq(&p_hat, &p_tgt)? + sum_sq(&t_hat, &t_tgt)?)?;

    let aux_tgt = aux_tensor(&tg.aux, dtype)?;
    let aux_hat = model.aux.predict(&z_track)?;
    let aux_mse = sum_sq(&aux_hat.narrow(2, 0, 2)?, &aux_tgt.narrow(2, 0, 2)?)?;
    let r_hat = aux_hat.narrow(2, 2, 1)?.clamp(1e-6, 1.0 - 1e-6)?;
    let r_tgt = aux_tgt.narrow(2, 2, 1)?;
    let bce = ((r_tgt.mul(&r_hat.log()?)? + (1.0 - &r_tgt)?.mul(&(1.0 - &r_hat)?.log()?)?)?.neg()?
        .reshape((b * n, ()))?
        .sum(1)?
        .mean(0))?;
    let aux_recon = (aux_mse + bce)?;

    let dl = model
        .dec_track
        .loss(&z_track, &aux_tgt, &tg.events, sched.tf_rate, rng, mode.count_hits)?;
    let track_recon = (dl.pitch_nll + dl.duration_nll)?.mean(0)?;

    let kl_mix = q_mix.kl()?.mean(0)?;
    let kl_function = (q_p.kl()? + q_t.kl()?)?.mean(0)?;
    let kl_track = q_track.kl()?.mean(0)?;

    let recon = ((&track_recon + &function_recon)? + &aux_recon)?;
    let total = ((recon + (&kl_function * sched.beta_function)?)?
        + ((&kl_mix + &kl_track)? * sched.beta_other)?)?;

    let breakdown = LossBreakdown {
        track_recon: scalar(&track_recon)?,
        function_recon: scalar(&function_recon)?,
        aux_recon: scalar(&aux_recon)?,
        kl_mix: scalar(&kl_mix)?,
        kl_function: scalar(&kl_function)?,
        kl_track: scalar(&kl_track)?,
        total: scalar(&total)?,
    };
    Ok(Elbo {
        total,
        breakdown,
        pitch_hits: dl.pitch_hits,
    })
}

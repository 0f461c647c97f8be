//! The learnable components and their assembly into one model.
//!
//! Parameter groups (name prefixes):
//!
//! | group       | component                               |
//! |-------------|-----------------------------------------|
//! | `enc_mix`   | hierarchical mixture encoder            |
//! | `enc_fn`    | function query-net encoders             |
//! | `sep`       | Transformer separator + instrument table |
//! | `dec_fn`    | function query-net decoders             |
//! | `aux`       | auxiliary-feature GRU                   |
//! | `dec_track` | hierarchical track decoder              |
//! | `vs_infer`  | voice-function inferrer (optional)      |

pub mod decoder;
pub mod encoder;
pub mod inferrer;
pub mod latent;
pub mod layers;
pub mod params;
pub mod query;
pub mod separator;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{AuxDecoder, DecoderLoss, TrackDecoder, AUX_DIM};
pub use encoder::MixtureEncoder;
pub use inferrer::FunctionInferrer;
pub use latent::LatentGaussian;
pub use params::{Init, ParamStore};
pub use query::{FunctionDecoder, FunctionEncoder};
pub use separator::{Separator, SeparatorShape};

use crate::error::{Error, Result};
use crate::features::{AuxFeatures, TrackFunction};
use crate::instrument::InstrumentId;
use crate::score::{Mixture, NoteEventSequence, roll_to_events, STEPS};

/// 128 pitches, then start and end symbols.
pub const PITCH_VOCAB: usize = 130;
pub const PITCH_START: u32 = 128;
pub const PITCH_END: u32 = 129;
/// Durations 1..=32; index 0 is unused.
pub const DURATION_VOCAB: usize = 33;

pub const PARAM_GROUPS: [&str; 6] = ["enc_mix", "enc_fn", "sep", "dec_fn", "aux", "dec_track"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub note_embed: usize,
    pub enc_pitch_hidden: usize,
    pub enc_time_hidden: usize,
    pub mix_latent: usize,
    /// Dimension of each of the pitch and time function latents.
    pub fn_latent: usize,
    pub track_latent: usize,
    pub fn_channels: usize,
    pub fn_dec_hidden: usize,
    pub separator: SeparatorShape,
    pub aux_hidden: usize,
    pub dec_time_hidden: usize,
    pub dec_pitch_hidden: usize,
    /// Cap on notes emitted per step by the greedy decoder.
    pub max_notes_per_step: usize,
    pub voice_hidden: usize,
    /// Initial bias of every log-variance head.
    #[serde(default)]
    pub log_var_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            note_embed: 128,
            enc_pitch_hidden: 256,
            enc_time_hidden: 512,
            mix_latent: 256,
            fn_latent: 128,
            track_latent: 256,
            fn_channels: 4,
            fn_dec_hidden: 256,
            separator: SeparatorShape {
                d_model: 512,
                d_ff: 1024,
                heads: 8,
                layers: 2,
                dropout: 0.1,
            },
            aux_hidden: 128,
            dec_time_hidden: 1024,
            dec_pitch_hidden: 512,
            max_notes_per_step: 16,
            voice_hidden: 512,
            log_var_init: 0.0,
        }
    }
}

impl ModelConfig {
    /// Latent sizes and separator of the full model with narrower recurrent
    /// layers, for CPU-scale training runs.
    pub fn desk() -> Self {
        ModelConfig {
            note_embed: 64,
            enc_pitch_hidden: 96,
            enc_time_hidden: 192,
            fn_dec_hidden: 128,
            aux_hidden: 64,
            dec_time_hidden: 256,
            dec_pitch_hidden: 192,
            voice_hidden: 192,
            ..ModelConfig::default()
        }
    }

    /// A very small model for numerical checks.
    pub fn tiny() -> Self {
        ModelConfig {
            note_embed: 6,
            enc_pitch_hidden: 5,
            enc_time_hidden: 6,
            mix_latent: 8,
            fn_latent: 4,
            track_latent: 8,
            fn_channels: 2,
            fn_dec_hidden: 6,
            separator: SeparatorShape {
                d_model: 8,
                d_ff: 12,
                heads: 2,
                layers: 2,
                dropout: 0.1,
            },
            aux_hidden: 5,
            dec_time_hidden: 7,
            dec_pitch_hidden: 6,
            max_notes_per_step: 8,
            voice_hidden: 6,
            log_var_init: 0.0,
        }
    }

    pub fn query_latent(&self) -> usize {
        2 * self.fn_latent
    }
}

/// Runtime behaviour of a forward pass. In training mode dropout is active
/// and latents are sampled; `rng` supplies both.
pub struct Mode<'a> {
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    n_instruments: usize,
    pub enc_mix: MixtureEncoder,
    pub enc_fn: FunctionEncoder,
    pub sep: Separator,
    pub dec_fn: FunctionDecoder,
    pub aux: AuxDecoder,
    pub dec_track: TrackDecoder,
    pub inferrer: Option<FunctionInferrer>,
}

impl Model {
    pub fn new(config: ModelConfig, n_instruments: usize, dtype: DType, seed: u64) -> Result<Self> {
        if n_instruments == 0 {
            return Err(Error::Config("empty instrument vocabulary".into()));
        }
        let mut params = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let enc_mix = MixtureEncoder::new(
            &mut scoped(&mut params, &mut rng, "enc_mix", c.log_var_init),
            c.note_embed,
            c.enc_pitch_hidden,
            c.enc_time_hidden,
            c.mix_latent,
        )?;
        let enc_fn = FunctionEncoder::new(&mut scoped(&mut params, &mut rng, "enc_fn", c.log_var_init), c.fn_channels, c.fn_latent)?;
        let sep = Separator::new(
            &mut scoped(&mut params, &mut rng, "sep", c.log_var_init),
            &c.separator,
            c.mix_latent,
            c.query_latent(),
            c.track_latent,
            n_instruments,
        )?;
        let dec_fn = FunctionDecoder::new(&mut scoped(&mut params, &mut rng, "dec_fn", c.log_var_init), c.fn_latent, c.fn_dec_hidden)?;
        let aux = AuxDecoder::new(&mut scoped(&mut params, &mut rng, "aux", c.log_var_init), c.track_latent, c.aux_hidden)?;
        let dec_track = TrackDecoder::new(
            &mut scoped(&mut params, &mut rng, "dec_track", c.log_var_init),
            c.track_latent,
            c.note_embed,
            c.dec_time_hidden,
            c.dec_pitch_hidden,
            c.max_notes_per_step,
        )?;
        Ok(Model {
            config,
            params,
            n_instruments,
            enc_mix,
            enc_fn,
            sep,
            dec_fn,
            aux,
            dec_track,
            inferrer: None,
        })
    }

    /// Adds the voice-function inferrer (fresh parameters) to this model.
    pub fn attach_inferrer(&mut self, seed: u64) -> Result<()> {
        if self.inferrer.is_some() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lv = self.config.log_var_init;
        self.inferrer = Some(FunctionInferrer::new(
            &mut scoped(&mut self.params, &mut rng, "vs_infer", lv),
            self.config.mix_latent,
            self.config.query_latent(),
            self.config.voice_hidden,
        )?);
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn n_instruments(&self) -> usize {
        self.n_instruments
    }

    pub fn encode_mixture(&self, mixes: &[&Mixture]) -> Result<LatentGaussian> {
        let seqs: Vec<NoteEventSequence> = mixes.iter().map(|m| roll_to_events(&m.grid)).collect();
        self.enc_mix.encode(&seqs, self.dtype())
    }

    /// Pitch and time function posteriors.
    pub fn encode_function(&self, fns: &[&TrackFunction]) -> Result<(LatentGaussian, LatentGaussian)> {
        let (p, t) = query::function_tensors(fns, self.dtype())?;
        self.enc_fn.encode(&p, &t)
    }

    pub fn decode_function(&self, z_pitch: &Tensor, z_time: &Tensor) -> Result<Vec<TrackFunction>> {
        let (p, t) = self.dec_fn.decode(z_pitch, z_time)?;
        query::functions_from_tensors(&p, &t)
    }

    /// Separates `queries` (B, N, 2*fn_latent) from `z_mix` (B, mix_latent).
    /// Dropout is on only in training mode.
    pub fn separate(
        &self,
        z_mix: &Tensor,
        queries: &Tensor,
        instruments: &[InstrumentId],
        mode: Mode<'_>,
    ) -> Result<LatentGaussian> {
        let rng = if mode.train { Some(mode.rng) } else { None };
        self.sep.separate(z_mix, queries, instruments, rng)
    }

    pub fn predict_aux(&self, z_track: &Tensor) -> Result<Vec<AuxFeatures>> {
        let a = self.aux.predict(z_track)?;
        let rows: Vec<Vec<Vec<f32>>> = a.to_dtype(DType::F32)?.to_vec3()?;
        Ok(rows
            .into_iter()
            .map(|r| AuxFeatures::from_interleaved(&r.concat()))
            .collect())
    }

    pub fn decode_tracks(&self, z_track: &Tensor, aux: &[AuxFeatures]) -> Result<Vec<NoteEventSequence>> {
        let a = aux_tensor(aux, self.dtype())?;
        self.dec_track.generate(z_track, &a)
    }
}

fn scoped<'a>(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, prefix: &str, log_var_bias: f64) -> Init<'a> {
    let mut i = Init::new(store, rng, prefix);
    i.log_var_bias = log_var_bias;
    i
}

/// (B, 32, 3) tensor of auxiliary features.
pub fn aux_tensor(aux: &[AuxFeatures], dtype: DType) -> Result<Tensor> {
    let data: Vec<f32> = aux.iter().flat_map(AuxFeatures::interleaved).collect();
    Ok(Tensor::from_vec(data, (aux.len(), STEPS, AUX_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Concatenates pitch and time latents into query vectors (rows, 2*fn_latent).
pub fn query_vectors(z_pitch: &Tensor, z_time: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[z_pitch, z_time], 1)?)
}

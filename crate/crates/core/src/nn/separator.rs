//! Track separator: a post-norm Transformer encoder over one mixture token
//! followed by N function-query tokens. There is no positional encoding, so
//! outputs follow their queries under any permutation of the query list.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::latent::LatentGaussian;
use super::layers::{dropout, Embedding, LayerNorm, Linear};
use super::params::Init;
use crate::error::{Error, Result};
use crate::instrument::InstrumentId;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeparatorShape {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn forward(&self, x: &Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, s, d) = x.dims3()?;
        let hd = d / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, s, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let mut attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        if let Some(rng) = rng {
            attn = dropout(&attn, p, rng)?;
        }
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, s, d))?;
        self.out.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: SelfAttention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(init: &mut Init, shape: &SeparatorShape) -> Result<Self> {
        let d = shape.d_model;
        let mut a = init.sub("attn");
        let attn = SelfAttention {
            q: Linear::new(&mut a, "q", d, d)?,
            k: Linear::new(&mut a, "k", d, d)?,
            v: Linear::new(&mut a, "v", d, d)?,
            out: Linear::new(&mut a, "out", d, d)?,
            heads: shape.heads,
        };
        Ok(EncoderLayer {
            attn,
            norm1: LayerNorm::new(init, "norm1", d)?,
            ff1: Linear::new(init, "ff1", d, shape.d_ff)?,
            ff2: Linear::new(init, "ff2", shape.d_ff, d)?,
            norm2: LayerNorm::new(init, "norm2", d)?,
        })
    }

    fn forward(&self, x: &Tensor, p: f64, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let drop = |t: Tensor, rng: &mut Option<&mut ChaCha8Rng>| -> Result<Tensor> {
            match rng {
                Some(r) => dropout(&t, p, r),
                None => Ok(t),
            }
        };
        let a = self.attn.forward(x, p, rng.as_deref_mut())?;
        let x = self.norm1.forward(&(x + drop(a, &mut rng)?)?)?;
        let h = drop(self.ff1.forward(&x)?.gelu_erf()?, &mut rng)?;
        let f = drop(self.ff2.forward(&h)?, &mut rng)?;
        self.norm2.forward(&(x + f)?)
    }
}

#[derive(Debug, Clone)]
pub struct Separator {
    mix_proj: Linear,
    query_proj: Linear,
    mix_type: Tensor,
    instruments: Embedding,
    layers: Vec<EncoderLayer>,
    mean: Linear,
    log_var: Linear,
    dropout: f64,
}

impl Separator {
    pub fn new(
        init: &mut Init,
        shape: &SeparatorShape,
        mix_latent: usize,
        query_latent: usize,
        track_latent: usize,
        n_instruments: usize,
    ) -> Result<Self> {
        if shape.heads == 0 || shape.d_model % shape.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                shape.d_model, shape.heads
            )));
        }
        let d = shape.d_model;
        let layers = (0..shape.layers)
            .map(|i| EncoderLayer::new(&mut init.sub(&format!("layer{i}")), shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(Separator {
            mix_proj: Linear::new(init, "mix_proj", mix_latent, d)?,
            query_proj: Linear::new(init, "query_proj", query_latent, d)?,
            mix_type: init.normal("mix_type", &[1, 1, d], 0.1)?,
            instruments: Embedding::new(init, "instrument_emb", n_instruments, d, 0.1)?,
            layers,
            mean: Linear::new(init, "mean", d, track_latent)?,
            log_var: Linear::log_var_head(init, "log_var", d, track_latent)?,
            dropout: shape.dropout,
        })
    }

    pub fn n_instruments(&self) -> usize {
        self.instruments.count()
    }

    /// `z_mix` is (B, mix_latent), `queries` is (B, N, query_latent) and
    /// `instruments` holds B*N ids in row-major order. Returns B*N track
    /// posteriors in the same order. Dropout is active iff `rng` is given.
    pub fn separate(
        &self,
        z_mix: &Tensor,
        queries: &Tensor,
        instruments: &[InstrumentId],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LatentGaussian> {
        let (b, n, _) = queries.dims3()?;
        if n == 0 {
            return Err(Error::Config("separator needs at least one query".into()));
        }
        if instruments.len() != b * n {
            return Err(Error::Config(format!(
                "{} instrument ids for {} queries",
                instruments.len(),
                b * n
            )));
        }
        if let Some(bad) = instruments.iter().find(|i| i.index() >= self.n_instruments()) {
            return Err(Error::UnknownInstrument(bad.to_string()));
        }
        let ids: Vec<u32> = instruments.iter().map(|i| i.0 as u32).collect();
        let mix_tok = self
            .mix_proj
            .forward(z_mix)?
            .unsqueeze(1)?
            .broadcast_add(&self.mix_type)?;
        let query_tok = (self.query_proj.forward(queries)? + self.instruments.lookup(&ids, &[b, n])?)?;
        let mut x = Tensor::cat(&[mix_tok, query_tok], 1)?;
        let mut rng = rng;
        for layer in &self.layers {
            x = layer.forward(&x, self.dropout, rng.as_deref_mut())?;
        }
        let out = x.narrow(1, 1, n)?.reshape((b * n, ()))?;
        LatentGaussian::new(self.mean.forward(&out)?, self.log_var.forward(&out)?)
    }
}

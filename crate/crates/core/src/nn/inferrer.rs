//! Recurrent function inferrer for voice separation: predicts one function
//! latent per voice from the mixture latent, highest voice first.

use candle_core::{DType, Device, Tensor};

use super::latent::LatentGaussian;
use super::layers::{GruCell, Linear};
use super::params::Init;
use crate::error::Result;
use crate::score::{Note, STEPS};

/// Features of a voice's first note: (pitch / 127, onset / 31, present).
pub const HINT_DIM: usize = 3;

#[derive(Debug, Clone)]
pub struct FunctionInferrer {
    init: Linear,
    cell: GruCell,
    hint: Linear,
    mean: Linear,
    log_var: Linear,
    latent: usize,
}

pub fn hint_features(hints: &[Option<Note>]) -> Vec<f64> {
    hints
        .iter()
        .flat_map(|h| match h {
            Some(n) => [n.pitch as f64 / 127.0, n.onset as f64 / (STEPS - 1) as f64, 1.0],
            None => [0.0; 3],
        })
        .collect()
}

impl FunctionInferrer {
    pub fn new(init: &mut Init, mix_latent: usize, query_latent: usize, hidden: usize) -> Result<Self> {
        Ok(FunctionInferrer {
            init: Linear::new(init, "init", mix_latent, hidden)?,
            cell: GruCell::new(init, "cell", query_latent, hidden)?,
            hint: Linear::new(init, "hint", HINT_DIM, query_latent)?,
            mean: Linear::new(init, "mean", hidden, query_latent)?,
            log_var: Linear::log_var_head(init, "log_var", hidden, query_latent)?,
            latent: query_latent,
        })
    }

    /// Emits `n_voices` posteriors, each (B, query_latent). Step `k` consumes
    /// the previous voice's latent: `teacher[k - 1]` when given, otherwise the
    /// previous posterior mean. `hints[k]` is (B, 3) per voice.
    pub fn infer(
        &self,
        z_mix: &Tensor,
        n_voices: usize,
        hints: Option<&[Tensor]>,
        teacher: Option<&[Tensor]>,
    ) -> Result<Vec<LatentGaussian>> {
        let b = z_mix.dims()[0];
        let mut h = self.init.forward(z_mix)?.tanh()?;
        let mut prev = Tensor::zeros((b, self.latent), z_mix.dtype(), &Device::Cpu)?;
        let mut out = Vec::with_capacity(n_voices);
        for k in 0..n_voices {
            let mut x = prev.clone();
            if let Some(hints) = hints {
                x = (x + self.hint.forward(&hints[k])?)?;
            }
            h = self.cell.step(&x, &h)?;
            let g = LatentGaussian::new(self.mean.forward(&h)?, self.log_var.forward(&h)?)?;
            prev = match teacher {
                Some(t) => t[k].clone(),
                None => g.mean.clone(),
            };
            out.push(g);
        }
        Ok(out)
    }
}

/// (B, 3) hint tensor for voice `k` from per-row hint lists.
pub fn hint_tensor(rows: &[Vec<Option<Note>>], k: usize, dtype: DType) -> Result<Tensor> {
    let feats: Vec<f64> = rows.iter().flat_map(|r| hint_features(&r[k..k + 1])).collect();
    Ok(Tensor::from_vec(feats, (rows.len(), HINT_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

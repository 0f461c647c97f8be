//! Function query-net: two small VAEs over the pitch and time functions.
//!
//! Each encoder branch is conv -> ReLU -> max-pool(4, 4) -> affine heads. The
//! few output channels and the pooling keep the latent a coarse summary of
//! the function rather than an exact copy of its values.

use candle_core::{DType, Device, Tensor};

use super::latent::LatentGaussian;
use super::layers::{max_pool_last, sigmoid, Conv1d, Linear};
use super::params::Init;
use crate::error::Result;
use crate::features::TrackFunction;
use crate::score::{PITCHES, STEPS};

pub const PITCH_KERNEL: usize = 12;
pub const TIME_KERNEL: usize = 4;
pub const POOL: usize = 4;

#[derive(Debug, Clone)]
struct Branch {
    conv: Conv1d,
    mean: Linear,
    log_var: Linear,
}

impl Branch {
    fn new(init: &mut Init, name: &str, len: usize, kernel: usize, channels: usize, latent: usize) -> Result<Self> {
        let mut i = init.sub(name);
        let conv = Conv1d::new(&mut i, "conv", 1, channels, kernel)?;
        let flat = channels * (conv.out_len(len) / POOL);
        Ok(Branch {
            conv,
            mean: Linear::new(&mut i, "mean", flat, latent)?,
            log_var: Linear::log_var_head(&mut i, "log_var", flat, latent)?,
        })
    }

    fn encode(&self, x: &Tensor) -> Result<LatentGaussian> {
        let b = x.dims()[0];
        let h = self.conv.forward(&x.unsqueeze(1)?)?.relu()?;
        let h = max_pool_last(&h, POOL)?.reshape((b, ()))?;
        LatentGaussian::new(self.mean.forward(&h)?, self.log_var.forward(&h)?)
    }
}

#[derive(Debug, Clone)]
pub struct FunctionEncoder {
    pitch: Branch,
    time: Branch,
}

impl FunctionEncoder {
    pub fn new(init: &mut Init, channels: usize, latent: usize) -> Result<Self> {
        Ok(FunctionEncoder {
            pitch: Branch::new(init, "pitch", PITCHES, PITCH_KERNEL, channels, latent)?,
            time: Branch::new(init, "time", STEPS, TIME_KERNEL, channels, latent)?,
        })
    }

    /// `pitch_fn` is (batch, 128), `time_fn` is (batch, 32).
    pub fn encode(&self, pitch_fn: &Tensor, time_fn: &Tensor) -> Result<(LatentGaussian, LatentGaussian)> {
        Ok((self.pitch.encode(pitch_fn)?, self.time.encode(time_fn)?))
    }
}

#[derive(Debug, Clone)]
pub struct FunctionDecoder {
    pitch_hidden: Linear,
    pitch_out: Linear,
    time_hidden: Linear,
    time_out: Linear,
}

impl FunctionDecoder {
    pub fn new(init: &mut Init, latent: usize, hidden: usize) -> Result<Self> {
        Ok(FunctionDecoder {
            pitch_hidden: Linear::new(init, "pitch_hidden", latent, hidden)?,
            pitch_out: Linear::new(init, "pitch_out", hidden, PITCHES)?,
            time_hidden: Linear::new(init, "time_hidden", latent, hidden)?,
            time_out: Linear::new(init, "time_out", hidden, STEPS)?,
        })
    }

    /// Returns (pitch function (batch, 128), time function (batch, 32)).
    pub fn decode(&self, z_pitch: &Tensor, z_time: &Tensor) -> Result<(Tensor, Tensor)> {
        let p = self.pitch_out.forward(&self.pitch_hidden.forward(z_pitch)?.relu()?)?;
        let t = self.time_out.forward(&self.time_hidden.forward(z_time)?.relu()?)?;
        Ok((sigmoid(&p)?, sigmoid(&t)?))
    }
}

/// Stacks functions into (batch, 128) and (batch, 32) tensors.
pub fn function_tensors(fns: &[&TrackFunction], dtype: DType) -> Result<(Tensor, Tensor)> {
    let b = fns.len();
    let p: Vec<f32> = fns.iter().flat_map(|f| f.pitch.iter().copied()).collect();
    let t: Vec<f32> = fns.iter().flat_map(|f| f.time.iter().copied()).collect();
    Ok((
        Tensor::from_vec(p, (b, PITCHES), &Device::Cpu)?.to_dtype(dtype)?,
        Tensor::from_vec(t, (b, STEPS), &Device::Cpu)?.to_dtype(dtype)?,
    ))
}

pub fn functions_from_tensors(pitch: &Tensor, time: &Tensor) -> Result<Vec<TrackFunction>> {
    let p: Vec<Vec<f32>> = pitch.to_dtype(DType::F32)?.to_vec2()?;
    let t: Vec<Vec<f32>> = time.to_dtype(DType::F32)?.to_vec2()?;
    Ok(p.into_iter()
        .zip(t)
        .map(|(pitch, time)| TrackFunction { pitch, time })
        .collect())
}

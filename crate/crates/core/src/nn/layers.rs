//! Small layer library on top of candle tensors. Every layer is initialised
//! from an explicit RNG so a seed fully determines the model.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::Init;
use crate::error::Result;

/// Standard-normal noise drawn from `rng`.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

/// Inverted dropout with a mask drawn from `rng`. Identity when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize) -> Result<Self> {
        let mut i = init.sub(name);
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Linear {
            weight: i.uniform("weight", &[output, input], bound)?,
            bias: i.uniform("bias", &[output], bound)?,
        })
    }

    /// Head producing a posterior log-variance; its bias starts at
    /// `init.log_var_bias`.
    pub fn log_var_head(init: &mut Init, name: &str, input: usize, output: usize) -> Result<Self> {
        let value = init.log_var_bias;
        let mut i = init.sub(name);
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Linear {
            weight: i.uniform("weight", &[output, input], bound)?,
            bias: i.constant("bias", &[output], value)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, input))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(init: &mut Init, name: &str, count: usize, dim: usize, std: f64) -> Result<Self> {
        Ok(Embedding {
            table: init.sub(name).normal("weight", &[count, dim], std)?,
        })
    }

    pub fn count(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.dims()[1]
    }

    /// Looks up `ids` (any shape), appending the embedding dimension.
    pub fn lookup(&self, ids: &[u32], shape: &[usize]) -> Result<Tensor> {
        let idx = Tensor::from_slice(ids, ids.len(), self.table.device())?;
        let mut dims = shape.to_vec();
        dims.push(self.dim());
        Ok(self.table.index_select(&idx, 0)?.reshape(dims)?)
    }
}

/// Single GRU step with PyTorch gate layout (reset, update, new).
#[derive(Debug, Clone)]
pub struct GruCell {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl GruCell {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let mut i = init.sub(name);
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(GruCell {
            w_ih: i.uniform("w_ih", &[3 * hidden, input], bound)?,
            w_hh: i.uniform("w_hh", &[3 * hidden, hidden], bound)?,
            b_ih: i.uniform("b_ih", &[3 * hidden], bound)?,
            b_hh: i.uniform("b_hh", &[3 * hidden], bound)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let gi = x.matmul(&self.w_ih.t()?)?.broadcast_add(&self.b_ih)?;
        let gh = h.matmul(&self.w_hh.t()?)?.broadcast_add(&self.b_hh)?;
        let hs = self.hidden;
        let r = sigmoid(&(gi.narrow(1, 0, hs)? + gh.narrow(1, 0, hs)?)?)?;
        let z = sigmoid(&(gi.narrow(1, hs, hs)? + gh.narrow(1, hs, hs)?)?)?;
        let n = (gi.narrow(1, 2 * hs, hs)? + (r * gh.narrow(1, 2 * hs, hs)?)?)?.tanh()?;
        Ok((&n + (z * (h - &n)?)?)?)
    }

    /// Runs over `xs` of shape (batch, len, input). `mask` (batch, len) holds
    /// 1 for real positions; padded positions leave the state untouched.
    /// Returns the final state.
    pub fn run(&self, xs: &Tensor, mask: Option<&Tensor>, reverse: bool) -> Result<Tensor> {
        let (b, len, _) = xs.dims3()?;
        let mut h = Tensor::zeros((b, self.hidden), xs.dtype(), xs.device())?;
        for k in 0..len {
            let pos = if reverse { len - 1 - k } else { k };
            let x = xs.narrow(1, pos, 1)?.squeeze(1)?;
            let next = self.step(&x, &h)?;
            h = match mask {
                Some(m) => {
                    let m = m.narrow(1, pos, 1)?;
                    (&h + m.broadcast_mul(&(next - &h)?)?)?
                }
                None => next,
            };
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    shift: Tensor,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        let mut i = init.sub(name);
        Ok(LayerNorm {
            gain: i.constant("weight", &[dim], 1.0)?,
            shift: i.constant("bias", &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.shift)?)
    }
}

/// 1-D convolution without padding, stride 1.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
}

impl Conv1d {
    pub fn new(init: &mut Init, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        let mut i = init.sub(name);
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        Ok(Conv1d {
            weight: i.uniform("weight", &[out_ch, in_ch, kernel], bound)?,
            bias: i.uniform("bias", &[out_ch], bound)?,
        })
    }

    pub fn out_len(&self, len: usize) -> usize {
        len + 1 - self.weight.dims()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    /// (batch, in_ch, len) -> (batch, out_ch, len - kernel + 1), computed
    /// as a matrix product over unfolded windows.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, ci, len) = x.dims3()?;
        let (co, _, k) = self.weight.dims3()?;
        let out = self.out_len(len);
        let idx: Vec<u32> = (0..out).flat_map(|t| (t..t + k).map(|i| i as u32)).collect();
        let idx = Tensor::from_vec(idx, out * k, x.device())?;
        let windows = x
            .contiguous()?
            .index_select(&idx, 2)?
            .reshape((b, ci, out, k))?
            .permute((0, 2, 1, 3))?
            .reshape((b * out, ci * k))?;
        let w = self.weight.reshape((co, ci * k))?;
        let y = windows.matmul(&w.t()?)?.broadcast_add(&self.bias)?;
        Ok(y.reshape((b, out, co))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Non-overlapping max pooling over the last axis; a ragged tail is dropped.
/// The gradient goes to the first maximal entry of each window only.
pub fn max_pool_last(x: &Tensor, kernel: usize) -> Result<Tensor> {
    let (b, c, len) = x.dims3()?;
    let out = len / kernel;
    let windows = x.narrow(2, 0, out * kernel)?.reshape((b, c, out, kernel))?;
    let idx = windows.argmax_keepdim(D::Minus1)?;
    Ok(windows.contiguous()?.gather(&idx, 3)?.squeeze(3)?)
}

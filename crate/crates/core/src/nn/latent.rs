use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::randn;
use crate::error::Result;

/// Bound on log-variances so `exp` stays finite in f32.
pub const LOG_VAR_LIMIT: f64 = 12.0;

/// A batch of diagonal Gaussians, one per row.
#[derive(Debug, Clone)]
pub struct LatentGaussian {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl LatentGaussian {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        let log_var = log_var.clamp(-LOG_VAR_LIMIT, LOG_VAR_LIMIT)?;
        Ok(LatentGaussian { mean, log_var })
    }

    pub fn rows(&self) -> usize {
        self.mean.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.mean.dims()[1]
    }

    pub fn dtype(&self) -> DType {
        self.mean.dtype()
    }

    /// `mean + exp(log_var / 2) * eps`.
    pub fn sample_with(&self, eps: &Tensor) -> Result<Tensor> {
        Ok((&self.mean + ((&self.log_var * 0.5)?.exp()? * eps)?)?)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let eps = randn(rng, self.mean.dims(), self.dtype())?;
        self.sample_with(&eps)
    }

    /// Posterior mean, or a reparameterised sample when `sample` is set.
    pub fn draw(&self, sample: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if sample {
            self.sample(rng)
        } else {
            Ok(self.mean.clone())
        }
    }

    /// Closed-form KL to the standard normal, summed over dimensions: one
    /// value per row.
    pub fn kl(&self) -> Result<Tensor> {
        let terms = ((self.mean.sqr()? + self.log_var.exp()?)? - &self.log_var)?;
        Ok(((terms - 1.0)? * 0.5)?.sum(1)?)
    }

    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Self> {
        Ok(LatentGaussian {
            mean: self.mean.narrow(0, start, len)?,
            log_var: self.log_var.narrow(0, start, len)?,
        })
    }

    pub fn is_finite(&self) -> Result<bool> {
        let check = |t: &Tensor| -> Result<bool> {
            let v: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            Ok(v.iter().all(|x| x.is_finite()))
        };
        Ok(check(&self.mean)? && check(&self.log_var)?)
    }

    /// Host copy of row `i` as `(mean, log_var)`.
    pub fn row(&self, i: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let get = |t: &Tensor| -> Result<Vec<f32>> {
            Ok(t.get(i)?.to_dtype(DType::F32)?.to_vec1()?)
        };
        Ok((get(&self.mean)?, get(&self.log_var)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;

    #[test]
    fn kl_closed_form_values() {
        let g = LatentGaussian::new(
            Tensor::new(&[[0.0f64], [1.0]], &Device::Cpu).unwrap(),
            Tensor::new(&[[0.0f64], [0.0]], &Device::Cpu).unwrap(),
        )
        .unwrap();
        let kl: Vec<f64> = g.kl().unwrap().to_vec1().unwrap();
        assert_eq!(kl, vec![0.0, 0.5]);
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = LatentGaussian::new(
            randn(&mut rng, &[2, 5], DType::F64).unwrap(),
            randn(&mut rng, &[2, 5], DType::F64).unwrap(),
        )
        .unwrap();
        let eps = Tensor::zeros((2, 5), DType::F64, &Device::Cpu).unwrap();
        let s = g.sample_with(&eps).unwrap();
        let d: f64 = (s - &g.mean).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert_eq!(d, 0.0);
    }
}

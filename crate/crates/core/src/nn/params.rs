use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Named trainable tensors. Names are dotted paths whose first component is
/// the parameter group (`enc_mix`, `enc_fn`, `sep`, `dec_fn`, `aux`,
/// `dec_track`, `vs_infer`).
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn group(&self, group: &str) -> Vec<(String, Var)> {
        let prefix = format!("{group}.");
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(&prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self
            .vars
            .keys()
            .filter_map(|k| k.split('.').next().map(str::to_string))
            .collect();
        g.dedup();
        g
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    /// Overwrites a parameter's values, keeping its identity in the graph.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{name}: shape {:?} does not match {:?}",
                value.dims(),
                var.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }
}

/// Deterministic parameter initialisation scoped to a name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    /// Initial bias of posterior log-variance heads.
    pub log_var_bias: f64,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, prefix: &str) -> Self {
        Init {
            store,
            rng,
            prefix: prefix.to_string(),
            log_var_bias: 0.0,
        }
    }

    pub fn sub(&mut self, name: &str) -> Init<'_> {
        Init {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}.{name}", self.prefix),
            log_var_bias: self.log_var_bias,
        }
    }

    fn path(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.store.insert(self.path(name), data, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.store.insert(self.path(name), data, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.store.insert(self.path(name), vec![value; n], shape)
    }
}

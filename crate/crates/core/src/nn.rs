//! Minimal layer toolkit over candle tensors: a named parameter store with
//! seeded initialization, functional layers, and an Adam optimizer whose
//! state can be persisted.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Raw named array, the unit of persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal { mean: f64, std: f64 },
    Constant(f64),
}

/// Trainable parameters plus non-trainable buffers, keyed by name.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl Clone for ParamStore {
    /// Deep copy: the clone owns fresh storage.
    fn clone(&self) -> Self {
        let copy = |m: &BTreeMap<String, Var>| {
            m.iter()
                .map(|(k, v)| {
                    let t = v.as_tensor().copy().expect("tensor copy");
                    (k.clone(), Var::from_tensor(&t).expect("var from tensor"))
                })
                .collect()
        };
        Self {
            dtype: self.dtype,
            device: self.device.clone(),
            params: copy(&self.params),
            buffers: copy(&self.buffers),
        }
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn make(&self, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Normal { mean, std } => {
                let dist = Normal::new(mean, std).map_err(|e| Error::validation(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Constant(c) => vec![c; n],
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let var = self.make(shape, init, rng)?;
        self.params.insert(name.to_string(), var);
        Ok(())
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        let t = Tensor::full(value, shape, &self.device)?.to_dtype(self.dtype)?;
        self.buffers.insert(name.to_string(), Var::from_tensor(&t)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(Var::as_tensor)
            .ok_or_else(|| Error::validation(format!("unknown parameter `{name}`")))
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&Var> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::validation(format!("unknown buffer `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Parameters followed by buffers (prefixed `buffer:`), in name order.
    pub fn export(&self) -> Result<Vec<NamedArray>> {
        let mut out = Vec::with_capacity(self.params.len() + self.buffers.len());
        for (k, v) in &self.params {
            out.push(NamedArray::from_tensor(k, v.as_tensor())?);
        }
        for (k, v) in &self.buffers {
            out.push(NamedArray::from_tensor(
                &format!("buffer:{k}"),
                v.as_tensor(),
            )?);
        }
        Ok(out)
    }

    /// Overwrites every parameter and buffer; names and shapes must match exactly.
    pub fn import(&self, arrays: &[NamedArray]) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        if arrays.len() != expected {
            return Err(Error::Corruption(format!(
                "checkpoint holds {} arrays, model expects {expected}",
                arrays.len()
            )));
        }
        for a in arrays {
            let var = match a.name.strip_prefix("buffer:") {
                Some(b) => self.buffers.get(b),
                None => self.params.get(&a.name),
            }
            .ok_or_else(|| Error::Corruption(format!("unexpected array `{}`", a.name)))?;
            if var.dims() != a.shape.as_slice() {
                return Err(Error::Corruption(format!(
                    "array `{}` has shape {:?}, model expects {:?}",
                    a.name,
                    a.shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Perturbs one scalar entry in place; used by finite-difference probes.
    pub fn nudge(&self, name: &str, flat_index: usize, delta: f64) -> Result<()> {
        let var = self
            .params
            .get(name)
            .ok_or_else(|| Error::validation(format!("unknown parameter `{name}`")))?;
        let shape = var.dims().to_vec();
        let mut data: Vec<f64> = var
            .as_tensor()
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        data[flat_index] += delta;
        let t = Tensor::from_vec(data, shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Forward-pass mode. Training mode carries the generator that draws dropout
/// masks, so stochastic passes stay reproducible.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_grouped(x, w, b, stride, pad, 1)
}

pub fn conv2d_grouped(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor> {
    let y = x.conv2d(w, pad, stride, 1, groups)?;
    match b {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
        None => Ok(y),
    }
}

/// Transposed convolution; `w` is `(c_in, c_out, k, k)`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let y = x.conv_transpose2d(w, pad, 0, stride, 1)?;
    match b {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
        None => Ok(y),
    }
}

pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(&w.t()?)?.broadcast_add(b)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn hard_sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x + 3.0)?.clamp(0.0, 6.0)? / 6.0)?)
}

pub fn hard_swish(x: &Tensor) -> Result<Tensor> {
    Ok((x * hard_sigmoid(x)?)?)
}

pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(x)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.neg()?.exp()?.affine(1.0, 1.0)?.recip()?)
}

/// Per-sample, per-channel normalization over the spatial dimensions with an
/// affine (gamma, beta) transform.
pub fn instance_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    let normed = normed.reshape((n, c, h, w))?;
    Ok(normed
        .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
}

/// Batch normalization over `(N, H, W)`. Training mode uses batch statistics
/// and updates the running buffers; evaluation uses the buffers.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Var,
    running_var: &Var,
    train: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (mean, var) = if train {
        let per_channel = x.transpose(0, 1)?.reshape((c, n * h * w))?;
        let mean = per_channel.mean_keepdim(D::Minus1)?;
        let var = per_channel
            .broadcast_sub(&mean)?
            .sqr()?
            .mean_keepdim(D::Minus1)?;
        let count = (n * h * w) as f64;
        let unbiased = if count > 1.0 {
            (var.detach() * (count / (count - 1.0)))?
        } else {
            var.detach()
        };
        let new_mean = ((running_mean.as_tensor() * (1.0 - momentum))?
            + (mean.detach().flatten_all()? * momentum)?)?;
        let new_var = ((running_var.as_tensor() * (1.0 - momentum))?
            + (unbiased.flatten_all()? * momentum)?)?;
        running_mean.set(&new_mean)?;
        running_var.set(&new_var)?;
        (mean.reshape((1, c, 1, 1))?, var.reshape((1, c, 1, 1))?)
    } else {
        (
            running_mean.as_tensor().reshape((1, c, 1, 1))?,
            running_var.as_tensor().reshape((1, c, 1, 1))?,
        )
    };
    let normed = x
        .broadcast_sub(&mean)?
        .broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed
        .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
}

/// Inverted dropout with a mask drawn from the mode's generator; identity in
/// evaluation mode.
pub fn dropout(x: &Tensor, rate: f64, mode: &mut Mode<'_>) -> Result<Tensor> {
    let rng = match mode {
        Mode::Train(rng) if rate > 0.0 => rng,
        _ => return Ok(x.clone()),
    };
    let keep = 1.0 - rate;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| {
            if rng.random::<f64>() < keep {
                (1.0 / keep) as f32
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// 3×3 stride-2 max pooling with one pixel of padding, built from shifted
/// views so it stays differentiable.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let fill = |rows: usize, cols: usize| -> Result<Tensor> {
        Ok(Tensor::full(-1e30f64, (n, c, rows, cols), x.device())?.to_dtype(x.dtype())?)
    };
    let padded = Tensor::cat(&[&fill(1, w)?, x, &fill(2, w)?], 2)?;
    let padded = Tensor::cat(&[&fill(h + 3, 1)?, &padded, &fill(h + 3, 2)?], 3)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let win = padded.narrow(2, dy, 2 * oh)?.narrow(3, dx, 2 * ow)?;
            let sub = win
                .reshape((n, c, oh, 2, ow, 2))?
                .narrow(3, 0, 1)?
                .narrow(5, 0, 1)?
                .reshape((n, c, oh, ow))?;
            out = Some(match out {
                None => sub,
                Some(o) => o.maximum(&sub)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Adam with persisted first/second moments.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64, betas: [f64; 2]) -> Self {
        Self {
            lr,
            beta1: betas[0],
            beta2: betas[1],
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter in `params` that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.vars() {
            // gradients can carry op history back into the forward graph
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else {
                continue;
            };
            let (m, v) = match self.moments.remove(name) {
                Some(mv) => mv,
                None => (var.zeros_like()?, var.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }

    /// Moments as named arrays `m.<param>` and `v.<param>`.
    pub fn export(&self) -> Result<Vec<NamedArray>> {
        let mut out = Vec::with_capacity(self.moments.len() * 2);
        for (name, (m, v)) in &self.moments {
            out.push(NamedArray::from_tensor(&format!("m.{name}"), m)?);
            out.push(NamedArray::from_tensor(&format!("v.{name}"), v)?);
        }
        Ok(out)
    }

    pub fn import(&mut self, step: u64, arrays: &[NamedArray], params: &ParamStore) -> Result<()> {
        let mut m_map = BTreeMap::new();
        let mut v_map = BTreeMap::new();
        for a in arrays {
            let t = Tensor::from_vec(a.data.clone(), a.shape.as_slice(), params.device())?
                .to_dtype(params.dtype())?;
            if let Some(name) = a.name.strip_prefix("m.") {
                m_map.insert(name.to_string(), t);
            } else if let Some(name) = a.name.strip_prefix("v.") {
                v_map.insert(name.to_string(), t);
            } else {
                return Err(Error::Corruption(format!(
                    "unexpected optimizer array `{}`",
                    a.name
                )));
            }
        }
        self.moments.clear();
        for (name, m) in m_map {
            let v = v_map
                .remove(&name)
                .ok_or_else(|| Error::Corruption(format!("missing second moment for `{name}`")))?;
            let var = params.var(&name).ok_or_else(|| {
                Error::Corruption(format!("moment for unknown parameter `{name}`"))
            })?;
            if var.dims() != m.dims() || var.dims() != v.dims() {
                return Err(Error::Corruption(format!(
                    "moment shape mismatch for `{name}`"
                )));
            }
            self.moments.insert(name, (m, v));
        }
        self.step = step;
        Ok(())
    }
}

/// Converts a scalar tensor to `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

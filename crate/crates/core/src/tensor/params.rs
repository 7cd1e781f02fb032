use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDML0001";

/// One learnable tensor with its gradient slot and Adam moments.
#[derive(Clone, Debug)]
pub struct Param<S: Scalar = f32> {
    name: String,
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    first_moment: Vec<S>,
    second_moment: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }
}

/// Named, ordered parameter collection sharing one optimizer step count.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S: Scalar = f32> {
    params: Vec<Param<S>>,
    step: u64,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Contract(format!("parameter `{name}` registered twice")));
        }
        let n = value.numel();
        self.params.push(Param {
            name,
            value,
            grad: None,
            first_moment: vec![S::zero(); n],
            second_moment: vec![S::zero(); n],
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub(crate) fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&[S]> {
        self.index_of(name).and_then(|i| self.params[i].grad.as_deref())
    }

    /// Replaces a value in place; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if self.params[i].value.shape() != value.shape() {
            return Err(Error::Dimension {
                axis: "parameter",
                detail: format!(
                    "`{name}` has shape {:?}, replacement has {:?}",
                    self.params[i].value.shape(),
                    value.shape()
                ),
            });
        }
        self.params[i].value = value;
        Ok(())
    }

    /// Gives every parameter a gradient slot, zero-filled where absent.
    pub fn ensure_grads(&mut self) {
        for p in &mut self.params {
            if p.grad.is_none() {
                p.grad = Some(vec![S::zero(); p.value.numel()]);
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, index: usize, grad: &[S]) {
        let p = &mut self.params[index];
        let slot = p.grad.get_or_insert_with(|| vec![S::zero(); grad.len()]);
        for (g, d) in slot.iter_mut().zip(grad) {
            *g += *d;
        }
    }

    pub fn scale_grads(&mut self, factor: S) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Bias-corrected Adam update over every parameter, then clears gradients.
    pub fn adam_step(&mut self, config: &AdamConfig) -> Result<()> {
        config.validate()?;
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Contract(format!(
                "parameter `{}` has no gradient; run backward first",
                p.name
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = config.beta1;
        let b2 = config.beta2;
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        for p in &mut self.params {
            let grad = p.grad.take().expect("checked above");
            if config.learning_rate == 0.0 {
                continue;
            }
            let shape = p.value.shape().to_vec();
            let mut data = p.value.data().to_vec();
            for (i, g) in grad.iter().enumerate() {
                let g = g.to_f64_lossy();
                let m = b1 * p.first_moment[i].to_f64_lossy() + (1.0 - b1) * g;
                let v = b2 * p.second_moment[i].to_f64_lossy() + (1.0 - b2) * g * g;
                p.first_moment[i] = S::from_f64_lossy(m);
                p.second_moment[i] = S::from_f64_lossy(v);
                let m_hat = m / correction1;
                let v_hat = v / correction2;
                let update = config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                data[i] = S::from_f64_lossy(data[i].to_f64_lossy() - update);
            }
            p.value = Tensor::from_parts(shape, data);
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast()).expect("names are unique");
        }
        out
    }

    /// Copies values by name from `other`; every name and shape must match.
    pub fn load_values(&mut self, other: &ParamSet<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &other.params {
            self.set(&p.name, p.value.clone())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted: it freezes the parameters.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta1 < beta2 < 1, got {} / {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Writes parameter values as float32 in the `PDML0001` layout.
pub fn write_checkpoint<S: Scalar>(params: &ParamSet<S>, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for p in &params.params {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        let shape = p.value.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &e in shape {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 4);
        for v in p.value.data() {
            let v = v.to_f32().expect("finite scalar fits f32");
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a `PDML0001` stream; `origin` is used only in error messages.
pub fn read_checkpoint(mut input: impl Read, origin: &Path) -> Result<ParamSet<f32>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "missing PDML0001 magic"));
    }
    let mut reader = ByteReader {
        rest: &bytes[8..],
        origin,
    };
    let mut params = ParamSet::new();
    while !reader.rest.is_empty() {
        let name_len = reader.u32()? as usize;
        let name = std::str::from_utf8(reader.take(name_len)?)
            .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?
            .to_string();
        let rank = reader.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(reader.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = reader
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data)
            .map_err(|e| Error::format(origin, format!("parameter `{name}`: {e}")))?;
        params
            .insert(name, value)
            .map_err(|e| Error::format(origin, e.to_string()))?;
    }
    Ok(params)
}

struct ByteReader<'a> {
    rest: &'a [u8],
    origin: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let (head, rest) = self.rest.split_at(n);
        self.rest = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{AutodiffError, Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Parameter {
    name: String,
    value: Tensor,
    trainable: bool,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named tensors with Adam moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    steps: u64,
    adam: AdamConfig,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GEMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_adam(adam: AdamConfig) -> Self {
        Self {
            adam,
            ..Self::default()
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
    ) -> Result<ParamId, AutodiffError> {
        self.insert(name.into(), value, true)
    }

    pub fn add_frozen(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
    ) -> Result<ParamId, AutodiffError> {
        self.insert(name.into(), value, false)
    }

    fn insert(
        &mut self,
        name: String,
        value: Tensor,
        trainable: bool,
    ) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateName(name));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            trainable,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::Shape {
                op: "set_value",
                detail: format!(
                    "{} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                ),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Adds gradients from a backward pass into the per-parameter buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for id in grads.param_ids() {
            if let Some(g) = grads.param(id) {
                let p = &mut self.params[id.0];
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Applies one Adam update to every trainable parameter and zeroes gradients.
    ///
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, lr: f64) -> Result<(), AutodiffError> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.all_finite()) {
            return Err(AutodiffError::NanGradient(p.name.clone()));
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.steps as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (m, g) in m.iter_mut().zip(g) {
                *m = beta1 * *m + (1.0 - beta1) * g;
            }
            let v = p.v.data_mut();
            for (v, g) in v.iter_mut().zip(g) {
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.zero_grad();
        Ok(())
    }

    /// Writes the checkpoint format: magic, version, count, then per tensor
    /// the name, trainable flag, shape and little-endian f64 values.
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), AutodiffError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[u8::from(p.trainable)])?;
            w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(&mut r)?;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| AutodiffError::Checkpoint("name is not UTF-8".into()))?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            set.insert(name, Tensor::new(shape, values)?, flag[0] != 0)?;
        }
        Ok(set)
    }

    /// True when both sets hold the same names, shapes and bit-identical values.
    pub fn same_weights(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

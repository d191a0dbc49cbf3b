//! Trainable parameters and the Adam update.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient and Adam moments.
///
/// Gradient and moment buffers are allocated on first use so that full-size
/// networks can be built and evaluated without quadrupling their footprint.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    first_moment: Option<Tensor>,
    second_moment: Option<Tensor>,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
            first_moment: None,
            second_moment: None,
            step: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        self.value.expect_same_shape(&value)?;
        self.value = value;
        Ok(())
    }

    /// Current gradient; zeros when nothing has been accumulated.
    pub fn gradient(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.shape().to_vec()))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn accumulate_grad(&mut self, grad: &Tensor) -> Result<()> {
        match &mut self.grad {
            Some(g) => g.add_assign(grad),
            None => {
                self.value.expect_same_shape(grad)?;
                self.grad = Some(grad.clone());
                Ok(())
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered set of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Parameter) -> Result<usize> {
        if self.index.contains_key(param.name()) {
            return Err(Error::Build(format!("duplicate parameter name {:?}", param.name())));
        }
        let id = self.params.len();
        self.index.insert(param.name().to_string(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Parameter {
        &self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Adds every gradient in `grads` whose name belongs to this store.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.params() {
            if let Some(&i) = self.index.get(name) {
                self.params[i].accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Hash over all names and values; changes iff any parameter changes.
    pub fn content_hash(&self) -> u64 {
        let mut h = crate::tensor::Fnv::new();
        for p in &self.params {
            h.write(p.name.as_bytes());
            h.write(&p.value.content_hash().to_le_bytes());
        }
        h.finish()
    }

    /// One bias-corrected Adam step over every parameter, then clears
    /// gradients. A zero learning rate leaves values and moments untouched.
    pub fn adam_step(&mut self, lr: f32, cfg: AdamConfig) {
        if lr == 0.0 {
            self.zero_grad();
            return;
        }
        for p in &mut self.params {
            let Some(grad) = p.grad.take() else {
                // No gradient reached this parameter: treat as zero gradient.
                let zeros = Tensor::zeros(p.value.shape().to_vec());
                adam_update(p, &zeros, lr, cfg);
                continue;
            };
            adam_update(p, &grad, lr, cfg);
        }
    }
}

fn adam_update(p: &mut Parameter, grad: &Tensor, lr: f32, cfg: AdamConfig) {
    let shape = p.value.shape().to_vec();
    let m = p.first_moment.get_or_insert_with(|| Tensor::zeros(shape.clone()));
    let v = p.second_moment.get_or_insert_with(|| Tensor::zeros(shape));
    p.step += 1;
    let t = p.step as i32;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let values = p.value.data_mut();
    let m = m.data_mut();
    let v = v.data_mut();
    for (i, &g) in grad.data().iter().enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        values[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
    }
}

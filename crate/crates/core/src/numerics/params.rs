//! Named trainable tensors with gradient and optimizer slots.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }
}

/// All trainable tensors of a model, addressed by dotted names
/// (e.g. `enc.embed`, `unary.entity.w1`). Insertion order is preserved so
/// a fixed seed yields a fixed initialization and update order.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    order: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Graph(format!("parameter `{}` already defined", name)));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.order.push(name.to_string());
        self.params.push(Param::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.lookup(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(&mut self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.lookup(name).map(|p| &p.grad)
    }

    fn lookup(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn add_grad(&mut self, name: &str, grad: &Tensor, scale: f64) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let slot = &mut self.params[i].grad;
        if slot.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match parameter `{}` shape {:?}",
                grad.shape(),
                name,
                slot.shape()
            )));
        }
        for (s, g) in slot.data_mut().iter_mut().zip(grad.data()) {
            *s += g * scale;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum();
        sq.sqrt()
    }

    /// Global-norm gradient clipping. Returns the norm before clipping.
    pub fn clip_grads(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                for g in p.grad.data_mut() {
                    *g *= scale;
                }
            }
        }
        norm
    }

    /// One AdamW step at timestep `t` (1-based). `group` maps a parameter
    /// name to its (learning rate, decoupled weight decay).
    pub fn adamw_step(&mut self, t: usize, group: impl Fn(&str) -> (f64, f64)) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for (name, p) in self.order.iter().zip(self.params.iter_mut()) {
            let (lr, wd) = group(name);
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let m = BETA1 * p.adam_m.data()[i] + (1.0 - BETA1) * g;
                let v = BETA2 * p.adam_v.data()[i] + (1.0 - BETA2) * g * g;
                p.adam_m.data_mut()[i] = m;
                p.adam_v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let x = p.value.data()[i];
                p.value.data_mut()[i] = x - lr * (mhat / (vhat.sqrt() + EPS) + wd * x);
            }
        }
    }

    pub fn export(&self) -> Vec<(String, Tensor)> {
        self.order
            .iter()
            .zip(&self.params)
            .map(|(n, p)| (n.clone(), p.value.clone()))
            .collect()
    }

    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in values {
            match self.index.get(name) {
                Some(&i) => {
                    if self.params[i].value.shape() != tensor.shape() {
                        return Err(Error::Checkpoint(format!(
                            "shape mismatch on `{}`: expected {:?}, found {:?}",
                            name,
                            self.params[i].value.shape(),
                            tensor.shape()
                        )));
                    }
                    self.params[i] = Param::new(tensor.clone());
                }
                None => {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint carries unknown parameter `{}`",
                        name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Glorot-style uniform initialization for a weight matrix.
pub fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent init shape")
}

/// Small-scale uniform initialization for embedding tables.
pub fn init_embedding(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent init shape")
}

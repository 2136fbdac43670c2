//! Named parameter storage living across optimization steps.
//!
//! Parameters are plain tensors owned by a `ParamSet`; each forward pass binds
//! them onto a fresh `Tape` as differentiable leaves and reads gradients back
//! after `backward`.

use crate::error::{CoreError, Result};
use crate::rng::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Insert every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { vars }
    }

    /// Zero every tensor in place (used by residual-identity checks).
    pub fn zero_all(&mut self) {
        for t in &mut self.values {
            t.data_mut().fill(0.0);
        }
    }
}

/// Per-pass handles to the bound parameter leaves, parallel to the `ParamSet`.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in `ParamSet` order; zero tensors where backward never reached.
    pub fn collect_grads(&self, tape: &Tape, params: &ParamSet) -> Vec<Tensor> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                tape.grad_tensor(v)
                    .unwrap_or_else(|| Tensor::zeros(params.values[i].shape().to_vec()))
            })
            .collect()
    }
}

/// Xavier/Glorot uniform limit for a fan-in/fan-out pair.
fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weight matrix [fan_in, fan_out] with Xavier-uniform entries.
pub fn xavier_matrix(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = xavier_limit(fan_in, fan_out);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.range(-a, a)).collect();
    Tensor::from_vec(vec![fan_in, fan_out], data).expect("matching length")
}

/// A dense layer y = x W + b with W: [input, output], b: [1, output].
#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn alloc(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut Rng,
    ) -> LinearParams {
        let weight = params.alloc(format!("{prefix}.weight"), xavier_matrix(input, output, rng));
        let bias = params.alloc(format!("{prefix}.bias"), Tensor::zeros(vec![1, output]));
        LinearParams { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let wx = tape.matmul(x, bound.var(self.weight))?;
        tape.add(wx, bound.var(self.bias))
    }
}

/// Two-layer perceptron input -> hidden -> output with relu in between.
#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub first: LinearParams,
    pub second: LinearParams,
}

impl MlpParams {
    pub fn alloc(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> MlpParams {
        MlpParams {
            first: LinearParams::alloc(params, &format!("{prefix}.fc1"), input, hidden, rng),
            second: LinearParams::alloc(params, &format!("{prefix}.fc2"), hidden, output, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let h = self.first.apply(tape, bound, x)?;
        let h = tape.relu(h);
        self.second.apply(tape, bound, h)
    }
}

/// Shape-checked in-place parameter update helper shared by optimizers.
pub(crate) fn check_grad_shapes(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            op: "optimizer step",
            detail: format!("{} grads for {} params", grads.len(), params.len()),
        });
    }
    for (id, grad) in params.ids().zip(grads) {
        if grad.shape() != params.value(id).shape() {
            return Err(CoreError::ShapeMismatch {
                op: "optimizer step",
                detail: format!(
                    "param {} has shape {:?}, grad {:?}",
                    params.name(id),
                    params.value(id).shape(),
                    grad.shape()
                ),
            });
        }
    }
    Ok(())
}

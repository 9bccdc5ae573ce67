//! Reverse-mode differentiation over a linear tape of primitive operations.
//!
//! A [`Tape`] records every primitive executed through it together with its
//! output value. [`Tape::backward`] walks the record in exact reverse order and
//! returns the gradient of a scalar loss with respect to every [`Parameter`]
//! that was placed on the tape.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::TensorError;
use crate::tensor::{self, Tensor};

/// Process-unique identity of a trainable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(0);
        ParamId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named trainable tensor with its gradient and ADAM moment state.
#[derive(Debug, Clone)]
pub struct Parameter {
    id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Number of optimizer steps applied so far.
    pub t: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            t: 0,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Adds this parameter's entry from `grads` into its gradient buffer.
    /// Parameters absent from `grads` are left untouched.
    pub fn accumulate(&mut self, grads: &Gradients) {
        if let Some(g) = grads.get(self.id) {
            for (acc, x) in self.grad.data_mut().iter_mut().zip(g.data()) {
                *acc += x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Gradients produced by one backward pass, keyed by parameter identity.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// The primitive operations understood by the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Subtract,
    Multiply,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    Sum,
    Mean,
    SumLastAxis,
    ConcatLastAxis,
    SliceLastAxis { start: usize, end: usize },
    BroadcastAddBias,
    Scale(f64),
    AddScalar(f64),
    /// Elementwise clamp; gradient passes only where the input is inside
    /// the closed interval.
    Clamp { min: f64, max: f64 },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Subtract => "subtract",
            Primitive::Multiply => "multiply",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sqrt => "sqrt",
            Primitive::Square => "square",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumLastAxis => "sum_last_axis",
            Primitive::ConcatLastAxis => "concat_last_axis",
            Primitive::SliceLastAxis { .. } => "slice_last_axis",
            Primitive::BroadcastAddBias => "broadcast_add_bias",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Clamp { .. } => "clamp",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Subtract
            | Primitive::Multiply
            | Primitive::BroadcastAddBias => Some(2),
            Primitive::ConcatLastAxis => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum Origin {
    Constant,
    Param(ParamId),
    Op { prim: Primitive, inputs: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Constant)
    }

    /// Places a parameter's current value on the tape as a differentiable leaf.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(p.value.clone(), Origin::Param(p.id))
    }

    fn push(&mut self, value: Tensor, origin: Origin) -> Var {
        let requires_grad = match &origin {
            Origin::Constant => false,
            Origin::Param(_) => true,
            Origin::Op { inputs, .. } => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Executes `prim` on `inputs` and records it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, TensorError> {
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity {
                    op: prim.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::EmptyInputs(prim.name()));
        }
        let x = |i: usize| &self.nodes[inputs[i].0].value;
        let out = match prim {
            Primitive::MatMul => tensor::matmul(x(0), x(1))?,
            Primitive::Add => tensor::add(x(0), x(1))?,
            Primitive::Subtract => tensor::sub(x(0), x(1))?,
            Primitive::Multiply => tensor::mul(x(0), x(1))?,
            Primitive::Relu => tensor::relu(x(0)),
            Primitive::Exp => tensor::exp(x(0)),
            Primitive::Log => tensor::ln(x(0))?,
            Primitive::Sqrt => tensor::sqrt(x(0))?,
            Primitive::Square => tensor::square(x(0)),
            Primitive::Sum => tensor::sum(x(0)),
            Primitive::Mean => tensor::mean(x(0)),
            Primitive::SumLastAxis => tensor::sum_last_axis(x(0)),
            Primitive::ConcatLastAxis => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                tensor::concat_last_axis(&parts)?
            }
            Primitive::SliceLastAxis { start, end } => tensor::slice_last_axis(x(0), start, end)?,
            Primitive::BroadcastAddBias => tensor::add_bias(x(0), x(1))?,
            Primitive::Scale(c) => x(0).map(|v| c * v),
            Primitive::AddScalar(c) => x(0).map(|v| v + c),
            Primitive::Clamp { min, max } => x(0).map(|v| v.clamp(min, max)),
        };
        Ok(self.push(
            out,
            Origin::Op {
                prim,
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::Subtract, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::Multiply, &[a, b])
    }
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::BroadcastAddBias, &[x, b])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(Primitive::ConcatLastAxis, parts)
    }
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.apply(Primitive::SliceLastAxis { start, end }, &[x])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.apply(Primitive::Scale(c), &[x])
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.apply(Primitive::AddScalar(c), &[x])
    }
    pub fn clamp(&mut self, x: Var, min: f64, max: f64) -> Result<Var, TensorError> {
        self.apply(Primitive::Clamp { min, max }, &[x])
    }
    pub fn unary(&mut self, prim: Primitive, x: Var) -> Result<Var, TensorError> {
        self.apply(prim, &[x])
    }

    /// Region codes of every non-smooth primitive's input elements, in tape
    /// order: ReLU inputs map to `x > 0`, clamp inputs to below / inside /
    /// above. Two evaluations with equal patterns lie on the same smooth
    /// piece of the graph.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Origin::Op { prim, inputs } = &node.origin {
                let x = &self.nodes[inputs[0].0].value;
                match *prim {
                    Primitive::Relu => out.extend(x.data().iter().map(|&v| i8::from(v > 0.0))),
                    Primitive::Clamp { min, max } => out.extend(x.data().iter().map(|&v| {
                        if v < min {
                            -1
                        } else if v > max {
                            1
                        } else {
                            0
                        }
                    })),
                    _ => {}
                }
            }
        }
        out
    }

    /// Differentiates the scalar `loss` with respect to every parameter on
    /// the tape. Gradients of parameters used more than once are summed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_val = &self.nodes[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(TensorError::NotScalar(loss_val.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_val.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.origin {
                Origin::Constant => {}
                Origin::Param(id) => accumulate_into(&mut out.by_param, *id, g),
                Origin::Op { prim, inputs } => {
                    let contributions = self.local_grads(*prim, inputs, &node.value, &g)?;
                    for (input, contrib) in inputs.iter().zip(contributions) {
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        if let Some(c) = contrib {
                            add_grad(&mut grads[input.0], c);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of one primitive, one entry per input.
    fn local_grads(
        &self,
        prim: Primitive,
        inputs: &[Var],
        out: &Tensor,
        g: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, TensorError> {
        let x = |i: usize| &self.nodes[inputs[i].0].value;
        let needs = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let grads = match prim {
            Primitive::MatMul => vec![
                needs(0).then(|| tensor::gemm(g, false, x(1), true)).transpose()?,
                needs(1).then(|| tensor::gemm(x(0), true, g, false)).transpose()?,
            ],
            Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
            Primitive::Subtract => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Primitive::Multiply => vec![Some(g.zip_map(x(1), |a, b| a * b)), Some(g.zip_map(x(0), |a, b| a * b))],
            Primitive::Relu => vec![Some(g.zip_map(x(0), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))],
            Primitive::Exp => vec![Some(g.zip_map(out, |gv, o| gv * o))],
            Primitive::Log => vec![Some(g.zip_map(x(0), |gv, xv| gv / xv))],
            Primitive::Sqrt => vec![Some(g.zip_map(out, |gv, o| if o > 0.0 { gv / (2.0 * o) } else { 0.0 }))],
            Primitive::Square => vec![Some(g.zip_map(x(0), |gv, xv| 2.0 * xv * gv))],
            Primitive::Sum => vec![Some(Tensor::full(x(0).shape(), g.item()))],
            Primitive::Mean => {
                let n = x(0).len() as f64;
                vec![Some(Tensor::full(x(0).shape(), g.item() / n))]
            }
            Primitive::SumLastAxis => {
                let src = x(0);
                let c = src.cols();
                let data: Vec<f64> = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, c)).collect();
                vec![Some(Tensor::from_parts(src.shape().to_vec(), data))]
            }
            Primitive::ConcatLastAxis => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(inputs.len());
                for i in 0..inputs.len() {
                    let w = x(i).cols();
                    parts.push(Some(tensor::slice_last_axis(g, start, start + w)?));
                    start += w;
                }
                parts
            }
            Primitive::SliceLastAxis { start, end } => {
                let src = x(0);
                let c = src.cols();
                let w = end - start;
                let mut data = vec![0.0; src.len()];
                for (dst, gr) in data.chunks_exact_mut(c).zip(g.data().chunks_exact(w)) {
                    dst[start..end].copy_from_slice(gr);
                }
                vec![Some(Tensor::from_parts(src.shape().to_vec(), data))]
            }
            Primitive::BroadcastAddBias => {
                let n = x(1).len();
                let mut db = vec![0.0; n];
                for r in g.data().chunks_exact(n) {
                    for (acc, v) in db.iter_mut().zip(r) {
                        *acc += v;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::from_parts(vec![n], db))]
            }
            Primitive::Scale(c) => vec![Some(g.map(|v| c * v))],
            Primitive::AddScalar(_) => vec![Some(g.clone())],
            Primitive::Clamp { min, max } => vec![Some(g.zip_map(x(0), |gv, xv| {
                if (min..=max).contains(&xv) {
                    gv
                } else {
                    0.0
                }
            }))],
        };
        Ok(grads)
    }
}

fn add_grad(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn accumulate_into(map: &mut BTreeMap<ParamId, Tensor>, id: ParamId, g: Tensor) {
    let mut slot = map.remove(&id);
    add_grad(&mut slot, g);
    map.insert(id, slot.expect("just filled"));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(name: &str, data: &[f64]) -> Parameter {
        Parameter::new(name, Tensor::new(vec![data.len()], data.to_vec()).unwrap())
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let p = param("p", &[0.3, -1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.param(&p);
        let loss = tape.unary(Primitive::Sum, v).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p.id()).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let p = param("p", &[1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.param(&p);
        let sq = tape.unary(Primitive::Square, v).unwrap();
        let loss = tape.unary(Primitive::Sum, sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p.id()).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        let p = param("p", &[3.0]);
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        let prod = tape.mul(a, b).unwrap();
        let also = tape.add(prod, a).unwrap();
        let loss = tape.unary(Primitive::Sum, also).unwrap();
        let g = tape.backward(loss).unwrap();
        // d/dp (p·p + p) = 2p + 1
        assert_eq!(g.get(p.id()).unwrap().data(), &[7.0]);
    }

    #[test]
    fn unreachable_parameter_has_no_gradient() {
        let p = param("p", &[1.0]);
        let q = param("q", &[1.0]);
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let _unused = tape.param(&q);
        let loss = tape.unary(Primitive::Sum, a).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(q.id()).is_none());
        let mut q2 = q.clone();
        q2.accumulate(&g);
        assert_eq!(q2.grad.data(), &[0.0]);
    }

    #[test]
    fn backward_errors() {
        let p = param("p", &[1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.param(&p);
        assert!(matches!(tape.backward(v), Err(TensorError::NotScalar(_))));
        let s = tape.unary(Primitive::Sum, v).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn arity_is_checked() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0));
        assert!(tape.apply(Primitive::Add, &[a]).is_err());
        assert!(tape.apply(Primitive::ConcatLastAxis, &[]).is_err());
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let p = param("p", &[-50.0, 0.5, 50.0]);
        let mut tape = Tape::new();
        let v = tape.param(&p);
        let c = tape.clamp(v, -30.0, 30.0).unwrap();
        assert_eq!(tape.value(c).data(), &[-30.0, 0.5, 30.0]);
        let loss = tape.unary(Primitive::Sum, c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p.id()).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}

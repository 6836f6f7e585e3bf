//! Wengert tape: records primitive operations during the forward pass and
//! replays them in reverse to accumulate gradients.
//!
//! One tape per worker; tapes are cheap to build and are discarded after
//! `backward`. Gradients accumulate additively across fan-out, so a value
//! consumed twice receives the sum of both branch cotangents.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, OpCtx, OpSpec};
use crate::tensor::Tensor;

/// Handle to a value slot on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(u32);

enum Node {
    Leaf,
    Op { op: OpSpec, inputs: Vec<ValueId>, ctx: OpCtx },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf value (input image or parameter).
    pub fn input(&mut self, t: Tensor) -> ValueId {
        self.nodes.push(Node::Leaf);
        self.values.push(t);
        ValueId(self.values.len() as u32 - 1)
    }

    /// Evaluate `op` on already-recorded values and record the result.
    pub fn apply(&mut self, op: OpSpec, inputs: &[ValueId]) -> Result<ValueId> {
        let refs = self.gather(inputs)?;
        let (out, ctx) = ops::eval_ctx(&op, &refs)?;
        self.nodes.push(Node::Op { op, inputs: inputs.to_vec(), ctx });
        self.values.push(out);
        Ok(ValueId(self.values.len() as u32 - 1))
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0 as usize]
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per
    /// recorded value; slots not on a path to the loss stay empty.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let idx = loss.0 as usize;
        if idx >= self.values.len() {
            return Err(Error::UnknownValue);
        }
        let shape = self.values[idx].shape();
        if self.values[idx].len() != 1 {
            return Err(Error::NotScalarLoss { shape: shape.to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.values.len()).map(|_| None).collect();
        grads[idx] = Some(Tensor::new(shape.to_vec(), alloc::vec![1.0])?);
        for i in (0..=idx).rev() {
            let Node::Op { op, inputs, ctx } = &self.nodes[i] else { continue };
            let Some(grad_out) = grads[i].clone() else { continue };
            let refs = self.gather(inputs)?;
            let input_grads = ops::backward(op, &refs, ctx, &grad_out)?;
            for (slot, g) in inputs.iter().zip(input_grads.into_iter()) {
                let Some(g) = g else { continue };
                match &mut grads[slot.0 as usize] {
                    Some(acc) => acc.add_assign(&g)?,
                    empty => *empty = Some(g),
                }
            }
        }
        Ok(Gradients { by_slot: grads })
    }

    fn gather(&self, ids: &[ValueId]) -> Result<Vec<&Tensor>> {
        ids.iter()
            .map(|id| {
                self.values
                    .get(id.0 as usize)
                    .ok_or(Error::UnknownValue)
            })
            .collect()
    }
}

pub struct Gradients {
    by_slot: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.by_slot.get(id.0 as usize).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.by_slot.get_mut(id.0 as usize).and_then(|g| g.take())
    }
}

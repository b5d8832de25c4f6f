use std::sync::Arc;

use crate::error::{contract, DiffError, Result};
use crate::ops::Op;
use crate::record::{self, Gradients, NodeId, Record};

/// Dense row-major f64 tensor. Tracked tensors carry a handle into the
/// [`Record`] that produced them; untracked tensors are plain values.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<(Record, NodeId)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(contract(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel(shape)]),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(contract("item", format!("tensor of shape {:?} is not scalar", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Registers this value as a leaf of `record`; gradients of any loss
    /// computed from the returned tensor flow back to it.
    pub fn tracked(&self, record: &Record) -> Tensor {
        let id = record.push(Op::Leaf, Vec::new(), self.shape.clone(), self.data.clone(), true);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: Some((record.clone(), id)),
        }
    }

    /// Same values, no derivative tracking.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn record(&self) -> Option<&Record> {
        self.node.as_ref().map(|(r, _)| r)
    }

    pub(crate) fn node(&self) -> Option<(Record, NodeId)> {
        self.node.clone()
    }

    pub(crate) fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn arc_data(&self) -> Arc<Vec<f64>> {
        self.data.clone()
    }

    /// Gradient accumulated by the most recent backward pass over this
    /// tensor's record, if this tensor is a tracked leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let (rec, id) = self.node.as_ref()?;
        rec.grad_of(*id)
    }

    /// Reverse-mode pass from this scalar.
    pub fn backward(&self) -> Result<Gradients> {
        record::backward(self)
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// Builds the result of an op, recording it when any input is tracked.
    pub(crate) fn from_op(
        op: Op,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Tensor> {
        Tensor::from_op_shared(op, inputs, shape, Arc::new(data))
    }

    pub(crate) fn from_op_shared(
        op: Op,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut record: Option<Record> = None;
        for t in inputs {
            if let Some((r, _)) = &t.node {
                match &record {
                    None => record = Some(r.clone()),
                    Some(existing) if !existing.same(r) => return Err(DiffError::RecordMismatch),
                    _ => {}
                }
            }
        }
        let Some(rec) = record else {
            return Ok(Tensor {
                shape,
                data,
                node: None,
            });
        };
        let ids = inputs
            .iter()
            .map(|t| match &t.node {
                Some((_, id)) => *id,
                None => rec.push(Op::Constant, Vec::new(), t.shape.clone(), t.data.clone(), false),
            })
            .collect();
        let id = rec.push(op, ids, shape.clone(), data.clone(), true);
        Ok(Tensor {
            shape,
            data,
            node: Some((rec, id)),
        })
    }

}

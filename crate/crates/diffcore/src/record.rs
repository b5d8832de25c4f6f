//! The computation record: an append-only list of recorded operations that
//! backward replays in reverse.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{DiffError, Result};
use crate::ops::{self, Op};
use crate::tensor::Tensor;

pub type NodeId = usize;

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
    pub requires_grad: bool,
}

#[derive(Default)]
pub(crate) struct RecordInner {
    pub nodes: Vec<Node>,
    pub grads: HashMap<NodeId, Arc<Vec<f64>>>,
}

/// Records operations on tracked tensors. Cheap to clone; clones share
/// the same underlying record. A record should be driven from a single
/// thread at a time.
#[derive(Clone, Default)]
pub struct Record {
    inner: Arc<Mutex<RecordInner>>,
}

impl std::fmt::Debug for Record {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Record({} nodes)", self.len())
    }
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, RecordInner> {
        self.inner.lock().expect("computation record poisoned")
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Record) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(
        &self,
        op: Op,
        inputs: Vec<NodeId>,
        shape: Vec<usize>,
        value: Arc<Vec<f64>>,
        requires_grad: bool,
    ) -> NodeId {
        let mut inner = self.lock();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
            requires_grad,
        });
        id
    }

    pub(crate) fn grad_of(&self, id: NodeId) -> Option<Vec<f64>> {
        let inner = self.lock();
        match inner.grads.get(&id) {
            Some(g) => Some(g.as_ref().clone()),
            None if id < inner.nodes.len() && matches!(inner.nodes[id].op, Op::Leaf) => {
                if inner.grads.is_empty() {
                    None
                } else {
                    Some(vec![0.0; inner.nodes[id].value.len()])
                }
            }
            None => None,
        }
    }

    /// Replays the record backward from `loss` (node id), returning the
    /// gradient of every tracked leaf. Leaves not reached get zeros.
    pub(crate) fn backward_from(&self, loss: NodeId) -> Result<Gradients> {
        let mut inner = self.lock();
        let n = loss + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);
        let mut leaves: HashMap<NodeId, Arc<Vec<f64>>> = HashMap::new();

        for id in (0..n).rev() {
            let node = &inner.nodes[id];
            if matches!(node.op, Op::Leaf) {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                leaves.insert(id, Arc::new(g));
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| inner.nodes[i].requires_grad)
                .collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let inputs: Vec<&Node> = node.inputs.iter().map(|&i| &inner.nodes[i]).collect();
            let input_grads = ops::backward(&node.op, &inputs, node, &g, &need)?;
            for ((&inp, ig), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                let Some(ig) = ig else { continue };
                if !needed {
                    continue;
                }
                match &mut grads[inp] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        // leaves registered after the loss cannot influence it
        for id in n..inner.nodes.len() {
            if matches!(inner.nodes[id].op, Op::Leaf) {
                leaves.insert(id, Arc::new(vec![0.0; inner.nodes[id].value.len()]));
            }
        }
        inner.grads = leaves.clone();
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<NodeId, Arc<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a tracked leaf, or `None` when `t` is not a leaf of the
    /// replayed record.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node_id()?;
        self.grads.get(&id).map(|g| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub(crate) fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.len() != 1 {
        return Err(DiffError::NonScalarLoss(loss.shape().to_vec()));
    }
    let (rec, id) = loss.node().ok_or(DiffError::UntrackedLoss)?;
    rec.backward_from(id)
}

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;

/// Recording tape for one forward/backward pass.
///
/// Cloning a `Tape` is cheap and yields a handle to the same recording.
/// Tapes are single-threaded; concurrent work uses one tape per worker.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

#[derive(Clone)]
pub(crate) struct Saved {
    pub id: Option<usize>,
    pub value: Tensor,
}

#[derive(Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Saved>,
    pub output: Tensor,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// Dense row-major `f64` tensor, optionally attached to a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Rc<[usize]>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let value = value.detach();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: value.clone(),
        });
        Tensor {
            node: Some(NodeRef { tape: self.clone(), id }),
            ..value
        }
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn node(&self, id: usize) -> Node {
        self.nodes.borrow()[id].clone()
    }
}

impl Tensor {
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.into(),
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> crate::Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(crate::Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(Vec::new(), vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![v; n])
    }

    /// Row vector `[1, n]`.
    pub fn row(values: &[f64]) -> Self {
        Self::raw(vec![1, values.len()], values.to_vec())
    }

    /// Column vector `[n, 1]`.
    pub fn column(values: &[f64]) -> Self {
        Self::raw(vec![values.len(), 1], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Whether this tensor is recorded on a tape.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub(crate) fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Builds the result of `op`, recording it when any input is on a tape.
    pub(crate) fn record(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let out = Tensor::raw(shape, data);
        let tape = match inputs.iter().find_map(|t| t.tape()) {
            Some(t) => t.clone(),
            None => return out,
        };
        for t in inputs {
            if let Some(other) = t.tape() {
                assert!(tape.same(other), "tensors from different tapes combined");
            }
        }
        let saved = inputs
            .iter()
            .map(|t| Saved {
                id: t.node_id(),
                value: t.detach(),
            })
            .collect();
        let id = {
            let mut nodes = tape.nodes.borrow_mut();
            nodes.push(Node {
                op,
                inputs: saved,
                output: out.clone(),
            });
            nodes.len() - 1
        };
        Tensor {
            node: Some(NodeRef { tape, id }),
            ..out
        }
    }
}

impl Saved {
    /// Rebuilds the tensor, re-attached to `tape` when `attach` is set.
    pub(crate) fn live(&self, tape: &Tape, attach: bool) -> Tensor {
        match (attach, self.id) {
            (true, Some(id)) => Tensor {
                node: Some(NodeRef { tape: tape.clone(), id }),
                ..self.value.clone()
            },
            _ => self.value.clone(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("node", &self.node_id())
            .finish()
    }
}

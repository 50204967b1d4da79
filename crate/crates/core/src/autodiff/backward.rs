use super::ops::backward_rule;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Gradients returned by [`backward`], one per requested tensor.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
    /// `false` where the loss does not depend on the tensor; its gradient is zero.
    pub connected: Vec<bool>,
}

impl Gradients {
    pub fn all_connected(&self) -> bool {
        self.connected.iter().all(|&c| c)
    }
}

/// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
///
/// With `create_graph` the returned gradients are recorded on the loss's tape
/// and can be differentiated again; otherwise they are constants.
pub fn backward(loss: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss.shape()),
        ));
    }
    if !loss.item().is_finite() {
        return Err(Error::NaNDetected(format!("in loss value {}", loss.item())));
    }
    let zeros = || -> Gradients {
        Gradients {
            tensors: wrt.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            connected: vec![false; wrt.len()],
        }
    };
    let (tape, root) = match &loss.node {
        Some(n) => (n.tape.clone(), n.id),
        None => return Ok(zeros()),
    };

    // Nodes on a path from some `wrt` tensor to the loss.
    let mut targets = vec![false; root + 1];
    for t in wrt {
        match &t.node {
            Some(n) if tape.same(&n.tape) => {
                if n.id <= root {
                    targets[n.id] = true;
                }
            }
            Some(_) => panic!("backward: tensor recorded on a different tape"),
            None => {}
        }
    }
    let mut needed = targets.clone();
    {
        let nodes = tape.nodes.borrow();
        for id in 0..=root {
            if !needed[id] {
                needed[id] = nodes[id].inputs.iter().any(|s| s.id.is_some_and(|i| needed[i]));
            }
        }
    }
    if !needed[root] {
        return Ok(zeros());
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
    grads[root] = Some(Tensor::full(loss.shape(), 1.0));
    let mut found: Vec<Option<Tensor>> = vec![None; root + 1];

    for id in (0..=root).rev() {
        if !needed[id] {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        if targets[id] {
            found[id] = Some(g.clone());
        }
        let node = tape.node(id);
        let need: Vec<bool> = node.inputs.iter().map(|s| s.id.is_some_and(|i| needed[i])).collect();
        if !need.iter().any(|&n| n) {
            continue;
        }
        let inputs: Vec<Tensor> = node.inputs.iter().map(|s| s.live(&tape, create_graph)).collect();
        let output = if create_graph {
            super::tensor::Saved {
                id: Some(id),
                value: node.output.clone(),
            }
            .live(&tape, true)
        } else {
            node.output.clone()
        };
        let g = if create_graph { g } else { g.detach() };
        let contributions = backward_rule(&node.op, &inputs, &output, &g, &need)?;
        for (saved, contrib) in node.inputs.iter().zip(contributions) {
            let (Some(i), Some(c)) = (saved.id, contrib) else {
                continue;
            };
            if !needed[i] {
                continue;
            }
            grads[i] = Some(match grads[i].take() {
                Some(acc) => acc.add(&c)?,
                None => c,
            });
        }
    }

    let mut tensors = Vec::with_capacity(wrt.len());
    let mut connected = Vec::with_capacity(wrt.len());
    for t in wrt {
        match t.node_id().and_then(|i| found.get(i).cloned().flatten()) {
            Some(g) => {
                if !g.is_finite() {
                    return Err(Error::NaNDetected("in gradient".into()));
                }
                tensors.push(if create_graph { g } else { g.detach() });
                connected.push(true);
            }
            None => {
                tensors.push(Tensor::zeros(t.shape()));
                connected.push(false);
            }
        }
    }
    Ok(Gradients { tensors, connected })
}

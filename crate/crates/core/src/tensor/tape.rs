use super::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Whether an operation evaluates an exponential (exp, softmax, sigmoid,
/// tanh). Used to audit the attention path for softmax-freeness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpClass {
    Algebraic,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub op: &'static str,
    /// Slash-joined scope path active when the op was recorded.
    pub scope: String,
    pub class: OpClass,
}

/// Maps the upstream gradient to one gradient per parent, given the
/// parent values and the op's output.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    grad: Option<Tensor>,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid reverse topological order. A tape supports exactly one
/// [`Tape::backward`] call.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    scopes: Vec<&'static str>,
    trace: Vec<TraceEntry>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Gradients are kept only for leaves that
    /// require them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: None,
        })
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records the result of an operation.
    ///
    /// Fails with [`Error::NonFinite`] naming `op` if any output entry is
    /// NaN or infinite.
    pub fn record(
        &mut self,
        op: &'static str,
        class: OpClass,
        parents: &[Var],
        value: Tensor,
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.trace.push(TraceEntry {
            op,
            scope: self.scopes.join("/"),
            class,
        });
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_node(Node {
            value,
            requires_grad,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            grad: None,
        }))
    }

    /// Runs `f` with `name` pushed onto the scope stack.
    pub fn scoped<R>(&mut self, name: &'static str, f: impl FnOnce(&mut Tape) -> R) -> R {
        self.scopes.push(name);
        let out = f(self);
        self.scopes.pop();
        out
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Parent gradients are accumulated in node order then parent order, so
    /// the result is bit-reproducible. Backward closures are released
    /// afterwards; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed by a previous backward pass"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Backward("loss must be a scalar"));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Backward("loss does not depend on any tensor requiring gradients"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![1.0],
        ));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let Some(bw) = self.nodes[i].backward.take() else {
                if self.nodes[i].parents.is_empty() && self.nodes[i].requires_grad {
                    self.nodes[i].grad = Some(g);
                }
                continue;
            };
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let parent_grads = bw(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for node in &mut self.nodes {
            node.backward = None;
        }
        Ok(())
    }
}

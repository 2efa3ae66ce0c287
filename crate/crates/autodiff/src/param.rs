use crate::graph::NodeId;
use crate::tensor::Tensor;

/// A trainable array: its value, an optional gradient slot, and the node it
/// was last bound to.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
    pub node_id: Option<NodeId>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            requires_grad: true,
            node_id: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

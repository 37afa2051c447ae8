use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Position of a recorded node on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

/// Maps the upstream gradient to one gradient per op input. The flag slice
/// says which inputs need a gradient; entries for the others may be `None`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn<T>>,
}

/// Records differentiable ops in creation order.
///
/// Creation order is a valid topological order, so `backward` is a single
/// reverse sweep. Gradients accumulate across `backward` calls until
/// [`Tape::zero_grad`].
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
    recording: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("recording", &self.recording.get())
            .finish()
    }
}

/// A tensor value produced on a tape, optionally tracked for gradients.
#[derive(Clone)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    value: Rc<Tensor<T>>,
    id: Option<NodeId>,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("value", &self.value).finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn id(&self) -> Option<NodeId> {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(self)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(self)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Leaf that receives a gradient (unless recording is suspended).
    pub fn var(&self, value: impl Into<Rc<Tensor<T>>>) -> Var<'_, T> {
        let value = value.into();
        if !self.recording.get() {
            return Var {
                tape: self,
                value,
                id: None,
            };
        }
        let id = self.push(Node {
            value: Rc::clone(&value),
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            value,
            id: Some(id),
        }
    }

    /// Untracked value; ops on constants alone record nothing.
    pub fn constant(&self, value: impl Into<Rc<Tensor<T>>>) -> Var<'_, T> {
        Var {
            tape: self,
            value: value.into(),
            id: None,
        }
    }

    /// Runs `f` with recording suspended: every op inside produces
    /// untracked values and the tape does not grow.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let previous = self.recording.replace(false);
        let out = f();
        self.recording.set(previous);
        out
    }

    /// Records an op producing `value` from `inputs`.
    ///
    /// This is the extension point for new differentiable ops. `backward`
    /// must return one entry per input, shaped like that input's value.
    pub fn op<'t>(
        &'t self,
        value: impl Into<Rc<Tensor<T>>>,
        inputs: &[&Var<'t, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Var<'t, T> {
        let value = value.into();
        let tracked = self.recording.get() && inputs.iter().any(|v| v.id.is_some());
        if !tracked {
            return Var {
                tape: self,
                value,
                id: None,
            };
        }
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)));
        let id = self.push(Node {
            value: Rc::clone(&value),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: Some(Box::new(backward)),
        });
        Var {
            tape: self,
            value,
            id: Some(id),
        }
    }

    fn push(&self, node: Node<T>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        NodeId(nodes.len() - 1)
    }

    /// Accumulates `d root / d node` into every node reachable from `root`.
    pub fn backward(&self, root: &Var<'_, T>) -> Result<()> {
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!("backward from non-scalar of shape {}", root.value.shape())));
        }
        let Some(NodeId(root_id)) = root.id else {
            return Err(Error::Contract("backward from an untracked value".into()));
        };
        let nodes = self.nodes.borrow();
        let mut local: Vec<Option<Tensor<T>>> = vec![None; root_id + 1];
        local[root_id] = Some(root.value.map(|_| T::one()));

        for i in (0..=root_id).rev() {
            let Some(upstream) = local[i].take() else {
                continue;
            };
            let node = &nodes[i];
            if let Some(rule) = &node.backward {
                let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                let parent_grads = rule(&upstream, &needs)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, grad) in node.parents.iter().zip(parent_grads) {
                    let (Some(NodeId(p)), Some(grad)) = (parent, grad) else {
                        continue;
                    };
                    debug_assert_eq!(grad.shape(), nodes[*p].value.shape());
                    match &mut local[*p] {
                        Some(acc) => acc.axpy(T::one(), &grad)?,
                        slot => *slot = Some(grad),
                    }
                }
            }
            let mut grads = self.grads.borrow_mut();
            match &mut grads[i] {
                Some(acc) => acc.axpy(T::one(), &upstream)?,
                slot => *slot = Some(upstream),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a tracked value.
    pub fn grad(&self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        let NodeId(i) = var.id?;
        self.grads.borrow()[i].clone()
    }

    /// Moves the accumulated gradient of `var` out, leaving its slot empty.
    pub fn take_grad(&self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        let NodeId(i) = var.id?;
        self.grads.borrow_mut()[i].take()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

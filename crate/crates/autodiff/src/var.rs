use std::cell::Cell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{ops, Float, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Backward rule: given the op inputs, the op output and the gradient flowing
/// into the output, return one gradient per input. `need[i]` is false when
/// input `i` does not lead to any requested gradient; rules may skip it.
/// Rules are written with [`Var`] ops so that they are themselves
/// differentiable.
pub(crate) type BackwardFn<T> = dyn Fn(&[Var<T>], &Var<T>, &Var<T>, &[bool]) -> Vec<Option<Var<T>>>;

struct GradFn<T: Float> {
    name: &'static str,
    inputs: Vec<Var<T>>,
    rule: Box<BackwardFn<T>>,
}

struct Node<T: Float> {
    // Ids increase monotonically, so descending id order is a valid
    // reverse topological order.
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// A node in the computation graph.
pub struct Var<T: Float>(Rc<Node<T>>);

impl<T: Float> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .finish()
    }
}

/// Disables graph recording until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

fn enable_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(true));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl<T: Float> Var<T> {
    /// Leaf that gradients can be taken with respect to.
    pub fn param(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            grad_fn: None,
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            grad_fn: None,
        }))
    }

    pub(crate) fn from_op(
        name: &'static str,
        value: Tensor<T>,
        inputs: Vec<Var<T>>,
        rule: Box<BackwardFn<T>>,
    ) -> Self {
        let record = grad_enabled() && inputs.iter().any(|v| v.requires_grad());
        if !record {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            grad_fn: Some(GradFn { name, inputs, rule }),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are themselves differentiable,
/// which is what second-order terms such as a gradient-norm penalty need.
/// Inputs not reachable from `output` get a zero gradient.
pub fn grad<T: Float>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    assert_eq!(
        output.value().numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let seed = Tensor::ones(output.shape());
    grad_with_seed(output, seed, wrt, create_graph)
}

/// Vector-Jacobian product of `output` with `seed`.
pub fn grad_with_seed<T: Float>(
    output: &Var<T>,
    seed: Tensor<T>,
    wrt: &[&Var<T>],
    create_graph: bool,
) -> Vec<Var<T>> {
    assert_eq!(seed.shape(), output.shape(), "seed shape must match output");
    let _mode = if create_graph {
        enable_grad()
    } else {
        no_grad()
    };

    // Collect the sub-graph that requires gradients.
    let mut nodes: BTreeMap<u64, Var<T>> = BTreeMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        if let Some(gf) = &v.0.grad_fn {
            for input in &gf.inputs {
                if input.requires_grad() && !nodes.contains_key(&input.id()) {
                    stack.push(input.clone());
                }
            }
        }
        nodes.insert(v.id(), v);
    }

    let wanted: HashMap<u64, usize> = wrt.iter().enumerate().map(|(i, v)| (v.id(), i)).collect();

    // Keep only nodes with a path to some requested input.
    let mut relevant: HashSet<u64> = HashSet::new();
    for (id, node) in nodes.iter() {
        let leads = wanted.contains_key(id)
            || node
                .0
                .grad_fn
                .as_ref()
                .is_some_and(|gf| gf.inputs.iter().any(|i| relevant.contains(&i.id())));
        if leads {
            relevant.insert(*id);
        }
    }
    let mut results: Vec<Option<Var<T>>> = vec![None; wrt.len()];
    let mut grads: HashMap<u64, Var<T>> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), Var::constant(seed));
    }

    for (id, node) in nodes.iter().rev() {
        let Some(g) = grads.remove(id) else { continue };
        if let Some(&slot) = wanted.get(id) {
            results[slot] = Some(g.clone());
        }
        let Some(gf) = &node.0.grad_fn else { continue };
        let need: Vec<bool> = gf
            .inputs
            .iter()
            .map(|i| relevant.contains(&i.id()))
            .collect();
        if !need.iter().any(|&n| n) {
            continue;
        }
        let input_grads = (gf.rule)(&gf.inputs, node, &g, &need);
        debug_assert_eq!(
            input_grads.len(),
            gf.inputs.len(),
            "rule arity for {}",
            gf.name
        );
        for ((input, ig), &needed) in gf.inputs.iter().zip(input_grads).zip(&need) {
            let Some(ig) = ig else { continue };
            if !needed {
                continue;
            }
            debug_assert_eq!(
                ig.shape(),
                input.shape(),
                "gradient shape mismatch in backward of {}",
                gf.name
            );
            let acc = match grads.remove(&input.id()) {
                Some(prev) => ops::add(&prev, &ig),
                None => ig,
            };
            grads.insert(input.id(), acc);
        }
    }

    results
        .into_iter()
        .zip(wrt)
        .map(|(r, v)| r.unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape()))))
        .collect()
}

//! Named learnable parameters and the per-step graph session.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::scalar::Scalar;
use crate::var::{Gradients, Var};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

struct ParamInner<T: Scalar> {
    id: u64,
    name: String,
    value: RwLock<Array<T>>,
}

/// Shared handle to one learnable tensor. Clones alias the same storage.
pub struct Param<T: Scalar>(Arc<ParamInner<T>>);

impl<T: Scalar> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Param({} {:?})", self.0.name, self.shape())
    }
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Array<T>) -> Self {
        Param(Arc::new(ParamInner {
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            value: RwLock::new(value),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    /// Snapshot of the current value (shares storage until written).
    pub fn value(&self) -> Array<T> {
        self.0.value.read().expect("parameter lock poisoned").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.read().expect("parameter lock poisoned").shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    /// Replaces the value; the shape must not change.
    pub fn set(&self, value: Array<T>) {
        let mut guard = self.0.value.write().expect("parameter lock poisoned");
        assert_eq!(guard.shape(), value.shape(), "shape change for {}", self.0.name);
        *guard = value;
    }

    pub fn update(&self, f: impl FnOnce(&mut Array<T>)) {
        let mut guard = self.0.value.write().expect("parameter lock poisoned");
        f(&mut guard);
    }
}

/// Registry of every parameter of a model in creation order.
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }
}

impl<T: Scalar> fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.params.len())
            .field("numel", &self.numel())
            .finish()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Param<T>) {
        let name = p.name().to_string();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name, self.params.len());
        self.params.push(p);
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| has_prefix(p.name(), prefix))
            .map(Param::numel)
            .sum()
    }
}

/// True when `name` equals `prefix` or continues it with a `.` separator.
pub fn has_prefix(name: &str, prefix: &str) -> bool {
    prefix.is_empty()
        || name == prefix
        || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'.'))
}

/// Creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Nested scope `prefix.name`.
    pub fn sub(&mut self, name: impl fmt::Display) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Array<T>) -> Param<T> {
        let p = Param::new(self.full_name(name), value);
        self.store.insert(p.clone());
        p
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Param<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..=bound)))
            .collect();
        self.tensor(name, Array::new(shape, data))
    }

    /// Uniform with bound `1/sqrt(fan_in)`.
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Param<T> {
        self.uniform(name, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Param<T> {
        self.tensor(name, Array::zeros(shape))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Param<T> {
        self.tensor(name, Array::full(shape, T::from_f64_lossy(v)))
    }
}

/// One forward/backward session.
///
/// In training mode each parameter becomes a gradient leaf, except those
/// under a frozen prefix. In inference mode everything is constant and
/// intermediate values are released eagerly.
pub struct Graph<T: Scalar> {
    train: bool,
    frozen: Vec<String>,
    leaves: RefCell<HashMap<u64, (Param<T>, Var<T>)>>,
}

impl<T: Scalar> Graph<T> {
    pub fn inference() -> Self {
        Self {
            train: false,
            frozen: Vec::new(),
            leaves: RefCell::new(HashMap::new()),
        }
    }

    pub fn training(frozen: &[&str]) -> Self {
        Self {
            train: true,
            frozen: frozen.iter().map(|s| s.to_string()).collect(),
            leaves: RefCell::new(HashMap::new()),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|f| has_prefix(name, f))
    }

    /// Graph handle for `p`; repeated calls return the same leaf.
    pub fn param(&self, p: &Param<T>) -> Var<T> {
        if !self.train || self.is_frozen(p.name()) {
            return Var::constant(p.value());
        }
        self.leaves
            .borrow_mut()
            .entry(p.id())
            .or_insert_with(|| (p.clone(), Var::leaf(p.value())))
            .1
            .clone()
    }

    /// Gradients of every parameter touched in this session.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(Param<T>, Array<T>)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(Param<T>, Array<T>)> = leaves
            .values()
            .map(|(p, v)| (p.clone(), grads.get_or_zeros(v)))
            .collect();
        out.sort_by_key(|(p, _)| p.id());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn builder_names_and_counts() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        {
            let mut enc = b.sub("enc");
            enc.zeros("w", &[2, 3]);
            enc.sub(0).zeros("b", &[4]);
        }
        b.zeros("encoder.w", &[5]);
        assert!(store.get("enc.0.b").is_some());
        assert_eq!(store.numel(), 15);
        assert_eq!(store.numel_with_prefix("enc"), 10);
    }

    #[test]
    fn frozen_prefix_yields_constants() {
        let p = Param::new("flow.w", Array::<f64>::ones(&[2]));
        let q = Param::new("fuse.w", Array::<f64>::ones(&[2]));
        let g = Graph::training(&["flow"]);
        assert!(!g.param(&p).requires_grad());
        let v = g.param(&q);
        assert!(v.requires_grad());
        let loss = v.add(&g.param(&q)).sum_all();
        let grads = g.param_grads(&loss.backward());
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1.to_f64_vec(), vec![2., 2.]);
    }
}

//! Named parameter storage and the per-pass forward context.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use mcd_tensor::{batch_norm, Element, Mode, Rng, RunningStats, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Optimisation group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Frozen,
    Adapter,
    Prompt,
    Lora,
    Mscad,
    Decoder,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Frozen,
        Group::Adapter,
        Group::Prompt,
        Group::Lora,
        Group::Mscad,
        Group::Decoder,
    ];

    pub fn trainable(self) -> bool {
        self != Group::Frozen
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Frozen => "frozen",
            Group::Adapter => "adapter",
            Group::Prompt => "prompt",
            Group::Lora => "lora",
            Group::Mscad => "mscad",
            Group::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

/// Ordered collection of named parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    buffers: BTreeMap<String, RunningStats<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, group, value });
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, stats: RunningStats<T>) {
        self.buffers.insert(name.into(), stats);
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Invalid(format!("no parameter named `{name}`")))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("no parameter named `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Invalid(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn buffers(&self) -> &BTreeMap<String, RunningStats<T>> {
        &self.buffers
    }

    pub fn buffer(&self, name: &str) -> Option<&RunningStats<T>> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: &str, stats: RunningStats<T>) -> Result<()> {
        match self.buffers.get_mut(name) {
            Some(b) if b.mean.len() == stats.mean.len() => {
                *b = stats;
                Ok(())
            }
            _ => Err(Error::Invalid(format!("no running statistics `{name}` of that width"))),
        }
    }

    pub fn count(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.numel()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        Group::ALL.iter().filter(|g| g.trainable()).map(|&g| self.count(g)).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, s)| {
                    let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
                    (k.clone(), RunningStats { mean: c(&s.mean), var: c(&s.var) })
                })
                .collect(),
        }
    }
}

/// State of one forward pass: the tape, the parameter leaves created so far,
/// the dropout stream and any running-statistics updates to apply afterwards.
pub struct Forward<'t, 's, T: Element> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    track: bool,
    rng: RefCell<Rng>,
    leaves: RefCell<Vec<(String, Var<'t, T>)>>,
    lookup: RefCell<HashMap<String, Var<'t, T>>>,
    bn_updates: RefCell<Vec<(String, RunningStats<T>)>>,
}

impl<'t, 's, T: Element> Forward<'t, 's, T> {
    /// `track` decides whether trainable parameters become gradient leaves.
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, mode: Mode, track: bool, rng: Rng) -> Self {
        Self {
            tape,
            store,
            mode,
            track,
            rng: RefCell::new(rng),
            leaves: RefCell::new(Vec::new()),
            lookup: RefCell::new(HashMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    /// Evaluation pass without gradient tracking.
    pub fn eval(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::new(tape, store, Mode::Eval, false, Rng::new(0))
    }

    /// Routes a parameter to a caller-supplied variable instead of the store.
    pub fn bind(&self, name: &str, var: Var<'t, T>) {
        self.lookup.borrow_mut().insert(name.to_string(), var);
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// The variable for parameter `name`, created on first use.
    pub fn param(&self, name: &str) -> Result<Var<'t, T>> {
        if let Some(v) = self.lookup.borrow().get(name) {
            return Ok(*v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no parameter named `{name}`")))?;
        let grad = self.track && p.group.trainable();
        let v = self.tape.leaf(p.value.clone(), grad);
        if grad {
            self.leaves.borrow_mut().push((name.to_string(), v));
        }
        self.lookup.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Trainable parameter leaves in creation order.
    pub fn leaves(&self) -> Vec<(String, Var<'t, T>)> {
        self.leaves.borrow().clone()
    }

    pub fn dropout(&self, x: &Var<'t, T>, p: f64) -> Result<Var<'t, T>> {
        Ok(x.dropout(p, self.mode, &mut self.rng.borrow_mut())?)
    }

    /// Batch norm with parameters `{name}.gamma`, `{name}.beta` and running statistics `name`.
    pub fn batch_norm(&self, name: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let running = self.store.buffer(name);
        let (y, update) = batch_norm(x, &gamma, &beta, running, self.mode)?;
        if let Some(stats) = update {
            self.bn_updates.borrow_mut().push((name.to_string(), stats));
        }
        Ok(y)
    }

    /// Running-statistics updates produced by train-mode batch norms.
    pub fn take_bn_updates(&self) -> Vec<(String, RunningStats<T>)> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }
}

/// Independent initialisation stream for one named parameter.
pub fn init_rng(seed: u64, name: &str) -> Rng {
    Rng::new(seed ^ crate::config::fnv1a(name.as_bytes()))
}

/// He-normal initialisation for a weight with the given fan-in.
pub fn he_normal<T: Element>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> Tensor<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(std * rng.normal())).collect()).expect("shape and length agree")
}

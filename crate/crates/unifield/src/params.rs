//! Named parameter buffers with gradient accumulators.
//!
//! Parameters are created once at model build time in a fixed order from a
//! seeded stream, shared into tapes as leaf tensors during forward passes,
//! and updated in place by the optimizer between steps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<T>>,
    pub grad: Vec<T>,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zero,
    One,
    /// Uniform(-s, s) with s = sqrt(1 / fan_in).
    FanIn { fan_in: usize },
    /// Uniform(-s, s) with fixed small s, for near-identity branches.
    Small(f64),
}

#[derive(Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zero => vec![T::ZERO; n],
            Init::One => vec![T::ONE; n],
            Init::FanIn { fan_in } => {
                let s = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64(rng.uniform_in(-s, s))).collect()
            }
            Init::Small(s) => (0..n).map(|_| T::from_f64(rng.uniform_in(-s, s))).collect(),
        };
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: Arc::new(data),
            grad: vec![T::ZERO; n],
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite a parameter buffer (optimizer steps, checkpoint load, tests).
    pub fn set_value(&mut self, id: ParamId, data: Vec<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if data.len() != p.value.len() {
            return Err(Error::contract(format!(
                "parameter '{}' has {} elements, got {}",
                p.name,
                p.value.len(),
                data.len()
            )));
        }
        p.value = Arc::new(data);
        Ok(())
    }

    /// Mutable access to a parameter buffer without reallocating when the
    /// optimizer is the only holder.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.params[id.0].grad.len());
        self.params[id.0].grad = grad;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = T::ZERO;
            }
        }
    }

    /// Fold one sample's tape gradients into the parameter accumulators, in
    /// the frame's fixed usage order, scaled by `scale`.
    pub fn accumulate(&mut self, frame: &Frame, grads: &Gradients<T>, scale: T) {
        for &(pid, tid) in &frame.used {
            if let Some(g) = grads.get(tid) {
                let acc = &mut self.params[pid.0].grad;
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv * scale;
                }
            }
        }
    }
}

/// Per-forward-pass mapping from parameters to tape leaves. Each parameter is
/// injected at most once per tape.
#[derive(Debug)]
pub struct Frame {
    slots: Vec<Option<TensorId>>,
    used: Vec<(ParamId, TensorId)>,
}

impl Frame {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        Frame {
            slots: vec![None; store.len()],
            used: Vec::new(),
        }
    }

    pub fn used(&self) -> &[(ParamId, TensorId)] {
        &self.used
    }
}

/// Everything a layer forward needs: the tape being built, the read-only
/// parameter store, and the frame tracking which parameters were injected.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub frame: &'a mut Frame,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, frame: &'a mut Frame) -> Self {
        Ctx { tape, store, frame }
    }

    /// Tape leaf for a parameter, injecting it on first use.
    pub fn param(&mut self, id: ParamId) -> Result<TensorId> {
        if let Some(t) = self.frame.slots[id.0] {
            return Ok(t);
        }
        let p = self.store.get(id);
        let t = self.tape.leaf(Arc::clone(&p.value), &p.shape, true)?;
        self.frame.slots[id.0] = Some(t);
        self.frame.used.push((id, t));
        Ok(t)
    }
}

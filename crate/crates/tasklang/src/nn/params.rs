//! Named, ordered parameter store. Order is insertion order and is part of
//! the checkpoint contract; names exist for debugging and integrity hashes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Index of one tensor inside a `Params`.
pub type ParamId = usize;

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Puts every parameter on a tape; the returned Vars run parallel to the
    /// parameter indices.
    pub fn bind_all(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Collects gradients for every parameter from a finished backward pass.
    pub fn grads_from(&self, grads: &[Tensor], vars: &[Var]) -> Vec<Tensor> {
        assert_eq!(vars.len(), self.len());
        vars.iter().map(|v| grads[v.0].clone()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Content hash over names, shapes, and exact f64 bits. Used by purity
    /// checks ("this component was not touched by that training phase").
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            h.update(t.rows.to_le_bytes());
            h.update(t.cols.to_le_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        crate::config::hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_changes_with_any_bit() {
        let mut p = Params::new();
        p.add("w", Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let h1 = p.content_hash();
        p.tensor_mut(0).data[1] += 1e-15;
        assert_ne!(h1, p.content_hash());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_rejected() {
        let mut p = Params::new();
        p.add("w", Tensor::zeros(1, 1));
        p.add("w", Tensor::zeros(1, 1));
    }
}

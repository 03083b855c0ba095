use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Receives `(name, tensor)` pairs in a parameter tree's canonical order.
pub trait ParamVisitor<'a> {
    fn visit(&mut self, name: String, tensor: &'a Tensor);
}

impl<'a, F: FnMut(String, &'a Tensor)> ParamVisitor<'a> for F {
    fn visit(&mut self, name: String, tensor: &'a Tensor) {
        self(name, tensor)
    }
}

/// Flat, ordered list of named parameter tensors.
pub type NamedTensors = Vec<(String, Tensor)>;

pub(crate) fn take_named(named: &mut NamedTensors, name: &str) -> Option<Tensor> {
    let pos = named.iter().position(|(n, _)| n == name)?;
    Some(named.remove(pos).1)
}

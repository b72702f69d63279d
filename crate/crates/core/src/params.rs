//! Named, ordered access to every tensor a network owns. The order is fixed
//! by construction and is the order used by the optimizer and the weight
//! file.

use serde::{Deserialize, Serialize};

use crate::ops::{BnParams, ConvParams, FcParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Learnable, updated by the optimizer.
    Param,
    /// Batch-norm running estimate, saved but never optimised.
    RunningStat,
}

pub struct Named<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: &'a Tensor<T>,
}

pub struct NamedMut<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: &'a mut Tensor<T>,
}

pub trait Parameters<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>);

    fn named(&self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn named_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    /// Learnable tensors only, in canonical order.
    fn learnable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.named_mut()
            .into_iter()
            .filter(|n| n.kind == TensorKind::Param)
            .map(|n| n.tensor)
            .collect()
    }

    fn zero_grad(&mut self) {
        for n in self.named_mut() {
            n.tensor.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.named().iter().filter(|n| n.kind == TensorKind::Param).map(|n| n.tensor.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! tensor_fields {
    ($ty:ident { $($field:ident : $kind:ident),* $(,)? }) => {
        impl<T: Scalar> Parameters<T> for $ty<T> {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
                $(out.push(Named { name: join(prefix, stringify!($field)), kind: TensorKind::$kind, tensor: &self.$field });)*
            }
            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
                $(out.push(NamedMut { name: join(prefix, stringify!($field)), kind: TensorKind::$kind, tensor: &mut self.$field });)*
            }
        }
    };
}

tensor_fields!(ConvParams { weight: Param, bias: Param });
tensor_fields!(FcParams { weight: Param, bias: Param });
tensor_fields!(BnParams { gamma: Param, beta: Param, running_mean: RunningStat, running_var: RunningStat });

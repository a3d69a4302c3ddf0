use crate::array::ArrayD;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.shape());
        Parameter { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad = ArrayD::zeros(self.value.shape());
    }
}

/// Ordered collection of parameters; the order is the checkpoint order.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    pub params: Vec<Parameter<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { params: Vec::new() }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, p: Parameter<T>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter<T>> {
        self.params.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Register every parameter value on a tape, in set order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.input(p.value.clone())).collect()
    }

    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.convert::<U>()))
                .collect(),
        }
    }
}

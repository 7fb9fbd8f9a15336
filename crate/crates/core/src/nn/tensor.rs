//! Dense row-major f64 tensor.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "tensor construction".into(),
                expected: format!("{expected} elements for dims {dims:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.to_string(),
            });
        }
        Ok(())
    }
}

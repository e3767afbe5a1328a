use super::NdiffError;

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NdiffError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NdiffError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NdiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, NdiffError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// One-dimensional tensor over `data`. Panics on an empty vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("from_vec requires a nonempty vector")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), NdiffError> {
        if grad.len() != self.data.len() {
            return Err(NdiffError::DataLength {
                shape: self.shape.clone(),
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NdiffError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || expected != self.data.len() {
            return Err(NdiffError::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }
}

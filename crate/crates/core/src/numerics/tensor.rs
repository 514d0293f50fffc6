use super::Float;
use crate::error::{contract, Result};

/// Dense row-major array.
///
/// `requires_grad` marks trainable leaves; `grad` is populated for them by
/// [`ParamStore::set_grads`](super::ParamStore::set_grads).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Float = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Float> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        contract!(
            n == data.len(),
            "shape {shape:?} holds {n} elements but buffer has {}",
            data.len()
        );
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        Self::full(&[], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        contract!(self.data.len() == 1, "item() on tensor of shape {:?}", self.shape);
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        contract!(
            n == self.data.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape of a 4-D `[N, C, H, W]` tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        contract!(
            self.shape.len() == 4,
            "expected a 4-D [N,C,H,W] tensor, got shape {:?}",
            self.shape
        );
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        contract!(
            self.shape == other.shape,
            "shape mismatch {:?} vs {:?}",
            self.shape,
            other.shape
        );
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        contract!(
            self.shape == other.shape,
            "shape mismatch {:?} vs {:?}",
            self.shape,
            other.shape
        );
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::NAN))
            .fold(0.0, f64::max))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        contract!(!items.is_empty(), "cannot stack zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            contract!(
                t.shape == inner,
                "stack shape mismatch {:?} vs {:?}",
                t.shape,
                inner
            );
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Self::new(&shape, data)
    }

    /// The `index`-th slice along the leading axis.
    pub fn select(&self, index: usize) -> Result<Self> {
        contract!(
            !self.shape.is_empty() && index < self.shape[0],
            "index {index} out of range for shape {:?}",
            self.shape
        );
        let inner: usize = self.shape[1..].iter().product();
        Self::new(
            &self.shape[1..],
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }
}

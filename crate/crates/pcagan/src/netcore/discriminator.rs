use super::{ParamLayout, ParamVector};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::normal_vector;
use nalgebra::{DVector, DVectorView};
use rand::Rng;

/// `D(x, y) = w^T [x; y] + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDiscriminator {
    dim: usize,
    params: ParamVector,
}

impl LinearDiscriminator {
    pub fn layout(dim: usize) -> ParamLayout {
        ParamLayout::packed(&[("w", 2 * dim, 1), ("c", 1, 1)])
    }

    pub fn from_params(dim: usize, params: ParamVector) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("discriminator dimension must be positive"));
        }
        if params.layout() != &Self::layout(dim) {
            return Err(Error::invalid("parameter layout does not match a linear discriminator"));
        }
        Ok(Self { dim, params })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_params(dim, ParamVector::zeros(Self::layout(dim))?)
    }

    /// `w ~ N(0, 1/(2 dim))`, `c = 0`.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        let mut d = Self::zeros(dim)?;
        let w = normal_vector(rng, 2 * dim) * (0.5 / dim as f64).sqrt();
        d.params.slice_mut("w").copy_from_slice(w.as_slice());
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// The part of `w` that multiplies `x`; this is also `grad_x D(x, y)`.
    pub fn w_x(&self) -> DVectorView<'_, f64> {
        DVectorView::from_slice(&self.params.slice("w")[..self.dim], self.dim)
    }

    pub fn w_y(&self) -> DVectorView<'_, f64> {
        DVectorView::from_slice(&self.params.slice("w")[self.dim..], self.dim)
    }

    pub fn bias(&self) -> f64 {
        self.params.slice("c")[0]
    }

    pub fn set_w(&mut self, w: &DVector<f64>) {
        self.params.slice_mut("w").copy_from_slice(w.as_slice());
    }

    pub fn set_bias(&mut self, c: f64) {
        self.params.slice_mut("c")[0] = c;
    }

    pub fn forward(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        ensure_dim("critic x", x.len(), self.dim)?;
        ensure_dim("critic y", y.len(), self.dim)?;
        Ok(self.forward_unchecked(x, y))
    }

    pub(crate) fn forward_unchecked(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.w_x().dot(x) + self.w_y().dot(y) + self.bias()
    }

    /// `grad_u D(u, y)`, independent of `(u, y)` for a linear critic.
    pub fn input_grad(&self, _u: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        self.w_x().into_owned()
    }
}

use super::{Objective, ParamLayout, ParamVector};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::normal_vector;
use nalgebra::{DMatrix, DMatrixViewMut, DVector};
use rand::Rng;

/// `x_hat = A y + B z + b`: one dense layer on the measurement, one on the
/// code, outputs summed.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGenerator {
    dim: usize,
    code_dim: usize,
    params: ParamVector,
}

impl AffineGenerator {
    pub fn layout(dim: usize, code_dim: usize) -> ParamLayout {
        ParamLayout::packed(&[("A", dim, dim), ("B", dim, code_dim), ("b", dim, 1)])
    }

    pub fn from_params(dim: usize, code_dim: usize, params: ParamVector) -> Result<Self> {
        if dim == 0 || code_dim == 0 {
            return Err(Error::invalid("generator dimensions must be positive"));
        }
        if params.layout() != &Self::layout(dim, code_dim) {
            return Err(Error::invalid("parameter layout does not match an affine generator"));
        }
        Ok(Self { dim, code_dim, params })
    }

    pub fn zeros(dim: usize, code_dim: usize) -> Result<Self> {
        Self::from_params(dim, code_dim, ParamVector::zeros(Self::layout(dim, code_dim))?)
    }

    /// `A`, `B` entries `~ N(0, 1/dim)`, bias zero.
    pub fn init<R: Rng + ?Sized>(dim: usize, code_dim: usize, rng: &mut R) -> Result<Self> {
        let mut g = Self::zeros(dim, code_dim)?;
        let std = (1.0 / dim as f64).sqrt();
        for name in ["A", "B"] {
            let n = g.params.slice(name).len();
            let draws = normal_vector(rng, n) * std;
            g.params.slice_mut(name).copy_from_slice(draws.as_slice());
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.params.matrix("A").into_owned()
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        self.params.matrix("B").into_owned()
    }

    pub fn bias(&self) -> DVector<f64> {
        DVector::from_column_slice(self.params.slice("b"))
    }

    pub fn set_a(&mut self, a: &DMatrix<f64>) {
        self.params.matrix_mut("A").copy_from(a);
    }

    pub fn set_b_matrix(&mut self, b: &DMatrix<f64>) {
        self.params.matrix_mut("B").copy_from(b);
    }

    pub fn set_bias(&mut self, b: &DVector<f64>) {
        self.params.slice_mut("b").copy_from_slice(b.as_slice());
    }

    pub fn forward(&self, z: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("generator code", z.len(), self.code_dim)?;
        ensure_dim("generator measurement", y.len(), self.dim)?;
        Ok(self.offset(y) + self.params.matrix("B") * z)
    }

    /// `A y + b`, the sample mean the generator produces for `y`.
    pub fn offset(&self, y: &DVector<f64>) -> DVector<f64> {
        self.params.matrix("A") * y + DVector::from_column_slice(self.params.slice("b"))
    }

    pub(crate) fn forward_many(&self, y: &DVector<f64>, codes: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let offset = self.offset(y);
        let z = DMatrix::from_fn(self.code_dim, codes.len(), |i, j| codes[j][i]);
        let out = self.params.matrix("B") * z;
        out.column_iter().map(|c| &offset + c).collect()
    }

    /// Draws `z ~ N(0, I)` and returns `G(z, y)`.
    pub fn sample<R: Rng + ?Sized>(&self, y: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = normal_vector(rng, self.code_dim);
        self.offset(y) + self.params.matrix("B") * z
    }
}

/// Adds `d loss / d theta` for the outputs `G(z_i, y)` given their gradients
/// `d loss / d x_hat_i`, into a gradient laid out like the generator's params.
fn accumulate_output_grads(
    dim: usize,
    code_dim: usize,
    grad: &mut [f64],
    out_grads: &[DVector<f64>],
    codes: &[DVector<f64>],
    y: &DVector<f64>,
) {
    let n = out_grads.len();
    let g = DMatrix::from_fn(dim, n, |i, j| out_grads[j][i]);
    let z = DMatrix::from_fn(code_dim, n, |i, j| codes[j][i]);
    let g_sum = g.column_sum();
    let b_off = dim * dim;
    let bias_off = b_off + dim * code_dim;
    let mut ga = DMatrixViewMut::from_slice(&mut grad[..b_off], dim, dim);
    ga.ger(1.0, &g_sum, y, 1.0);
    let mut gb = DMatrixViewMut::from_slice(&mut grad[b_off..bias_off], dim, code_dim);
    gb.gemm(1.0, &g, &z.transpose(), 1.0);
    for (acc, o) in grad[bias_off..bias_off + dim].iter_mut().zip(g_sum.iter()) {
        *acc += o;
    }
}

/// Value of a loss defined on generated samples, with its gradient with
/// respect to each sample and named components for logging.
#[derive(Debug, Clone, Default)]
pub struct SampleLossEval {
    pub value: f64,
    pub sample_grads: Vec<DVector<f64>>,
    pub parts: Vec<(&'static str, f64)>,
}

/// A loss on the samples `G(z_1, y), ..., G(z_n, y)` for one measurement.
pub trait SampleLoss: Send + Sync {
    fn evaluate(&self, y: &DVector<f64>, samples: &[DVector<f64>]) -> SampleLossEval;

    fn value(&self, y: &DVector<f64>, samples: &[DVector<f64>]) -> f64 {
        self.evaluate(y, samples).value
    }
}

/// One measurement, its fixed code draws, and the loss applied to the
/// resulting samples.
pub struct GeneratorTerm {
    pub y: DVector<f64>,
    pub codes: Vec<DVector<f64>>,
    pub loss: Box<dyn SampleLoss>,
}

/// `scale * sum_t loss_t(G_theta(codes_t, y_t))` as a function of `theta`.
pub struct GeneratorObjective {
    dim: usize,
    code_dim: usize,
    scale: f64,
    terms: Vec<GeneratorTerm>,
}

impl GeneratorObjective {
    pub fn new(dim: usize, code_dim: usize, scale: f64) -> Self {
        Self {
            dim,
            code_dim,
            scale,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, term: GeneratorTerm) -> Result<()> {
        ensure_dim("term measurement", term.y.len(), self.dim)?;
        for z in &term.codes {
            ensure_dim("term code", z.len(), self.code_dim)?;
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn terms(&self) -> &[GeneratorTerm] {
        &self.terms
    }

    fn generator(&self, params: &[f64]) -> AffineGenerator {
        let pv = ParamVector::new(AffineGenerator::layout(self.dim, self.code_dim), params.to_vec())
            .expect("objective parameters follow the generator layout");
        AffineGenerator::from_params(self.dim, self.code_dim, pv).expect("layout already checked")
    }

    /// Value, gradient, and the scaled sum of every named component.
    pub fn evaluate(&self, params: &[f64]) -> (f64, Vec<f64>, Vec<(&'static str, f64)>) {
        let gen = self.generator(params);
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        let mut parts: Vec<(&'static str, f64)> = Vec::new();
        for term in &self.terms {
            let samples = gen.forward_many(&term.y, &term.codes);
            let eval = term.loss.evaluate(&term.y, &samples);
            total += eval.value;
            for (name, v) in eval.parts {
                match parts.iter_mut().find(|(n, _)| *n == name) {
                    Some(slot) => slot.1 += v,
                    None => parts.push((name, v)),
                }
            }
            accumulate_output_grads(
                self.dim,
                self.code_dim,
                &mut grad,
                &eval.sample_grads,
                &term.codes,
                &term.y,
            );
        }
        grad.iter_mut().for_each(|g| *g *= self.scale);
        parts.iter_mut().for_each(|p| p.1 *= self.scale);
        (total * self.scale, grad, parts)
    }
}

impl Objective for GeneratorObjective {
    fn num_params(&self) -> usize {
        AffineGenerator::layout(self.dim, self.code_dim).total_len()
    }

    fn value(&self, params: &[f64]) -> f64 {
        let gen = self.generator(params);
        self.terms
            .iter()
            .map(|t| t.loss.value(&t.y, &gen.forward_many(&t.y, &t.codes)))
            .sum::<f64>()
            * self.scale
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (v, g, _) = self.evaluate(params);
        (v, g)
    }
}

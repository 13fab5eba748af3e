use super::ParamVector;
use crate::error::{Error, Result};

/// A scalar loss of a flat parameter vector with an analytic gradient.
///
/// Stop-gradient quantities are the implementor's business: `value` must
/// recompute them from `params` exactly as training does, while
/// `value_and_grad` treats them as constants.
pub trait Objective {
    fn num_params(&self) -> usize;

    fn value(&self, params: &[f64]) -> f64 {
        self.value_and_grad(params).0
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

/// Evaluates `loss` and its gradient at `params`, rejecting non-finite output.
pub fn grad_of<O: Objective + ?Sized>(loss: &O, params: &ParamVector) -> Result<(f64, Vec<f64>)> {
    if loss.num_params() != params.len() {
        return Err(Error::invalid(format!(
            "objective expects {} parameters, got {}",
            loss.num_params(),
            params.len()
        )));
    }
    let (value, grad) = loss.value_and_grad(params.values());
    if !value.is_finite() {
        return Err(Error::numerical(format!("loss value is not finite ({value})")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical(format!(
            "gradient entry {i} is not finite ({})",
            grad[i]
        )));
    }
    Ok((value, grad))
}

/// Central differences with step `rel_step * (1 + |p_i|)` per coordinate.
pub fn finite_difference_grad<O: Objective + ?Sized>(loss: &O, params: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let h = rel_step * (1.0 + params[i].abs());
            probe[i] = params[i] + h;
            let up = loss.value(&probe);
            probe[i] = params[i] - h;
            let down = loss.value(&probe);
            probe[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compares the analytic gradient with central differences.
///
/// Per-coordinate error is `|g - g_fd| / max(|g|, |g_fd|, 1e-3 * |g|_inf, 1e-10)`,
/// so coordinates that are tiny next to the largest one are judged on an
/// absolute scale tied to the gradient's magnitude.
pub fn check_gradient<O: Objective + ?Sized>(loss: &O, params: &[f64], rel_step: f64) -> GradCheck {
    let (_, analytic) = loss.value_and_grad(params);
    let numeric = finite_difference_grad(loss, params, rel_step);
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(1e-10);
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst.max_rel_err {
            worst = GradCheck {
                max_rel_err: err,
                worst_index: i,
            };
        }
    }
    worst
}

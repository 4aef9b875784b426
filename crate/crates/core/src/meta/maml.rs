use super::GradientMode;
use crate::autodiff::{hvp, ParameterSet};
use crate::error::Result;

/// A differentiable scalar objective over a parameter set.
pub trait Objective {
    fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, ParameterSet)>;

    /// Hessian-vector product at `params`; defaults to central differences
    /// of [`Objective::loss_and_grad`].
    fn hvp(&self, params: &ParameterSet, v: &ParameterSet) -> Result<ParameterSet> {
        hvp(|p: &ParameterSet| self.loss_and_grad(p), params, v)
    }
}

impl<F> Objective for F
where
    F: Fn(&ParameterSet) -> Result<(f64, ParameterSet)>,
{
    fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, ParameterSet)> {
        self(params)
    }
}

/// Result of differentiating the outer loss through the inner updates.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub outer_loss: f64,
    pub gradient: ParameterSet,
    pub adapted: ParameterSet,
}

/// Runs `steps` gradient-descent updates from `theta` and returns every
/// iterate, `theta` first.
pub fn adapt_params<G: Objective>(
    theta: &ParameterSet,
    inner: &G,
    steps: usize,
    alpha: f64,
) -> Result<Vec<ParameterSet>> {
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(theta.clone());
    for _ in 0..steps {
        let current = trajectory.last().expect("non-empty");
        let (_, g) = inner.loss_and_grad(current)?;
        let mut next = current.clone();
        next.axpy_in_place(-alpha, &g)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Gradient of `outer(adapt(theta))` with respect to `theta`.
///
/// `FdHvp` applies `(I - alpha H_k)` for every inner iterate in reverse
/// order, with `H_k` the inner-loss Hessian at `theta_k`. `FirstOrder` skips
/// those factors.
pub fn meta_gradient<G: Objective, O: Objective>(
    theta: &ParameterSet,
    inner: &G,
    outer: &O,
    steps: usize,
    alpha: f64,
    mode: GradientMode,
) -> Result<MetaGradient> {
    let trajectory = adapt_params(theta, inner, steps, alpha)?;
    let adapted = trajectory.last().expect("non-empty").clone();
    let (outer_loss, mut v) = outer.loss_and_grad(&adapted)?;
    if mode == GradientMode::FdHvp {
        for theta_k in trajectory[..steps].iter().rev() {
            let hv = inner.hvp(theta_k, &v)?;
            v.axpy_in_place(-alpha, &hv)?;
        }
    }
    Ok(MetaGradient {
        outer_loss,
        gradient: v,
        adapted,
    })
}

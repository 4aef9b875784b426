//! Small reverse-mode differentiation engine over dense `f64` arrays.

mod graph;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use params::{axpy, ParameterSet};
pub use tensor::Tensor;

use crate::error::Result;

/// Hessian-vector product by central differences of gradients.
///
/// The probe step is `1e-4 * (1 + |theta|_inf)` along `v / |v|_inf`; the
/// result is rescaled by `|v|_inf`, so `hvp(c v) = c hvp(v)` holds exactly
/// up to rounding and large `v` never pushes the probe out of the local
/// quadratic regime.
pub fn hvp<F>(grad_fn: F, params: &ParameterSet, v: &ParameterSet) -> Result<ParameterSet>
where
    F: Fn(&ParameterSet) -> Result<(f64, ParameterSet)>,
{
    params.check_schema(v)?;
    let vmax = v.max_abs();
    if vmax == 0.0 {
        return Ok(params.zeros_like());
    }
    let eps = 1e-4 * (1.0 + params.max_abs());
    let h = eps / vmax;
    let (_, g_plus) = grad_fn(&axpy(h, v, params)?)?;
    let (_, g_minus) = grad_fn(&axpy(-h, v, params)?)?;
    let mut out = axpy(-1.0, &g_minus, &g_plus)?;
    out = out.scaled(1.0 / (2.0 * h));
    Ok(out)
}

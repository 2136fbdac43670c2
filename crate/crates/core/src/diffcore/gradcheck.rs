//! Central finite-difference audit of analytic gradients, parameter group by
//! parameter group.

use crate::error::Result;

use super::params::ParamSet;
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GroupResult {
    pub name: String,
    pub elements: usize,
    pub worst_relative_error: f64,
    pub worst_element: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.worst_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= self.tolerance
    }

    pub fn failing_groups(&self) -> impl Iterator<Item = &GroupResult> {
        self.groups
            .iter()
            .filter(move |g| g.worst_relative_error > self.tolerance)
    }
}

/// Relative error scaled so that near-zero gradients compare absolutely.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Audit `analytic_grads` against central differences of `loss_fn`.
///
/// `loss_fn` must evaluate the loss from scratch for the given parameters;
/// the analytic gradients are whatever the backward pass produced for the
/// same parameter values. Parameters are restored exactly after probing.
pub fn finite_difference_audit<F>(
    params: &mut ParamSet,
    analytic_grads: &[Tensor],
    mut loss_fn: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let ids: Vec<_> = params.ids().collect();
    let mut groups = Vec::with_capacity(ids.len());
    for (gi, &id) in ids.iter().enumerate() {
        let n = params.value(id).numel();
        let mut worst = 0.0;
        let mut worst_element = 0;
        for e in 0..n {
            let original = params.value(id).data()[e];
            params.value_mut(id).data_mut()[e] = original + step;
            let plus = loss_fn(params)?;
            params.value_mut(id).data_mut()[e] = original - step;
            let minus = loss_fn(params)?;
            params.value_mut(id).data_mut()[e] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = analytic_grads[gi].data()[e];
            let err = relative_error(analytic, numeric);
            if err > worst {
                worst = err;
                worst_element = e;
            }
        }
        groups.push(GroupResult {
            name: params.name(id).to_string(),
            elements: n,
            worst_relative_error: worst,
            worst_element,
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance,
        step,
    })
}

use super::params::{Gradients, ParameterSet};
use crate::error::Result;

/// Denominator floor for relative errors, so that two near-zero gradients
/// are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar in `params`.
pub fn finite_difference_check<F>(
    params: &ParameterSet,
    analytic: &Gradients,
    epsilon: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for idx in 0..params.get(id).len() {
            let original = params.get(id).as_slice().expect("standard layout")[idx];
            set(&mut work, id, idx, original + epsilon);
            let up = loss(&work)?;
            set(&mut work, id, idx, original - epsilon);
            let down = loss(&work)?;
            set(&mut work, id, idx, original);
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.get(id).as_slice().expect("standard layout")[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst = Some((params.name(id).to_owned(), idx));
            }
        }
    }
    Ok(report)
}

fn set(params: &mut ParameterSet, id: super::params::ParamId, idx: usize, value: f64) {
    params.get_mut(id).as_slice_mut().expect("standard layout")[idx] = value;
}

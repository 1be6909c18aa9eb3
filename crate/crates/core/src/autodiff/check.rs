use super::{AutodiffError, Mat, ParamStore};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords: usize,
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` (one matrix per parameter, store order) against
/// central differences of `f` at `params`, coordinate by coordinate.
pub fn finite_diff_check<F>(
    f: F,
    params: &ParamStore,
    analytic: &[Mat],
    h: f64,
) -> Result<FdReport, AutodiffError>
where
    F: Fn(&ParamStore) -> f64,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(AutodiffError::BadStep(h));
    }
    if analytic.len() != params.len() {
        return Err(AutodiffError::Contract {
            op: "finite_diff_check",
            msg: format!("{} gradients for {} parameters", analytic.len(), params.len()),
        });
    }
    let first = f(params);
    let second = f(params);
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let id = super::ParamId(pi);
        if grad.raw_dim() != params.get(id).raw_dim() {
            return Err(AutodiffError::Shape {
                op: "finite_diff_check",
                lhs: [grad.nrows(), grad.ncols()],
                rhs: [params.get(id).nrows(), params.get(id).ncols()],
            });
        }
        let grad = grad.as_standard_layout();
        let n = grad.len();
        for k in 0..n {
            let orig = params.get(id).as_slice().expect("standard layout")[k];
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig + h;
            let up = f(&work);
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig - h;
            let down = f(&work);
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.as_slice().expect("standard layout")[k];
            let e = rel_error(a, numeric);
            report.coords += 1;
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = e;
                report.worst = Some((params.name(id).to_string(), k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

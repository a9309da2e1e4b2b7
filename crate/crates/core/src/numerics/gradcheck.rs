use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index of the parameter matrix holding the worst coordinate.
    pub worst_param: usize,
    /// (row, col) of the worst coordinate within that parameter.
    pub worst_coord: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central-difference oracle: compares `analytic` gradients of the scalar
/// function `f` against (f(p+eps) - f(p-eps)) / (2 eps) per coordinate.
///
/// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
/// `f` must be deterministic; two baseline evaluations that disagree
/// bitwise are rejected.
pub fn finite_difference_check<F>(
    f: F,
    params: &[Matrix],
    analytic: &[Matrix],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(
            "finite_difference_check",
            format!("eps must be in (0, 1e-2], got {eps}"),
        ));
    }
    if params.len() != analytic.len() {
        return Err(Error::invalid(
            "finite_difference_check",
            format!("{} params but {} analytic gradients", params.len(), analytic.len()),
        ));
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(Error::ShapeMismatch {
                op: "finite_difference_check",
                lhs: p.shape(),
                rhs: a.shape(),
            });
        }
    }

    let base1 = f(params)?;
    let base2 = f(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::invalid(
            "finite_difference_check",
            format!("f is not deterministic: {base1} vs {base2}"),
        ));
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_coord: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };

    for pi in 0..params.len() {
        for i in 0..params[pi].rows() {
            for j in 0..params[pi].cols() {
                let orig = params[pi].get(i, j);

                work[pi].set(i, j, orig + eps);
                let plus = f(&work)?;
                work[pi].set(i, j, orig - eps);
                let minus = f(&work)?;
                work[pi].set(i, j, orig);

                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[pi].get(i, j);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                let rel = (a - numeric).abs() / denom;
                report.coords_checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_param = pi;
                    report.worst_coord = (i, j);
                    report.worst_analytic = a;
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

//! Central finite-difference check of tape gradients.

use crate::error::Result;
use crate::tensor::{DenseMat, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in the order the parameters were given.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const GRAD_SCALE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

/// Compares tape gradients of `f` at `params` against central differences
/// with the given `step`. `f` receives a fresh tape and one `param` handle
/// per matrix and must return a scalar handle.
///
/// Any non-finite evaluation (or an error from `f`) is reported as a failure.
pub fn check_gradients<F>(f: F, params: &[DenseMat], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[DenseMat]| -> Option<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars).ok()?;
        let v = tape.scalar(out);
        v.is_finite().then_some(v)
    };

    let fail = || GradCheckReport {
        max_rel_error: vec![f64::INFINITY; params.len()],
        tol,
        passed: false,
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let Ok(out) = f(&mut tape, &vars) else {
        return fail();
    };
    let Ok(grads) = tape.backward(out) else {
        return fail();
    };

    let mut work: Vec<DenseMat> = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        let mut worst: f64 = 0.0;
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + step;
            let plus = eval(&work);
            work[p].data_mut()[k] = orig - step;
            let minus = eval(&work);
            work[p].data_mut()[k] = orig;
            let err = match (plus, minus) {
                (Some(a), Some(b)) => relative_error(analytic.data()[k], (a - b) / (2.0 * step)),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        max_rel_error.push(worst);
    }
    let passed = max_rel_error.iter().all(|&e| e < tol);
    GradCheckReport {
        max_rel_error,
        tol,
        passed,
    }
}

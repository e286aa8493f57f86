use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms, so finite-difference noise on near-zero entries does
/// not dominate the report.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_entry: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p + h) − f(p − h)) / 2h`, entry by entry.
///
/// `f` records a scalar loss on the given tape from the parameter leaves
/// it is handed, in the same order as `params`.
pub fn grad_check<F>(f: F, params: &[(String, Tensor<f64>)], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, v)| tape.param(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut values: Vec<Tensor<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut report = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[p]);
        if !analytic.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of {name}")));
        }
        let mut check = ParamCheck {
            name: name.clone(),
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            worst_entry: 0,
        };
        for k in 0..values[p].len() {
            let orig = values[p].data()[k];
            values[p].data_mut()[k] = orig + h;
            let plus = eval(&values)?;
            values[p].data_mut()[k] = orig - h;
            let minus = eval(&values)?;
            values[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            check.max_abs_err = check.max_abs_err.max(abs);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_entry = k;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tol,
    })
}

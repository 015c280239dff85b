//! Central finite-difference check of tape gradients.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of the backward rules it validates.

use crate::{Result, Tape, Tensor, Var};

/// Outcome of [`gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with a floor of `1e-3` on the denominator, so gradients
/// that are numerically zero are compared absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares `∂f/∂inputs` from [`Tape::backward`] with central differences of step `h`.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.scalar_value(root))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for e in 0..inputs[i].len() {
            let x0 = inputs[i].data()[e];
            probe[i].data_mut()[e] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[e] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[e] = x0;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic.data()[e], numeric);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    worst: (i, e),
                    analytic: analytic.data()[e],
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

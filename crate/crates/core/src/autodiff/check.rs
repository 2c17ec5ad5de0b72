//! Central finite-difference checks of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Finite-difference settings. The error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Input and element index of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape("gradient check needs a scalar function"));
    }
    Ok((tape, vars, out))
}

/// Compares the reverse-mode gradient of the scalar `f` at `inputs` with
/// central differences over every input element.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, cfg: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = evaluate(inputs, &f)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let x = input.values()[k];
            probe[i].values_mut()[k] = x + cfg.step;
            let (t, _, o) = evaluate(&probe, &f)?;
            let up = t.scalar(o);
            probe[i].values_mut()[k] = x - cfg.step;
            let (t, _, o) = evaluate(&probe, &f)?;
            let down = t.scalar(o);
            probe[i].values_mut()[k] = x;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[i][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {i} element {k}"
                )));
            }
            if err > report.max_rel_error || report.n_checked == 0 {
                report.max_rel_error = err;
                report.worst = (i, k);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.n_checked += 1;
        }
    }
    Ok(report)
}

//! Central finite-difference gradient checking in double precision.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst relative error found by [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives leaves for `inputs` (all tracked) and must return a scalar.
/// The error per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
/// At most `max_coords` coordinates per input are probed, spread evenly.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, max_coords: usize, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v);
        let n = inputs[idx].len();
        let stride = (n / max_coords.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let orig = probe[idx].data()[k];
            probe[idx].data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe[idx].data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe[idx].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

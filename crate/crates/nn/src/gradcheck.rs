//! Central finite-difference verification of tape gradients.

use crate::{NnError, Result, Tape, Tensor, Var};

/// Gradients below this magnitude are compared in absolute terms.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(NnError::NotScalar(t.shape()));
    }
    Ok(t.data()[0])
}

/// Compares the analytic gradient of the scalar built by `f` against
/// central differences with step `epsilon`, for every element of every
/// input. `f` receives one leaf per input, in order, and must be
/// deterministic.
///
/// The relative error of one element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], epsilon: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let original = probe[i].data()[j];
            probe[i].data_mut()[j] = original + epsilon;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = original - epsilon;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

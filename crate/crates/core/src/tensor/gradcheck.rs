//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numerical side never touches a backward rule: it only re-runs the
//! forward closure on perturbed copies of the inputs.

use rayon::prelude::*;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default perturbation for central differences in 64-bit mode.
pub const FD_STEP: f64 = 1e-5;
/// Times a step is divided by ten when a kink is detected inside it.
pub const KINK_REFINEMENTS: usize = 3;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct FdComparison {
    /// Norm-wise relative error per checked input.
    pub rel_errors: Vec<f64>,
}

impl FdComparison {
    pub fn worst(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// True when the one-sided slopes around a point disagree by more than
/// smooth curvature can explain, i.e. a ReLU or max kink lies within the step.
fn straddles_kink(forward: f64, backward: f64) -> bool {
    (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()) + 1e-7
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences for every element of every input whose `check` flag is set.
/// Unchecked inputs still enter the graph, as constants.
///
/// An element whose step straddles a kink is retried with a step ten times
/// smaller, up to [`KINK_REFINEMENTS`] times.
pub fn compare_gradients<F>(inputs: &[Tensor<f64>], check: &[bool], step: f64, f: F) -> Result<FdComparison>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(check)
        .map(|(t, &c)| tape.leaf(t.clone(), c))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let centre = eval(inputs)?;
    let mut rel_errors = Vec::new();
    for (idx, (&var, &c)) in vars.iter().zip(check).enumerate() {
        if !c {
            continue;
        }
        let n = inputs[idx].numel();
        let analytic = tape
            .grad(var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let numeric = (0..n)
            .into_par_iter()
            .map(|e| {
                let mut work = inputs.to_vec();
                let orig = work[idx].data()[e];
                let mut h = step;
                for attempt in 0..=KINK_REFINEMENTS {
                    work[idx].data_mut()[e] = orig + h;
                    let plus = eval(&work)?;
                    work[idx].data_mut()[e] = orig - h;
                    let minus = eval(&work)?;
                    let (fwd, bwd) = ((plus - centre) / h, (centre - minus) / h);
                    if attempt == KINK_REFINEMENTS || !straddles_kink(fwd, bwd) {
                        return Ok((plus - minus) / (2.0 * h));
                    }
                    h /= 10.0;
                }
                unreachable!()
            })
            .collect::<Result<Vec<f64>>>()?;
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(FdComparison { rel_errors })
}

//! Generator and discriminator objectives.
//!
//! Norms are normalised by element count and expectations are minibatch
//! means, so the weights keep their meaning at any patch or batch size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the basic (content) loss in the generator objective.
    pub alpha: f64,
    /// Weight of the infrared intensity term inside the basic loss.
    pub beta: f64,
    /// Weight of the salient discriminator in the reported discriminator loss.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 100.0,
            beta: 5.0,
            gamma: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(format!("loss weights must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Target probabilities of the least-squares objectives.
pub struct ProbabilityLabels;

impl ProbabilityLabels {
    /// What the generator wants both discriminators to say about fused images.
    pub const GENERATOR_TARGET: f64 = 1.0;
    pub const REAL: f64 = 1.0;
    pub const FAKE: f64 = 0.0;
}

/// Scalar values of every loss term for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_g: f64,
    pub l_adver: f64,
    pub l_basic: f64,
    pub l_infrared: f64,
    pub l_visible: f64,
    pub l_d: f64,
    pub l_ds: f64,
    pub l_dd: f64,
}

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "{what}: {} vs {}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Mean squared intensity difference to the infrared image.
pub fn loss_infrared<T: Real>(tape: &mut Tape<T>, fused: Var, ir: Var) -> Result<Var> {
    same_shape(tape, fused, ir, "loss_infrared")?;
    let d = tape.sub(fused, ir)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// Mean absolute difference of Sobel gradient magnitudes to the visible image.
pub fn loss_visible<T: Real>(tape: &mut Tape<T>, fused: Var, vi: Var) -> Result<Var> {
    same_shape(tape, fused, vi, "loss_visible")?;
    let gf = tape.sobel_gradient(fused)?;
    let gv = tape.sobel_gradient(vi)?;
    let d = tape.sub(gf, gv)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// `mean((p − target)²)`.
fn lsq<T: Real>(tape: &mut Tape<T>, p: Var, target: f64) -> Result<Var> {
    let d = tape.add_scalar(p, -target)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// Least-squares generator term against each present discriminator.
pub fn loss_adversarial_g<T: Real>(tape: &mut Tape<T>, probs: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(probs.len());
    for &p in probs {
        terms.push(lsq(tape, p, ProbabilityLabels::GENERATOR_TARGET)?);
    }
    sum_scalars(tape, &terms)
}

/// `½·mean((p_real − 1)²) + ½·mean(p_fake²)`; shared by both discriminators.
pub fn loss_discriminator<T: Real>(tape: &mut Tape<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    let r = lsq(tape, p_real, ProbabilityLabels::REAL)?;
    let f = lsq(tape, p_fake, ProbabilityLabels::FAKE)?;
    let s = tape.add(r, f)?;
    tape.scale(s, 0.5)
}

pub fn loss_d_salient<T: Real>(tape: &mut Tape<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    loss_discriminator(tape, p_real, p_fake)
}

pub fn loss_d_detailed<T: Real>(tape: &mut Tape<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    loss_discriminator(tape, p_real, p_fake)
}

fn sum_scalars<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.constant(crate::tensor::Tensor::scalar(T::zero())));
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Tape handles of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub adver: Var,
    pub basic: Var,
    pub infrared: Var,
    pub visible: Var,
}

impl GeneratorLoss {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item().to_f64_lossy();
        LossBreakdown {
            l_g: v(self.total),
            l_adver: v(self.adver),
            l_basic: v(self.basic),
            l_infrared: v(self.infrared),
            l_visible: v(self.visible),
            ..Default::default()
        }
    }
}

/// `L_G = L_adver + α·(L_visible + β·L_infrared)`. `probs` holds the
/// discriminator outputs on the fused batch; an ablated discriminator is
/// simply absent.
pub fn total_g<T: Real>(
    tape: &mut Tape<T>,
    fused: Var,
    ir: Var,
    vi: Var,
    probs: &[Var],
    w: &LossWeights,
) -> Result<GeneratorLoss> {
    let infrared = loss_infrared(tape, fused, ir)?;
    let visible = loss_visible(tape, fused, vi)?;
    let scaled_ir = tape.scale(infrared, w.beta)?;
    let basic = tape.add(visible, scaled_ir)?;
    let adver = loss_adversarial_g(tape, probs)?;
    let scaled_basic = tape.scale(basic, w.alpha)?;
    let total = tape.add(adver, scaled_basic)?;
    Ok(GeneratorLoss {
        total,
        adver,
        basic,
        infrared,
        visible,
    })
}

/// Discriminator losses from plain probabilities, `L_D = L_DD + γ·L_DS`.
/// Used for logging; training minimises each term on its own tape.
pub fn total_d(
    p_s_real: &[f64],
    p_s_fake: &[f64],
    p_d_real: &[f64],
    p_d_fake: &[f64],
    w: &LossWeights,
) -> LossBreakdown {
    let l_ds = lsq_plain(p_s_real, p_s_fake);
    let l_dd = lsq_plain(p_d_real, p_d_fake);
    LossBreakdown {
        l_d: l_dd + w.gamma * l_ds,
        l_ds,
        l_dd,
        ..Default::default()
    }
}

fn lsq_plain(real: &[f64], fake: &[f64]) -> f64 {
    let mean = |v: &[f64], target: f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|p| (p - target).powi(2)).sum::<f64>() / v.len() as f64
        }
    };
    0.5 * mean(real, ProbabilityLabels::REAL) + 0.5 * mean(fake, ProbabilityLabels::FAKE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn probs(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(Shape::new(v.len(), 1, 1, 1), v).unwrap())
    }

    #[test]
    fn adversarial_examples() {
        let mut tape = Tape::new();
        for (s, d, want) in [(1.0, 1.0, 0.0), (0.5, 0.5, 0.5), (0.9, 0.1, 0.82)] {
            let ps = probs(&mut tape, &[s]);
            let pd = probs(&mut tape, &[d]);
            let l = loss_adversarial_g(&mut tape, &[ps, pd]).unwrap();
            assert!((tape.value(l).item() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn discriminator_examples() {
        let mut tape = Tape::new();
        for (r, f, want) in [(1.0, 0.0, 0.0), (0.5, 0.5, 0.25), (0.8, 0.3, 0.065)] {
            let pr = probs(&mut tape, &[r]);
            let pf = probs(&mut tape, &[f]);
            let ls = loss_d_salient(&mut tape, pr, pf).unwrap();
            let ld = loss_d_detailed(&mut tape, pr, pf).unwrap();
            assert!((tape.value(ls).item() - want).abs() < 1e-9);
            assert!((tape.value(ld).item() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn total_d_examples() {
        let w = LossWeights::default();
        let perfect = total_d(&[1.0], &[0.0], &[1.0], &[0.0], &w);
        assert_eq!(perfect.l_d, 0.0);
        let blind = total_d(&[0.5], &[0.5], &[0.5], &[0.5], &w);
        assert!((blind.l_d - 1.5).abs() < 1e-9);
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights {
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }
}

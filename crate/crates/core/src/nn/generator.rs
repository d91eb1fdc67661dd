//! Multi-scale encoder / attention-based fusion / skip-connected decoder.

use serde::{Deserialize, Serialize};

use super::{init_params, Bound, Conv, ParamSet, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var, DEFAULT_DIV_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub scales: usize,
    pub base_channels: usize,
    pub eb_kernels: (usize, usize),
    pub leaky_slope: f64,
    pub use_sampling: bool,
    pub use_skip: bool,
    pub use_afs: bool,
    /// Floor on the magnitude of the fusion-weight denominator.
    pub afs_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            scales: 3,
            base_channels: 16,
            eb_kernels: (3, 5),
            leaky_slope: 0.2,
            use_sampling: true,
            use_skip: true,
            use_afs: true,
            afs_eps: DEFAULT_DIV_EPS,
        }
    }
}

impl GeneratorConfig {
    /// Feature channels at 1-based scale `k`.
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << (k - 1)
    }

    /// Required divisor of the input side.
    pub fn side_divisor(&self) -> usize {
        if self.use_sampling {
            1 << (self.scales - 1)
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(Error::Config(format!("generator needs at least 2 scales, got {}", self.scales)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let (a, b) = self.eb_kernels;
        if a % 2 == 0 || b % 2 == 0 {
            return Err(Error::Config(format!("encoder kernels must be odd, got {a} and {b}")));
        }
        if !(self.afs_eps > 0.0) {
            return Err(Error::Config("afs_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-scale feature maps `F^1..F^S`, finest first.
#[derive(Clone, Debug)]
pub struct FeatureMapSet {
    pub maps: Vec<Var>,
}

/// Intermediate values of the fusion rule at one scale.
#[derive(Clone, Copy, Debug)]
pub struct AfsTerms {
    /// Infrared weighting coefficients.
    pub mu: Var,
    /// Visible weighting coefficients.
    pub sigma: Var,
    pub f_ir: Var,
    pub f_vi: Var,
}

/// Everything a generator pass produced, for inspection.
#[derive(Clone, Debug)]
pub struct GeneratorTrace {
    pub features_ir: FeatureMapSet,
    pub features_vi: FeatureMapSet,
    pub fused: FeatureMapSet,
    /// Fusion-rule terms per scale, empty when the rule is ablated.
    pub afs: Vec<AfsTerms>,
    pub output: Var,
}

struct EncoderBranch {
    cb: Conv,
    /// `(conv_a, conv_b)` per scale.
    eb: Vec<(Conv, Conv)>,
}

struct DecoderBlock {
    conv_a: Conv,
    conv_b: Conv,
}

pub struct Generator {
    cfg: GeneratorConfig,
    enc_ir: EncoderBranch,
    enc_vi: EncoderBranch,
    afs: Vec<Conv>,
    /// Indexed by the finer scale they produce, `db[k - 1]` for `k = 1..S-1`.
    db: Vec<DecoderBlock>,
    out: Conv,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let branch = |tag: &str| {
            let cb = Conv::same(format!("enc.{tag}.cb"), 1, cfg.channels(1), 3);
            let eb = (1..=cfg.scales)
                .map(|k| {
                    let in_ch = if k == 1 { cfg.channels(1) } else { cfg.channels(k - 1) };
                    (
                        Conv::same(format!("enc.{tag}.eb{k}.conv_a"), in_ch, cfg.channels(k), cfg.eb_kernels.0),
                        Conv::same(format!("enc.{tag}.eb{k}.conv_b"), cfg.channels(k), cfg.channels(k), cfg.eb_kernels.1),
                    )
                })
                .collect();
            EncoderBranch { cb, eb }
        };
        let afs = if cfg.use_afs {
            (1..=cfg.scales)
                .map(|k| Conv::same(format!("afs{k}.conv"), 2 * cfg.channels(k), cfg.channels(k), 3))
                .collect()
        } else {
            Vec::new()
        };
        let db = (1..cfg.scales)
            .map(|k| {
                let up_ch = cfg.channels(k + 1);
                let in_ch = if cfg.use_skip { up_ch + cfg.channels(k) } else { up_ch };
                DecoderBlock {
                    conv_a: Conv::same(format!("dec.db{k}.conv_a"), in_ch, cfg.channels(k), 3),
                    conv_b: Conv::same(format!("dec.db{k}.conv_b"), cfg.channels(k), cfg.channels(k), 3),
                }
            })
            .collect();
        let out = Conv::same("dec.out", cfg.channels(1), 1, 3);
        Ok(Generator {
            enc_ir: branch("ir"),
            enc_vi: branch("vi"),
            afs,
            db,
            out,
            cfg,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for branch in [&self.enc_ir, &self.enc_vi] {
            branch.cb.specs(&mut specs);
            for (a, b) in &branch.eb {
                a.specs(&mut specs);
                b.specs(&mut specs);
            }
        }
        for c in &self.afs {
            c.specs(&mut specs);
        }
        for d in &self.db {
            d.conv_a.specs(&mut specs);
            d.conv_b.specs(&mut specs);
        }
        self.out.specs(&mut specs);
        specs
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        init_params(&self.param_specs(), seed, self.cfg.leaky_slope)
    }

    fn check_input<T: Real>(&self, tape: &Tape<T>, image: Var) -> Result<()> {
        let s = tape.shape(image);
        if s.c() != 1 {
            return Err(Error::Dimension(format!("generator expects single-channel input, got {s}")));
        }
        let d = self.cfg.side_divisor();
        if !s.h().is_multiple_of(d) || !s.w().is_multiple_of(d) || s.h() == 0 || s.w() == 0 {
            return Err(Error::Geometry(format!(
                "input {}×{} is not divisible by {d} for {} scales",
                s.h(),
                s.w(),
                self.cfg.scales
            )));
        }
        Ok(())
    }

    fn encode_branch<T: Real>(
        &self,
        branch: &EncoderBranch,
        tape: &mut Tape<T>,
        p: &Bound,
        image: Var,
    ) -> Result<FeatureMapSet> {
        self.check_input(tape, image)?;
        let slope = self.cfg.leaky_slope;
        let mut x = branch.cb.forward_act(tape, p, image, slope)?;
        let mut maps = Vec::with_capacity(self.cfg.scales);
        for (k, (a, b)) in branch.eb.iter().enumerate() {
            if k > 0 && self.cfg.use_sampling {
                x = tape.pool2d(x, crate::tensor::PoolKind::Max, 2, 2)?;
            }
            x = a.forward_act(tape, p, x, slope)?;
            x = b.forward_act(tape, p, x, slope)?;
            maps.push(x);
        }
        Ok(FeatureMapSet { maps })
    }

    /// Infrared-branch features.
    pub fn encode_ir<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<FeatureMapSet> {
        self.encode_branch(&self.enc_ir, tape, p, image)
    }

    /// Visible-branch features.
    pub fn encode_vi<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<FeatureMapSet> {
        self.encode_branch(&self.enc_vi, tape, p, image)
    }

    /// Fuses one scale. Returns the fused map and, unless the fusion rule is
    /// ablated, its intermediate terms.
    pub fn fuse_scale<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        k: usize,
        f_ir: Var,
        f_vi: Var,
    ) -> Result<(Var, Option<AfsTerms>)> {
        if tape.shape(f_ir) != tape.shape(f_vi) {
            return Err(Error::Dimension(format!(
                "fusion inputs differ: {} vs {}",
                tape.shape(f_ir),
                tape.shape(f_vi)
            )));
        }
        if !self.cfg.use_afs {
            let a = tape.scale(f_ir, 0.5)?;
            let b = tape.scale(f_vi, 0.5)?;
            return Ok((tape.add(a, b)?, None));
        }
        let terms = afs_weights(tape, f_ir, f_vi, self.cfg.afs_eps)?;
        let cat = tape.concat_channels(&[terms.f_ir, terms.f_vi])?;
        let fused = self.afs[k - 1].forward_act(tape, p, cat, self.cfg.leaky_slope)?;
        Ok((fused, Some(terms)))
    }

    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, fused: &FeatureMapSet) -> Result<Var> {
        if fused.maps.len() != self.cfg.scales {
            return Err(Error::Contract(format!(
                "decoder needs {} fused scales, got {}",
                self.cfg.scales,
                fused.maps.len()
            )));
        }
        let slope = self.cfg.leaky_slope;
        let mut x = fused.maps[self.cfg.scales - 1];
        for k in (1..self.cfg.scales).rev() {
            if self.cfg.use_sampling {
                x = tape.upsample_nearest(x, 2)?;
            }
            if self.cfg.use_skip {
                x = tape.concat_channels(&[x, fused.maps[k - 1]])?;
            }
            let block = &self.db[k - 1];
            x = block.conv_a.forward_act(tape, p, x, slope)?;
            x = block.conv_b.forward_act(tape, p, x, slope)?;
        }
        let y = self.out.forward(tape, p, x)?;
        tape.sigmoid(y)
    }

    pub fn forward_trace<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, ir: Var, vi: Var) -> Result<GeneratorTrace> {
        if tape.shape(ir) != tape.shape(vi) {
            return Err(Error::Dimension(format!(
                "infrared {} and visible {} inputs differ",
                tape.shape(ir),
                tape.shape(vi)
            )));
        }
        let features_ir = self.encode_ir(tape, p, ir)?;
        let features_vi = self.encode_vi(tape, p, vi)?;
        let mut fused = Vec::with_capacity(self.cfg.scales);
        let mut afs = Vec::new();
        for k in 1..=self.cfg.scales {
            let (f, terms) = self.fuse_scale(tape, p, k, features_ir.maps[k - 1], features_vi.maps[k - 1])?;
            fused.push(f);
            afs.extend(terms);
        }
        let fused = FeatureMapSet { maps: fused };
        let output = self.decode(tape, p, &fused)?;
        Ok(GeneratorTrace {
            features_ir,
            features_vi,
            fused,
            afs,
            output,
        })
    }

    /// Fused image in `(0, 1)` with the shape of the inputs.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, ir: Var, vi: Var) -> Result<Var> {
        Ok(self.forward_trace(tape, p, ir, vi)?.output)
    }
}

/// Difference-driven weighting: `μ = (F_ir − F_vi) / GMP(F_ir − F_vi)`
/// broadcast over space, `σ` likewise with the operands swapped, then
/// `f_ir = μ ⊙ F_ir + F_ir` and `f_vi = σ ⊙ F_vi + F_vi`. The global max is
/// taken per `(batch, channel)` plane.
pub fn afs_weights<T: Real>(tape: &mut Tape<T>, f_ir: Var, f_vi: Var, eps: f64) -> Result<AfsTerms> {
    let weights = |tape: &mut Tape<T>, a: Var, b: Var| -> Result<Var> {
        let diff = tape.sub(a, b)?;
        let peak = tape.global_pool(diff, crate::tensor::PoolKind::Max)?;
        tape.div_eps(diff, peak, eps)
    };
    let mu = weights(tape, f_ir, f_vi)?;
    let sigma = weights(tape, f_vi, f_ir)?;
    let mu_f = tape.mul(mu, f_ir)?;
    let f_ir_hat = tape.add(mu_f, f_ir)?;
    let sigma_f = tape.mul(sigma, f_vi)?;
    let f_vi_hat = tape.add(sigma_f, f_vi)?;
    Ok(AfsTerms {
        mu,
        sigma,
        f_ir: f_ir_hat,
        f_vi: f_vi_hat,
    })
}

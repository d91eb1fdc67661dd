//! The two structurally different discriminators.
//!
//! * Salient: multi-scale channel attention, then a global classifier that
//!   reduces the whole image to one probability.
//! * Detailed: multi-scale spatial attention, then a Markovian (patch)
//!   classifier whose grid of per-block probabilities is averaged.
//!
//! Both receive the raw image concatenated with their attention maps.

use serde::{Deserialize, Serialize};

use super::{init_params, Bound, Conv, Dense, ParamSet, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{window_out, PoolKind, Real, Shape, Tape, Var};

/// Lift channels at 1-based attention scale `k`.
fn lift_channels(k: usize) -> usize {
    8 << (k - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SalientConfig {
    pub attn_scales: usize,
    pub ca_kernel: usize,
    pub conv_channels: [usize; 4],
    pub fc_hidden: usize,
    pub leaky_slope: f64,
    pub use_attention: bool,
}

impl Default for SalientConfig {
    fn default() -> Self {
        SalientConfig {
            attn_scales: 3,
            ca_kernel: 3,
            conv_channels: [16, 32, 64, 128],
            fc_hidden: 128,
            leaky_slope: 0.2,
            use_attention: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetailedConfig {
    pub attn_scales: usize,
    pub sa_reduction: usize,
    pub patch_channels: [usize; 5],
    pub patch_strides: [usize; 5],
    pub patch_kernel: usize,
    /// Zero padding of every patch convolution.
    pub patch_padding: usize,
    pub leaky_slope: f64,
    pub use_attention: bool,
}

impl Default for DetailedConfig {
    fn default() -> Self {
        DetailedConfig {
            attn_scales: 3,
            sa_reduction: 4,
            patch_channels: [16, 32, 64, 128, 1],
            patch_strides: [2, 2, 2, 1, 1],
            patch_kernel: 4,
            patch_padding: 1,
            leaky_slope: 0.2,
            use_attention: true,
        }
    }
}

/// Per-scale single-channel attention maps at input resolution, stacked
/// along channels: shape `(b, scales, h, w)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMaps {
    pub maps: Var,
}

fn check_image<T: Real>(tape: &Tape<T>, image: Var, divisor: usize, what: &str) -> Result<Shape> {
    let s = tape.shape(image);
    if s.c() != 1 {
        return Err(Error::Dimension(format!("{what} expects a single-channel image, got {s}")));
    }
    if !s.h().is_multiple_of(divisor) || !s.w().is_multiple_of(divisor) || s.h() == 0 {
        return Err(Error::Geometry(format!(
            "{what} input {}×{} is not divisible by {divisor}",
            s.h(),
            s.w()
        )));
    }
    Ok(s)
}

/// Brings the image to attention scale `k` by average pooling.
fn downsample<T: Real>(tape: &mut Tape<T>, image: Var, k: usize) -> Result<Var> {
    let f = 1 << (k - 1);
    if f == 1 {
        Ok(image)
    } else {
        tape.pool2d(image, PoolKind::Avg, f, f)
    }
}

pub struct SalientDiscriminator {
    cfg: SalientConfig,
    input_side: usize,
    lift: Vec<Conv>,
    /// `(conv_a, conv_b)` per stage; `conv_b` has stride 2.
    stages: Vec<(Conv, Conv)>,
    fc1: Dense,
    fc2: Dense,
}

impl SalientDiscriminator {
    pub fn new(cfg: SalientConfig, input_side: usize) -> Result<Self> {
        if cfg.ca_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("ca_kernel must be odd, got {}", cfg.ca_kernel)));
        }
        if cfg.attn_scales == 0 || cfg.conv_channels.contains(&0) || cfg.fc_hidden == 0 {
            return Err(Error::Config("salient discriminator sizes must be positive".into()));
        }
        let divisor = Self::divisor(&cfg);
        if input_side == 0 || !input_side.is_multiple_of(divisor) {
            return Err(Error::Geometry(format!(
                "salient discriminator input side {input_side} is not divisible by {divisor}"
            )));
        }
        let lift = (1..=cfg.attn_scales)
            .map(|k| Conv::same(format!("msca.s{k}.lift"), 1, lift_channels(k), 3))
            .collect();
        let mut in_ch = if cfg.use_attention { 1 + cfg.attn_scales } else { 1 };
        let mut stages = Vec::new();
        for (i, &ch) in cfg.conv_channels.iter().enumerate() {
            let a = Conv::same(format!("dir.stage{}.conv_a", i + 1), in_ch, ch, 3);
            let mut b = Conv::same(format!("dir.stage{}.conv_b", i + 1), ch, ch, 3);
            b.stride = 2;
            stages.push((a, b));
            in_ch = ch;
        }
        let side = input_side / 16;
        let flat = cfg.conv_channels[3] * side * side;
        Ok(SalientDiscriminator {
            fc1: Dense {
                name: "dir.fc1".into(),
                n_in: flat,
                n_out: cfg.fc_hidden,
            },
            fc2: Dense {
                name: "dir.fc2".into(),
                n_in: cfg.fc_hidden,
                n_out: 1,
            },
            lift,
            stages,
            input_side,
            cfg,
        })
    }

    fn divisor(cfg: &SalientConfig) -> usize {
        16usize.max(1 << (cfg.attn_scales - 1))
    }

    pub fn config(&self) -> &SalientConfig {
        &self.cfg
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    /// Length of the flattened feature vector entering the first dense layer.
    pub fn flatten_len(&self) -> usize {
        self.fc1.n_in
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        if self.cfg.use_attention {
            for (k, lift) in self.lift.iter().enumerate() {
                lift.specs(&mut specs);
                specs.push(ParamSpec {
                    name: format!("msca.s{}.eca.weight", k + 1),
                    shape: Shape::new(1, 1, 1, self.cfg.ca_kernel),
                    fan_in: Some(self.cfg.ca_kernel),
                });
            }
        }
        for (a, b) in &self.stages {
            a.specs(&mut specs);
            b.specs(&mut specs);
        }
        self.fc1.specs(&mut specs);
        self.fc2.specs(&mut specs);
        specs
    }

    /// Channel attention weights for each scale, `(b, 8·2^(k−1), 1, 1)`.
    pub fn channel_attention<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Vec<Var>> {
        Ok(self.ms_ca_inner(tape, p, image)?.1)
    }

    fn ms_ca_inner<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<(AttentionMaps, Vec<Var>)> {
        check_image(tape, image, 1 << (self.cfg.attn_scales - 1), "MS-CA")?;
        let mut maps = Vec::with_capacity(self.cfg.attn_scales);
        let mut weights = Vec::with_capacity(self.cfg.attn_scales);
        for (i, lift) in self.lift.iter().enumerate() {
            let k = i + 1;
            let x = downsample(tape, image, k)?;
            let feat = lift.forward_act(tape, p, x, self.cfg.leaky_slope)?;
            let gap = tape.global_pool(feat, PoolKind::Avg)?;
            let eca = p.get(&format!("msca.s{k}.eca.weight"))?;
            let logits = tape.conv1d_channels(gap, eca)?;
            let w = tape.sigmoid(logits)?;
            let attended = tape.mul(feat, w)?;
            let up = tape.upsample_nearest(attended, 1 << (k - 1))?;
            maps.push(tape.channel_max_map(up)?);
            weights.push(w);
        }
        Ok((
            AttentionMaps {
                maps: tape.concat_channels(&maps)?,
            },
            weights,
        ))
    }

    /// Multi-scale channel attention maps.
    pub fn ms_ca<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<AttentionMaps> {
        Ok(self.ms_ca_inner(tape, p, image)?.0)
    }

    /// Features before flattening, `(b, conv_channels[3], side/16, side/16)`.
    pub fn features<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        let s = check_image(tape, image, Self::divisor(&self.cfg), "salient discriminator")?;
        if s.h() != self.input_side || s.w() != self.input_side {
            return Err(Error::Geometry(format!(
                "salient discriminator built for {0}×{0} inputs, got {1}×{2}",
                self.input_side,
                s.h(),
                s.w()
            )));
        }
        let mut x = if self.cfg.use_attention {
            let att = self.ms_ca(tape, p, image)?;
            tape.concat_channels(&[image, att.maps])?
        } else {
            image
        };
        let slope = self.cfg.leaky_slope;
        for (a, b) in &self.stages {
            x = a.forward_act(tape, p, x, slope)?;
            x = b.forward_act(tape, p, x, slope)?;
        }
        Ok(x)
    }

    /// Probability that each batch item is a real infrared image, `(b,1,1,1)`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        let x = self.features(tape, p, image)?;
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, self.cfg.leaky_slope)?;
        let logit = self.fc2.forward(tape, p, h)?;
        tape.sigmoid(logit)
    }
}

pub struct DetailedDiscriminator {
    cfg: DetailedConfig,
    lift: Vec<Conv>,
    /// `(reduce, expand)` 1×1 pair per scale.
    spatial: Vec<(Conv, Conv)>,
    patch: Vec<Conv>,
}

impl DetailedDiscriminator {
    pub fn new(cfg: DetailedConfig) -> Result<Self> {
        if cfg.attn_scales == 0 || cfg.sa_reduction == 0 || cfg.patch_kernel == 0 {
            return Err(Error::Config("detailed discriminator sizes must be positive".into()));
        }
        if cfg.patch_channels[4] != 1 {
            return Err(Error::Config("the last patch layer must have one channel".into()));
        }
        let mut lift = Vec::new();
        let mut spatial = Vec::new();
        for k in 1..=cfg.attn_scales {
            let ch = lift_channels(k);
            if !ch.is_multiple_of(cfg.sa_reduction) {
                return Err(Error::Config(format!(
                    "{ch} attention channels are not divisible by sa_reduction {}",
                    cfg.sa_reduction
                )));
            }
            lift.push(Conv::same(format!("mssa.s{k}.lift"), 1, ch, 3));
            spatial.push((
                Conv::same(format!("mssa.s{k}.reduce"), ch, ch / cfg.sa_reduction, 1),
                Conv::same(format!("mssa.s{k}.expand"), ch / cfg.sa_reduction, ch, 1),
            ));
        }
        let mut in_ch = if cfg.use_attention { 1 + cfg.attn_scales } else { 1 };
        let mut patch = Vec::new();
        for (i, (&ch, &stride)) in cfg.patch_channels.iter().zip(&cfg.patch_strides).enumerate() {
            patch.push(Conv {
                name: format!("dvi.conv{}", i + 1),
                in_ch,
                out_ch: ch,
                k: cfg.patch_kernel,
                stride,
                pad: cfg.patch_padding,
            });
            in_ch = ch;
        }
        Ok(DetailedDiscriminator {
            cfg,
            lift,
            spatial,
            patch,
        })
    }

    pub fn config(&self) -> &DetailedConfig {
        &self.cfg
    }

    /// Spatial sizes after each patch layer for a square input.
    pub fn patch_sizes(&self, side: usize) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(self.patch.len());
        let mut s = side;
        for c in &self.patch {
            s = window_out(s, c.k, c.stride, c.pad)?;
            sizes.push(s);
        }
        Ok(sizes)
    }

    /// Input-pixel interval `[lo, hi]` (inclusive, unclipped) that the
    /// patch cell at `index` sees through the patch layers alone.
    pub fn patch_receptive_field(&self, index: usize) -> (isize, isize) {
        let (mut lo, mut hi) = (index as isize, index as isize);
        for c in self.patch.iter().rev() {
            lo = lo * c.stride as isize - c.pad as isize;
            hi = hi * c.stride as isize - c.pad as isize + c.k as isize - 1;
        }
        (lo, hi)
    }

    /// Input interval `[lo, hi]` along one axis that can influence patch
    /// cell `index` of a `side`-long input, attention branch included.
    pub fn influence_interval(&self, index: usize, side: usize) -> (usize, usize) {
        let last = side as isize - 1;
        let (lo, hi) = self.patch_receptive_field(index);
        let (mut a, mut b) = (lo.clamp(0, last), hi.clamp(0, last));
        if self.cfg.use_attention {
            // a coarse pixel at scale k sees its 3×3 neighbourhood of f×f cells
            let (pa, pb) = (a, b);
            for k in 1..=self.cfg.attn_scales {
                let f = 1isize << (k - 1);
                a = a.min((pa.div_euclid(f) - 1) * f);
                b = b.max((pb.div_euclid(f) + 2) * f - 1);
            }
        }
        (a.clamp(0, last) as usize, b.clamp(0, last) as usize)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        if self.cfg.use_attention {
            for (lift, (reduce, expand)) in self.lift.iter().zip(&self.spatial) {
                lift.specs(&mut specs);
                reduce.specs(&mut specs);
                expand.specs(&mut specs);
            }
        }
        for c in &self.patch {
            c.specs(&mut specs);
        }
        specs
    }

    /// Spatial attention weights per scale at that scale's resolution.
    pub fn spatial_attention<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Vec<Var>> {
        Ok(self.ms_sa_inner(tape, p, image)?.1)
    }

    fn ms_sa_inner<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<(AttentionMaps, Vec<Var>)> {
        check_image(tape, image, 1 << (self.cfg.attn_scales - 1), "MS-SA")?;
        let slope = self.cfg.leaky_slope;
        let mut maps = Vec::with_capacity(self.cfg.attn_scales);
        let mut weights = Vec::with_capacity(self.cfg.attn_scales);
        for (i, (lift, (reduce, expand))) in self.lift.iter().zip(&self.spatial).enumerate() {
            let k = i + 1;
            let x = downsample(tape, image, k)?;
            let feat = lift.forward_act(tape, p, x, slope)?;
            let r = reduce.forward_act(tape, p, feat, slope)?;
            let e = expand.forward(tape, p, r)?;
            let w = tape.sigmoid(e)?;
            let attended = tape.mul(feat, w)?;
            let up = tape.upsample_nearest(attended, 1 << (k - 1))?;
            maps.push(tape.channel_max_map(up)?);
            weights.push(w);
        }
        Ok((
            AttentionMaps {
                maps: tape.concat_channels(&maps)?,
            },
            weights,
        ))
    }

    /// Multi-scale spatial attention maps.
    pub fn ms_sa<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<AttentionMaps> {
        Ok(self.ms_sa_inner(tape, p, image)?.0)
    }

    /// Per-block probabilities `(b, 1, ph, pw)` and their spatial mean `(b,1,1,1)`.
    pub fn forward_patches<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<(Var, Var)> {
        let divisor = if self.cfg.use_attention { 1 << (self.cfg.attn_scales - 1) } else { 1 };
        check_image(tape, image, divisor, "detailed discriminator")?;
        let mut x = if self.cfg.use_attention {
            let att = self.ms_sa(tape, p, image)?;
            tape.concat_channels(&[image, att.maps])?
        } else {
            image
        };
        let last = self.patch.len() - 1;
        for (i, c) in self.patch.iter().enumerate() {
            x = c.forward(tape, p, x)?;
            x = if i == last {
                tape.sigmoid(x)?
            } else {
                tape.leaky_relu(x, self.cfg.leaky_slope)?
            };
        }
        let prob = tape.global_pool(x, PoolKind::Avg)?;
        Ok((x, prob))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        Ok(self.forward_patches(tape, p, image)?.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Salient,
    Detailed,
}

/// Either discriminator behind one interface, for the ablation variants
/// that put a given architecture on the other modality.
pub enum Discriminator {
    Salient(SalientDiscriminator),
    Detailed(DetailedDiscriminator),
}

impl Discriminator {
    pub fn build(kind: DiscriminatorKind, salient: &SalientConfig, detailed: &DetailedConfig, side: usize) -> Result<Self> {
        Ok(match kind {
            DiscriminatorKind::Salient => Discriminator::Salient(SalientDiscriminator::new(salient.clone(), side)?),
            DiscriminatorKind::Detailed => Discriminator::Detailed(DetailedDiscriminator::new(detailed.clone())?),
        })
    }

    pub fn kind(&self) -> DiscriminatorKind {
        match self {
            Discriminator::Salient(_) => DiscriminatorKind::Salient,
            Discriminator::Detailed(_) => DiscriminatorKind::Detailed,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Discriminator::Salient(d) => d.param_specs(),
            Discriminator::Detailed(d) => d.param_specs(),
        }
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let slope = match self {
            Discriminator::Salient(d) => d.cfg.leaky_slope,
            Discriminator::Detailed(d) => d.cfg.leaky_slope,
        };
        init_params(&self.param_specs(), seed, slope)
    }

    /// Probability `(b,1,1,1)` that each item is real.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        match self {
            Discriminator::Salient(d) => d.forward(tape, p, image),
            Discriminator::Detailed(d) => d.forward(tape, p, image),
        }
    }
}

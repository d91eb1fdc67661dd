//! Alternating adversarial training.
//!
//! One cycle updates the visible-side discriminator `n_dd` times, the
//! infrared-side discriminator `n_ds` times and the generator `n_g` times,
//! each update on the next batch. Only the network being updated receives
//! gradients; the others enter its tape as constants.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{crop_patches, save_checkpoint, Checkpoint, GrayImage};
use crate::loss::{self, LossWeights};
use crate::nn::{
    DetailedConfig, Discriminator, DiscriminatorKind, Generator, GeneratorConfig, ParamSet, SalientConfig,
};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::Rng;
use crate::tensor::{Shape, Tape, Tensor};

/// Updates per cycle of each sub-network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub n_dd: usize,
    pub n_ds: usize,
    pub n_g: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            n_dd: 4,
            n_ds: 2,
            n_g: 2,
        }
    }
}

/// Which discriminators exist and which architecture sits on each modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscriminatorVariant {
    /// Salient on infrared, detailed on visible.
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Detailed on visible only.
    #[serde(rename = "only_DD")]
    OnlyDd,
    /// Detailed architecture on both modalities.
    #[serde(rename = "dual_DD")]
    DualDd,
    /// Salient on infrared only.
    #[serde(rename = "only_DS")]
    OnlyDs,
    /// Salient architecture on both modalities.
    #[serde(rename = "dual_DS")]
    DualDs,
    /// Both discriminators without their attention modules.
    #[serde(rename = "no_attention")]
    NoAttention,
}

impl DiscriminatorVariant {
    /// Architectures of the infrared slot (`D_S` phases) and the visible
    /// slot (`D_D` phases).
    pub fn slots(self) -> (Option<DiscriminatorKind>, Option<DiscriminatorKind>) {
        use DiscriminatorKind::{Detailed, Salient};
        match self {
            Self::Full | Self::NoAttention => (Some(Salient), Some(Detailed)),
            Self::OnlyDd => (None, Some(Detailed)),
            Self::DualDd => (Some(Detailed), Some(Detailed)),
            Self::OnlyDs => (Some(Salient), None),
            Self::DualDs => (Some(Salient), Some(Salient)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub patch_size: usize,
    pub weights: LossWeights,
    pub discriminators: DiscriminatorVariant,
    /// Checkpoint every this many epochs; the final epoch always writes one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            lr: 2e-4,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            patch_size: 128,
            weights: LossWeights::default(),
            discriminators: DiscriminatorVariant::Full,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size, patch_size and checkpoint_every must be positive".into(),
            ));
        }
        if s.n_dd == 0 || s.n_ds == 0 || s.n_g == 0 {
            return Err(Error::Config(format!("schedule counts must be positive, got {s:?}")));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.weights.validate()
    }
}

/// Architecture of all three networks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub generator: GeneratorConfig,
    pub salient: SalientConfig,
    pub detailed: DetailedConfig,
}

/// Named ablation, covering both generator switches and discriminator
/// combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoSampling,
    NoSkip,
    NoAfs,
    OnlyDd,
    DualDd,
    OnlyDs,
    DualDs,
    NoAttention,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoSampling,
        Variant::NoSkip,
        Variant::NoAfs,
        Variant::OnlyDd,
        Variant::DualDd,
        Variant::OnlyDs,
        Variant::DualDs,
        Variant::NoAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSampling => "no_sampling",
            Variant::NoSkip => "no_skip",
            Variant::NoAfs => "no_afs",
            Variant::OnlyDd => "only_DD",
            Variant::DualDd => "dual_DD",
            Variant::OnlyDs => "only_DS",
            Variant::DualDs => "dual_DS",
            Variant::NoAttention => "no_attention",
        }
    }

    pub fn apply(self, nets: &mut NetworkConfig, train: &mut TrainConfig) {
        match self {
            Variant::Full => {}
            Variant::NoSampling => nets.generator.use_sampling = false,
            Variant::NoSkip => nets.generator.use_skip = false,
            Variant::NoAfs => nets.generator.use_afs = false,
            Variant::OnlyDd => train.discriminators = DiscriminatorVariant::OnlyDd,
            Variant::DualDd => train.discriminators = DiscriminatorVariant::DualDd,
            Variant::OnlyDs => train.discriminators = DiscriminatorVariant::OnlyDs,
            Variant::DualDs => train.discriminators = DiscriminatorVariant::DualDs,
            Variant::NoAttention => {
                train.discriminators = DiscriminatorVariant::NoAttention;
                nets.salient.use_attention = false;
                nets.detailed.use_attention = false;
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Visible-slot discriminator update.
    DD,
    /// Infrared-slot discriminator update.
    DS,
    G,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::DD => "D_D",
            Phase::DS => "D_S",
            Phase::G => "G",
        }
    }
}

/// One update. Columns a phase does not compute are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub l_g: Option<f64>,
    pub l_adver: Option<f64>,
    pub l_basic: f64,
    pub l_infrared: f64,
    pub l_visible: f64,
    pub l_ds: Option<f64>,
    pub l_dd: Option<f64>,
    pub p_s_real: Option<f64>,
    pub p_s_fake: Option<f64>,
    pub p_d_real: Option<f64>,
    pub p_d_fake: Option<f64>,
    /// Seconds since training started; not part of the CSV.
    pub elapsed: f64,
}

pub const LOG_HEADER: &str =
    "step,phase,L_G,L_adver,L_basic,L_infrared,L_visible,L_DS,L_DD,p_S_real,p_S_fake,p_D_real,p_D_fake";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub complete_cycles: usize,
    pub truncated_cycles: usize,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let cols = [
                r.step.to_string(),
                r.phase.label().to_string(),
                cell(r.l_g),
                cell(r.l_adver),
                cell(Some(r.l_basic)),
                cell(Some(r.l_infrared)),
                cell(Some(r.l_visible)),
                cell(r.l_ds),
                cell(r.l_dd),
                cell(r.p_s_real),
                cell(r.p_s_fake),
                cell(r.p_d_real),
                cell(r.p_d_fake),
            ];
            s.push_str(&cols.join(","));
            s.push('\n');
        }
        s
    }

    pub fn phase_counts(&self) -> (usize, usize, usize) {
        let n = |p| self.rows.iter().filter(|r| r.phase == p).count();
        (n(Phase::DD), n(Phase::DS), n(Phase::G))
    }

    /// Mean of every logged column over the rows of `epoch` that have it.
    pub fn epoch_means(&self, epoch: usize) -> EpochSummary {
        let rows: Vec<&LogRow> = self.rows.iter().filter(|r| r.epoch == epoch).collect();
        let mean = |f: &dyn Fn(&LogRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        EpochSummary {
            epoch,
            steps: rows.len(),
            l_g: mean(&|r| r.l_g),
            l_adver: mean(&|r| r.l_adver),
            l_basic: mean(&|r| Some(r.l_basic)),
            l_infrared: mean(&|r| Some(r.l_infrared)),
            l_visible: mean(&|r| Some(r.l_visible)),
            l_ds: mean(&|r| r.l_ds),
            l_dd: mean(&|r| r.l_dd),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub l_g: Option<f64>,
    pub l_adver: Option<f64>,
    pub l_basic: Option<f64>,
    pub l_infrared: Option<f64>,
    pub l_visible: Option<f64>,
    pub l_ds: Option<f64>,
    pub l_dd: Option<f64>,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |x: Option<f64>| x.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into());
        write!(
            f,
            "epoch {:>3}  steps {:>4}  L_G {}  L_adver {}  L_basic {}  L_infrared {}  L_visible {}  L_DS {}  L_DD {}",
            self.epoch + 1,
            self.steps,
            v(self.l_g),
            v(self.l_adver),
            v(self.l_basic),
            v(self.l_infrared),
            v(self.l_visible),
            v(self.l_ds),
            v(self.l_dd)
        )
    }
}

/// Aligned minibatch, each tensor `(b, 1, side, side)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ir: Tensor<f32>,
    pub vi: Tensor<f32>,
}

impl Batch {
    pub fn from_patches(patches: &[&(GrayImage, GrayImage)]) -> Result<Self> {
        let ir: Vec<Tensor<f32>> = patches.iter().map(|p| p.0.to_tensor()).collect();
        let vi: Vec<Tensor<f32>> = patches.iter().map(|p| p.1.to_tensor()).collect();
        Ok(Batch {
            ir: Tensor::stack(&ir.iter().collect::<Vec<_>>())?,
            vi: Tensor::stack(&vi.iter().collect::<Vec<_>>())?,
        })
    }
}

/// One discriminator with its parameters and optimizer.
pub struct DiscriminatorSlot {
    pub net: Discriminator,
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
}

/// All networks, parameters and optimizer states of a run.
pub struct GanState {
    pub generator: Generator,
    pub g_params: ParamSet<f32>,
    pub g_adam: AdamState<f32>,
    /// Infrared-side discriminator, updated in `D_S` phases.
    pub d_s: Option<DiscriminatorSlot>,
    /// Visible-side discriminator, updated in `D_D` phases.
    pub d_d: Option<DiscriminatorSlot>,
}

impl GanState {
    pub fn new(nets: &NetworkConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(nets.generator.clone())?;
        let div = nets.generator.side_divisor();
        if !cfg.patch_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "patch_size {} is not divisible by {div} as the generator scales require",
                cfg.patch_size
            )));
        }
        let g_params = generator.init_params(Rng::derive(cfg.seed, "init/generator").next_u64());
        let g_adam = AdamState::new(cfg.adam, &g_params);
        let (ir_kind, vi_kind) = cfg.discriminators.slots();
        let (mut salient, mut detailed) = (nets.salient.clone(), nets.detailed.clone());
        if cfg.discriminators == DiscriminatorVariant::NoAttention {
            salient.use_attention = false;
            detailed.use_attention = false;
        }
        let slot = |kind: Option<DiscriminatorKind>, label: &str| -> Result<Option<DiscriminatorSlot>> {
            let Some(kind) = kind else { return Ok(None) };
            let net = Discriminator::build(kind, &salient, &detailed, cfg.patch_size)?;
            if let Discriminator::Detailed(d) = &net {
                d.patch_sizes(cfg.patch_size)?;
            }
            let params = net.init_params(Rng::derive(cfg.seed, label).next_u64());
            let adam = AdamState::new(cfg.adam, &params);
            Ok(Some(DiscriminatorSlot { net, params, adam }))
        };
        Ok(GanState {
            generator,
            g_params,
            g_adam,
            d_s: slot(ir_kind, "init/d_s")?,
            d_d: slot(vi_kind, "init/d_d")?,
        })
    }

    /// Generator output for a batch with no gradient bookkeeping.
    pub fn fuse(&self, ir: &Tensor<f32>, vi: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let p = self.g_params.bind(&mut tape, false);
        let (a, b) = (tape.constant(ir.clone()), tape.constant(vi.clone()));
        let out = self.generator.forward(&mut tape, &p, a, b)?;
        Ok(tape.value(out).clone())
    }

    pub fn to_checkpoint(&self, nets: &NetworkConfig, cfg: &TrainConfig, epoch: usize) -> Checkpoint {
        let mut c = Checkpoint::new(nets.clone(), cfg.clone(), epoch);
        c.nets.insert("generator".into(), self.g_params.clone());
        if let Some(s) = &self.d_s {
            c.nets.insert("d_s".into(), s.params.clone());
        }
        if let Some(s) = &self.d_d {
            c.nets.insert("d_d".into(), s.params.clone());
        }
        c
    }
}

fn mean_f64(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel().max(1) as f64
}

/// Basic-loss terms of `fused` against the batch, as plain numbers.
fn basic_terms(fused: &Tensor<f32>, batch: &Batch, w: &LossWeights) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let f = tape.constant(fused.clone());
    let ir = tape.constant(batch.ir.clone());
    let vi = tape.constant(batch.vi.clone());
    let li = loss::loss_infrared(&mut tape, f, ir)?;
    let lv = loss::loss_visible(&mut tape, f, vi)?;
    let (li, lv) = (tape.value(li).item() as f64, tape.value(lv).item() as f64);
    Ok((lv + w.beta * li, li, lv))
}

/// One discriminator update; returns `(loss, p_real, p_fake)`.
fn update_discriminator(
    slot: &mut DiscriminatorSlot,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let p = slot.params.bind(&mut tape, true);
    let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
    let pr = slot.net.forward(&mut tape, &p, r)?;
    let pf = slot.net.forward(&mut tape, &p, f)?;
    let l = loss::loss_discriminator(&mut tape, pr, pf)?;
    tape.backward(l)?;
    let grads = p.grads(&tape);
    slot.adam.step(&mut slot.params, &grads, lr)?;
    Ok((
        tape.value(l).item() as f64,
        mean_f64(tape.value(pr)),
        mean_f64(tape.value(pf)),
    ))
}

struct GeneratorStep {
    breakdown: loss::LossBreakdown,
    p_s_fake: Option<f64>,
    p_d_fake: Option<f64>,
}

fn update_generator(state: &mut GanState, batch: &Batch, cfg: &TrainConfig) -> Result<GeneratorStep> {
    let mut tape = Tape::new();
    let gp = state.g_params.bind(&mut tape, true);
    let ir = tape.constant(batch.ir.clone());
    let vi = tape.constant(batch.vi.clone());
    let fused = state.generator.forward(&mut tape, &gp, ir, vi)?;
    let mut probs = Vec::new();
    let mut slot_prob = |slot: &Option<DiscriminatorSlot>, tape: &mut Tape<f32>| -> Result<Option<crate::tensor::Var>> {
        let Some(s) = slot else { return Ok(None) };
        let dp = s.params.bind(tape, false);
        let p = s.net.forward(tape, &dp, fused)?;
        probs.push(p);
        Ok(Some(p))
    };
    let ps = slot_prob(&state.d_s, &mut tape)?;
    let pd = slot_prob(&state.d_d, &mut tape)?;
    let g = loss::total_g(&mut tape, fused, ir, vi, &probs, &cfg.weights)?;
    tape.backward(g.total)?;
    let grads = gp.grads(&tape);
    state.g_adam.step(&mut state.g_params, &grads, cfg.lr)?;
    Ok(GeneratorStep {
        breakdown: g.breakdown(&tape),
        p_s_fake: ps.map(|v| mean_f64(tape.value(v))),
        p_d_fake: pd.map(|v| mean_f64(tape.value(v))),
    })
}

/// Runs one cycle, pulling a fresh batch for every update. Returns `false`
/// when the batches ran out before the cycle finished.
pub fn train_cycle(
    state: &mut GanState,
    batches: &mut dyn Iterator<Item = Result<Batch>>,
    cfg: &TrainConfig,
    epoch: usize,
    log: &mut TrainLog,
    clock: Instant,
) -> Result<bool> {
    train_cycle_observed(state, batches, cfg, epoch, log, clock, &mut |_, _| {})
}

/// [`train_cycle`], calling `on_update` after every parameter update.
pub fn train_cycle_observed(
    state: &mut GanState,
    batches: &mut dyn Iterator<Item = Result<Batch>>,
    cfg: &TrainConfig,
    epoch: usize,
    log: &mut TrainLog,
    clock: Instant,
    on_update: &mut dyn FnMut(&GanState, &LogRow),
) -> Result<bool> {
    let s = cfg.schedule;
    let mut plan = Vec::with_capacity(s.n_dd + s.n_ds + s.n_g);
    if state.d_d.is_some() {
        plan.extend(std::iter::repeat_n(Phase::DD, s.n_dd));
    }
    if state.d_s.is_some() {
        plan.extend(std::iter::repeat_n(Phase::DS, s.n_ds));
    }
    plan.extend(std::iter::repeat_n(Phase::G, s.n_g));

    for phase in plan {
        let Some(batch) = batches.next().transpose()? else {
            log.truncated_cycles += 1;
            log::info!("epoch {}: cycle truncated before {} update", epoch + 1, phase.label());
            return Ok(false);
        };
        let mut row = LogRow {
            step: log.rows.len() + 1,
            epoch,
            phase,
            l_g: None,
            l_adver: None,
            l_basic: 0.0,
            l_infrared: 0.0,
            l_visible: 0.0,
            l_ds: None,
            l_dd: None,
            p_s_real: None,
            p_s_fake: None,
            p_d_real: None,
            p_d_fake: None,
            elapsed: 0.0,
        };
        match phase {
            Phase::DD | Phase::DS => {
                let fake = state.fuse(&batch.ir, &batch.vi)?;
                (row.l_basic, row.l_infrared, row.l_visible) = basic_terms(&fake, &batch, &cfg.weights)?;
                let (slot, real) = if phase == Phase::DD {
                    (state.d_d.as_mut(), &batch.vi)
                } else {
                    (state.d_s.as_mut(), &batch.ir)
                };
                let slot = slot.expect("phase planned only for present slots");
                let (l, pr, pf) = update_discriminator(slot, real, &fake, cfg.lr)?;
                if phase == Phase::DD {
                    (row.l_dd, row.p_d_real, row.p_d_fake) = (Some(l), Some(pr), Some(pf));
                } else {
                    (row.l_ds, row.p_s_real, row.p_s_fake) = (Some(l), Some(pr), Some(pf));
                }
            }
            Phase::G => {
                let g = update_generator(state, &batch, cfg)?;
                let b = g.breakdown;
                row.l_g = Some(b.l_g);
                row.l_adver = Some(b.l_adver);
                (row.l_basic, row.l_infrared, row.l_visible) = (b.l_basic, b.l_infrared, b.l_visible);
                row.p_s_fake = g.p_s_fake;
                row.p_d_fake = g.p_d_fake;
            }
        }
        row.elapsed = clock.elapsed().as_secs_f64();
        on_update(state, &row);
        log.rows.push(row);
    }
    log.complete_cycles += 1;
    Ok(true)
}

/// Grid patches of every pair, side `patch_size`, stride `patch_size`, in
/// dataset order with each image's patches shuffled by `seed`.
pub fn prepare_patches(
    pairs: &[(GrayImage, GrayImage)],
    patch_size: usize,
    seed: u64,
) -> Result<Vec<(GrayImage, GrayImage)>> {
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        out.extend(crop_patches(pair, patch_size, patch_size, seed.wrapping_add(i as u64))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no {patch_size}×{patch_size} patches could be cut from {} image pairs",
            pairs.len()
        )));
    }
    Ok(out)
}

/// Batches of one epoch in a seeded shuffled order.
pub fn epoch_batches<'a>(
    patches: &'a [(GrayImage, GrayImage)],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> impl Iterator<Item = Result<Batch>> + 'a {
    let mut order: Vec<usize> = (0..patches.len()).collect();
    Rng::derive(seed, &format!("epoch/{epoch}")).shuffle(&mut order);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| {
        let items: Vec<&(GrayImage, GrayImage)> = idx.iter().map(|&i| &patches[i]).collect();
        Batch::from_patches(&items)
    })
}

/// Where [`train`] writes its files.
#[derive(Clone, Debug)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{:03}.ckpt", epoch + 1))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }
}

/// Trains on the patches of `pairs`. With `out`, checkpoints are written
/// every `checkpoint_every` epochs and at the end, and the CSV log at the
/// end. `on_epoch` sees each finished epoch.
pub fn train(
    pairs: &[(GrayImage, GrayImage)],
    nets: &NetworkConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<(GanState, TrainLog)> {
    let mut state = GanState::new(nets, cfg)?;
    let patches = prepare_patches(pairs, cfg.patch_size, cfg.seed)?;
    let paths = out.map(|d| OutputPaths { dir: d.to_path_buf() });
    if let Some(p) = &paths {
        crate::io::ensure_dir(&p.dir)?;
    }
    let per_epoch = patches.len().div_ceil(cfg.batch_size);
    let s = cfg.schedule;
    if per_epoch < s.n_dd + s.n_ds + s.n_g {
        log::warn!(
            "{} patches in batches of {} give {per_epoch} updates per epoch, fewer than one full cycle; \
             the generator may never be updated",
            patches.len(),
            cfg.batch_size
        );
    }
    let mut log = TrainLog::default();
    let clock = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut batches = epoch_batches(&patches, cfg.batch_size, cfg.seed, epoch);
        while train_cycle(&mut state, &mut batches, cfg, epoch, &mut log, clock)? {}
        on_epoch(&log.epoch_means(epoch));
        let last = epoch + 1 == cfg.epochs;
        if let Some(p) = &paths {
            if (epoch + 1) % cfg.checkpoint_every == 0 || last {
                save_checkpoint(&state.to_checkpoint(nets, cfg, epoch + 1), p.epoch_checkpoint(epoch))?;
            }
        }
    }
    if let Some(p) = &paths {
        save_checkpoint(&state.to_checkpoint(nets, cfg, cfg.epochs), p.final_checkpoint())?;
        std::fs::write(p.log(), log.to_csv()).map_err(|e| Error::io(p.log(), e))?;
    }
    Ok((state, log))
}

/// Fuses a full-size pair, replicating edges up to the generator's side
/// divisor and cropping back.
pub fn fuse_images(generator: &Generator, params: &ParamSet<f32>, ir: &GrayImage, vi: &GrayImage) -> Result<GrayImage> {
    if (ir.width(), ir.height()) != (vi.width(), vi.height()) {
        return Err(Error::Data(format!(
            "infrared is {}×{} but visible is {}×{}",
            ir.width(),
            ir.height(),
            vi.width(),
            vi.height()
        )));
    }
    let div = generator.config().side_divisor();
    let (w, h) = (ir.width(), ir.height());
    let (pw, ph) = (w.div_ceil(div) * div, h.div_ceil(div) * div);
    let pad = |img: &GrayImage| {
        Tensor::from_fn(Shape::new(1, 1, ph, pw), |[_, _, y, x]| img.get(x.min(w - 1), y.min(h - 1)) as f32)
    };
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let (a, b) = (tape.constant(pad(ir)), tape.constant(pad(vi)));
    let out = generator.forward(&mut tape, &p, a, b)?;
    GrayImage::from_tensor(tape.value(out), 0)?.crop(0, 0, w, h)
}

//! The finite-difference gradient suite: every differentiable operation,
//! the attention and fusion modules, the losses and the three networks,
//! checked in 64-bit against central differences.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::loss::{self, LossWeights};
use crate::nn::{
    init_params, Bound, DetailedConfig, DetailedDiscriminator, Generator, GeneratorConfig, ParamSet, SalientConfig,
    SalientDiscriminator,
};
use crate::nn::generator::afs_weights;
use crate::rng::Rng;
use crate::tensor::gradcheck::{compare_gradients, FD_STEP};
use crate::tensor::{Activation, PoolKind, Shape, Tape, Tensor, Var};

/// Tolerance on the norm-wise relative error of single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for whole networks.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Finite-difference step for whole networks. Smaller than the operation
/// step because a network has thousands of leaky-ReLU and max kinks and a
/// wider central difference straddles one far more often.
pub const NETWORK_FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    /// Spatial side of operation inputs.
    pub side: usize,
    /// Seeds per operation.
    pub op_seeds: u64,
    /// Seeds per network.
    pub network_seeds: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            side: 6,
            op_seeds: 20,
            network_seeds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    /// Worst relative error over all seeds and checked inputs.
    pub worst: f64,
    pub seeds: u64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Inputs, which of them to check, and the scalar function under test.
pub struct Problem {
    pub inputs: Vec<Tensor<f64>>,
    pub check: Vec<bool>,
    #[allow(clippy::type_complexity)]
    pub f: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync>,
}

type Builder = fn(u64, usize) -> Problem;

/// Distinct, well-separated values in `[-1, 1]` away from zero, so that max
/// selections and sign changes stay put under the finite-difference step.
pub fn spread(shape: Shape, seed: u64) -> Tensor<f64> {
    let n = shape.numel();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + (2 * i + 1) as f64 / n as f64).collect();
    if n % 2 == 1 {
        // the middle element would sit on zero
        v[n / 2] = 0.5 / n as f64;
    }
    Rng::derive(seed, "spread").shuffle(&mut v);
    Tensor::new(shape, v).expect("length matches")
}

fn uniform(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = Rng::derive(seed, "uniform");
    Tensor::from_fn(shape, |_| r.uniform_in(lo, hi))
}

/// `Σ r ⊙ y` with a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output element.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(uniform(tape.shape(y), seed ^ 0x5eed, -1.0, 1.0));
    let m = tape.mul(y, r)?;
    tape.sum(m)
}

fn sh(b: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(b, c, h, w)
}

macro_rules! problem {
    ($inputs:expr, $check:expr, |$tape:ident, $v:ident| $body:expr) => {
        Problem {
            inputs: $inputs,
            check: $check,
            f: Box::new(move |$tape: &mut Tape<f64>, $v: &[Var]| $body),
        }
    };
}

fn unary(seed: u64, side: usize, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> Problem {
    problem!(vec![spread(sh(2, 2, side, side), seed)], vec![true], |t, v| {
        let y = op(t, v[0])?;
        project(t, y, seed)
    })
}

fn conv_case(seed: u64, side: usize, k: usize, stride: usize, pad: usize) -> Problem {
    let inputs = vec![
        uniform(sh(2, 2, side, side), seed, -1.0, 1.0),
        uniform(sh(3, 2, k, k), seed + 1, -0.5, 0.5),
        uniform(sh(1, 3, 1, 1), seed + 2, -0.5, 0.5),
    ];
    problem!(inputs, vec![true; 3], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
        project(t, y, seed)
    })
}

fn binary(seed: u64, side: usize, broadcast: bool, op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Problem {
    let b_shape = if broadcast { sh(2, 3, 1, 1) } else { sh(2, 3, side, side) };
    let mut b = uniform(b_shape, seed + 1, 0.3, 1.0);
    let mut r = Rng::derive(seed, "sign");
    for v in b.data_mut() {
        if r.below(2) == 0 {
            *v = -*v;
        }
    }
    let inputs = vec![uniform(sh(2, 3, side, side), seed, -1.0, 1.0), b];
    problem!(inputs, vec![true; 2], |t, v| {
        let y = op(t, v[0], v[1])?;
        project(t, y, seed)
    })
}

fn op_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("conv2d_k3_s1", |s, n| conv_case(s, n, 3, 1, 1)),
        ("conv2d_k5_s1", |s, n| conv_case(s, n, 5, 1, 2)),
        ("conv2d_k4_s2", |s, n| conv_case(s, n, 4, 2, 1)),
        ("conv2d_k1", |s, n| conv_case(s, n, 1, 1, 0)),
        ("conv1d_channels", |s, _| {
            let inputs = vec![uniform(sh(2, 7, 1, 1), s, -1.0, 1.0), uniform(sh(1, 1, 1, 3), s + 1, -1.0, 1.0)];
            problem!(inputs, vec![true; 2], |t, v| {
                let y = t.conv1d_channels(v[0], v[1])?;
                project(t, y, s)
            })
        }),
        ("max_pool", |s, n| unary(s, n, |t, x| t.pool2d(x, PoolKind::Max, 2, 2))),
        ("avg_pool", |s, n| unary(s, n, |t, x| t.pool2d(x, PoolKind::Avg, 2, 2))),
        ("global_max_pool", |s, n| unary(s, n, |t, x| t.global_pool(x, PoolKind::Max))),
        ("global_avg_pool", |s, n| unary(s, n, |t, x| t.global_pool(x, PoolKind::Avg))),
        ("upsample_nearest", |s, n| unary(s, n, |t, x| t.upsample_nearest(x, 2))),
        ("dense", |s, _| {
            let inputs = vec![
                uniform(sh(2, 5, 1, 1), s, -1.0, 1.0),
                uniform(sh(3, 5, 1, 1), s + 1, -1.0, 1.0),
                uniform(sh(1, 3, 1, 1), s + 2, -1.0, 1.0),
            ];
            problem!(inputs, vec![true; 3], |t, v| {
                let y = t.dense(v[0], v[1], v[2])?;
                project(t, y, s)
            })
        }),
        ("leaky_relu", |s, n| unary(s, n, |t, x| t.leaky_relu(x, 0.2))),
        ("tanh", |s, n| unary(s, n, |t, x| t.activation(x, Activation::Tanh))),
        ("sigmoid", |s, n| unary(s, n, |t, x| t.sigmoid(x))),
        ("concat_channels", |s, n| {
            let inputs = vec![spread(sh(2, 1, n, n), s), spread(sh(2, 3, n, n), s + 1)];
            problem!(inputs, vec![true; 2], |t, v| {
                let y = t.concat_channels(&[v[0], v[1]])?;
                project(t, y, s)
            })
        }),
        ("split_channels", |s, n| {
            problem!(vec![spread(sh(2, 4, n, n), s)], vec![true], |t, v| {
                let parts = t.split_channels(v[0], &[1, 3])?;
                let a = project(t, parts[0], s)?;
                let b = project(t, parts[1], s + 7)?;
                t.add(a, b)
            })
        }),
        ("add", |s, n| binary(s, n, false, |t, a, b| t.add(a, b))),
        ("sub_broadcast", |s, n| binary(s, n, true, |t, a, b| t.sub(a, b))),
        ("mul", |s, n| binary(s, n, false, |t, a, b| t.mul(a, b))),
        ("mul_broadcast", |s, n| binary(s, n, true, |t, a, b| t.mul(a, b))),
        ("div_eps", |s, n| binary(s, n, false, |t, a, b| t.div_eps(a, b, 1e-8))),
        ("div_eps_broadcast", |s, n| binary(s, n, true, |t, a, b| t.div_eps(a, b, 1e-8))),
        ("channel_max_map", |s, n| unary(s, n, |t, x| t.channel_max_map(x))),
        ("sobel_gradient", |s, n| {
            problem!(vec![uniform(sh(2, 1, n, n), s, 0.0, 1.0)], vec![true], |t, v| {
                let y = t.sobel_gradient(v[0])?;
                project(t, y, s)
            })
        }),
        ("scale", |s, n| unary(s, n, |t, x| t.scale(x, -1.7))),
        ("add_scalar", |s, n| unary(s, n, |t, x| t.add_scalar(x, 0.3))),
        ("square", |s, n| unary(s, n, |t, x| t.square(x))),
        ("abs", |s, n| unary(s, n, |t, x| t.abs(x))),
        ("sum", |s, n| {
            problem!(vec![spread(sh(2, 2, n, n), s)], vec![true], |t, v| {
                let q = t.square(v[0])?;
                t.sum(q)
            })
        }),
        ("mean", |s, n| {
            problem!(vec![spread(sh(2, 2, n, n), s)], vec![true], |t, v| {
                let q = t.square(v[0])?;
                t.mean(q)
            })
        }),
    ]
}

fn module_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("afs_weights", |s, n| {
            // differences of two grids would tie at the max; keep one input continuous
            let inputs = vec![spread(sh(2, 3, n, n), s), uniform(sh(2, 3, n, n), s + 1, -0.3, 0.3)];
            problem!(inputs, vec![true; 2], |t, v| {
                let a = afs_weights(t, v[0], v[1], 1e-8)?;
                let (x, y) = (project(t, a.f_ir, s)?, project(t, a.f_vi, s + 3)?);
                t.add(x, y)
            })
        }),
        ("loss_infrared", |s, n| {
            let inputs = vec![uniform(sh(2, 1, n, n), s, 0.0, 1.0), uniform(sh(2, 1, n, n), s + 1, 0.0, 1.0)];
            problem!(inputs, vec![true, false], |t, v| loss::loss_infrared(t, v[0], v[1]))
        }),
        ("loss_visible", |s, n| {
            let inputs = vec![uniform(sh(2, 1, n, n), s, 0.0, 1.0), uniform(sh(2, 1, n, n), s + 1, 0.0, 1.0)];
            problem!(inputs, vec![true, false], |t, v| loss::loss_visible(t, v[0], v[1]))
        }),
        ("loss_adversarial_g", |s, _| {
            let inputs = vec![uniform(sh(3, 1, 1, 1), s, 0.05, 0.95), uniform(sh(3, 1, 1, 1), s + 1, 0.05, 0.95)];
            problem!(inputs, vec![true; 2], |t, v| loss::loss_adversarial_g(t, &[v[0], v[1]]))
        }),
        ("loss_discriminator", |s, _| {
            let inputs = vec![uniform(sh(3, 1, 1, 1), s, 0.05, 0.95), uniform(sh(3, 1, 1, 1), s + 1, 0.05, 0.95)];
            problem!(inputs, vec![true; 2], |t, v| loss::loss_discriminator(t, v[0], v[1]))
        }),
        ("total_g", |s, n| {
            let inputs = vec![
                uniform(sh(2, 1, n, n), s, 0.0, 1.0),
                uniform(sh(2, 1, n, n), s + 1, 0.0, 1.0),
                uniform(sh(2, 1, n, n), s + 2, 0.0, 1.0),
                uniform(sh(2, 1, 1, 1), s + 3, 0.05, 0.95),
                uniform(sh(2, 1, 1, 1), s + 4, 0.05, 0.95),
            ];
            problem!(inputs, vec![true, false, false, true, true], |t, v| {
                Ok(loss::total_g(t, v[0], v[1], v[2], &[v[3], v[4]], &LossWeights::default())?.total)
            })
        }),
    ]
}

/// Parameters plus images as checked inputs; the closure rebinds the
/// parameter handles by name.
fn network_problem(
    params: ParamSet<f64>,
    images: Vec<Tensor<f64>>,
    seed: u64,
    forward: impl Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var> + Sync + 'static,
) -> Problem {
    let names: Vec<String> = params.names().cloned().collect();
    let n_img = images.len();
    let mut inputs = images;
    inputs.extend(names.iter().map(|n| params.get(n).expect("listed name").clone()));
    let check = vec![true; inputs.len()];
    Problem {
        inputs,
        check,
        f: Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(v[n_img..].iter().copied()));
            let y = forward(t, &bound, &v[..n_img])?;
            project(t, y, seed)
        }),
    }
}

fn network_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("generator", |s, _| {
            let g = Generator::new(GeneratorConfig {
                scales: 2,
                base_channels: 4,
                ..Default::default()
            })
            .expect("valid config");
            let p = g.init_params(s);
            let imgs = vec![uniform(sh(1, 1, 8, 8), s, 0.0, 1.0), uniform(sh(1, 1, 8, 8), s + 1, 0.0, 1.0)];
            network_problem(p, imgs, s, move |t, b, x| g.forward(t, b, x[0], x[1]))
        }),
        ("d_salient", |s, _| {
            let cfg = SalientConfig {
                conv_channels: [2, 2, 4, 4],
                fc_hidden: 4,
                ..Default::default()
            };
            let d = SalientDiscriminator::new(cfg, 16).expect("valid config");
            let p = init_params(&d.param_specs(), s, 0.2);
            network_problem(p, vec![uniform(sh(1, 1, 16, 16), s, 0.0, 1.0)], s, move |t, b, x| {
                d.forward(t, b, x[0])
            })
        }),
        ("d_detailed", |s, _| {
            let cfg = DetailedConfig {
                patch_channels: [2, 2, 4, 4, 1],
                patch_strides: [2, 1, 1, 1, 1],
                ..Default::default()
            };
            let d = DetailedDiscriminator::new(cfg).expect("valid config");
            let p = init_params(&d.param_specs(), s, 0.2);
            network_problem(p, vec![uniform(sh(1, 1, 16, 16), s, 0.0, 1.0)], s, move |t, b, x| {
                Ok(d.forward_patches(t, b, x[0])?.0)
            })
        }),
    ]
}

fn run_case(name: &str, build: Builder, seeds: u64, side: usize, tolerance: f64, step: f64) -> Result<CaseResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let p = build(seed, side);
        let cmp = compare_gradients(&p.inputs, &p.check, step, &p.f)?;
        worst = worst.max(cmp.worst());
    }
    Ok(CaseResult {
        name: name.to_string(),
        worst,
        seeds,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Names of every case in suite order.
pub fn case_names() -> Vec<&'static str> {
    op_cases()
        .into_iter()
        .chain(module_cases())
        .chain(network_cases())
        .map(|(n, _)| n)
        .collect()
}

/// Runs the whole suite, calling `on_case` after each case.
pub fn run_suite(cfg: &SuiteConfig, mut on_case: impl FnMut(&CaseResult)) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let side = cfg.side.max(4);
    for (name, build) in op_cases().into_iter().chain(module_cases()) {
        let r = run_case(name, build, cfg.op_seeds, side, OP_TOLERANCE, FD_STEP)?;
        on_case(&r);
        out.push(r);
    }
    for (name, build) in network_cases() {
        let r = run_case(name, build, cfg.network_seeds, side, NETWORK_TOLERANCE, NETWORK_FD_STEP)?;
        on_case(&r);
        out.push(r);
    }
    Ok(out)
}

/// Runs a single case by name.
pub fn run_named(cfg: &SuiteConfig, name: &str) -> Result<CaseResult> {
    let side = cfg.side.max(4);
    if let Some((n, b)) = op_cases().into_iter().chain(module_cases()).find(|(n, _)| *n == name) {
        return run_case(n, b, cfg.op_seeds, side, OP_TOLERANCE, FD_STEP);
    }
    match network_cases().into_iter().find(|(n, _)| *n == name) {
        Some((n, b)) => run_case(n, b, cfg.network_seeds, side, NETWORK_TOLERANCE, NETWORK_FD_STEP),
        None => Err(Error::Config(format!("unknown gradient case `{name}`"))),
    }
}

/// Outcome of perturbing every `block`×`block` tile of an input once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LocalityReport {
    pub tiles: usize,
    /// Output cells that changed although the tile lies outside their
    /// predicted influence region.
    pub violations: usize,
    /// `(tile, cell)` pairs whose output stayed bitwise identical.
    pub unchanged: usize,
    /// Tiles whose perturbation changed no output at all.
    pub inert_tiles: usize,
}

/// Perturbs each tile of `image` (single item, single channel) and compares
/// every output cell bitwise with the clean output. `region(cy, cx)` gives
/// the inclusive `((y0, y1), (x0, x1))` input box allowed to affect a cell.
pub fn block_perturbation(
    image: &Tensor<f64>,
    block: usize,
    forward: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync,
    region: impl Fn(usize, usize) -> ((usize, usize), (usize, usize)) + Sync,
) -> Result<LocalityReport> {
    use rayon::prelude::*;

    let s = image.shape();
    if s.b() != 1 || s.c() != 1 || block == 0 || !s.h().is_multiple_of(block) || !s.w().is_multiple_of(block) {
        return Err(Error::Geometry(format!("cannot tile {s} into {block}×{block} blocks")));
    }
    let clean = forward(image)?;
    let (gh, gw) = (clean.shape().h(), clean.shape().w());
    let tiles: Vec<(usize, usize)> = (0..s.h() / block)
        .flat_map(|ty| (0..s.w() / block).map(move |tx| (ty * block, tx * block)))
        .collect();
    let per_tile = tiles
        .par_iter()
        .map(|&(y0, x0)| {
            let mut t = image.clone();
            let w = s.w();
            for y in y0..y0 + block {
                for v in &mut t.data_mut()[y * w + x0..y * w + x0 + block] {
                    *v = 1.25 - *v;
                }
            }
            let out = forward(&t)?;
            let mut r = LocalityReport {
                tiles: 1,
                ..Default::default()
            };
            let mut any = false;
            for cy in 0..gh {
                for cx in 0..gw {
                    let changed = out.get([0, 0, cy, cx]).to_bits() != clean.get([0, 0, cy, cx]).to_bits();
                    any |= changed;
                    if !changed {
                        r.unchanged += 1;
                        continue;
                    }
                    let ((ya, yb), (xa, xb)) = region(cy, cx);
                    let overlaps = y0 <= yb && y0 + block > ya && x0 <= xb && x0 + block > xa;
                    if !overlaps {
                        r.violations += 1;
                    }
                }
            }
            r.inert_tiles = usize::from(!any);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_tile.into_iter().fold(LocalityReport::default(), |a, r| LocalityReport {
        tiles: a.tiles + r.tiles,
        violations: a.violations + r.violations,
        unchanged: a.unchanged + r.unchanged,
        inert_tiles: a.inert_tiles + r.inert_tiles,
    }))
}

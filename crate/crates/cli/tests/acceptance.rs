//! Acceptance run: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use hafuse::io::{encode_pgm, parse_pgm, synth_pair, Checkpoint, GrayImage, SynthPair};
use hafuse::loss::{
    loss_adversarial_g, loss_d_detailed, loss_d_salient, loss_infrared, loss_visible, total_d, total_g, LossWeights,
};
use hafuse::metrics::{
    add_gaussian_noise, evaluate_pair, metric_ag, metric_en, metric_fmi, metric_sf, metric_uiqi, metric_vif,
    sobel_energy, MetricReport, NoiseSpec,
};
use hafuse::nn::generator::afs_weights;
use hafuse::nn::{init_params, DetailedConfig, DetailedDiscriminator, ParamSet, SalientConfig, SalientDiscriminator};
use hafuse::rng::Rng;
use hafuse::tensor::{fault, Shape, Tape, Tensor, DEFAULT_DIV_EPS};
use hafuse::train::{
    epoch_batches, fuse_images, prepare_patches, train, train_cycle_observed, GanState, LogRow, NetworkConfig,
    Phase, TrainConfig, TrainLog,
};
use hafuse::verify::{block_perturbation, run_named, run_suite, SuiteConfig};

type Outcome = Result<String, String>;
type Pairs = Vec<(GrayImage, GrayImage)>;
type Criterion = (&'static str, fn() -> Outcome);

fn need(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn lib<T>(r: hafuse::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random(shape: Shape, rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_in(lo, hi))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cfg = SuiteConfig::default();
    let results = lib(run_suite(&cfg, |_| {}))?;
    let seconds = start.elapsed().as_secs_f64();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {:.2e}", r.name, r.worst))
        .collect();
    let ops = results.iter().filter(|r| r.tolerance < 1e-3);
    let worst_op = ops.clone().map(|r| r.worst).fold(0.0, f64::max);
    let worst_net = results.iter().filter(|r| r.tolerance >= 1e-3).map(|r| r.worst).fold(0.0, f64::max);
    need(failed.is_empty(), format!("failing cases: {}", failed.join(", ")))?;
    need(ops.clone().all(|r| r.seeds >= 20), "fewer than 20 seeds per op")?;
    need(seconds < 300.0, format!("suite took {seconds:.0}s"))?;

    fault::set_sobel_sign_flip(true);
    let faulty = run_named(&cfg, "sobel_gradient");
    fault::set_sobel_sign_flip(false);
    let faulty = lib(faulty)?;
    need(!faulty.passed(), "sign-flipped Sobel backward was not detected")?;
    Ok(format!(
        "{} cases, worst op {worst_op:.1e} (< 1e-4), worst network {worst_net:.1e} (< 1e-3), {seconds:.1}s; \
         injected Sobel fault caught ({:.1e})",
        results.len(),
        faulty.worst
    ))
}

fn afs_oracle() -> Outcome {
    let t = |v: [f64; 4]| Tensor::from_f64(Shape::new(1, 1, 2, 2), &v).unwrap();
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t([2.0, 0.0, 0.0, 0.0]));
    let b = tape.constant(t([0.0, 1.0, 0.0, 0.0]));
    let terms = lib(afs_weights(&mut tape, a, b, DEFAULT_DIV_EPS))?;
    let expect = [
        ("mu", terms.mu, [1.0, -0.5, 0.0, 0.0]),
        ("sigma", terms.sigma, [-2.0, 1.0, 0.0, 0.0]),
        ("f_ir", terms.f_ir, [4.0, 0.0, 0.0, 0.0]),
        ("f_vi", terms.f_vi, [0.0, 2.0, 0.0, 0.0]),
    ];
    for (name, v, want) in expect {
        let got = tape.value(v).data();
        need(
            got.iter().zip(want).all(|(g, w)| close(*g, w, 1e-12)),
            format!("{name} = {got:?}, expected {want:?}"),
        )?;
    }

    let mut rng = Rng::new(21);
    let shape = Shape::new(2, 3, 5, 5);
    let x = random(shape, &mut rng, -1.0, 1.0);
    let y = random(shape, &mut rng, -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let (xa, xb) = (tape.constant(x.clone()), tape.constant(x.clone()));
    let same = lib(afs_weights(&mut tape, xa, xb, DEFAULT_DIV_EPS))?;
    need(
        tape.value(same.mu).data().iter().chain(tape.value(same.sigma).data()).all(|v| *v == 0.0),
        "identical inputs gave nonzero weights",
    )?;

    let yv = tape_const(&mut tape, &y);
    let base = lib(afs_weights(&mut tape, xa, yv, DEFAULT_DIV_EPS))?;
    let (mu0, s0) = (tape.value(base.mu).clone(), tape.value(base.sigma).clone());
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 2.0, 10.0] {
        let scale = |t: &Tensor<f64>| Tensor::from_fn(t.shape(), |i| lambda * t.get(i));
        let (sx, sy) = (tape_const(&mut tape, &scale(&x)), tape_const(&mut tape, &scale(&y)));
        let s = lib(afs_weights(&mut tape, sx, sy, DEFAULT_DIV_EPS))?;
        for (r, w) in [(&mu0, s.mu), (&s0, s.sigma)] {
            for (u, v) in r.data().iter().zip(tape.value(w).data()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    need(worst <= 1e-10, format!("λ-scaling changed the weights by {worst:.1e}"))?;
    Ok(format!("hand example exact to 1e-12, identical inputs → 0, λ ∈ {{0.5,2,10}} invariance {worst:.1e}"))
}

fn tape_const(tape: &mut Tape<f64>, t: &Tensor<f64>) -> hafuse::tensor::Var {
    tape.constant(t.clone())
}

fn probs(tape: &mut Tape<f64>, v: &[f64]) -> hafuse::tensor::Var {
    tape.constant(Tensor::from_f64(Shape::new(v.len(), 1, 1, 1), v).unwrap())
}

fn loss_identities() -> Outcome {
    let w = LossWeights::default();
    need((w.alpha, w.beta, w.gamma) == (100.0, 5.0, 5.0), "default weights are not (100, 5, 5)")?;
    let mut rng = Rng::new(33);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let shape = Shape::new(2, 1, 8, 8);
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(random(shape, &mut rng, 0.0, 1.0));
        let ir = tape.constant(random(shape, &mut rng, 0.0, 1.0));
        let vi = tape.constant(random(shape, &mut rng, 0.0, 1.0));
        let ps: Vec<f64> = (0..2).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let pd: Vec<f64> = (0..2).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let (vs, vd) = (probs(&mut tape, &ps), probs(&mut tape, &pd));
        let b = lib(total_g(&mut tape, f, ir, vi, &[vs, vd], &w))?.breakdown(&tape);
        let err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(err(b.l_g, b.l_adver + w.alpha * b.l_basic));
        worst = worst.max(err(b.l_basic, b.l_visible + w.beta * b.l_infrared));
        let r: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let d = total_d(&r[..1], &r[1..2], &r[2..3], &r[3..], &w);
        worst = worst.max(err(d.l_d, d.l_dd + w.gamma * d.l_ds));
    }
    need(worst <= 1e-6, format!("decomposition error {worst:.1e}"))?;

    // analytic zeros
    let mut tape = Tape::<f64>::new();
    let img = tape.constant(random(Shape::new(1, 1, 8, 8), &mut rng, 0.0, 1.0));
    let one = probs(&mut tape, &[1.0]);
    let zero = probs(&mut tape, &[0.0]);
    let zeros = [
        ("L_infrared(x, x)", lib(loss_infrared(&mut tape, img, img))?),
        ("L_visible(x, x)", lib(loss_visible(&mut tape, img, img))?),
        ("L_adver(1, 1)", lib(loss_adversarial_g(&mut tape, &[one, one]))?),
        ("L_DS(1, 0)", lib(loss_d_salient(&mut tape, one, zero))?),
        ("L_DD(1, 0)", lib(loss_d_detailed(&mut tape, one, zero))?),
        ("L_G(x, x, x, 1, 1)", lib(total_g(&mut tape, img, img, img, &[one, one], &w))?.total),
    ];
    for (name, v) in zeros {
        need(tape.value(v).item() == 0.0, format!("{name} = {}", tape.value(v).item()))?;
    }
    need(total_d(&[1.0], &[0.0], &[1.0], &[0.0], &w).l_d == 0.0, "L_D of a perfect pair is nonzero")?;

    let (s, d) = (probs(&mut tape, &[0.9]), probs(&mut tape, &[0.1]));
    let adv = lib(loss_adversarial_g(&mut tape, &[s, d]))?;
    let (r, f) = (probs(&mut tape, &[0.8]), probs(&mut tape, &[0.3]));
    let ds = lib(loss_d_salient(&mut tape, r, f))?;
    let dd = lib(loss_d_detailed(&mut tape, r, f))?;
    let blind = total_d(&[0.5], &[0.5], &[0.5], &[0.5], &w).l_d;
    for (name, got, want) in [
        ("L_adver(0.9, 0.1)", tape.value(adv).item(), 0.82),
        ("L_DS(0.8, 0.3)", tape.value(ds).item(), 0.065),
        ("L_DD(0.8, 0.3)", tape.value(dd).item(), 0.065),
        ("L_D(blind)", blind, 1.5),
    ] {
        need(close(got, want, 1e-9), format!("{name} = {got}, expected {want}"))?;
    }
    Ok(format!("100 random inputs, worst decomposition error {worst:.1e}; zeros exact; 0.82, 0.065, 1.5 to 1e-9"))
}

fn smoke_nets() -> NetworkConfig {
    let mut n = NetworkConfig::default();
    n.generator.scales = 2;
    n
}

fn smoke_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        patch_size: 32,
        seed,
        ..Default::default()
    }
}

fn synth_set(n: usize, seed: u64) -> Result<(Vec<SynthPair>, Pairs), String> {
    let synth: Vec<SynthPair> = (0..n).map(|i| lib(synth_pair(32, seed, i))).collect::<Result<_, _>>()?;
    let pairs = synth.iter().map(|p| (p.ir.clone(), p.vi.clone())).collect();
    Ok((synth, pairs))
}

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

fn schedule_isolation() -> Outcome {
    let (_, pairs) = synth_set(80, 8)?;
    let nets = smoke_nets();
    let cfg = TrainConfig {
        batch_size: 1,
        ..smoke_train(8)
    };
    let patches = lib(prepare_patches(&pairs, cfg.patch_size, cfg.seed))?;
    let mut batches = epoch_batches(&patches, cfg.batch_size, cfg.seed, 0);
    let mut state = lib(GanState::new(&nets, &cfg))?;
    let snapshot = |s: &GanState| {
        (
            bits(&s.g_params),
            s.d_s.as_ref().map(|d| bits(&d.params)).unwrap_or_default(),
            s.d_d.as_ref().map(|d| bits(&d.params)).unwrap_or_default(),
        )
    };
    let mut prev = snapshot(&state);
    let mut breaches = Vec::new();
    let mut log = TrainLog::default();
    let clock = Instant::now();
    let mut observe = |s: &GanState, row: &LogRow| {
        let now = snapshot(s);
        let changed = (now.0 != prev.0, now.1 != prev.1, now.2 != prev.2);
        let want = match row.phase {
            Phase::DD => (false, false, true),
            Phase::DS => (false, true, false),
            Phase::G => (true, false, false),
        };
        if changed != want {
            breaches.push(format!("step {} ({})", row.step, row.phase.label()));
        }
        prev = now;
    };
    while lib(train_cycle_observed(&mut state, &mut batches, &cfg, 0, &mut log, clock, &mut observe))? {}
    need(breaches.is_empty(), format!("isolation broken at {}", breaches.join(", ")))?;
    let counts = log.phase_counts();
    need(log.complete_cycles == 10, format!("{} complete cycles", log.complete_cycles))?;
    need(counts == (40, 20, 20), format!("phase counts {counts:?}"))?;
    Ok(format!("10 cycles → D_D {}, D_S {}, G {}; every update changed only its own network", counts.0, counts.1, counts.2))
}

fn discriminator_structure() -> Outcome {
    let mut rng = Rng::new(5);
    let salient = lib(SalientDiscriminator::new(SalientConfig::default(), 64))?;
    let detailed = lib(DetailedDiscriminator::new(DetailedConfig::default()))?;
    let ps: ParamSet<f64> = init_params(&salient.param_specs(), 1, 0.2);
    let pd: ParamSet<f64> = init_params(&detailed.param_specs(), 2, 0.2);
    let batch = random(Shape::new(2, 1, 64, 64), &mut rng, 0.0, 1.0);
    let mut tape = Tape::new();
    let (bs, bd) = (ps.bind(&mut tape, false), pd.bind(&mut tape, false));
    let x = tape.constant(batch);
    let s_out = lib(salient.forward(&mut tape, &bs, x))?;
    let (grid, _) = lib(detailed.forward_patches(&mut tape, &bd, x))?;
    let (s_shape, g_shape) = (tape.shape(s_out), tape.shape(grid));
    need(s_shape == Shape::new(2, 1, 1, 1), format!("salient output {s_shape}"))?;
    need(g_shape == Shape::new(2, 1, 6, 6), format!("patch grid {g_shape}"))?;

    let detailed_grid = |t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let b = pd.bind(&mut tape, false);
        let v = tape.constant(t.clone());
        let (g, _) = detailed.forward_patches(&mut tape, &b, v)?;
        Ok(tape.value(g).clone())
    };
    let mut lines = Vec::new();
    for side in [32, 64] {
        let img = random(Shape::new(1, 1, side, side), &mut rng, 0.0, 1.0);
        let r = lib(block_perturbation(&img, 4, detailed_grid, |cy, cx| {
            (detailed.influence_interval(cy, side), detailed.influence_interval(cx, side))
        }))?;
        need(r.violations == 0, format!("d_detailed at {side}: {} cells changed outside their field", r.violations))?;
        need(r.inert_tiles == 0, format!("d_detailed at {side}: {} tiles had no effect", r.inert_tiles))?;
        if side == 64 {
            need(r.unchanged > 0, "d_detailed at 64: every cell saw every tile")?;
        }
        lines.push(format!("{side}×{side}: {} tiles, 0 outside-field changes, {} untouched cells", r.tiles, r.unchanged));
    }

    let salient32 = lib(SalientDiscriminator::new(SalientConfig::default(), 32))?;
    let ps32: ParamSet<f64> = init_params(&salient32.param_specs(), 1, 0.2);
    let img = random(Shape::new(1, 1, 32, 32), &mut rng, 0.0, 1.0);
    let r = lib(block_perturbation(
        &img,
        4,
        |t| {
            let mut tape = Tape::new();
            let b = ps32.bind(&mut tape, false);
            let v = tape.constant(t.clone());
            let y = salient32.forward(&mut tape, &b, v)?;
            Ok(tape.value(y).clone())
        },
        |_, _| ((0, 3), (0, 3)),
    ))?;
    need(r.unchanged == 0, "d_salient ignored some tile")?;
    need(r.violations > 0, "d_salient passed the locality test")?;
    Ok(format!(
        "d_salient (2,1,1,1), d_detailed 6×6 at 64; locality holds for d_detailed ({}); d_salient fails it \
         (output moved by all {} tiles)",
        lines.join("; "),
        r.tiles
    ))
}

fn metric_oracles() -> Outcome {
    for v in [0.0, 0.37, 1.0] {
        let c = GrayImage::from_fn(16, 16, |_, _| v).unwrap();
        need(
            metric_en(&c) == 0.0 && metric_ag(&c) == 0.0 && metric_sf(&c) == 0.0,
            format!("constant {v} scored nonzero"),
        )?;
    }
    let level = |i: usize| match i {
        0..32 => 0.0,
        32..48 => 0.25,
        48..56 => 0.5,
        _ => 0.75,
    };
    let hist = GrayImage::from_fn(8, 8, |x, y| level(y * 8 + x)).unwrap();
    let en = metric_en(&hist);
    need(close(en, 1.75, 1e-12), format!("EN = {en}"))?;
    let stripes = GrayImage::from_fn(16, 16, |x, _| (x % 2) as f64).unwrap();
    let sf = metric_sf(&stripes);
    need(close(sf, 255.0, 1e-12), format!("SF = {sf}"))?;

    let img = synth_pair(32, 3, 0).map_err(|e| e.to_string())?.vi;
    let u = lib(metric_uiqi(&img, &img, &img))?;
    let f = lib(metric_fmi(&img, &img, &img))?;
    let v = lib(metric_vif(&img, &img, &img))?;
    need(
        close(u, 1.0, 1e-12) && close(f, 1.0, 1e-12) && close(v, 1.0, 1e-12),
        format!("self-fusion UIQI {u}, FMI {f}, VIF {v}"),
    )?;

    let mut worst_fmi: f64 = 0.0;
    for seed in 0..3 {
        let noise = |s: u64| {
            let mut r = Rng::new(s);
            GrayImage::from_fn(256, 256, |_, _| r.uniform()).unwrap()
        };
        let v = lib(metric_fmi(&noise(3 * seed), &noise(3 * seed + 1), &noise(3 * seed + 2)))?;
        worst_fmi = worst_fmi.max(v);
    }
    need(worst_fmi < 0.1, format!("FMI on independent noise {worst_fmi}"))?;
    Ok(format!("zeros on constants; EN {en}; SF {sf}; self-fusion UIQI/FMI/VIF = 1; FMI on noise ≤ {worst_fmi:.4}"))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn smoke_training() -> Outcome {
    let start = Instant::now();
    let (synth, pairs) = synth_set(64, 1)?;
    let (state, log) = lib(train(&pairs, &smoke_nets(), &smoke_train(1), None, |_| {}))?;
    let n = log.rows.len();
    let q = n / 4;
    let first = mean(log.rows[..q].iter().map(|r| r.l_basic));
    let last = mean(log.rows[n - q..].iter().map(|r| r.l_basic));
    let (mut blob_f, mut blob_v, mut sob_f, mut sob_i) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in &synth {
        let f = lib(fuse_images(&state.generator, &state.g_params, &p.ir, &p.vi))?;
        blob_f.push(p.blob_mean(&f));
        blob_v.push(p.blob_mean(&p.vi));
        sob_f.push(sobel_energy(&f));
        sob_i.push(sobel_energy(&p.ir));
    }
    let (bf, bv, ef, ei) = (mean(blob_f), mean(blob_v), mean(sob_f), mean(sob_i));
    let seconds = start.elapsed().as_secs_f64();
    need(last < first, format!("L_basic first quarter {first:.4}, last quarter {last:.4}"))?;
    need(bf > bv, format!("blob mean fused {bf:.4} ≤ visible {bv:.4}"))?;
    need(ef > ei, format!("Sobel energy fused {ef:.4} ≤ infrared {ei:.4}"))?;
    need(seconds < 600.0, format!("took {seconds:.0}s"))?;
    Ok(format!(
        "{n} steps; L_basic {first:.4} → {last:.4}; blob mean fused {bf:.3} > visible {bv:.3}; \
         Sobel energy fused {ef:.3} > infrared {ei:.3}; {seconds:.1}s"
    ))
}

fn ablation_direction() -> Outcome {
    let run = |seed: u64, use_afs: bool| -> Result<MetricReport, String> {
        let (_, pairs) = synth_set(64, seed)?;
        let mut nets = smoke_nets();
        nets.generator.use_afs = use_afs;
        let (state, _) = lib(train(&pairs, &nets, &smoke_train(seed), None, |_| {}))?;
        let reports = pairs
            .iter()
            .map(|(ir, vi)| lib(fuse_images(&state.generator, &state.g_params, ir, vi).and_then(|f| evaluate_pair(&f, ir, vi))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricReport::mean(&reports))
    };
    let (mut full, mut plain) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        full.push(run(seed, true)?);
        plain.push(run(seed, false)?);
    }
    let (f, p) = (MetricReport::mean(&full), MetricReport::mean(&plain));
    let summary = format!(
        "full EN {:.3} AG {:.3} SF {:.3} vs no_afs EN {:.3} AG {:.3} SF {:.3} over seeds 1–5",
        f.en, f.ag, f.sf, p.en, p.ag, p.sf
    );
    need(p.en < f.en && p.ag < f.ag && p.sf < f.sf, summary.clone())?;
    Ok(summary)
}

fn hafuse_cli(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_hafuse"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("hafuse {} failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = tmp.path().join("data");
    hafuse_cli(&["make-synth", "--n", "32", "--size", "32", "--seed", "6", "--out-dir", &s(&data)])?;
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 2\nbatch_size = 4\npatch_size = 32\n\n[generator]\nscales = 2\n")
        .map_err(|e| e.to_string())?;
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        hafuse_cli(&["train", "--config", &s(&cfg), "--data-dir", &s(&data), "--out-dir", &s(&out), "--seed", "11"])?;
        let ckpt = out.join("final.ckpt");
        evals.push(hafuse_cli(&[
            "eval",
            "--ckpt",
            &s(&ckpt),
            "--data-dir",
            &s(&data),
            "--noise-variance",
            "0.03",
        ])?);
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for f in ["train_log.csv", "epoch_001.ckpt", "epoch_002.ckpt", "final.ckpt"] {
        need(same_bytes(&a.join(f), &b.join(f))?, format!("{f} differs between runs"))?;
    }
    need(evals[0] == evals[1], "eval CSV differs between runs")?;

    let mut rng = Rng::new(17);
    for _ in 0..50 {
        let (w, h) = (1 + rng.below(40), 1 + rng.below(40));
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend((0..w * h).map(|_| rng.below(256) as u8));
        let img = lib(parse_pgm(&bytes))?;
        need(encode_pgm(&img) == bytes, format!("{w}×{h} PGM round trip changed bytes"))?;
    }

    let bytes = std::fs::read(a.join("final.ckpt")).map_err(|e| e.to_string())?;
    let ckpt = lib(Checkpoint::decode(&bytes))?;
    need(lib(ckpt.encode())? == bytes, "checkpoint re-encode changed bytes")?;
    let again = lib(Checkpoint::decode(&lib(ckpt.encode())?))?;
    need(again == ckpt, "checkpoint decode is not bit-exact")?;
    Ok("train ×2 → identical CSV and 3 checkpoints; eval ×2 identical; 50 PGM round trips and the checkpoint round trip bit-exact".into())
}

fn noise_harness() -> Outcome {
    let img = GrayImage::from_fn(256, 256, |_, _| 0.5).unwrap();
    let spec = NoiseSpec::default();
    need(spec.variance == 0.03, format!("default variance {}", spec.variance))?;
    let noisy = lib(add_gaussian_noise(&img, &spec))?;
    let p = noisy.pixels();
    let m = mean(p.iter().copied());
    let var = mean(p.iter().map(|v| (v - m).powi(2)));
    let rel = (var - 0.03).abs() / 0.03;
    need(rel <= 0.15, format!("sample variance {var:.5} is {:.1}% off", 100.0 * rel))?;
    let textured = synth_pair(64, 2, 0).map_err(|e| e.to_string())?.vi;
    let zero = lib(add_gaussian_noise(&textured, &NoiseSpec { variance: 0.0, seed: 9 }))?;
    let identical = zero.pixels().iter().zip(textured.pixels()).all(|(a, b)| a.to_bits() == b.to_bits());
    need(identical, "variance 0 changed pixels")?;
    Ok(format!("sample variance {var:.5} ({:.1}% from 0.03); variance 0 bit-identical", 100.0 * rel))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("AFS oracle", afs_oracle),
        ("loss identities", loss_identities),
        ("schedule and isolation", schedule_isolation),
        ("discriminator structure", discriminator_structure),
        ("metric oracles", metric_oracles),
        ("smoke training", smoke_training),
        ("no_afs ablation direction", ablation_direction),
        ("reproducibility", reproducibility),
        ("noise harness", noise_harness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

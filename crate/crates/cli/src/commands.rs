use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hafuse::io::{load_checkpoint, load_pgm, make_synthetic, save_pgm, GrayImage, PairDataset};
use hafuse::metrics::{add_gaussian_noise, evaluate_pair, report_csv, MetricReport, NoiseSpec};
use hafuse::train::{fuse_images, GanState, Variant};
use hafuse::verify::{case_names, run_named, run_suite, CaseResult, SuiteConfig};

use crate::config::RunConfig;
use crate::exit::{CliError, CliResult, GRADCHECK};
use crate::{AblateArgs, EvalArgs, FuseArgs, GradcheckArgs, SynthArgs, TrainArgs};

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| CliError::usage(format!("{name} is required (flag or [paths] in the config)")))
}

fn open_dataset(dir: &Path) -> CliResult<PairDataset> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("data directory {} does not exist", dir.display())));
    }
    Ok(PairDataset::open(dir)?)
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::from(e).context(path))
}

impl CliError {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data_dir = required(a.data_dir, &cfg.paths.data_dir, "--data-dir")?;
    let out_dir = required(a.out_dir, &cfg.paths.out_dir, "--out-dir")?;
    let pairs = open_dataset(&data_dir)?.load_all()?;
    let (_, log) = hafuse::train::train(&pairs, &cfg.networks(), &cfg.train, Some(&out_dir), |s| println!("{s}"))?;
    println!(
        "{} cycles ({} truncated), checkpoint {}",
        log.complete_cycles,
        log.truncated_cycles,
        out_dir.join("final.ckpt").display()
    );
    Ok(())
}

pub fn fuse(a: FuseArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let (generator, params) = ckpt.generator()?;
    let ir = load_pgm(&a.ir)?;
    let vi = load_pgm(&a.vi)?;
    if (ir.width(), ir.height()) != (vi.width(), vi.height()) {
        return Err(CliError::usage(format!(
            "{} is {}×{} but {} is {}×{}",
            a.ir.display(),
            ir.width(),
            ir.height(),
            a.vi.display(),
            vi.width(),
            vi.height()
        )));
    }
    let fused = fuse_images(&generator, params, &ir, &vi)?;
    save_pgm(&fused, &a.out)?;
    Ok(())
}

/// Produces the fused image of pair `i` from its (possibly noisy) sources.
type Fuser<'a> = Box<dyn Fn(usize, &GrayImage, &GrayImage) -> CliResult<GrayImage> + 'a>;

/// Clean rows, then (with noise) rows prefixed `noisy/` and their own mean.
fn eval_csv(clean: &[(String, MetricReport)], noisy: Option<&[(String, MetricReport)]>) -> String {
    let mut s = report_csv(clean);
    if let Some(rows) = noisy {
        let tagged: Vec<(String, MetricReport)> = rows.iter().map(|(id, r)| (format!("noisy/{id}"), *r)).collect();
        for line in report_csv(&tagged).lines().skip(1) {
            let line = line.strip_prefix("mean,").map_or(line.to_string(), |rest| format!("noisy/mean,{rest}"));
            let _ = writeln!(s, "{line}");
        }
    }
    s
}

fn evaluate(ds: &PairDataset, fuser: &Fuser, noise: Option<NoiseSpec>) -> CliResult<String> {
    let mut clean = Vec::with_capacity(ds.len());
    let mut noisy = Vec::new();
    for i in 0..ds.len() {
        let (ir, vi) = ds.load(i)?;
        let fused = fuser(i, &ir, &vi)?;
        clean.push((ds.id(i), evaluate_pair(&fused, &ir, &vi)?));
        if let Some(spec) = noise {
            let spec = NoiseSpec {
                seed: spec.seed.wrapping_add(i as u64),
                ..spec
            };
            let vi_noisy = add_gaussian_noise(&vi, &spec)?;
            let fused = fuser(i, &ir, &vi_noisy)?;
            noisy.push((ds.id(i), evaluate_pair(&fused, &ir, &vi_noisy)?));
        }
    }
    Ok(eval_csv(&clean, noise.map(|_| noisy.as_slice())))
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let data_dir = required(a.data_dir, &cfg.paths.data_dir, "--data-dir")?;
    let ds = open_dataset(&data_dir)?;
    let noise = a.noise_variance.map(|variance| NoiseSpec {
        variance,
        seed: a.seed.unwrap_or(cfg.noise.seed),
    });
    let csv = match (a.fused_dir, a.ckpt) {
        (Some(dir), None) => {
            if !dir.is_dir() {
                return Err(CliError::usage(format!("fused directory {} does not exist", dir.display())));
            }
            // precomputed outputs cannot react to noisy inputs; only the reference changes
            let ids: Vec<String> = (0..ds.len()).map(|i| ds.id(i)).collect();
            let fuser: Fuser = Box::new(move |i, _, _| Ok(load_pgm(dir.join(format!("{}.pgm", ids[i])))?));
            evaluate(&ds, &fuser, noise)?
        }
        (None, Some(path)) => {
            let ckpt = load_checkpoint(&path)?;
            let (generator, params) = ckpt.generator()?;
            let fuser: Fuser = Box::new(move |_, ir, vi| Ok(fuse_images(&generator, params, ir, vi)?));
            evaluate(&ds, &fuser, noise)?
        }
        _ => return Err(CliError::usage("eval needs exactly one of --fused-dir or --ckpt")),
    };
    match a.out {
        Some(p) => write_file(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(CliError::usage(format!("--scale must be positive, got {}", a.scale)));
    }
    hafuse::tensor::fault::set_sobel_sign_flip(a.inject_sobel_fault);
    let defaults = SuiteConfig::default();
    let scaled = |n: u64| ((n as f64 * a.scale).ceil() as u64).max(1);
    let cfg = SuiteConfig {
        op_seeds: scaled(defaults.op_seeds),
        network_seeds: scaled(defaults.network_seeds),
        ..defaults
    };
    let print = |r: &CaseResult| {
        println!(
            "{:<22} worst {:.3e}  tol {:.0e}  seeds {:>3}  {:>6.2}s  {}",
            r.name,
            r.worst,
            r.tolerance,
            r.seeds,
            r.seconds,
            if r.passed() { "PASS" } else { "FAIL" }
        )
    };
    let results = match &a.only {
        None => run_suite(&cfg, print)?,
        Some(pat) => {
            let names: Vec<&str> = case_names().into_iter().filter(|n| n.contains(pat.as_str())).collect();
            if names.is_empty() {
                return Err(CliError::usage(format!("no gradient case matches `{pat}`")));
            }
            let mut out = Vec::new();
            for n in names {
                let r = run_named(&cfg, n)?;
                print(&r);
                out.push(r);
            }
            out
        }
    };
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} cases passed", results.len());
        Ok(())
    } else {
        Err(CliError {
            code: GRADCHECK,
            message: format!("gradient check failed: {}", failed.join(", ")),
        })
    }
}

pub fn ablate(a: AblateArgs) -> CliResult<()> {
    let variant: Variant = a.variant.parse()?;
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::smoke(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let mut nets = cfg.networks();
    variant.apply(&mut nets, &mut cfg.train);
    cfg.set_networks(nets);
    let data_dir = required(a.data_dir, &cfg.paths.data_dir, "--data-dir")?;
    let out_dir = a.out_dir.or(cfg.paths.out_dir.clone()).map(|d| d.join(variant.name()));
    let ds = open_dataset(&data_dir)?;
    let pairs = ds.load_all()?;
    let (state, _) = hafuse::train::train(&pairs, &cfg.networks(), &cfg.train, out_dir.as_deref(), |s| {
        eprintln!("[{variant}] {s}")
    })?;
    let fuser: Fuser = Box::new(|_, ir, vi| fused_by(&state, ir, vi));
    let csv = evaluate(&ds, &fuser, None)?;
    if let Some(d) = &out_dir {
        write_file(&d.join("metrics.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn fused_by(state: &GanState, ir: &GrayImage, vi: &GrayImage) -> CliResult<GrayImage> {
    Ok(fuse_images(&state.generator, &state.g_params, ir, vi)?)
}

pub fn make_synth(a: SynthArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let pairs = make_synthetic(a.n, a.size, a.seed, &a.out_dir)?;
    println!("wrote {} pairs of {}×{} to {}", pairs.len(), a.size, a.size, a.out_dir.display());
    Ok(())
}

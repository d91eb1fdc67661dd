use std::path::Path;
use std::process::{Command, Output};

use hafuse::io::{load_pgm, save_pgm, synth_pair, GrayImage, PairDataset};
use hafuse::metrics::{sobel_energy, REPORT_HEADER};

fn hafuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hafuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, size: usize, seed: u64) {
    let o = hafuse(&[
        "make-synth",
        "--n",
        &n.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-dir",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
}

/// Smoke preset cut to one epoch.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("quick.toml");
    std::fs::write(
        &path,
        "[train]\nepochs = 1\nbatch_size = 4\npatch_size = 32\n\n[generator]\nscales = 2\n",
    )
    .unwrap();
    path
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hafuse(&["train", "--data-dir", p(&tmp.path().join("absent")), "--out-dir", p(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("does not exist"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochz = 2\n").unwrap();
    synth(&tmp.path().join("d"), 1, 32, 0);
    let o = hafuse(&[
        "train",
        "--config",
        p(&cfg),
        "--data-dir",
        p(&tmp.path().join("d")),
        "--out-dir",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("epochz"));
}

#[test]
fn train_fuse_eval_end_to_end_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 32, 32, 4);
    let cfg = quick_config(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = hafuse(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&out), "--seed", "9"]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        assert!(text(&o.stdout).contains("epoch   1"));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["train_log.csv", "final.ckpt", "epoch_001.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("train_log.csv")).unwrap();
    let phases: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(phases, ["D_D", "D_D", "D_D", "D_D", "D_S", "D_S", "G", "G"]);

    let ckpt = a.join("final.ckpt");
    let (ir, vi) = (data.join("ir/0003.pgm"), data.join("vi/0003.pgm"));
    let fuse = |out: &Path| hafuse(&["fuse", "--ckpt", p(&ckpt), "--ir", p(&ir), "--vi", p(&vi), "--out", p(out)]);
    let (f1, f2) = (tmp.path().join("f1.pgm"), tmp.path().join("f2.pgm"));
    assert_eq!(code(&fuse(&f1)), 0);
    assert_eq!(code(&fuse(&f2)), 0);
    assert_eq!(std::fs::read(&f1).unwrap(), std::fs::read(&f2).unwrap());
    let fused = load_pgm(&f1).unwrap();
    assert_eq!((fused.width(), fused.height()), (32, 32));

    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--ckpt", p(&ckpt), "--data-dir", p(&data)];
        args.extend_from_slice(extra);
        let o = hafuse(&args);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        text(&o.stdout)
    };
    let clean = eval(&[]);
    assert_eq!(clean, eval(&[]));
    assert_eq!(clean.lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(clean.lines().count(), 1 + 32 + 1);
    let out_file = tmp.path().join("m.csv");
    eval(&["--out", p(&out_file)]);
    assert_eq!(std::fs::read_to_string(&out_file).unwrap(), clean);
}

#[test]
fn fuse_rejects_mismatched_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 32, 32, 1);
    let out = tmp.path().join("o");
    let o = hafuse(&["train", "--config", p(&quick_config(tmp.path())), "--data-dir", p(&data), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let small = tmp.path().join("small.pgm");
    save_pgm(&GrayImage::from_fn(16, 32, |_, _| 0.5).unwrap(), &small).unwrap();
    let fused = tmp.path().join("f.pgm");
    let o = hafuse(&[
        "fuse",
        "--ckpt",
        p(&out.join("final.ckpt")),
        "--ir",
        p(&data.join("ir/0000.pgm")),
        "--vi",
        p(&small),
        "--out",
        p(&fused),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!fused.exists());
}

#[test]
fn eval_self_fusion_and_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, fused) = (tmp.path().join("data"), tmp.path().join("fused"));
    for i in 0..3 {
        let img = synth_pair(32, 2, i).unwrap().vi;
        let name = format!("{i:04}.pgm");
        for dir in [data.join("ir"), data.join("vi"), fused.clone()] {
            std::fs::create_dir_all(&dir).unwrap();
            save_pgm(&img, dir.join(&name)).unwrap();
        }
    }
    let run = |extra: &[&str]| {
        let mut args = vec!["eval", "--fused-dir", p(&fused), "--data-dir", p(&data)];
        args.extend_from_slice(extra);
        let o = hafuse(&args);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        text(&o.stdout)
    };
    let clean = run(&[]);
    let mut lines = clean.lines();
    assert_eq!(lines.next().unwrap(), "image_id,en,ag,sf,fmi,vif,uiqi");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[4..], ["1.000000", "1.000000", "1.000000"], "{line}");
    }

    let both = run(&["--noise-variance", "0"]);
    assert!(both.starts_with(&clean));
    let noisy: Vec<String> = both[clean.len()..]
        .lines()
        .map(|l| l.strip_prefix("noisy/").expect("tagged row").to_string())
        .collect();
    let plain: Vec<&str> = clean.lines().skip(1).collect();
    assert_eq!(noisy, plain);

    let perturbed = run(&["--noise-variance", "0.03", "--seed", "5"]);
    assert_ne!(&perturbed[clean.len()..], &both[clean.len()..]);
    assert_eq!(perturbed, run(&["--noise-variance", "0.03", "--seed", "5"]));
}

#[test]
fn ablate_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hafuse(&["ablate", "--variant", "w/o_afs", "--data-dir", p(tmp.path())]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    for name in ["full", "no_sampling", "no_skip", "no_afs", "only_DD", "dual_DD", "only_DS", "dual_DS", "no_attention"] {
        assert!(err.contains(name), "{err}");
    }

    let data = tmp.path().join("data");
    synth(&data, 32, 32, 3);
    let out = tmp.path().join("abl");
    let o = hafuse(&[
        "ablate",
        "--variant",
        "only_DD",
        "--config",
        p(&quick_config(tmp.path())),
        "--data-dir",
        p(&data),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let log = std::fs::read_to_string(out.join("only_DD/train_log.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.split(',').nth(1) != Some("D_S")));
    assert!(log.contains(",D_D,") && log.contains(",G,"));
    let metrics = std::fs::read_to_string(out.join("only_DD/metrics.csv")).unwrap();
    assert_eq!(metrics, text(&o.stdout));
    assert!(metrics.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn make_synth_layout_determinism_and_contrast() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 64, 64, 7);
    synth(&b, 64, 64, 7);
    let count = |d: &Path| std::fs::read_dir(d).unwrap().count();
    assert_eq!(count(&a.join("ir")) + count(&a.join("vi")), 128);
    let (da, db) = (PairDataset::open(&a).unwrap(), PairDataset::open(&b).unwrap());
    for (x, y) in da.pairs.iter().zip(&db.pairs) {
        assert_eq!(std::fs::read(&x.0).unwrap(), std::fs::read(&y.0).unwrap());
        assert_eq!(std::fs::read(&x.1).unwrap(), std::fs::read(&y.1).unwrap());
    }
    for i in 0..64 {
        let pair = synth_pair(64, 7, i).unwrap();
        let (ir, vi) = da.load(i).unwrap();
        assert_eq!((&ir, &vi), (&pair.ir, &pair.vi));
        assert!(pair.blob_mean(&ir) > pair.blob_mean(&vi));
        assert!(sobel_energy(&vi) > sobel_energy(&ir));
    }
}

#[test]
fn gradcheck_reports_injected_fault() {
    let o = hafuse(&["gradcheck", "--only", "sobel", "--scale", "0.25"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("PASS"));
    let o = hafuse(&["gradcheck", "--only", "sobel", "--scale", "0.25", "--inject-sobel-fault"]);
    assert_eq!(code(&o), 5);
    assert!(text(&o.stdout).contains("sobel_gradient"));
    assert!(text(&o.stderr).contains("sobel_gradient"));
    assert_eq!(code(&hafuse(&["gradcheck", "--scale", "0"])), 2);
}

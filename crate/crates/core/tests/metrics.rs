use hafuse::io::GrayImage;
use hafuse::metrics::*;
use hafuse::rng::Rng;

fn noise(side: usize, seed: u64) -> GrayImage {
    let mut r = Rng::new(seed);
    GrayImage::from_fn(side, side, |_, _| r.uniform()).unwrap()
}

fn constant(side: usize, v: f64) -> GrayImage {
    GrayImage::from_fn(side, side, |_, _| v).unwrap()
}

/// Smooth nonconstant texture on the 8-bit grid.
fn texture(side: usize) -> GrayImage {
    GrayImage::from_fn(side, side, |x, y| {
        0.5 + 0.3 * (x as f64 * 0.7).sin() * (y as f64 * 0.4).cos() + 0.1 * ((x + 2 * y) as f64 * 0.3).sin()
    })
    .unwrap()
    .quantized()
}

#[test]
fn constants_score_zero() {
    for v in [0.0, 0.37, 1.0] {
        let c = constant(16, v);
        assert_eq!(metric_en(&c), 0.0);
        assert_eq!(metric_ag(&c), 0.0);
        assert_eq!(metric_sf(&c), 0.0);
    }
}

#[test]
fn entropy_examples() {
    let two = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
    assert!((metric_en(&two) - 1.0).abs() < 1e-12);
    // counts 32, 16, 8, 8 of 64
    let levels = |i: usize| match i {
        0..32 => 0.0,
        32..48 => 0.25,
        48..56 => 0.5,
        _ => 0.75,
    };
    let four = GrayImage::from_fn(8, 8, |x, y| levels(y * 8 + x)).unwrap();
    assert!((metric_en(&four) - 1.75).abs() < 1e-12);
    assert!((0.0..=8.0).contains(&metric_en(&noise(64, 1))));
}

#[test]
fn average_gradient_examples() {
    let ramp = GrayImage::from_fn(20, 10, |x, _| x as f64 / 255.0).unwrap();
    assert!((metric_ag(&ramp) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    let img = noise(24, 2);
    assert!((metric_ag(&img) - metric_ag(&img.transpose())).abs() < 1e-9);
}

#[test]
fn spatial_frequency_examples() {
    let stripes = GrayImage::from_fn(16, 16, |x, _| (x % 2) as f64).unwrap();
    assert!((metric_sf(&stripes) - 255.0).abs() < 1e-12);
    let img = noise(24, 3);
    assert!((metric_sf(&img) - metric_sf(&img.transpose())).abs() < 1e-9);
    // 90° rotation = transpose + horizontal flip
    let t = img.transpose();
    let rot = GrayImage::from_fn(24, 24, |x, y| t.get(23 - x, y)).unwrap();
    assert!((metric_sf(&img) - metric_sf(&rot)).abs() < 1e-9);
}

#[test]
fn self_fusion_identities() {
    let img = texture(32);
    assert!((metric_uiqi(&img, &img, &img).unwrap() - 1.0).abs() < 1e-12);
    assert!((metric_fmi(&img, &img, &img).unwrap() - 1.0).abs() < 1e-12);
    assert!((metric_vif(&img, &img, &img).unwrap() - 1.0).abs() < 1e-12);
    let r = evaluate_pair(&img, &img, &img).unwrap();
    assert_eq!((r.en, r.ag, r.sf), (metric_en(&img), metric_ag(&img), metric_sf(&img)));
    assert_eq!((r.fmi, r.vif), (1.0, 1.0));
    assert!((r.uiqi - 1.0).abs() < 1e-12);
}

#[test]
fn uiqi_degenerate_and_inverted() {
    let c = constant(16, 0.4);
    assert_eq!(metric_uiqi(&c, &c, &c).unwrap(), 1.0);
    let img = texture(32);
    let inv = GrayImage::from_fn(32, 32, |x, y| 1.0 - img.get(x, y)).unwrap();
    assert!(quality_index(&inv, &img).unwrap() < -0.85);
}

#[test]
fn fmi_independent_noise_is_small() {
    let f = noise(256, 10);
    let a = noise(256, 11);
    let b = noise(256, 12);
    let v = metric_fmi(&f, &a, &b).unwrap();
    assert!(v < 0.1, "{v}");
}

#[test]
fn fmi_ignores_global_offsets() {
    let mut r = Rng::new(4);
    let base = GrayImage::from_fn(32, 32, |_, _| r.uniform() * 0.5).unwrap();
    let a = texture(32);
    let b = noise(32, 5);
    let shifted = GrayImage::from_fn(32, 32, |x, y| base.get(x, y) + 0.25).unwrap();
    let v0 = metric_fmi(&base, &a, &b).unwrap();
    let v1 = metric_fmi(&shifted, &a, &b).unwrap();
    assert!((v0 - v1).abs() < 1e-12, "{v0} vs {v1}");
}

#[test]
fn vif_examples() {
    let src = texture(32);
    let flat = constant(32, 0.5);
    assert_eq!(vif_single(&src, &flat).unwrap(), 0.0);
    // 2·src + 10 on the 8-bit scale, kept away from saturation
    let low = GrayImage::from_fn(32, 32, |x, y| src.get(x, y) * 0.4).unwrap();
    let affine = GrayImage::from_fn(32, 32, |x, y| (2.0 * low.get(x, y) * 255.0 + 10.0) / 255.0).unwrap();
    let var = |img: &GrayImage| {
        let m = img.pixels().iter().sum::<f64>() / 1024.0;
        img.pixels().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1024.0
    };
    let sd = var(&affine).sqrt();
    let mut r = Rng::new(6);
    let noisy = GrayImage::from_fn(32, 32, |_, _| 0.5 + sd * r.normal()).unwrap();
    assert!(vif_single(&low, &affine).unwrap() >= vif_single(&low, &noisy).unwrap());
}

#[test]
fn report_ranges_on_random_inputs() {
    for seed in 0..5 {
        let (f, a, b) = (noise(32, seed), noise(32, seed + 100), noise(32, seed + 200));
        let r = evaluate_pair(&f, &a, &b).unwrap();
        assert!((0.0..=8.0).contains(&r.en));
        assert!(r.ag >= 0.0 && r.sf >= 0.0);
        assert!((-1.0..=1.0).contains(&r.uiqi));
        assert!((0.0..=1.0).contains(&r.fmi));
        assert!(r.vif >= 0.0);
    }
}

#[test]
fn size_mismatch_is_rejected() {
    let a = constant(8, 0.1);
    let b = constant(16, 0.1);
    assert!(metric_fmi(&a, &a, &b).is_err());
    assert!(metric_uiqi(&a, &b, &a).is_err());
    assert!(metric_vif(&a, &a, &b).is_err());
}

#[test]
fn noise_harness() {
    let img = constant(256, 0.5);
    let zero = add_gaussian_noise(&img, &NoiseSpec { variance: 0.0, seed: 1 }).unwrap();
    assert_eq!(zero, img);
    let spec = NoiseSpec::default();
    let n1 = add_gaussian_noise(&img, &spec).unwrap();
    let n2 = add_gaussian_noise(&img, &spec).unwrap();
    assert_eq!(n1, n2);
    let p = n1.pixels();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64;
    assert!((mean - 0.5).abs() < 0.01);
    assert!((var - 0.03).abs() < 0.15 * 0.03, "{var}");
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(add_gaussian_noise(&img, &NoiseSpec { variance: -1.0, seed: 0 }).is_err());
}

#[test]
fn csv_report_layout() {
    let r = MetricReport {
        en: 1.0,
        ag: 2.0,
        sf: 3.0,
        fmi: 0.5,
        vif: 0.25,
        uiqi: 0.75,
    };
    let csv = report_csv(&[("a".into(), r), ("b".into(), r)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,en,ag,sf,fmi,vif,uiqi");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean,1.000000,2.000000"));
}

mod common;

use common::*;
use lfdeblur::lf::{Image, LfShape, LightField};
use lfdeblur::metrics::{
    evaluate, lmse, mse, ncc, psnr, psnr_values, ssim, MetricError, MetricReport,
};
use rand::Rng;

fn pairs(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Vec<(Image, Image)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (random_image(h, w, c, &mut r), random_image(h, w, c, &mut r)))
        .collect()
}

#[test]
fn psnr_and_ncc_match_loop_oracles() {
    for (a, b) in pairs(50, 17, 13, 3, 1) {
        let (a, b) = (a.as_slice(), b.as_slice());
        assert!((mse(a, b).unwrap() - mse_oracle(a, b)).abs() <= 1e-9);
        assert!((psnr_values(a, b).unwrap() - psnr_oracle(a, b)).abs() <= 1e-9);
        assert!((ncc(a, b).unwrap() - ncc_oracle(a, b)).abs() <= 1e-9);
    }
}

#[test]
fn ssim_matches_direct_window_oracle() {
    for c in [1, 3] {
        for (a, b) in pairs(25, 19, 23, c, 2 + c as u64) {
            let got = ssim(&a, &b).unwrap();
            assert!((got - ssim_oracle(&a, &b)).abs() <= 1e-6, "c={c}");
        }
    }
}

#[test]
fn lmse_matches_least_squares_oracle() {
    for (a, b) in pairs(50, 45, 32, 3, 4) {
        assert!((lmse(&a, &b).unwrap() - lmse_oracle(&a, &b)).abs() <= 1e-9);
    }
}

#[test]
fn psnr_analytic_cases() {
    let s = LfShape::new(2, 2, 8, 8, 3);
    let gt = random_lf(s, 5).clamped();
    let gt = LightField::from_fn(s, |(u, v, x, y, c)| 0.1 + 0.8 * gt.get(u, v, x, y, c)).unwrap();
    let up = LightField::from_fn(s, |(u, v, x, y, c)| gt.get(u, v, x, y, c) + 0.1).unwrap();
    assert!((psnr(&up, &gt).unwrap() - 20.0).abs() <= 1e-9);
    assert!(psnr(&gt, &gt).unwrap().is_infinite());
    let other = random_lf(LfShape::new(2, 2, 8, 7, 3), 5);
    assert!(matches!(
        psnr(&other, &gt),
        Err(MetricError::ShapeMismatch { .. })
    ));
}

#[test]
fn psnr_decreases_with_noise() {
    let s = LfShape::new(1, 1, 16, 16, 3);
    let gt = LightField::constant(s, 0.5).unwrap();
    let mut r = rng(6);
    let signs: Vec<f64> = (0..s.len())
        .map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let scores: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|amp| {
            let noisy =
                LightField::from_vec(s, signs.iter().map(|sg| 0.5 + sg * amp).collect()).unwrap();
            psnr(&noisy, &gt).unwrap()
        })
        .collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn ncc_analytic_cases() {
    let mut r = rng(7);
    let gt: Vec<f64> = (0..300).map(|_| r.gen()).collect();
    assert!((ncc(&gt, &gt).unwrap() - 1.0).abs() <= 1e-12);
    let affine: Vec<f64> = gt.iter().map(|g| 0.3 * g + 0.2).collect();
    assert!((ncc(&affine, &gt).unwrap() - 1.0).abs() <= 1e-9);
    let mean = gt.iter().sum::<f64>() / gt.len() as f64;
    let centered: Vec<f64> = gt.iter().map(|g| g - mean).collect();
    let neg: Vec<f64> = centered.iter().map(|g| -g).collect();
    assert!((ncc(&neg, &centered).unwrap() + 1.0).abs() <= 1e-9);
    assert!(matches!(
        ncc(&[0.4; 10], &gt[..10]),
        Err(MetricError::Undefined(_))
    ));
}

#[test]
fn ssim_checkerboard_inverse_is_negative() {
    let gt = Image::from_fn((24, 24, 1), |(i, j, _)| ((i + j) % 2) as f64).unwrap();
    let inv = Image::from_fn((24, 24, 1), |(i, j, _)| 1.0 - gt.get(i, j, 0)).unwrap();
    let got = ssim(&inv, &gt).unwrap();
    assert!(got < 0.0, "{got}");
    assert!((got - ssim_oracle(&inv, &gt)).abs() <= 1e-6);
    assert!((ssim(&gt, &gt).unwrap() - 1.0).abs() <= 1e-12);
}

#[test]
fn lmse_analytic_cases() {
    let mut r = rng(8);
    let gt = random_image(40, 40, 3, &mut r);
    let double = Image::from_fn((40, 40, 3), |(i, j, c)| 2.0 * gt.get(i, j, c)).unwrap();
    assert!(lmse(&gt, &gt).unwrap().abs() <= 1e-9);
    assert!(lmse(&double, &gt).unwrap().abs() <= 1e-9);
    let pred = random_image(40, 40, 3, &mut r);
    let scaled = Image::from_fn((40, 40, 3), |(i, j, c)| 3.5 * pred.get(i, j, c)).unwrap();
    assert!((lmse(&scaled, &gt).unwrap() - lmse(&pred, &gt).unwrap()).abs() <= 1e-9);
    let small = random_image(19, 40, 3, &mut r);
    assert!(matches!(
        lmse(&small, &small),
        Err(MetricError::TooSmall { .. })
    ));
}

#[test]
fn evaluate_identity_and_single_view() {
    let s = LfShape::new(2, 2, 24, 24, 3);
    let gt = random_lf(s, 9);
    let m = evaluate("same", &gt, &gt).unwrap();
    assert!(m.psnr.is_infinite());
    assert!((m.ssim - 1.0).abs() <= 1e-12 && (m.ncc - 1.0).abs() <= 1e-12 && m.lmse.abs() <= 1e-12);

    let one = LfShape::new(1, 1, 24, 24, 3);
    let (p, g) = (random_lf(one, 10), random_lf(one, 11));
    let m = evaluate("one", &p, &g).unwrap();
    let (pi, gi) = (p.sai(0, 0).unwrap(), g.sai(0, 0).unwrap());
    assert_eq!(m.psnr, psnr_values(pi.as_slice(), gi.as_slice()).unwrap());
    assert_eq!(m.ssim, ssim(&pi, &gi).unwrap());
    assert_eq!(m.ncc, ncc(pi.as_slice(), gi.as_slice()).unwrap());
    assert_eq!(m.lmse, lmse(&pi, &gi).unwrap());
}

#[test]
fn evaluate_names_the_failing_view() {
    let s = LfShape::new(2, 2, 24, 24, 3);
    let gt = random_lf(s, 12);
    let pred = LightField::from_fn(s, |(u, v, x, y, c)| {
        if (u, v) == (1, 0) {
            0.3
        } else {
            gt.get(u, v, x, y, c)
        }
    })
    .unwrap();
    match evaluate("bad", &pred, &gt) {
        Err(MetricError::View { u: 1, v: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn report_mean_row() {
    let s = LfShape::new(2, 2, 24, 24, 3);
    let gt = random_lf(s, 13);
    let per_scene: Vec<_> = (0..3)
        .map(|i| evaluate(&format!("scene{i}"), &random_lf(s, 20 + i), &gt).unwrap())
        .collect();
    let report = MetricReport { per_scene };
    let mean = report.mean();
    let avg = |f: fn(&lfdeblur::metrics::SceneMetrics) -> f64| {
        report.per_scene.iter().map(f).sum::<f64>() / 3.0
    };
    assert!((mean.psnr - avg(|m| m.psnr)).abs() <= 1e-12);
    assert!((mean.ssim - avg(|m| m.ssim)).abs() <= 1e-12);
    assert!((mean.ncc - avg(|m| m.ncc)).abs() <= 1e-12);
    assert!((mean.lmse - avg(|m| m.lmse)).abs() <= 1e-12);
    let text = report.to_string();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0].split_whitespace().collect::<Vec<_>>(),
        ["name", "psnr", "ssim", "ncc", "lmse"]
    );
    assert!(lines[4].starts_with("MEAN"));
    assert!(lines[1..].iter().all(|l| l.split_whitespace().count() == 5));
}

#[test]
fn every_metric_runs_on_minimal_crops() {
    let lf = random_lf(LfShape::new(2, 2, 40, 40, 3), 14);
    let gt = random_lf(LfShape::new(2, 2, 40, 40, 3), 15);
    for (x0, y0) in [(0, 0), (10, 5), (20, 20)] {
        let (p, g) = (
            lf.crop_patch(x0, y0, 20, 20).unwrap(),
            gt.crop_patch(x0, y0, 20, 20).unwrap(),
        );
        let m = evaluate("crop", &p, &g).unwrap();
        assert!(
            m.psnr > 0.0
                && (-1.0..=1.0).contains(&m.ssim)
                && (-1.0..=1.0).contains(&m.ncc)
                && m.lmse >= 0.0
        );
    }
}

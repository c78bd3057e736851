mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use lfdeblur::lf::{LfShape, LightField};
use lfdeblur::model::dpva::attention_weights;
use lfdeblur::model::{
    apply_ape, count_params, forward, forward_field, fuse, generate_view_kernel,
    generator_param_formula, reorganize_dp, vasc_block_forward, Ablation, Head, ModelConfig,
    ModelParams, SpatialKernel,
};
use lfdeblur::nn::Field;
use rand::Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn lib_forward(params: &ModelParams<f64>, cfg: &ModelConfig, lf: &LightField) -> Vec<f64> {
    forward_field(params, cfg, &Field::from_light_field(lf))
        .unwrap()
        .into_vec()
}

#[test]
fn forward_matches_reference_for_every_variant() {
    let lf = random_lf(LfShape::new(2, 2, 8, 8, 3), 11);
    for residual in [false, true] {
        for ab in Ablation::ALL {
            let cfg = ModelConfig {
                residual,
                ..tiny_config(2, 2, 4).ablation(ab)
            };
            let params = ModelParams::<f64>::init(&cfg, 5).unwrap();
            let got = lib_forward(&params, &cfg, &lf);
            let want = reference_forward(&params, &cfg, &lf);
            let err = max_diff(&got, &want.d);
            assert!(err < 1e-9, "{} residual={residual}: {err:e}", ab.label());
        }
    }
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/forward_golden.json")
}

fn golden_case() -> (ModelConfig, ModelParams<f64>, LightField) {
    let cfg = tiny_config(2, 2, 4);
    let params = ModelParams::<f64>::init(&cfg, 2024).unwrap();
    (cfg, params, random_lf(LfShape::new(2, 2, 8, 8, 3), 2024))
}

/// Rewrites the golden array from the reference implementation:
/// `cargo test -p lfdeblur-core --test model_oracles -- --ignored`.
#[test]
#[ignore]
fn regenerate_golden() {
    let (cfg, params, lf) = golden_case();
    let out = reference_forward(&params, &cfg, &lf);
    let doc = serde_json::json!({ "shape": [2, 2, 8, 8, 3], "values": out.d });
    std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
    std::fs::write(golden_path(), serde_json::to_string(&doc).unwrap()).unwrap();
}

#[test]
fn forward_matches_golden() {
    let text = std::fs::read_to_string(golden_path()).expect("golden file present");
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let golden: Vec<f64> = serde_json::from_value(doc["values"].clone()).unwrap();
    let (cfg, params, lf) = golden_case();
    let got = lib_forward(&params, &cfg, &lf);
    assert!(max_diff(&got, &golden) < 1e-6);
}

#[test]
fn default_forward_shape_and_determinism() {
    let cfg = ModelConfig::default();
    let params = ModelParams::<f32>::init(&cfg, 0).unwrap();
    let lf = random_lf(LfShape::new(5, 5, 64, 64, 3), 1);
    let a = forward(&lf, &params, &cfg).unwrap();
    let b = forward(&lf, &params, &cfg).unwrap();
    assert_eq!(a.shape(), lf.shape());
    assert!(a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn forward_rejects_wrong_angular_size() {
    let cfg = tiny_config(2, 2, 4);
    let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
    let lf = random_lf(LfShape::new(3, 2, 8, 8, 3), 0);
    assert!(forward(&lf, &params, &cfg).is_err());
}

#[test]
fn views_with_different_means_get_different_kernels() {
    let cfg = tiny_config(2, 2, 4);
    let params = ModelParams::<f64>::init(&cfg, 9).unwrap();
    let SpatialKernel::Adaptive(g) = &params.blocks[0].spatial else {
        panic!("adaptive block expected")
    };
    let mut r = rng(3);
    let a: Vec<f64> = (0..8 * 8 * 4).map(|_| r.gen::<f64>()).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
    let (ka, kb) = (generate_view_kernel(&a, g), generate_view_kernel(&b, g));
    assert_eq!(ka.len(), 3 * 3 * 4 * 4);
    assert!(max_diff(&ka, &kb) > 1e-6);
    assert_eq!(ka, generate_view_kernel(&a, g));
}

/// Field whose views 0 and 3 share content and views 1 and 2 differ.
fn two_identical_views(seed: u64) -> Field<f64> {
    let s = LfShape::new(2, 2, 6, 6, 4);
    let mut r = rng(seed);
    let view: Vec<f64> = (0..s.x * s.y * s.c).map(|_| r.gen()).collect();
    let mut data = Vec::new();
    for p in 0..4 {
        if p == 0 || p == 3 {
            data.extend_from_slice(&view);
        } else {
            data.extend((0..view.len()).map(|_| r.gen::<f64>()));
        }
    }
    Field::from_vec(s, data)
}

#[test]
fn identical_content_views_match_in_both_block_variants() {
    let f = two_identical_views(4);
    for ab in [Ablation::Full, Ablation::NoVasc] {
        // Angular fusion mixes neighbours, so compare before it.
        let cfg = tiny_config(2, 2, 4).ablation(ab);
        let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let (_, tape) = vasc_block_forward(&params.blocks[0], &f).unwrap();
        assert_eq!(tape.spatial.view(0), tape.spatial.view(3), "{}", ab.label());
        assert_ne!(tape.spatial.view(0), tape.spatial.view(1), "{}", ab.label());
        let len = 3 * 3 * 4 * 4;
        match ab {
            Ablation::Full => {
                assert_eq!(tape.kernels.len(), 4 * len);
                assert_eq!(tape.kernels[..len], tape.kernels[3 * len..]);
                assert_ne!(tape.kernels[..len], tape.kernels[len..2 * len]);
            }
            _ => assert_eq!(tape.kernels.len(), len),
        }
    }
}

#[test]
fn reorganize_is_a_bijection_on_index_pairs() {
    let s = LfShape::new(3, 3, 1, 1, 9);
    let n = 9;
    // Encode (view, channel) as a unique value and read back where it lands.
    let f = Field::from_vec(s, (0..n * n).map(|i| i as f64).collect());
    let out = reorganize_dp(&f).unwrap();
    let mut seen = vec![false; n * n];
    for p in 0..n {
        for q in 0..n {
            let src = out.view(p)[q] as usize;
            assert!(!seen[src]);
            seen[src] = true;
            assert_eq!((src / n, src % n), (q, p));
        }
    }
    assert!(seen.iter().all(|&x| x));
    assert_eq!(reorganize_dp(&out).unwrap(), f);
}

#[test]
fn reorganize_synthetic_coding() {
    let s = LfShape::new(3, 3, 2, 3, 9);
    let data = (0..s.len())
        .map(|i| {
            let (view, ch) = (i / (s.x * s.y * s.c), i % s.c);
            view as f64 + ch as f64 / 100.0
        })
        .collect();
    let out = reorganize_dp(&Field::from_vec(s, data)).unwrap();
    for p in 0..9 {
        for px in out.view(p).chunks(9) {
            for (q, &val) in px.iter().enumerate() {
                assert_eq!(val, q as f64 + p as f64 / 100.0);
            }
        }
    }
}

#[test]
fn ape_appends_raw_coordinates() {
    let feat: Vec<f64> = (0..4 * 25).map(|i| i as f64 * 0.1).collect();
    let out = apply_ape(&feat, 25, 0, 0);
    assert_eq!(out.len(), 4 * 27);
    for (px, orig) in out.chunks(27).zip(feat.chunks(25)) {
        assert_eq!(&px[..25], orig);
        assert_eq!(&px[25..], &[0.0, 0.0]);
    }
    let out = apply_ape(&feat, 25, 2, 3);
    assert!(out.chunks(27).all(|px| px[25] == 2.0 && px[26] == 3.0));
}

#[test]
fn ape_sensitivity() {
    for use_ape in [true, false] {
        let cfg = ModelConfig {
            use_ape,
            ..tiny_config(2, 2, 4)
        };
        let params = ModelParams::<f64>::init(&cfg, 6).unwrap();
        let Head::Dpva(head) = &params.head else {
            panic!("dpva head expected")
        };
        let mut r = rng(8);
        let adp: Vec<f64> = (0..16 * 4).map(|_| r.gen()).collect();
        let a = attention_weights(head, &adp, 4, 0, 0, use_ape).weights;
        let b = attention_weights(head, &adp, 4, 1, 1, use_ape).weights;
        if use_ape {
            assert!(max_diff(&a, &b) > 1e-6);
        } else {
            assert_eq!(a, b);
        }
    }
}

/// `sharp[i][c] = sum over (uh, vh) of ve[i][blk] * w[i][blk]`.
fn fusion_oracle(ve: &[f64], w: &[f64], u: usize, v: usize, c: usize) -> Vec<f64> {
    let width = u * v * c;
    let pixels = ve.len() / width;
    let mut out = vec![0.0; pixels * c];
    for i in 0..pixels {
        for ch in 0..c {
            for uh in 0..u {
                for vh in 0..v {
                    let blk = (uh * v + vh) * c + ch;
                    out[i * c + ch] += ve[i * width + blk] * w[i * width + blk];
                }
            }
        }
    }
    out
}

#[test]
fn fusion_matches_triple_loop() {
    let (u, v, x, y, c) = (2, 2, 4, 4, 3);
    let start = Instant::now();
    let mut r = rng(21);
    for _ in 0..20 {
        for _view in 0..u * v {
            let len = x * y * u * v * c;
            let ve: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
            let got = fuse(&ve, &w, u * v, c);
            assert!(max_diff(&got, &fusion_oracle(&ve, &w, u, v, c)) <= 1e-6);
        }
    }
    assert!(start.elapsed().as_secs_f64() <= 5.0);
}

#[test]
fn zero_weights_fuse_to_zero() {
    let ve = vec![0.7; 16 * 12];
    assert!(fuse(&ve, &vec![0.0; 16 * 12], 4, 3)
        .iter()
        .all(|&s| s == 0.0));
}

fn enumerated_generator(p: &ModelParams<f64>) -> usize {
    match &p.blocks[0].spatial {
        SpatialKernel::Adaptive(g) => [&g.fc1, &g.fc2, &g.kernel_gen]
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum(),
        SpatialKernel::Static(t) => t.len(),
    }
}

#[test]
fn counts_match_enumerated_arrays() {
    for cfg in [ModelConfig::default(), tiny_config(3, 3, 8)] {
        for ab in Ablation::ALL {
            let c = cfg.ablation(ab);
            let params = ModelParams::<f64>::init(&c, 0).unwrap();
            assert_eq!(
                params.scalar_count(),
                count_params(&c).total(),
                "{}",
                ab.label()
            );
        }
        let params = ModelParams::<f64>::init(&cfg, 0).unwrap();
        assert_eq!(
            enumerated_generator(&params),
            generator_param_formula(cfg.channels, cfg.descriptor_width, cfg.kernel_size, true)
        );
    }
}

#[test]
fn ablation_deltas_follow_the_formula() {
    let cfg = ModelConfig::default();
    let (c, ck, k, b, n) = (
        cfg.channels,
        cfg.descriptor_width,
        cfg.kernel_size,
        cfg.num_blocks,
        cfg.views(),
    );
    let full = count_params(&cfg).total();
    let no_vasc = count_params(&cfg.ablation(Ablation::NoVasc)).total();
    assert_eq!(
        full - no_vasc,
        b * (generator_param_formula(c, ck, k, true) - k * k * c * c)
    );
    let no_ape = count_params(&cfg.ablation(Ablation::NoApe)).total();
    assert_eq!(full - no_ape, 2 * cfg.attention_hidden);
    let no_dpva = count_params(&cfg.ablation(Ablation::NoDpva)).total();
    let h = cfg.attention_hidden;
    let head = (c * n * c + n * c) + (9 * c * n + n) + ((n + 2) * h + h) + (h * n * c + n * c);
    assert_eq!(full - no_dpva, head);
}

#[test]
fn default_budget() {
    let total = count_params(&ModelConfig::default()).total();
    assert!((500_000..=760_000).contains(&total), "{total}");
    assert_eq!(ModelConfig::default().descriptor_width, 4);
}

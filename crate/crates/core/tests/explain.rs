mod common;

use medgrad_core::explain::entropy::disk_size;
use medgrad_core::explain::{
    explain, grad_eclip, local_entropy_fast, medgrad_eclip, render_panel, to_gray, ExplainConfig, Method,
};
use medgrad_core::model::{ClipModel, ModelConfig};
use medgrad_core::numerics::Rng;
use medgrad_core::raster::Raster;
use medgrad_core::synthdata::{generate_dataset, SynthConfig};

fn setup() -> (ClipModel<f32>, medgrad_core::synthdata::Dataset) {
    let data = generate_dataset(&SynthConfig {
        k_classes: 4,
        n_pairs: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        vocab_size: data.vocab.len(),
        ..ModelConfig::default()
    };
    (ClipModel::new(cfg, 5).unwrap(), data)
}

#[test]
fn local_entropy_is_bounded() {
    let image = common::random_image(&mut Rng::new(3), 16);
    for (radius, bins) in [(1, 8), (2, 32), (5, 256)] {
        let map = local_entropy_fast(&to_gray(&image), radius, bins).unwrap();
        // At most as many distinct values as the smaller of bins and disk pixels.
        let cap = (bins.min(disk_size(radius)) as f64).log2();
        assert!(
            map.values.iter().all(|&h| (0.0..=cap + 1e-12).contains(&h)),
            "r={radius} bins={bins}"
        );
        assert!(map.values.iter().any(|&h| h > 0.0));
    }
}

#[test]
fn constant_image_gets_zero_medgrad_saliency() {
    let (model, data) = setup();
    let flat = Raster::filled(64, 64, [0.6, 0.5, 0.4]);
    let p = &data.pairs[0];
    let map = medgrad_eclip(&model, &flat, &p.tokens, &p.caption, &ExplainConfig::default()).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0), "{:?}", map.values);
}

#[test]
fn every_method_gives_a_normalized_map_on_the_patch_grid() {
    let (model, data) = setup();
    let side = model.config().grid_side();
    for p in data.pairs.iter().take(3) {
        for m in Method::ALL {
            let map = explain(m, &model, &p.image, &p.tokens, &p.caption, &ExplainConfig::default()).unwrap();
            assert_eq!((map.rows, map.cols, map.values.len()), (side, side, side * side));
            assert_eq!(map.method, m);
            assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)), "{m}");
            assert!(map.values.iter().any(|&v| v > 0.0), "{m} is all zero");
        }
    }
}

#[test]
fn entropy_weighting_changes_the_map() {
    let (model, data) = setup();
    let p = &data.pairs[1];
    let med = medgrad_eclip(&model, &p.image, &p.tokens, &p.caption, &ExplainConfig::default()).unwrap();
    let qk = grad_eclip(&model, &p.image, &p.tokens, &p.caption).unwrap();
    let l1: f64 = med.values.iter().zip(&qk.values).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 > 1e-3, "maps nearly identical: L1 {l1}");
}

#[test]
fn explanations_are_deterministic() {
    let (model, data) = setup();
    let p = &data.pairs[2];
    for m in Method::ALL {
        let a = explain(m, &model, &p.image, &p.tokens, &p.caption, &ExplainConfig::default()).unwrap();
        let b = explain(m, &model, &p.image, &p.tokens, &p.caption, &ExplainConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn panel_grows_with_each_map() {
    let (model, data) = setup();
    let p = &data.pairs[0];
    let cfg = ExplainConfig::default();
    let maps: Vec<_> = Method::ALL
        .iter()
        .map(|&m| explain(m, &model, &p.image, &p.tokens, &p.caption, &cfg).unwrap())
        .collect();
    let dims = |n: usize| {
        let labels: Vec<String> = (0..=n).map(|i| format!("panel {i}")).collect();
        let png = render_panel(&p.image, &maps[..n], &labels, cfg.overlay_alpha).unwrap();
        let img = image::load_from_memory(&png).unwrap();
        (img.width(), img.height())
    };
    let (w1, h1) = dims(1);
    let (w3, h3) = dims(3);
    assert_eq!(h1, h3);
    // Two more panels of equal width, each with one gap.
    assert_eq!((w3 - w1) % 2, 0);
    assert!(w3 > w1);
}

//! Properties that only hold once the encoders have learned something.

use std::sync::OnceLock;

use medgrad_core::eval::{clip_score, evaluate};
use medgrad_core::model::{train, ClipModel, ModelConfig, TrainConfig};
use medgrad_core::synthdata::{generate_dataset, split_dataset, Dataset, SynthConfig};

struct Run {
    model: ClipModel<f32>,
    train: Dataset,
    test: Dataset,
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let data = generate_dataset(&SynthConfig {
            k_classes: 4,
            n_pairs: 240,
            image_size: 32,
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = split_dataset(data.pairs.clone(), 0.75, 8).unwrap();
        let cfg = ModelConfig {
            image_size: 32,
            vocab_size: data.vocab.len(),
            ..ModelConfig::default()
        };
        let mut model = ClipModel::new(cfg, 8).unwrap();
        let train_set = data.with_pairs(split.train);
        let tc = TrainConfig {
            epochs: 12,
            batch_size: 30,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        train(&mut model, &train_set, &tc, |_| {}).unwrap();
        Run {
            model,
            train: train_set,
            test: data.with_pairs(split.test),
        }
    })
}

fn text(run: &Run, caption: &str) -> Vec<f32> {
    let tokens = run.train.vocab.tokenize(caption, run.train.context_length).unwrap();
    run.model.encode_text(&tokens).unwrap().data().to_vec()
}

#[test]
fn reordered_captions_embed_alike() {
    let r = run();
    let a = text(r, "melanoma, asymmetric");
    let b = text(r, "asymmetric, melanoma");
    let cos = clip_score(&a, &b).unwrap();
    assert!(cos > 0.9, "cosine {cos}");
}

#[test]
fn matched_captions_score_above_mismatched() {
    let r = run();
    let k = r.test.classes.len();
    let prompts = r.model.encode_texts(&r.test.class_prompts()).unwrap();
    let mut wins = 0;
    for p in &r.test.pairs {
        let img = r.model.image_embedding(&p.image).unwrap();
        let own = clip_score(img.data(), prompts[p.class_id].data()).unwrap();
        let other = clip_score(img.data(), prompts[(p.class_id + 1) % k].data()).unwrap();
        if own > other {
            wins += 1;
        }
    }
    assert!(wins * 10 >= r.test.len() * 9, "{wins} of {}", r.test.len());
}

#[test]
fn train_accuracy_is_at_least_test_accuracy() {
    let r = run();
    let (train_report, _) = evaluate(&r.model, &r.train, 32).unwrap();
    let (test_report, _) = evaluate(&r.model, &r.test, 32).unwrap();
    assert!(test_report.accuracy > 0.5, "test accuracy {}", test_report.accuracy);
    assert!(
        train_report.accuracy >= test_report.accuracy,
        "train {} < test {}",
        train_report.accuracy,
        test_report.accuracy
    );
    let (again, _) = evaluate(&r.model, &r.test, 32).unwrap();
    assert_eq!(again.to_json(), test_report.to_json());
}

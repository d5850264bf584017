//! Reference toy run: generate, split, train, evaluate.
//!
//! `cargo run --release -p medgrad-core --example toy_run [epochs]`

use std::time::Instant;

use medgrad_core::eval::evaluate;
use medgrad_core::model::{train, ClipModel, ModelConfig, TrainConfig};
use medgrad_core::synthdata::{generate_dataset, split_dataset, SynthConfig};

fn main() -> medgrad_core::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let synth = SynthConfig::default();
    let data = generate_dataset(&synth)?;
    let split = split_dataset(data.pairs.clone(), 0.75, synth.seed)?;
    let train_set = data.with_pairs(split.train);
    let test_set = data.with_pairs(split.test);

    let cfg = ModelConfig {
        vocab_size: data.vocab.len(),
        ..ModelConfig::default()
    };
    let mut model = ClipModel::<f32>::new(cfg, synth.seed)?;
    let (before, _) = evaluate(&model, &test_set, 64)?;
    println!(
        "before: acc {:.3} clip {:.4} loss {:.4}",
        before.accuracy, before.clip_score, before.loss
    );

    let start = Instant::now();
    let tc = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, &tc, |e| {
        println!(
            "epoch {:2} loss {:.4} train_acc {:.3} ({:.0}s)",
            e.epoch,
            e.loss,
            e.train_acc,
            start.elapsed().as_secs_f64()
        );
    })?;
    let (after, cm) = evaluate(&model, &test_set, 64)?;
    println!(
        "after: acc {:.3} clip {:.4} loss {:.4}",
        after.accuracy, after.clip_score, after.loss
    );
    println!("{:?}", cm.counts);
    Ok(())
}

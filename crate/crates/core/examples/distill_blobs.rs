//! Every distillation variant on synthetic blobs with small perceptrons.
//! Runs in seconds and needs no downloads.
//!
//!     cargo run --release --example distill_blobs

use qrkd::distill::{compute_metrics, distill_student, evaluate, summarize, train_teacher, DatasetConfig, DistillConfig};
use qrkd::losses::Variant;
use qrkd::nn::ModelSpec;
use qrkd::qsim::EncodingSpec;

fn main() -> qrkd::Result<()> {
    let base = DistillConfig {
        epochs: 25,
        batch_size: 32,
        encoding: EncodingSpec::fitting(4, 16, true),
        dataset: DatasetConfig::Blobs {
            classes: 4,
            train_per_class: 96,
            test_per_class: 32,
            side: 6,
            spread: 0.6,
            subset_seed: 3,
        },
        student: ModelSpec::mlp(vec![1, 6, 6], 16, 4),
        teacher: ModelSpec::mlp(vec![1, 6, 6], 16, 4),
        ..DistillConfig::default()
    };
    let (train, test) = base.dataset.load()?;
    let teacher = train_teacher(&DistillConfig { epochs: 40, ..base.clone() }, &train, &test)?;
    let teacher_acc = evaluate(&teacher.model, &test)?;
    println!("teacher test accuracy {teacher_acc:.2}%");

    let mut records = Vec::new();
    for variant in Variant::ALL {
        for seed in 1..=3 {
            let config = DistillConfig { variant, seed, ..base.clone() };
            records.push(distill_student(&config, &train, &test, Some(&teacher.model))?.record());
        }
    }
    let scratch: Vec<_> = records.iter().filter(|r| r.variant == Variant::Scratch).cloned().collect();
    for s in summarize(&compute_metrics(&records, &scratch, teacher_acc)?) {
        let gain = s.dist_gain.map(|g| g.to_string()).unwrap_or_default();
        println!("{:<8} train {}  test {}  gain {gain}", s.variant.name(), s.train_acc, s.test_acc);
    }
    Ok(())
}

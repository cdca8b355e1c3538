//! Teacher, scratch student and QRKD student on an MNIST subset, two epochs each.
//! Expects the IDX files in `data/mnist` or `$QRKD_MNIST_DIR`.
//!
//!     cargo run --release --example mnist_pipeline

use std::time::Instant;

use qrkd::distill::{distill_with_cache, train_teacher, DatasetConfig, DistillConfig, TeacherCache};
use qrkd::losses::Variant;

fn main() -> qrkd::Result<()> {
    let mut config = DistillConfig {
        epochs: 2,
        dataset: DatasetConfig::Mnist {
            dir: None,
            train_size: Some(3000),
            test_size: Some(1000),
            subset_seed: 0,
        },
        ..DistillConfig::default()
    };
    let (train, test) = config.dataset.load()?;
    println!("{} training and {} test images", train.len(), test.len());

    let start = Instant::now();
    let teacher = train_teacher(&config, &train, &test)?;
    println!(
        "teacher ({} parameters): test {:.2}%  [{:.1?}]",
        teacher.model.parameter_count(),
        teacher.test_acc,
        start.elapsed()
    );
    let cache = TeacherCache::new(&teacher.model, &train)?;

    for variant in [Variant::Scratch, Variant::Qrkd] {
        config.variant = variant;
        let start = Instant::now();
        let run = distill_with_cache(&config, &train, &test, Some(&cache))?;
        let losses: Vec<String> = run.epochs.iter().map(|e| format!("{:.3}", e.mean.total)).collect();
        println!(
            "{variant:<7} ({} parameters): test {:.2}%  loss per epoch [{}]  [{:.1?}]",
            run.model.parameter_count(),
            run.test_acc,
            losses.join(", "),
            start.elapsed()
        );
    }
    Ok(())
}

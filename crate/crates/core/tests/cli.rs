use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qrkd::distill::{DatasetConfig, DistillConfig};
use qrkd::nn::ModelSpec;
use qrkd::qsim::EncodingSpec;

fn qrkd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrkd"))
        .args(args)
        .env("QRKD_OUT_DIR", out)
        .env_remove("QRKD_MNIST_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn blobs_config() -> DistillConfig {
    DistillConfig {
        epochs: 2,
        batch_size: 16,
        encoding: EncodingSpec::fitting(4, 12, true),
        dataset: DatasetConfig::Blobs {
            classes: 3,
            train_per_class: 32,
            test_per_class: 16,
            side: 5,
            spread: 0.4,
            subset_seed: 2,
        },
        student: ModelSpec::mlp(vec![1, 5, 5], 12, 3),
        teacher: ModelSpec::mlp(vec![1, 5, 5], 12, 3),
        ..DistillConfig::default()
    }
}

/// Writes the config with its top-level keys in reverse order when `reverse` is set.
fn write_config(dir: &Path, name: &str, reverse: bool) -> PathBuf {
    let value = serde_json::to_value(blobs_config()).unwrap();
    let mut entries: Vec<(String, serde_json::Value)> = value.as_object().unwrap().clone().into_iter().collect();
    if reverse {
        entries.reverse();
    }
    let body: Vec<String> = entries.iter().map(|(k, v)| format!("{}: {}", serde_json::to_string(k).unwrap(), v)).collect();
    let path = dir.join(name);
    std::fs::write(&path, format!("{{{}}}", body.join(", "))).unwrap();
    path
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn help_documents_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 6] = [
        ("train-teacher", &["--config", "--epochs", "--mnist-dir", "--train-size", "--test-size", "--seed", "--out", "--jobs"]),
        ("distill", &["--config", "--variant", "--seeds", "--teacher", "--epochs"]),
        ("kernel-variance", &["--qubits", "--samples", "--dim", "--normalize", "--kernel", "--seeds"]),
        ("jl", &["--source-qubits", "--target-dims", "--seeds", "--samples", "--dim", "--noise"]),
        ("gaussian-sweep", &["--sigmas", "--seeds", "--teacher", "--config"]),
        ("selftest", &["--out"]),
    ];
    for (cmd, flags) in cases {
        let o = qrkd(&[cmd, "--help"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(qrkd(&["selftest"], tmp.path()).status.code(), Some(0));
    assert_eq!(qrkd(&[], tmp.path()).status.code(), Some(2));
    assert_eq!(qrkd(&["jl", "--bogus"], tmp.path()).status.code(), Some(2));
    assert_eq!(qrkd(&["distill", "--variant", "QRKD-X"], tmp.path()).status.code(), Some(2));
    assert_eq!(qrkd(&["distill", "--seeds", "5..1"], tmp.path()).status.code(), Some(2));
    assert_eq!(qrkd(&["gaussian-sweep", "--sigmas", "0"], tmp.path()).status.code(), Some(2));
    assert_eq!(qrkd(&["jl", "--target-dims", "8192"], tmp.path()).status.code(), Some(1));

    let o = qrkd(&["distill", "--config", "/definitely/missing.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/missing.json"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "c.json", false);
    let o = qrkd(&["distill", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train-teacher"), "{}", stderr(&o));
}

#[test]
fn training_outputs_are_byte_identical_across_runs_and_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", false);
    let cfg = cfg.to_str().unwrap();
    let mut trees = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = tmp.path().join(run);
        let o = qrkd(&["train-teacher", "--config", cfg], &out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = qrkd(&["--jobs", jobs, "distill", "--config", cfg, "--seeds", "1..2"], &out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        trees.push(out);
    }
    let files = files_under(&trees[0]);
    assert!(files.contains(&PathBuf::from("distill/metrics.csv")));
    assert!(files.contains(&PathBuf::from("distill/checkpoints/QRKD-seed2.ckpt")));
    assert!(files.contains(&PathBuf::from("teacher/teacher-seed0.ckpt")));
    for other in &trees[1..] {
        assert_eq!(files_under(other), files);
        for f in files.iter().filter(|f| f.file_name().unwrap() != "report.json") {
            assert_eq!(std::fs::read(trees[0].join(f)).unwrap(), std::fs::read(other.join(f)).unwrap(), "{}", f.display());
        }
    }

    let metrics = std::fs::read_to_string(trees[0].join("distill/metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    assert_eq!(header, qrkd::distill::CSV_HEADER.join(","));
    // 7 variants x 2 seeds x 2 epochs.
    assert_eq!(metrics.lines().count(), 1 + 7 * 2 * 2);

    let sweep = qrkd(&["gaussian-sweep", "--config", cfg, "--seeds", "1", "--sigmas", "0.3,0.9"], &trees[0]);
    assert_eq!(sweep.status.code(), Some(0), "{}", stderr(&sweep));
    let sweep_csv = std::fs::read_to_string(trees[0].join("gaussian_sweep/sigma-0.3/metrics.csv")).unwrap();
    assert_eq!(sweep_csv.lines().next().unwrap(), header);
    let summary = std::fs::read_to_string(trees[0].join("gaussian_sweep/summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("sigma,")).count(), 1);
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn digest_ignores_config_key_order() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for (name, reverse) in [("fwd.json", false), ("rev.json", true)] {
        let cfg = write_config(tmp.path(), name, reverse);
        let out = tmp.path().join(format!("out-{name}"));
        let o = qrkd(&["train-teacher", "--config", cfg.to_str().unwrap(), "--epochs", "1"], &out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        digests.push(report(&out.join("teacher"))["config_digest"].clone());
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0].as_str().unwrap().len(), 64);
}

#[test]
fn analysis_commands_write_stable_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["kernel-variance", "--samples", "30", "--qubits", "2,4", "--seeds", "1..2"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(qrkd(&args, &a).status.code(), Some(0));
    assert_eq!(qrkd(&args, &b).status.code(), Some(0));
    let path = "kernel_variance/kernel_variance.csv";
    let text = std::fs::read_to_string(a.join(path)).unwrap();
    assert_eq!(text, std::fs::read_to_string(b.join(path)).unwrap());
    assert!(text.starts_with("n_qubits,kernel,normalized,seed,mean,variance,trend\n"));
    // Two kernels x two qubit counts x two seeds, plus one trend row per kernel.
    assert_eq!(text.lines().count(), 1 + 8 + 2);

    let jl = ["jl", "--source-qubits", "6", "--target-dims", "8,16,32", "--seeds", "1..3", "--samples", "6", "--dim", "24"];
    assert_eq!(qrkd(&jl, &a).status.code(), Some(0));
    let csv = std::fs::read_to_string(a.join("jl/jl.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
}

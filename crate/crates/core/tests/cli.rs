mod common;

use std::path::Path;
use std::process::{Command, Output};

use qvnn::io::{load_model, save_model};
use qvnn::layers::Layer;
use qvnn::presets;

fn qvnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvnn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [&["frobnicate"][..], &["train"], &["train", "--preset", "mnist-qcnn"], &["report", "--model", "m", "--bogus"]] {
        let out = qvnn(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).contains("Usage"), "{args:?}: {}", stderr(&out));
    }
    assert!(stderr(&qvnn(&["train"])).contains("--data-dir"));
}

#[test]
fn runtime_errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.qvnn");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["report", "--model", p(&missing)], "error[io]: "),
        (vec!["gradcheck", "--preset", "resnet"], "error[contract]: "),
        (vec!["train", "--data-dir", p(dir.path()), "--reg", "huber"], "error[contract]: "),
        (vec!["train", "--data-dir", p(dir.path()), "--reg", "bn-l1", "--lambda=-1"], "error[contract]: "),
        (vec!["train", "--data-dir", p(dir.path())], "error[io]: "),
    ];
    for (args, prefix) in cases {
        let out = qvnn(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
    }
    std::fs::write(&missing, b"QVNN\x02\0\0\0").unwrap();
    let err = stderr(&qvnn(&["report", "--model", p(&missing)]));
    assert!(err.starts_with("error[unsupported_version]: "), "{err}");
}

#[test]
fn gradcheck_passes_on_the_batch_norm_preset() {
    let out = qvnn(&["gradcheck", "--preset", "mnist-qcnn-bn", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let value: f64 = text
        .split_whitespace()
        .find_map(|t| t.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(value <= 1e-4, "{text}");
}

#[test]
fn gradcheck_reports_failure_through_the_exit_code() {
    let out = qvnn(&["gradcheck", "--preset", "mnist-qcnn", "--max-per-param", "3", "--tolerance", "0"]);
    let err = stderr(&out);
    // Finite differences never agree with the analytic gradient to the last bit.
    assert_eq!(out.status.code(), Some(1));
    assert!(err.starts_with("error[contract]: ") && err.contains("gradient check failed"), "{err}");
}

#[test]
fn report_and_prune_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("bn.qvnn");
    let pruned_path = dir.path().join("pruned.qvnn");
    let mut model = presets::build("mnist-qcnn-bn", 0, 0.2).unwrap();
    let mut zeroed = 0;
    for layer in &mut model.layers {
        if let Layer::BatchNorm(bn) = layer {
            for g in bn.gamma.iter_mut().step_by(2) {
                *g = 0.0;
                zeroed += 1;
            }
        }
    }
    save_model(&model, &model_path).unwrap();

    let out = qvnn(&["report", "--model", p(&model_path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], qvnn::sparsity::SparsityReport::CSV_HEADER);
    let neuron: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((neuron - zeroed as f64 / 48.0).abs() < 1e-6, "{}", lines[1]);

    let out = qvnn(&["prune", "--model", p(&model_path), "--out", p(&pruned_path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().starts_with("before,"));
    let after = text.lines().nth(2).unwrap();
    assert!(after.starts_with("after,"));
    assert_eq!(after.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0);
    let macs = text.lines().find(|l| l.starts_with("macs_before=")).unwrap();
    let ratio: f64 = macs.rsplit("ratio=").next().unwrap().parse().unwrap();
    assert!(ratio < 0.6, "{macs}");

    let pruned = load_model(&pruned_path).unwrap();
    let gammas: usize = pruned.layers.iter().filter_map(|l| match l {
        Layer::BatchNorm(bn) => Some(bn.channels()),
        _ => None,
    }).sum();
    assert_eq!(gammas, 48 - zeroed);
}

#[test]
fn train_save_and_eval_on_mnist() {
    if !common::have_mnist() {
        eprintln!("skipping: MNIST files not found");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let data = common::mnist_dir();
    let model = dir.path().join("m.qvnn");
    let csv = dir.path().join("m.csv");
    let out = qvnn(&[
        "train", "--data-dir", p(&data), "--preset", "mnist-qcnn-bn", "--subset", "200", "--test-subset", "300",
        "--epochs", "2", "--reg", "rq+bn-l1", "--seed", "3", "--out", p(&model), "--metrics-csv", p(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 3);
    let log = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("# pixel_scale=1/255 preset=mnist-qcnn-bn reg=rq+bn-l1"), "{}", lines[0]);
    assert_eq!(lines.len(), 4);
    let last_acc: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();

    let out = qvnn(&["eval", "--model", p(&model), "--data-dir", p(&data), "--test-subset", "300"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let acc: f64 = stdout(&out).trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    // The saved parameters are rounded to 32 bits; a 300-sample accuracy moves in steps of 1/300.
    assert!((acc - last_acc).abs() <= 1.0 / 300.0 + 1e-9, "{acc} vs {last_acc}");
}

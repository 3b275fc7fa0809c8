use std::path::Path;
use std::process::{Command, Output};

use rnla_cli::record::{read_csv, Impl, CSV_HEADER, SKIP_EXCEEDS_DENSE};
use rnla_cli::tune::{read_dataset, write_dataset, Dataset};
use rnla_core::nn::{DenseLinear, Layer, Model};
use rnla_core::rng::SeededRng;
use rnla_core::Matrix;

fn rnla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnla")).args(args).output().unwrap()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bench_linear_writes_parseable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("linear.csv");
    let res = rnla(&[
        "bench", "linear", "--din", "64,256", "--dout", "256", "--l", "1,2", "--k", "8,64", "--batch", "4", "--trials",
        "2", "--warmup", "1", "--out", path_arg(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let recs = read_csv(&out).unwrap();
    assert_eq!(recs.len(), 2 * (1 + 4));
    assert_eq!(recs.iter().filter(|r| r.implementation == Impl::Dense).count(), 2);
    // 64x256 at l=2, k=64 stores 2*2*64*320 > 16384.
    assert!(recs.iter().any(|r| r.skip_reason.as_deref() == Some(SKIP_EXCEEDS_DENSE)));
    for r in &recs {
        assert_eq!(r.timing.is_some(), r.skip_reason.is_none());
        assert_eq!(r.trials, 2);
    }
}

#[test]
fn bench_defaults_to_stdout() {
    let res = rnla(&["bench", "linear", "--din", "16", "--dout", "16", "--l", "1", "--k", "2", "--trials", "1", "--warmup", "0"]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.starts_with(&CSV_HEADER.join(",")));
}

#[test]
fn bench_conv_attention_and_decomp() {
    let dir = tempfile::tempdir().unwrap();
    let conv = dir.path().join("conv.csv");
    let res = rnla(&[
        "bench", "conv", "--cin", "3", "--cout", "8", "--kernel", "3", "--image", "8", "--l", "1", "--k", "4", "--batch",
        "2", "--trials", "1", "--warmup", "0", "--out", path_arg(&conv),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let recs = read_csv(&conv).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].params_dense, Some(8 * 27));

    let attn = dir.path().join("attn.csv");
    let res = rnla(&[
        "bench", "attention", "--dmodel", "16", "--heads", "2", "--features", "8,16", "--kernel", "softmax,relu",
        "--seqlen", "8", "--trials", "1", "--warmup", "0", "--out", path_arg(&attn),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let recs = read_csv(&attn).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r.seq_len == Some(8) && r.timing.is_some()));

    let decomp = dir.path().join("decomp.csv");
    let res = rnla(&[
        "bench", "decomp", "--kind", "rsvd", "--rows", "120", "--cols", "60", "--rank", "5", "--trials", "1", "--warmup",
        "0", "--out", path_arg(&decomp),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let recs = read_csv(&decomp).unwrap();
    assert_eq!(recs.len(), 1);
    assert!(recs[0].recon_rel_err.unwrap() < 1e-8);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rnla(&["bench", "linear", "--din", "16"]).status.code(), Some(1));
    assert_eq!(rnla(&["bench", "nonsense"]).status.code(), Some(1));
    let res = rnla(&["bench", "attention", "--dmodel", "10", "--heads", "3", "--features", "4", "--seqlen", "4"]);
    assert_eq!(res.status.code(), Some(1));
    let res = rnla(&["bench", "decomp", "--kind", "cqrrpt", "--rows", "10", "--cols", "40"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(rnla(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let res = rnla(&["model", "inspect", path_arg(&dir.path().join("missing.json"))]);
    assert_eq!(res.status.code(), Some(2));
    let res = rnla(&[
        "bench", "linear", "--din", "8", "--dout", "8", "--l", "1", "--k", "2", "--trials", "1", "--out",
        path_arg(&dir.path().join("no/such/dir/out.csv")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

fn toy_setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let model = Model::from_layers([
        ("fc1", Layer::DenseLinear(DenseLinear::random(6, 10, 1))),
        ("act", Layer::Relu),
        ("fc2", Layer::DenseLinear(DenseLinear::random(10, 3, 2))),
    ])
    .unwrap();
    let model_path = dir.join("toy.json");
    model.save(&model_path).unwrap();
    let mut rng = SeededRng::new(3);
    let data = Dataset {
        x: Matrix::random_normal(6, 40, &mut rng),
        labels: (0..40).map(|i| i % 3).collect(),
    };
    let data_path = dir.join("toy.csv");
    write_dataset(&data, &data_path).unwrap();
    assert_eq!(read_dataset(&data_path).unwrap().labels, data.labels);
    (model_path, data_path)
}

#[test]
fn tune_writes_report_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = toy_setup(dir.path());
    let (out_model, report) = (dir.path().join("tuned.json"), dir.path().join("report.csv"));
    let res = rnla(&[
        "tune", "--model", path_arg(&model), "--data", path_arg(&data), "--select", "names:fc1", "--params", "1x2,1x4",
        "--tolerance", "10", "--out-model", path_arg(&out_model), "--report", path_arg(&report),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = std::fs::read_to_string(&report).unwrap();
    assert_eq!(report.lines().count(), 3);
    let tuned = Model::load(&out_model).unwrap();
    assert!(matches!(tuned.get("fc1"), Some(Layer::SkLinear(_))));
    assert!(matches!(tuned.get("fc2"), Some(Layer::DenseLinear(_))));

    let res = rnla(&["model", "inspect", path_arg(&out_model)]);
    assert!(res.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(manifest.is_object());
}

#[test]
fn tune_without_feasible_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = toy_setup(dir.path());
    let report = dir.path().join("report.csv");
    let res = rnla(&[
        "tune", "--model", path_arg(&model), "--data", path_arg(&data), "--select", "type:Linear", "--params", "1x1",
        "--metric", "accuracy", "--threshold", "1.01", "--report", path_arg(&report),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(report.exists());
    let res = rnla(&["tune", "--model", path_arg(&model), "--data", path_arg(&data), "--select", "names:nope", "--tolerance", "1"]);
    assert_eq!(res.status.code(), Some(1));
}

use std::path::Path;
use std::process::{Command, Output};

use pointseg::scene::{read_descriptor_bin, read_label_bin, read_point_bin};
use pointseg::train::{RunConfig, CHECKPOINT_FILE, LOSS_LOG_FILE};

fn pointseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointseg")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_small_config(path: &Path) {
    let mut cfg = RunConfig::benchmark();
    cfg.train.stage1_epochs = 1;
    cfg.train.stage2_epochs = 1;
    std::fs::write(path, cfg.to_toml().unwrap()).unwrap();
}

#[test]
fn generate_train_eval_infer_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let config = dir.path().join("run.toml");
    write_small_config(&config);

    let out = pointseg(&["generate", "--out", s(&data), "--train", "4", "--val", "2", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("val_0001.bin").exists());

    let out = pointseg(&["train", "--out", s(&run), "--config", s(&config), "--data", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [CHECKPOINT_FILE, LOSS_LOG_FILE, "metrics.csv", "metrics.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let loss_rows = std::fs::read_to_string(run.join(LOSS_LOG_FILE)).unwrap().lines().count();
    assert_eq!(loss_rows, 1 + 2 * 2);

    let ckpt = run.join(CHECKPOINT_FILE);
    let eval_dir = dir.path().join("eval");
    let out = pointseg(&["eval", "--checkpoint", s(&ckpt), "--out", s(&eval_dir), "--data", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(eval_dir.join("metrics.csv")).unwrap(),
        std::fs::read(run.join("metrics.csv")).unwrap()
    );

    let bin = data.join("val_0000.bin");
    let pred = dir.path().join("pred.label");
    let desc = dir.path().join("pred.desc");
    let out = pointseg(&[
        "infer", "--checkpoint", s(&ckpt), "--bin", s(&bin), "--out", s(&pred), "--descriptors", s(&desc),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let n = read_point_bin(&std::fs::read(&bin).unwrap()).unwrap().len();
    assert_eq!(read_label_bin(&std::fs::read(&pred).unwrap()).unwrap().len(), n);
    assert_eq!(read_descriptor_bin(&std::fs::read(&desc).unwrap()).unwrap().rows(), n);

    let clustered = dir.path().join("clustered.label");
    let out = pointseg(&[
        "cluster", "--bin", s(&bin), "--label", s(&data.join("val_0000.label")), "--desc", s(&desc), "--out",
        s(&clustered),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_label_bin(&std::fs::read(&clustered).unwrap()).unwrap().len(), n);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pointseg(&["--help"]).status.code(), Some(0));
    assert_eq!(pointseg(&[]).status.code(), Some(1));
    assert_eq!(pointseg(&["train", "--bogus"]).status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "voxel_size = -1.0\n").unwrap();
    let out = pointseg(&["train", "--out", s(&dir.path().join("r")), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.bin");
    let out = pointseg(&[
        "infer", "--checkpoint", s(&missing), "--bin", s(&missing), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let truncated = dir.path().join("truncated.bin");
    std::fs::write(&truncated, [0u8; 7]).unwrap();
    let out = pointseg(&[
        "cluster", "--bin", s(&truncated), "--label", s(&truncated), "--desc", s(&truncated), "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

mod common;

use std::fs;
use std::process::Command;

use celldet::data::{DataConfig, Example, SynthConfig};
use celldet::grid::{DetectionMaps, ModelOutputs};
use celldet::harness::train::METRICS_HEADER;
use celldet::harness::{
    evaluate, evaluate_examples, infer, train, Checkpoint, Predictor, TrainConfig, TrainOutputs, Trainer,
};
use celldet::model::ModelConfig;
use celldet::tensor::Tensor;

struct Oracle<'a>(&'a [Example]);

impl Predictor for Oracle<'_> {
    fn predict(&self, inputs: &Tensor) -> celldet::Result<Vec<ModelOutputs>> {
        // Finds each input among the examples and returns its targets.
        let per = inputs.len() / inputs.dim(0);
        Ok(inputs
            .data()
            .chunks(per)
            .map(|x| self.0.iter().find(|e| e.input.data() == x).unwrap().targets.clone())
            .collect())
    }
}

struct Blank(usize);

impl Predictor for Blank {
    fn predict(&self, inputs: &Tensor) -> celldet::Result<Vec<ModelOutputs>> {
        Ok(vec![DetectionMaps::zeros(self.0, self.0); inputs.dim(0)])
    }
}

fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        ..TrainConfig::desk()
    }
}

#[test]
fn perfect_predictor_scores_one() {
    let [_, _, test] = common::small_splits(20, 32, 1);
    let r = evaluate_examples(&Oracle(&test), &test, 3).unwrap();
    assert_eq!(r.loss, 0.0);
    assert_eq!(r.scores.centroid_mean_iou, 1.0);
    assert!((r.scores.dimensions_ssim - 1.0).abs() < 1e-12);
}

#[test]
fn blank_predictor_scores_background_only() {
    let [_, _, test] = common::small_splits(20, 32, 2);
    let r = evaluate(&Blank(32), &test).unwrap();
    // Background IoU is close to one and foreground IoU is zero.
    assert!(r.centroid_mean_iou > 0.45 && r.centroid_mean_iou < 0.5, "{}", r.centroid_mean_iou);
    let direct: f64 = test
        .iter()
        .map(|e| {
            let zeros = vec![0.0; e.targets.height_map.len()];
            0.5 * (common::direct_ssim(&zeros, e.targets.height_map.data(), 1.0)
                + common::direct_ssim(&zeros, e.targets.width_map.data(), 1.0))
        })
        .sum::<f64>()
        / test.len() as f64;
    assert!((r.dimensions_ssim - direct).abs() < 1e-9);
    assert!(r.dimensions_ssim < 0.9);
}

#[test]
fn overfits_a_single_example() {
    let [train, _, _] = common::small_splits(10, 32, 3);
    let mut trainer = Trainer::new(tiny_train_config(1), ModelConfig::tiny(32)).unwrap();
    let batch = [&train[0]];
    let first = trainer.step(&batch).unwrap().total();
    let mut last = first;
    for _ in 0..200 {
        last = trainer.step(&batch).unwrap().total();
    }
    assert!(last < 0.01, "final loss {last}");
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let [train, val, _] = common::small_splits(20, 32, 4);
    let cfg = tiny_train_config(2);
    let mut straight = Trainer::new(cfg.clone(), ModelConfig::tiny(32)).unwrap();
    straight.run_epoch(&train, &val).unwrap();
    straight.run_epoch(&train, &val).unwrap();

    let mut first = Trainer::new(cfg, ModelConfig::tiny(32)).unwrap();
    first.run_epoch(&train, &val).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.run_epoch(&train, &val).unwrap();

    assert_eq!(resumed.state, straight.state);
}

#[test]
fn checkpoint_bytes_roundtrip() {
    let [train, val, _] = common::small_splits(10, 32, 5);
    let mut t = Trainer::new(tiny_train_config(1), ModelConfig::tiny(32)).unwrap();
    t.run_epoch(&train, &val).unwrap();
    let ckpt = t.checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.model().unwrap(), t.state.model);

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let [train_set, val, _] = common::small_splits(10, 32, 6);
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs::for_checkpoint(&dir.path().join("run.ckpt"));
    let mut trainer = Trainer::new(tiny_train_config(1), ModelConfig::tiny(32)).unwrap();
    train(&mut trainer, &train_set, &val, &out, None).unwrap();
    let csv = fs::read_to_string(&out.metrics).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], METRICS_HEADER);
    assert!(lines[1].starts_with("1,"));
    assert!(out.best.exists() && out.last.exists());
    assert_eq!(Checkpoint::load(&out.best).unwrap().meta.epoch, 1);
}

#[test]
fn inference_reports_partial_failures() {
    let trainer = Trainer::new(tiny_train_config(1), ModelConfig::tiny(32)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("a.png");
    celldet::data::io::write_gray(&good, &celldet::grid::Plane::from_fn(40, 40, |x, y| ((x * y) % 7) as f32 / 7.0)).unwrap();
    let bad = dir.path().join("b.png");
    fs::write(&bad, b"not an image").unwrap();
    let out = dir.path().join("out");
    let outcome = infer(&trainer.state.model, &[good.clone(), bad.clone()], 0.5, &out).unwrap();
    assert_eq!((outcome.processed, outcome.failed.len()), (1, 1));
    assert!(out.join("a_overlay.png").exists());
    let csv = fs::read_to_string(out.join("detections.csv")).unwrap();
    assert!(csv.starts_with("image,cx,cy,w,h,score\n"));
    assert!(infer(&trainer.state.model, &[bad], 0.5, &out).is_err());
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_celldet"));
    c.env("CELLDET_LOG", "warn");
    c
}

#[test]
fn cli_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let data_cfg = DataConfig {
        num_samples: 10,
        synth: SynthConfig {
            image_size: 32,
            cell_axis_range: [6.0, 10.0],
            cell_count_range: [2, 3],
            seed: 3,
            ..SynthConfig::default()
        },
        ..DataConfig::desk()
    };
    fs::write(p("data.json"), serde_json::to_string(&data_cfg).unwrap()).unwrap();
    fs::write(p("model.json"), serde_json::to_string(&ModelConfig::tiny(32)).unwrap()).unwrap();
    fs::write(p("train.json"), serde_json::to_string(&tiny_train_config(1)).unwrap()).unwrap();

    let run = |args: &[&str]| {
        let o = cli().args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let s = |name: &str| p(name).to_str().unwrap().to_string();
    run(&["gen-data", "--config", &s("data.json"), "--out", &s("data")]);
    run(&[
        "train", "--data", &s("data"), "--model-config", &s("model.json"),
        "--train-config", &s("train.json"), "--out", &s("m.ckpt"),
    ]);
    let report = run(&["eval", "--ckpt", &s("m.ckpt"), "--data", &s("data"), "--split", "test"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["centroid_mean_iou"].is_number() && v["dimensions_ssim"].is_number());
    run(&["infer", "--ckpt", &s("m.ckpt"), "--images", &s("data/images"), "--out", &s("pred")]);
    let rows = fs::read_to_string(p("pred/detections.csv")).unwrap();
    assert!(rows.starts_with("image,cx,cy,w,h,score"));
}

#[test]
fn cli_small_commands() {
    let out = cli().args(["flops", "--n", "4", "--d", "3", "--h", "2", "--k", "9", "--f", "5"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "mhsa_flops 96\nconv_flops 540\n");

    let out = cli().args(["gradcheck", "--op", "softmax"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);

    let fails = |args: &[&str]| {
        let o = cli().args(args).output().unwrap();
        !o.status.success() && o.stderr.starts_with(b"error: ")
    };
    assert!(fails(&["gradcheck", "--op", "nope"]));
    assert!(fails(&["flops", "--n", "0", "--d", "1", "--h", "1", "--k", "1", "--f", "1"]));
    assert!(fails(&["gen-data", "--config", "/nonexistent.json", "--out", "/tmp/x"]));
}

#[test]
fn cli_infer_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let trainer = Trainer::new(tiny_train_config(1), ModelConfig::tiny(32)).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    trainer.checkpoint().save(&ckpt).unwrap();
    let images = dir.path().join("imgs");
    fs::create_dir(&images).unwrap();
    fs::write(images.join("broken.png"), b"junk").unwrap();
    let run = || {
        cli()
            .args(["infer", "--ckpt", ckpt.to_str().unwrap(), "--images", images.to_str().unwrap()])
            .args(["--out", dir.path().join("o").to_str().unwrap()])
            .env("CELLDET_LOG", "off")
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run(), Some(1));
    celldet::data::io::write_gray(&images.join("ok.png"), &celldet::grid::Plane::new(32, 32)).unwrap();
    assert_eq!(run(), Some(3));
}

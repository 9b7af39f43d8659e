use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parkbench::args::{EvalArgs, GenArgs, TrainArgs};
use parkbench::commands::eval::{score, EchoPredictor};
use parkbench::commands::train::{resolve, split_windows};
use parkbench::commands::{gen, train};
use parkbench::fsio::load_dataset;
use parkbench::svg::{GT_COLOR, PRED_COLOR};
use parkbench_core::dataset::{count_gear_shifts, FilterTable};
use parkbench_core::scenario::LotConfig;
use parkbench_planner::train::{load_model, save_model, CheckpointMeta};
use parkbench_planner::{ModelConfig, TrainConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_parkbench"));
    c.env_remove("PARKBENCH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_dir(dir: &Path, seed: u64, scenarios: usize) -> PathBuf {
    let out = dir.join(format!("gen{seed}_{scenarios}"));
    let o = run(&["gen", "--seed", &seed.to_string(), "--scenarios", &scenarios.to_string(), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn train_args(data: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        epochs: None,
        batch: None,
        lr: None,
        ablation: None,
        seed: None,
        stride: None,
        val_limit: None,
        config: None,
    }
}

#[test]
fn gen_is_deterministic_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_dir(tmp.path(), 7, 50);
    let b = tmp.path().join("again");
    assert!(run(&["gen", "--seed", "7", "--scenarios", "50", "--out", s(&b)]).status.success());
    for f in ["dataset.jsonl", "census.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let census: serde_json::Value = serde_json::from_slice(&fs::read(a.join("census.json")).unwrap()).unwrap();
    let cats = census["categories"].as_object().unwrap();
    assert!(cats.keys().all(|k| ["1-shot", "2-shot", "3-shot", "4-shot"].contains(&k.as_str())));
    let total: u64 = cats.values().map(|v| v.as_u64().unwrap()).sum();
    let lines = fs::read_to_string(a.join("dataset.jsonl")).unwrap().lines().count() as u64;
    assert_eq!(total, lines);
    assert_eq!(census["kept"].as_u64().unwrap(), lines);
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
}

#[test]
fn seed_precedence_flag_over_env_over_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "seed = 3\n").unwrap();
    let base = |seed: Option<u64>| GenArgs {
        seed,
        scenarios: Some(4),
        out: tmp.path().join("x"),
        config: Some(cfg.clone()),
    };
    let file_seed = gen::run(&base(None), &[]).unwrap();
    let manifest = |dir: &Path| -> serde_json::Value { serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap() };
    assert_eq!(manifest(&tmp.path().join("x"))["seed"], 3);
    let _ = file_seed;

    let env_out = tmp.path().join("env");
    let o = bin()
        .env("PARKBENCH_SEED", "11")
        .args(["gen", "--scenarios", "4", "--config", s(&cfg), "--out", s(&env_out)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&env_out)["seed"], 11);

    let flag_out = tmp.path().join("flag");
    let o = bin()
        .env("PARKBENCH_SEED", "11")
        .args(["gen", "--seed", "12", "--scenarios", "4", "--config", s(&cfg), "--out", s(&flag_out)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&flag_out)["seed"], 12);
}

#[test]
fn infeasible_lots_abort_with_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[lot]\nmax_attempts = 1\nmax_gear_shifts = 0\nspawn_jitter_yaw_deg = 0.0\ngrid_y_range = 0.0\n").unwrap();
    let out = tmp.path().join("g");
    let o = run(&["gen", "--scenarios", "16", "--config", s(&cfg), "--out", s(&out)]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(3), "{err}");
    assert!(err.contains("no feasible demonstration"), "{err}");
    assert!(!out.join("dataset.jsonl").exists());
}

#[test]
fn exit_codes_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let o = run(&["train", "--data", s(tmp.path()), "--out", s(&tmp.path().join("t")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["train", "--data", s(tmp.path()), "--out", s(tmp.path()), "--ablation", "set9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_flags_resolve_to_the_published_hyperparameters() {
    let tmp = tempfile::tempdir().unwrap();
    let (r, seed) = resolve(&train_args(tmp.path(), tmp.path())).unwrap();
    assert_eq!(seed, 0);
    let t = &r.file.train;
    assert_eq!((t.epochs, t.batch), (30, 24));
    assert_eq!((t.lr_peak, t.lr_floor, t.warmup_epochs, t.clip), (2e-4, 1e-6, 2, 0.5));
    assert_eq!((t.ss_start_epoch, t.ss_end_epoch), (5, 25));
    assert_eq!((t.noise_pos, t.noise_yaw_deg), (0.3, 2.0));
    assert!(t.scheduled_sampling && r.file.model.motion_branch && r.file.model.codec.with_heading);
    assert_eq!(r.file.model, ModelConfig::default());
    assert_eq!(TrainConfig { seed: 0, ..t.clone() }, TrainConfig::default());

    let mut a = train_args(tmp.path(), tmp.path());
    a.ablation = Some("traj_only".into());
    let (r, _) = resolve(&a).unwrap();
    assert!(!r.file.model.motion_branch && !r.file.model.codec.with_heading);
    assert!(r.file.train.scheduled_sampling);
}

#[test]
fn one_epoch_trains_evaluates_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dir(tmp.path(), 2, 24);
    let out = tmp.path().join("run");
    let o = run(&[
        "train", "--data", s(&data), "--out", s(&out), "--epochs", "1", "--stride", "25", "--val-limit", "3", "--seed", "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("model.pkbn");
    let (meta, model, _) = load_model(&mut fs::read(&ckpt).unwrap().as_slice()).unwrap();
    assert_eq!(meta.seed, 4);
    assert!(model.has_motion_branch());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["file"]["train"]["batch"], 24);
    assert_eq!(manifest["config"]["file"]["train"]["lr_peak"], 2e-4);
    assert_eq!(manifest["config"]["file"]["train"]["epochs"], 1);
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for k in ["epoch", "lr", "loss_total", "loss_wp", "loss_ce", "loss_smooth", "val_l2"] {
        assert!(line.get(k).is_some(), "{k}");
    }
    assert!(fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().contains(".tmp")));

    let report = tmp.path().join("eval/report.json");
    let preds = tmp.path().join("eval/preds.jsonl");
    let eval = |report: &Path| {
        run(&[
            "eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(report), "--all", "--predictions", s(&preds), "--attention",
        ])
    };
    let o = eval(&report);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(table, fs::read_to_string(report.with_extension("txt")).unwrap());
    let first = fs::read(&report).unwrap();
    let again = tmp.path().join("eval/report2.json");
    assert!(eval(&again).status.success());
    assert_eq!(first, fs::read(&again).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    for k in ["l2_mean", "fourier_diff", "hausdorff", "ahe", "motion_acc", "shift_errors", "shift_avg"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert!(tmp.path().join("eval/report.json.manifest.json").exists());

    // prediction and attention overlay
    let dataset = load_dataset(&data, &LotConfig::default()).unwrap();
    let rec = &dataset.records[0];
    let svg_path = tmp.path().join("plot.svg");
    let o = run(&[
        "plot", "--traj", s(&data), "--scenario", &rec.scenario_id, "--pred", s(&preds), "--attention", "--out", s(&svg_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let lines = |color: &str| {
        doc.descendants()
            .filter(|n| n.has_tag_name("polyline") && n.attribute("stroke") == Some(color))
            .count()
    };
    assert_eq!(lines(GT_COLOR), 1);
    assert_eq!(lines(PRED_COLOR), 1);
    let cells = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("attention"))
        .flat_map(|n| n.children().filter(|c| c.has_tag_name("polygon")))
        .count();
    assert_eq!(cells, 256);

    // a malformed prediction file names the offending line
    fs::write(&preds, "{}\nnot json\n").unwrap();
    let o = run(&["plot", "--traj", s(&data), "--pred", s(&preds), "--out", s(&svg_path)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn gt_only_plots_mark_every_gear_shift() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dir(tmp.path(), 5, 30);
    let dataset = load_dataset(&data, &LotConfig::default()).unwrap();
    let mut seen_shifts = false;
    for rec in dataset.records.iter().take(6) {
        let out = tmp.path().join(format!("{}.svg", rec.scenario_id));
        let o = run(&["plot", "--traj", s(&data), "--scenario", &rec.scenario_id, "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(&out).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let polylines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(polylines.len(), 1);
        assert_eq!(polylines[0].attribute("stroke"), Some(GT_COLOR));
        let markers = doc.descendants().filter(|n| n.attribute("class") == Some("shift")).count();
        let states: Vec<_> = rec.frames.iter().map(|f| f.5).collect();
        assert_eq!(markers, count_gear_shifts(&states));
        seen_shifts |= markers > 0;
        // rendering is a pure function of the inputs
        let again = tmp.path().join("again.svg");
        run(&["plot", "--traj", s(&data), "--scenario", &rec.scenario_id, "--out", s(&again)]);
        assert_eq!(text, fs::read_to_string(&again).unwrap());
    }
    assert!(seen_shifts);
}

#[test]
fn echo_predictor_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dir(tmp.path(), 8, 24);
    let dataset = load_dataset(&data, &LotConfig::default()).unwrap();
    let split = parkbench_planner::DataSplit { train_ratio: 0.5, stride: 10 };
    let (a, b) = split_windows(&dataset, &ModelConfig::default(), &split, 1).unwrap();
    let windows = [a, b].concat();
    let (report, _) = score(&windows, &EchoPredictor).unwrap();
    assert_eq!(report.l2_mean, 0.0);
    assert_eq!(report.fourier_diff, 0.0);
    assert_eq!(report.hausdorff, 0.0);
    assert_eq!(report.ahe, Some(0.0));
    assert_eq!(report.motion_acc, Some(1.0));
    assert!(report.shift_avg.is_none_or(|v| v == 0.0));
    let _ = FilterTable::default();
}

#[test]
fn checkpoint_config_mismatch_is_typed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dir(tmp.path(), 2, 8);
    let mut store = parkbench_autodiff::ParameterStore::<f32>::new();
    parkbench_planner::Planner::new(ModelConfig::default(), &mut store, 0).unwrap();
    let meta = CheckpointMeta {
        model: ModelConfig {
            channels: 32,
            ..ModelConfig::default()
        },
        label: None,
        seed: 0,
        split: None,
    };
    let ckpt = tmp.path().join("bad.pkbn");
    let mut buf = Vec::new();
    save_model(&mut buf, &meta, &store).unwrap();
    fs::write(&ckpt, buf).unwrap();
    let args = EvalArgs {
        ckpt: ckpt.clone(),
        data: data.clone(),
        report: tmp.path().join("r.json"),
        all: true,
        predictions: None,
        attention: false,
        config: None,
    };
    let err = parkbench::commands::eval::run(&args, &[]).unwrap_err();
    assert!(matches!(err, parkbench::CliError::Mismatch(_)), "{err}");
    let o = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&tmp.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let t = std::time::Instant::now();
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(t.elapsed().as_secs() < 60);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("waypoint_loss") && out.contains("attention"));
    let o = run(&["gradcheck", "--corrupt"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dir(tmp.path(), 2, 8);
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[train]\nwarmup_epochs = 0\nlr_floor = 1e36\n").unwrap();
    let out = tmp.path().join("run");
    let o = run(&[
        "train", "--data", s(&data), "--out", s(&out), "--epochs", "2", "--batch", "2", "--lr", "1e36", "--stride", "40", "--config", s(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.pkbn").exists());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(m["status"].as_str().unwrap().starts_with("diverged"));
    let _ = train::CHECKPOINT_FILE;
}

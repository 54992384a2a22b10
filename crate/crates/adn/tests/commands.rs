use std::fs;
use std::path::Path;
use std::process::Command;

use adn::checkpoint;
use adn::config::RunConfig;
use adn::embeddings;
use adn::run;
use adn::series;
use adn::store;
use adn_core::data::{synth_diffusion, SynthConfig};
use adn_core::eval;

fn tiny(cfg: &mut RunConfig) {
    for kv in [
        "model.d_model=8",
        "model.enc_layers=1",
        "model.dec_layers=1",
        "model.heads_temporal=2",
        "model.heads_spatial=1",
        "model.ff_dim=16",
        "train.batch_size=16",
        "train.epochs=1",
        "seed=3",
    ] {
        cfg.apply_override(kv).unwrap();
    }
}

/// 3-day, 4-location synthetic series prepared into `dir/store`.
fn prepared(dir: &Path) -> (RunConfig, std::path::PathBuf) {
    let csv = dir.join("synth.csv");
    run::synth(&csv, 4, 3, 1, 0.05).unwrap();
    let mut cfg = RunConfig::default();
    tiny(&mut cfg);
    cfg.data = Some(csv);
    let st = dir.join("store");
    run::prepare(&cfg, &st).unwrap();
    (cfg, st)
}

#[test]
fn sentinel_cell_is_the_only_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let mut text = String::from("timestamp,a,b,c\n");
    for t in 0..10 {
        let c = if t == 4 { "-1".to_owned() } else { format!("{}", 50 + t) };
        text += &format!("{},{}.5,{},{c}\n", 1_704_067_200 + 300 * t, 60 + t, 40 - t);
    }
    fs::write(&p, text).unwrap();
    let s = series::read_csv(&p, Some(-1.0)).unwrap();
    assert_eq!((s.num_instants(), s.num_locations()), (10, 3));
    assert_eq!(s.missing_count(), 1);
    assert_eq!(s.value(4, 2), None);
}

#[test]
fn synthetic_export_reloads_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let raw = run::synth(&p, 3, 1, 8, 0.1).unwrap();
    let back = series::read_csv(&p, None).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.values), bits(&raw.values));
    assert_eq!(back.valid, raw.valid);
    assert_eq!(back.location_ids, raw.location_ids);
    assert_eq!((back.start_timestamp, back.step_seconds), (raw.start_timestamp, raw.step_seconds));
}

#[test]
fn prepare_counts_follow_window_arithmetic_and_hash_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, st) = prepared(dir.path());
    let m = store::read_manifest(&st).unwrap();
    let total = (3 * 288 - 24) / 12 + 1;
    assert_eq!(m.counts.total, total);
    assert_eq!(m.counts.train + m.counts.validation + m.counts.test, total);
    for (n, f) in [(m.counts.train, 0.7), (m.counts.validation, 0.1), (m.counts.test, 0.2)] {
        assert!((n as f64 - f * total as f64).abs() <= 1.0, "{n} vs {f}");
    }
    let again = dir.path().join("store2");
    run::prepare(&cfg, &again).unwrap();
    assert_eq!(store::manifest_hash(&st).unwrap(), store::manifest_hash(&again).unwrap());
}

#[test]
fn zero_epochs_checkpoint_equals_init() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, st) = prepared(dir.path());
    cfg.train.epochs = 0;
    let out = dir.path().join("run");
    run::train_store(&cfg, &st, &out).unwrap();
    let ckpt = checkpoint::load(&out.join(run::CHECKPOINT_DIR)).unwrap();
    assert_eq!(ckpt.params, run::init_params(&cfg, 4).unwrap());
    let resolved = fs::read_to_string(out.join(run::CONFIG_FILE)).unwrap();
    let mut back = RunConfig::default();
    back.apply_text(&resolved).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn fixed_seed_reproduces_history_and_eval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, st) = prepared(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = run::train_store(&cfg, &st, &a).unwrap();
    run::train_store(&cfg, &st, &b).unwrap();
    let hash = |d: &Path| store::sha256_hex(&fs::read(d.join(run::HISTORY_FILE)).unwrap());
    assert_eq!(hash(&a), hash(&b));
    let ckpt_hash = |d: &Path| store::sha256_hex(&fs::read(d.join("checkpoint/params.bin")).unwrap());
    assert_eq!(ckpt_hash(&a), ckpt_hash(&b));

    let report = run::evaluate(&st, &a.join(run::CHECKPOINT_DIR), 64, Some(&a)).unwrap();
    let (data, _) = store::load_store(&st).unwrap();
    let direct = eval::evaluate(&ra.checkpoint.params, &data.test, &data.standardizer, 64).unwrap();
    assert_eq!(report, direct);
    assert!(a.join("metrics.json").exists() && a.join("metrics.csv").exists());
}

#[test]
fn export_counts_bits_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, st) = prepared(dir.path());
    let out = dir.path().join("run");
    let r = run::train_store(&cfg, &st, &out).unwrap();
    let exp = dir.path().join("emb");
    let (n, m) = run::export_embeddings(&out.join(run::CHECKPOINT_DIR), &exp).unwrap();
    assert_eq!(n, 4);
    assert_eq!(m, 7 * 288);
    let text = fs::read_to_string(exp.join("instants.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 7 * 288);

    let p = &r.checkpoint.params;
    let (names, table) = embeddings::read_locations(&exp.join("locations.csv")).unwrap();
    assert_eq!(names, r.checkpoint.location_names);
    let original = p.tensor(p.layout().location_embed);
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(table.data()), bits(original.data()));

    // Instant rows: day + slot embedding sums, checked at one cell.
    let day = p.tensor(p.layout().day_embed);
    let slot = p.tensor(p.layout().slot_embed);
    let row: Vec<&str> = text.lines().nth(1 + 3 * 288 + 100).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["3", "100"]);
    for j in 0..8 {
        let v: f32 = row[2 + j].parse().unwrap();
        assert_eq!(v.to_bits(), (day.data()[3 * 8 + j] + slot.data()[100 * 8 + j]).to_bits());
    }

    let mut fresh = run::init_params(&RunConfig { train: adn_core::train::TrainConfig { seed: 99, ..cfg.train.clone() }, ..cfg.clone() }, 4).unwrap();
    assert_ne!(fresh.tensor(fresh.layout().location_embed), original);
    embeddings::import_locations(&mut fresh, table).unwrap();
    assert_eq!(bits(fresh.tensor(fresh.layout().location_embed).data()), bits(original.data()));
}

#[test]
fn evaluation_rejects_unknown_locations() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, st) = prepared(dir.path());
    cfg.train.epochs = 0;
    let out = dir.path().join("run");
    run::train_store(&cfg, &st, &out).unwrap();
    let raw = synth_diffusion(&SynthConfig {
        location_prefix: "other".into(),
        ..SynthConfig::ring(4, 3, 1, 0.05)
    })
    .unwrap();
    let other = dir.path().join("other");
    store::write_store(&other, &raw, &store::PrepareOptions::from(&cfg)).unwrap();
    let e = run::evaluate(&other, &out.join(run::CHECKPOINT_DIR), 64, None).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}

fn adn(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_adn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

#[test]
fn binary_end_to_end_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();
    let cfg = d("run.cfg");
    fs::write(
        &cfg,
        "model.d_model = 8\nmodel.enc_layers = 1\nmodel.dec_layers = 1\nmodel.heads_temporal = 2\n\
         model.heads_spatial = 1\nmodel.ff_dim = 16\ntrain.batch_size = 16\n",
    )
    .unwrap();
    let (code, text) = adn(&["synth", "--out", &d("s.csv"), "--locations", "3", "--days", "3", "--seed", "2"]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = adn(&["prepare", "--config", &cfg, "--data", &d("s.csv"), "--out", &d("store")]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("manifest sha256"));
    let (code, text) = adn(&["train", "--config", &cfg, "--data", &d("store"), "--out", &d("run"), "--epochs", "1"]);
    assert_eq!(code, 0, "{text}");
    assert!(dir.path().join("run/history.csv").exists());
    let (code, text) = adn(&["eval", "--data", &d("store"), "--ckpt", &d("run"), "--out", &d("eval")]);
    assert_eq!(code, 0, "{text}");
    for h in ["15 min", "30 min", "60 min"] {
        assert!(text.contains(h), "{text}");
    }
    let (code, text) = adn(&["export-embeddings", "--ckpt", &d("run"), "--out", &d("emb")]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("3 location rows, 2016 instant rows"), "{text}");

    assert_eq!(adn(&["eval", "--data", &d("store"), "--ckpt", &d("nowhere")]).0, 3);
    assert_eq!(adn(&["train", "--data", &d("store"), "--out", &d("r2"), "--set", "model.d_model=7"]).0, 2);
    assert_eq!(adn(&["train", "--data", &d("store"), "--out", &d("r2"), "--set", "bogus=1"]).0, 2);
    assert_eq!(adn(&["prepare", "--data", &d("absent.csv"), "--out", &d("s2")]).0, 3);
    assert_eq!(adn(&["frobnicate"]).0, 2);
}

#[test]
fn experiment_sweep_writes_one_row_per_point_and_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, st) = prepared(dir.path());
    cfg.set("experiment.kind", "scarcity").unwrap();
    cfg.set("experiment.knobs", "0.5,1").unwrap();
    let out = dir.path().join("exp");
    let rows = run::experiment(&cfg, run::ExperimentInputs { store: &st, checkpoint: None }, &out).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(out.join("history_scarcity_0.5.csv").exists());
}

#[test]
fn adaptation_sweep_freezes_all_but_location_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, st) = prepared(dir.path());
    let src = dir.path().join("src");
    run::train_store(&cfg, &st, &src).unwrap();
    let raw = synth_diffusion(&SynthConfig {
        location_prefix: "tgt".into(),
        ..SynthConfig::ring(4, 3, 1, 0.05)
    })
    .unwrap();
    let target = dir.path().join("target");
    store::write_store(&target, &raw, &store::PrepareOptions::from(&cfg)).unwrap();
    let mut acfg = cfg.clone();
    acfg.set("experiment.kind", "adapt").unwrap();
    acfg.set("experiment.knobs", "1").unwrap();
    acfg.target = Some(target.clone());
    let ckpt = src.join(run::CHECKPOINT_DIR);
    let rows = run::experiment(
        &acfg,
        run::ExperimentInputs {
            store: Path::new(""),
            checkpoint: Some(&ckpt),
        },
        &dir.path().join("adapt"),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.kind == "adapt" && r.mae.is_finite()));
    // Same names on both sides is a contract violation.
    acfg.target = Some(st.clone());
    let e = run::experiment(
        &acfg,
        run::ExperimentInputs {
            store: Path::new(""),
            checkpoint: Some(&ckpt),
        },
        &dir.path().join("adapt2"),
    )
    .unwrap_err();
    assert!(matches!(e, adn::Error::Core(adn_core::Error::Contract(_))), "{e}");
}

use adn_core::calendar::CalendarSpec;
use adn_core::data::{make_windows, synth_diffusion, Instance, MaskedBatch, Standardizer, SynthConfig, WindowSpec};
use adn_core::model::{bind, forward_teacher_forced, ModelConfig, ModelParams, ParamGroup};
use adn_core::rng::Stream;
use adn_core::train::{evaluate_loss, masked_mae_loss, train, train_step, OptState, TrainConfig, TrainData, TrainHooks};
use adn_core::{Error, Tape, Tensor};

fn tiny(dropout: f64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        enc_layers: 1,
        dec_layers: 1,
        heads_temporal: 2,
        heads_spatial: 1,
        ff_dim: 16,
        dropout,
        ..ModelConfig::default()
    }
}

fn data(n: usize) -> Vec<Instance> {
    let raw = synth_diffusion(&SynthConfig::ring(n, 1, 2, 0.05)).unwrap();
    let spec = WindowSpec {
        window: 8,
        stride: 8,
        reference_offset: 4,
    };
    make_windows(&raw, spec, &CalendarSpec::default()).unwrap()
}

fn params(cfg: &ModelConfig, n: usize, seed: u64) -> ModelParams<f64> {
    ModelParams::init(cfg, &CalendarSpec::default(), n, &mut Stream::new(seed)).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn masked_mae_matches_loop_oracle() {
    let insts = data(3);
    let mut batch = MaskedBatch::from_instances(&[&insts[0], &insts[1]]).unwrap();
    let h = batch.horizon();
    batch.valid[h + 5] = false;
    batch.valid[2 * h + 6] = false;
    let mut rng = Stream::new(1);
    let pred = Tensor::from_fn(&[2, 3, 4, 1], |_| rng.normal());
    let mut tape = Tape::new();
    let p = tape.param(pred.clone());
    let loss = masked_mae_loss(&mut tape, p, &batch).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for bn in 0..6 {
        for s in 0..4 {
            if batch.valid[bn * h + 4 + s] {
                sum += (pred.data()[bn * 4 + s] - batch.measurements[bn * h + 4 + s]).abs();
                n += 1;
            }
        }
    }
    assert!((tape.value(loss).data()[0] - sum / n as f64).abs() < 1e-7);

    let mut empty = batch.clone();
    empty.valid.iter_mut().for_each(|v| *v = false);
    let mut tape = Tape::new();
    let p = tape.param(pred);
    assert!(matches!(masked_mae_loss(&mut tape, p, &empty), Err(Error::Evaluation(_))));
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let insts = data(3);
    let init = params(&tiny(0.3), 3, 1);
    let mut p = init.clone();
    let std = Standardizer::identity(1);
    let d = TrainData {
        train: &insts,
        validation: &insts[..2],
        standardizer: &std,
    };
    let r = train(&mut p, d, &quick(0), &mut TrainHooks::default()).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(p, init);
}

#[test]
fn same_seed_gives_bitwise_identical_history() {
    let insts = data(3);
    let std = Standardizer::identity(1);
    let d = TrainData {
        train: &insts[..20],
        validation: &insts[20..24],
        standardizer: &std,
    };
    let run = || {
        let mut p = params(&tiny(0.3), 3, 1);
        let r = train(&mut p, d, &quick(3), &mut TrainHooks::default()).unwrap();
        (r, p)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    let bits = |r: &adn_core::train::TrainReport| {
        r.history
            .iter()
            .flat_map(|e| [e.train_loss.to_bits(), e.val_mae.unwrap().to_bits()])
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(pa, pb);
    let mut other = quick(3);
    other.seed = 6;
    let mut p = params(&tiny(0.3), 3, 1);
    let c = train(&mut p, d, &other, &mut TrainHooks::default()).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn best_validation_epoch_is_retained() {
    let insts = data(3);
    let std = Standardizer::identity(1);
    let d = TrainData {
        train: &insts[..20],
        validation: &insts[20..24],
        standardizer: &std,
    };
    let mut p = params(&tiny(0.0), 3, 1);
    let r = train(&mut p, d, &quick(4), &mut TrainHooks::default()).unwrap();
    let best = r.history.iter().map(|e| e.val_mae.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_mae, Some(best));
    let again = adn_core::eval::evaluate(&p, d.validation, &std, 64).unwrap().overall.mae;
    assert_eq!(again, best);
}

#[test]
fn frozen_groups_are_bitwise_untouched() {
    let insts = data(3);
    let std = Standardizer::identity(1);
    let init = params(&tiny(0.3), 3, 1);
    let mut p = init.clone();
    let frozen = vec![ParamGroup::Attention, ParamGroup::InstantEmbeddings];
    let cfg = TrainConfig {
        freeze_groups: frozen.clone(),
        ..quick(3)
    };
    let d = TrainData {
        train: &insts[..16],
        validation: &[],
        standardizer: &std,
    };
    train(&mut p, d, &cfg, &mut TrainHooks::default()).unwrap();
    for (a, b) in p.tensors().iter().zip(init.tensors()) {
        if frozen.contains(&a.group) {
            assert_eq!(a.tensor, b.tensor, "{}", a.name);
        } else if a.tensor.data().iter().any(|v| *v != 0.0) || a.name.ends_with("bias") {
            assert_ne!(a.tensor, b.tensor, "{} should have moved", a.name);
        }
    }
}

#[test]
fn clipped_norm_is_bounded_on_every_step() {
    let insts = data(3);
    let p0 = params(&tiny(0.3), 3, 2);
    let mut p = p0.clone();
    let mut st = OptState::new(&p);
    let cfg = quick(1);
    let mut rng = Stream::new(0);
    let mut clipped = 0;
    for chunk in insts.chunks(4).take(10) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let batch = MaskedBatch::from_instances(&refs).unwrap();
        let (_, pre, post) = train_step(&mut p, &mut st, &batch, &cfg, 0.002, &mut rng).unwrap();
        assert!(post <= 0.1 + 1e-6, "{post}");
        if pre > 0.1 {
            clipped += 1;
            assert!((post - 0.1).abs() < 1e-9);
        } else {
            assert_eq!(pre, post);
        }
    }
    assert!(clipped > 0);
}

/// Per-step monotonicity of an L1 objective under Adam only holds while the
/// steps stay small relative to the curvature; at the recipe's 0.002 the
/// loss overshoots within tens of steps on a four-instance batch.
const LR: f64 = 2e-4;

#[test]
fn repeated_batch_loss_is_mostly_monotone() {
    let mut insts = data(3);
    adn_core::data::standardize(&mut insts, &mut []).unwrap();
    let refs: Vec<&Instance> = insts[..4].iter().collect();
    let batch = MaskedBatch::from_instances(&refs).unwrap();
    let trials = 10;
    let mut monotone = 0;
    for seed in 0..trials {
        let mut p = params(&tiny(0.0), 3, seed);
        let mut st = OptState::new(&p);
        let cfg = TrainConfig { seed, ..quick(1) };
        let mut rng = Stream::new(seed);
        let mut last = evaluate_loss(&p, &batch).unwrap();
        let mut ok = true;
        for _ in 0..50 {
            train_step(&mut p, &mut st, &batch, &cfg, LR, &mut rng).unwrap();
            let l = evaluate_loss(&p, &batch).unwrap();
            ok &= l <= last;
            last = l;
        }
        monotone += usize::from(ok);
    }
    assert!(monotone * 10 >= trials as usize * 9, "{monotone}/{trials}");
}

#[test]
fn divergence_is_reported_with_location() {
    let insts = data(3);
    let mut bad = insts[..8].to_vec();
    bad[3].measurements[5] = f64::NAN;
    let std = Standardizer::identity(1);
    let mut p = params(&tiny(0.0), 3, 1);
    let d = TrainData {
        train: &bad,
        validation: &[],
        standardizer: &std,
    };
    let cfg = TrainConfig {
        batch_size: 2,
        ..quick(1)
    };
    let err = train(&mut p, d, &cfg, &mut TrainHooks::default()).unwrap_err();
    match err {
        Error::Divergence(m) => assert!(m.starts_with("epoch 0, batch"), "{m}"),
        e => panic!("{e:?}"),
    }
}

#[test]
fn gradient_flows_from_every_source_event() {
    let insts = data(3);
    let batch = MaskedBatch::from_instances(&[&insts[0]]).unwrap();
    let p = params(&tiny(0.0), 3, 1);
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &p, &[]);
    // Perturb each source measurement: every one must move some target output.
    let base = {
        let y = forward_teacher_forced(&mut tape, &p, &vars, &batch, false, &mut Stream::new(0)).unwrap();
        tape.value(y).clone()
    };
    let h = batch.horizon();
    for loc in 0..3 {
        for pos in 0..batch.source_len - 1 {
            let mut b = batch.clone();
            b.measurements[loc * h + pos] += 0.5;
            let mut t = Tape::new();
            let v = bind(&mut t, &p, &[]);
            let y = forward_teacher_forced(&mut t, &p, &v, &b, false, &mut Stream::new(0)).unwrap();
            assert!(t.value(y).data().iter().zip(base.data()).all(|(a, b)| a != b), "({loc},{pos})");
        }
    }
}

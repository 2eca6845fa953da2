//! Tests for the training stack: loss, schedule, optimizer, patch sampling,
//! checkpoints, and the loop that ties them together.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::imaging::{bicubic_resize, ColorSpace, Domain, ImagePlane};
use crate::model::{BlockVariant, CsfmConfig, CsfmNetwork, Initializer};
use crate::tensor::{finite_diff_grad, Shape, Tape, Tensor};

fn tiny_cfg(variant: BlockVariant, scale: usize) -> CsfmConfig {
    CsfmConfig {
        scale,
        channels: 8,
        modules: 1,
        blocks: 1,
        reduction: 4,
        expansion: 2,
        variant,
    }
}

fn tiny_net(variant: BlockVariant, scale: usize, seed: u64) -> CsfmNetwork<f32> {
    CsfmNetwork::new(tiny_cfg(variant, scale), &mut Initializer::seeded(seed)).unwrap()
}

fn param_snapshot(net: &CsfmNetwork<f32>) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    net.for_each_param(&mut |name, t| out.push((name.to_string(), t.data().to_vec())));
    out
}

fn write_png(dir: &Path, name: &str, w: usize, h: usize, f: impl FnMut(usize, usize, usize) -> f64) {
    ImagePlane::from_fn(w, h, Domain::U8Range, ColorSpace::Rgb, f)
        .unwrap()
        .save_png(&dir.join(name))
        .unwrap();
}

/// Two small images with smooth, learnable content.
fn smooth_dataset(dir: &Path, scale: usize) -> SrDataset {
    write_png(dir, "waves.png", 28, 24, |x, y, c| {
        (128.0 + 90.0 * (x as f64 * 0.31).sin() * (y as f64 * 0.27).cos() + c as f64 * 8.0)
            .round()
            .clamp(0.0, 255.0)
    });
    write_png(dir, "ramp.png", 20, 20, |x, y, c| {
        (40.0 + 4.0 * x as f64 + 2.0 * y as f64 + 15.0 * c as f64)
            .round()
            .clamp(0.0, 255.0)
    });
    SrDataset::load_dir(dir, scale).unwrap()
}

// -------------------------------------------------------------------- loss

#[test]
fn l1_closed_forms_and_tie_subgradient() {
    let shape = Shape::new(2, 3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = Tensor::<f64>::from_fn(shape, |_| rng.random::<f64>());

    // Identical inputs: zero loss and (tie subgradient) zero gradient.
    let pred = target.clone().with_grad();
    let mut tape = Tape::new();
    tape.watch(&pred);
    let loss = l1_loss(&mut tape, &pred, &target).unwrap();
    assert_eq!(loss.shape(), Shape::scalar());
    assert_eq!(loss.data()[0], 0.0);
    tape.backward(&loss).unwrap();
    assert!(tape.grad(&pred).unwrap().iter().all(|&g| g == 0.0));

    // Uniform +0.5 offset: loss 0.5, gradient +-1/N on every element.
    let pred = Tensor::<f64>::from_fn(shape, |i| target.data()[i] + 0.5).with_grad();
    let target2 = target.clone().with_grad();
    let mut tape = Tape::new();
    tape.watch(&pred);
    tape.watch(&target2);
    let loss = l1_loss(&mut tape, &pred, &target2).unwrap();
    assert!((loss.data()[0] - 0.5).abs() < 1e-12, "loss {}", loss.data()[0]);
    tape.backward(&loss).unwrap();
    let n = shape.numel() as f64;
    assert!(tape
        .grad(&pred)
        .unwrap()
        .iter()
        .all(|&g| (g - 1.0 / n).abs() < 1e-15));
    assert!(tape
        .grad(&target2)
        .unwrap()
        .iter()
        .all(|&g| (g + 1.0 / n).abs() < 1e-15));
}

#[test]
fn l1_matches_a_flat_loop_oracle() {
    let shape = Shape::new(1, 2, 3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Tensor::<f64>::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0);
    let b = Tensor::<f64>::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0);
    let want = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0, |acc, (x, y)| acc + (x - y).abs())
        / shape.numel() as f64;
    let mut tape = Tape::disabled();
    let got = l1_loss(&mut tape, &a, &b).unwrap();
    assert_eq!(got.data()[0], want);
}

#[test]
fn l1_rejects_shape_mismatch() {
    let a = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
    let b = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 5));
    let mut tape = Tape::disabled();
    assert!(matches!(
        l1_loss(&mut tape, &a, &b),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn l1_gradchecks_away_from_ties() {
    let shape = Shape::new(1, 2, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Tensor::<f64>::from_fn(shape, |_| rng.random::<f64>());
    // Keep |a - b| >= 0.25 with mixed signs so the finite-difference step
    // never crosses the kink at zero.
    let b = Tensor::<f64>::from_fn(shape, |i| {
        let mag = 0.25 + 0.5 * rng.random::<f64>();
        a.data()[i] + if i % 2 == 0 { mag } else { -mag }
    });
    let report = finite_diff_grad(
        |tape, leaves| l1_loss(tape, &leaves[0], &leaves[1]),
        &[a, b],
        8,
        1e-5,
        4,
    )
    .unwrap();
    assert!(report.max_norm_err < 1e-9, "{report:?}");
}

// ---------------------------------------------------------------- schedule

#[test]
fn schedule_matches_the_reference_milestones() {
    let s = LrSchedule::new(1e-4, 900_000).unwrap();
    let cases: [(u64, f64); 8] = [
        (1, 1e-4),
        (300_000, 1e-4),
        (300_001, 5e-5),
        (500_000, 5e-5),
        (500_001, 2.5e-5),
        (700_000, 2.5e-5),
        (700_001, 1.25e-5),
        (900_000, 1.25e-5),
    ];
    for (t, want) in cases {
        assert_eq!(s.lr_at(t), want, "lr at t = {t}");
    }
}

#[test]
fn schedule_milestones_scale_with_the_total() {
    // A 9-iteration run compresses the same shape: drops after 3, 5, and 7.
    let s = LrSchedule::new(1e-4, 9).unwrap();
    let want = [1e-4, 1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5, 2.5e-5, 1.25e-5, 1.25e-5];
    for (i, w) in want.iter().enumerate() {
        assert_eq!(s.lr_at(i as u64 + 1), *w, "lr at t = {}", i + 1);
    }
}

#[test]
fn schedule_never_increases() {
    for total in [9u64, 123_457, 900_000] {
        let s = LrSchedule::new(1e-4, total).unwrap();
        let mut prev = f64::INFINITY;
        let stride = (total / 997).max(1);
        let mut t = 1;
        while t <= total {
            let lr = s.lr_at(t);
            assert!(lr > 0.0 && lr <= prev, "lr must fall monotonically");
            prev = lr;
            t += stride;
        }
    }
}

#[test]
fn schedule_rejects_degenerate_parameters() {
    assert!(LrSchedule::new(0.0, 100).is_err());
    assert!(LrSchedule::new(-1e-4, 100).is_err());
    assert!(LrSchedule::new(f64::NAN, 100).is_err());
    assert!(LrSchedule::new(1e-4, 0).is_err());
}

// -------------------------------------------------------------------- adam

#[test]
fn first_adam_step_matches_the_closed_form() {
    let mut net = tiny_net(BlockVariant::Base, 2, 10);
    let before = param_snapshot(&net);
    let schedule = LrSchedule::new(1e-3, 1000).unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();

    let mut grads: GradMap<f32> = GradMap::new();
    for (name, data) in &before {
        grads.insert(
            name.clone(),
            (0..data.len())
                .map(|i| ((i % 7) as f32 - 3.0) / 5.0)
                .collect(),
        );
    }
    let lr = adam.step(&schedule, &mut net, &grads).unwrap();
    assert_eq!(adam.t(), 1);
    assert_eq!(lr, schedule.lr_at(1));

    // At t=1 the bias corrections cancel: m_hat = g and v_hat = g^2, so the
    // update is lr * g / (|g| + eps).
    let after = param_snapshot(&net);
    for ((name, old), (_, new)) in before.iter().zip(&after) {
        let g = &grads[name];
        for i in 0..old.len() {
            let gi = g[i] as f64;
            let want = old[i] as f64 - lr * gi / (gi.abs() + 1e-8);
            if gi == 0.0 {
                assert_eq!(new[i], old[i], "{name}[{i}] must not move without gradient");
            } else {
                assert!(
                    (new[i] as f64 - want).abs() < 1e-6,
                    "{name}[{i}]: got {}, want {want}",
                    new[i]
                );
            }
        }
    }
}

#[test]
fn adam_rejects_missing_gradients_without_touching_parameters() {
    let mut net = tiny_net(BlockVariant::Base, 2, 11);
    let before = param_snapshot(&net);
    let schedule = LrSchedule::new(1e-3, 1000).unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();

    let mut grads: GradMap<f32> = GradMap::new();
    for (name, data) in &before {
        grads.insert(name.clone(), vec![0.5; data.len()]);
    }
    grads.remove("output.bias");

    let err = adam.step(&schedule, &mut net, &grads).unwrap_err();
    match err {
        Error::Autodiff(msg) => assert!(
            msg.contains("output.bias"),
            "error must name the parameter: {msg}"
        ),
        other => panic!("expected an autodiff error, got {other}"),
    }
    assert_eq!(adam.t(), 0, "a failed step must not advance the counter");
    assert_eq!(param_snapshot(&net), before, "a failed step must not move parameters");

    // A wrong-length gradient is rejected the same way.
    grads.insert("output.bias".into(), vec![0.5; 1]);
    assert!(matches!(
        adam.step(&schedule, &mut net, &grads),
        Err(Error::Autodiff(_))
    ));
}

#[test]
fn adam_descends_the_parameter_norm() {
    // With grad = theta the objective is ||theta||^2 / 2; two hundred steps
    // at lr 1e-2 should collapse the weights toward zero.
    let mut net = tiny_net(BlockVariant::Base, 2, 12);
    let schedule = LrSchedule::new(1e-2, 100_000).unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
    let norm = |net: &CsfmNetwork<f32>| {
        let mut s = 0f64;
        net.for_each_param(&mut |_, t| {
            for &v in t.data() {
                s += (v as f64) * (v as f64);
            }
        });
        s
    };
    let start = norm(&net);
    assert!(start > 0.1, "random init should not be near zero");
    for _ in 0..200 {
        let mut grads: GradMap<f32> = GradMap::new();
        net.for_each_param(&mut |name, t| {
            grads.insert(name.to_string(), t.data().to_vec());
        });
        adam.step(&schedule, &mut net, &grads).unwrap();
    }
    let end = norm(&net);
    assert!(
        end < 0.05 * start,
        "norm should collapse: {start} -> {end}"
    );
    assert_eq!(adam.t(), 200);
}

#[test]
fn adam_validates_its_hyperparameters() {
    assert!(Adam::<f32>::new(1.0, 0.999, 1e-8).is_err());
    assert!(Adam::<f32>::new(-0.1, 0.999, 1e-8).is_err());
    assert!(Adam::<f32>::new(0.9, 1.0, 1e-8).is_err());
    assert!(Adam::<f32>::new(0.9, 0.999, 0.0).is_err());
    assert!(Adam::<f32>::new(0.9, 0.999, 1e-8).is_ok());
}

// -------------------------------------------------------------------- data

#[test]
fn dataset_loading_crops_pairs_and_sorts() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "b.png", 13, 9, |x, y, c| {
        ((x * 7 + y * 13 + c * 29) % 256) as f64
    });
    write_png(dir.path(), "a.png", 8, 8, |x, y, c| ((x + y + c) % 256) as f64);
    let ds = SrDataset::load_dir(dir.path(), 2).unwrap();

    assert_eq!(ds.len(), 2);
    assert_eq!(ds.scale(), 2);
    assert_eq!(ds.image(0).name(), "a.png");
    assert_eq!(ds.image(1).name(), "b.png");

    let b = ds.image(1);
    assert_eq!((b.hr().width(), b.hr().height()), (12, 8), "13x9 modcrops to 12x8");
    assert_eq!((b.lr().width(), b.lr().height()), (6, 4));
    assert_eq!(b.hr().domain(), Domain::Unit);
    assert_eq!(b.lr().domain(), Domain::Unit);
    // The low-resolution plane went through quantization, so it sits on the
    // 0..255 integer grid exactly like a PNG read back from disk.
    for &v in b.lr().data() {
        let r = v * 255.0;
        assert!((r - r.round()).abs() < 1e-9, "lr value {v} is off-grid");
    }
}

#[test]
fn dataset_mean_matches_a_two_pass_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let mut sums = [0f64; 3];
    let mut pixels = 0u64;
    for i in 0..ds.len() {
        let hr = ds.image(i).hr();
        for y in 0..hr.height() {
            for x in 0..hr.width() {
                for (c, s) in sums.iter_mut().enumerate() {
                    *s += hr.get(x, y, c);
                }
            }
        }
        pixels += (hr.width() * hr.height()) as u64;
    }
    for c in 0..3 {
        let want = sums[c] / pixels as f64;
        assert!(
            (ds.rgb_mean()[c] - want).abs() < 1e-12,
            "channel {c}: {} vs {want}",
            ds.rgb_mean()[c]
        );
    }
}

#[test]
fn plans_cut_aligned_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let plan = PatchPlan {
        image: 0,
        x: 2,
        y: 1,
        flip: false,
        quarter_turns: 0,
    };
    let (lp, hp) = ds.cut_pair(plan, 3).unwrap();
    assert_eq!((lp.width(), lp.height()), (3, 3));
    assert_eq!((hp.width(), hp.height()), (6, 6));
    let img = ds.image(0);
    for y in 0..3 {
        for x in 0..3 {
            for c in 0..3 {
                assert_eq!(lp.get(x, y, c), img.lr().get(2 + x, 1 + y, c));
            }
        }
    }
    for y in 0..6 {
        for x in 0..6 {
            for c in 0..3 {
                assert_eq!(hp.get(x, y, c), img.hr().get(4 + x, 2 + y, c));
            }
        }
    }
}

#[test]
fn sampling_follows_the_plan_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let patch = 3;
    let batch = 4;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    rng.set_stream(7);
    let mut replay = rng.clone();
    let (lr_t, hr_t) = ds.sample_batch::<f32, _>(&mut rng, patch, batch, true).unwrap();
    assert_eq!(lr_t.shape(), Shape::new(batch, 3, patch, patch));
    assert_eq!(hr_t.shape(), Shape::new(batch, 3, 2 * patch, 2 * patch));

    // Replaying the documented draw order with a cloned RNG reproduces every
    // member bit for bit.
    let eligible = ds.eligible(patch);
    let lr_stride = 3 * patch * patch;
    let hr_stride = 3 * 2 * patch * 2 * patch;
    for b in 0..batch {
        let plan = ds.draw_plan(&mut replay, patch, true, &eligible);
        let (lp, hp) = ds.cut_pair(plan, patch).unwrap();
        let lp = lp.mean_subtract(ds.rgb_mean()).unwrap();
        let hp = hp.mean_subtract(ds.rgb_mean()).unwrap();
        assert_eq!(
            &lr_t.data()[b * lr_stride..(b + 1) * lr_stride],
            lp.to_tensor::<f32>().data(),
            "low-resolution member {b}"
        );
        assert_eq!(
            &hr_t.data()[b * hr_stride..(b + 1) * hr_stride],
            hp.to_tensor::<f32>().data(),
            "high-resolution member {b}"
        );
    }

    // Same seed and stream, fresh generator: bitwise identical batch.
    let mut rng2 = ChaCha8Rng::seed_from_u64(5);
    rng2.set_stream(7);
    let (lr_u, hr_u) = ds.sample_batch::<f32, _>(&mut rng2, patch, batch, true).unwrap();
    assert_eq!(lr_t.data(), lr_u.data());
    assert_eq!(hr_t.data(), hr_u.data());
}

#[test]
fn augmented_pairs_stay_geometrically_consistent() {
    // Downscaling the augmented high-resolution patch must reproduce the
    // augmented low-resolution patch (away from the crop border, where the
    // missing context shows, and up to the stored patch's quantization).
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "smooth.png", 32, 32, |x, y, c| {
        (128.0 + 100.0 * (x as f64 * 0.35).sin() * (y as f64 * 0.23).cos() + c as f64 * 6.0)
            .round()
            .clamp(0.0, 255.0)
    });
    let ds = SrDataset::load_dir(dir.path(), 2).unwrap();
    let patch = 8;
    let plans = [
        (false, 0),
        (true, 0),
        (false, 1),
        (true, 3),
    ];
    for (flip, quarter_turns) in plans {
        let plan = PatchPlan {
            image: 0,
            x: 4,
            y: 3,
            flip,
            quarter_turns,
        };
        let (lp, hp) = ds.cut_pair(plan, patch).unwrap();
        let down = bicubic_resize(&hp, patch, patch).unwrap();
        for y in 2..patch - 3 {
            for x in 2..patch - 3 {
                for c in 0..3 {
                    let diff = (down.get(x, y, c) - lp.get(x, y, c)).abs();
                    assert!(
                        diff <= 1.0 / 255.0,
                        "flip={flip} turns={quarter_turns} ({x},{y},{c}): diff {diff}"
                    );
                }
            }
        }
    }
}

#[test]
fn undersized_images_are_skipped_and_empty_selection_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "big.png", 24, 24, |x, y, _| ((x + y) % 256) as f64);
    write_png(dir.path(), "small.png", 8, 8, |x, y, _| ((x * y) % 256) as f64);
    let ds = SrDataset::load_dir(dir.path(), 2).unwrap();

    // Patch 6: only the 24x24 image (12x12 after downscale) qualifies.
    assert_eq!(ds.eligible(6), vec![0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (lr_t, _) = ds.sample_batch::<f32, _>(&mut rng, 6, 3, true).unwrap();
    assert_eq!(lr_t.shape(), Shape::new(3, 3, 6, 6));

    // Patch 13: nothing qualifies.
    assert!(ds.eligible(13).is_empty());
    assert!(matches!(
        ds.sample_batch::<f32, _>(&mut rng, 13, 1, true),
        Err(Error::Data(_))
    ));

    // Degenerate sizes are config errors.
    assert!(matches!(
        ds.sample_batch::<f32, _>(&mut rng, 0, 1, true),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ds.sample_batch::<f32, _>(&mut rng, 3, 0, true),
        Err(Error::Config(_))
    ));
}

#[test]
fn empty_directories_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(SrDataset::load_dir(dir.path(), 2).is_err());
    assert!(SrDataset::load_dir(&dir.path().join("missing"), 2).is_err());
}

// ------------------------------------------------------------- checkpoints

#[test]
fn checkpoints_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut net = tiny_net(BlockVariant::Fused, 2, 20);
    let schedule = LrSchedule::new(1e-3, 100).unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
    for _ in 0..3 {
        let mut grads: GradMap<f32> = GradMap::new();
        net.for_each_param(&mut |name, t| {
            grads.insert(name.to_string(), t.data().to_vec());
        });
        adam.step(&schedule, &mut net, &grads).unwrap();
    }
    let mut moments = Vec::new();
    net.for_each_param(&mut |name, _| {
        let (m, v) = adam.moments_of(name).unwrap();
        moments.push((name.to_string(), m.to_vec(), v.to_vec()));
    });
    let state = TrainState {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        base_lr: 1e-3,
        total_iters: 100,
        seed: 42,
        moments,
    };
    let rgb_mean = [0.4487, 0.4371, 0.4041];
    save_checkpoint(&path, &net, rgb_mean, 3, Some(&state)).unwrap();

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 3);
    assert_eq!(loaded.rgb_mean, rgb_mean);
    assert_eq!(loaded.net.config(), net.config());
    assert_eq!(param_snapshot(&loaded.net), param_snapshot(&net));
    assert_eq!(loaded.train.as_ref(), Some(&state));

    // The reloaded network is bit-identical in use, not just in storage.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Tensor::<f32>::from_fn(Shape::new(1, 3, 6, 6), |_| {
        (rng.random::<f64>() - 0.5) as f32
    });
    let y0 = net.forward(&mut Tape::disabled(), &x).unwrap();
    let y1 = loaded.net.forward(&mut Tape::disabled(), &x).unwrap();
    assert_eq!(y0.data(), y1.data());

    assert_eq!(
        checkpoint_scalar_count(&path).unwrap(),
        net.num_scalars() as u64
    );
}

#[test]
fn weights_only_checkpoints_load_but_cannot_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.ckpt");
    let net = tiny_net(BlockVariant::Channel, 3, 22);
    save_checkpoint(&path, &net, [0.5; 3], 0, None).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(loaded.train.is_none());
    assert_eq!(param_snapshot(&loaded.net), param_snapshot(&net));
    assert!(matches!(
        Trainer::from_checkpoint(loaded, TrainConfig::default()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("good.ckpt");
    let net = tiny_net(BlockVariant::Base, 2, 23);
    save_checkpoint(&path, &net, [0.5; 3], 0, None).unwrap();
    let good = std::fs::read(&path).unwrap();

    let bad = dir.path().join("bad.ckpt");

    let mut magic = good.clone();
    magic[0] ^= 0xff;
    std::fs::write(&bad, &magic).unwrap();
    match load_checkpoint(&bad) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic"), "{msg}"),
        Err(other) => panic!("bad magic must fail as a checkpoint error, got {other}"),
        Ok(_) => panic!("bad magic must not load"),
    }

    let mut version = good.clone();
    version[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&bad, &version).unwrap();
    match load_checkpoint(&bad) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
        Err(other) => panic!("bad version must fail as a checkpoint error, got {other}"),
        Ok(_) => panic!("bad version must not load"),
    }

    std::fs::write(&bad, &good[..good.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint(_))));

    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.ckpt")),
        Err(Error::Io { .. })
    ));
}

// ------------------------------------------------------------------ trainer

fn desk_config(total: u64) -> TrainConfig {
    TrainConfig {
        patch_size: 5,
        batch_size: 2,
        total_iters: total,
        base_lr: 1e-3,
        seed: 1,
        save_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn default_train_config_is_the_reference_recipe() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.patch_size, 48);
    assert_eq!(cfg.batch_size, 16);
    assert_eq!(cfg.total_iters, 900_000);
    assert_eq!(cfg.base_lr, 1e-4);
    assert_eq!(cfg.beta1, 0.9);
    assert_eq!(cfg.beta2, 0.999);
    assert_eq!(cfg.eps, 1e-8);
    assert!(cfg.augment);
}

#[test]
fn a_fresh_trainer_round_trips_through_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fresh.ckpt");
    let net = tiny_net(BlockVariant::Spatial, 2, 30);
    let before = param_snapshot(&net);
    let cfg = desk_config(50);
    let trainer = Trainer::new(net, [0.5, 0.4, 0.3], cfg).unwrap();
    assert_eq!(trainer.step_count(), 0);
    trainer.save(&path).unwrap();

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 0);
    let state = loaded.train.as_ref().unwrap();
    assert_eq!(state.seed, 1);
    assert_eq!(state.total_iters, 50);
    assert!(state
        .moments
        .iter()
        .all(|(_, m, v)| m.iter().all(|&x| x == 0.0) && v.iter().all(|&x| x == 0.0)));

    let resumed = Trainer::from_checkpoint(loaded, cfg).unwrap();
    assert_eq!(resumed.step_count(), 0);
    assert_eq!(param_snapshot(resumed.net()), before);
    assert_eq!(resumed.rgb_mean(), [0.5, 0.4, 0.3]);
}

#[test]
fn short_training_reduces_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let net = tiny_net(BlockVariant::Channel, 2, 31);
    let mut trainer = Trainer::new(net, ds.rgb_mean(), desk_config(80)).unwrap();
    let mut losses = Vec::new();
    trainer
        .run(&ds, 80, None, &mut |stat| losses.push(stat.loss))
        .unwrap();
    assert_eq!(losses.len(), 80);
    assert!(losses.iter().all(|l| l.is_finite()));
    let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = losses[70..].iter().sum::<f64>() / 10.0;
    assert!(
        last < 0.9 * first,
        "training should reduce the loss: {first} -> {last}"
    );
}

#[test]
fn training_is_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let run = || {
        let net = tiny_net(BlockVariant::Base, 2, 32);
        let mut trainer = Trainer::new(net, ds.rgb_mean(), desk_config(12)).unwrap();
        let mut losses = Vec::new();
        trainer
            .run(&ds, 12, None, &mut |stat| losses.push(stat.loss.to_bits()))
            .unwrap();
        (losses, param_snapshot(trainer.net()))
    };
    let (losses_a, params_a) = run();
    let (losses_b, params_b) = run();
    assert_eq!(losses_a, losses_b);
    assert_eq!(params_a, params_b);
}

#[test]
fn resuming_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let cfg = desk_config(20);
    let path = dir.path().join("mid.ckpt");

    // Uninterrupted reference run: 14 iterations.
    let mut straight = Trainer::new(tiny_net(BlockVariant::Base, 2, 40), ds.rgb_mean(), cfg).unwrap();
    let mut losses_a = Vec::new();
    straight
        .run(&ds, 14, None, &mut |s| losses_a.push(s.loss.to_bits()))
        .unwrap();

    // Same run split in two, with a checkpoint in the middle.
    let mut part1 = Trainer::new(tiny_net(BlockVariant::Base, 2, 40), ds.rgb_mean(), cfg).unwrap();
    let mut losses_b = Vec::new();
    part1
        .run(&ds, 7, Some(&path), &mut |s| losses_b.push(s.loss.to_bits()))
        .unwrap();
    drop(part1);
    let mut part2 = Trainer::from_checkpoint(load_checkpoint(&path).unwrap(), cfg).unwrap();
    assert_eq!(part2.step_count(), 7);
    part2
        .run(&ds, 14, None, &mut |s| losses_b.push(s.loss.to_bits()))
        .unwrap();

    assert_eq!(losses_a, losses_b, "loss history must match bit for bit");
    assert_eq!(
        param_snapshot(straight.net()),
        param_snapshot(part2.net()),
        "weights must match bit for bit"
    );
}

#[test]
fn non_finite_loss_aborts_with_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let path = dir.path().join("abort.ckpt");
    let mut trainer =
        Trainer::new(tiny_net(BlockVariant::Base, 2, 41), ds.rgb_mean(), desk_config(50)).unwrap();
    trainer.run(&ds, 3, None, &mut |_| {}).unwrap();
    assert_eq!(trainer.step_count(), 3);

    // Huge (but finite) weights overflow f32 in the second convolution, so
    // the next loss is non-finite while the stored state stays finite.
    trainer.net_mut().for_each_param_mut(&mut |name, t| {
        if name.ends_with(".weight") {
            for v in t.data_mut() {
                *v = 1e20;
            }
        }
    });
    let poisoned = param_snapshot(trainer.net());

    let err = trainer.run(&ds, 6, Some(&path), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }), "got {err}");
    assert_eq!(trainer.step_count(), 3, "the failed iteration must not count");

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 3);
    assert_eq!(param_snapshot(&loaded.net), poisoned);
}

#[test]
fn trainer_rejects_a_scale_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let mut trainer =
        Trainer::new(tiny_net(BlockVariant::Base, 3, 42), ds.rgb_mean(), desk_config(10)).unwrap();
    assert!(matches!(
        trainer.train_iteration(&ds),
        Err(Error::Config(_))
    ));
}

#[test]
fn run_clamps_to_the_schedule_total() {
    let dir = tempfile::tempdir().unwrap();
    let ds = smooth_dataset(dir.path(), 2);
    let mut trainer =
        Trainer::new(tiny_net(BlockVariant::Base, 2, 43), ds.rgb_mean(), desk_config(5)).unwrap();
    let mut iters = Vec::new();
    trainer
        .run(&ds, 999, None, &mut |s| iters.push(s.iter))
        .unwrap();
    assert_eq!(iters, vec![1, 2, 3, 4, 5]);
    assert_eq!(trainer.step_count(), 5);

    // Already past the target: a no-op.
    trainer.run(&ds, 4, None, &mut |_| panic!("no iterations expected")).unwrap();
    assert_eq!(trainer.step_count(), 5);
}

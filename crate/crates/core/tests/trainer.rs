use std::fs;

use dynrf_autodiff::lr_at;
use dynrf_core::fields::{FlowConfig, RadianceConfig};
use dynrf_core::scene::{gen_preset, GenOptions, SceneDataset, ScenePreset};
use dynrf_core::train::{
    sample_consistency, sample_rays, train, Checkpoint, TrainConfig, Trainer, CHECKPOINT_FILE,
    LOSS_LOG_FILE, LOSS_LOG_HEADER,
};
use dynrf_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> SceneDataset {
    gen_preset(
        ScenePreset::Sphere,
        &GenOptions {
            views: 4,
            times: 3,
            width: 8,
            height: 8,
            seed: 1,
            correspondences: 32,
            test_every: Some(4),
        },
    )
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        seed: 7,
        warmup_steps: 2,
        total_steps: 6,
        rays_per_batch: 8,
        consistency_points_per_batch: 8,
        correspondences_per_batch: 8,
        samples_per_ray: 8,
        eval_samples_per_ray: 8,
        empty_space_k: 4,
        radiance: RadianceConfig {
            pos_freqs: 2,
            dir_freqs: 1,
            depth: 2,
            width: 16,
            skip_layer: None,
            specular_width: 8,
        },
        flow: FlowConfig { depth: 2, width: 16 },
        checkpoint_interval: 2,
        log_interval: 1,
        ..TrainConfig::default()
    }
}

fn bytes(c: &Checkpoint) -> Vec<u8> {
    c.to_bytes().unwrap()
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = dataset();
    for cfg in [
        TrainConfig { total_steps: 0, warmup_steps: 0, ..tiny_config() },
        TrainConfig { warmup_steps: 6, ..tiny_config() },
        TrainConfig { rays_per_batch: 0, ..tiny_config() },
        TrainConfig { decay_steps: 0, ..tiny_config() },
    ] {
        assert!(matches!(Trainer::new(&ds, cfg), Err(Error::Config(_))));
    }
    assert!(TrainConfig::parse("total_steps = 0").is_err());
    assert!(TrainConfig::parse("warmup_steps = oops").is_err());
    assert!(TrainConfig::parse("no equals sign").is_err());
}

#[test]
fn config_text_round_trips() {
    let cfg = TrainConfig {
        base_lr: 3.5e-4,
        ..tiny_config()
    };
    assert_eq!(TrainConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    let main = TrainConfig::parse("loss_preset = main\nalpha = 0.5").unwrap();
    assert_eq!(main.weights.corr_weight, 1.0);
    assert_eq!(main.weights.alpha, 0.5);
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let ds = dataset();
    let a = train(&ds, tiny_config(), None).unwrap();
    let b = train(&ds, tiny_config(), None).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let c = train(&ds, TrainConfig { seed: 8, ..tiny_config() }, None).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn warmup_never_touches_the_flow() {
    let ds = dataset();
    let mut t = Trainer::new(&ds, tiny_config()).unwrap();
    let before: Vec<Vec<f32>> = t.flow().params().iter().map(|p| p.value.data().to_vec()).collect();
    t.run_until(2, None).unwrap();
    assert!(!t.in_warmup());
    assert_eq!(t.flow().evaluated_points(), 0);
    let after: Vec<Vec<f32>> = t.flow().params().iter().map(|p| p.value.data().to_vec()).collect();
    assert_eq!(before, after);
    assert!(t.history().iter().all(|r| r.losses.corr == 0.0 && r.losses.flow == 0.0 && r.losses.acc == 0.0));
    t.step().unwrap();
    assert!(t.flow().evaluated_points() > 0);
    let last = t.history().last().unwrap();
    assert!(last.losses.corr > 0.0 && last.losses.acc > 0.0);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let ds = dataset();
    let straight = train(&ds, tiny_config(), None).unwrap();
    let mut first = Trainer::new(&ds, tiny_config()).unwrap();
    let mid = first.run_until(3, None).unwrap();
    let reloaded = Checkpoint::from_bytes(&bytes(&mid)).unwrap();
    let mut second = Trainer::resume(&ds, reloaded).unwrap();
    assert_eq!(second.step_count(), 3);
    let rec = second.step().unwrap();
    let cfg = tiny_config();
    assert_eq!(rec.step, 3);
    assert_eq!(rec.lr, lr_at(3, cfg.base_lr, cfg.decay_factor, cfg.decay_steps));
    let resumed = second.run(None).unwrap();
    assert_eq!(bytes(&resumed), bytes(&straight));
}

#[test]
fn checkpoint_files_round_trip_byte_for_byte() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(&ds, tiny_config(), Some(dir.path())).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let on_disk = fs::read(&path).unwrap();
    assert_eq!(on_disk, bytes(&ckpt));
    let loaded = Checkpoint::load(&path).unwrap();
    let again = dir.path().join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), on_disk);
    assert_eq!(loaded.config, tiny_config());
    assert_eq!(loaded.step, 6);

    let log = fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOSS_LOG_HEADER);
    assert_eq!(lines.len(), 7);
}

#[test]
fn damaged_checkpoints_fail_cleanly() {
    let ds = dataset();
    let good = bytes(&train(&ds, tiny_config(), None).unwrap());
    for cut in [0, 3, 10, 40, good.len() / 2, good.len() - 1] {
        assert!(Checkpoint::from_bytes(&good[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(Checkpoint::from_bytes(&trailing).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn divergence_keeps_the_last_good_checkpoint() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&ds, tiny_config()).unwrap();
    t.run_until(2, Some(dir.path())).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let good = fs::read(&path).unwrap();

    let mut poisoned = t.checkpoint();
    for p in poisoned.radiance.params_mut() {
        p.value.data_mut()[0] = f32::NAN;
    }
    let mut t = Trainer::resume(&ds, poisoned).unwrap();
    let err = t.run(Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 2, .. }), "{err:?}");
    assert_eq!(fs::read(&path).unwrap(), good);
}

#[test]
fn single_ray_batches_work() {
    let ds = dataset();
    let cfg = TrainConfig {
        rays_per_batch: 1,
        consistency_points_per_batch: 1,
        correspondences_per_batch: 1,
        ..tiny_config()
    };
    let ckpt = train(&ds, cfg, None).unwrap();
    assert_eq!(ckpt.step, 6);
}

#[test]
fn frames_are_drawn_uniformly() {
    let ds = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_rays(&ds, &[0, 5], 100_000, &mut rng).unwrap();
    let share = batch.frames.iter().filter(|&&f| f == 0).count() as f64 / 1e5;
    assert!((share - 0.5).abs() < 0.01, "{share}");
    assert!(sample_rays(&ds, &[], 1, &mut rng).is_err());
}

#[test]
fn consistency_targets_stay_within_half_a_unit() {
    let ds = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let times = ds.distinct_times();
    let near = vec![([0.0f32, 0.1, 0.2], 0.95f32)];
    let b = sample_consistency(&ds, &times, 5000, &near, &mut rng);
    let from_near = b.points.iter().filter(|p| **p == near[0].0).count() as f64 / 5000.0;
    assert!((from_near - 0.5).abs() < 0.03, "{from_near}");
    for i in 0..b.points.len() {
        let (t, tc) = (b.times[i], b.target_times[i]);
        assert!((-1.0..=1.0).contains(&tc));
        assert!((tc - t).abs() <= 0.5 + 1e-6);
        assert!(ds.bounds.aabb.contains(dynrf_core::geometry::Vec3::from_array(b.points[i].map(f64::from))));
    }
    assert!(b.target_times.iter().any(|&t| t == 1.0));
}

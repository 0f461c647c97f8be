mod common;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use trackquery::instrument::{InstrumentClass, InstrumentTable};
use trackquery::nn::layers::randn;
use trackquery::nn::{LatentGaussian, Model, ModelConfig};
use trackquery::training::batch::KEY_OFFSETS;
use trackquery::training::*;
use trackquery::Error;

use common::{band, same_width_batch};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        batch_size: 4,
        validation_batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn overfitting_one_batch_drives_the_loss_down() {
    let table = InstrumentTable::standard();
    let batch = same_width_batch(&band(4, 21, &table), 4);
    let mut cfg = TrainConfig::desk();
    cfg.batch_size = batch.len();
    cfg.augment = false;
    cfg.schedule = ScheduleConfig {
        total_epochs: 200,
        tf_start: 1.0,
        tf_end: 1.0,
        lr_start: 1e-3,
        lr_end: 1e-3,
        ..ScheduleConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &table).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| trainer.run_epoch(&batch).unwrap().total).collect();
    let (first, last) = (losses[0], losses[199]);
    assert!(last < 0.25 * first, "loss {first:.2} -> {last:.2}");
    let early: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let late: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(late < early);
}

#[test]
fn resume_reproduces_the_next_step() {
    let table = InstrumentTable::standard();
    let segs = band(6, 4, &table);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let mut trainer = Trainer::new(tiny_config(), &table).unwrap();
    trainer.run_epoch(&segs).unwrap();
    trainer.save(&path).unwrap();
    let resumed = Trainer::resume(&path, &table).unwrap();
    assert_eq!(resumed.state.next_epoch, 1);
    assert_eq!(trainer.next_step_loss(&segs).unwrap(), resumed.next_step_loss(&segs).unwrap());

    let mut resumed = resumed;
    let a = trainer.run_epoch(&segs).unwrap();
    let b = resumed.run_epoch(&segs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let table = InstrumentTable::standard();
    let model = Model::new(ModelConfig::tiny(), table.len(), DType::F32, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let state = TrainState { next_epoch: 3, best_validation: Some(1.5) };
    save_checkpoint(&path, &model, &tiny_config(), &table, &state, None).unwrap();
    let ck = load_checkpoint(&path, &table).unwrap();
    assert_eq!(ck.state, state);
    for ((na, a), (nb, b)) in model.params.iter().zip(ck.model.params.iter()) {
        assert_eq!(na, nb);
        let va: Vec<f32> = a.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = b.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

fn saved_tiny(dir: &std::path::Path, table: &InstrumentTable) -> std::path::PathBuf {
    let model = Model::new(ModelConfig::tiny(), table.len(), DType::F32, 1).unwrap();
    let path = dir.join("m.ckpt");
    let state = TrainState { next_epoch: 0, best_validation: None };
    save_checkpoint(&path, &model, &tiny_config(), table, &state, None).unwrap();
    path
}

#[test]
fn edited_vocabulary_is_refused() {
    let table = InstrumentTable::standard();
    let dir = tempfile::tempdir().unwrap();
    let path = saved_tiny(dir.path(), &table);
    let mut classes: Vec<InstrumentClass> = table.classes().to_vec();
    classes[1].name.push_str(" (edited)");
    let edited = InstrumentTable::from_classes(classes).unwrap();
    assert!(matches!(load_checkpoint(&path, &edited), Err(Error::IncompatibleCheckpoint(_))));
}

#[test]
fn legacy_version_is_refused() {
    let table = InstrumentTable::standard();
    let dir = tempfile::tempdir().unwrap();
    let path = saved_tiny(dir.path(), &table);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    match load_checkpoint(&path, &table) {
        Err(Error::CheckpointVersion { found: 0, expected }) => assert_eq!(expected, CHECKPOINT_VERSION),
        other => panic!("expected a version error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn empty_training_split_is_a_config_error() {
    let table = InstrumentTable::standard();
    let mut trainer = Trainer::new(tiny_config(), &table).unwrap();
    assert!(matches!(trainer.fit(&[], &[], None, |_| {}), Err(Error::Config(_))));
}

#[test]
fn without_kl_weight_the_loss_is_pure_reconstruction() {
    let table = InstrumentTable::standard();
    let model = Model::new(ModelConfig::tiny(), table.len(), DType::F64, 2).unwrap();
    let batch = same_width_batch(&band(4, 5, &table), 3);
    let sched = step_schedule(&ScheduleConfig::default(), 0);
    assert_eq!((sched.beta_function, sched.beta_other), (0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = elbo_loss(&model, &batch, &sched, LossMode::EVAL, &mut rng).unwrap().breakdown;
    let recon = e.track_recon + e.function_recon + e.aux_recon;
    assert!((e.total - recon).abs() <= 1e-9 * recon.abs());
    assert!(e.kl_mix >= 0.0 && e.kl_function >= 0.0 && e.kl_track >= 0.0);
}

#[test]
fn schedule_hits_the_geometric_midpoint() {
    let s = step_schedule(&ScheduleConfig::default(), 15);
    assert!((s.lr - 1e-4).abs() < 1e-12);
    assert_eq!((s.beta_function, s.beta_other), (0.5, 0.01));
}

#[test]
fn augmentation_offsets_are_uniform() {
    let mut counts = [0usize; 12];
    let draws = 12_000;
    for i in 0..draws {
        let mut rng = step_rng(7, i / 100, i % 100);
        let k = draw_key_offset(&mut rng);
        counts[(k - KEY_OFFSETS.start()) as usize] += 1;
    }
    let expected = draws as f64 / 12.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(11.0).unwrap().inverse_cdf(0.95);
    assert!(chi2 < critical, "chi2 {chi2:.2} >= {critical:.2}: {counts:?}");
}

#[test]
fn augmentation_transposes_the_whole_batch() {
    let table = InstrumentTable::standard();
    let batch = same_width_batch(&band(2, 8, &table), 2);
    let shifted = augment(&batch, 3).unwrap();
    for (a, b) in batch.iter().zip(&shifted) {
        for (ta, tb) in a.tracks.iter().zip(&b.tracks) {
            assert_eq!(ta.grid.shifted(3), tb.grid);
        }
    }
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let mean = randn(&mut rng, &[1, 6], DType::F64).unwrap();
        let log_var = (randn(&mut rng, &[1, 6], DType::F64).unwrap() * 0.5).unwrap();
        let g = LatentGaussian::new(mean, log_var).unwrap();
        let analytic: f64 = g.kl().unwrap().to_vec1::<f64>().unwrap()[0];
        let m: Vec<f64> = g.mean.to_vec2::<f64>().unwrap().remove(0);
        let lv: Vec<f64> = g.log_var.to_vec2::<f64>().unwrap().remove(0);
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let z: Vec<f64> = g.sample(&mut rng).unwrap().to_vec2::<f64>().unwrap().remove(0);
                z.iter()
                    .zip(m.iter().zip(&lv))
                    .map(|(&z, (&mu, &lv))| {
                        let log_q = -0.5 * (lv + (z - mu).powi(2) / lv.exp());
                        let log_p = -0.5 * z * z;
                        log_q - log_p
                    })
                    .sum()
            })
            .collect();
        let mc = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mc).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((analytic - mc).abs() <= 3.0 * se, "analytic {analytic} mc {mc} se {se}");
    }
}

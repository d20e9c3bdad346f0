use pointseg::scene::Split;
use pointseg::train::{
    build_instance_cache, evaluate, train, train_until, write_run_files, CheckpointDir, Dataset, RunConfig,
    TrainState, CHECKPOINT_FILE, LOSS_LOG_FILE,
};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::benchmark();
    cfg.data.num_train = 6;
    cfg.data.num_val = 2;
    cfg.train.stage1_epochs = 2;
    cfg.train.stage2_epochs = 2;
    cfg.train.seed = 11;
    cfg
}

fn trained(cfg: &RunConfig, data: &Dataset) -> TrainState {
    let mut s = TrainState::new(cfg).unwrap();
    train(&mut s, data, &mut ()).unwrap();
    s
}

#[test]
fn same_seed_same_bytes() {
    let cfg = small_config();
    let data = Dataset::load(&cfg).unwrap();
    let a = trained(&cfg, &data).to_bytes().unwrap();
    let b = trained(&cfg, &data).to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let cfg = small_config();
    let data = Dataset::load(&cfg).unwrap();
    let full = trained(&cfg, &data);

    // Stop inside stage 2 so the restored instance cache is exercised.
    let dir = tempfile::tempdir().unwrap();
    let mut first = TrainState::new(&cfg).unwrap();
    train_until(&mut first, &data, &mut CheckpointDir(dir.path()), 3).unwrap();
    assert!(first.cache.is_some());
    let mut resumed = TrainState::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(resumed, first);
    train(&mut resumed, &data, &mut ()).unwrap();

    assert_eq!(resumed.to_bytes().unwrap(), full.to_bytes().unwrap());
}

#[test]
fn run_files_round_trip() {
    let cfg = small_config();
    let data = Dataset::load(&cfg).unwrap();
    let state = trained(&cfg, &data);
    let dir = tempfile::tempdir().unwrap();
    write_run_files(dir.path(), &state).unwrap();
    assert_eq!(TrainState::load(&dir.path().join(CHECKPOINT_FILE)).unwrap(), state);
    let log = std::fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), state.log.len() + 1);
}

#[test]
fn semantic_loss_decreases() {
    let mut cfg = small_config();
    cfg.train.stage1_epochs = 4;
    cfg.train.stage2_epochs = 0;
    let data = Dataset::load(&cfg).unwrap();
    let s = trained(&cfg, &data);
    let epoch_mean = |e: u32| {
        let rows: Vec<f64> = s.log.iter().filter(|r| r.epoch == e).map(|r| r.semantic).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    assert!(epoch_mean(3) <= epoch_mean(0), "{} > {}", epoch_mean(3), epoch_mean(0));
    let report = evaluate(&s.model, &s.config, &data, Split::Val).unwrap();
    assert!(report.confusion.miou().unwrap() > 0.0);
}

#[test]
fn stage_one_descriptors_recover_instances() {
    let mut cfg = RunConfig::benchmark();
    cfg.data.num_train = 40;
    cfg.data.num_val = 1;
    cfg.train.stage2_epochs = 0;
    let data = Dataset::load(&cfg).unwrap();
    let s = trained(&cfg, &data);
    let (_, aris) =
        build_instance_cache(&s.model, &data.train, &cfg.cluster, &cfg.data.spec.instance_classes()).unwrap();
    let mean = aris.iter().sum::<f64>() / aris.len() as f64;
    assert!(mean >= 0.9, "mean ARI {mean}");
}

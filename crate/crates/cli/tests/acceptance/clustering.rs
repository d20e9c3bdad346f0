use std::time::{Duration, Instant};

use pointseg::train::{build_instance_cache, Dataset, RunConfig, TrainState};

use crate::Outcome;

const SCENES: usize = 100;
const MIN_ARI: f64 = 0.95;
const BUDGET: Duration = Duration::from_secs(60);

pub fn run() -> Outcome {
    let mut cfg = RunConfig::benchmark();
    cfg.data.seed = 31;
    cfg.data.num_train = SCENES;
    cfg.data.num_val = 0;
    let data = Dataset::load(&cfg).expect("benchmark scenes");
    let state = TrainState::new(&cfg).expect("fresh model");
    let t = Instant::now();
    let (_, aris) = build_instance_cache(
        &state.model,
        &data.train,
        &cfg.cluster,
        &cfg.data.spec.instance_classes(),
    )
    .expect("clustering runs");
    let elapsed = t.elapsed();
    let good = aris.iter().filter(|&&a| a >= MIN_ARI).count();
    let worst = aris.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome {
        pass: good * 100 >= 95 * SCENES && elapsed < BUDGET,
        detail: format!(
            "{good}/{SCENES} scenes with ARI >= {MIN_ARI} (need 95%), min ARI {worst:.4}, clustering {:.1}s (budget 60s)",
            elapsed.as_secs_f64()
        ),
    }
}

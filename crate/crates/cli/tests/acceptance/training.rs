use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pointseg::scene::Split;
use pointseg::train::{evaluate, train, train_until, Dataset, RunConfig, TrainState, CHECKPOINT_FILE};

use crate::Outcome;

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_BUDGET: Duration = Duration::from_secs(45 * 60);

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// Stage 1 never touches the heads, so it is trained once per seed and each
// variant continues from a copy with its own head switches.
pub fn ablation() -> Outcome {
    let t = Instant::now();
    let variants = [("baseline", false, false), ("cls", true, false), ("recon", false, true), ("full", true, true)];
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let base_cfg = RunConfig::benchmark();
    let data = Dataset::load(&base_cfg).expect("benchmark dataset");
    for seed in ABLATION_SEEDS {
        let mut cfg = base_cfg.clone();
        cfg.train.seed = seed;
        let mut stage1 = TrainState::new(&cfg).expect("state");
        train_until(&mut stage1, &data, &mut (), cfg.train.stage1_epochs).expect("stage 1");
        for (k, &(_, cls, recon)) in variants.iter().enumerate() {
            let mut s = stage1.clone();
            s.config.train.stage1_only = !cls && !recon;
            s.config.train.cls_head = cls;
            s.config.train.recon_head = recon;
            train(&mut s, &data, &mut ()).expect("stage 2");
            let report = evaluate(&s.model, &s.config, &data, Split::Val).expect("evaluation");
            scores[k].push(report.confusion.miou().expect("mIoU"));
        }
    }
    let m: Vec<f64> = scores.iter().map(|s| median(s.clone())).collect();
    let elapsed = t.elapsed();
    let ordered = m[3] >= m[1] && m[3] >= m[2] && m[1] >= m[0] && m[2] >= m[0];
    let cells: Vec<String> = variants
        .iter()
        .zip(&scores)
        .zip(&m)
        .map(|(((name, ..), s), med)| {
            let runs: Vec<String> = s.iter().map(|v| format!("{v:.4}")).collect();
            format!("{name} {med:.4} [{}]", runs.join(" "))
        })
        .collect();
    Outcome {
        pass: ordered && elapsed < ABLATION_BUDGET,
        detail: format!(
            "median val mIoU over seeds {ABLATION_SEEDS:?}: {}; ordering full >= single-head >= baseline {}; runtime {:.0}s (budget 2700s)",
            cells.join(", "),
            if ordered { "holds" } else { "violated" },
            elapsed.as_secs_f64()
        ),
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::benchmark();
    cfg.data.num_train = 6;
    cfg.data.num_val = 2;
    cfg.train.stage1_epochs = 2;
    cfg.train.stage2_epochs = 2;
    cfg.train.seed = 5;
    cfg
}

fn cli_train(config: &Path, out: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_pointseg"))
        .arg("train")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let read = |name: &str| std::fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"));
    Ok((read(CHECKPOINT_FILE)?, read("metrics.csv")?))
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, small_config().to_toml().expect("config")).expect("write config");
    let runs: Result<Vec<_>, String> =
        ["a", "b"].iter().map(|r| cli_train(&config, &dir.path().join(r))).collect();
    match runs {
        Err(e) => Outcome {
            pass: false,
            detail: format!("training failed: {e}"),
        },
        Ok(r) => {
            let ckpt = r[0].0 == r[1].0;
            let metrics = r[0].1 == r[1].1;
            Outcome {
                pass: ckpt && metrics,
                detail: format!(
                    "two CLI runs with seed 5: checkpoint ({} bytes) identical: {ckpt}, metrics.csv identical: {metrics}",
                    r[0].0.len()
                ),
            }
        }
    }
}

pub fn zero_weights() -> Outcome {
    let mut cfg = small_config();
    let data = Dataset::load(&cfg).expect("dataset");
    cfg.train.stage1_only = true;
    let mut reference = TrainState::new(&cfg).expect("state");
    train(&mut reference, &data, &mut ()).expect("stage-1-only run");
    cfg.train.stage1_only = false;
    cfg.train.lambda1 = 0.0;
    cfg.train.lambda2 = 0.0;
    let mut zeroed = TrainState::new(&cfg).expect("state");
    train(&mut zeroed, &data, &mut ()).expect("zero-weight run");

    let key = |s: &TrainState| -> Vec<(u64, u64, u64, u64)> {
        s.log
            .iter()
            .map(|r| (r.step, r.lr.to_bits(), r.semantic.to_bits(), r.total.to_bits()))
            .collect()
    };
    let logs = key(&reference) == key(&zeroed);
    let heads_ran = zeroed.log.iter().any(|r| r.classification > 0.0 && r.reconstruction > 0.0);
    let ids: Vec<_> = reference.model.params.ids().collect();
    let identical = ids
        .iter()
        .filter(|&&id| {
            let (a, b) = (reference.model.params.get(id), zeroed.model.params.get(id));
            a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
        .count();
    Outcome {
        pass: logs && heads_ran && identical == ids.len(),
        detail: format!(
            "{} steps, per-step loss log identical: {logs}, head losses evaluated: {heads_ran}, {identical}/{} parameter tensors bitwise equal",
            reference.log.len(),
            ids.len()
        ),
    }
}

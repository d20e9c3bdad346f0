//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 2 4`.

mod clustering;
mod gradients;
mod oracles;
mod training;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (1, "gradient correctness", gradients::run),
    (2, "chamfer oracle", oracles::chamfer),
    (3, "clustering recovery", clustering::run),
    (4, "metric oracles", oracles::metrics),
    (5, "head ablation ordering", training::ablation),
    (6, "format fidelity", oracles::formats),
    (7, "training determinism", training::determinism),
    (8, "zero-weight degeneracy", training::zero_weights),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {verdict} [{:.1}s] {}", t.elapsed().as_secs_f64(), out.detail);
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

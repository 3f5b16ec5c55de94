//! Compares round-1 and round-2 detectors on held-out scenes.
//!
//! Usage: `cargo run --release --example mining [SEED ...]` (seeds 1 to 5
//! by default).

use hardneg::refdet::experiment::{fp_at_matched_rate, run_experiment, ExperimentConfig};

fn main() {
    let cfg = ExperimentConfig::default();
    let mut seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seeds are unsigned integers"))
        .collect();
    if seeds.is_empty() {
        seeds = (1..=5).collect();
    }
    for seed in seeds {
        let out = run_experiment(seed, &cfg).expect("experiment runs");
        let (r1, r2) = (&out.rounds[0].discrete, &out.rounds[1].discrete);
        let m = fp_at_matched_rate(r1, r2);
        println!(
            "seed {seed}: pool {} | fp at tpr {:.3}: {} -> {} | tpr@50fp {:.3} -> {:.3} | tpr@100fp {:.3} -> {:.3}",
            out.pool_sizes.last().unwrap_or(&0),
            m.tp_rate,
            m.fp_first,
            m.fp_second,
            r1.tp_at_fp(50),
            r2.tp_at_fp(50),
            r1.tp_at_fp(100),
            r2.tp_at_fp(100),
        );
    }
}

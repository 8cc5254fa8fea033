//! Synthetic regime comparison:
//! `cargo run --release --example regime_benchmark -- [seeds] [methods] [n_src] [n_tar]`.

use std::time::Instant;

use gitl::dataset::{generate_synthetic, SyntheticSpec};
use gitl::eval::{run_regime_suite, Method, SplitName, SuiteConfig};
use gitl::selection::Regime;

fn main() -> gitl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let methods: Vec<Method> = match args.get(2) {
        Some(list) => list.split(',').map(|m| m.parse()).collect::<gitl::Result<_>>()?,
        None => vec![Method::Scorer, Method::LogitLp],
    };
    let n_src: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let n_tar: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let regimes = Regime::ALL;
    let mut totals = vec![vec![0.0; regimes.len()]; methods.len()];
    let start = Instant::now();
    for seed in 0..seeds {
        let spec = SyntheticSpec::new(n_src, n_tar, 0.3, seed);
        let pair = generate_synthetic(&spec)?;
        let mut cfg = SuiteConfig::new(seed);
        cfg.record_timings = false;
        let report = run_regime_suite(&pair.source, &pair.target, &methods, &regimes, &cfg)?;
        for (mi, &m) in methods.iter().enumerate() {
            for (ri, &r) in regimes.iter().enumerate() {
                let row = report.row(r, m, SplitName::Test).unwrap();
                totals[mi][ri] += row.recall_at_1x;
                print!("{m}/{r}={:.4} ", row.recall_at_1x);
            }
        }
        println!("(seed {seed}, {:.1}s)", start.elapsed().as_secs_f64());
    }
    for (mi, m) in methods.iter().enumerate() {
        let cells: Vec<String> = totals[mi].iter().map(|t| format!("{:.4}", t / seeds as f64)).collect();
        println!("{m:>16}: {}", cells.join("  "));
    }
    Ok(())
}

//! Runs every pipeline stage into a directory and prints the bench table.
//! Usage: pipeline_bench [out_dir]

use std::path::PathBuf;

use layerprune::pipeline::{self, BenchSettings, Method, PipelineConfig};
use layerprune::search::{budget_grid, SearchBudget};

fn main() -> layerprune::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("layerprune-bench"));
    let cfg = PipelineConfig {
        seed: 7,
        b_grid: budget_grid(0.1, 0.7, 0.05)?,
        search_budget: SearchBudget {
            simulations: 150,
            eval_cap: 100,
            ..SearchBudget::default()
        },
        bench: BenchSettings {
            budgets: vec![0.3, 0.5],
            methods: Method::ALL.to_vec(),
            repetitions: 3,
        },
        ..PipelineConfig::default()
    };
    let manifest = pipeline::run_pipeline(&out, &cfg)?;
    for (name, rec) in &manifest.artifacts {
        println!("{name:<28} {}", &rec.sha256[..16]);
    }
    print!("\n{}", std::fs::read_to_string(out.join(pipeline::BENCH_FILE))?);
    Ok(())
}

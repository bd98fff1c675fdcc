//! Sweeps SOE embedding dimension and triplet budget on a planted corpus and prints
//! the results as two small tables.
//!
//! ```text
//! cargo run --release --example ablation_sweep
//! ```

use triderm::ablation::{run_ablation, AblationConfig};

fn main() -> triderm::Result<()> {
    let report = run_ablation(&AblationConfig {
        seed: 7,
        ..AblationConfig::default()
    })?;
    println!("held-out judgments: {}\n", report.n_heldout);
    print!("{}", report.to_table());
    Ok(())
}

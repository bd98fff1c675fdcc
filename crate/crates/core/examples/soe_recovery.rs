//! Fits a soft ordinal embedding to exhaustive planted triplets and scores it on a
//! held-out split.
//!
//! ```text
//! cargo run --release --example soe_recovery
//! ```

use std::time::Instant;

use triderm::corpus::{synth_dataset, SynthConfig};
use triderm::soe::{fit_judgments, holdout_split, SoeConfig};

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 60,
        latent_dim: 4,
        noise_sd: 0.0,
        ..SynthConfig::default()
    })?;
    let (train, test) = holdout_split(&corpus.triplets, 0.1, 0)?;
    println!("{} training and {} held-out judgments", train.len(), test.len());

    for dim in [2, 4] {
        let started = Instant::now();
        let cfg = SoeConfig {
            dim,
            ..SoeConfig::default()
        };
        let out = fit_judgments(&train, Some(&test), corpus.latents.ids(), &cfg)?;
        let heldout = out.heldout.expect("held-out split is non-empty");
        println!(
            "dim {dim}: balanced agreement {:.1}%, micro {:.1}%, final loss {:.5}, {:.2?}",
            100.0 * heldout.balanced,
            100.0 * heldout.micro,
            out.loss_history.last().unwrap(),
            started.elapsed()
        );
    }
    Ok(())
}

//! Scores an embedding against triplet judgments: balanced and micro agreement,
//! macro-F1 and Cohen's kappa.

use triderm::corpus::{pairwise_distances, synth_dataset, EmbeddingSet, Metric, SynthConfig};
use triderm::metrics::evaluate_report;

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 30,
        noise_sd: 0.3,
        triplet_fraction: 0.3,
        ..SynthConfig::default()
    })?;
    // the true latents against noisy judgments
    let report = evaluate_report(&pairwise_distances(&corpus.latents, Metric::Euclidean)?, &corpus.triplets)?;
    println!("planted latents vs noisy judgments\n{}", report.to_table());

    // a random embedding should land near chance
    let coords: Vec<f64> = (0..corpus.latents.len() * 4).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
    let random = EmbeddingSet::new(corpus.latents.ids().to_vec(), 4, coords)?;
    let report = evaluate_report(&pairwise_distances(&random, Metric::Euclidean)?, &corpus.triplets)?;
    println!("arbitrary coordinates\n{}", report.to_json());
    Ok(())
}

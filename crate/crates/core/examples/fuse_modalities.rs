//! Fuses a "vision" and a "text" distance matrix that each see part of the planted
//! structure, and compares each against the planted triplets.

use triderm::corpus::{pairwise_distances, synth_dataset, EmbeddingSet, Metric, SynthConfig};
use triderm::fusion::{fuse, fusion_weights, minmax_normalize, modality_confidence, FusionConfig, FusionMode};
use triderm::metrics::evaluate_report;

/// Keeps only the listed latent coordinates.
fn project(e: &EmbeddingSet, keep: &[usize]) -> triderm::Result<EmbeddingSet> {
    let rows: Vec<Vec<f64>> = (0..e.len()).map(|i| keep.iter().map(|&k| e.row(i)[k]).collect()).collect();
    EmbeddingSet::from_rows(e.ids().to_vec(), &rows)
}

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 40,
        latent_dim: 4,
        triplet_fraction: 0.2,
        ..SynthConfig::default()
    })?;
    let vision = pairwise_distances(&project(&corpus.latents, &[0, 1, 2])?, Metric::Euclidean)?;
    let text = pairwise_distances(&project(&corpus.latents, &[1, 2, 3])?, Metric::Euclidean)?;

    let sv = modality_confidence(&minmax_normalize(&vision)?)?;
    let st = modality_confidence(&minmax_normalize(&text)?)?;
    let w = fusion_weights(&sv, &st, 0.7);
    println!("vision weight per item: min {:.3} max {:.3}", w.iter().copied().fold(1.0, f64::min), w.iter().copied().fold(0.0, f64::max));

    let candidates = [
        ("vision", vision.clone()),
        ("text", text.clone()),
        ("uncertainty fusion", fuse(&vision, &text, &FusionConfig::default())?),
        (
            "similarity fusion",
            fuse(
                &vision,
                &text,
                &FusionConfig {
                    mode: FusionMode::Similarity,
                    ..FusionConfig::default()
                },
            )?,
        ),
    ];
    for (name, d) in candidates {
        let r = evaluate_report(&d, &corpus.triplets)?;
        println!("{name:<20} balanced agreement {:.1}%", 100.0 * r.balanced_agreement);
    }
    Ok(())
}

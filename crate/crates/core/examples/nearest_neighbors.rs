//! Retrieval over a fitted embedding: the closest and farthest items to a query.

use triderm::corpus::{pairwise_distances, synth_dataset, ItemId, Metric, SynthConfig};
use triderm::fusion::{farthest_neighbors, nearest_neighbors};
use triderm::soe::{fit_judgments, SoeConfig};

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 30,
        ..SynthConfig::default()
    })?;
    let fitted = fit_judgments(&corpus.triplets, None, corpus.latents.ids(), &SoeConfig::default())?;
    let fitted = pairwise_distances(&fitted.embedding, Metric::Euclidean)?;
    let planted = pairwise_distances(&corpus.latents, Metric::Euclidean)?;

    let query = ItemId::new("item000")?;
    let show = |title: &str, list: Vec<triderm::fusion::Neighbor>| {
        let ids: Vec<&str> = list.iter().map(|n| n.id.as_str()).collect();
        println!("{title:<18} {}", ids.join(" "));
    };
    show("fitted nearest", nearest_neighbors(&fitted, &query, 5)?);
    show("planted nearest", nearest_neighbors(&planted, &query, 5)?);
    show("fitted farthest", farthest_neighbors(&fitted, &query, 3)?);
    show("planted farthest", farthest_neighbors(&planted, &query, 3)?);
    Ok(())
}

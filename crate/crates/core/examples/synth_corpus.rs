//! Generates a small planted corpus and writes every artifact in its file format.
//!
//! ```text
//! cargo run --example synth_corpus -- /tmp/corpus
//! ```

use std::path::PathBuf;

use triderm::corpus::{
    load_view_pairs, read_judgments, save_pairs, synth_dataset, write_id_list, write_judgments, SynthConfig,
};
use triderm::oracle::{synthetic_descriptions, write_descriptions};

fn main() -> triderm::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("triderm-synth"));
    std::fs::create_dir_all(&dir).map_err(|e| triderm::Error::Invalid(e.to_string()))?;

    let cfg = SynthConfig {
        n_items: 24,
        latent_dim: 4,
        noise_sd: 0.1,
        triplet_fraction: 0.25,
        seed: 3,
        ..SynthConfig::default()
    };
    let corpus = synth_dataset(&cfg)?;

    write_id_list(&dir.join("ids.txt"), corpus.latents.ids())?;
    corpus.latents.save(&dir.join("latents.csv"))?;
    save_pairs(&dir.join("views.bin"), &corpus.pairs)?;
    write_judgments(&dir.join("triplets.jsonl"), &corpus.triplets)?;
    write_descriptions(&dir.join("descriptions.jsonl"), &synthetic_descriptions(&corpus.latents))?;

    // everything reads back unchanged
    assert_eq!(load_view_pairs(&dir.join("views.bin"))?, corpus.pairs);
    assert_eq!(read_judgments(&dir.join("triplets.jsonl"))?, corpus.triplets);

    let first = &corpus.pairs[0].view_a;
    println!("corpus in {}", dir.display());
    println!("  items      {}", corpus.latents.len());
    println!("  triplets   {}", corpus.triplets.len());
    println!(
        "  features   {} channels on a {}x{} grid",
        first.channels(),
        first.height(),
        first.width()
    );
    for w in first.wounds() {
        println!("  {} wound {:<3} covers {} cells", first.item(), w.id, w.area());
    }
    Ok(())
}

//! Trains the attention-pooling head with VICReg on paired synthetic views, then
//! shows what dropping the variance and covariance terms does to the embedding spread.
//!
//! ```text
//! cargo run --release --example vicreg_head
//! ```

use triderm::corpus::{synth_dataset, SynthConfig};
use triderm::pool::{embed_containers, per_dim_std, train_head, LossKind, Pooling, SslConfig};

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 256,
        noise_sd: 1.0,
        triplet_fraction: 0.0,
        ..SynthConfig::default()
    })?;
    let images: Vec<_> = corpus.pairs.iter().map(|p| p.view_a.clone()).collect();

    let runs = [
        ("vicreg, attention", SslConfig::for_loss(LossKind::Vicreg)),
        (
            "vicreg, mean pooling",
            SslConfig {
                pooling: Pooling::Mean,
                ..SslConfig::for_loss(LossKind::Vicreg)
            },
        ),
        (
            "invariance only",
            SslConfig {
                mu: 0.0,
                nu: 0.0,
                ..SslConfig::for_loss(LossKind::Vicreg)
            },
        ),
        ("triplet", SslConfig::for_loss(LossKind::Triplet)),
        ("contrastive", SslConfig::for_loss(LossKind::Contrastive)),
    ];
    for (name, cfg) in runs {
        let cfg = SslConfig {
            dim: 32,
            hidden: 32,
            epochs: 20,
            ..cfg
        };
        let trained = train_head(&corpus.pairs, &cfg)?;
        let emb = embed_containers(&images, &trained.params, cfg.token_cap, 0)?;
        let std = per_dim_std(&emb);
        let min = std.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = std.iter().sum::<f64>() / std.len() as f64;
        println!(
            "{name:<22} loss {:>8.4} -> {:>8.4}   per-dim std min {min:.3} mean {mean:.3}",
            trained.loss_history[0],
            trained.loss_history.last().unwrap()
        );
    }
    Ok(())
}

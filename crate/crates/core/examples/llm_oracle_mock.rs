//! Collects triplet judgments from a chat-completion endpoint. The built-in mock
//! model reads the planted coordinates out of each description, so its answers
//! match the synthetic labels; the second run is served from the cache.

use triderm::corpus::{synth_dataset, SynthConfig};
use triderm::oracle::{
    build_prompt, plan_queries, run_oracle_blocking, synthetic_descriptions, MockMode, MockServer, OracleConfig,
};

fn main() -> triderm::Result<()> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 12,
        ..SynthConfig::default()
    })?;
    let descriptions = synthetic_descriptions(&corpus.latents);
    let server = MockServer::start(MockMode::Latent)?;
    let cache = tempfile::tempdir().map_err(|e| triderm::Error::Invalid(e.to_string()))?;
    let cfg = OracleConfig {
        endpoint: server.endpoint(),
        cache_dir: Some(cache.path().to_path_buf()),
        budget_fraction: 0.5,
        ..OracleConfig::default()
    };
    let queries = plan_queries(&descriptions, &cfg)?;
    let p = build_prompt(&descriptions[0], &descriptions[1], &descriptions[2], &cfg.persona);
    println!("--- system ---\n{}\n--- user ---\n{}\n", p.system, p.user);

    let cold = run_oracle_blocking(&descriptions, &queries, &cfg)?;
    let warm = run_oracle_blocking(&descriptions, &queries, &cfg)?;
    let agree = cold
        .judgments
        .iter()
        .filter(|j| {
            corpus
                .triplets
                .iter()
                .any(|t| t.anchor == j.anchor && t.left == j.left && t.right == j.right && t.choice == j.choice)
        })
        .count();
    println!("{} queries; {agree} answers match the planted labels", queries.len());
    println!("cold run: {} requests; warm run: {} requests, {} cache hits", cold.requests, warm.requests, warm.cache_hits);
    println!("server saw {} requests in total", server.requests());
    Ok(())
}

//! Triplet judgments from a language model prompted over free-text case descriptions.

mod cache;
mod client;
mod mock;
mod prompt;

pub use crate::corpus::sample_triplet_space;
pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use client::{
    api_key_from_env, plan_queries, run_oracle, run_oracle_blocking, OracleConfig, OracleQuery, OracleRun,
    API_KEY_VARS,
};
pub use mock::{latent_answer, MockMode, MockServer};
pub use prompt::{
    build_prompt, parse_choice, parse_descriptions, parse_profile, prompt_cases, read_descriptions,
    synthetic_descriptions, write_descriptions, Answer, CaseDescription, Prompt, DEFAULT_PERSONA, QUESTION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_dataset, Choice, SynthConfig};

    fn setup(n: usize) -> (Vec<CaseDescription>, Vec<crate::corpus::TripletJudgment>) {
        let c = synth_dataset(&SynthConfig {
            n_items: n,
            ..SynthConfig::default()
        })
        .unwrap();
        (synthetic_descriptions(&c.latents), c.triplets)
    }

    #[test]
    fn mock_reproduces_planted_labels_and_caches() {
        let (desc, truth) = setup(6);
        let server = MockServer::start(MockMode::Latent).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = OracleConfig {
            endpoint: server.endpoint(),
            cache_dir: Some(dir.path().to_path_buf()),
            max_parallel: 4,
            ..OracleConfig::default()
        };
        let queries = plan_queries(&desc, &cfg).unwrap();
        let run = run_oracle_blocking(&desc, &queries, &cfg).unwrap();
        assert_eq!(run.judgments.len(), truth.len());
        for (a, b) in run.judgments.iter().zip(&truth) {
            assert_eq!((&a.anchor, &a.left, &a.right, a.choice), (&b.anchor, &b.left, &b.right, b.choice));
        }
        assert_eq!(server.requests(), queries.len());
        let again = run_oracle_blocking(&desc, &queries, &cfg).unwrap();
        assert_eq!(server.requests(), queries.len());
        assert_eq!(again.cache_hits, queries.len());
        assert_eq!(again.judgments, run.judgments);
    }

    #[test]
    fn garbage_is_retried_once_then_skipped() {
        let (desc, _) = setup(4);
        let server = MockServer::start(MockMode::Garbage).unwrap();
        let cfg = OracleConfig {
            endpoint: server.endpoint(),
            ..OracleConfig::default()
        };
        let queries = plan_queries(&desc, &cfg).unwrap();
        let run = run_oracle_blocking(&desc, &queries, &cfg).unwrap();
        assert!(run.judgments.iter().all(|j| j.choice == Choice::Skipped));
        assert_eq!(run.skipped, queries.len());
        assert_eq!(server.requests(), 2 * queries.len());
    }

    #[test]
    fn auth_failure_is_remote_error() {
        let (desc, _) = setup(3);
        let server = MockServer::start(MockMode::Reject(401)).unwrap();
        let cfg = OracleConfig {
            endpoint: server.endpoint(),
            ..OracleConfig::default()
        };
        let queries = plan_queries(&desc, &cfg).unwrap();
        let err = run_oracle_blocking(&desc, &queries, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("401"));
    }

    #[test]
    fn server_errors_are_retried() {
        let (desc, _) = setup(3);
        let server = MockServer::start(MockMode::Reject(503)).unwrap();
        let cfg = OracleConfig {
            endpoint: server.endpoint(),
            retry_limit: 2,
            max_parallel: 1,
            ..OracleConfig::default()
        };
        let queries = plan_queries(&desc, &cfg).unwrap();
        assert!(run_oracle_blocking(&desc, &queries[..1], &cfg).is_err());
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn missing_description() {
        let (desc, _) = setup(4);
        let cfg = OracleConfig::default();
        let queries = plan_queries(&desc, &cfg).unwrap();
        assert!(matches!(
            run_oracle_blocking(&desc[..3], &queries, &cfg),
            Err(crate::Error::UnknownId(_))
        ));
    }
}

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use super::{
    AblateArgs, Command, DistancesArgs, EmbedArgs, Format, FuseArgs, MetricsArgs, NeighborsArgs, OracleArgs,
    PoolCommand, PoolTrainArgs, ServeArgs, SoeCommand, SoeFitArgs, SynthArgs,
};
use crate::ablation::{run_ablation, AblationConfig};
use crate::corpus::{
    load_feature_file, looks_like_embedding, pairwise_distances, read_id_list, read_judgments, save_pairs,
    synth_dataset, write_id_list, write_judgments, DistanceMatrix, EmbeddingSet, FeatureFile, ItemId, Metric,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::fusion::{farthest_neighbors, fuse, nearest_neighbors, FusionConfig};
use crate::metrics::evaluate_report;
use crate::oracle::{
    api_key_from_env, plan_queries, read_descriptions, run_oracle_blocking, synthetic_descriptions,
    write_descriptions, MockMode, MockServer, OracleConfig, DEFAULT_PERSONA,
};
use crate::pool::{embed_containers, train_head, HeadParams, SslConfig};
use crate::service::{read_tasks, system_clock, AppState, Store};
use crate::soe::{fit_judgments, holdout_split, SoeConfig};

pub(super) fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Oracle(a) => oracle(a),
        Command::Soe(SoeCommand::Fit(a)) => soe_fit(a),
        Command::Pool(PoolCommand::Train(a)) => pool_train(a),
        Command::Embed(a) => embed(a),
        Command::Distances(a) => distances(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Neighbors(a) => neighbors(a),
        Command::Serve(a) => serve(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn token_cap(cap: usize) -> Option<usize> {
    (cap > 0).then_some(cap)
}

/// Reads a CSV that is either an embedding (converted with `metric`) or a distance matrix.
fn load_distances(path: &Path, metric: Metric) -> Result<DistanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if looks_like_embedding(&text) {
        pairwise_distances(&EmbeddingSet::parse_csv(&text, path)?, metric)
    } else {
        DistanceMatrix::parse_csv(&text, path)
    }
}

fn synth(a: SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        n_items: a.n_items,
        latent_dim: a.latent_dim,
        noise_sd: a.noise_sd,
        seed: a.seed,
        channels: a.channels,
        height: a.height,
        width: a.width,
        wounds_per_item: a.wounds_per_item,
        triplet_fraction: a.triplet_fraction,
        ..SynthConfig::default()
    };
    let corpus = synth_dataset(&cfg)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_id_list(&dir.join("ids.txt"), corpus.latents.ids())?;
    corpus.latents.save(&dir.join("latents.csv"))?;
    save_pairs(&dir.join("views.bin"), &corpus.pairs)?;
    write_judgments(&dir.join("triplets.jsonl"), &corpus.triplets)?;
    write_descriptions(&dir.join("descriptions.jsonl"), &synthetic_descriptions(&corpus.latents))?;
    eprintln!(
        "wrote {} items, {} view pairs, {} triplets to {}",
        corpus.latents.len(),
        corpus.pairs.len(),
        corpus.triplets.len(),
        dir.display()
    );
    Ok(0)
}

fn oracle(a: OracleArgs) -> Result<i32> {
    let descriptions = read_descriptions(&a.descriptions)?;
    let persona = match &a.persona_file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => DEFAULT_PERSONA.to_string(),
    };
    if persona.trim().is_empty() {
        eprintln!("warning: persona is empty");
    }
    let mock = if a.mock {
        Some(MockServer::start(MockMode::Latent)?)
    } else {
        None
    };
    let cfg = OracleConfig {
        endpoint: mock.as_ref().map_or(a.endpoint, |m| m.endpoint()),
        model: a.model,
        persona,
        max_parallel: a.max_parallel,
        retry_limit: a.retry_limit,
        temperature: a.temperature,
        budget_fraction: a.budget,
        seed: a.seed,
        cache_dir: a.cache_dir,
        api_key: api_key_from_env(),
        timeout: Duration::from_secs(a.timeout_secs),
    };
    cfg.validate()?;
    let queries = plan_queries(&descriptions, &cfg)?;
    let run = run_oracle_blocking(&descriptions, &queries, &cfg)?;
    write_judgments(&a.out, &run.judgments)?;
    eprintln!(
        "{} judgments ({} skipped), {} requests, {} cache hits -> {}",
        run.judgments.len(),
        run.skipped,
        run.requests,
        run.cache_hits,
        a.out.display()
    );
    if run.skipped > 0 {
        eprintln!("error: {} comparisons had no usable answer and were recorded as skipped", run.skipped);
        return Ok(3);
    }
    Ok(0)
}

fn soe_fit(a: SoeFitArgs) -> Result<i32> {
    let judgments = read_judgments(&a.triplets)?;
    let ids = read_id_list(&a.items)?;
    let cfg = SoeConfig {
        dim: a.dim,
        margin: a.margin,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        amsgrad: a.amsgrad,
        anchor_balanced: a.anchor_balanced,
        init_sd: a.init_sd,
        seed: a.seed,
    };
    let (train, test) = holdout_split(&judgments, a.holdout, a.seed)?;
    let out = fit_judgments(&train, Some(&test), &ids, &cfg)?;
    out.embedding.save(&a.out)?;
    let summary = serde_json::json!({
        "n_train": out.n_train,
        "n_heldout": test.len(),
        "n_skipped": out.n_skipped,
        "final_loss": out.loss_history.last(),
        "heldout_balanced_agreement": out.heldout.map(|h| h.balanced),
        "heldout_micro_agreement": out.heldout.map(|h| h.micro),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(0)
}

fn pool_train(a: PoolTrainArgs) -> Result<i32> {
    let pairs = match load_feature_file(&a.views)? {
        FeatureFile::Pairs(p) => p,
        FeatureFile::Containers(_) => {
            return Err(Error::format(&a.views, None, "expected a paired-view feature file"));
        }
    };
    let preset = SslConfig::for_loss(a.loss);
    let cfg = SslConfig {
        loss_kind: a.loss,
        lambda: a.lambda,
        mu: a.mu,
        nu: a.nu,
        gamma: a.gamma,
        eps_var: a.eps_var,
        eps_ln: a.eps_ln,
        margin: a.margin,
        temperature: a.temperature,
        epochs: a.epochs,
        batch_size: a.batch_size.unwrap_or(preset.batch_size),
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        lr_schedule: a.lr_schedule,
        seed: a.seed,
        pooling: a.pooling,
        hidden: a.hidden,
        dim: a.dim,
        token_cap: token_cap(a.token_cap),
    };
    let trained = train_head(&pairs, &cfg)?;
    trained.params.save(&a.out)?;
    if let Some(path) = &a.loss_history {
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in trained.loss_history.iter().enumerate() {
            let _ = writeln!(csv, "{},{l}", e + 1);
        }
        write_text(path, &csv)?;
    }
    eprintln!(
        "trained {} head for {} epochs, final loss {:.6} -> {}",
        cfg.loss_kind,
        cfg.epochs,
        trained.loss_history.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(0)
}

fn embed(a: EmbedArgs) -> Result<i32> {
    let containers = match load_feature_file(&a.features)? {
        FeatureFile::Containers(c) => c,
        FeatureFile::Pairs(p) => p.into_iter().map(|p| p.view_a).collect(),
    };
    let head = HeadParams::load(&a.head)?;
    let e = embed_containers(&containers, &head, token_cap(a.token_cap), a.seed)?;
    e.save(&a.out)?;
    Ok(0)
}

fn distances(a: DistancesArgs) -> Result<i32> {
    let e = EmbeddingSet::load(&a.embeddings)?;
    pairwise_distances(&e, a.metric)?.save(&a.out)?;
    Ok(0)
}

fn fuse_cmd(a: FuseArgs) -> Result<i32> {
    let v = load_distances(&a.vision, a.metric)?;
    let t = load_distances(&a.text, a.metric)?;
    let cfg = FusionConfig {
        alpha: a.alpha,
        mode: a.mode,
    };
    fuse(&v, &t, &cfg)?.save(&a.out)?;
    Ok(0)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn metrics(a: MetricsArgs) -> Result<i32> {
    let d = match (&a.embeddings, &a.distances) {
        (Some(e), _) => pairwise_distances(&EmbeddingSet::load(e)?, a.metric)?,
        (None, Some(d)) => DistanceMatrix::load(d)?,
        (None, None) => return Err(Error::Config("pass --embeddings or --distances".into())),
    };
    let judgments = read_judgments(&a.judgments)?;
    let report = evaluate_report(&d, &judgments)?;
    let text = match a.format {
        Format::Json => report.to_json(),
        Format::Table => report.to_table(),
    };
    emit(&text, a.out.as_deref())?;
    Ok(0)
}

fn neighbors(a: NeighborsArgs) -> Result<i32> {
    let d = load_distances(&a.input, a.metric)?;
    let id = ItemId::new(a.item)?;
    let list = if a.farthest {
        farthest_neighbors(&d, &id, a.k)?
    } else {
        nearest_neighbors(&d, &id, a.k)?
    };
    let text = match a.format {
        Format::Json => {
            let rows: Vec<_> = list
                .iter()
                .enumerate()
                .map(|(r, n)| serde_json::json!({"rank": r + 1, "id": n.id, "distance": n.distance}))
                .collect();
            serde_json::to_string_pretty(&rows).expect("neighbors serialize")
        }
        Format::Table => {
            let mut t = format!("query {id}\nrank  id{}distance\n", " ".repeat(14));
            for (r, n) in list.iter().enumerate() {
                let _ = writeln!(t, "{:<4}  {:<16}{:.6}", r + 1, n.id.as_str(), n.distance);
            }
            t
        }
    };
    emit(&text, None)?;
    Ok(0)
}

fn serve(a: ServeArgs) -> Result<i32> {
    if a.lease_minutes <= 0 {
        return Err(Error::Config(format!("lease-minutes must be positive, got {}", a.lease_minutes)));
    }
    let tasks = read_tasks(&a.tasks)?;
    let n = tasks.len();
    let store = Store::open(tasks, &a.log, chrono::Duration::minutes(a.lease_minutes))?;
    let state = AppState::new(store, a.assets, system_clock());
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {}: {e}", a.bind)))?;
        eprintln!("serving {n} triplets on http://{}", a.bind);
        crate::service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(&a.log, e))
    })?;
    Ok(0)
}

fn ablate(a: AblateArgs) -> Result<i32> {
    if !a.synthetic {
        return Err(Error::Config(
            "ablate needs --synthetic (sweeps run on a planted corpus)".into(),
        ));
    }
    let cfg = AblationConfig {
        synth: SynthConfig {
            n_items: a.n_items,
            latent_dim: a.latent_dim,
            noise_sd: a.noise_sd,
            ..SynthConfig::default()
        },
        soe: SoeConfig {
            dim: a.dim,
            learning_rate: a.lr,
            batch_size: a.batch_size,
            epochs: a.epochs,
            ..SoeConfig::default()
        },
        dims: a.dims,
        budgets: a.budgets,
        repeats: a.repeats,
        holdout_fraction: a.holdout,
        seed: a.seed,
    };
    let report = run_ablation(&cfg)?;
    let text = match a.format {
        Format::Json => report.to_json(),
        Format::Table => report.to_table(),
    };
    emit(&text, a.out.as_deref())?;
    Ok(0)
}

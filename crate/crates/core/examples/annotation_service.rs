//! Runs the annotation service on a local port and drives one annotator session
//! over HTTP: judge, skip, undo, then export and score the judgments.

use serde_json::{json, Value};
use triderm::corpus::{pairwise_distances, parse_judgments, synth_dataset, Metric, SynthConfig};
use triderm::metrics::evaluate_report;
use triderm::service::{parse_tasks, serve, system_clock, AppState, Store};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth_dataset(&SynthConfig {
        n_items: 10,
        triplet_fraction: 0.05,
        ..SynthConfig::default()
    })?;
    let task_text = triderm::corpus::judgments_to_jsonl(&corpus.triplets);
    let tasks = parse_tasks(&task_text, "tasks.jsonl".as_ref())?;
    let dir = tempfile::tempdir()?;
    let store = Store::open(tasks, &dir.path().join("log.jsonl"), chrono::Duration::minutes(10))?;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, AppState::new(store, None, system_clock()), async {
        let _ = stopped.await;
    }));

    let http = reqwest::Client::new();
    for choice in ["left", "right", "skip", "left"] {
        let next: Value = http
            .get(format!("{base}/api/tasks/next?annotator=demo&session=s1"))
            .send()
            .await?
            .json()
            .await?;
        let id = next["task"]["triplet_id"].as_str().unwrap_or_default().to_string();
        let ack: Value = http
            .post(format!("{base}/api/judgments"))
            .json(&json!({"triplet_id": id, "choice": choice, "session": "s1"}))
            .send()
            .await?
            .json()
            .await?;
        println!("{id}: {choice:<5} -> {}/{} done", ack["completed"], ack["total"]);
    }
    let undone: Value = http
        .post(format!("{base}/api/judgments/undo"))
        .json(&json!({"session": "s1"}))
        .send()
        .await?
        .json()
        .await?;
    println!("undid {}", undone["triplet_id"]);
    let progress: Value = http.get(format!("{base}/api/progress?annotator=demo")).send().await?.json().await?;
    println!("progress {progress}");

    let export = http.get(format!("{base}/api/export")).send().await?.text().await?;
    let judgments = parse_judgments(&export, "export.jsonl".as_ref())?;
    let report = evaluate_report(&pairwise_distances(&corpus.latents, Metric::Euclidean)?, &judgments)?;
    println!("exported {} judgments; scored {} with {} skipped", judgments.len(), report.n_triplets, report.n_skipped);

    let _ = stop.send(());
    server.await??;
    Ok(())
}

//! Batched chat-completion querying with bounded parallelism, retries, and caching.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde_json::{json, Value};

use super::cache::{cache_key, CacheEntry, ResponseCache};
use super::prompt::{build_prompt, parse_choice, Answer, CaseDescription, Prompt, DEFAULT_PERSONA};
use crate::corpus::{sample_triplet_space, Choice, ItemId, Source, TripletJudgment};
use crate::error::{Error, Result};

pub const API_KEY_VARS: [&str; 2] = ["TRIDERM_API_KEY", "OPENAI_API_KEY"];

/// First non-empty API key among [`API_KEY_VARS`].
pub fn api_key_from_env() -> Option<String> {
    API_KEY_VARS
        .iter()
        .filter_map(|v| std::env::var(v).ok())
        .find(|k| !k.trim().is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub persona: String,
    pub max_parallel: usize,
    /// Extra attempts after a transport failure or retryable HTTP status.
    pub retry_limit: usize,
    pub temperature: f64,
    pub budget_fraction: f64,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-oss-120b".into(),
            persona: DEFAULT_PERSONA.into(),
            max_parallel: 8,
            retry_limit: 3,
            temperature: 0.0,
            budget_fraction: 1.0,
            seed: 0,
            cache_dir: None,
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget fraction must lie in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        reqwest::Url::parse(&self.endpoint)
            .map_err(|e| Error::Config(format!("endpoint {:?} is not a URL: {e}", self.endpoint)))?;
        Ok(())
    }
}

/// One comparison to ask: is `anchor` closer to `left` (j) or `right` (k)?
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleQuery {
    pub anchor: ItemId,
    pub left: ItemId,
    pub right: ItemId,
}

/// Budgeted sample of the triplet space over the description order.
pub fn plan_queries(descriptions: &[CaseDescription], cfg: &OracleConfig) -> Result<Vec<OracleQuery>> {
    let space = sample_triplet_space(descriptions.len(), cfg.budget_fraction, cfg.seed)?;
    Ok(space
        .into_iter()
        .map(|t| OracleQuery {
            anchor: descriptions[t.anchor].id.clone(),
            left: descriptions[t.left].id.clone(),
            right: descriptions[t.right].id.clone(),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    /// One judgment per query, in query order.
    pub judgments: Vec<TripletJudgment>,
    pub requests: usize,
    pub cache_hits: usize,
    pub skipped: usize,
}

struct Ctx<'a> {
    cfg: &'a OracleConfig,
    http: reqwest::Client,
    cache: Option<ResponseCache>,
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

/// Asks the model every query. Output order follows `queries` whatever the
/// completion order. A response without a usable answer is retried once, then
/// recorded as skipped. Transport failures abort the run after `retry_limit`
/// retries; finished queries stay in the cache so a rerun resumes.
pub async fn run_oracle(descriptions: &[CaseDescription], queries: &[OracleQuery], cfg: &OracleConfig) -> Result<OracleRun> {
    cfg.validate()?;
    let lookup: std::collections::HashMap<&ItemId, &CaseDescription> =
        descriptions.iter().map(|d| (&d.id, d)).collect();
    let find = |id: &ItemId| {
        lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(format!("{id} (no description)")))
    };
    let prompts = queries
        .iter()
        .map(|q| Ok(build_prompt(find(&q.anchor)?, find(&q.left)?, find(&q.right)?, &cfg.persona)))
        .collect::<Result<Vec<_>>>()?;

    let http = reqwest::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| Error::Remote(format!("cannot build HTTP client: {e}")))?;
    let ctx = Ctx {
        cfg,
        http,
        cache: cfg.cache_dir.as_deref().map(ResponseCache::open).transpose()?,
        requests: AtomicUsize::new(0),
        cache_hits: AtomicUsize::new(0),
    };
    let answers: Vec<(Answer, DateTime<Utc>)> = stream::iter(prompts.iter().map(|p| answer(&ctx, p)))
        .buffered(cfg.max_parallel)
        .try_collect()
        .await?;

    let mut skipped = 0;
    let judgments = queries
        .iter()
        .zip(answers)
        .map(|(q, (a, at))| {
            let choice = match a {
                Answer::Left => Choice::Left,
                Answer::Right => Choice::Right,
                Answer::Unparseable => {
                    skipped += 1;
                    Choice::Skipped
                }
            };
            TripletJudgment::new(
                q.anchor.clone(),
                q.left.clone(),
                q.right.clone(),
                choice,
                Source::Oracle,
                Some(cfg.model.clone()),
                at,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleRun {
        judgments,
        requests: ctx.requests.into_inner(),
        cache_hits: ctx.cache_hits.into_inner(),
        skipped,
    })
}

/// Runs [`run_oracle`] on a fresh multi-threaded runtime.
pub fn run_oracle_blocking(descriptions: &[CaseDescription], queries: &[OracleQuery], cfg: &OracleConfig) -> Result<OracleRun> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Remote(format!("cannot start async runtime: {e}")))?
        .block_on(run_oracle(descriptions, queries, cfg))
}

async fn answer(ctx: &Ctx<'_>, prompt: &Prompt) -> Result<(Answer, DateTime<Utc>)> {
    let key = cache_key(&ctx.cfg.model, &prompt.cache_text());
    let mut entry = match &ctx.cache {
        Some(c) => c.get(&key)?,
        None => None,
    };
    if entry.is_some() {
        ctx.cache_hits.fetch_add(1, Ordering::Relaxed);
    }
    loop {
        if let Some(e) = &entry {
            let parsed = e.responses.last().map_or(Answer::Unparseable, |r| parse_choice(r));
            if parsed != Answer::Unparseable || e.responses.len() >= 2 {
                return Ok((parsed, e.received_at));
            }
        }
        let response = request(ctx, prompt).await?;
        let e = entry.get_or_insert_with(|| CacheEntry {
            model: ctx.cfg.model.clone(),
            responses: Vec::new(),
            received_at: Utc::now(),
        });
        e.responses.push(response);
        if let Some(c) = &ctx.cache {
            c.put(&key, e)?;
        }
    }
}

async fn request(ctx: &Ctx<'_>, prompt: &Prompt) -> Result<String> {
    let body = json!({
        "model": ctx.cfg.model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": ctx.cfg.temperature,
    });
    let mut attempt = 0;
    loop {
        ctx.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = ctx.http.post(&ctx.cfg.endpoint).json(&body);
        if let Some(key) = &ctx.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let failure = match req.send().await {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let v: Value = resp
                        .json()
                        .await
                        .map_err(|e| Error::Remote(format!("{}: unreadable response body: {e}", ctx.cfg.endpoint)))?;
                    return v["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| {
                            Error::Remote(format!(
                                "{}: response has no choices[0].message.content",
                                ctx.cfg.endpoint
                            ))
                        });
                }
                let detail = resp.text().await.unwrap_or_default();
                let msg = format!("{} returned HTTP {status}: {}", ctx.cfg.endpoint, detail.trim());
                if !(status.is_server_error() || status.as_u16() == 429) {
                    return Err(Error::Remote(msg));
                }
                msg
            }
            Err(e) => format!("{}: {e}", ctx.cfg.endpoint),
        };
        if attempt >= ctx.cfg.retry_limit {
            return Err(Error::Remote(format!("{failure} (after {} attempts)", attempt + 1)));
        }
        tokio::time::sleep(Duration::from_millis(100 << attempt.min(6))).await;
        attempt += 1;
    }
}

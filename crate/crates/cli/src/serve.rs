use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use embodia_core::review::{Captioner, Store, StoreConfig};
use embodia_review_server::{bind, serve_until, termination, AppState, HttpCaptioner};

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on [default: 127.0.0.1].
    #[arg(long, env = "EMBODIA_HOST")]
    pub host: Option<IpAddr>,
    /// Port; 0 picks a free one [default: 8080].
    #[arg(long, env = "EMBODIA_PORT")]
    pub port: Option<u16>,
    /// Directory for the event log and snapshots [default: in memory only].
    #[arg(long, env = "EMBODIA_STORE_DIR", value_name = "DIR")]
    pub store_dir: Option<PathBuf>,
    /// Caption service endpoint; relabeling is disabled without one.
    #[arg(long, env = "EMBODIA_CAPTIONER_URL", value_name = "URL")]
    pub captioner_url: Option<String>,
    /// Caption request timeout in seconds [default: 30].
    #[arg(long, env = "EMBODIA_CAPTIONER_TIMEOUT")]
    pub captioner_timeout: Option<f64>,
    /// Retries after an unreachable caption service [default: 2].
    #[arg(long, env = "EMBODIA_CAPTIONER_RETRIES")]
    pub captioner_retries: Option<u32>,
    /// Shared bearer token required by every API route except /health.
    #[arg(long, env = "EMBODIA_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Built review UI to serve as static files.
    #[arg(long, env = "EMBODIA_UI_DIR", value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
    /// Events between snapshots; 0 disables periodic snapshots [default: 200].
    #[arg(long, env = "EMBODIA_SNAPSHOT_EVERY")]
    pub snapshot_every: Option<u64>,
}

pub fn run(run: &RunConfig, args: &ServeArgs) -> Result<()> {
    let f = &run.file.review;
    let host = match args.host {
        Some(h) => h,
        None => f.host.as_deref().unwrap_or("127.0.0.1").parse().context("invalid host")?,
    };
    let addr = SocketAddr::new(host, args.port.or(f.port).unwrap_or(8080));
    let ui_dir = args.ui_dir.clone().or_else(|| f.ui_dir.clone());
    if let Some(d) = &ui_dir {
        if !d.is_dir() {
            bail!("UI directory {} does not exist", d.display());
        }
    }
    let store = Store::open(StoreConfig {
        dir: args.store_dir.clone().or_else(|| f.store_dir.clone()),
        seed: run.seed,
        snapshot_every: args.snapshot_every.or(f.snapshot_every).unwrap_or(200),
        record_time: true,
    })
    .context("opening the review store")?;
    let captioner = args.captioner_url.clone().or_else(|| f.captioner_url.clone()).map(|url| {
        let timeout = args.captioner_timeout.or(f.captioner_timeout_s).unwrap_or(30.0);
        let retries = args.captioner_retries.or(f.captioner_retries).unwrap_or(2);
        Arc::new(HttpCaptioner::new(url, Duration::from_secs_f64(timeout), retries)) as Arc<dyn Captioner>
    });
    let token = args.token.clone().or_else(|| f.token.clone());
    let app = AppState::new(store, captioner, token);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve_until(listener, app, ui_dir, termination()).await?;
        Ok(())
    })
}

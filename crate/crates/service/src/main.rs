use std::path::PathBuf;

use clap::Parser;
use roomrec_service::ServiceConfig;
use tracing_subscriber::EnvFilter;

/// Room recognition service.
#[derive(Parser)]
#[command(name = "roomrec-server", version)]
struct Args {
    /// JSON config file; `ROOMREC_*` environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .json()
        .init();
    let args = Args::parse();
    let mut cfg = ServiceConfig::load(args.config.as_deref())?;
    if let Some(b) = args.bind {
        cfg.bind = b;
    }
    if let Some(d) = args.data_dir {
        cfg.data_dir = d;
    }
    let server = roomrec_service::start(cfg).await?;
    tracing::info!(url = %server.url(), "listening");
    tokio::signal::ctrl_c().await?;
    server.abort();
    Ok(())
}

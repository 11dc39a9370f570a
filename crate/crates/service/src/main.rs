use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use log::info;

use shdfseg_service::store::Store;
use shdfseg_service::{router, ServiceConfig};

/// HTTP service for interactive mesh segmentation.
#[derive(Debug, Parser)]
#[command(name = "shdfseg-serve", version)]
struct Args {
    #[arg(long, env = "SEG_BIND", default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[arg(long, env = "SEG_PORT", default_value_t = 8080)]
    port: u16,
    /// Mirror meshes and computed artifacts here; reloaded on start.
    #[arg(long, env = "SEG_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Largest accepted request body in bytes.
    #[arg(long, env = "SEG_UPLOAD_LIMIT", default_value_t = 256 << 20)]
    upload_limit: usize,
    /// Model served for `"source": "model"` requests.
    #[arg(long, env = "SEG_MODEL")]
    model: Option<PathBuf>,
    /// Allowed CORS origin (default: any).
    #[arg(long, env = "SEG_CORS_ORIGIN")]
    cors_origin: Option<String>,
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEG_LOG", "info")).init();
    let args = Args::parse();
    if let Some(m) = &args.model {
        anyhow::ensure!(m.is_file(), "model {} does not exist", m.display());
    }
    let store = match args.data_dir {
        Some(dir) => Store::persistent(dir)?,
        None => Store::in_memory(),
    };
    let config = ServiceConfig {
        upload_limit: args.upload_limit,
        model: args.model,
        cors_origin: args.cors_origin,
    };
    let app = router(store, config)?;
    let addr = SocketAddr::new(args.bind, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

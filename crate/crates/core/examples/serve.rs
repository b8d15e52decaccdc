//! Serves the session API for one checkpoint.
//!
//! cargo run --release --example serve -- <checkpoint> [port=8080]
//!
//! curl -X POST localhost:8080/api/sessions -H 'content-type: application/json' -d '{"seed": 1}'
//! curl -X POST localhost:8080/api/sessions/s1/select -H 'content-type: application/json' -d '{"parent_a": 1, "parent_b": 2}'

use std::collections::BTreeMap;

use diffusion_crossover::dataio;
use diffusion_crossover::server::{serve, AppState, ModelEntry, ServerConfig};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: serve <checkpoint> [port]");
        std::process::exit(2);
    };
    let port: u16 = args.get(1).map_or(8080, |s| s.parse().expect("port"));
    let ck = dataio::load_checkpoint(ckpt).map_err(std::io::Error::other)?;
    let steps = ck.schedule.steps();
    let mut models = BTreeMap::new();
    models.insert(
        "desk".to_string(),
        ModelEntry {
            model: ck.model,
            schedule: ck.schedule,
        },
    );
    let config = ServerConfig {
        default_t_interp0: steps / 10,
        default_step: steps / 10,
        ..ServerConfig::default()
    };
    serve(([127, 0, 0, 1], port).into(), AppState::new(config, models)).await
}

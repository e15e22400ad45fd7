use std::process::ExitCode;

use genlarp_server::{router, App, AppConfig};

#[tokio::main]
async fn main() -> ExitCode {
    let config = match AppConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("genlarp-server: {e}");
            return ExitCode::from(2);
        }
    };
    let app = match App::new(&config) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("genlarp-server: {e}");
            return ExitCode::from(1);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&config.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("genlarp-server: cannot bind {}: {e}", config.bind);
            return ExitCode::from(1);
        }
    };
    eprintln!(
        "genlarp-server listening on {} (mode {:?}, data {})",
        config.bind,
        config.provider.mode,
        config.data_dir.display()
    );
    if let Err(e) = axum::serve(listener, router(app)).await {
        eprintln!("genlarp-server: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

use clap::Parser;
use quicshell::cli::{run_client, ClientCli, EXIT_CLIENT_FAILURE};
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = ClientCli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("QUICSHELL_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let invocation = match cli.into_invocation() {
        Ok(i) => i,
        Err(e) => {
            eprintln!("quicshell: {e}");
            std::process::exit(EXIT_CLIENT_FAILURE);
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("quicshell: cannot start runtime: {e}");
            std::process::exit(EXIT_CLIENT_FAILURE);
        }
    };
    let code = rt.block_on(run_client(invocation));
    // stdin reads block a runtime thread; do not wait for them
    rt.shutdown_background();
    std::process::exit(code);
}

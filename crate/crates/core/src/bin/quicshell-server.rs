use std::io::{IsTerminal, Read};
use std::process::ExitCode;

use clap::Parser;
use quicshell::cli::{
    generate_certificate, hash_password_line, prepare_server, run_server, ServerCli, ServerCommand, ServerConfig,
};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = ServerCli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("QUICSHELL_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        ServerCommand::Run { config } => tokio::runtime::Runtime::new()
            .map_err(Into::into)
            .and_then(|rt| rt.block_on(run_server(&config))),
        ServerCommand::Check { config } => tokio::runtime::Runtime::new()
            .map_err(Into::into)
            .and_then(|rt| {
                rt.block_on(async {
                    let c = ServerConfig::load(&config)?;
                    prepare_server(&c)?;
                    println!("{}: ok", config.display());
                    Ok(())
                })
            }),
        ServerCommand::GenCert { out_dir, names } => generate_certificate(&out_dir, &names).map(|(cert, key, fp)| {
            println!("wrote {} and {}", cert.display(), key.display());
            println!("sha256:{fp}");
        }),
        ServerCommand::HashPassword => read_password().map(|p| println!("{}", hash_password_line(&p))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quicshell-server: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_password() -> Result<String, quicshell::cli::CliError> {
    if std::io::stdin().is_terminal() {
        return rpassword::prompt_password("password: ").map_err(quicshell::cli::CliError::Password);
    }
    let mut s = String::new();
    std::io::stdin().read_to_string(&mut s)?;
    Ok(s.trim_end_matches(['\r', '\n']).to_string())
}

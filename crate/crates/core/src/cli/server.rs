use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use tokio::signal::unix::{signal, SignalKind};

use super::config::{ConfigError, ServerConfig};
use super::CliError;
use crate::auth::{AuthPolicy, Authenticator, AuthScheme, IdentityStore, PasswordHash, SystemClock};
use crate::exec::ExecOptions;
use crate::service::Service;
use crate::session::{Server, ServerOptions, TlsIdentity};

/// A bound server plus what the readiness line reports.
pub struct PreparedServer {
    pub server: Arc<Server>,
    pub fingerprint: String,
}

/// Loads everything the configuration names and binds the listener.
pub fn prepare_server(config: &ServerConfig) -> Result<PreparedServer, CliError> {
    for (key, path) in [("cert", &config.cert), ("key", &config.key), ("identity_store", &config.identity_store)] {
        if !path.is_file() {
            return Err(config.error_at(key, format!("{} does not exist or is not a file", path.display())).into());
        }
    }
    let identity = TlsIdentity::load(&config.cert, &config.key).map_err(|e| config.error_at("cert", e.to_string()))?;
    let store = IdentityStore::load(&config.identity_store).map_err(|e| ConfigError {
        file: config.identity_store.display().to_string(),
        line: (e.line > 0).then_some(e.line),
        message: e.message,
    })?;
    if store.is_empty() {
        tracing::warn!(store = %config.identity_store.display(), "identity store has no users; every request will be refused");
    }
    if config.schemes.contains(&AuthScheme::Bearer) && config.oidc_audience.is_none() && !store.oidc_issuers().is_empty() {
        tracing::warn!("identity store lists OIDC identities but oidc_audience is unset; OIDC logins will be refused");
    }
    let fingerprint = identity.fingerprint();
    let mut options = ServerOptions::new(config.listen, identity, &config.url_path);
    options.max_channels = config.max_channels;
    let policy = AuthPolicy {
        schemes: config.schemes.clone(),
        oidc_audience: config.oidc_audience.clone(),
    };
    let auth = Arc::new(Authenticator::new(Arc::new(store), policy, Arc::new(SystemClock)));
    let service = Service {
        exec: ExecOptions {
            privilege: config.mode,
            shell: config.shell.clone(),
        },
        allow_forwarding: config.allow_forwarding,
    };
    let server = Server::bind(options, auth, Arc::new(service)).map_err(|e| config.error_at("listen", e.to_string()))?;
    Ok(PreparedServer {
        server: Arc::new(server),
        fingerprint,
    })
}

/// Serves until SIGTERM or SIGINT, then closes every connection.
pub async fn run_server(config_path: &Path) -> Result<(), CliError> {
    let config = ServerConfig::load(config_path)?;
    let prepared = prepare_server(&config)?;
    let server = prepared.server.clone();
    let addr = server.local_addr()?;
    let mut term = signal(SignalKind::terminate())?;
    let mut int = signal(SignalKind::interrupt())?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "quicshell-server ready on {addr} certificate sha256:{}", prepared.fingerprint)?;
        out.flush()?;
    }
    tracing::info!(%addr, mode = ?config.mode, "listening");
    let accept = {
        let server = server.clone();
        tokio::spawn(async move { server.run().await })
    };
    tokio::select! {
        _ = term.recv() => tracing::info!("SIGTERM received, shutting down"),
        _ = int.recv() => tracing::info!("SIGINT received, shutting down"),
    }
    // Connections get a transport-level close; give peers a moment to see it.
    let _ = tokio::time::timeout(Duration::from_millis(1500), server.shutdown()).await;
    accept.abort();
    Ok(())
}

/// Writes `cert.pem` and `key.pem` (mode 0600) into `dir` and returns
/// the certificate fingerprint.
pub fn generate_certificate(dir: &Path, names: &[String]) -> Result<(PathBuf, PathBuf, String), CliError> {
    use std::os::unix::fs::OpenOptionsExt;
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let id = TlsIdentity::self_signed(&names)?;
    std::fs::create_dir_all(dir)?;
    let cert = dir.join("cert.pem");
    let key = dir.join("key.pem");
    std::fs::write(&cert, id.cert_pem())?;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(&key)?;
    f.write_all(id.key_pem().as_bytes())?;
    Ok((cert, key, id.fingerprint()))
}

/// Identity store line for `password`.
pub fn hash_password_line(password: &str) -> String {
    format!("password-hash {}", PasswordHash::create(password))
}

//! Command-line front ends: the `quicshell` client and `quicshell-server`.

mod client;
pub mod config;
mod server;
pub mod terminal;

pub use client::{run_client, EXIT_CLIENT_FAILURE};
pub use config::{ConfigError, ServerConfig};
pub use server::{generate_certificate, hash_password_line, prepare_server, run_server, PreparedServer};

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::auth::{ClientKey, Credential};
use crate::forward::ForwardingSpec;
use crate::session::{ClientOptions, Destination, TransportOptions, Trust};

pub const TOKEN_ENV: &str = "QUICSHELL_TOKEN";
pub const PASSWORD_ENV: &str = "QUICSHELL_PASSWORD";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read token file {path}: {source}")]
    TokenFile {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot load identity {path}: {message}")]
    Identity { path: String, message: String },
    #[error("cannot read password: {0}")]
    Password(std::io::Error),
    #[error("{0}")]
    Tls(#[from] crate::session::TlsError),
    #[error("{0}")]
    Session(#[from] crate::session::SessionError),
    #[error("{0}")]
    Channel(#[from] crate::session::ChannelError),
    #[error("{0}")]
    Forward(#[from] crate::forward::ForwardError),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Where the client's credential comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CredentialSource {
    /// A password, or `None` to prompt on the terminal.
    Password(Option<String>),
    IdentityFile(PathBuf),
    /// An OIDC ID token.
    Token(String),
}

/// Raw inputs for [`resolve_credential_source`].
#[derive(Debug, Clone, Default)]
pub struct CredentialInputs {
    pub token_flag: Option<String>,
    pub token_env: Option<String>,
    pub token_file: Option<PathBuf>,
    pub identity: Option<PathBuf>,
    pub password_env: Option<String>,
}

impl CredentialInputs {
    pub fn from_env(token_flag: Option<String>, token_file: Option<PathBuf>, identity: Option<PathBuf>) -> Self {
        CredentialInputs {
            token_flag,
            token_env: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            token_file,
            identity,
            password_env: std::env::var(PASSWORD_ENV).ok(),
        }
    }
}

/// Picks exactly one credential source. An identity file is exclusive
/// with the token flags. Tokens go flag, then environment, then file.
/// Without any of those the password is used (environment or prompt).
pub fn resolve_credential_source(i: CredentialInputs) -> Result<CredentialSource, CliError> {
    if i.identity.is_some() && (i.token_flag.is_some() || i.token_file.is_some()) {
        return Err(CliError::Usage(
            "an identity file cannot be combined with --token or --token-file".into(),
        ));
    }
    if let Some(path) = i.identity {
        return Ok(CredentialSource::IdentityFile(path));
    }
    if let Some(t) = i.token_flag {
        return Ok(CredentialSource::Token(t.trim().to_string()));
    }
    if let Some(t) = i.token_env {
        return Ok(CredentialSource::Token(t.trim().to_string()));
    }
    if let Some(path) = i.token_file {
        let t = std::fs::read_to_string(&path).map_err(|source| CliError::TokenFile {
            path: path.display().to_string(),
            source,
        })?;
        let t = t.trim();
        if t.is_empty() {
            return Err(CliError::Usage(format!("token file {} is empty", path.display())));
        }
        return Ok(CredentialSource::Token(t.to_string()));
    }
    Ok(CredentialSource::Password(i.password_env))
}

impl CredentialSource {
    /// Turns the source into a credential, prompting if needed.
    pub fn load(&self, username: &str, destination: &Destination) -> Result<Credential, CliError> {
        Ok(match self {
            CredentialSource::Token(t) => Credential::OidcToken { raw_jwt: t.clone() },
            CredentialSource::IdentityFile(path) => Credential::PrivateKey {
                username: username.to_string(),
                key: ClientKey::load(path).map_err(|e| CliError::Identity {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?,
            },
            CredentialSource::Password(Some(p)) => Credential::Password {
                username: username.to_string(),
                password: p.clone(),
            },
            CredentialSource::Password(None) => {
                let prompt = format!("{username}@{}'s password: ", destination.host);
                Credential::Password {
                    username: username.to_string(),
                    password: rpassword::prompt_password(prompt).map_err(CliError::Password)?,
                }
            }
        })
    }
}

/// Everything one client run needs.
#[derive(Debug, Clone)]
pub struct ClientInvocation {
    pub destination: Destination,
    pub username: String,
    pub credential: CredentialSource,
    pub forwards: Vec<ForwardingSpec>,
    /// `None` starts the login shell.
    pub command: Option<String>,
    pub pty: bool,
    /// False for forwarding-only runs.
    pub open_session: bool,
    pub read_stdin: bool,
    pub trust: Trust,
    pub connect_timeout: Duration,
}

impl ClientInvocation {
    pub fn client_options(&self) -> ClientOptions {
        let mut o = ClientOptions::new(self.trust.clone());
        o.timeout = self.connect_timeout;
        o.transport = TransportOptions::default();
        o
    }
}

#[derive(Debug, Parser)]
#[command(name = "quicshell", version, about = "Remote shell, command execution and port forwarding over HTTP/3")]
pub struct ClientCli {
    #[command(subcommand)]
    pub command: ClientCommand,
}

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    /// Interactive login shell on a pseudo-terminal.
    Shell {
        #[command(flatten)]
        common: ClientArgs,
        /// Only set up forwards; no shell.
        #[arg(short = 'N')]
        no_shell: bool,
    },
    /// Run one command and exit with its status.
    Exec {
        #[command(flatten)]
        common: ClientArgs,
        /// Allocate a pseudo-terminal.
        #[arg(short = 't')]
        tty: bool,
        /// Do not forward local stdin.
        #[arg(short = 'n')]
        no_stdin: bool,
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        command: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// https://[user@]host[:port]/secret-path
    pub destination: String,
    /// Remote username (overrides the one in the URL).
    #[arg(short = 'l', long = "user")]
    pub user: Option<String>,
    /// OpenSSH private key for public-key authentication.
    #[arg(short = 'i', long = "identity")]
    pub identity: Option<PathBuf>,
    /// OIDC ID token (beats QUICSHELL_TOKEN and --token-file).
    #[arg(long)]
    pub token: Option<String>,
    /// File holding an OIDC ID token.
    #[arg(long)]
    pub token_file: Option<PathBuf>,
    /// Local forward: tcp|udp/<bind>:<port>/<host>:<port>. Repeatable.
    #[arg(short = 'L', long = "forward")]
    pub forwards: Vec<ForwardingSpec>,
    /// Trust only the server certificate with this SHA-256 fingerprint.
    #[arg(long, conflicts_with = "ca")]
    pub insecure_pin: Option<String>,
    /// PEM bundle of trusted CAs instead of the system store.
    #[arg(long)]
    pub ca: Option<PathBuf>,
    /// Seconds allowed for establishing the conversation.
    #[arg(long, default_value_t = 10)]
    pub connect_timeout: u64,
}

fn local_username() -> String {
    std::env::var("USER")
        .ok()
        .filter(|u| !u.is_empty())
        .or_else(|| {
            nix::unistd::User::from_uid(nix::unistd::Uid::current())
                .ok()
                .flatten()
                .map(|u| u.name)
        })
        .unwrap_or_else(|| "root".into())
}

impl ClientArgs {
    fn into_invocation(
        self,
        command: Option<String>,
        pty: bool,
        open_session: bool,
        read_stdin: bool,
    ) -> Result<ClientInvocation, CliError> {
        let destination = Destination::parse(&self.destination)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let username = self
            .user
            .or_else(|| destination.username.clone())
            .unwrap_or_else(local_username);
        let trust = match (&self.insecure_pin, &self.ca) {
            (Some(pin), _) => Trust::pin(pin)?,
            (None, Some(ca)) => Trust::ca_file(ca)?,
            (None, None) => Trust::system()?,
        };
        let credential = resolve_credential_source(CredentialInputs::from_env(
            self.token,
            self.token_file,
            self.identity,
        ))?;
        Ok(ClientInvocation {
            destination,
            username,
            credential,
            forwards: self.forwards,
            command,
            pty,
            open_session,
            read_stdin,
            trust,
            connect_timeout: Duration::from_secs(self.connect_timeout.max(1)),
        })
    }
}

impl ClientCli {
    pub fn into_invocation(self) -> Result<ClientInvocation, CliError> {
        match self.command {
            ClientCommand::Shell { common, no_shell } => common.into_invocation(None, !no_shell, !no_shell, !no_shell),
            ClientCommand::Exec {
                common,
                tty,
                no_stdin,
                command,
            } => common.into_invocation(Some(command.join(" ")), tty, true, !no_stdin),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "quicshell-server", version, about = "Server for quicshell conversations")]
pub struct ServerCli {
    #[command(subcommand)]
    pub command: ServerCommand,
}

#[derive(Debug, Subcommand)]
pub enum ServerCommand {
    /// Serve conversations as described by a configuration file.
    Run { config: PathBuf },
    /// Check a configuration file and the files it names, then exit.
    Check { config: PathBuf },
    /// Write a self-signed certificate and key for the given names.
    GenCert {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(required = true)]
        names: Vec<String>,
    },
    /// Read a password (prompt or stdin) and print an identity store line.
    HashPassword,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_precedence_flag_env_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("tok");
        std::fs::write(&file, "from-file\n").unwrap();
        let all = CredentialInputs {
            token_flag: Some("from-flag".into()),
            token_env: Some("from-env".into()),
            token_file: Some(file.clone()),
            identity: None,
            password_env: Some("pw".into()),
        };
        assert_eq!(
            resolve_credential_source(all.clone()).unwrap(),
            CredentialSource::Token("from-flag".into())
        );
        let no_flag = CredentialInputs { token_flag: None, ..all.clone() };
        assert_eq!(
            resolve_credential_source(no_flag.clone()).unwrap(),
            CredentialSource::Token("from-env".into())
        );
        let file_only = CredentialInputs { token_env: None, ..no_flag };
        assert_eq!(
            resolve_credential_source(file_only).unwrap(),
            CredentialSource::Token("from-file".into())
        );
    }

    #[test]
    fn password_is_the_fallback() {
        let i = CredentialInputs {
            password_env: Some("pw".into()),
            ..Default::default()
        };
        assert_eq!(
            resolve_credential_source(i).unwrap(),
            CredentialSource::Password(Some("pw".into()))
        );
        assert_eq!(
            resolve_credential_source(CredentialInputs::default()).unwrap(),
            CredentialSource::Password(None)
        );
    }

    #[test]
    fn identity_excludes_token_flags() {
        let i = CredentialInputs {
            identity: Some("id".into()),
            token_flag: Some("t".into()),
            ..Default::default()
        };
        assert!(matches!(resolve_credential_source(i), Err(CliError::Usage(_))));
        let env_only = CredentialInputs {
            identity: Some("id".into()),
            token_env: Some("t".into()),
            ..Default::default()
        };
        assert_eq!(
            resolve_credential_source(env_only).unwrap(),
            CredentialSource::IdentityFile("id".into())
        );
    }

    #[test]
    fn shell_implies_pty_and_exec_does_not() {
        let parse = |args: &[&str]| {
            ClientCli::try_parse_from(args)
                .unwrap()
                .into_invocation()
                .unwrap()
        };
        let pin = "00".repeat(32);
        let s = parse(&["quicshell", "shell", "--insecure-pin", &pin, "bob@h:4433/p"]);
        assert!(s.pty && s.command.is_none() && s.open_session);
        assert_eq!(s.username, "bob");
        let e = parse(&["quicshell", "exec", "--insecure-pin", &pin, "-l", "carol", "h/p", "ls", "-la"]);
        assert!(!e.pty);
        assert_eq!(e.command.as_deref(), Some("ls -la"));
        assert_eq!(e.username, "carol");
        let n = parse(&["quicshell", "shell", "-N", "--insecure-pin", &pin, "-L", "tcp/127.0.0.1:1/x:2", "h/p"]);
        assert!(!n.open_session);
        assert_eq!(n.forwards.len(), 1);
    }
}

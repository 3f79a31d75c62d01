//! Server configuration file.
//!
//! ```toml
//! listen = "0.0.0.0:443"
//! cert = "cert.pem"
//! key = "key.pem"
//! url_path = "/my-secret-path"
//! identity_store = "identities"
//! schemes = ["basic", "bearer"]
//! max_channels = 64
//! oidc_audience = "my-client-id"
//! mode = "single-user"
//! ```
//!
//! Relative paths are taken from the configuration file's directory.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::auth::AuthScheme;
use crate::exec::Privilege;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub file: String,
    /// 1-based; `None` when the problem is not tied to one line.
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.file, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen: Spanned<String>,
    cert: Spanned<PathBuf>,
    key: Spanned<PathBuf>,
    url_path: Spanned<String>,
    identity_store: Spanned<PathBuf>,
    schemes: Option<Spanned<Vec<String>>>,
    max_channels: Option<Spanned<i64>>,
    oidc_audience: Option<Spanned<String>>,
    mode: Option<Spanned<String>>,
    shell: Option<Spanned<PathBuf>>,
    allow_forwarding: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub cert: PathBuf,
    pub key: PathBuf,
    pub url_path: String,
    pub identity_store: PathBuf,
    pub schemes: Vec<AuthScheme>,
    pub max_channels: u32,
    pub oidc_audience: Option<String>,
    pub mode: Privilege,
    pub shell: Option<PathBuf>,
    pub allow_forwarding: bool,
    file: String,
    lines: BTreeMap<&'static str, usize>,
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.display().to_string(),
            line: None,
            message: format!("cannot read configuration: {e}"),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses `text`; `file` names it in diagnostics and `base` anchors
    /// relative paths.
    pub fn parse(text: &str, file: &str, base: &Path) -> Result<Self, ConfigError> {
        let at = |offset: usize, message: String| ConfigError {
            file: file.to_string(),
            line: Some(line_at(text, offset)),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            file: file.to_string(),
            line: e.span().map(|s| line_at(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let mut lines = BTreeMap::new();
        let mut note = |key: &'static str, span: std::ops::Range<usize>| {
            lines.insert(key, line_at(text, span.start));
        };

        let listen = raw
            .listen
            .get_ref()
            .parse::<SocketAddr>()
            .map_err(|_| at(raw.listen.span().start, format!("listen {:?} is not an ip:port address", raw.listen.get_ref())))?;
        note("listen", raw.listen.span());

        let url_path = raw.url_path.get_ref().clone();
        if !url_path.starts_with('/') || url_path.contains('?') || url_path.contains('#') {
            return Err(at(
                raw.url_path.span().start,
                format!("url_path {url_path:?} must start with '/' and contain no '?' or '#'"),
            ));
        }
        if url_path == "/" {
            return Err(at(raw.url_path.span().start, "url_path must not be the root path".into()));
        }
        note("url_path", raw.url_path.span());

        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        note("cert", raw.cert.span());
        note("key", raw.key.span());
        note("identity_store", raw.identity_store.span());

        let schemes = match &raw.schemes {
            None => vec![AuthScheme::Basic, AuthScheme::Bearer],
            Some(list) => {
                let mut out = Vec::new();
                for name in list.get_ref() {
                    let s = AuthScheme::parse(name).ok_or_else(|| {
                        at(list.span().start, format!("unknown scheme {name:?} (basic|bearer)"))
                    })?;
                    if !out.contains(&s) {
                        out.push(s);
                    }
                }
                if out.is_empty() {
                    return Err(at(list.span().start, "schemes must not be empty".into()));
                }
                out
            }
        };

        let max_channels = match &raw.max_channels {
            None => 64,
            Some(n) => u32::try_from(*n.get_ref())
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| at(n.span().start, format!("max_channels {} is out of range", n.get_ref())))?,
        };

        let mode = match &raw.mode {
            None => Privilege::default(),
            Some(m) => m.get_ref().parse().map_err(|e: String| at(m.span().start, e))?,
        };

        let oidc_audience = raw.oidc_audience.as_ref().map(|a| a.get_ref().clone());
        if let Some(a) = &raw.oidc_audience {
            if a.get_ref().is_empty() {
                return Err(at(a.span().start, "oidc_audience must not be empty".into()));
            }
        }

        Ok(ServerConfig {
            listen,
            cert: resolve(raw.cert.get_ref()),
            key: resolve(raw.key.get_ref()),
            url_path,
            identity_store: resolve(raw.identity_store.get_ref()),
            schemes,
            max_channels,
            oidc_audience,
            mode,
            shell: raw.shell.as_ref().map(|s| resolve(s.get_ref())),
            allow_forwarding: raw.allow_forwarding.unwrap_or(true),
            file: file.to_string(),
            lines,
        })
    }

    /// An error about the value of `key`, pointing at its line.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: self.lines.get(key).copied(),
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
listen = "127.0.0.1:4433"
cert = "cert.pem"
key = "/etc/qs/key.pem"
url_path = "/hidden"
identity_store = "ids"
schemes = ["basic"]
max_channels = 8
mode = "single-user"
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let c = ServerConfig::parse(GOOD, "t.toml", Path::new("/srv")).unwrap();
        assert_eq!(c.listen, "127.0.0.1:4433".parse().unwrap());
        assert_eq!(c.cert, PathBuf::from("/srv/cert.pem"));
        assert_eq!(c.key, PathBuf::from("/etc/qs/key.pem"));
        assert_eq!(c.schemes, vec![AuthScheme::Basic]);
        assert_eq!(c.max_channels, 8);
        assert!(c.allow_forwarding);
        assert_eq!(c.error_at("cert", "x").line, Some(3));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            (GOOD.replace("max_channels = 8", "max_channels = 0"), 8),
            (GOOD.replace("\"/hidden\"", "\"hidden\""), 5),
            (GOOD.replace("127.0.0.1:4433", "nowhere"), 2),
            (GOOD.replace("[\"basic\"]", "[\"kerberos\"]"), 7),
            (GOOD.replace("mode = \"single-user\"", "mode = \"root\""), 9),
            (format!("{GOOD}bogus = 1\n"), 10),
            (GOOD.replace("key = ", "key == "), 4),
        ];
        for (text, line) in cases {
            let e = ServerConfig::parse(&text, "t.toml", Path::new("/")).unwrap_err();
            assert_eq!(e.line, Some(line), "{e}");
            assert!(e.to_string().starts_with(&format!("t.toml:{line}: ")), "{e}");
        }
    }

    #[test]
    fn missing_required_key() {
        let text = GOOD.replace("identity_store = \"ids\"\n", "");
        let e = ServerConfig::parse(&text, "t.toml", Path::new("/")).unwrap_err();
        assert!(e.message.contains("identity_store"), "{e}");
    }
}

//! Server-side identity store.
//!
//! ```text
//! # comment
//! [user alice]
//! password-hash argon2id:<b64 salt>:<b64 hash>
//! pubkey ssh-ed25519 AAAAC3NzaC1lZDI1NTE5AAAA... alice@laptop
//! oidc https://accounts.example.com alice@example.com
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ssh_key::PublicKey;

use super::password::PasswordHash;
use super::AuthScheme;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentityEntry {
    PasswordHash(PasswordHash),
    AuthorizedKey(PublicKey),
    Oidc { issuer: String, email: String },
}

impl IdentityEntry {
    pub fn scheme(&self) -> AuthScheme {
        match self {
            IdentityEntry::PasswordHash(_) => AuthScheme::Basic,
            IdentityEntry::AuthorizedKey(_) | IdentityEntry::Oidc { .. } => AuthScheme::Bearer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("identity store line {line}: {message}")]
pub struct StoreError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> StoreError {
    StoreError {
        line,
        message: message.into(),
    }
}

/// Authorized identities per user. Immutable once parsed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentityStore {
    users: BTreeMap<String, Vec<IdentityEntry>>,
    warnings: Vec<String>,
}

pub(crate) fn valid_username(name: &str) -> bool {
    !name.is_empty() && !name.contains(|c: char| c.is_whitespace() || c == ':' || c == ']')
}

impl IdentityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut store = IdentityStore::default();
        let mut current: Option<(String, usize)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let inner = inner
                    .strip_suffix(']')
                    .ok_or_else(|| err(lineno, "unterminated section header"))?;
                let name = inner
                    .trim()
                    .strip_prefix("user")
                    .filter(|rest| rest.starts_with(char::is_whitespace))
                    .map(str::trim)
                    .ok_or_else(|| err(lineno, "section header must be [user <name>]"))?;
                if !valid_username(name) {
                    return Err(err(lineno, format!("invalid username {name:?}")));
                }
                if let Some((prev, at)) = current.take() {
                    store.close_section(&prev, at)?;
                }
                if store.users.contains_key(name) {
                    return Err(err(lineno, format!("duplicate section for user {name:?}")));
                }
                store.users.insert(name.to_string(), Vec::new());
                current = Some((name.to_string(), lineno));
                continue;
            }

            let Some((user, _)) = &current else {
                return Err(err(lineno, "entry outside of a [user <name>] section"));
            };
            let (kind, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            let entry = match kind {
                "password-hash" => IdentityEntry::PasswordHash(
                    PasswordHash::parse(rest).map_err(|e| err(lineno, e.to_string()))?,
                ),
                "pubkey" => IdentityEntry::AuthorizedKey(
                    PublicKey::from_openssh(rest)
                        .map_err(|e| err(lineno, format!("malformed public key: {e}")))?,
                ),
                "oidc" => {
                    let mut parts = rest.split_whitespace();
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(issuer), Some(email), None)
                            if issuer.starts_with("https://") || issuer.starts_with("http://") =>
                        {
                            IdentityEntry::Oidc {
                                issuer: issuer.trim_end_matches('/').to_string(),
                                email: email.to_string(),
                            }
                        }
                        _ => return Err(err(lineno, "expected: oidc <issuer-url> <email>")),
                    }
                }
                other => {
                    let w = format!("line {lineno}: skipping unknown entry kind {other:?}");
                    tracing::warn!("identity store {w}");
                    store.warnings.push(w);
                    continue;
                }
            };
            store
                .users
                .get_mut(user)
                .expect("current section exists")
                .push(entry);
        }
        if let Some((prev, at)) = current {
            store.close_section(&prev, at)?;
        }
        Ok(store)
    }

    fn close_section(&self, user: &str, line: usize) -> Result<(), StoreError> {
        if self.users.get(user).is_some_and(Vec::is_empty) {
            return Err(err(line, format!("user {user:?} has no entries")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(0, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Adds an entry, creating the user section if needed.
    pub fn add(&mut self, user: &str, entry: IdentityEntry) {
        self.users.entry(user.to_string()).or_default().push(entry);
    }

    pub fn entries(&self, user: &str) -> &[IdentityEntry] {
        self.users.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn contains_user(&self, user: &str) -> bool {
        self.users.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Schemes matching the kinds of entries configured for `user`.
    pub fn schemes_for(&self, user: &str) -> Vec<AuthScheme> {
        let mut out = Vec::new();
        for e in self.entries(user) {
            if !out.contains(&e.scheme()) {
                out.push(e.scheme());
            }
        }
        out.sort();
        out
    }

    /// Every OIDC issuer that appears anywhere in the store.
    pub fn oidc_issuers(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .users
            .values()
            .flatten()
            .filter_map(|e| match e {
                IdentityEntry::Oidc { issuer, .. } => Some(issuer.as_str()),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl std::fmt::Display for IdentityStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (user, entries)) in self.users.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "[user {user}]")?;
            for e in entries {
                match e {
                    IdentityEntry::PasswordHash(h) => writeln!(f, "password-hash {h}")?,
                    IdentityEntry::AuthorizedKey(k) => writeln!(
                        f,
                        "pubkey {}",
                        k.to_openssh().map_err(|_| std::fmt::Error)?
                    )?,
                    IdentityEntry::Oidc { issuer, email } => writeln!(f, "oidc {issuer} {email}")?,
                }
            }
        }
        Ok(())
    }
}

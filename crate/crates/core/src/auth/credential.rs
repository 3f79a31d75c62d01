use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use jsonwebtoken::Header;
use serde::{Deserialize, Serialize};

use super::keys::{ClientKey, KeyError};
use super::store::valid_username;
use super::ConversationId;

/// Audience of public-key JWTs.
pub const PUBKEY_JWT_AUDIENCE: &str = "ssh3";

/// Lifetime of a public-key JWT in seconds.
pub const PUBKEY_JWT_LIFETIME: u64 = 10;

/// Client-side authorization material.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)] // one per connection
pub enum Credential {
    Password { username: String, password: String },
    OidcToken { raw_jwt: String },
    PrivateKey { username: String, key: ClientKey },
}

impl std::fmt::Debug for Credential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Credential::Password { username, .. } => f
                .debug_struct("Password")
                .field("username", username)
                .finish_non_exhaustive(),
            Credential::OidcToken { .. } => f.debug_struct("OidcToken").finish_non_exhaustive(),
            Credential::PrivateKey { username, key } => f
                .debug_struct("PrivateKey")
                .field("username", username)
                .field("key", key)
                .finish(),
        }
    }
}

impl Credential {
    pub fn needs_conversation_id(&self) -> bool {
        matches!(self, Credential::PrivateKey { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CredentialError {
    #[error("username is empty")]
    EmptyUsername,
    #[error("username {0:?} is not allowed (contains ':' or whitespace)")]
    InvalidUsername(String),
    #[error("bearer token is empty")]
    EmptyToken,
    #[error("public-key authentication needs the conversation id")]
    MissingConversationId,
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("cannot sign token: {0}")]
    Sign(#[from] jsonwebtoken::errors::Error),
}

fn check_username(username: &str) -> Result<(), CredentialError> {
    if username.is_empty() {
        return Err(CredentialError::EmptyUsername);
    }
    if !valid_username(username) {
        return Err(CredentialError::InvalidUsername(username.into()));
    }
    Ok(())
}

/// Claims of a session-bound public-key JWT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PubkeyJwtClaims {
    /// Username the token is issued for.
    pub iss: String,
    pub aud: String,
    pub exp: u64,
    pub iat: u64,
    /// Public key in authorized-keys form.
    pub pubkey: String,
    /// Base64 conversation id.
    pub sid: String,
}

/// Signs a public-key JWT bound to `sid`, valid from `now` for
/// [`PUBKEY_JWT_LIFETIME`] seconds.
pub fn mint_pubkey_jwt(
    key: &ClientKey,
    username: &str,
    sid: &ConversationId,
    now: u64,
) -> Result<String, CredentialError> {
    check_username(username)?;
    let claims = PubkeyJwtClaims {
        iss: username.into(),
        aud: PUBKEY_JWT_AUDIENCE.into(),
        exp: now + PUBKEY_JWT_LIFETIME,
        iat: now,
        pubkey: key.authorized_key_line(),
        sid: sid.to_base64(),
    };
    let header = Header::new(key.algorithm());
    Ok(jsonwebtoken::encode(&header, &claims, &key.encoding_key()?)?)
}

/// Value of the `Authorization` header for `credential`.
pub fn build_authorization_header(
    credential: &Credential,
    sid: Option<&ConversationId>,
    now: u64,
) -> Result<String, CredentialError> {
    match credential {
        Credential::Password { username, password } => {
            check_username(username)?;
            Ok(format!(
                "Basic {}",
                STANDARD.encode(format!("{username}:{password}"))
            ))
        }
        Credential::OidcToken { raw_jwt } => {
            let t = raw_jwt.trim();
            if t.is_empty() {
                return Err(CredentialError::EmptyToken);
            }
            Ok(format!("Bearer {t}"))
        }
        Credential::PrivateKey { username, key } => {
            let sid = sid.ok_or(CredentialError::MissingConversationId)?;
            Ok(format!("Bearer {}", mint_pubkey_jwt(key, username, sid, now)?))
        }
    }
}

//! HTTP authorization for conversations: `Basic` passwords, OIDC ID
//! tokens and session-bound public-key JWTs (both carried as `Bearer`),
//! plus the exporter-derived conversation id and the identity store.

mod conversation_id;
mod credential;
mod keys;
mod oidc;
mod password;
mod store;
mod verify;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

pub use conversation_id::{
    derive_conversation_id, ConversationId, ExporterUnavailable, CONVERSATION_ID_LEN,
    EXPORTER_LABEL,
};
pub use credential::{
    build_authorization_header, mint_pubkey_jwt, Credential, CredentialError, PubkeyJwtClaims,
    PUBKEY_JWT_AUDIENCE, PUBKEY_JWT_LIFETIME,
};
pub use keys::{authorized_key_line, jwt_algorithm, ClientKey, KeyError};
pub use oidc::{ProviderError, ProviderKeyCache, DEFAULT_KEY_TTL};
pub use password::{PasswordHash, PasswordHashError};
pub use store::{IdentityEntry, IdentityStore, StoreError};
pub use verify::{split_authorization, verify_basic, verify_oidc_token, verify_pubkey_jwt};

/// Source of the current time in unix seconds.
pub trait Clock: Send + Sync {
    fn now_unix(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_unix(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A settable clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(now: u64) -> Self {
        ManualClock(AtomicU64::new(now))
    }

    pub fn set(&self, now: u64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_unix(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuthScheme {
    Basic,
    Bearer,
}

impl AuthScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthScheme::Basic => "Basic",
            AuthScheme::Bearer => "Bearer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" | "password" => Some(AuthScheme::Basic),
            "bearer" | "pubkey" | "oidc" => Some(AuthScheme::Bearer),
            _ => None,
        }
    }
}

impl std::fmt::Display for AuthScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable cause of a rejection. Logged server-side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    MissingCredentials,
    UnsupportedScheme,
    SchemeDisabled,
    SchemeNotConfigured,
    MalformedCredentials,
    UnknownUser,
    UsernameMismatch,
    BadPassword,
    KeyNotAuthorized,
    BadSignature,
    SessionMismatch,
    Expired,
    NotYetValid,
    IssuerMismatch,
    AudienceMismatch,
    UnknownKeyId,
    IdentityNotAuthorized,
    ProviderUnreachable,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingCredentials => "missing-credentials",
            RejectReason::UnsupportedScheme => "unsupported-scheme",
            RejectReason::SchemeDisabled => "scheme-disabled",
            RejectReason::SchemeNotConfigured => "scheme-not-configured",
            RejectReason::MalformedCredentials => "malformed-credentials",
            RejectReason::UnknownUser => "unknown-user",
            RejectReason::UsernameMismatch => "username-mismatch",
            RejectReason::BadPassword => "bad-password",
            RejectReason::KeyNotAuthorized => "key-not-authorized",
            RejectReason::BadSignature => "bad-signature",
            RejectReason::SessionMismatch => "session-mismatch",
            RejectReason::Expired => "expired",
            RejectReason::NotYetValid => "not-yet-valid",
            RejectReason::IssuerMismatch => "issuer-mismatch",
            RejectReason::AudienceMismatch => "audience-mismatch",
            RejectReason::UnknownKeyId => "unknown-key-id",
            RejectReason::IdentityNotAuthorized => "identity-not-authorized",
            RejectReason::ProviderUnreachable => "provider-unreachable",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The server's verdict on one CONNECT request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthDecision {
    Accepted {
        username: String,
    },
    Rejected {
        advertised_schemes: Vec<AuthScheme>,
        reason: RejectReason,
    },
}

impl AuthDecision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AuthDecision::Accepted { .. })
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            AuthDecision::Rejected { reason, .. } => Some(*reason),
            AuthDecision::Accepted { .. } => None,
        }
    }

    pub fn advertised_schemes(&self) -> &[AuthScheme] {
        match self {
            AuthDecision::Rejected {
                advertised_schemes, ..
            } => advertised_schemes,
            AuthDecision::Accepted { .. } => &[],
        }
    }

    /// `WWW-Authenticate` value for a rejection.
    pub fn www_authenticate(&self) -> Option<String> {
        match self {
            AuthDecision::Rejected {
                advertised_schemes, ..
            } => Some(www_authenticate_value(advertised_schemes)),
            AuthDecision::Accepted { .. } => None,
        }
    }
}

pub const REALM: &str = "ssh3";

pub fn www_authenticate_value(schemes: &[AuthScheme]) -> String {
    schemes
        .iter()
        .map(|s| format!("{s} realm=\"{REALM}\""))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Scheme names listed in a `WWW-Authenticate` value.
pub fn parse_www_authenticate(value: &str) -> Vec<String> {
    value
        .split(',')
        .filter_map(|part| {
            let token = part.split_whitespace().next()?;
            (!token.contains('=')).then(|| token.to_string())
        })
        .collect()
}

/// Server-side authorization policy.
#[derive(Debug, Clone)]
pub struct AuthPolicy {
    pub schemes: Vec<AuthScheme>,
    /// Expected `aud` of OIDC ID tokens; OIDC is refused when unset.
    pub oidc_audience: Option<String>,
}

impl Default for AuthPolicy {
    fn default() -> Self {
        AuthPolicy {
            schemes: vec![AuthScheme::Basic, AuthScheme::Bearer],
            oidc_audience: None,
        }
    }
}

/// Dispatches an `Authorization` header to the right verifier.
pub struct Authenticator {
    store: Arc<IdentityStore>,
    policy: AuthPolicy,
    clock: Arc<dyn Clock>,
    providers: ProviderKeyCache,
    invocations: AtomicU64,
}

impl Authenticator {
    pub fn new(store: Arc<IdentityStore>, policy: AuthPolicy, clock: Arc<dyn Clock>) -> Self {
        Authenticator {
            store,
            policy,
            clock,
            providers: ProviderKeyCache::default(),
            invocations: AtomicU64::new(0),
        }
    }

    pub fn with_provider_cache(mut self, cache: ProviderKeyCache) -> Self {
        self.providers = cache;
        self
    }

    pub fn store(&self) -> &IdentityStore {
        &self.store
    }

    pub fn policy(&self) -> &AuthPolicy {
        &self.policy
    }

    /// Number of times [`Authenticator::authorize`] ran.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    fn rejected(&self, advertised: Vec<AuthScheme>, reason: RejectReason) -> AuthDecision {
        let mut schemes: Vec<AuthScheme> = advertised
            .into_iter()
            .filter(|s| self.policy.schemes.contains(s))
            .collect();
        if schemes.is_empty() {
            schemes = self.policy.schemes.clone();
        }
        AuthDecision::Rejected {
            advertised_schemes: schemes,
            reason,
        }
    }

    fn restrict(&self, d: AuthDecision) -> AuthDecision {
        match d {
            AuthDecision::Rejected {
                advertised_schemes,
                reason,
            } => self.rejected(advertised_schemes, reason),
            ok => ok,
        }
    }

    pub async fn authorize(
        &self,
        authorization: Option<&str>,
        claimed_user: &str,
        sid: &ConversationId,
    ) -> AuthDecision {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let enabled = self.policy.schemes.clone();
        let Some(header) = authorization else {
            return self.rejected(enabled, RejectReason::MissingCredentials);
        };
        let Some((scheme, param)) = split_authorization(header) else {
            return self.rejected(enabled, RejectReason::UnsupportedScheme);
        };
        if !enabled.contains(&scheme) {
            return self.rejected(enabled, RejectReason::SchemeDisabled);
        }
        let now = self.clock.now_unix();
        match scheme {
            AuthScheme::Basic => {
                let store = self.store.clone();
                let header = header.to_string();
                let user = claimed_user.to_string();
                let d = tokio::task::spawn_blocking(move || verify_basic(&header, &store, &user))
                    .await
                    .unwrap_or(AuthDecision::Rejected {
                        advertised_schemes: vec![AuthScheme::Basic],
                        reason: RejectReason::MalformedCredentials,
                    });
                self.restrict(d)
            }
            AuthScheme::Bearer => {
                let claims = verify::peek_claims(param);
                if claims.as_ref().is_some_and(|c| c.get("pubkey").is_some()) {
                    return self.restrict(verify_pubkey_jwt(
                        param,
                        &self.store,
                        claimed_user,
                        sid,
                        now,
                    ));
                }
                self.restrict(self.authorize_oidc(param, claims, claimed_user, now).await)
            }
        }
    }

    async fn authorize_oidc(
        &self,
        token: &str,
        claims: Option<serde_json::Value>,
        claimed_user: &str,
        now: u64,
    ) -> AuthDecision {
        let advertised = || {
            let mut s = self.store.schemes_for(claimed_user);
            if s.is_empty() {
                s.push(AuthScheme::Bearer);
            }
            s
        };
        let Some(issuer) = claims
            .as_ref()
            .and_then(|c| c.get("iss"))
            .and_then(|v| v.as_str())
            .map(|s| s.trim_end_matches('/').to_string())
        else {
            return self.rejected(advertised(), RejectReason::MalformedCredentials);
        };
        let Some(audience) = self.policy.oidc_audience.as_deref() else {
            return self.rejected(advertised(), RejectReason::SchemeNotConfigured);
        };
        // only issuers the operator listed are ever contacted
        if !self.store.oidc_issuers().contains(&issuer.as_str()) {
            return self.rejected(advertised(), RejectReason::IdentityNotAuthorized);
        }
        let keys = match self.providers.fetch_provider_keys(&issuer).await {
            Ok(k) => k,
            Err(e) => {
                tracing::warn!(issuer, error = %e, "cannot obtain provider keys");
                return self.rejected(advertised(), RejectReason::ProviderUnreachable);
            }
        };
        verify_oidc_token(
            token,
            &keys,
            &issuer,
            audience,
            &self.store,
            claimed_user,
            now,
        )
    }
}

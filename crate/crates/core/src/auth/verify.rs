//! Server-side checks for the three authorization schemes.

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use jsonwebtoken::errors::ErrorKind;
use jsonwebtoken::jwk::JwkSet;
use jsonwebtoken::{Algorithm, DecodingKey, Validation};
use serde::Deserialize;
use ssh_key::PublicKey;
use subtle::ConstantTimeEq;

use super::credential::{PubkeyJwtClaims, PUBKEY_JWT_AUDIENCE};
use super::keys::decoding_key;
use super::password::dummy_verify;
use super::store::{IdentityEntry, IdentityStore};
use super::{AuthDecision, AuthScheme, ConversationId, RejectReason};

fn reject(
    store: &IdentityStore,
    user: &str,
    scheme: AuthScheme,
    reason: RejectReason,
) -> AuthDecision {
    let mut advertised = store.schemes_for(user);
    if advertised.is_empty() {
        advertised.push(scheme);
    }
    AuthDecision::Rejected {
        advertised_schemes: advertised,
        reason,
    }
}

fn accept(user: &str) -> AuthDecision {
    AuthDecision::Accepted {
        username: user.to_string(),
    }
}

/// Splits `"<scheme> <param>"`, matching the scheme case-insensitively.
pub fn split_authorization(header: &str) -> Option<(AuthScheme, &str)> {
    let (scheme, param) = header.trim().split_once(' ')?;
    let scheme = match scheme.to_ascii_lowercase().as_str() {
        "basic" => AuthScheme::Basic,
        "bearer" => AuthScheme::Bearer,
        _ => return None,
    };
    Some((scheme, param.trim()))
}

/// Checks a `Basic` header against the user's password hashes.
pub fn verify_basic(header: &str, store: &IdentityStore, claimed_user: &str) -> AuthDecision {
    let bad = |reason| reject(store, claimed_user, AuthScheme::Basic, reason);
    let Some((AuthScheme::Basic, param)) = split_authorization(header) else {
        return bad(RejectReason::MalformedCredentials);
    };
    let Some((user, password)) = STANDARD
        .decode(param)
        .ok()
        .and_then(|raw| String::from_utf8(raw).ok())
        .and_then(|s| s.split_once(':').map(|(u, p)| (u.to_owned(), p.to_owned())))
    else {
        return bad(RejectReason::MalformedCredentials);
    };
    if user != claimed_user {
        dummy_verify(&password);
        return bad(RejectReason::UsernameMismatch);
    }
    let mut matched = false;
    let mut checked = 0;
    for entry in store.entries(claimed_user) {
        if let IdentityEntry::PasswordHash(h) = entry {
            checked += 1;
            matched |= h.verify(&password);
        }
    }
    if checked == 0 {
        dummy_verify(&password);
        let reason = if store.contains_user(claimed_user) {
            RejectReason::SchemeNotConfigured
        } else {
            RejectReason::UnknownUser
        };
        return bad(reason);
    }
    if matched {
        accept(claimed_user)
    } else {
        bad(RejectReason::BadPassword)
    }
}

/// Decodes the claims segment of a compact JWT without checking anything.
pub(crate) fn peek_claims(token: &str) -> Option<serde_json::Value> {
    let mut parts = token.split('.');
    let (_, payload, _, None) = (parts.next()?, parts.next()?, parts.next()?, parts.next()) else {
        return None;
    };
    serde_json::from_slice(&URL_SAFE_NO_PAD.decode(payload).ok()?).ok()
}

fn validation(alg: Algorithm) -> Validation {
    let mut v = Validation::new(alg);
    v.validate_exp = false;
    v.validate_nbf = false;
    v.validate_aud = false;
    v.required_spec_claims.clear();
    v
}

fn signature_reason(kind: &ErrorKind) -> RejectReason {
    match kind {
        ErrorKind::Json(_) | ErrorKind::Utf8(_) | ErrorKind::InvalidToken => {
            RejectReason::MalformedCredentials
        }
        _ => RejectReason::BadSignature,
    }
}

/// Checks a session-bound public-key JWT.
pub fn verify_pubkey_jwt(
    token: &str,
    store: &IdentityStore,
    claimed_user: &str,
    sid: &ConversationId,
    now: u64,
) -> AuthDecision {
    let bad = |reason| reject(store, claimed_user, AuthScheme::Bearer, reason);
    let Some(pubkey) = peek_claims(token)
        .as_ref()
        .and_then(|c| c.get("pubkey"))
        .and_then(|v| v.as_str())
        .and_then(|s| PublicKey::from_openssh(s).ok())
    else {
        return bad(RejectReason::MalformedCredentials);
    };
    let Some(authorized) = store.entries(claimed_user).iter().find_map(|e| match e {
        IdentityEntry::AuthorizedKey(k) if k.key_data() == pubkey.key_data() => Some(k),
        _ => None,
    }) else {
        return bad(RejectReason::KeyNotAuthorized);
    };
    let Ok((key, alg)) = decoding_key(authorized) else {
        return bad(RejectReason::KeyNotAuthorized);
    };
    match jsonwebtoken::decode_header(token) {
        Ok(h) if h.alg == alg => {}
        Ok(_) => return bad(RejectReason::BadSignature),
        Err(_) => return bad(RejectReason::MalformedCredentials),
    }
    let claims = match jsonwebtoken::decode::<PubkeyJwtClaims>(token, &key, &validation(alg)) {
        Ok(data) => data.claims,
        Err(e) => return bad(signature_reason(e.kind())),
    };
    let sid_ok = ConversationId::from_base64(&claims.sid)
        .map(|s| bool::from(s.as_bytes().ct_eq(sid.as_bytes())))
        .unwrap_or(false);
    if !sid_ok {
        return bad(RejectReason::SessionMismatch);
    }
    if now < claims.iat {
        return bad(RejectReason::NotYetValid);
    }
    if now >= claims.exp {
        return bad(RejectReason::Expired);
    }
    if claims.iss != claimed_user {
        return bad(RejectReason::IssuerMismatch);
    }
    if claims.aud != PUBKEY_JWT_AUDIENCE {
        return bad(RejectReason::AudienceMismatch);
    }
    accept(claimed_user)
}

#[derive(Deserialize)]
struct OidcClaims {
    iss: String,
    aud: serde_json::Value,
    exp: u64,
    email: Option<String>,
    email_verified: Option<bool>,
}

const OIDC_ALGORITHMS: &[Algorithm] = &[
    Algorithm::RS256,
    Algorithm::RS384,
    Algorithm::RS512,
    Algorithm::PS256,
    Algorithm::ES256,
    Algorithm::ES384,
    Algorithm::EdDSA,
];

fn audience_matches(aud: &serde_json::Value, expected: &str) -> bool {
    match aud {
        serde_json::Value::String(s) => s == expected,
        serde_json::Value::Array(items) => items.iter().any(|v| v.as_str() == Some(expected)),
        _ => false,
    }
}

/// Checks an identity provider's ID token and the `(issuer, email)`
/// binding for `claimed_user`.
pub fn verify_oidc_token(
    token: &str,
    provider_keys: &JwkSet,
    expected_issuer: &str,
    expected_audience: &str,
    store: &IdentityStore,
    claimed_user: &str,
    now: u64,
) -> AuthDecision {
    let bad = |reason| reject(store, claimed_user, AuthScheme::Bearer, reason);
    let Ok(header) = jsonwebtoken::decode_header(token) else {
        return bad(RejectReason::MalformedCredentials);
    };
    let jwk = match &header.kid {
        Some(kid) => provider_keys.find(kid),
        None if provider_keys.keys.len() == 1 => provider_keys.keys.first(),
        None => None,
    };
    let Some(jwk) = jwk else {
        return bad(RejectReason::UnknownKeyId);
    };
    if !OIDC_ALGORITHMS.contains(&header.alg) {
        return bad(RejectReason::BadSignature);
    }
    if let Some(ka) = jwk.common.key_algorithm {
        if format!("{ka:?}") != format!("{:?}", header.alg) {
            return bad(RejectReason::BadSignature);
        }
    }
    let Ok(key) = DecodingKey::from_jwk(jwk) else {
        return bad(RejectReason::UnknownKeyId);
    };
    let claims = match jsonwebtoken::decode::<OidcClaims>(token, &key, &validation(header.alg)) {
        Ok(d) => d.claims,
        Err(e) => return bad(signature_reason(e.kind())),
    };
    if claims.iss.trim_end_matches('/') != expected_issuer.trim_end_matches('/') {
        return bad(RejectReason::IssuerMismatch);
    }
    if !audience_matches(&claims.aud, expected_audience) {
        return bad(RejectReason::AudienceMismatch);
    }
    if now >= claims.exp {
        return bad(RejectReason::Expired);
    }
    let authorized = claims.email_verified != Some(false)
        && claims.email.as_deref().is_some_and(|email| {
            store.entries(claimed_user).iter().any(|e| {
                matches!(e, IdentityEntry::Oidc { issuer, email: allowed }
                    if issuer.trim_end_matches('/') == claims.iss.trim_end_matches('/')
                        && allowed.eq_ignore_ascii_case(email))
            })
        });
    if !authorized {
        return bad(RejectReason::IdentityNotAuthorized);
    }
    accept(claimed_user)
}

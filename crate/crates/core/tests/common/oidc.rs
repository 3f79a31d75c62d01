//! A local identity provider: discovery document plus JWKS over plain
//! HTTP, with a request counter.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use jsonwebtoken::{Algorithm, EncodingKey, Header};
use rsa::pkcs1::EncodeRsaPrivateKey;
use rsa::traits::PublicKeyParts;
use serde_json::{json, Value};

pub const KID: &str = "test-key-1";
pub const AUDIENCE: &str = "quicshell-test";

struct Shared {
    issuer: String,
    jwk: Value,
    hits: AtomicUsize,
    malformed: AtomicBool,
}

pub struct MockProvider {
    shared: Arc<Shared>,
    signing: EncodingKey,
    other: EncodingKey,
    task: tokio::task::JoinHandle<()>,
}

fn rsa_key() -> rsa::RsaPrivateKey {
    rsa::RsaPrivateKey::new(&mut rand::thread_rng(), 2048).unwrap()
}

fn encoding_key(k: &rsa::RsaPrivateKey) -> EncodingKey {
    EncodingKey::from_rsa_der(k.to_pkcs1_der().unwrap().as_bytes())
}

async fn discovery(State(s): State<Arc<Shared>>) -> Json<Value> {
    s.hits.fetch_add(1, Ordering::SeqCst);
    Json(json!({ "issuer": s.issuer, "jwks_uri": format!("{}/jwks", s.issuer) }))
}

async fn jwks(State(s): State<Arc<Shared>>) -> String {
    s.hits.fetch_add(1, Ordering::SeqCst);
    if s.malformed.load(Ordering::SeqCst) {
        return r#"{"keys": [{"kty": "RSA", "kid": "x", "n": 12}]}"#.into();
    }
    json!({ "keys": [s.jwk] }).to_string()
}

impl MockProvider {
    pub async fn start() -> MockProvider {
        let key = rsa_key();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let issuer = format!("http://{}", listener.local_addr().unwrap());
        let public = key.to_public_key();
        let jwk = json!({
            "kty": "RSA",
            "use": "sig",
            "alg": "RS256",
            "kid": KID,
            "n": URL_SAFE_NO_PAD.encode(public.n().to_bytes_be()),
            "e": URL_SAFE_NO_PAD.encode(public.e().to_bytes_be()),
        });
        let shared = Arc::new(Shared {
            issuer,
            jwk,
            hits: AtomicUsize::new(0),
            malformed: AtomicBool::new(false),
        });
        let app = Router::new()
            .route("/.well-known/openid-configuration", get(discovery))
            .route("/jwks", get(jwks))
            .with_state(shared.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        MockProvider {
            shared,
            signing: encoding_key(&key),
            other: encoding_key(&rsa_key()),
            task,
        }
    }

    pub fn issuer(&self) -> &str {
        &self.shared.issuer
    }

    /// Requests served so far (discovery and JWKS both count).
    pub fn hits(&self) -> usize {
        self.shared.hits.load(Ordering::SeqCst)
    }

    pub fn set_malformed(&self, on: bool) {
        self.shared.malformed.store(on, Ordering::SeqCst);
    }

    pub fn claims(&self, email: &str, iat: u64, exp: u64) -> Value {
        json!({
            "iss": self.shared.issuer,
            "sub": "248289761001",
            "aud": AUDIENCE,
            "iat": iat,
            "exp": exp,
            "email": email,
            "email_verified": true,
        })
    }

    pub fn sign(&self, claims: &Value) -> String {
        let mut h = Header::new(Algorithm::RS256);
        h.kid = Some(KID.into());
        jsonwebtoken::encode(&h, claims, &self.signing).unwrap()
    }

    /// Signed with a key the provider never published, under the same kid.
    pub fn sign_with_foreign_key(&self, claims: &Value) -> String {
        let mut h = Header::new(Algorithm::RS256);
        h.kid = Some(KID.into());
        jsonwebtoken::encode(&h, claims, &self.other).unwrap()
    }

    pub fn sign_with_kid(&self, claims: &Value, kid: &str) -> String {
        let mut h = Header::new(Algorithm::RS256);
        h.kid = Some(kid.into());
        jsonwebtoken::encode(&h, claims, &self.signing).unwrap()
    }
}

impl Drop for MockProvider {
    fn drop(&mut self) {
        self.task.abort();
    }
}

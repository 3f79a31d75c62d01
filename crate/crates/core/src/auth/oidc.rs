//! Identity-provider signing keys, fetched through OIDC discovery and
//! cached per issuer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use jsonwebtoken::jwk::JwkSet;
use serde::Deserialize;

pub const DEFAULT_KEY_TTL: Duration = Duration::from_secs(300);

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("identity provider unreachable: {0}")]
    Unreachable(String),
    #[error("malformed provider metadata: {0}")]
    Malformed(String),
}

#[derive(Deserialize)]
struct Discovery {
    jwks_uri: String,
}

struct Cached {
    fetched: Instant,
    keys: Arc<JwkSet>,
}

/// Provider key sets keyed by issuer URL.
pub struct ProviderKeyCache {
    http: reqwest::Client,
    ttl: Duration,
    entries: Mutex<HashMap<String, Cached>>,
}

impl Default for ProviderKeyCache {
    fn default() -> Self {
        Self::new(DEFAULT_KEY_TTL)
    }
}

impl ProviderKeyCache {
    pub fn new(ttl: Duration) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        ProviderKeyCache {
            http,
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Returns the issuer's key set, from cache when younger than the TTL.
    ///
    /// When the provider cannot be reached a stale cached set is still
    /// returned. A malformed document never replaces a cached set.
    pub async fn fetch_provider_keys(&self, issuer: &str) -> Result<Arc<JwkSet>, ProviderError> {
        let issuer = issuer.trim_end_matches('/');
        let stale = {
            let entries = self.entries.lock().unwrap();
            match entries.get(issuer) {
                Some(c) if c.fetched.elapsed() < self.ttl => return Ok(c.keys.clone()),
                Some(c) => Some(c.keys.clone()),
                None => None,
            }
        };
        match self.download(issuer).await {
            Ok(keys) => {
                let keys = Arc::new(keys);
                self.entries.lock().unwrap().insert(
                    issuer.to_string(),
                    Cached {
                        fetched: Instant::now(),
                        keys: keys.clone(),
                    },
                );
                Ok(keys)
            }
            Err(ProviderError::Unreachable(msg)) => {
                if let Some(keys) = stale {
                    tracing::warn!(issuer, "provider unreachable ({msg}); using cached keys");
                    Ok(keys)
                } else {
                    Err(ProviderError::Unreachable(msg))
                }
            }
            Err(e) => Err(e),
        }
    }

    async fn get_text(&self, url: &str) -> Result<String, ProviderError> {
        let resp = self
            .http
            .get(url)
            .send()
            .await
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ProviderError::Unreachable(format!("{url}: HTTP {}", resp.status())));
        }
        resp.text()
            .await
            .map_err(|e| ProviderError::Unreachable(e.to_string()))
    }

    async fn download(&self, issuer: &str) -> Result<JwkSet, ProviderError> {
        let meta = self
            .get_text(&format!("{issuer}/.well-known/openid-configuration"))
            .await?;
        let meta: Discovery =
            serde_json::from_str(&meta).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let jwks = self.get_text(&meta.jwks_uri).await?;
        let set: JwkSet =
            serde_json::from_str(&jwks).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        if set.keys.is_empty() {
            return Err(ProviderError::Malformed("key set is empty".into()));
        }
        Ok(set)
    }
}

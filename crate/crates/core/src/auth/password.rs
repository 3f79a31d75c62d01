use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::RngCore;
use subtle::ConstantTimeEq;

/// Scheme id for Argon2id v1.3, 19 MiB, 2 passes, 1 lane, 32-byte output.
pub const ARGON2ID: &str = "argon2id";

const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;

/// A salted password hash as stored in the identity file:
/// `<scheme-id>:<b64 salt>:<b64 hash>`.
#[derive(Clone, PartialEq, Eq)]
pub struct PasswordHash {
    pub scheme: String,
    pub salt: Vec<u8>,
    pub hash: Vec<u8>,
}

impl std::fmt::Debug for PasswordHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PasswordHash")
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PasswordHashError {
    #[error("expected <scheme>:<salt>:<hash>")]
    Format,
    #[error("unsupported password hash scheme {0:?}")]
    UnknownScheme(String),
    #[error("invalid base64 in password hash")]
    Base64,
}

fn argon2() -> Argon2<'static> {
    let params = Params::new(19 * 1024, 2, 1, Some(HASH_LEN)).expect("static argon2 params");
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
}

fn derive(password: &[u8], salt: &[u8]) -> [u8; HASH_LEN] {
    let mut out = [0u8; HASH_LEN];
    argon2()
        .hash_password_into(password, salt, &mut out)
        .expect("argon2 accepts salts of at least 8 bytes");
    out
}

impl PasswordHash {
    pub fn create(password: &str) -> Self {
        let mut salt = vec![0u8; SALT_LEN];
        rand::thread_rng().fill_bytes(&mut salt);
        let hash = derive(password.as_bytes(), &salt).to_vec();
        PasswordHash {
            scheme: ARGON2ID.into(),
            salt,
            hash,
        }
    }

    /// Constant-time check of `password` against this hash.
    pub fn verify(&self, password: &str) -> bool {
        if self.scheme != ARGON2ID || self.salt.len() < 8 {
            return false;
        }
        let candidate = derive(password.as_bytes(), &self.salt);
        candidate.ct_eq(self.hash.as_slice()).into()
    }

    pub fn parse(s: &str) -> Result<Self, PasswordHashError> {
        let mut parts = s.trim().split(':');
        let (Some(scheme), Some(salt), Some(hash), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(PasswordHashError::Format);
        };
        if scheme != ARGON2ID {
            return Err(PasswordHashError::UnknownScheme(scheme.into()));
        }
        let salt = STANDARD.decode(salt).map_err(|_| PasswordHashError::Base64)?;
        let hash = STANDARD.decode(hash).map_err(|_| PasswordHashError::Base64)?;
        if salt.len() < 8 || hash.len() != HASH_LEN {
            return Err(PasswordHashError::Format);
        }
        Ok(PasswordHash {
            scheme: scheme.into(),
            salt,
            hash,
        })
    }
}

impl std::fmt::Display for PasswordHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.scheme,
            STANDARD.encode(&self.salt),
            STANDARD.encode(&self.hash)
        )
    }
}

/// Burns the same work as a real verification; used when the user has
/// no password entry so timing does not reveal that.
pub(crate) fn dummy_verify(password: &str) {
    let _ = derive(password.as_bytes(), &[0u8; SALT_LEN]);
}

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use jsonwebtoken::{Algorithm, DecodingKey, EncodingKey};
use rsa::pkcs1::EncodeRsaPrivateKey;
use ssh_key::private::{KeypairData, RsaKeypair};
use ssh_key::{PrivateKey, PublicKey};

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("unsupported key algorithm {0}")]
    Unsupported(String),
    #[error("private key is encrypted; decrypt it first")]
    Encrypted,
    #[error("invalid key: {0}")]
    Invalid(String),
    #[error("cannot read key file: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ssh_key::Error> for KeyError {
    fn from(e: ssh_key::Error) -> Self {
        KeyError::Invalid(e.to_string())
    }
}

// PKCS#8 v1 wrapper for a raw Ed25519 seed.
const ED25519_PKCS8_PREFIX: [u8; 16] = [
    0x30, 0x2e, 0x02, 0x01, 0x00, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x70, 0x04, 0x22, 0x04, 0x20,
];

/// A user's signing key for public-key authentication.
#[derive(Clone)]
pub struct ClientKey {
    key: PrivateKey,
}

impl std::fmt::Debug for ClientKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientKey")
            .field("algorithm", &self.key.algorithm().as_str())
            .finish_non_exhaustive()
    }
}

impl ClientKey {
    pub fn new(key: PrivateKey) -> Result<Self, KeyError> {
        if key.is_encrypted() {
            return Err(KeyError::Encrypted);
        }
        jwt_algorithm(key.public_key())?;
        Ok(ClientKey { key })
    }

    pub fn generate_ed25519() -> Self {
        let key = PrivateKey::random(&mut rand::rngs::OsRng, ssh_key::Algorithm::Ed25519)
            .expect("ed25519 key generation");
        ClientKey { key }
    }

    pub fn generate_rsa(bits: usize) -> Result<Self, KeyError> {
        let pair = RsaKeypair::random(&mut rand::rngs::OsRng, bits)?;
        let key = PrivateKey::new(KeypairData::from(pair), "")?;
        Ok(ClientKey { key })
    }

    pub fn from_openssh(text: &str) -> Result<Self, KeyError> {
        Self::new(PrivateKey::from_openssh(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, KeyError> {
        Self::from_openssh(&std::fs::read_to_string(path)?)
    }

    pub fn to_openssh(&self) -> Result<String, KeyError> {
        Ok(self.key.to_openssh(ssh_key::LineEnding::LF)?.to_string())
    }

    pub fn algorithm(&self) -> Algorithm {
        jwt_algorithm(self.key.public_key()).expect("checked at construction")
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public_key()
    }

    /// Public key in authorized-keys form, without a comment.
    pub fn authorized_key_line(&self) -> String {
        authorized_key_line(self.key.public_key())
    }

    pub(crate) fn encoding_key(&self) -> Result<EncodingKey, KeyError> {
        match self.key.key_data() {
            KeypairData::Ed25519(pair) => {
                let mut der = ED25519_PKCS8_PREFIX.to_vec();
                der.extend_from_slice(&pair.private.to_bytes());
                Ok(EncodingKey::from_ed_der(&der))
            }
            KeypairData::Rsa(pair) => {
                let int = |m: &ssh_key::Mpint| {
                    rsa::BigUint::from_bytes_be(m.as_positive_bytes().unwrap_or(&[]))
                };
                let rsa_key = rsa::RsaPrivateKey::from_components(
                    int(&pair.public.n),
                    int(&pair.public.e),
                    int(&pair.private.d),
                    vec![int(&pair.private.p), int(&pair.private.q)],
                )
                .map_err(|e| KeyError::Invalid(e.to_string()))?;
                let der = rsa_key
                    .to_pkcs1_der()
                    .map_err(|e| KeyError::Invalid(e.to_string()))?;
                Ok(EncodingKey::from_rsa_der(der.as_bytes()))
            }
            other => Err(KeyError::Unsupported(
                other
                    .algorithm()
                    .map(|a| a.to_string())
                    .unwrap_or_else(|_| "unknown".into()),
            )),
        }
    }
}

pub fn authorized_key_line(key: &PublicKey) -> String {
    let mut k = key.clone();
    k.set_comment("");
    k.to_openssh()
        .expect("encoding a parsed public key")
        .trim_end()
        .to_string()
}

/// JWT `alg` for an SSH public key type. Only Ed25519 and RSA are accepted.
pub fn jwt_algorithm(key: &PublicKey) -> Result<Algorithm, KeyError> {
    match key.algorithm() {
        ssh_key::Algorithm::Ed25519 => Ok(Algorithm::EdDSA),
        ssh_key::Algorithm::Rsa { .. } => Ok(Algorithm::RS256),
        other => Err(KeyError::Unsupported(other.to_string())),
    }
}

pub(crate) fn decoding_key(key: &PublicKey) -> Result<(DecodingKey, Algorithm), KeyError> {
    let alg = jwt_algorithm(key)?;
    let dk = match key.key_data() {
        ssh_key::public::KeyData::Ed25519(pk) => {
            DecodingKey::from_ed_components(&URL_SAFE_NO_PAD.encode(pk.0))
                .map_err(|e| KeyError::Invalid(e.to_string()))?
        }
        ssh_key::public::KeyData::Rsa(pk) => {
            let n = pk
                .n
                .as_positive_bytes()
                .ok_or_else(|| KeyError::Invalid("negative RSA modulus".into()))?;
            let e = pk
                .e
                .as_positive_bytes()
                .ok_or_else(|| KeyError::Invalid("negative RSA exponent".into()))?;
            DecodingKey::from_rsa_components(&URL_SAFE_NO_PAD.encode(n), &URL_SAFE_NO_PAD.encode(e))
                .map_err(|e| KeyError::Invalid(e.to_string()))?
        }
        _ => unreachable!("jwt_algorithm filtered key types"),
    };
    Ok((dk, alg))
}

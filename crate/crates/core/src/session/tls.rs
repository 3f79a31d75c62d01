//! TLS material and QUIC endpoint configuration.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName, UnixTime};
use rustls::{DigitallySignedStruct, SignatureScheme};
use sha2::{Digest, Sha256};

pub const ALPN_H3: &[u8] = b"h3";

#[derive(Debug, thiserror::Error)]
pub enum TlsError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("no certificate found in {0}")]
    NoCertificate(String),
    #[error("no private key found in {0}")]
    NoKey(String),
    #[error("invalid certificate fingerprint {0:?} (expected 64 hex digits)")]
    BadFingerprint(String),
    #[error("certificate generation failed: {0}")]
    Generate(String),
    #[error("TLS configuration: {0}")]
    Config(String),
}

fn read(path: &Path) -> Result<Vec<u8>, TlsError> {
    std::fs::read(path).map_err(|source| TlsError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// A server certificate chain and its private key.
pub struct TlsIdentity {
    pub certs: Vec<CertificateDer<'static>>,
    pub key: PrivateKeyDer<'static>,
}

impl Clone for TlsIdentity {
    fn clone(&self) -> Self {
        TlsIdentity {
            certs: self.certs.clone(),
            key: self.key.clone_key(),
        }
    }
}

impl std::fmt::Debug for TlsIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TlsIdentity")
            .field("fingerprint", &self.fingerprint())
            .finish_non_exhaustive()
    }
}

impl TlsIdentity {
    /// Loads PEM files.
    pub fn load(cert_path: &Path, key_path: &Path) -> Result<Self, TlsError> {
        let cert_pem = read(cert_path)?;
        let certs: Vec<_> = rustls_pemfile::certs(&mut cert_pem.as_slice())
            .filter_map(Result::ok)
            .collect();
        if certs.is_empty() {
            return Err(TlsError::NoCertificate(cert_path.display().to_string()));
        }
        let key_pem = read(key_path)?;
        let key = rustls_pemfile::private_key(&mut key_pem.as_slice())
            .ok()
            .flatten()
            .ok_or_else(|| TlsError::NoKey(key_path.display().to_string()))?;
        Ok(TlsIdentity { certs, key })
    }

    /// Generates a self-signed ECDSA P-256 certificate for `names`.
    pub fn self_signed(names: &[&str]) -> Result<Self, TlsError> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let ck = rcgen::generate_simple_self_signed(names)
            .map_err(|e| TlsError::Generate(e.to_string()))?;
        Ok(TlsIdentity {
            certs: vec![ck.cert.der().clone()],
            key: PrivateKeyDer::Pkcs8(ck.key_pair.serialize_der().into()),
        })
    }

    pub fn cert_pem(&self) -> String {
        self.certs.iter().map(|c| pem("CERTIFICATE", c)).collect()
    }

    pub fn key_pem(&self) -> String {
        pem("PRIVATE KEY", self.key.secret_der())
    }

    /// SHA-256 of the leaf certificate, lowercase hex.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.certs[0])
    }
}

fn pem(label: &str, der: &[u8]) -> String {
    use base64::Engine;
    let b64 = base64::engine::general_purpose::STANDARD.encode(der);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

pub fn fingerprint(cert: &CertificateDer<'_>) -> String {
    hex::encode(Sha256::digest(cert.as_ref()))
}

/// How the client authenticates the server.
#[derive(Debug, Clone)]
pub enum Trust {
    /// Trust anchors, e.g. from a CA bundle file.
    Roots(Vec<CertificateDer<'static>>),
    /// Accept exactly the leaf certificate with this SHA-256 fingerprint.
    Pin([u8; 32]),
}

impl Trust {
    pub fn ca_file(path: &Path) -> Result<Self, TlsError> {
        let pem = read(path)?;
        let certs: Vec<_> = rustls_pemfile::certs(&mut pem.as_slice())
            .filter_map(Result::ok)
            .collect();
        if certs.is_empty() {
            return Err(TlsError::NoCertificate(path.display().to_string()));
        }
        Ok(Trust::Roots(certs))
    }

    /// The platform's trust store.
    pub fn system() -> Result<Self, TlsError> {
        let found = rustls_native_certs::load_native_certs();
        if found.certs.is_empty() {
            let why = found
                .errors
                .first()
                .map_or_else(|| "no system CA certificates".to_string(), |e| e.to_string());
            return Err(TlsError::Config(why));
        }
        Ok(Trust::Roots(found.certs))
    }

    /// Parses a hex fingerprint; `:` separators are allowed.
    pub fn pin(fingerprint: &str) -> Result<Self, TlsError> {
        let cleaned: String = fingerprint
            .trim()
            .trim_start_matches("sha256:")
            .chars()
            .filter(|c| *c != ':')
            .collect();
        let raw = hex::decode(&cleaned).map_err(|_| TlsError::BadFingerprint(fingerprint.into()))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| TlsError::BadFingerprint(fingerprint.into()))?;
        Ok(Trust::Pin(arr))
    }
}

#[derive(Debug)]
struct PinnedCertVerifier {
    pin: [u8; 32],
    provider: Arc<CryptoProvider>,
}

impl ServerCertVerifier for PinnedCertVerifier {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        let digest = Sha256::digest(end_entity.as_ref());
        if subtle::ConstantTimeEq::ct_eq(digest.as_slice(), &self.pin[..]).into() {
            Ok(ServerCertVerified::assertion())
        } else {
            Err(rustls::Error::General(
                "server certificate does not match the pinned fingerprint".into(),
            ))
        }
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls12_signature(
            message,
            cert,
            dss,
            &self.provider.signature_verification_algorithms,
        )
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls13_signature(
            message,
            cert,
            dss,
            &self.provider.signature_verification_algorithms,
        )
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.provider
            .signature_verification_algorithms
            .supported_schemes()
    }
}

/// QUIC transport knobs shared by client and server.
#[derive(Debug, Clone)]
pub struct TransportOptions {
    pub initial_mtu: u16,
    pub idle_timeout: Duration,
    pub keep_alive: Option<Duration>,
    /// Congestion window before any feedback, in bytes.
    pub initial_window: u64,
}

/// Lets a typical command's whole output leave in the first flight
/// instead of over several slow-start round trips.
pub const DEFAULT_INITIAL_WINDOW: u64 = 256 * 1024;

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            initial_mtu: 1200,
            idle_timeout: Duration::from_secs(60),
            keep_alive: Some(Duration::from_secs(15)),
            initial_window: DEFAULT_INITIAL_WINDOW,
        }
    }
}

impl TransportOptions {
    /// Settings for loopback and LAN paths where a 1452-byte MTU is safe.
    pub fn lan() -> Self {
        TransportOptions {
            initial_mtu: 1452,
            ..Default::default()
        }
    }

    pub(crate) fn transport_config(&self, bidi_streams: u32) -> quinn::TransportConfig {
        let mut t = quinn::TransportConfig::default();
        t.initial_mtu(self.initial_mtu.max(1200));
        t.max_concurrent_bidi_streams(bidi_streams.into());
        t.max_concurrent_uni_streams(8u32.into());
        t.datagram_receive_buffer_size(Some(8 << 20));
        t.datagram_send_buffer_size(8 << 20);
        if let Ok(idle) = quinn::IdleTimeout::try_from(self.idle_timeout) {
            t.max_idle_timeout(Some(idle));
        }
        t.keep_alive_interval(self.keep_alive);
        let mut cc = quinn::congestion::CubicConfig::default();
        cc.initial_window(self.initial_window);
        t.congestion_controller_factory(Arc::new(cc));
        t
    }
}

pub(crate) fn client_config(
    trust: &Trust,
    transport: &TransportOptions,
) -> Result<quinn::ClientConfig, TlsError> {
    let provider = provider();
    let builder = rustls::ClientConfig::builder_with_provider(provider.clone())
        .with_protocol_versions(&[&rustls::version::TLS13])
        .map_err(|e| TlsError::Config(e.to_string()))?;
    let mut crypto = match trust {
        Trust::Roots(certs) => {
            let mut roots = rustls::RootCertStore::empty();
            let (added, _ignored) = roots.add_parsable_certificates(certs.iter().cloned());
            if added == 0 {
                return Err(TlsError::Config("no usable trust anchors".into()));
            }
            builder.with_root_certificates(roots).with_no_client_auth()
        }
        Trust::Pin(pin) => builder
            .dangerous()
            .with_custom_certificate_verifier(Arc::new(PinnedCertVerifier {
                pin: *pin,
                provider: provider.clone(),
            }))
            .with_no_client_auth(),
    };
    crypto.alpn_protocols = vec![ALPN_H3.to_vec()];
    let quic = quinn::crypto::rustls::QuicClientConfig::try_from(crypto)
        .map_err(|e| TlsError::Config(e.to_string()))?;
    let mut cfg = quinn::ClientConfig::new(Arc::new(quic));
    cfg.transport_config(Arc::new(transport.transport_config(0)));
    Ok(cfg)
}

pub(crate) fn server_config(
    identity: &TlsIdentity,
    transport: &TransportOptions,
    max_channels: u32,
) -> Result<quinn::ServerConfig, TlsError> {
    let mut crypto = rustls::ServerConfig::builder_with_provider(provider())
        .with_protocol_versions(&[&rustls::version::TLS13])
        .map_err(|e| TlsError::Config(e.to_string()))?
        .with_no_client_auth()
        .with_single_cert(identity.certs.clone(), identity.key.clone_key())
        .map_err(|e| TlsError::Config(e.to_string()))?;
    crypto.alpn_protocols = vec![ALPN_H3.to_vec()];
    crypto.max_early_data_size = 0;
    let quic = quinn::crypto::rustls::QuicServerConfig::try_from(crypto)
        .map_err(|e| TlsError::Config(e.to_string()))?;
    let mut cfg = quinn::ServerConfig::with_crypto(Arc::new(quic));
    // one stream for the CONNECT request plus the channels
    cfg.transport_config(Arc::new(transport.transport_config(max_channels.saturating_add(1))));
    Ok(cfg)
}

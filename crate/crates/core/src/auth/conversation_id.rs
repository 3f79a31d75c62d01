use base64::engine::general_purpose::STANDARD;
use base64::Engine;

/// TLS exporter label used to derive conversation identifiers.
pub const EXPORTER_LABEL: &[u8] = b"EXPORTER-SSH3";

pub const CONVERSATION_ID_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("TLS keying material exporter unavailable: {0}")]
pub struct ExporterUnavailable(pub String);

/// Identifier shared by both endpoints of one connection, derived from the
/// TLS session's exported keying material.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConversationId([u8; CONVERSATION_ID_LEN]);

impl ConversationId {
    pub fn from_bytes(bytes: [u8; CONVERSATION_ID_LEN]) -> Self {
        ConversationId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; CONVERSATION_ID_LEN] {
        &self.0
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.0)
    }

    pub fn from_base64(s: &str) -> Option<Self> {
        let raw = STANDARD.decode(s).ok()?;
        Some(ConversationId(raw.try_into().ok()?))
    }
}

impl std::fmt::Debug for ConversationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConversationId({})", hex::encode(&self.0[..8]))
    }
}

impl std::fmt::Display for ConversationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Derives the conversation id from a TLS exporter taking
/// `(label, context, length)`.
pub fn derive_conversation_id<F>(exporter: F) -> Result<ConversationId, ExporterUnavailable>
where
    F: FnOnce(&[u8], &[u8], usize) -> Result<Vec<u8>, ExporterUnavailable>,
{
    let out = exporter(EXPORTER_LABEL, &[], CONVERSATION_ID_LEN)?;
    let bytes: [u8; CONVERSATION_ID_LEN] = out.try_into().map_err(|v: Vec<u8>| {
        ExporterUnavailable(format!("exporter returned {} bytes", v.len()))
    })?;
    Ok(ConversationId(bytes))
}

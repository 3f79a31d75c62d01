//! The small slice of HTTP/3 that quicshell needs: control-stream
//! SETTINGS, HEADERS frames for the Extended CONNECT exchange, and the
//! stream header that binds extra bidirectional streams to a conversation.

mod qpack;

pub use qpack::{decode_field_section, encode_field_section};

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};

use crate::wire::{self, io::StreamReadError, put_varint, VarInt};

pub const FRAME_DATA: u64 = 0x00;
pub const FRAME_HEADERS: u64 = 0x01;
pub const FRAME_SETTINGS: u64 = 0x04;
pub const FRAME_GOAWAY: u64 = 0x07;

pub const STREAM_CONTROL: u64 = 0x00;
pub const STREAM_PUSH: u64 = 0x01;
pub const STREAM_QPACK_ENCODER: u64 = 0x02;
pub const STREAM_QPACK_DECODER: u64 = 0x03;

pub const SETTINGS_QPACK_MAX_TABLE_CAPACITY: u64 = 0x01;
pub const SETTINGS_MAX_FIELD_SECTION_SIZE: u64 = 0x06;
pub const SETTINGS_ENABLE_CONNECT_PROTOCOL: u64 = 0x08;
pub const SETTINGS_H3_DATAGRAM: u64 = 0x33;

/// First value on every channel stream, followed by the stream id of the
/// CONNECT request that owns the conversation.
pub const CHANNEL_STREAM_SIGNAL: u64 = 0xaf36_27e6;

/// The `:protocol` token of the Extended CONNECT request.
pub const PROTOCOL_TOKEN: &str = "ssh3";

pub const H3_NO_ERROR: u32 = 0x100;
pub const H3_GENERAL_PROTOCOL_ERROR: u32 = 0x101;
pub const H3_FRAME_UNEXPECTED: u32 = 0x105;
pub const H3_SETTINGS_ERROR: u32 = 0x109;
pub const H3_MISSING_SETTINGS: u32 = 0x10a;
pub const H3_REQUEST_REJECTED: u32 = 0x10b;

const MAX_CONTROL_FRAME: u64 = 64 * 1024;

#[derive(Debug, Error)]
pub enum H3Error {
    #[error("truncated HTTP/3 input")]
    Truncated,
    #[error("malformed HTTP/3 input: {0}")]
    Malformed(&'static str),
    #[error("unsupported field encoding: {0}")]
    UnsupportedEncoding(&'static str),
    #[error("frame of type {0:#x} too large")]
    FrameTooLarge(u64),
    #[error("unexpected frame type {0:#x}")]
    UnexpectedFrame(u64),
    #[error("peer did not enable {0}")]
    MissingSetting(&'static str),
    #[error("stream ended before a complete frame")]
    UnexpectedEnd,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<StreamReadError> for H3Error {
    fn from(e: StreamReadError) -> Self {
        match e {
            StreamReadError::Io(e) => H3Error::Io(e),
            StreamReadError::Wire(_) => H3Error::Malformed("bad variable-length integer"),
            StreamReadError::UnexpectedEnd => H3Error::UnexpectedEnd,
        }
    }
}

pub fn encode_frame(frame_type: u64, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(payload.len() + 8);
    put_varint(&mut buf, VarInt::new(frame_type).expect("frame type in range"));
    put_varint(&mut buf, VarInt::new(payload.len() as u64).expect("length in range"));
    buf.extend_from_slice(payload);
    buf
}

/// Reads one `(type, payload)` frame. `Ok(None)` on clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<(u64, Vec<u8>)>, H3Error> {
    let Some(ty) = wire::io::read_varint(r).await? else {
        return Ok(None);
    };
    let len = wire::io::read_varint(r)
        .await?
        .ok_or(H3Error::UnexpectedEnd)?;
    if len > MAX_CONTROL_FRAME {
        return Err(H3Error::FrameTooLarge(ty));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            H3Error::UnexpectedEnd
        } else {
            H3Error::Io(e)
        }
    })?;
    Ok(Some((ty, payload)))
}

/// Reserved "grease" frame and setting identifiers (0x1f * N + 0x21).
pub fn is_reserved(id: u64) -> bool {
    id >= 0x21 && (id - 0x21).is_multiple_of(0x1f)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub pairs: Vec<(u64, u64)>,
}

impl Settings {
    /// Settings every quicshell endpoint sends.
    pub fn local() -> Self {
        Settings {
            pairs: vec![
                (SETTINGS_QPACK_MAX_TABLE_CAPACITY, 0),
                (SETTINGS_ENABLE_CONNECT_PROTOCOL, 1),
                (SETTINGS_H3_DATAGRAM, 1),
            ],
        }
    }

    pub fn get(&self, id: u64) -> Option<u64> {
        self.pairs.iter().find(|(k, _)| *k == id).map(|(_, v)| *v)
    }

    /// Checks the peer negotiated Extended CONNECT and HTTP datagrams.
    pub fn require_extensions(&self) -> Result<(), H3Error> {
        if self.get(SETTINGS_ENABLE_CONNECT_PROTOCOL) != Some(1) {
            return Err(H3Error::MissingSetting("Extended CONNECT (SETTINGS_ENABLE_CONNECT_PROTOCOL)"));
        }
        if self.get(SETTINGS_H3_DATAGRAM) != Some(1) {
            return Err(H3Error::MissingSetting("HTTP datagrams (SETTINGS_H3_DATAGRAM)"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for (k, v) in &self.pairs {
            put_varint(&mut payload, VarInt::new(*k).expect("setting id"));
            put_varint(&mut payload, VarInt::new(*v).expect("setting value"));
        }
        encode_frame(FRAME_SETTINGS, &payload)
    }

    pub fn decode_payload(payload: &[u8]) -> Result<Self, H3Error> {
        let mut pairs = Vec::new();
        let mut rest = payload;
        while !rest.is_empty() {
            let (k, a) = wire::decode_varint(rest).map_err(|_| H3Error::Malformed("settings"))?;
            let (v, b) =
                wire::decode_varint(&rest[a..]).map_err(|_| H3Error::Malformed("settings"))?;
            if pairs.iter().any(|(id, _)| *id == k) {
                return Err(H3Error::Malformed("duplicate setting"));
            }
            pairs.push((k, v));
            rest = &rest[a + b..];
        }
        Ok(Settings { pairs })
    }
}

/// Control stream bytes: stream type followed by SETTINGS.
pub fn control_stream_preface() -> Vec<u8> {
    let mut buf = Vec::new();
    put_varint(&mut buf, VarInt::from_u32(STREAM_CONTROL as u32));
    buf.extend(Settings::local().encode());
    buf
}

/// Reads the SETTINGS frame that must open a control stream (after the
/// stream type has been consumed).
pub async fn read_settings<R: AsyncRead + Unpin>(r: &mut R) -> Result<Settings, H3Error> {
    match read_frame(r).await? {
        Some((FRAME_SETTINGS, payload)) => Settings::decode_payload(&payload),
        Some((other, _)) => Err(H3Error::UnexpectedFrame(other)),
        None => Err(H3Error::UnexpectedEnd),
    }
}

/// Header of a channel stream: signal value and owning CONNECT stream id.
pub fn channel_stream_header(connect_stream_id: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    put_varint(&mut buf, VarInt::new(CHANNEL_STREAM_SIGNAL).expect("signal"));
    put_varint(&mut buf, VarInt::new(connect_stream_id).expect("stream id"));
    buf
}

/// Prefix of every HTTP datagram belonging to the given CONNECT stream.
pub fn datagram_prefix(connect_stream_id: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    put_varint(&mut buf, VarInt::new(connect_stream_id / 4).expect("stream id"));
    buf
}

/// The head of an Extended CONNECT request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub method: String,
    pub protocol: Option<String>,
    pub scheme: String,
    pub authority: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
}

impl RequestHead {
    pub fn connect(authority: &str, path: &str) -> Self {
        RequestHead {
            method: "CONNECT".into(),
            protocol: Some(PROTOCOL_TOKEN.into()),
            scheme: "https".into(),
            authority: authority.into(),
            path: path.into(),
            headers: Vec::new(),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Path without the query string.
    pub fn path_only(&self) -> &str {
        self.path.split_once('?').map_or(&self.path, |(p, _)| p)
    }

    pub fn query_param(&self, key: &str) -> Option<String> {
        let (_, query) = self.path.split_once('?')?;
        url_decode_pairs(query)
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut fields = vec![(":method".to_string(), self.method.clone())];
        if let Some(p) = &self.protocol {
            fields.push((":protocol".into(), p.clone()));
        }
        fields.push((":scheme".into(), self.scheme.clone()));
        fields.push((":authority".into(), self.authority.clone()));
        fields.push((":path".into(), self.path.clone()));
        fields.extend(self.headers.iter().cloned());
        encode_frame(FRAME_HEADERS, &encode_field_section(&fields))
    }

    pub fn from_fields(fields: Vec<(String, String)>) -> Result<Self, H3Error> {
        let mut head = RequestHead {
            method: String::new(),
            protocol: None,
            scheme: String::new(),
            authority: String::new(),
            path: String::new(),
            headers: Vec::new(),
        };
        for (k, v) in fields {
            match k.as_str() {
                ":method" => head.method = v,
                ":protocol" => head.protocol = Some(v),
                ":scheme" => head.scheme = v,
                ":authority" => head.authority = v,
                ":path" => head.path = v,
                _ if k.starts_with(':') => return Err(H3Error::Malformed("unknown pseudo-header")),
                _ => head.headers.push((k.to_ascii_lowercase(), v)),
            }
        }
        if head.method.is_empty() || head.path.is_empty() {
            return Err(H3Error::Malformed("missing :method or :path"));
        }
        Ok(head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseHead {
    pub status: u16,
    pub headers: Vec<(String, String)>,
}

impl ResponseHead {
    pub fn new(status: u16) -> Self {
        ResponseHead {
            status,
            headers: Vec::new(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_ascii_lowercase(), value.into()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut fields = vec![(":status".to_string(), self.status.to_string())];
        fields.extend(self.headers.iter().cloned());
        encode_frame(FRAME_HEADERS, &encode_field_section(&fields))
    }

    pub fn from_fields(fields: Vec<(String, String)>) -> Result<Self, H3Error> {
        let mut status = None;
        let mut headers = Vec::new();
        for (k, v) in fields {
            if k == ":status" {
                status = Some(v.parse().map_err(|_| H3Error::Malformed(":status"))?);
            } else if k.starts_with(':') {
                return Err(H3Error::Malformed("unknown pseudo-header"));
            } else {
                headers.push((k, v));
            }
        }
        Ok(ResponseHead {
            status: status.ok_or(H3Error::Malformed("missing :status"))?,
            headers,
        })
    }
}

/// Reads frames until a HEADERS frame arrives, skipping reserved types.
pub async fn read_headers<R: AsyncRead + Unpin>(
    r: &mut R,
) -> Result<Vec<(String, String)>, H3Error> {
    loop {
        match read_frame(r).await? {
            Some((FRAME_HEADERS, payload)) => return decode_field_section(&payload),
            Some((ty, _)) if is_reserved(ty) => continue,
            Some((ty, _)) => return Err(H3Error::UnexpectedFrame(ty)),
            None => return Err(H3Error::UnexpectedEnd),
        }
    }
}

fn hex_val(b: u8) -> Option<u8> {
    (b as char).to_digit(16).map(|d| d as u8)
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hi = bytes.get(i + 1).and_then(|b| hex_val(*b));
                let lo = bytes.get(i + 2).and_then(|b| hex_val(*b));
                if let (Some(h), Some(l)) = (hi, lo) {
                    out.push(h << 4 | l);
                    i += 3;
                    continue;
                }
                out.push(b'%');
            }
            b'+' => out.push(b' '),
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn url_decode_pairs(query: &str) -> Vec<(String, String)> {
    query
        .split('&')
        .filter(|s| !s.is_empty())
        .map(|pair| match pair.split_once('=') {
            Some((k, v)) => (percent_decode(k), percent_decode(v)),
            None => (percent_decode(pair), String::new()),
        })
        .collect()
}

/// Percent-encodes a query component value.
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

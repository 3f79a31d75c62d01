//! Conversations over HTTP/3 Extended CONNECT and the channels
//! multiplexed on their QUIC streams and datagrams.

mod channel;
mod client;
mod control;
mod conversation;
mod server;
pub mod tls;

pub use channel::{Channel, ChannelReceiver, ChannelSender, INBOUND_QUEUE};
pub use client::{connect, ClientOptions, Destination, DestinationError, DEFAULT_PATH, DEFAULT_PORT};
pub use conversation::{Conversation, DatagramError, Role, RouteOutcome, DATAGRAM_QUEUE};
pub use server::{
    server_accept, Acceptance, ChannelHandler, Server, ServerEvent, ServerOptions,
    MAX_CHANNELS_HEADER,
};
pub use tls::{TlsError, TlsIdentity, TransportOptions, Trust, DEFAULT_INITIAL_WINDOW};

use crate::auth::ExporterUnavailable;
use crate::h3::H3Error;
use crate::wire::WireError;

/// Application error codes carried by stream resets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloseReason {
    Normal,
    ProtocolError,
    UnknownUser,
    SpawnFailed,
    Hangup,
    Refused,
    Dns,
    Timeout,
    ChannelLimit,
    Unsupported,
    Other(u64),
}

impl CloseReason {
    pub fn code(self) -> u64 {
        match self {
            CloseReason::Normal => 0x00,
            CloseReason::ProtocolError => 0x01,
            CloseReason::UnknownUser => 0x02,
            CloseReason::SpawnFailed => 0x03,
            CloseReason::Hangup => 0x04,
            CloseReason::Refused => 0x10,
            CloseReason::Dns => 0x11,
            CloseReason::Timeout => 0x12,
            CloseReason::ChannelLimit => 0x20,
            CloseReason::Unsupported => 0x21,
            CloseReason::Other(c) => c,
        }
    }

    pub fn from_code(code: u64) -> Self {
        match code {
            0x00 => CloseReason::Normal,
            0x01 => CloseReason::ProtocolError,
            0x02 => CloseReason::UnknownUser,
            0x03 => CloseReason::SpawnFailed,
            0x04 => CloseReason::Hangup,
            0x10 => CloseReason::Refused,
            0x11 => CloseReason::Dns,
            0x12 => CloseReason::Timeout,
            0x20 => CloseReason::ChannelLimit,
            0x21 => CloseReason::Unsupported,
            c => CloseReason::Other(c),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CloseReason::Normal => "normal",
            CloseReason::ProtocolError => "protocol-error",
            CloseReason::UnknownUser => "unknown-user",
            CloseReason::SpawnFailed => "spawn-failed",
            CloseReason::Hangup => "hangup",
            CloseReason::Refused => "refused",
            CloseReason::Dns => "dns",
            CloseReason::Timeout => "timeout",
            CloseReason::ChannelLimit => "channel-limit",
            CloseReason::Unsupported => "unsupported",
            CloseReason::Other(_) => "other",
        }
    }
}

impl std::fmt::Display for CloseReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CloseReason::Other(c) => write!(f, "code {c:#x}"),
            r => f.write_str(r.as_str()),
        }
    }
}

impl From<CloseReason> for quinn::VarInt {
    fn from(r: CloseReason) -> Self {
        quinn::VarInt::from_u64(r.code()).unwrap_or(quinn::VarInt::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("channel reset by peer ({0})")]
    Reset(CloseReason),
    #[error("peer stopped reading the channel ({0})")]
    Stopped(CloseReason),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("protocol violation on channel: {0}")]
    Protocol(String),
    #[error("channel already closed")]
    Closed,
    #[error("channel limit of {0} reached")]
    Limit(u32),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("authentication failed; server accepts: {}", .schemes.join(", "))]
    Unauthorized { schemes: Vec<String> },
    #[error("no such resource on the server (404)")]
    NotFound,
    #[error("unexpected HTTP status {0}")]
    UnexpectedStatus(u16),
    #[error("timed out {0}")]
    Timeout(&'static str),
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error(transparent)]
    Tls(#[from] TlsError),
    #[error("QUIC connect: {0}")]
    Connect(#[from] quinn::ConnectError),
    #[error("QUIC connection: {0}")]
    Connection(#[from] quinn::ConnectionError),
    #[error("HTTP/3: {0}")]
    H3(#[from] H3Error),
    #[error(transparent)]
    Exporter(#[from] ExporterUnavailable),
    #[error(transparent)]
    Credential(#[from] crate::auth::CredentialError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("stream write failed: {0}")]
    Write(#[from] quinn::WriteError),
}

impl SessionError {
    /// Auth schemes advertised by the server on a 401.
    pub fn advertised_schemes(&self) -> Option<&[String]> {
        match self {
            SessionError::Unauthorized { schemes } => Some(schemes),
            _ => None,
        }
    }
}

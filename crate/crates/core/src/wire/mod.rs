//! Encoding and decoding of everything quicshell puts on the wire.
//!
//! A channel stream carries a [`ChannelPreamble`] followed by frames. Each
//! frame is `total_length:VarInt` followed by `type_code:VarInt` and the
//! message fields, so receivers can skip message types they do not know.
//! UDP forwarding uses [`UdpFrame`]s carried in QUIC datagrams.

mod message;
mod preamble;
mod udp;
mod varint;

pub mod io;

pub use message::{
    decode_frame, decode_message, encode_frame, encode_message, DataKind, Frame, Message,
    MAX_DATA_PAYLOAD, MAX_FRAME_LEN,
};
pub use preamble::{decode_preamble, encode_preamble, ChannelKind, ChannelPreamble};
pub use udp::{decode_udp_frame, encode_udp_frame, UdpFrame};
pub use varint::{announced_len, decode_varint, encode_varint, put_varint, VarInt, MAX_VARINT};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    /// The input ends before the value does.
    #[error("truncated input: need {needed} more byte(s)")]
    Incomplete { needed: usize },
    #[error("malformed input: {0}")]
    Malformed(&'static str),
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown message type {0:#x}")]
    UnknownMessage(u64),
    #[error("unknown channel type {0:?}")]
    UnknownChannelType(String),
    #[error("value {0} does not fit in a variable-length integer")]
    VarIntOutOfRange(u64),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("port {0} outside 1..=65535")]
    InvalidPort(u64),
    #[error("data kind {0} is not stdin, stdout or stderr")]
    InvalidDataKind(u64),
}

impl WireError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, WireError::Incomplete { .. })
    }
}

/// Bounds-checked reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub(crate) fn varint(&mut self) -> Result<u64, WireError> {
        let (v, n) = decode_varint(self.remaining())?;
        self.pos += n;
        Ok(v)
    }

    pub(crate) fn bytes(&mut self, len: u64) -> Result<&'a [u8], WireError> {
        let rest = self.remaining();
        if (rest.len() as u64) < len {
            return Err(WireError::Incomplete {
                needed: (len - rest.len() as u64).min(usize::MAX as u64) as usize,
            });
        }
        let len = len as usize;
        self.pos += len;
        Ok(&rest[..len])
    }

    pub(crate) fn prefixed_bytes(&mut self, max: usize) -> Result<&'a [u8], WireError> {
        let len = self.varint()?;
        if len > max as u64 {
            return Err(WireError::PayloadTooLarge {
                len: len.min(usize::MAX as u64) as usize,
                max,
            });
        }
        self.bytes(len)
    }

    pub(crate) fn string(&mut self) -> Result<String, WireError> {
        let raw = self.prefixed_bytes(MAX_STRING_LEN)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| WireError::InvalidUtf8)
    }

    pub(crate) fn bool(&mut self) -> Result<bool, WireError> {
        match self.bytes(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Malformed("boolean must be 0 or 1")),
        }
    }
}

/// Upper bound for any string field.
pub const MAX_STRING_LEN: usize = 64 * 1024;

pub(crate) fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_varint(buf, VarInt::new(bytes.len() as u64).expect("slice length fits"));
    buf.extend_from_slice(bytes);
}

pub(crate) fn put_string(buf: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    if s.len() > MAX_STRING_LEN {
        return Err(WireError::PayloadTooLarge {
            len: s.len(),
            max: MAX_STRING_LEN,
        });
    }
    put_bytes(buf, s.as_bytes());
    Ok(())
}

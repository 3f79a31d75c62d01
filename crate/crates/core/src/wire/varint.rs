//! QUIC-style variable-length integers.
//!
//! The two most significant bits of the first byte select the encoded
//! length (1, 2, 4 or 8 bytes); the remaining bits carry the value in
//! network byte order.

use super::WireError;

/// Largest value representable by a variable-length integer (2^62 - 1).
pub const MAX_VARINT: u64 = (1 << 62) - 1;

/// An unsigned integer in `[0, 2^62)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VarInt(u64);

impl VarInt {
    pub const MAX: VarInt = VarInt(MAX_VARINT);

    pub fn new(value: u64) -> Result<Self, WireError> {
        if value > MAX_VARINT {
            return Err(WireError::VarIntOutOfRange(value));
        }
        Ok(VarInt(value))
    }

    pub const fn from_u32(value: u32) -> Self {
        VarInt(value as u64)
    }

    pub const fn into_inner(self) -> u64 {
        self.0
    }

    /// Number of bytes of the minimal encoding.
    pub const fn encoded_len(self) -> usize {
        encoded_len(self.0)
    }
}

impl From<u32> for VarInt {
    fn from(v: u32) -> Self {
        VarInt::from_u32(v)
    }
}

impl From<VarInt> for u64 {
    fn from(v: VarInt) -> Self {
        v.0
    }
}

impl TryFrom<u64> for VarInt {
    type Error = WireError;

    fn try_from(v: u64) -> Result<Self, WireError> {
        VarInt::new(v)
    }
}

impl std::fmt::Display for VarInt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

pub(crate) const fn encoded_len(value: u64) -> usize {
    if value < (1 << 6) {
        1
    } else if value < (1 << 14) {
        2
    } else if value < (1 << 30) {
        4
    } else {
        8
    }
}

/// Appends the minimal encoding of `v` to `buf`.
pub fn put_varint(buf: &mut Vec<u8>, v: VarInt) {
    let value = v.0;
    match encoded_len(value) {
        1 => buf.push(value as u8),
        2 => buf.extend_from_slice(&((value as u16) | 0x4000).to_be_bytes()),
        4 => buf.extend_from_slice(&((value as u32) | 0x8000_0000).to_be_bytes()),
        _ => buf.extend_from_slice(&(value | 0xC000_0000_0000_0000).to_be_bytes()),
    }
}

/// Encodes `value` using the shortest legal form.
pub fn encode_varint(value: u64) -> Result<Vec<u8>, WireError> {
    let v = VarInt::new(value)?;
    let mut out = Vec::with_capacity(v.encoded_len());
    put_varint(&mut out, v);
    Ok(out)
}

/// Length in bytes announced by the first byte of an encoding.
pub fn announced_len(first: u8) -> usize {
    1 << (first >> 6)
}

/// Decodes one variable-length integer from the front of `bytes`.
///
/// Returns the value and the number of bytes consumed. Non-minimal
/// encodings are accepted.
pub fn decode_varint(bytes: &[u8]) -> Result<(u64, usize), WireError> {
    let Some(&first) = bytes.first() else {
        return Err(WireError::Incomplete { needed: 1 });
    };
    let len = announced_len(first);
    if bytes.len() < len {
        return Err(WireError::Incomplete {
            needed: len - bytes.len(),
        });
    }
    let mut value = u64::from(first & 0x3F);
    for b in &bytes[1..len] {
        value = (value << 8) | u64::from(*b);
    }
    Ok((value, len))
}

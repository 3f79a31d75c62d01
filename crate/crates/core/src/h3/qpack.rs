//! Field-section encoding restricted to literal field lines.
//!
//! The encoder never references the static or dynamic table and never
//! Huffman-codes strings, so the decoder only has to understand that
//! subset. Field sections using table references or Huffman strings are
//! rejected with [`H3Error::UnsupportedEncoding`].

use super::H3Error;

const MAX_FIELD_LEN: usize = 16 * 1024;

/// Prefix-integer encoding with an `n`-bit prefix; `flags` fills the
/// remaining high bits of the first byte.
pub(crate) fn put_prefix_int(buf: &mut Vec<u8>, flags: u8, n: u8, mut value: u64) {
    let max = (1u64 << n) - 1;
    if value < max {
        buf.push(flags | value as u8);
        return;
    }
    buf.push(flags | max as u8);
    value -= max;
    while value >= 128 {
        buf.push((value % 128) as u8 | 0x80);
        value /= 128;
    }
    buf.push(value as u8);
}

pub(crate) fn get_prefix_int(bytes: &[u8], n: u8) -> Result<(u64, usize), H3Error> {
    let first = *bytes.first().ok_or(H3Error::Truncated)?;
    let max = (1u64 << n) - 1;
    let mut value = u64::from(first) & max;
    if value < max {
        return Ok((value, 1));
    }
    let mut shift = 0u32;
    for (i, b) in bytes[1..].iter().enumerate() {
        if shift > 56 {
            return Err(H3Error::Malformed("prefix integer overflow"));
        }
        value += u64::from(b & 0x7f) << shift;
        shift += 7;
        if b & 0x80 == 0 {
            return Ok((value, i + 2));
        }
    }
    Err(H3Error::Truncated)
}

pub fn encode_field_section(fields: &[(String, String)]) -> Vec<u8> {
    // required insert count 0, delta base 0
    let mut buf = vec![0x00, 0x00];
    for (name, value) in fields {
        // literal field line with literal name: 001N H + 3-bit length
        put_prefix_int(&mut buf, 0x20, 3, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        put_prefix_int(&mut buf, 0x00, 7, value.len() as u64);
        buf.extend_from_slice(value.as_bytes());
    }
    buf
}

fn take_str(bytes: &[u8], pos: &mut usize, len: u64) -> Result<String, H3Error> {
    if len > MAX_FIELD_LEN as u64 {
        return Err(H3Error::Malformed("field too long"));
    }
    let end = pos
        .checked_add(len as usize)
        .filter(|e| *e <= bytes.len())
        .ok_or(H3Error::Truncated)?;
    let s = std::str::from_utf8(&bytes[*pos..end])
        .map_err(|_| H3Error::Malformed("field is not UTF-8"))?
        .to_owned();
    *pos = end;
    Ok(s)
}

pub fn decode_field_section(bytes: &[u8]) -> Result<Vec<(String, String)>, H3Error> {
    let (ric, a) = get_prefix_int(bytes, 8)?;
    let (_base, b) = get_prefix_int(bytes.get(a..).ok_or(H3Error::Truncated)?, 7)?;
    if ric != 0 {
        return Err(H3Error::UnsupportedEncoding("dynamic table reference"));
    }
    let mut pos = a + b;
    let mut fields = Vec::new();
    while pos < bytes.len() {
        let first = bytes[pos];
        if first & 0xe0 != 0x20 {
            return Err(H3Error::UnsupportedEncoding("field line references a table"));
        }
        if first & 0x08 != 0 {
            return Err(H3Error::UnsupportedEncoding("Huffman-coded name"));
        }
        let (name_len, n) = get_prefix_int(&bytes[pos..], 3)?;
        pos += n;
        let name = take_str(bytes, &mut pos, name_len)?;
        let vfirst = *bytes.get(pos).ok_or(H3Error::Truncated)?;
        if vfirst & 0x80 != 0 {
            return Err(H3Error::UnsupportedEncoding("Huffman-coded value"));
        }
        let (value_len, n) = get_prefix_int(&bytes[pos..], 7)?;
        pos += n;
        let value = take_str(bytes, &mut pos, value_len)?;
        fields.push((name, value));
    }
    Ok(fields)
}

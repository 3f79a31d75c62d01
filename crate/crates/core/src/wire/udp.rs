use bytes::Bytes;

use super::{decode_varint, put_varint, VarInt, WireError};

/// A forwarded UDP payload tagged with the datagram id of its channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpFrame {
    pub datagram_id: u64,
    pub payload: Bytes,
}

impl UdpFrame {
    pub fn new(datagram_id: u64, payload: impl Into<Bytes>) -> Self {
        UdpFrame {
            datagram_id,
            payload: payload.into(),
        }
    }

    pub fn header_len(datagram_id: u64) -> usize {
        super::varint::encoded_len(datagram_id)
    }
}

/// `datagram_id:VarInt` followed by the raw payload; the datagram boundary
/// delimits the payload.
pub fn encode_udp_frame(f: &UdpFrame) -> Result<Vec<u8>, WireError> {
    let id = VarInt::new(f.datagram_id)?;
    let mut buf = Vec::with_capacity(id.encoded_len() + f.payload.len());
    put_varint(&mut buf, id);
    buf.extend_from_slice(&f.payload);
    Ok(buf)
}

pub fn decode_udp_frame(bytes: &[u8]) -> Result<UdpFrame, WireError> {
    if bytes.is_empty() {
        return Err(WireError::Malformed("empty datagram"));
    }
    let (datagram_id, used) = decode_varint(bytes)?;
    Ok(UdpFrame {
        datagram_id,
        payload: Bytes::copy_from_slice(&bytes[used..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let f = UdpFrame::new(4, vec![0xaa, 0xbb, 0xcc]);
        let enc = encode_udp_frame(&f).unwrap();
        assert_eq!(enc, vec![0x04, 0xaa, 0xbb, 0xcc]);
        assert_eq!(decode_udp_frame(&enc).unwrap(), f);
    }

    #[test]
    fn empty_payload() {
        let f = UdpFrame::new(4, Bytes::new());
        assert_eq!(encode_udp_frame(&f).unwrap(), vec![0x04]);
        assert_eq!(decode_udp_frame(&[0x04]).unwrap(), f);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(decode_udp_frame(&[]).is_err());
        assert!(decode_udp_frame(&[0x80, 0x01]).unwrap_err().is_incomplete());
    }
}

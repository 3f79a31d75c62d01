use super::{put_string, put_varint, Reader, VarInt, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Session,
    DirectTcp,
    DirectUdp,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Session => "session",
            ChannelKind::DirectTcp => "direct-tcp",
            ChannelKind::DirectUdp => "direct-udp",
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First bytes written on every channel stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelPreamble {
    Session,
    DirectTcp {
        host: String,
        port: u16,
    },
    DirectUdp {
        host: String,
        port: u16,
        datagram_id: u64,
    },
}

impl ChannelPreamble {
    pub fn kind(&self) -> ChannelKind {
        match self {
            ChannelPreamble::Session => ChannelKind::Session,
            ChannelPreamble::DirectTcp { .. } => ChannelKind::DirectTcp,
            ChannelPreamble::DirectUdp { .. } => ChannelKind::DirectUdp,
        }
    }

    pub fn datagram_id(&self) -> Option<u64> {
        match self {
            ChannelPreamble::DirectUdp { datagram_id, .. } => Some(*datagram_id),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        match self {
            ChannelPreamble::Session => Ok(()),
            ChannelPreamble::DirectTcp { host, port }
            | ChannelPreamble::DirectUdp { host, port, .. } => {
                if *port == 0 {
                    return Err(WireError::InvalidPort(0));
                }
                if host.is_empty() {
                    return Err(WireError::Malformed("empty target host"));
                }
                if let Some(id) = self.datagram_id() {
                    VarInt::new(id)?;
                }
                Ok(())
            }
        }
    }
}

pub fn encode_preamble(p: &ChannelPreamble) -> Result<Vec<u8>, WireError> {
    p.validate()?;
    let mut buf = Vec::new();
    put_string(&mut buf, p.kind().as_str())?;
    match p {
        ChannelPreamble::Session => {}
        ChannelPreamble::DirectTcp { host, port } => {
            put_string(&mut buf, host)?;
            put_varint(&mut buf, VarInt::from(u32::from(*port)));
        }
        ChannelPreamble::DirectUdp {
            host,
            port,
            datagram_id,
        } => {
            put_string(&mut buf, host)?;
            put_varint(&mut buf, VarInt::from(u32::from(*port)));
            put_varint(&mut buf, VarInt::new(*datagram_id)?);
        }
    }
    Ok(buf)
}

fn read_target(r: &mut Reader<'_>) -> Result<(String, u16), WireError> {
    let host = r.string()?;
    let port = r.varint()?;
    match u16::try_from(port) {
        Ok(p) if p != 0 => Ok((host, p)),
        _ => Err(WireError::InvalidPort(port)),
    }
}

/// Decodes a preamble from the front of `bytes`.
///
/// An unrecognised channel type is reported as
/// [`WireError::UnknownChannelType`] once the type string itself has been
/// read successfully.
pub fn decode_preamble(bytes: &[u8]) -> Result<(ChannelPreamble, usize), WireError> {
    let mut r = Reader::new(bytes);
    let kind = r.string()?;
    let p = match kind.as_str() {
        "session" => ChannelPreamble::Session,
        "direct-tcp" => {
            let (host, port) = read_target(&mut r)?;
            ChannelPreamble::DirectTcp { host, port }
        }
        "direct-udp" => {
            let (host, port) = read_target(&mut r)?;
            ChannelPreamble::DirectUdp {
                host,
                port,
                datagram_id: r.varint()?,
            }
        }
        _ => return Err(WireError::UnknownChannelType(kind)),
    };
    p.validate()?;
    Ok((p, r.position()))
}

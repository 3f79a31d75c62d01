use bytes::Bytes;

use super::{put_bytes, put_string, put_varint, Reader, VarInt, WireError};

/// Largest payload a single `Data` message may carry. Senders split
/// larger writes into several messages.
pub const MAX_DATA_PAYLOAD: usize = 1 << 24;

/// Largest `total_length` a receiver accepts for one frame.
pub const MAX_FRAME_LEN: usize = MAX_DATA_PAYLOAD + 16;

const PTY_REQUEST: u64 = 0x01;
const SHELL_REQUEST: u64 = 0x02;
const EXEC_REQUEST: u64 = 0x03;
const WINDOW_CHANGE: u64 = 0x04;
const DATA: u64 = 0x10;
const EXIT_STATUS: u64 = 0x20;
const EXIT_SIGNAL: u64 = 0x21;

/// Which standard stream a `Data` message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataKind {
    Stdin = 0,
    Stdout = 1,
    Stderr = 2,
}

impl TryFrom<u64> for DataKind {
    type Error = WireError;

    fn try_from(v: u64) -> Result<Self, WireError> {
        match v {
            0 => Ok(DataKind::Stdin),
            1 => Ok(DataKind::Stdout),
            2 => Ok(DataKind::Stderr),
            other => Err(WireError::InvalidDataKind(other)),
        }
    }
}

/// A channel-level protocol message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    PtyRequest {
        term: String,
        cols: u32,
        rows: u32,
    },
    ShellRequest,
    ExecRequest {
        command: String,
    },
    WindowChange {
        cols: u32,
        rows: u32,
    },
    Data {
        kind: DataKind,
        payload: Bytes,
    },
    ExitStatus {
        code: u32,
    },
    ExitSignal {
        signal_name: String,
        core_dumped: bool,
        error_message: String,
    },
}

impl Message {
    pub fn type_code(&self) -> u64 {
        match self {
            Message::PtyRequest { .. } => PTY_REQUEST,
            Message::ShellRequest => SHELL_REQUEST,
            Message::ExecRequest { .. } => EXEC_REQUEST,
            Message::WindowChange { .. } => WINDOW_CHANGE,
            Message::Data { .. } => DATA,
            Message::ExitStatus { .. } => EXIT_STATUS,
            Message::ExitSignal { .. } => EXIT_SIGNAL,
        }
    }

    pub fn data(kind: DataKind, payload: impl Into<Bytes>) -> Self {
        Message::Data {
            kind,
            payload: payload.into(),
        }
    }

    /// True for `ExitStatus` and `ExitSignal`.
    pub fn is_terminal(&self) -> bool {
        matches!(self, Message::ExitStatus { .. } | Message::ExitSignal { .. })
    }

    fn encode_into(&self, buf: &mut Vec<u8>) -> Result<(), WireError> {
        put_varint(buf, VarInt::new(self.type_code())?);
        match self {
            Message::PtyRequest { term, cols, rows } => {
                put_string(buf, term)?;
                put_varint(buf, VarInt::from(*cols));
                put_varint(buf, VarInt::from(*rows));
            }
            Message::ShellRequest => {}
            Message::ExecRequest { command } => put_string(buf, command)?,
            Message::WindowChange { cols, rows } => {
                put_varint(buf, VarInt::from(*cols));
                put_varint(buf, VarInt::from(*rows));
            }
            Message::Data { kind, payload } => {
                if payload.len() > MAX_DATA_PAYLOAD {
                    return Err(WireError::PayloadTooLarge {
                        len: payload.len(),
                        max: MAX_DATA_PAYLOAD,
                    });
                }
                put_varint(buf, VarInt::from(*kind as u32));
                put_bytes(buf, payload);
            }
            Message::ExitStatus { code } => put_varint(buf, VarInt::from(*code)),
            Message::ExitSignal {
                signal_name,
                core_dumped,
                error_message,
            } => {
                put_string(buf, signal_name)?;
                buf.push(u8::from(*core_dumped));
                put_string(buf, error_message)?;
            }
        }
        Ok(())
    }
}

fn read_u32(r: &mut Reader<'_>) -> Result<u32, WireError> {
    u32::try_from(r.varint()?).map_err(|_| WireError::Malformed("value exceeds 32 bits"))
}

/// Encodes `type_code` followed by the message fields (no outer length).
pub fn encode_message(m: &Message) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::new();
    m.encode_into(&mut buf)?;
    Ok(buf)
}

/// Decodes one message (without outer length) from the front of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    let mut r = Reader::new(bytes);
    let m = match r.varint()? {
        PTY_REQUEST => Message::PtyRequest {
            term: r.string()?,
            cols: read_u32(&mut r)?,
            rows: read_u32(&mut r)?,
        },
        SHELL_REQUEST => Message::ShellRequest,
        EXEC_REQUEST => Message::ExecRequest {
            command: r.string()?,
        },
        WINDOW_CHANGE => Message::WindowChange {
            cols: read_u32(&mut r)?,
            rows: read_u32(&mut r)?,
        },
        DATA => {
            let kind = DataKind::try_from(r.varint()?)?;
            let payload = Bytes::copy_from_slice(r.prefixed_bytes(MAX_DATA_PAYLOAD)?);
            Message::Data { kind, payload }
        }
        EXIT_STATUS => Message::ExitStatus {
            code: read_u32(&mut r)?,
        },
        EXIT_SIGNAL => Message::ExitSignal {
            signal_name: r.string()?,
            core_dumped: r.bool()?,
            error_message: r.string()?,
        },
        other => return Err(WireError::UnknownMessage(other)),
    };
    Ok((m, r.position()))
}

/// A decoded frame: either a known message or a skipped unknown one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Message(Message),
    Unknown { type_code: u64, length: usize },
}

/// Encodes a message with its outer `total_length` prefix.
pub fn encode_frame(m: &Message) -> Result<Vec<u8>, WireError> {
    let body = encode_message(m)?;
    let mut out = Vec::with_capacity(body.len() + 4);
    put_varint(&mut out, VarInt::new(body.len() as u64)?);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it together with
/// the number of bytes consumed. Unknown message types are reported as
/// [`Frame::Unknown`] so the caller can skip them.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
    let mut r = Reader::new(bytes);
    let total = r.varint()?;
    if total > MAX_FRAME_LEN as u64 {
        return Err(WireError::PayloadTooLarge {
            len: total.min(usize::MAX as u64) as usize,
            max: MAX_FRAME_LEN,
        });
    }
    let header = r.position();
    let body = r.bytes(total)?;
    Ok((decode_frame_body(body)?, header + body.len()))
}

/// Decodes a frame body whose outer length has already been stripped.
pub(crate) fn decode_frame_body(body: &[u8]) -> Result<Frame, WireError> {
    match decode_message(body) {
        Ok((m, used)) if used == body.len() => Ok(Frame::Message(m)),
        Ok(_) => Err(WireError::Malformed("trailing bytes inside frame")),
        Err(WireError::UnknownMessage(type_code)) => Ok(Frame::Unknown {
            type_code,
            length: body.len(),
        }),
        // the outer length said the body is complete
        Err(WireError::Incomplete { .. }) => Err(WireError::Malformed("frame body truncated")),
        Err(e) => Err(e),
    }
}

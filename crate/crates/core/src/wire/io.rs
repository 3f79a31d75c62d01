//! Async helpers for reading wire structures off a byte stream.

use tokio::io::{AsyncRead, AsyncReadExt};

use super::{message::decode_frame_body, ChannelPreamble, Frame, WireError, MAX_FRAME_LEN};

#[derive(Debug, thiserror::Error)]
pub enum StreamReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("stream ended in the middle of a value")]
    UnexpectedEnd,
}

/// Reads exactly as many bytes as `decode` asks for until it succeeds.
///
/// Returns `Ok(None)` if the stream ends before the first byte.
async fn read_incremental<R, T>(
    r: &mut R,
    decode: impl Fn(&[u8]) -> Result<(T, usize), WireError>,
) -> Result<Option<T>, StreamReadError>
where
    R: AsyncRead + Unpin,
{
    let mut buf = Vec::new();
    loop {
        match decode(&buf) {
            Ok((value, used)) => {
                debug_assert_eq!(used, buf.len());
                return Ok(Some(value));
            }
            Err(WireError::Incomplete { needed }) => {
                let start = buf.len();
                buf.resize(start + needed, 0);
                let mut filled = start;
                while filled < buf.len() {
                    let n = r.read(&mut buf[filled..]).await?;
                    if n == 0 {
                        if filled == 0 {
                            return Ok(None);
                        }
                        return Err(StreamReadError::UnexpectedEnd);
                    }
                    filled += n;
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
}

pub async fn read_varint<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<u64>, StreamReadError> {
    read_incremental(r, super::decode_varint).await
}

pub async fn read_preamble<R: AsyncRead + Unpin>(
    r: &mut R,
) -> Result<ChannelPreamble, StreamReadError> {
    read_incremental(r, super::decode_preamble)
        .await?
        .ok_or(StreamReadError::UnexpectedEnd)
}

/// Reads the next frame. `Ok(None)` means the stream ended cleanly on a
/// frame boundary.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Frame>, StreamReadError> {
    let Some(total) = read_varint(r).await? else {
        return Ok(None);
    };
    if total > MAX_FRAME_LEN as u64 {
        return Err(WireError::PayloadTooLarge {
            len: total as usize,
            max: MAX_FRAME_LEN,
        }
        .into());
    }
    let mut body = vec![0u8; total as usize];
    match r.read_exact(&mut body).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(StreamReadError::UnexpectedEnd)
        }
        Err(e) => return Err(e.into()),
    }
    Ok(Some(decode_frame_body(&body)?))
}

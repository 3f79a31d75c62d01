use std::sync::Arc;

use bytes::Bytes;
use tokio::io::BufReader;
use tokio::sync::{mpsc, oneshot, Mutex};

use super::conversation::{ChannelGuard, EventSink};
use super::{ChannelError, CloseReason, DatagramError};
use crate::wire::io::{read_frame, StreamReadError};
use crate::wire::{
    encode_frame, ChannelKind, ChannelPreamble, DataKind, Frame, Message, MAX_DATA_PAYLOAD,
};

/// Default bound on queued inbound messages per channel.
pub const INBOUND_QUEUE: usize = 256;

const READ_BUFFER: usize = 64 * 1024;

/// One typed, ordered message pipe carried by a bidirectional stream.
pub struct Channel {
    sender: ChannelSender,
    receiver: ChannelReceiver,
    datagrams: Option<mpsc::Receiver<Bytes>>,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("id", &self.id())
            .field("preamble", self.preamble())
            .finish()
    }
}

impl Channel {
    pub(crate) fn new(
        guard: Arc<ChannelGuard>,
        send: quinn::SendStream,
        recv: quinn::RecvStream,
        datagrams: Option<mpsc::Receiver<Bytes>>,
        events: Option<EventSink>,
    ) -> Self {
        let (tx, rx) = mpsc::channel(INBOUND_QUEUE);
        let (stop_tx, stop_rx) = oneshot::channel();
        tokio::spawn(pump(recv, tx, stop_rx, events, guard.id));
        Channel {
            sender: ChannelSender {
                guard: guard.clone(),
                send: Arc::new(Mutex::new(send)),
            },
            receiver: ChannelReceiver {
                guard,
                rx,
                stop: Some(stop_tx),
            },
            datagrams,
        }
    }

    /// Channel-local id: the underlying QUIC stream id.
    pub fn id(&self) -> u64 {
        self.sender.guard.id
    }

    pub fn kind(&self) -> ChannelKind {
        self.sender.guard.preamble.kind()
    }

    pub fn preamble(&self) -> &ChannelPreamble {
        &self.sender.guard.preamble
    }

    pub async fn send(&self, m: &Message) -> Result<(), ChannelError> {
        self.sender.send(m).await
    }

    pub async fn send_data(&self, kind: DataKind, payload: &[u8]) -> Result<(), ChannelError> {
        self.sender.send_data(kind, payload).await
    }

    /// Next inbound message; `Ok(None)` once the peer finished its side.
    pub async fn next_message(&mut self) -> Result<Option<Message>, ChannelError> {
        self.receiver.next_message().await
    }

    pub async fn finish(&self) -> Result<(), ChannelError> {
        self.sender.finish().await
    }

    /// Aborts both directions with `reason`.
    pub async fn reset(mut self, reason: CloseReason) {
        self.sender.reset(reason).await;
        self.receiver.stop(reason);
    }

    pub async fn send_datagram(&self, payload: &[u8]) -> Result<(), DatagramError> {
        self.sender.send_datagram(payload).await
    }

    /// Inbound datagrams of a direct-udp channel. Taken once.
    pub fn take_datagrams(&mut self) -> Option<mpsc::Receiver<Bytes>> {
        self.datagrams.take()
    }

    pub fn split(self) -> (ChannelSender, ChannelReceiver) {
        (self.sender, self.receiver)
    }
}

/// Send half of a channel. Clones share the stream; writes are serialized.
#[derive(Clone)]
pub struct ChannelSender {
    guard: Arc<ChannelGuard>,
    send: Arc<Mutex<quinn::SendStream>>,
}

impl ChannelSender {
    pub fn id(&self) -> u64 {
        self.guard.id
    }

    pub async fn send(&self, m: &Message) -> Result<(), ChannelError> {
        let frame = encode_frame(m)?;
        let mut s = self.send.lock().await;
        s.write_all(&frame).await.map_err(write_error)
    }

    /// Sends `payload` as one or more `Data` messages.
    pub async fn send_data(&self, kind: DataKind, payload: &[u8]) -> Result<(), ChannelError> {
        if payload.is_empty() {
            return self
                .send(&Message::Data {
                    kind,
                    payload: Bytes::new(),
                })
                .await;
        }
        for chunk in payload.chunks(MAX_DATA_PAYLOAD) {
            self.send(&Message::Data {
                kind,
                payload: Bytes::copy_from_slice(chunk),
            })
            .await?;
        }
        Ok(())
    }

    /// Half-closes the channel: the peer sees end-of-channel after the
    /// messages already sent.
    pub async fn finish(&self) -> Result<(), ChannelError> {
        let mut s = self.send.lock().await;
        match s.finish() {
            Ok(()) => Ok(()),
            Err(quinn::ClosedStream { .. }) => Err(ChannelError::Closed),
        }
    }

    pub async fn reset(&self, reason: CloseReason) {
        let _ = self.send.lock().await.reset(reason.into());
    }

    /// Resolves when the peer stops reading, with its reason.
    pub async fn stopped(&self) -> Option<CloseReason> {
        let fut = {
            let s = self.send.lock().await;
            s.stopped()
        };
        match fut.await {
            Ok(Some(code)) => Some(CloseReason::from_code(code.into_inner())),
            _ => None,
        }
    }

    pub async fn send_datagram(&self, payload: &[u8]) -> Result<(), DatagramError> {
        let id = self
            .guard
            .preamble
            .datagram_id()
            .ok_or(DatagramError::NotUdpChannel)?;
        self.guard.conv.send_datagram(id, payload).await
    }
}

/// Receive half of a channel.
pub struct ChannelReceiver {
    guard: Arc<ChannelGuard>,
    rx: mpsc::Receiver<Result<Message, ChannelError>>,
    stop: Option<oneshot::Sender<CloseReason>>,
}

impl ChannelReceiver {
    pub fn id(&self) -> u64 {
        self.guard.id
    }

    pub async fn next_message(&mut self) -> Result<Option<Message>, ChannelError> {
        match self.rx.recv().await {
            Some(Ok(m)) => Ok(Some(m)),
            Some(Err(e)) => Err(e),
            None => Ok(None),
        }
    }

    /// Asks the peer to stop sending.
    pub fn stop(&mut self, reason: CloseReason) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(reason);
        }
    }
}

fn write_error(e: quinn::WriteError) -> ChannelError {
    match e {
        quinn::WriteError::Stopped(code) => {
            ChannelError::Stopped(CloseReason::from_code(code.into_inner()))
        }
        quinn::WriteError::ConnectionLost(c) => ChannelError::ConnectionLost(c.to_string()),
        quinn::WriteError::ClosedStream => ChannelError::Closed,
        quinn::WriteError::ZeroRttRejected => ChannelError::ConnectionLost("0-RTT rejected".into()),
    }
}

pub(crate) fn read_error(e: StreamReadError) -> ChannelError {
    match e {
        StreamReadError::Io(io) => {
            match io.get_ref().and_then(|i| i.downcast_ref::<quinn::ReadError>()) {
                Some(quinn::ReadError::Reset(code)) => {
                    ChannelError::Reset(CloseReason::from_code(code.into_inner()))
                }
                Some(quinn::ReadError::ConnectionLost(c)) => {
                    ChannelError::ConnectionLost(c.to_string())
                }
                _ => ChannelError::ConnectionLost(io.to_string()),
            }
        }
        StreamReadError::Wire(w) => ChannelError::Wire(w),
        StreamReadError::UnexpectedEnd => {
            ChannelError::Protocol("stream ended inside a frame".into())
        }
    }
}

/// Moves frames from the stream into the bounded queue. A full queue
/// pauses reading, which lets QUIC flow control push back on the peer.
async fn pump(
    recv: quinn::RecvStream,
    tx: mpsc::Sender<Result<Message, ChannelError>>,
    mut stop_rx: oneshot::Receiver<CloseReason>,
    events: Option<EventSink>,
    id: u64,
) {
    let mut r = BufReader::with_capacity(READ_BUFFER, recv);
    let mut first = events;
    loop {
        let frame = tokio::select! {
            biased;
            reason = &mut stop_rx => {
                let _ = r.get_mut().stop(reason.unwrap_or(CloseReason::Normal).into());
                return;
            }
            f = read_frame(&mut r) => f,
        };
        let item = match frame {
            Ok(Some(Frame::Message(m))) => {
                if let Some(sink) = first.take() {
                    sink.first_message(id);
                }
                Ok(m)
            }
            Ok(Some(Frame::Unknown { type_code, .. })) => {
                tracing::debug!(channel = id, type_code, "skipping unknown message");
                continue;
            }
            Ok(None) => return,
            Err(e) => Err(read_error(e)),
        };
        let fatal = item.is_err();
        tokio::select! {
            biased;
            reason = &mut stop_rx => {
                let _ = r.get_mut().stop(reason.unwrap_or(CloseReason::Normal).into());
                return;
            }
            sent = tx.send(item) => {
                if sent.is_err() {
                    let _ = r.get_mut().stop(CloseReason::Normal.into());
                    return;
                }
            }
        }
        if fatal {
            return;
        }
    }
}

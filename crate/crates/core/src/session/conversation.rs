use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Instant;

use bytes::Bytes;
use tokio::sync::mpsc;

use super::channel::Channel;
use super::server::ServerEvent;
use super::{ChannelError, CloseReason};
use crate::auth::ConversationId;
use crate::h3;
use crate::wire::io::{read_preamble, read_varint};
use crate::wire::{decode_udp_frame, decode_varint, encode_preamble, encode_udp_frame, ChannelKind,
    ChannelPreamble, UdpFrame};

/// Inbound datagrams buffered per direct-udp channel before drops.
pub const DATAGRAM_QUEUE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// What happened to one inbound datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteOutcome {
    Delivered,
    UnknownId,
    QueueFull,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatagramError {
    #[error("not a direct-udp channel")]
    NotUdpChannel,
    #[error("peer does not accept datagrams")]
    Unsupported,
    #[error("datagram of {size} bytes exceeds the {max}-byte limit")]
    TooLarge { size: usize, max: usize },
    #[error("connection lost: {0}")]
    ConnectionLost(String),
}

/// Records server-side milestones for the benchmark event log.
#[derive(Clone)]
pub(crate) struct EventSink {
    pub(crate) tx: mpsc::UnboundedSender<ServerEvent>,
    pub(crate) conversation: ConversationId,
}

impl EventSink {
    pub(crate) fn first_message(&self, channel: u64) {
        let _ = self.tx.send(ServerEvent::FirstChannelMessage {
            conversation: self.conversation,
            channel,
            at: Instant::now(),
        });
    }
}

pub(crate) struct Inner {
    conn: quinn::Connection,
    role: Role,
    id: ConversationId,
    username: String,
    connect_stream_id: u64,
    max_channels: u32,
    channels: Mutex<HashMap<u64, ChannelKind>>,
    routes: Mutex<HashMap<u64, mpsc::Sender<Bytes>>>,
    dropped: AtomicU64,
    oversized: AtomicU64,
    next_datagram_id: AtomicU64,
    events: Option<EventSink>,
    tasks: Mutex<Vec<tokio::task::AbortHandle>>,
    // Held so the CONNECT stream and our control stream stay open.
    _streams: Mutex<Vec<quinn::SendStream>>,
    _endpoint: Option<quinn::Endpoint>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        for t in self.tasks.lock().unwrap().drain(..) {
            t.abort();
        }
        self.conn.close(0u32.into(), b"");
    }
}

pub(crate) struct ConversationParts {
    pub conn: quinn::Connection,
    pub role: Role,
    pub id: ConversationId,
    pub username: String,
    pub connect_stream_id: u64,
    pub max_channels: u32,
    pub events: Option<mpsc::UnboundedSender<ServerEvent>>,
    pub streams: Vec<quinn::SendStream>,
    pub tasks: Vec<tokio::task::AbortHandle>,
    pub endpoint: Option<quinn::Endpoint>,
}

/// One authenticated session riding one QUIC connection. Clones are
/// handles to the same conversation; the connection closes when the last
/// handle and the last channel are dropped.
#[derive(Clone)]
pub struct Conversation {
    pub(crate) inner: Arc<Inner>,
}

impl std::fmt::Debug for Conversation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Conversation")
            .field("id", &self.inner.id)
            .field("role", &self.inner.role)
            .field("username", &self.inner.username)
            .finish()
    }
}

/// Registered channel; removes itself from the table when the last half
/// of the channel is dropped.
pub(crate) struct ChannelGuard {
    pub(crate) id: u64,
    pub(crate) preamble: ChannelPreamble,
    pub(crate) conv: Conversation,
}

impl Drop for ChannelGuard {
    fn drop(&mut self) {
        self.conv.inner.channels.lock().unwrap().remove(&self.id);
        if let Some(d) = self.preamble.datagram_id() {
            self.conv.inner.routes.lock().unwrap().remove(&d);
        }
    }
}

impl Conversation {
    pub(crate) fn start(p: ConversationParts) -> Self {
        let events = p.events.map(|tx| EventSink {
            tx,
            conversation: p.id,
        });
        let first_datagram_id = match p.role {
            Role::Client => 0,
            Role::Server => 1,
        };
        let inner = Arc::new(Inner {
            conn: p.conn.clone(),
            role: p.role,
            id: p.id,
            username: p.username,
            connect_stream_id: p.connect_stream_id,
            max_channels: p.max_channels,
            channels: Mutex::new(HashMap::new()),
            routes: Mutex::new(HashMap::new()),
            dropped: AtomicU64::new(0),
            oversized: AtomicU64::new(0),
            next_datagram_id: AtomicU64::new(first_datagram_id),
            events,
            tasks: Mutex::new(p.tasks),
            _streams: Mutex::new(p.streams),
            _endpoint: p.endpoint,
        });
        let weak = Arc::downgrade(&inner);
        let task = tokio::spawn(datagram_loop(p.conn, weak));
        inner.tasks.lock().unwrap().push(task.abort_handle());
        Conversation { inner }
    }

    pub fn id(&self) -> &ConversationId {
        &self.inner.id
    }

    pub fn role(&self) -> Role {
        self.inner.role
    }

    /// Authenticated username.
    pub fn username(&self) -> &str {
        &self.inner.username
    }

    pub fn max_channels(&self) -> u32 {
        self.inner.max_channels
    }

    pub fn open_channels(&self) -> usize {
        self.inner.channels.lock().unwrap().len()
    }

    pub fn remote_address(&self) -> std::net::SocketAddr {
        self.inner.conn.remote_address()
    }

    /// The local UDP address of a client conversation's endpoint.
    pub fn local_address(&self) -> Option<std::net::SocketAddr> {
        self.inner._endpoint.as_ref().and_then(|e| e.local_addr().ok())
    }

    pub fn connection(&self) -> &quinn::Connection {
        &self.inner.conn
    }

    /// Datagrams discarded on receipt: unknown id, malformed or queue full.
    pub fn dropped_datagrams(&self) -> u64 {
        self.inner.dropped.load(Ordering::Relaxed)
    }

    /// Outbound datagrams refused because they exceed the path limit.
    pub fn oversized_datagrams(&self) -> u64 {
        self.inner.oversized.load(Ordering::Relaxed)
    }

    /// Allocates a datagram id for a new direct-udp channel.
    pub fn next_datagram_id(&self) -> u64 {
        self.inner.next_datagram_id.fetch_add(2, Ordering::Relaxed)
    }

    /// Largest UDP payload that currently fits in one datagram.
    pub fn max_udp_payload(&self, datagram_id: u64) -> Option<usize> {
        let max = self.inner.conn.max_datagram_size()?;
        let overhead = h3::datagram_prefix(self.inner.connect_stream_id).len()
            + UdpFrame::header_len(datagram_id);
        Some(max.saturating_sub(overhead))
    }

    /// Opens a channel on a new stream and writes its preamble. Returns at
    /// once; the server learns of the channel from the first flight.
    pub async fn open_channel(&self, preamble: ChannelPreamble) -> Result<Channel, ChannelError> {
        preamble.validate()?;
        let mut header = h3::channel_stream_header(self.inner.connect_stream_id);
        header.extend(encode_preamble(&preamble)?);
        {
            let channels = self.inner.channels.lock().unwrap();
            if channels.len() >= self.inner.max_channels as usize {
                return Err(ChannelError::Limit(self.inner.max_channels));
            }
        }
        let (mut send, recv) = self
            .inner
            .conn
            .open_bi()
            .await
            .map_err(|e| ChannelError::ConnectionLost(e.to_string()))?;
        let id: u64 = send.id().into();
        send.write_all(&header)
            .await
            .map_err(|e| ChannelError::ConnectionLost(e.to_string()))?;
        Ok(self.register(id, preamble, send, recv))
    }

    fn register(
        &self,
        id: u64,
        preamble: ChannelPreamble,
        send: quinn::SendStream,
        recv: quinn::RecvStream,
    ) -> Channel {
        self.inner
            .channels
            .lock()
            .unwrap()
            .insert(id, preamble.kind());
        let datagrams = preamble.datagram_id().map(|d| {
            let (tx, rx) = mpsc::channel(DATAGRAM_QUEUE);
            self.inner.routes.lock().unwrap().insert(d, tx);
            rx
        });
        let events = match self.inner.role {
            Role::Server => self.inner.events.clone(),
            Role::Client => None,
        };
        let guard = Arc::new(ChannelGuard {
            id,
            preamble,
            conv: self.clone(),
        });
        Channel::new(guard, send, recv, datagrams, events)
    }

    /// Waits for the peer's next channel. `None` once the connection ends.
    ///
    /// Streams that violate the channel header are reset and skipped;
    /// streams beyond the channel limit are reset with `ChannelLimit`.
    pub async fn accept_channel(&self) -> Option<Channel> {
        loop {
            let (mut send, mut recv) = match self.inner.conn.accept_bi().await {
                Ok(s) => s,
                Err(_) => return None,
            };
            let id: u64 = recv.id().into();
            match self.read_channel_header(&mut recv).await {
                Ok(preamble) => {
                    let full = self.inner.channels.lock().unwrap().len()
                        >= self.inner.max_channels as usize;
                    if full {
                        let _ = send.reset(CloseReason::ChannelLimit.into());
                        let _ = recv.stop(CloseReason::ChannelLimit.into());
                        continue;
                    }
                    return Some(self.register(id, preamble, send, recv));
                }
                Err(reason) => {
                    tracing::debug!(stream = id, %reason, "rejected channel stream");
                    let _ = send.reset(reason.into());
                    let _ = recv.stop(reason.into());
                }
            }
        }
    }

    async fn read_channel_header(
        &self,
        recv: &mut quinn::RecvStream,
    ) -> Result<ChannelPreamble, CloseReason> {
        let signal = read_varint(recv).await.ok().flatten();
        if signal != Some(h3::CHANNEL_STREAM_SIGNAL) {
            return Err(CloseReason::ProtocolError);
        }
        let owner = read_varint(recv).await.ok().flatten();
        if owner != Some(self.inner.connect_stream_id) {
            return Err(CloseReason::ProtocolError);
        }
        match read_preamble(recv).await {
            Ok(p) if p.validate().is_ok() => Ok(p),
            Err(crate::wire::io::StreamReadError::Wire(
                crate::wire::WireError::UnknownChannelType(_),
            )) => Err(CloseReason::Unsupported),
            _ => Err(CloseReason::ProtocolError),
        }
    }

    /// Delivers one encoded `UdpFrame` to the channel registered under
    /// its datagram id.
    pub fn route_datagram(&self, frame: &[u8]) -> RouteOutcome {
        self.inner.route(frame)
    }

    /// Sends one UDP payload on `datagram_id`. Payloads that do not fit in
    /// a single datagram are refused, never split.
    pub async fn send_datagram(&self, datagram_id: u64, payload: &[u8]) -> Result<(), DatagramError> {
        let mut buf = h3::datagram_prefix(self.inner.connect_stream_id);
        let frame = encode_udp_frame(&UdpFrame::new(datagram_id, payload.to_vec()))
            .map_err(|_| DatagramError::TooLarge {
                size: payload.len(),
                max: 0,
            })?;
        buf.extend(frame);
        let max = self
            .inner
            .conn
            .max_datagram_size()
            .ok_or(DatagramError::Unsupported)?;
        if buf.len() > max {
            self.inner.oversized.fetch_add(1, Ordering::Relaxed);
            return Err(DatagramError::TooLarge {
                size: payload.len(),
                max: self.max_udp_payload(datagram_id).unwrap_or(0),
            });
        }
        self.inner
            .conn
            .send_datagram_wait(Bytes::from(buf))
            .await
            .map_err(|e| match e {
                quinn::SendDatagramError::TooLarge => {
                    self.inner.oversized.fetch_add(1, Ordering::Relaxed);
                    DatagramError::TooLarge {
                        size: payload.len(),
                        max: self.max_udp_payload(datagram_id).unwrap_or(0),
                    }
                }
                quinn::SendDatagramError::ConnectionLost(c) => {
                    DatagramError::ConnectionLost(c.to_string())
                }
                _ => DatagramError::Unsupported,
            })
    }

    /// Closes the connection immediately.
    pub fn close(&self, reason: &str) {
        self.inner.conn.close(0u32.into(), reason.as_bytes());
    }

    /// Closes and, on the client side, waits briefly so the close
    /// actually reaches the peer.
    pub async fn close_gracefully(&self, reason: &str) {
        self.close(reason);
        if let Some(ep) = &self.inner._endpoint {
            let _ = tokio::time::timeout(std::time::Duration::from_millis(500), ep.wait_idle()).await;
        }
    }

    /// Resolves when the connection has ended for any reason.
    pub async fn closed(&self) -> quinn::ConnectionError {
        self.inner.conn.closed().await
    }
}

impl Inner {
    fn route(&self, frame: &[u8]) -> RouteOutcome {
        let outcome = match decode_udp_frame(frame) {
            Err(_) => RouteOutcome::Malformed,
            Ok(f) => {
                let tx = self.routes.lock().unwrap().get(&f.datagram_id).cloned();
                match tx {
                    None => RouteOutcome::UnknownId,
                    Some(tx) => match tx.try_send(f.payload) {
                        Ok(()) => RouteOutcome::Delivered,
                        Err(mpsc::error::TrySendError::Full(_)) => RouteOutcome::QueueFull,
                        Err(mpsc::error::TrySendError::Closed(_)) => RouteOutcome::UnknownId,
                    },
                }
            }
        };
        if outcome != RouteOutcome::Delivered {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        outcome
    }

    fn handle_http_datagram(&self, d: &[u8]) {
        match decode_varint(d) {
            Ok((q, n)) if q == self.connect_stream_id / 4 => {
                self.route(&d[n..]);
            }
            _ => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

async fn datagram_loop(conn: quinn::Connection, inner: Weak<Inner>) {
    while let Ok(d) = conn.read_datagram().await {
        let Some(inner) = inner.upgrade() else { return };
        inner.handle_http_datagram(&d);
    }
}

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use tokio::net::UdpSocket;
use tokio::sync::mpsc;

use super::{ForwardError, ForwardHandle, ForwardStats, ForwardingSpec};
use crate::session::{Channel, CloseReason, Conversation, DatagramError};
use crate::wire::{ChannelPreamble, DataKind, Message};

/// Peers silent for this long lose their channel.
pub const UDP_IDLE_TIMEOUT: Duration = Duration::from_secs(60);

const PEER_QUEUE: usize = 1024;
const SOCKET_BUFFER: usize = 8 << 20;
const MAX_UDP: usize = 65_535;

fn udp_socket(addr: SocketAddr) -> std::io::Result<UdpSocket> {
    let domain = if addr.is_ipv4() {
        socket2::Domain::IPV4
    } else {
        socket2::Domain::IPV6
    };
    let s = socket2::Socket::new(domain, socket2::Type::DGRAM, Some(socket2::Protocol::UDP))?;
    // Best effort; the kernel caps these at its configured maximum.
    let _ = s.set_recv_buffer_size(SOCKET_BUFFER);
    let _ = s.set_send_buffer_size(SOCKET_BUFFER);
    s.set_nonblocking(true)?;
    s.bind(&addr.into())?;
    UdpSocket::from_std(s.into())
}

// Each entry carries a generation so a finished peer task never removes
// its successor.
type PeerTable = Arc<Mutex<HashMap<SocketAddr, (u64, mpsc::Sender<Bytes>)>>>;

/// Binds the forwarding spec's local UDP port. Each local peer address gets its own
/// direct-udp channel; payloads travel as QUIC datagrams.
pub async fn client_forward_udp(
    conv: &Conversation,
    spec: &ForwardingSpec,
) -> Result<ForwardHandle, ForwardError> {
    if conv.connection().max_datagram_size().is_none() {
        return Err(ForwardError::DatagramsUnavailable);
    }
    let bind_err = |source| ForwardError::Bind {
        addr: spec.bind_address(),
        source,
    };
    let addr = tokio::net::lookup_host(spec.bind_address())
        .await
        .map_err(bind_err)?
        .next()
        .ok_or_else(|| bind_err(std::io::Error::new(std::io::ErrorKind::NotFound, "no address")))?;
    let socket = Arc::new(udp_socket(addr).map_err(bind_err)?);
    let local_addr = socket.local_addr().map_err(bind_err)?;
    let stats = Arc::new(ForwardStats::default());
    let peers: PeerTable = Arc::default();
    let task = {
        let conv = conv.clone();
        let spec = spec.clone();
        let stats = stats.clone();
        tokio::spawn(async move {
            let mut buf = vec![0u8; MAX_UDP];
            let mut generation = 0u64;
            loop {
                let Ok((n, peer)) = socket.recv_from(&mut buf).await else {
                    continue;
                };
                let payload = Bytes::copy_from_slice(&buf[..n]);
                let existing = peers.lock().unwrap().get(&peer).map(|(_, tx)| tx.clone());
                let tx = match existing {
                    Some(tx) if !tx.is_closed() => tx,
                    _ => {
                        let (tx, rx) = mpsc::channel(PEER_QUEUE);
                        generation += 1;
                        peers.lock().unwrap().insert(peer, (generation, tx.clone()));
                        tokio::spawn(client_peer(
                            conv.clone(),
                            spec.clone(),
                            (peer, generation),
                            socket.clone(),
                            rx,
                            stats.clone(),
                            peers.clone(),
                        ));
                        tx
                    }
                };
                if tx.try_send(payload).is_err() {
                    stats.datagrams_dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
        })
    };
    Ok(ForwardHandle {
        spec: spec.clone(),
        local_addr,
        stats,
        task,
    })
}

/// Serves one local peer: opens its channel, waits for the server's
/// ready signal, then relays until the peer goes idle.
async fn client_peer(
    conv: Conversation,
    spec: ForwardingSpec,
    (peer, generation): (SocketAddr, u64),
    socket: Arc<UdpSocket>,
    mut outbound: mpsc::Receiver<Bytes>,
    stats: Arc<ForwardStats>,
    peers: PeerTable,
) {
    let forget = || {
        let mut table = peers.lock().unwrap();
        if table.get(&peer).is_some_and(|(g, _)| *g == generation) {
            table.remove(&peer);
        }
    };
    let datagram_id = conv.next_datagram_id();
    let opened = conv
        .open_channel(ChannelPreamble::DirectUdp {
            host: spec.host.clone(),
            port: spec.port,
            datagram_id,
        })
        .await;
    let mut ch = match opened {
        Ok(ch) => ch,
        Err(e) => {
            tracing::info!(%peer, "UDP channel refused: {e}");
            forget();
            outbound.close();
            while outbound.recv().await.is_some() {
                stats.datagrams_dropped.fetch_add(1, Ordering::Relaxed);
            }
            return;
        }
    };
    stats.connections.fetch_add(1, Ordering::Relaxed);
    let mut inbound = ch.take_datagrams().expect("udp channel has a route");
    // Datagrams sent before the server registered the route would be lost.
    let ready = matches!(ch.next_message().await, Ok(Some(Message::Data { .. })));
    if !ready {
        forget();
        stats.rejected.fetch_add(1, Ordering::Relaxed);
        outbound.close();
        while outbound.recv().await.is_some() {
            stats.datagrams_dropped.fetch_add(1, Ordering::Relaxed);
        }
        return;
    }
    let back = {
        let socket = socket.clone();
        let stats = stats.clone();
        tokio::spawn(async move {
            while let Some(d) = inbound.recv().await {
                if socket.send_to(&d, peer).await.is_ok() {
                    stats.datagrams_received.fetch_add(1, Ordering::Relaxed);
                }
            }
        })
    };
    loop {
        tokio::select! {
            next = tokio::time::timeout(UDP_IDLE_TIMEOUT, outbound.recv()) => match next {
                Ok(Some(payload)) => match ch.send_datagram(&payload).await {
                    Ok(()) => {
                        stats.datagrams_sent.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(DatagramError::TooLarge { .. }) => {
                        stats.datagrams_dropped.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(_) => break,
                },
                Ok(None) | Err(_) => break,
            },
            m = ch.next_message() => match m {
                Ok(Some(_)) => {}
                Ok(None) | Err(_) => break,
            },
        }
    }
    forget();
    back.abort();
    let _ = ch.finish().await;
}

/// Server side of a direct-udp channel: a connected UDP socket toward the
/// target, bridged to the channel's datagram route.
pub async fn server_handle_udp(conv: Conversation, mut ch: Channel) {
    let ChannelPreamble::DirectUdp {
        host,
        port,
        datagram_id,
    } = ch.preamble().clone()
    else {
        ch.reset(CloseReason::ProtocolError).await;
        return;
    };
    let Some(mut inbound) = ch.take_datagrams() else {
        ch.reset(CloseReason::ProtocolError).await;
        return;
    };
    let target = match tokio::net::lookup_host((host.as_str(), port)).await {
        Ok(mut a) => match a.next() {
            Some(a) => a,
            None => return ch.reset(CloseReason::Dns).await,
        },
        Err(_) => return ch.reset(CloseReason::Dns).await,
    };
    let bind: SocketAddr = if target.is_ipv4() {
        "0.0.0.0:0".parse().expect("addr")
    } else {
        "[::]:0".parse().expect("addr")
    };
    let socket = match udp_socket(bind) {
        Ok(s) => s,
        Err(_) => return ch.reset(CloseReason::Other(0xff)).await,
    };
    if socket.connect(target).await.is_err() {
        return ch.reset(CloseReason::Refused).await;
    }
    let socket = Arc::new(socket);
    if ch.send_data(DataKind::Stdout, &[]).await.is_err() {
        return;
    }
    let to_target = {
        let socket = socket.clone();
        tokio::spawn(async move {
            while let Some(d) = inbound.recv().await {
                let _ = socket.send(&d).await;
            }
        })
    };
    let from_target = tokio::spawn(async move {
        let mut buf = vec![0u8; MAX_UDP];
        loop {
            match socket.recv(&mut buf).await {
                Ok(n) => match conv.send_datagram(datagram_id, &buf[..n]).await {
                    Ok(()) | Err(DatagramError::TooLarge { .. }) => {}
                    Err(_) => return,
                },
                // ICMP unreachable surfaces here; the target may come back.
                Err(_) => tokio::time::sleep(Duration::from_millis(10)).await,
            }
        }
    });
    // The client ends the channel when its peer goes idle.
    while let Ok(Some(_)) = ch.next_message().await {}
    to_target.abort();
    from_target.abort();
    let _ = ch.finish().await;
}

use std::io::ErrorKind;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use super::{ForwardError, ForwardHandle, ForwardStats, ForwardingSpec};
use crate::session::{Channel, CloseReason, Conversation};
use crate::wire::{ChannelPreamble, DataKind, Message};

/// Bound on resolving and connecting to a forwarding target.
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

const CHUNK: usize = 64 * 1024;

/// Listens on the forwarding spec's bind address; each accepted connection gets its
/// own direct-tcp channel.
pub async fn client_forward_tcp(
    conv: &Conversation,
    spec: &ForwardingSpec,
) -> Result<ForwardHandle, ForwardError> {
    let listener = TcpListener::bind(spec.bind_address())
        .await
        .map_err(|source| ForwardError::Bind {
            addr: spec.bind_address(),
            source,
        })?;
    let local_addr = listener.local_addr().map_err(|source| ForwardError::Bind {
        addr: spec.bind_address(),
        source,
    })?;
    let stats = Arc::new(ForwardStats::default());
    let task = {
        let conv = conv.clone();
        let spec = spec.clone();
        let stats = stats.clone();
        tokio::spawn(async move {
            loop {
                let Ok((tcp, peer)) = listener.accept().await else {
                    continue;
                };
                let preamble = ChannelPreamble::DirectTcp {
                    host: spec.host.clone(),
                    port: spec.port,
                };
                let conv = conv.clone();
                let stats = stats.clone();
                tokio::spawn(async move {
                    match conv.open_channel(preamble).await {
                        Ok(ch) => {
                            stats.connections.fetch_add(1, Ordering::Relaxed);
                            relay_tcp(tcp, ch).await;
                        }
                        Err(e) => {
                            stats.rejected.fetch_add(1, Ordering::Relaxed);
                            tracing::info!(%peer, "forwarded connection refused: {e}");
                        }
                    }
                });
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

/// Resolves and connects to a forwarding target.
pub async fn server_open_tcp(host: &str, port: u16) -> Result<TcpStream, CloseReason> {
    let attempt = async {
        let addrs: Vec<_> = tokio::net::lookup_host((host, port))
            .await
            .map_err(|_| CloseReason::Dns)?
            .collect();
        if addrs.is_empty() {
            return Err(CloseReason::Dns);
        }
        let mut last = CloseReason::Refused;
        for a in addrs {
            match TcpStream::connect(a).await {
                Ok(s) => return Ok(s),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => last = CloseReason::Refused,
                Err(e) if e.kind() == ErrorKind::TimedOut => last = CloseReason::Timeout,
                Err(_) => last = CloseReason::Refused,
            }
        }
        Err(last)
    };
    tokio::time::timeout(CONNECT_TIMEOUT, attempt)
        .await
        .unwrap_or(Err(CloseReason::Timeout))
}

/// Server side of a direct-tcp channel.
pub async fn server_handle_tcp(ch: Channel) {
    let ChannelPreamble::DirectTcp { host, port } = ch.preamble().clone() else {
        ch.reset(CloseReason::ProtocolError).await;
        return;
    };
    match server_open_tcp(&host, port).await {
        Ok(tcp) => relay_tcp(tcp, ch).await,
        Err(reason) => {
            tracing::info!(target_host = %host, port, %reason, "forward target unavailable");
            ch.reset(reason).await;
        }
    }
}

/// Copies bytes both ways between `tcp` and the channel until both
/// directions have ended. A reset on either side aborts the other.
pub async fn relay_tcp(tcp: TcpStream, ch: Channel) {
    let _ = tcp.set_nodelay(true);
    let (mut rd, mut wr) = tcp.into_split();
    let (tx, mut rx) = ch.split();
    let upstream = {
        let tx = tx.clone();
        async move {
            let mut buf = vec![0u8; CHUNK];
            loop {
                match rd.read(&mut buf).await {
                    Ok(0) => {
                        let _ = tx.finish().await;
                        return true;
                    }
                    Ok(n) => {
                        if tx.send_data(DataKind::Stdout, &buf[..n]).await.is_err() {
                            return false;
                        }
                    }
                    Err(_) => {
                        tx.reset(CloseReason::Hangup).await;
                        return false;
                    }
                }
            }
        }
    };
    let downstream = async move {
        loop {
            match rx.next_message().await {
                Ok(Some(Message::Data { payload, .. })) => {
                    if wr.write_all(&payload).await.is_err() {
                        rx.stop(CloseReason::Hangup);
                        return false;
                    }
                }
                Ok(Some(_)) => {}
                Ok(None) => {
                    let _ = wr.shutdown().await;
                    return true;
                }
                Err(_) => return false,
            }
        }
    };
    let mut upstream = Box::pin(upstream);
    let mut downstream = Box::pin(downstream);
    // One side failing tears down the whole relay; a clean end waits for
    // the other direction.
    tokio::select! {
        ok = &mut upstream => if ok { downstream.await; },
        ok = &mut downstream => if ok {
            upstream.await;
        } else {
            // an unfinished write in `upstream` holds the stream lock
            drop(upstream);
            tx.reset(CloseReason::Hangup).await;
        },
    }
}

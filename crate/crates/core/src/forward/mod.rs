//! Local port forwarding: TCP over dedicated channels, UDP over datagrams.

mod tcp;
mod udp;

pub use tcp::{client_forward_tcp, relay_tcp, server_handle_tcp, server_open_tcp, CONNECT_TIMEOUT};
pub use udp::{client_forward_udp, server_handle_udp, UDP_IDLE_TIMEOUT};

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::session::Conversation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid forwarding spec {spec:?}: {reason}")]
pub struct SpecError {
    pub spec: String,
    pub reason: String,
}

/// `tcp/<bind>:<port>/<host>:<port>` or the same with `udp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForwardingSpec {
    pub protocol: Protocol,
    pub bind_host: String,
    pub bind_port: u16,
    pub host: String,
    pub port: u16,
}

fn split_host_port(s: &str) -> Result<(String, u16), String> {
    let (host, port) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("{s:?} lacks a :port"))?;
    let host = match host.strip_prefix('[') {
        Some(h) => h
            .strip_suffix(']')
            .ok_or_else(|| format!("unbalanced brackets in {s:?}"))?,
        None if host.contains(':') => return Err(format!("IPv6 address in {s:?} needs brackets")),
        None => host,
    };
    if host.is_empty() {
        return Err(format!("empty host in {s:?}"));
    }
    let port: u16 = port
        .parse()
        .map_err(|_| format!("port {port:?} is not a number in 1..=65535"))?;
    if port == 0 {
        return Err("port 0 is not allowed".into());
    }
    Ok((host.to_string(), port))
}

fn join_host_port(host: &str, port: u16) -> String {
    if host.contains(':') {
        format!("[{host}]:{port}")
    } else {
        format!("{host}:{port}")
    }
}

impl ForwardingSpec {
    pub fn parse(s: &str) -> Result<Self, SpecError> {
        let err = |reason: String| SpecError {
            spec: s.to_string(),
            reason,
        };
        let mut parts = s.splitn(3, '/');
        let (Some(proto), Some(bind), Some(target)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(err("expected <proto>/<bind>:<port>/<host>:<port>".into()));
        };
        let protocol = match proto {
            "tcp" => Protocol::Tcp,
            "udp" => Protocol::Udp,
            other => return Err(err(format!("protocol {other:?} is not tcp or udp"))),
        };
        let (bind_host, bind_port) = split_host_port(bind).map_err(err)?;
        let (host, port) = split_host_port(target).map_err(err)?;
        Ok(ForwardingSpec {
            protocol,
            bind_host,
            bind_port,
            host,
            port,
        })
    }

    pub fn bind_address(&self) -> String {
        join_host_port(&self.bind_host, self.bind_port)
    }
}

impl std::fmt::Display for ForwardingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.protocol.as_str(),
            join_host_port(&self.bind_host, self.bind_port),
            join_host_port(&self.host, self.port)
        )
    }
}

impl std::str::FromStr for ForwardingSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ForwardingSpec::parse(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForwardError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("the server did not negotiate QUIC datagrams; UDP forwarding is unavailable")]
    DatagramsUnavailable,
}

/// Counters of a running forward.
#[derive(Debug, Default)]
pub struct ForwardStats {
    pub connections: AtomicU64,
    pub rejected: AtomicU64,
    pub datagrams_sent: AtomicU64,
    pub datagrams_received: AtomicU64,
    /// Local datagrams dropped: too large, queue full or channel refused.
    pub datagrams_dropped: AtomicU64,
}

impl ForwardStats {
    pub fn get(c: &AtomicU64) -> u64 {
        c.load(Ordering::Relaxed)
    }
}

/// A running local forward; stops when dropped.
pub struct ForwardHandle {
    pub spec: ForwardingSpec,
    local_addr: SocketAddr,
    stats: Arc<ForwardStats>,
    task: tokio::task::JoinHandle<()>,
}

impl ForwardHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> &ForwardStats {
        &self.stats
    }

    pub fn stop(&self) {
        self.task.abort();
    }
}

impl Drop for ForwardHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Starts the forward described by `spec`.
pub async fn start_forward(conv: &Conversation, spec: &ForwardingSpec) -> Result<ForwardHandle, ForwardError> {
    match spec.protocol {
        Protocol::Tcp => client_forward_tcp(conv, spec).await,
        Protocol::Udp => client_forward_udp(conv, spec).await,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cli_grammar() {
        let s = ForwardingSpec::parse("tcp/127.0.0.1:8080/db.internal:5432").unwrap();
        assert_eq!(s.protocol, Protocol::Tcp);
        assert_eq!(s.bind_host, "127.0.0.1");
        assert_eq!(s.bind_port, 8080);
        assert_eq!(s.host, "db.internal");
        assert_eq!(s.port, 5432);
        assert_eq!(s.to_string(), "tcp/127.0.0.1:8080/db.internal:5432");
    }

    #[test]
    fn ipv6_round_trip() {
        let text = "udp/[::1]:5353/[2001:db8::1]:53";
        let s = ForwardingSpec::parse(text).unwrap();
        assert_eq!(s.bind_host, "::1");
        assert_eq!(s.host, "2001:db8::1");
        assert_eq!(s.to_string(), text);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            "sctp/127.0.0.1:1/h:2",
            "tcp/127.0.0.1:0/h:2",
            "tcp/127.0.0.1:1/h:65536",
            "tcp/127.0.0.1:1",
            "tcp/127.0.0.1/h:2",
            "tcp/:1/h:2",
            "tcp/::1:1/h:2",
        ] {
            assert!(ForwardingSpec::parse(bad).is_err(), "{bad}");
        }
    }

    proptest::proptest! {
        #[test]
        fn display_parse_round_trip(
            udp in proptest::bool::ANY,
            bind in "[a-z][a-z0-9.-]{0,20}",
            bport in 1u16..,
            host in "[a-z][a-z0-9.-]{0,20}",
            port in 1u16..,
        ) {
            let spec = ForwardingSpec {
                protocol: if udp { Protocol::Udp } else { Protocol::Tcp },
                bind_host: bind,
                bind_port: bport,
                host,
                port,
            };
            proptest::prop_assert_eq!(ForwardingSpec::parse(&spec.to_string()).unwrap(), spec);
        }
    }
}

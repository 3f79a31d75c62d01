//! Measurement harness: session completion and echo latency behind an
//! emulated-latency proxy, and tunnel throughput on loopback.

pub mod proxy;
mod report;

pub use proxy::{round_trips, Direction, LatencyProxy, PacketEvent};
pub use report::RunReport;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::mpsc;

use crate::auth::{AuthPolicy, Authenticator, ClientKey, Credential, IdentityEntry, IdentityStore, SystemClock};
use crate::exec::{exec_command, ExitOutcome};
use crate::forward::{start_forward, Protocol};
use crate::forward::ForwardingSpec;
use crate::service::Service;
use crate::session::{
    connect, ClientOptions, Conversation, Destination, Server, ServerEvent, ServerOptions, SessionError,
    TlsIdentity, TransportOptions, Trust,
};
use crate::wire::{ChannelPreamble, DataKind, Message};

const BENCH_USER: &str = "bench";
const BENCH_PATH: &str = "/bench";
const ECHO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark parameters: {0}")]
    Invalid(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("sample {sample}: {error}")]
    Session { sample: usize, error: String },
    #[error("sample {sample}: command ended with {outcome:?}")]
    Command { sample: usize, outcome: ExitOutcome },
    #[error("payload corrupted at byte {offset}")]
    Corruption { offset: u64 },
    #[error("no echo for keystroke {keystroke} within {ECHO_TIMEOUT:?}")]
    MissingEcho { keystroke: usize },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// An in-process server running the standard service, accepting one
/// Ed25519 key for the bench user.
pub struct BenchServer {
    server: Arc<Server>,
    events: Mutex<mpsc::UnboundedReceiver<ServerEvent>>,
    addr: SocketAddr,
    fingerprint: String,
    key: ClientKey,
    accept: tokio::task::JoinHandle<()>,
}

impl BenchServer {
    pub async fn start() -> Result<Self, BenchError> {
        let setup = |e: &dyn std::fmt::Display| BenchError::Setup(e.to_string());
        let identity = TlsIdentity::self_signed(&["localhost"]).map_err(|e| setup(&e))?;
        let fingerprint = identity.fingerprint();
        let mut options = ServerOptions::new("127.0.0.1:0".parse().expect("addr"), identity, BENCH_PATH);
        options.transport = TransportOptions::lan();
        options.record_events = true;
        let key = ClientKey::generate_ed25519();
        let mut store = IdentityStore::new();
        store.add(BENCH_USER, IdentityEntry::AuthorizedKey(key.public_key().clone()));
        let auth = Arc::new(Authenticator::new(
            Arc::new(store),
            AuthPolicy::default(),
            Arc::new(SystemClock),
        ));
        let mut server = Server::bind(options, auth, Arc::new(Service::default())).map_err(|e| setup(&e))?;
        let events = server
            .take_events()
            .ok_or_else(|| BenchError::Setup("server event log unavailable".into()))?;
        let server = Arc::new(server);
        let addr = server.local_addr()?;
        let accept = {
            let s = server.clone();
            tokio::spawn(async move { s.run().await })
        };
        Ok(BenchServer {
            server,
            events: Mutex::new(events),
            addr,
            fingerprint,
            key,
            accept,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_options(&self) -> ClientOptions {
        let mut o = ClientOptions::new(Trust::pin(&self.fingerprint).expect("own fingerprint"));
        o.transport = TransportOptions::lan();
        o
    }

    /// Opens a conversation to the server through `via` (the server
    /// itself or a proxy in front of it).
    pub async fn connect_via(&self, via: SocketAddr, options: &ClientOptions) -> Result<Conversation, SessionError> {
        let dest = Destination::parse(&format!("https://{via}{BENCH_PATH}")).expect("destination");
        let credential = Credential::PrivateKey {
            username: BENCH_USER.into(),
            key: self.key.clone(),
        };
        connect(&dest, BENCH_USER, &credential, &SystemClock, options).await
    }

    pub fn drain_events(&self) -> Vec<ServerEvent> {
        let mut rx = self.events.lock().unwrap();
        let mut out = Vec::new();
        while let Ok(e) = rx.try_recv() {
            out.push(e);
        }
        out
    }
}

impl Drop for BenchServer {
    fn drop(&mut self) {
        self.server.endpoint().close(0u32.into(), b"");
        self.accept.abort();
    }
}

fn one_way(rtt: Duration) -> Duration {
    rtt / 2
}

fn check_n(n: usize) -> Result<(), BenchError> {
    if n == 0 {
        return Err(BenchError::Invalid("n must be at least 1".into()));
    }
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Times `n` cold sessions that each connect, run `command`, collect its
/// output and close, through a proxy adding `rtt` of round-trip delay.
///
/// Each sample also records the round trips from the first client packet
/// until the server accepted the first channel message.
pub async fn measure_session_completion(command: &str, n: usize, rtt: Duration) -> Result<RunReport, BenchError> {
    check_n(n)?;
    let srv = BenchServer::start().await?;
    let proxy = LatencyProxy::start(srv.addr(), one_way(rtt))?;
    let options = srv.client_options();
    let mut samples = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for sample in 0..n {
        srv.drain_events();
        proxy.clear_events();
        let fail = |e: &dyn std::fmt::Display| BenchError::Session {
            sample,
            error: e.to_string(),
        };
        let start = Instant::now();
        let conv = srv.connect_via(proxy.local_addr(), &options).await.map_err(|e| fail(&e))?;
        let out = exec_command(&conv, command).await.map_err(|e| fail(&e))?;
        conv.close("done");
        let elapsed = start.elapsed();
        if out.outcome != ExitOutcome::Exited(0) {
            return Err(BenchError::Command {
                sample,
                outcome: out.outcome,
            });
        }
        let first_message = srv.drain_events().into_iter().find_map(|e| match e {
            ServerEvent::FirstChannelMessage { conversation, at, .. } if conversation == *conv.id() => Some(at),
            _ => None,
        });
        let client = conv
            .local_address()
            .map(|a| SocketAddr::from(([127, 0, 0, 1], a.port())));
        let count = match (first_message, client) {
            (Some(at), Some(client)) => Some(round_trips(&proxy.events(), client, at)),
            _ => None,
        };
        samples.push(ms(elapsed));
        counts.push(count);
        // let the close reach the server without holding up the next sample
        tokio::spawn(async move { conv.close_gracefully("done").await });
    }
    RunReport::new("session-completion", samples, counts)
}

/// Per-keystroke echo time of a remote `cat` under a pty, through a proxy
/// adding `rtt` of round-trip delay.
pub async fn measure_echo_latency(n: usize, rtt: Duration) -> Result<RunReport, BenchError> {
    check_n(n)?;
    let srv = BenchServer::start().await?;
    let proxy = LatencyProxy::start(srv.addr(), one_way(rtt))?;
    let conv = srv
        .connect_via(proxy.local_addr(), &srv.client_options())
        .await
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let setup = |e: crate::session::ChannelError| BenchError::Setup(e.to_string());
    let ch = conv.open_channel(ChannelPreamble::Session).await.map_err(setup)?;
    ch.send(&Message::PtyRequest {
        term: "xterm".into(),
        cols: 80,
        rows: 24,
    })
    .await
    .map_err(setup)?;
    ch.send(&Message::ExecRequest { command: "cat".into() }).await.map_err(setup)?;
    let (tx, mut rx) = ch.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<(Instant, Bytes)>();
    let reader = tokio::spawn(async move {
        while let Ok(Some(m)) = rx.next_message().await {
            if let Message::Data { payload, .. } = m {
                if out_tx.send((Instant::now(), payload)).is_err() {
                    return;
                }
            }
        }
    });

    let mut expected: Vec<u8> = Vec::new();
    let mut received: Vec<u8> = Vec::new();
    let mut line: Vec<u8> = Vec::new();
    // Reads output until `expected` is complete; returns the arrival time
    // of the last piece.
    async fn settle(
        out_rx: &mut mpsc::UnboundedReceiver<(Instant, Bytes)>,
        received: &mut Vec<u8>,
        expected: &[u8],
        keystroke: usize,
    ) -> Result<Instant, BenchError> {
        let mut last = Instant::now();
        while received.len() < expected.len() {
            match tokio::time::timeout(ECHO_TIMEOUT, out_rx.recv()).await {
                Ok(Some((at, chunk))) => {
                    received.extend_from_slice(&chunk);
                    last = at;
                }
                _ => return Err(BenchError::MissingEcho { keystroke }),
            }
        }
        if received[..] != expected[..] {
            let offset = received.iter().zip(expected).position(|(a, b)| a != b).unwrap_or(expected.len());
            return Err(BenchError::Corruption { offset: offset as u64 });
        }
        Ok(last)
    }
    let send = |b: u8| {
        let tx = tx.clone();
        async move {
            tx.send_data(DataKind::Stdin, &[b])
                .await
                .map_err(|e| BenchError::Setup(e.to_string()))
        }
    };

    // warm-up keystroke, not measured
    send(b'w').await?;
    expected.push(b'w');
    line.push(b'w');
    settle(&mut out_rx, &mut received, &expected, 0).await?;

    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        if line.len() >= 32 {
            send(b'\n').await?;
            expected.extend_from_slice(b"\r\n");
            expected.append(&mut line);
            expected.extend_from_slice(b"\r\n");
            settle(&mut out_rx, &mut received, &expected, k).await?;
        }
        let c = b'a' + (k % 26) as u8;
        let t0 = Instant::now();
        send(c).await?;
        expected.push(c);
        line.push(c);
        let at = settle(&mut out_rx, &mut received, &expected, k).await?;
        samples.push(ms(at.saturating_duration_since(t0)));
    }
    reader.abort();
    conv.close_gracefully("done").await;
    RunReport::new("echo-latency", samples, vec![None; n])
}

/// Parameters of a throughput run.
#[derive(Debug, Clone)]
pub struct ThroughputConfig {
    pub protocol: Protocol,
    pub duration: Duration,
    pub runs: usize,
    /// UDP sending rate; the sender paces itself to it.
    pub udp_rate_mbps: f64,
    pub udp_payload: usize,
    /// Flips the sink's copy of this byte, to exercise verification.
    pub corrupt_at: Option<u64>,
}

impl ThroughputConfig {
    pub fn new(protocol: Protocol, duration: Duration) -> Self {
        ThroughputConfig {
            protocol,
            duration,
            runs: 1,
            udp_rate_mbps: 100.0,
            udp_payload: 1200,
            corrupt_at: None,
        }
    }
}

const PERIOD: usize = 251;
const CHUNK: usize = 64 * 1024;

fn pattern() -> Vec<u8> {
    (0..CHUNK + PERIOD).map(|i| (i % PERIOD) as u8).collect()
}

/// Goodput through a forward on loopback, one sample per run in Mbps.
/// The sink checks every byte; any mismatch fails the measurement.
pub async fn measure_forward_throughput(cfg: &ThroughputConfig) -> Result<RunReport, BenchError> {
    check_n(cfg.runs)?;
    if cfg.duration.is_zero() {
        return Err(BenchError::Invalid("duration must be positive".into()));
    }
    if cfg.protocol == Protocol::Udp && !(8..=1400).contains(&cfg.udp_payload) {
        return Err(BenchError::Invalid("udp payload must be 8..=1400 bytes".into()));
    }
    let srv = BenchServer::start().await?;
    let conv = srv
        .connect_via(srv.addr(), &srv.client_options())
        .await
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let mut samples = Vec::new();
    let (mut sent, mut delivered) = (0u64, 0u64);
    for _ in 0..cfg.runs {
        match cfg.protocol {
            Protocol::Tcp => samples.push(tcp_run(&conv, cfg).await?),
            Protocol::Udp => {
                let (mbps, s, d) = udp_run(&conv, cfg).await?;
                samples.push(mbps);
                sent += s;
                delivered += d;
            }
        }
    }
    conv.close_gracefully("done").await;
    let n = samples.len();
    let name = match cfg.protocol {
        Protocol::Tcp => "tcp-throughput",
        Protocol::Udp => "udp-throughput",
    };
    let mut r = RunReport::new(name, samples, vec![None; n])?;
    if cfg.protocol == Protocol::Udp {
        r.delivery_ratio = Some(delivered as f64 / sent.max(1) as f64);
    }
    Ok(r)
}

fn forward_to(protocol: Protocol, target: SocketAddr) -> ForwardingSpec {
    ForwardingSpec {
        protocol,
        bind_host: "127.0.0.1".into(),
        bind_port: 0,
        host: target.ip().to_string(),
        port: target.port(),
    }
}

fn corrupt(buf: &mut [u8], offset: u64, at: Option<u64>) {
    if let Some(c) = at {
        if (offset..offset + buf.len() as u64).contains(&c) {
            buf[(c - offset) as usize] ^= 0xff;
        }
    }
}

async fn tcp_run(conv: &Conversation, cfg: &ThroughputConfig) -> Result<f64, BenchError> {
    let sink = TcpListener::bind("127.0.0.1:0").await?;
    let fwd = start_forward(conv, &forward_to(Protocol::Tcp, sink.local_addr()?))
        .await
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let corrupt_at = cfg.corrupt_at;
    let sink_task = tokio::spawn(async move {
        let (mut s, _) = sink.accept().await?;
        let pat = pattern();
        let mut buf = vec![0u8; CHUNK];
        let mut offset = 0u64;
        loop {
            let n = s.read(&mut buf).await?;
            if n == 0 {
                return Ok::<_, BenchError>((offset, Instant::now()));
            }
            corrupt(&mut buf[..n], offset, corrupt_at);
            let p = (offset % PERIOD as u64) as usize;
            if buf[..n] != pat[p..p + n] {
                let i = buf[..n].iter().zip(&pat[p..]).position(|(a, b)| a != b).unwrap_or(0);
                return Err(BenchError::Corruption { offset: offset + i as u64 });
            }
            offset += n as u64;
        }
    });
    let pat = pattern();
    let mut out = TcpStream::connect(fwd.local_addr()).await?;
    out.set_nodelay(true)?;
    let t0 = Instant::now();
    let mut offset = 0u64;
    while t0.elapsed() < cfg.duration {
        let p = (offset % PERIOD as u64) as usize;
        if out.write_all(&pat[p..p + CHUNK]).await.is_err() {
            break;
        }
        offset += CHUNK as u64;
    }
    let _ = out.shutdown().await;
    let (bytes, end) = sink_task.await.map_err(|e| BenchError::Setup(e.to_string()))??;
    fwd.stop();
    if bytes < offset {
        return Err(BenchError::Setup(format!("sink saw {bytes} of {offset} bytes")));
    }
    Ok(bytes as f64 * 8.0 / (end - t0).as_secs_f64() / 1e6)
}

fn datagram(seq: u64, len: usize, buf: &mut [u8]) {
    buf[..8].copy_from_slice(&seq.to_be_bytes());
    for (i, b) in buf[8..len].iter_mut().enumerate() {
        *b = (seq as u8).wrapping_add(i as u8);
    }
}

const WARMUP: u64 = u64::MAX;

async fn udp_run(conv: &Conversation, cfg: &ThroughputConfig) -> Result<(f64, u64, u64), BenchError> {
    let sink = {
        let s = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::DGRAM, Some(socket2::Protocol::UDP))?;
        let _ = s.set_recv_buffer_size(25 << 20);
        s.set_nonblocking(true)?;
        s.bind(&SocketAddr::from(([127, 0, 0, 1], 0)).into())?;
        UdpSocket::from_std(s.into())?
    };
    let fwd = start_forward(conv, &forward_to(Protocol::Udp, sink.local_addr()?))
        .await
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let sender = UdpSocket::bind("127.0.0.1:0").await?;
    sender.connect(fwd.local_addr()).await?;
    let size = cfg.udp_payload;
    let mut buf = vec![0u8; size];
    let mut rbuf = vec![0u8; 65_536];

    // The first datagram opens the channel; wait until the path carries.
    datagram(WARMUP, size, &mut buf);
    let mut ready = false;
    for _ in 0..25 {
        sender.send(&buf).await?;
        if let Ok(Ok(_)) = tokio::time::timeout(Duration::from_millis(200), sink.recv(&mut rbuf)).await {
            ready = true;
            break;
        }
    }
    if !ready {
        return Err(BenchError::Setup("udp forward never delivered".into()));
    }

    let (done_tx, mut done_rx) = tokio::sync::watch::channel(None::<u64>);
    let corrupt_at = cfg.corrupt_at;
    let sink_task = tokio::spawn(async move {
        let mut seen: Vec<bool> = Vec::new();
        let mut delivered = 0u64;
        let mut last = Instant::now();
        let mut expect = vec![0u8; size];
        loop {
            let total = *done_rx.borrow();
            if total.is_some_and(|t| delivered >= t) {
                return Ok::<_, BenchError>((delivered, last));
            }
            let wait = if total.is_some() { Duration::from_millis(500) } else { Duration::from_secs(3600) };
            let n = tokio::select! {
                r = tokio::time::timeout(wait, sink.recv(&mut rbuf)) => match r {
                    Ok(r) => r?,
                    Err(_) => return Ok((delivered, last)),
                },
                _ = done_rx.changed(), if total.is_none() => continue,
            };
            let at = Instant::now();
            if n < 8 {
                return Err(BenchError::Corruption { offset: 0 });
            }
            let seq = u64::from_be_bytes(rbuf[..8].try_into().expect("8 bytes"));
            if seq == WARMUP {
                continue;
            }
            let offset = seq.saturating_mul(size as u64);
            corrupt(&mut rbuf[..n], offset, corrupt_at);
            datagram(seq, size, &mut expect);
            if n != size || rbuf[..n] != expect[..] {
                let i = rbuf[..n].iter().zip(&expect).position(|(a, b)| a != b).unwrap_or(n);
                return Err(BenchError::Corruption { offset: offset + i as u64 });
            }
            let idx = seq as usize;
            if idx >= seen.len() {
                seen.resize(idx + 1, false);
            }
            if !seen[idx] {
                seen[idx] = true;
                delivered += 1;
                last = at;
            }
        }
    });

    let interval = Duration::from_secs_f64(size as f64 * 8.0 / (cfg.udp_rate_mbps * 1e6));
    let t0 = Instant::now();
    let mut seq = 0u64;
    while t0.elapsed() < cfg.duration {
        let due = t0 + interval * seq as u32;
        let now = Instant::now();
        if due > now + Duration::from_millis(1) {
            tokio::time::sleep(due - now).await;
        }
        datagram(seq, size, &mut buf);
        sender.send(&buf).await?;
        seq += 1;
    }
    let _ = done_tx.send(Some(seq));
    let (delivered, last) = sink_task.await.map_err(|e| BenchError::Setup(e.to_string()))??;
    fwd.stop();
    let mbps = (delivered * size as u64) as f64 * 8.0 / (last.max(t0) - t0).as_secs_f64().max(1e-9) / 1e6;
    Ok((mbps, seq, delivered))
}

/// Round-trip time of a UDP probe through a proxy adding `rtt`, against
/// a local echo socket; measures what the proxy itself adds.
pub async fn measure_proxy_rtt(n: usize, rtt: Duration) -> Result<RunReport, BenchError> {
    check_n(n)?;
    let echo = UdpSocket::bind("127.0.0.1:0").await?;
    let proxy = LatencyProxy::start(echo.local_addr()?, one_way(rtt))?;
    let echo_task = tokio::spawn(async move {
        let mut buf = [0u8; 64];
        while let Ok((len, from)) = echo.recv_from(&mut buf).await {
            let _ = echo.send_to(&buf[..len], from).await;
        }
    });
    let probe = UdpSocket::bind("127.0.0.1:0").await?;
    probe.connect(proxy.local_addr()).await?;
    let mut samples = Vec::with_capacity(n);
    let mut buf = [0u8; 64];
    for i in 0..n as u64 {
        let t0 = Instant::now();
        probe.send(&i.to_be_bytes()).await?;
        loop {
            let len = tokio::time::timeout(Duration::from_secs(5), probe.recv(&mut buf))
                .await
                .map_err(|_| BenchError::Session {
                    sample: i as usize,
                    error: "probe lost".into(),
                })??;
            if len == 8 && buf[..8] == i.to_be_bytes() {
                break;
            }
        }
        samples.push(ms(t0.elapsed()));
    }
    echo_task.abort();
    RunReport::new("proxy-rtt", samples, vec![None; n])
}

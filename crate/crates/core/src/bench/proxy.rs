//! UDP relay that delays every packet by a fixed one-way latency.
//!
//! Each client address gets its own upstream socket, so the upstream sees
//! one peer per client. Receiving and sending happen on dedicated threads
//! so timestamps do not depend on the async runtime's scheduling.

use std::collections::{HashMap, VecDeque};
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_millis(20);
const MAX_PACKET: usize = 65_535;
/// Upstream sockets with no traffic for this long are released.
const UPSTREAM_IDLE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ToServer,
    ToClient,
}

/// One relayed packet.
#[derive(Debug, Clone, Copy)]
pub struct PacketEvent {
    pub client: SocketAddr,
    pub direction: Direction,
    pub len: usize,
    pub received: Instant,
    /// When the packet left the proxy; `None` if it never did.
    pub forwarded: Option<Instant>,
}

struct Pending {
    due: Instant,
    payload: Vec<u8>,
    socket: Arc<UdpSocket>,
    to: SocketAddr,
    event: usize,
}

#[derive(Default)]
struct Queue {
    items: Mutex<VecDeque<Pending>>,
    ready: Condvar,
}

struct Shared {
    delay: Duration,
    upstream: SocketAddr,
    listen: Arc<UdpSocket>,
    stop: AtomicBool,
    events: Mutex<Vec<PacketEvent>>,
    to_server: Queue,
    to_client: Queue,
    clients: Mutex<HashMap<SocketAddr, Arc<UdpSocket>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

/// Handle to a running proxy; dropping it stops forwarding.
pub struct LatencyProxy {
    shared: Arc<Shared>,
    local: SocketAddr,
}

impl LatencyProxy {
    /// Listens on an ephemeral loopback port.
    pub fn start(upstream: SocketAddr, one_way: Duration) -> io::Result<Self> {
        Self::start_on("127.0.0.1:0".parse().expect("addr"), upstream, one_way)
    }

    pub fn start_on(listen: SocketAddr, upstream: SocketAddr, one_way: Duration) -> io::Result<Self> {
        let socket = UdpSocket::bind(listen)?;
        socket.set_read_timeout(Some(POLL))?;
        let local = socket.local_addr()?;
        let shared = Arc::new(Shared {
            delay: one_way,
            upstream,
            listen: Arc::new(socket),
            stop: AtomicBool::new(false),
            events: Mutex::new(Vec::new()),
            to_server: Queue::default(),
            to_client: Queue::default(),
            clients: Mutex::new(HashMap::new()),
            threads: Mutex::new(Vec::new()),
        });
        let mut threads = Vec::new();
        for dir in [Direction::ToServer, Direction::ToClient] {
            let s = shared.clone();
            threads.push(spawn("qs-proxy-send", move || sender(&s, dir))?);
        }
        let s = shared.clone();
        threads.push(spawn("qs-proxy-recv", move || from_clients(&s))?);
        shared.threads.lock().unwrap().extend(threads);
        Ok(LatencyProxy { shared, local })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn one_way_delay(&self) -> Duration {
        self.shared.delay
    }

    /// Packets relayed so far, in arrival order.
    pub fn events(&self) -> Vec<PacketEvent> {
        self.shared.events.lock().unwrap().clone()
    }

    pub fn clear_events(&self) {
        self.shared.events.lock().unwrap().clear();
    }

    /// Stops relaying immediately; queued packets are discarded.
    pub fn halt(&self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for q in [&self.shared.to_server, &self.shared.to_client] {
            q.items.lock().unwrap().clear();
            q.ready.notify_all();
        }
        let threads = std::mem::take(&mut *self.shared.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for LatencyProxy {
    fn drop(&mut self) {
        self.halt();
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> io::Result<JoinHandle<()>> {
    std::thread::Builder::new().name(name.into()).spawn(f)
}

fn record(s: &Shared, client: SocketAddr, direction: Direction, len: usize, received: Instant) -> usize {
    let mut ev = s.events.lock().unwrap();
    ev.push(PacketEvent {
        client,
        direction,
        len,
        received,
        forwarded: None,
    });
    ev.len() - 1
}

fn enqueue(s: &Shared, dir: Direction, p: Pending) {
    let q = match dir {
        Direction::ToServer => &s.to_server,
        Direction::ToClient => &s.to_client,
    };
    q.items.lock().unwrap().push_back(p);
    q.ready.notify_one();
}

fn from_clients(s: &Arc<Shared>) {
    let mut buf = vec![0u8; MAX_PACKET];
    while !s.stop.load(Ordering::SeqCst) {
        let (n, client) = match s.listen.recv_from(&mut buf) {
            Ok(v) => v,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => continue,
        };
        let received = Instant::now();
        let upstream = match upstream_for(s, client) {
            Ok(u) => u,
            Err(e) => {
                tracing::warn!(%client, "proxy cannot open upstream socket: {e}");
                continue;
            }
        };
        let event = record(s, client, Direction::ToServer, n, received);
        enqueue(
            s,
            Direction::ToServer,
            Pending {
                due: received + s.delay,
                payload: buf[..n].to_vec(),
                socket: upstream,
                to: s.upstream,
                event,
            },
        );
    }
}

fn upstream_for(s: &Arc<Shared>, client: SocketAddr) -> io::Result<Arc<UdpSocket>> {
    let mut clients = s.clients.lock().unwrap();
    if let Some(u) = clients.get(&client) {
        return Ok(u.clone());
    }
    let bind: SocketAddr = if s.upstream.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }
        .parse()
        .expect("addr");
    let sock = UdpSocket::bind(bind)?;
    sock.set_read_timeout(Some(POLL))?;
    let sock = Arc::new(sock);
    clients.insert(client, sock.clone());
    let (reader, shared) = (sock.clone(), s.clone());
    let t = spawn("qs-proxy-up", move || from_upstream(&shared, &reader, client))?;
    s.threads.lock().unwrap().push(t);
    Ok(sock)
}

fn from_upstream(s: &Shared, sock: &UdpSocket, client: SocketAddr) {
    let mut buf = vec![0u8; MAX_PACKET];
    let mut last = Instant::now();
    while !s.stop.load(Ordering::SeqCst) {
        let n = match sock.recv_from(&mut buf) {
            Ok((n, from)) if from == s.upstream => n,
            Ok(_) => continue,
            Err(_) => {
                if last.elapsed() > UPSTREAM_IDLE {
                    s.clients.lock().unwrap().remove(&client);
                    return;
                }
                continue;
            }
        };
        let received = Instant::now();
        last = received;
        let event = record(s, client, Direction::ToClient, n, received);
        enqueue(
            s,
            Direction::ToClient,
            Pending {
                due: received + s.delay,
                payload: buf[..n].to_vec(),
                socket: s.listen.clone(),
                to: client,
                event,
            },
        );
    }
}

fn sender(s: &Shared, dir: Direction) {
    let q = match dir {
        Direction::ToServer => &s.to_server,
        Direction::ToClient => &s.to_client,
    };
    loop {
        let next = {
            let mut items = q.items.lock().unwrap();
            loop {
                if s.stop.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(p) = items.pop_front() {
                    break p;
                }
                items = q.ready.wait_timeout(items, POLL).unwrap().0;
            }
        };
        // Every packet carries the same delay, so the queue is ordered by
        // due time and the head is always the next to go.
        let now = Instant::now();
        if next.due > now {
            std::thread::sleep(next.due - now);
        }
        if s.stop.load(Ordering::SeqCst) {
            return;
        }
        // stamped before sending: on a busy host the receiver may react
        // before send_to even returns
        let at = Instant::now();
        if next.socket.send_to(&next.payload, next.to).is_ok() {
            if let Some(e) = s.events.lock().unwrap().get_mut(next.event) {
                e.forwarded = Some(at);
            }
        }
    }
}

/// Round trips a client needed before `until`, counted from packet
/// causality rather than timers.
///
/// A client packet sent after receiving a server packet of depth `k` has
/// depth `k + 1`; a server packet has the largest depth among client
/// packets it had received when it was sent. The count is the largest
/// depth among client packets delivered to the server by `until`.
pub fn round_trips(events: &[PacketEvent], client: SocketAddr, until: Instant) -> u32 {
    let mut ev: Vec<&PacketEvent> = events.iter().filter(|e| e.client == client).collect();
    ev.sort_by_key(|e| e.received);
    let mut depths: Vec<u32> = Vec::with_capacity(ev.len());
    let mut best = 0;
    for (i, e) in ev.iter().enumerate() {
        let sent = e.received;
        let prior = ev[..i]
            .iter()
            .zip(&depths)
            .filter(|(p, _)| p.direction != e.direction && p.forwarded.is_some_and(|f| f <= sent))
            .map(|(_, d)| *d)
            .max()
            .unwrap_or(0);
        let d = match e.direction {
            Direction::ToServer => prior + 1,
            Direction::ToClient => prior,
        };
        depths.push(d);
        if e.direction == Direction::ToServer && e.forwarded.is_some_and(|f| f <= until) {
            best = best.max(d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(dir: Direction, at: u64, delay: u64, base: Instant) -> PacketEvent {
        PacketEvent {
            client: "127.0.0.1:1".parse().unwrap(),
            direction: dir,
            len: 1,
            received: base + Duration::from_millis(at),
            forwarded: Some(base + Duration::from_millis(at + delay)),
        }
    }

    #[test]
    fn depth_follows_causality() {
        use Direction::*;
        let b = Instant::now();
        let events = vec![
            ev(ToServer, 0, 50, b),   // initial
            ev(ToClient, 50, 50, b),  // server flight
            ev(ToServer, 100, 50, b), // finished + request
            ev(ToServer, 120, 50, b), // delayed ack, same depth
            ev(ToClient, 150, 50, b), // response
            ev(ToServer, 200, 50, b), // first channel
            ev(ToClient, 250, 50, b),
            ev(ToServer, 300, 50, b),
        ];
        let client = events[0].client;
        assert_eq!(round_trips(&events, client, b + Duration::from_millis(250)), 3);
        assert_eq!(round_trips(&events, client, b + Duration::from_millis(149)), 1);
        assert_eq!(round_trips(&events, client, b + Duration::from_millis(400)), 4);
        let other: SocketAddr = "127.0.0.1:2".parse().unwrap();
        assert_eq!(round_trips(&events, other, b + Duration::from_secs(1)), 0);
    }
}

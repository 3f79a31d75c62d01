//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `cargo test --test acceptance -- 4 11` runs a subset.

mod common;

use std::future::Future;
use std::panic::catch_unwind;
use std::pin::Pin;
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use bytes::Bytes;
use common::oidc::MockProvider;
use common::*;
use quicshell::auth::{
    mint_pubkey_jwt, ClientKey, Clock, Credential, IdentityEntry, IdentityStore, ManualClock, PasswordHash,
    RejectReason, SystemClock,
};
use quicshell::bench::{
    measure_echo_latency, measure_forward_throughput, measure_session_completion, ThroughputConfig,
};
use quicshell::exec::exec_command;
use quicshell::forward::{start_forward, ForwardingSpec, Protocol};
use quicshell::session::{connect, Channel, ChannelHandler, Conversation, ServerEvent, SessionError};
use quicshell::wire::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};

const CODEC_ROUND_TRIPS: usize = 10_000;
const CODEC_FUZZ_BUFFERS: usize = 1_000_000;
const CODEC_BUDGET: Duration = Duration::from_secs(60);
const AUTH_BUDGET: Duration = Duration::from_secs(30);
const RTT: Duration = Duration::from_millis(100);
const SESSION_SAMPLES: usize = 50;
const MAX_ROUND_TRIPS: u32 = 4;
const COMPLETION_SLACK_MS: f64 = 150.0;
const SIZE_DELTA_MS: f64 = 100.0;
const LISTING_BYTES: usize = 131_072;
const TCP_BYTES: usize = 10 << 20;
const UDP_DATAGRAMS: u32 = 1000;
const UDP_MAX_PAYLOAD: usize = 1200;
const THROUGHPUT_RUN: Duration = Duration::from_secs(3);
const TCP_MIN_MBPS: f64 = 100.0;
const UDP_MIN_MBPS: f64 = 50.0;
const HOL_MESSAGES: usize = 1000;
const HOL_MAX_STALL: Duration = Duration::from_millis(100);
const ECHO_SAMPLES: usize = 200;
const ECHO_MEDIAN_MS: (f64, f64) = (100.0, 130.0);

const CLIENT: &str = env!("CARGO_BIN_EXE_quicshell");

type Outcome = Result<String, String>;
type Check = fn() -> Pin<Box<dyn Future<Output = Outcome> + Send>>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if $cond {
        } else {
            return Err(format!($($fmt)*));
        }
    };
}

fn now() -> u64 {
    SystemClock.now_unix()
}

// criterion 1

fn rand_text(rng: &mut StdRng) -> String {
    let len = rng.gen_range(0..48);
    (0..len)
        .map(|_| match rng.gen_range(0..4) {
            0 => rng.gen_range('a'..='z'),
            1 => rng.gen_range(' '..='~'),
            2 => rng.gen_range('\u{80}'..='\u{7ff}'),
            _ => rng.gen::<char>(),
        })
        .collect()
}

fn rand_bytes(rng: &mut StdRng, max: usize) -> Vec<u8> {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| rng.gen()).collect()
}

fn rand_kind(rng: &mut StdRng) -> DataKind {
    [DataKind::Stdin, DataKind::Stdout, DataKind::Stderr][rng.gen_range(0..3)]
}

fn rand_message(rng: &mut StdRng, type_code: u64) -> Message {
    match type_code {
        0x01 => Message::PtyRequest {
            term: rand_text(rng),
            cols: rng.gen(),
            rows: rng.gen(),
        },
        0x02 => Message::ShellRequest,
        0x03 => Message::ExecRequest { command: rand_text(rng) },
        0x04 => Message::WindowChange {
            cols: rng.gen(),
            rows: rng.gen(),
        },
        0x10 => {
            let kind = rand_kind(rng);
            Message::data(kind, rand_bytes(rng, 2048))
        }
        0x20 => Message::ExitStatus { code: rng.gen() },
        _ => Message::ExitSignal {
            signal_name: rand_text(rng),
            core_dumped: rng.gen(),
            error_message: rand_text(rng),
        },
    }
}

fn rand_host(rng: &mut StdRng) -> String {
    let mut h = rand_text(rng);
    if h.is_empty() {
        h.push('h');
    }
    h
}

fn rand_preamble(rng: &mut StdRng, which: u8) -> ChannelPreamble {
    match which {
        0 => ChannelPreamble::Session,
        1 => ChannelPreamble::DirectTcp {
            host: rand_host(rng),
            port: rng.gen_range(1..=u16::MAX),
        },
        _ => ChannelPreamble::DirectUdp {
            host: rand_host(rng),
            port: rng.gen_range(1..=u16::MAX),
            datagram_id: rng.gen_range(0..=MAX_VARINT),
        },
    }
}

fn round_trip_all(rng: &mut StdRng) -> Result<usize, String> {
    let mut checked = 0;
    for code in [0x01, 0x02, 0x03, 0x04, 0x10, 0x20, 0x21] {
        for i in 0..CODEC_ROUND_TRIPS {
            let m = rand_message(rng, code);
            let enc = encode_frame(&m).map_err(|e| format!("encode {code:#x}: {e}"))?;
            let dec = decode_frame(&enc).map_err(|e| format!("decode {code:#x} #{i}: {e}"))?;
            ensure!(dec == (Frame::Message(m.clone()), enc.len()), "type {code:#x} #{i} differs: {m:?}");
            checked += 1;
        }
    }
    for which in 0..3 {
        for i in 0..CODEC_ROUND_TRIPS {
            let p = rand_preamble(rng, which);
            let enc = encode_preamble(&p).map_err(|e| format!("encode preamble: {e}"))?;
            let dec = decode_preamble(&enc).map_err(|e| format!("decode preamble #{i}: {e}"))?;
            ensure!(dec == (p.clone(), enc.len()), "preamble #{i} differs: {p:?}");
            checked += 1;
        }
    }
    for i in 0..CODEC_ROUND_TRIPS {
        let f = UdpFrame::new(rng.gen_range(0..=MAX_VARINT), rand_bytes(rng, 1200));
        let enc = encode_udp_frame(&f).map_err(|e| format!("encode udp: {e}"))?;
        ensure!(decode_udp_frame(&enc).as_ref() == Ok(&f), "udp frame #{i} differs");
        let v = rng.gen_range(0..=MAX_VARINT) >> rng.gen_range(0..62);
        let enc = encode_varint(v).map_err(|e| format!("encode varint: {e}"))?;
        ensure!(decode_varint(&enc) == Ok((v, enc.len())), "varint {v} differs");
        checked += 2;
    }
    Ok(checked)
}

/// Random noise, or a valid encoding with a few bytes flipped or cut.
fn fuzz_buffer(rng: &mut StdRng) -> Vec<u8> {
    if rng.gen_bool(0.5) {
        return rand_bytes(rng, 96);
    }
    let code = [0x01, 0x02, 0x03, 0x04, 0x10, 0x20, 0x21][rng.gen_range(0..7)];
    let mut b = match rng.gen_range(0..3) {
        0 => encode_frame(&rand_message(rng, code)).unwrap(),
        1 => {
            let w = rng.gen_range(0..3);
            encode_preamble(&rand_preamble(rng, w)).unwrap()
        }
        _ => encode_message(&rand_message(rng, code)).unwrap(),
    };
    for _ in 0..rng.gen_range(1..4) {
        if !b.is_empty() {
            let i = rng.gen_range(0..b.len());
            b[i] = rng.gen();
        }
    }
    if rng.gen_bool(0.3) {
        let cut = rng.gen_range(0..=b.len());
        b.truncate(cut);
    }
    b
}

fn decode_everything(b: &[u8]) {
    let _ = decode_varint(b);
    let _ = decode_message(b);
    let _ = decode_frame(b);
    let _ = decode_preamble(b);
    let _ = decode_udp_frame(b);
}

fn criterion_1() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let t0 = Instant::now();
        let mut rng = StdRng::seed_from_u64(0x5eed);
        let checked = round_trip_all(&mut rng)?;
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let mut aborts = 0usize;
        for _ in 0..CODEC_FUZZ_BUFFERS {
            let b = fuzz_buffer(&mut rng);
            if catch_unwind(|| decode_everything(&b)).is_err() {
                aborts += 1;
            }
        }
        std::panic::set_hook(hook);
        let took = t0.elapsed();
        ensure!(aborts == 0, "{aborts} fuzz buffers aborted the decoder");
        ensure!(took < CODEC_BUDGET, "took {took:?}, budget {CODEC_BUDGET:?}");
        Ok(format!(
            "{checked} round trips over 12 wire types, {CODEC_FUZZ_BUFFERS} fuzz buffers, 0 aborts, {:.1}s",
            took.as_secs_f64()
        ))
    })
}

// criterion 2

fn tamper_jwt(header: &str) -> String {
    let jwt = header.strip_prefix("Bearer ").expect("bearer header");
    let mut parts: Vec<String> = jwt.split('.').map(String::from).collect();
    let mut claims: serde_json::Value =
        serde_json::from_slice(&URL_SAFE_NO_PAD.decode(&parts[1]).expect("payload")).expect("json");
    claims["iat"] = (claims["iat"].as_u64().expect("iat") - 1).into();
    parts[1] = URL_SAFE_NO_PAD.encode(claims.to_string());
    format!("Bearer {}", parts.join("."))
}

fn tamper_basic(header: &str) -> String {
    let b64 = header.strip_prefix("Basic ").expect("basic header");
    let mut raw = STANDARD.decode(b64).expect("base64");
    raw.pop();
    raw.extend_from_slice(b"!");
    format!("Basic {}", STANDARD.encode(raw))
}

struct AuthCase {
    name: &'static str,
    credential: Credential,
    clock: Arc<dyn Clock>,
    rewrite: Option<fn(&str) -> String>,
    expect: u16,
}

fn criterion_2() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let t0 = Instant::now();
        let idp = MockProvider::start().await;
        let alice_key = ClientKey::generate_ed25519();
        let bob_key = ClientKey::generate_ed25519();
        let mut store = IdentityStore::new();
        store.add("alice", IdentityEntry::PasswordHash(PasswordHash::create(PASSWORD)));
        store.add("alice", IdentityEntry::AuthorizedKey(alice_key.public_key().clone()));
        store.add(
            "alice",
            IdentityEntry::Oidc {
                issuer: idp.issuer().into(),
                email: "alice@example.com".into(),
            },
        );
        store.add("bob", IdentityEntry::AuthorizedKey(bob_key.public_key().clone()));
        let srv = start(store, Arc::new(Echo), |o| o.record_events = true).await;

        let t = now();
        let sys: Arc<dyn Clock> = Arc::new(SystemClock);
        let past: Arc<dyn Clock> = Arc::new(ManualClock::new(t - 3600));
        let password = |p: &str| Credential::Password {
            username: "alice".into(),
            password: p.into(),
        };
        let key = |k: &ClientKey| Credential::PrivateKey {
            username: "alice".into(),
            key: k.clone(),
        };
        let token = |raw: String| Credential::OidcToken { raw_jwt: raw };
        let case = |name, credential, clock: &Arc<dyn Clock>, rewrite, expect| AuthCase {
            name,
            credential,
            clock: clock.clone(),
            rewrite,
            expect,
        };
        let cases = vec![
            case("basic/valid", password(PASSWORD), &sys, None, 200),
            case("basic/wrong-secret", password("wrong horse"), &sys, None, 401),
            // a password that was replaced is the closest thing Basic has to expiry
            case("basic/expired", password("retired password"), &sys, None, 401),
            case("basic/tampered", password(PASSWORD), &sys, Some(tamper_basic as fn(&str) -> String), 401),
            case(
                "basic/unauthorized-identity",
                Credential::Password {
                    username: "mallory".into(),
                    password: PASSWORD.into(),
                },
                &sys,
                None,
                401,
            ),
            case("pubkey/valid", key(&alice_key), &sys, None, 200),
            case("pubkey/wrong-secret", key(&ClientKey::generate_ed25519()), &sys, None, 401),
            case("pubkey/expired", key(&alice_key), &past, None, 401),
            case("pubkey/tampered", key(&alice_key), &sys, Some(tamper_jwt), 401),
            case("pubkey/unauthorized-identity", key(&bob_key), &sys, None, 401),
            case(
                "oidc/valid",
                token(idp.sign(&idp.claims("alice@example.com", t - 10, t + 600))),
                &sys,
                None,
                200,
            ),
            case(
                "oidc/wrong-secret",
                token(idp.sign_with_foreign_key(&idp.claims("alice@example.com", t - 10, t + 600))),
                &sys,
                None,
                401,
            ),
            case(
                "oidc/expired",
                token(idp.sign(&idp.claims("alice@example.com", t - 7200, t - 3600))),
                &sys,
                None,
                401,
            ),
            case(
                "oidc/tampered",
                token(idp.sign(&idp.claims("alice@example.com", t - 10, t + 600))),
                &sys,
                Some(tamper_jwt),
                401,
            ),
            case(
                "oidc/unauthorized-identity",
                token(idp.sign(&idp.claims("mallory@example.com", t - 10, t + 600))),
                &sys,
                None,
                401,
            ),
        ];

        let total = cases.len();
        for c in cases {
            let mut opts = srv.client_options();
            opts.rewrite_authorization = c.rewrite;
            let _ = srv.drain_events();
            let result = connect(&srv.destination(PATH), "alice", &c.credential, c.clock.as_ref(), &opts).await;
            let got = match &result {
                Ok(_) => 200,
                Err(SessionError::Unauthorized { schemes }) => {
                    ensure!(!schemes.is_empty(), "{}: 401 without WWW-Authenticate", c.name);
                    401
                }
                Err(e) => return Err(format!("{}: {e}", c.name)),
            };
            ensure!(got == c.expect, "{}: got {got}, expected {}", c.name, c.expect);
            let statuses: Vec<u16> = srv
                .drain_events()
                .into_iter()
                .filter_map(|e| match e {
                    ServerEvent::RequestAnswered { status, .. } => Some(status),
                    _ => None,
                })
                .collect();
            ensure!(statuses == [c.expect], "{}: server answered {statuses:?}", c.name);
            if let Ok(conv) = result {
                conv.close("done");
            }
        }
        let took = t0.elapsed();
        ensure!(took < AUTH_BUDGET, "took {took:?}, budget {AUTH_BUDGET:?}");
        Ok(format!("{total}/15 cases as expected, every 401 advertised schemes, {:.1}s", took.as_secs_f64()))
    })
}

// criterion 3

fn criterion_3() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let key = ClientKey::generate_ed25519();
        let srv = start(store_with(&key), Arc::new(Echo), |o| o.record_events = true).await;
        let credential = Credential::PrivateKey {
            username: "alice".into(),
            key: key.clone(),
        };
        let a = connect(&srv.destination(PATH), "alice", &credential, &SystemClock, &srv.client_options())
            .await
            .map_err(|e| format!("conversation A: {e}"))?;
        let stolen = mint_pubkey_jwt(&key, "alice", a.id(), now()).map_err(|e| e.to_string())?;
        let _ = srv.drain_events();
        let b = connect(
            &srv.destination(PATH),
            "alice",
            &Credential::OidcToken { raw_jwt: stolen },
            &SystemClock,
            &srv.client_options(),
        )
        .await;
        ensure!(
            matches!(b, Err(SessionError::Unauthorized { .. })),
            "conversation B was not refused: {:?}",
            b.map(|c| c.username().to_string())
        );
        let reasons: Vec<_> = srv
            .drain_events()
            .into_iter()
            .filter_map(|e| match e {
                ServerEvent::RequestAnswered { status: 401, reason, .. } => reason,
                _ => None,
            })
            .collect();
        ensure!(reasons == [RejectReason::SessionMismatch], "reasons {reasons:?}");
        Ok("token from A refused on B: 401 session-mismatch".into())
    })
}

// criteria 4 and 5

fn size_command(bytes: usize) -> String {
    format!("head -c {bytes} /dev/zero | tr '\\000' x")
}

fn criterion_4() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let r = measure_session_completion("true", SESSION_SAMPLES, RTT).await.map_err(|e| e.to_string())?;
        let rtts = r.max_rtt_count().ok_or("no round-trip counts")?;
        let limit = 4.0 * RTT.as_secs_f64() * 1e3 + COMPLETION_SLACK_MS;
        let detail = format!(
            "max round trips {rtts} (<= {MAX_ROUND_TRIPS}), mean {:.1} ms (<= {limit} ms), n={}",
            r.mean,
            r.samples.len()
        );
        ensure!(r.rtt_counts.iter().all(Option::is_some), "a sample lacks a round-trip count; {detail}");
        ensure!(rtts <= MAX_ROUND_TRIPS && r.mean <= limit, "{detail}");
        Ok(detail)
    })
}

fn criterion_5() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let small = measure_session_completion(&size_command(582), SESSION_SAMPLES, RTT)
            .await
            .map_err(|e| e.to_string())?;
        let large = measure_session_completion(&size_command(131_072), SESSION_SAMPLES, RTT)
            .await
            .map_err(|e| e.to_string())?;
        let delta = (large.mean - small.mean).abs();
        let detail = format!(
            "582 B mean {:.1} ms, 131 kB mean {:.1} ms, |delta| {delta:.1} ms (< {SIZE_DELTA_MS})",
            small.mean, large.mean
        );
        ensure!(delta < SIZE_DELTA_MS, "{detail}");
        Ok(detail)
    })
}

// criterion 6

fn listing_command() -> String {
    format!("LC_ALL=C ls -laR /usr 2>/dev/null | head -c {LISTING_BYTES}")
}

async fn run(mut cmd: Command) -> std::io::Result<std::process::Output> {
    tokio::task::spawn_blocking(move || cmd.output()).await.expect("join")
}

fn criterion_6() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let (srv, conv) = service_conversation().await;
        let out = exec_command(&conv, "exit 42").await.map_err(|e| e.to_string())?;
        ensure!(out.outcome.local_exit_code() == 42, "library exit code {:?}", out.outcome);

        let client = |command: &str| {
            let mut c = Command::new(CLIENT);
            c.args(["exec", "--insecure-pin", &srv.fingerprint])
                .arg(format!("https://alice@{}{}", srv.addr, PATH))
                .arg(command)
                .env_remove("QUICSHELL_TOKEN")
                .env("QUICSHELL_PASSWORD", PASSWORD);
            c
        };
        let exited = run(client("exit 42")).await.map_err(|e| e.to_string())?;
        ensure!(exited.status.code() == Some(42), "client exited with {:?}", exited.status);

        let remote = run(client(&listing_command())).await.map_err(|e| e.to_string())?;
        let mut local = Command::new("sh");
        local.args(["-c", &listing_command()]);
        let local = run(local).await.map_err(|e| e.to_string())?;
        ensure!(local.stdout.len() == LISTING_BYTES, "local listing only {} bytes", local.stdout.len());
        ensure!(remote.status.success(), "listing exited with {:?}", remote.status);
        if let Some(i) = remote.stdout.iter().zip(&local.stdout).position(|(a, b)| a != b) {
            return Err(format!("listing differs at byte {i}"));
        }
        ensure!(
            remote.stdout.len() == local.stdout.len(),
            "listing is {} bytes remotely, {} locally",
            remote.stdout.len(),
            local.stdout.len()
        );
        Ok(format!("exit 42 -> 42 (library and client), {LISTING_BYTES} B listing identical"))
    })
}

// criterion 7

fn pattern(len: usize, seed: u8) -> Vec<u8> {
    (0..len).map(|i| ((i % 251) as u8).wrapping_add(seed) ^ (i >> 16) as u8).collect()
}

fn local_spec(protocol: Protocol, port: u16) -> ForwardingSpec {
    ForwardingSpec {
        protocol,
        bind_host: "127.0.0.1".into(),
        bind_port: 0,
        host: "127.0.0.1".into(),
        port,
    }
}

async fn tcp_echo_target() -> std::io::Result<std::net::SocketAddr> {
    let l = TcpListener::bind("127.0.0.1:0").await?;
    let addr = l.local_addr()?;
    tokio::spawn(async move {
        while let Ok((mut s, _)) = l.accept().await {
            tokio::spawn(async move {
                let (mut r, mut w) = s.split();
                let _ = tokio::io::copy(&mut r, &mut w).await;
                let _ = w.shutdown().await;
            });
        }
    });
    Ok(addr)
}

async fn udp_echo_target() -> std::io::Result<std::net::SocketAddr> {
    let s = UdpSocket::bind("127.0.0.1:0").await?;
    let addr = s.local_addr()?;
    tokio::spawn(async move {
        let mut buf = vec![0u8; 65536];
        while let Ok((n, from)) = s.recv_from(&mut buf).await {
            let _ = s.send_to(&buf[..n], from).await;
        }
    });
    Ok(addr)
}

fn criterion_7() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let (_srv, conv) = service_conversation().await;
        let io = |e: std::io::Error| e.to_string();

        let target = tcp_echo_target().await.map_err(io)?;
        let fwd = start_forward(&conv, &local_spec(Protocol::Tcp, target.port()))
            .await
            .map_err(|e| e.to_string())?;
        let mut data = vec![0u8; TCP_BYTES];
        StdRng::seed_from_u64(0x7cb).fill(&mut data[..]);
        let (mut r, mut w) = TcpStream::connect(fwd.local_addr()).await.map_err(io)?.into_split();
        let sent = data.clone();
        let writer = tokio::spawn(async move {
            w.write_all(&sent).await?;
            w.shutdown().await
        });
        let mut back = Vec::with_capacity(TCP_BYTES);
        tokio::time::timeout(Duration::from_secs(60), r.read_to_end(&mut back))
            .await
            .map_err(|_| "TCP echo timed out".to_string())?
            .map_err(io)?;
        writer.await.map_err(|e| e.to_string())?.map_err(io)?;
        if let Some(i) = back.iter().zip(&data).position(|(a, b)| a != b) {
            return Err(format!("TCP stream differs at byte {i}"));
        }
        ensure!(back.len() == data.len(), "TCP returned {} of {} bytes", back.len(), data.len());

        let target = udp_echo_target().await.map_err(io)?;
        let fwd = start_forward(&conv, &local_spec(Protocol::Udp, target.port()))
            .await
            .map_err(|e| e.to_string())?;
        let sock = UdpSocket::bind("127.0.0.1:0").await.map_err(io)?;
        sock.connect(fwd.local_addr()).await.map_err(io)?;
        let mut buf = vec![0u8; 2048];
        let mut delivered = 0;
        for seq in 0..UDP_DATAGRAMS {
            let len = 4 + (seq as usize * 37) % (UDP_MAX_PAYLOAD - 3);
            let mut d = seq.to_be_bytes().to_vec();
            d.extend(pattern(len - 4, seq as u8));
            sock.send(&d).await.map_err(io)?;
            let n = tokio::time::timeout(Duration::from_secs(5), sock.recv(&mut buf))
                .await
                .map_err(|_| format!("datagram {seq} lost"))?
                .map_err(io)?;
            ensure!(buf[..n] == d[..], "datagram {seq} altered");
            delivered += 1;
        }
        Ok(format!(
            "{TCP_BYTES} B random TCP payload echoed exactly, {delivered}/{UDP_DATAGRAMS} UDP datagrams exact"
        ))
    })
}

// criterion 8

fn criterion_8() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let tcp = measure_forward_throughput(&ThroughputConfig::new(Protocol::Tcp, THROUGHPUT_RUN))
            .await
            .map_err(|e| e.to_string())?;
        let udp = measure_forward_throughput(&ThroughputConfig::new(Protocol::Udp, THROUGHPUT_RUN))
            .await
            .map_err(|e| e.to_string())?;
        let detail = format!(
            "TCP {:.1} Mbps (>= {TCP_MIN_MBPS}), UDP {:.1} Mbps (>= {UDP_MIN_MBPS}, delivered {:.4})",
            tcp.mean,
            udp.mean,
            udp.delivery_ratio.unwrap_or(0.0)
        );
        ensure!(tcp.mean >= TCP_MIN_MBPS && udp.mean >= UDP_MIN_MBPS, "{detail}");
        Ok(detail)
    })
}

// criterion 9

/// Session channels echo; a direct-tcp channel sends as fast as it is
/// allowed, counting messages.
struct Flood {
    sent: Arc<AtomicU64>,
}

#[async_trait]
impl ChannelHandler for Flood {
    async fn handle(&self, _conv: Conversation, mut ch: Channel) {
        match ch.preamble() {
            ChannelPreamble::DirectTcp { .. } => {
                let chunk = vec![0x55u8; 1024];
                while ch.send_data(DataKind::Stdout, &chunk).await.is_ok() {
                    self.sent.fetch_add(1, Ordering::SeqCst);
                }
            }
            _ => {
                while let Ok(Some(m)) = ch.next_message().await {
                    if ch.send(&m).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}

fn criterion_9() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let sent = Arc::new(AtomicU64::new(0));
        let key = ClientKey::generate_ed25519();
        let srv = start(store_with(&key), Arc::new(Flood { sent: sent.clone() }), |_| {}).await;
        let conv = connect(&srv.destination(PATH), "alice", &password_credential(), &SystemClock, &srv.client_options())
            .await
            .map_err(|e| e.to_string())?;
        let mut b = conv
            .open_channel(ChannelPreamble::DirectTcp {
                host: "flood".into(),
                port: 1,
            })
            .await
            .map_err(|e| e.to_string())?;

        // B is never read; wait until its sender is held back
        let deadline = Instant::now() + Duration::from_secs(20);
        let mut last = u64::MAX;
        loop {
            tokio::time::sleep(Duration::from_millis(300)).await;
            let now = sent.load(Ordering::SeqCst);
            if now == last && now > 0 {
                break;
            }
            ensure!(Instant::now() < deadline, "channel B never filled up ({now} messages sent)");
            last = now;
        }
        let blocked_at = sent.load(Ordering::SeqCst);

        let mut a = conv.open_channel(ChannelPreamble::Session).await.map_err(|e| e.to_string())?;
        let mut worst = Duration::ZERO;
        for i in 0..HOL_MESSAGES {
            let m = Message::data(DataKind::Stdin, Bytes::from((i as u32).to_be_bytes().to_vec()));
            let t = Instant::now();
            a.send(&m).await.map_err(|e| format!("A send {i}: {e}"))?;
            let back = tokio::time::timeout(Duration::from_secs(5), a.next_message())
                .await
                .map_err(|_| format!("A message {i} stalled for 5 s"))?
                .map_err(|e| format!("A receive {i}: {e}"))?;
            worst = worst.max(t.elapsed());
            ensure!(back.as_ref() == Some(&m), "A message {i} came back as {back:?}");
        }
        let still = sent.load(Ordering::SeqCst);
        ensure!(still == blocked_at, "B advanced from {blocked_at} to {still} while paused");
        // B resumes once read
        for _ in 0..16 {
            b.next_message().await.map_err(|e| format!("B resume: {e}"))?;
        }
        let detail = format!(
            "B held at {blocked_at} messages, A moved {HOL_MESSAGES} with worst gap {:.2} ms (< {} ms)",
            worst.as_secs_f64() * 1e3,
            HOL_MAX_STALL.as_millis()
        );
        ensure!(worst < HOL_MAX_STALL, "{detail}");
        conv.close("done");
        Ok(detail)
    })
}

// criterion 10

fn criterion_10() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let key = ClientKey::generate_ed25519();
        let srv = start(store_with(&key), Arc::new(Echo), |_| {}).await;
        let before = srv.auth.invocations();
        let wrong = ["/", "/ssh3", "/s3cret-path/x", "/S3CRET-PATH", "/s3cret-pat"];
        for path in wrong {
            let r = connect(&srv.destination(path), "alice", &password_credential(), &SystemClock, &srv.client_options())
                .await;
            ensure!(
                matches!(r, Err(SessionError::NotFound)),
                "{path}: expected 404, got {:?}",
                r.map(|_| "200").map_err(|e| e.to_string())
            );
        }
        let after = srv.auth.invocations();
        ensure!(after == before, "authorization ran {} times for wrong paths", after - before);
        connect(&srv.destination(PATH), "alice", &password_credential(), &SystemClock, &srv.client_options())
            .await
            .map_err(|e| format!("control request: {e}"))?;
        ensure!(srv.auth.invocations() > after, "counter does not observe authorization");
        Ok(format!("{} wrong paths -> 404, 0 authorization invocations", wrong.len()))
    })
}

// criterion 11

fn criterion_11() -> Pin<Box<dyn Future<Output = Outcome> + Send>> {
    Box::pin(async {
        let r = measure_echo_latency(ECHO_SAMPLES, RTT).await.map_err(|e| e.to_string())?;
        let median = r.median();
        let detail = format!(
            "median {median:.2} ms in [{}, {}], p95 {:.2} ms, n={}",
            ECHO_MEDIAN_MS.0,
            ECHO_MEDIAN_MS.1,
            r.percentile(95.0),
            r.samples.len()
        );
        ensure!((ECHO_MEDIAN_MS.0..=ECHO_MEDIAN_MS.1).contains(&median), "{detail}");
        Ok(detail)
    })
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "codec round trips and fuzzing", criterion_1),
        (2, "authentication matrix", criterion_2),
        (3, "public-key token replay", criterion_3),
        (4, "session establishment round trips", criterion_4),
        (5, "output size independence", criterion_5),
        (6, "exit codes and output fidelity", criterion_6),
        (7, "forwarding integrity", criterion_7),
        (8, "forwarding throughput", criterion_8),
        (9, "no head-of-line blocking", criterion_9),
        (10, "secret path", criterion_10),
        (11, "keystroke echo latency", criterion_11),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = rt.block_on(async { tokio::spawn(check()).await });
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => Err(format!("panicked: {e}")),
        };
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    rt.shutdown_timeout(Duration::from_secs(1));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

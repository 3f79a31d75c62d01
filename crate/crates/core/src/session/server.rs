use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use tokio::sync::mpsc;

use super::channel::Channel;
use super::control;
use super::conversation::{Conversation, ConversationParts, Role};
use super::tls::{server_config, TlsIdentity, TransportOptions};
use super::SessionError;
use crate::auth::{
    derive_conversation_id, AuthDecision, Authenticator, ConversationId, ExporterUnavailable,
    RejectReason,
};
use crate::h3::{self, RequestHead, ResponseHead, PROTOCOL_TOKEN};

/// Response header announcing the per-conversation channel limit.
pub const MAX_CHANNELS_HEADER: &str = "ssh3-max-channels";

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub listen: SocketAddr,
    pub identity: TlsIdentity,
    /// Secret path; requests for any other path get 404.
    pub url_path: String,
    pub max_channels: u32,
    pub transport: TransportOptions,
    /// Time allowed from connection start to the CONNECT request.
    pub request_timeout: Duration,
    /// Keep a timestamped event log (for benchmarks).
    pub record_events: bool,
}

impl ServerOptions {
    pub fn new(listen: SocketAddr, identity: TlsIdentity, url_path: &str) -> Self {
        ServerOptions {
            listen,
            identity,
            url_path: url_path.to_string(),
            max_channels: 64,
            transport: TransportOptions::default(),
            request_timeout: Duration::from_secs(10),
            record_events: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.url_path.starts_with('/') {
            return Err(format!("url_path {:?} must begin with '/'", self.url_path));
        }
        if self.url_path.contains('?') {
            return Err("url_path must not contain '?'".into());
        }
        if self.max_channels == 0 {
            return Err("max_channels must be at least 1".into());
        }
        Ok(())
    }
}

/// Timestamped server milestones.
#[derive(Debug, Clone)]
pub enum ServerEvent {
    ConnectionAccepted {
        remote: SocketAddr,
        at: Instant,
    },
    RequestAnswered {
        status: u16,
        reason: Option<RejectReason>,
        at: Instant,
    },
    Authorized {
        conversation: ConversationId,
        username: String,
        at: Instant,
    },
    FirstChannelMessage {
        conversation: ConversationId,
        channel: u64,
        at: Instant,
    },
}

impl ServerEvent {
    pub fn at(&self) -> Instant {
        match self {
            ServerEvent::ConnectionAccepted { at, .. }
            | ServerEvent::RequestAnswered { at, .. }
            | ServerEvent::Authorized { at, .. }
            | ServerEvent::FirstChannelMessage { at, .. } => *at,
        }
    }
}

/// Serves the channels a client opens on an accepted conversation.
#[async_trait]
pub trait ChannelHandler: Send + Sync + 'static {
    async fn handle(&self, conversation: Conversation, channel: Channel);
}

/// Outcome of checking one CONNECT request.
#[derive(Debug, Clone)]
pub struct Acceptance {
    pub response: ResponseHead,
    /// `None` when the request never reached authorization.
    pub decision: Option<AuthDecision>,
}

impl Acceptance {
    pub fn status(&self) -> u16 {
        self.response.status
    }
}

/// Applies the path gate, then authorization, to one CONNECT request.
pub async fn server_accept(
    request: &RequestHead,
    url_path: &str,
    max_channels: u32,
    auth: &Authenticator,
    sid: &ConversationId,
) -> Acceptance {
    if request.method != "CONNECT" || request.protocol.as_deref() != Some(PROTOCOL_TOKEN) {
        return Acceptance {
            response: ResponseHead::new(400),
            decision: None,
        };
    }
    if request.path_only() != url_path {
        return Acceptance {
            response: ResponseHead::new(404),
            decision: None,
        };
    }
    let user = request.query_param("user").unwrap_or_default();
    let decision = auth
        .authorize(request.header("authorization"), &user, sid)
        .await;
    let response = match decision.www_authenticate() {
        Some(challenge) => ResponseHead::new(401).with_header("www-authenticate", challenge),
        None => ResponseHead::new(200).with_header(MAX_CHANNELS_HEADER, max_channels.to_string()),
    };
    Acceptance {
        response,
        decision: Some(decision),
    }
}

struct Shared {
    options: ServerOptions,
    auth: Arc<Authenticator>,
    handler: Arc<dyn ChannelHandler>,
    events: Option<mpsc::UnboundedSender<ServerEvent>>,
}

impl Shared {
    fn record(&self, e: ServerEvent) {
        if let Some(tx) = &self.events {
            let _ = tx.send(e);
        }
    }
}

/// A listening server.
pub struct Server {
    endpoint: quinn::Endpoint,
    shared: Arc<Shared>,
    events: Option<mpsc::UnboundedReceiver<ServerEvent>>,
}

impl Server {
    pub fn bind(
        options: ServerOptions,
        auth: Arc<Authenticator>,
        handler: Arc<dyn ChannelHandler>,
    ) -> Result<Self, SessionError> {
        options
            .validate()
            .map_err(|m| SessionError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, m)))?;
        let cfg = server_config(&options.identity, &options.transport, options.max_channels)?;
        let endpoint = quinn::Endpoint::server(cfg, options.listen)?;
        let (tx, rx) = if options.record_events {
            let (tx, rx) = mpsc::unbounded_channel();
            (Some(tx), Some(rx))
        } else {
            (None, None)
        };
        Ok(Server {
            endpoint,
            shared: Arc::new(Shared {
                options,
                auth,
                handler,
                events: tx,
            }),
            events: rx,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.endpoint.local_addr()
    }

    /// The event log, when `record_events` was set. Taken once.
    pub fn take_events(&mut self) -> Option<mpsc::UnboundedReceiver<ServerEvent>> {
        self.events.take()
    }

    /// Handle that can stop the accept loop from elsewhere.
    pub fn endpoint(&self) -> quinn::Endpoint {
        self.endpoint.clone()
    }

    /// Accepts connections until the endpoint is closed.
    pub async fn run(&self) {
        while let Some(incoming) = self.endpoint.accept().await {
            let shared = self.shared.clone();
            tokio::spawn(async move {
                let remote = incoming.remote_address();
                if let Err(e) = serve_connection(incoming, shared).await {
                    tracing::debug!(%remote, "connection ended: {e}");
                }
            });
        }
    }

    /// Closes every connection and stops accepting.
    pub async fn shutdown(&self) {
        self.endpoint.close(h3::H3_NO_ERROR.into(), b"server shutting down");
        let _ = tokio::time::timeout(Duration::from_secs(2), self.endpoint.wait_idle()).await;
    }
}

pub(crate) fn exporter(
    conn: &quinn::Connection,
) -> impl FnOnce(&[u8], &[u8], usize) -> Result<Vec<u8>, ExporterUnavailable> + '_ {
    move |label, context, len| {
        let mut out = vec![0u8; len];
        conn.export_keying_material(&mut out, label, context)
            .map_err(|_| ExporterUnavailable("TLS exporter refused the request".into()))?;
        Ok(out)
    }
}

async fn serve_connection(incoming: quinn::Incoming, shared: Arc<Shared>) -> Result<(), SessionError> {
    let connecting = incoming.accept()?;
    // 0.5-RTT: our SETTINGS leave with the server's handshake flight.
    let (conn, established) = match connecting.into_0rtt() {
        Ok(pair) => pair,
        Err(connecting) => {
            let conn = connecting.await?;
            return serve_established(conn, shared, None).await;
        }
    };
    serve_established(conn, shared, Some(established)).await
}

async fn serve_established(
    conn: quinn::Connection,
    shared: Arc<Shared>,
    established: Option<quinn::ZeroRttAccepted>,
) -> Result<(), SessionError> {
    shared.record(ServerEvent::ConnectionAccepted {
        remote: conn.remote_address(),
        at: Instant::now(),
    });
    let control_stream = control::open_control(&conn).await?;
    let (settings_rx, peer_task) = control::spawn_peer_streams(conn.clone());
    let result = async {
        let (mut send, mut recv) =
            tokio::time::timeout(shared.options.request_timeout, conn.accept_bi())
                .await
                .map_err(|_| SessionError::Timeout("waiting for the CONNECT request"))??;
        let fields = h3::read_headers(&mut recv).await?;
        let request = RequestHead::from_fields(fields)?;
        if let Some(e) = established {
            let _ = e.await;
        }
        control::await_settings(settings_rx).await?;
        let sid = derive_conversation_id(exporter(&conn))?;
        let acceptance = server_accept(
            &request,
            &shared.options.url_path,
            shared.options.max_channels,
            &shared.auth,
            &sid,
        )
        .await;
        log_decision(&conn, &acceptance);
        send.write_all(&acceptance.response.encode()).await?;
        let status = acceptance.status();
        shared.record(ServerEvent::RequestAnswered {
            status,
            reason: acceptance.decision.as_ref().and_then(|d| d.reason()),
            at: Instant::now(),
        });
        let username = match acceptance.decision {
            Some(AuthDecision::Accepted { username }) if status == 200 => username,
            _ => {
                let _ = send.finish();
                // Let the client read the answer; it closes the connection.
                let _ = tokio::time::timeout(Duration::from_secs(5), conn.closed()).await;
                return Ok(None);
            }
        };
        shared.record(ServerEvent::Authorized {
            conversation: sid,
            username: username.clone(),
            at: Instant::now(),
        });
        Ok::<_, SessionError>(Some((sid, username, send, recv)))
    }
    .await;
    let (sid, username, send, recv) = match result {
        Ok(Some(v)) => v,
        Ok(None) => {
            peer_task.abort();
            return Ok(());
        }
        Err(e) => {
            peer_task.abort();
            let code = match &e {
                SessionError::H3(h3::H3Error::MissingSetting(_)) => h3::H3_SETTINGS_ERROR,
                _ => h3::H3_GENERAL_PROTOCOL_ERROR,
            };
            conn.close(code.into(), e.to_string().as_bytes());
            return Err(e);
        }
    };
    let connect_stream_id: u64 = send.id().into();
    let conv = Conversation::start(ConversationParts {
        conn: conn.clone(),
        role: Role::Server,
        id: sid,
        username,
        connect_stream_id,
        max_channels: shared.options.max_channels,
        events: shared.events.clone(),
        streams: vec![control_stream, send],
        tasks: vec![peer_task],
        endpoint: None,
    });
    // The conversation lives as long as the CONNECT stream.
    let watcher = {
        let conn = conn.clone();
        tokio::spawn(async move {
            let mut recv = recv;
            let mut sink = tokio::io::sink();
            let _ = tokio::io::copy(&mut recv, &mut sink).await;
            conn.close(h3::H3_NO_ERROR.into(), b"conversation ended");
        })
    };
    while let Some(channel) = conv.accept_channel().await {
        let handler = shared.handler.clone();
        let conv = conv.clone();
        tokio::spawn(async move { handler.handle(conv, channel).await });
    }
    watcher.abort();
    Ok(())
}

fn log_decision(conn: &quinn::Connection, a: &Acceptance) {
    let remote = conn.remote_address();
    match &a.decision {
        None => tracing::info!(%remote, status = a.status(), "request refused before authorization"),
        Some(AuthDecision::Accepted { username }) => {
            tracing::info!(%remote, user = %username, "authorized")
        }
        Some(AuthDecision::Rejected { reason, .. }) => {
            tracing::info!(%remote, reason = reason.as_str(), "authorization rejected")
        }
    }
}

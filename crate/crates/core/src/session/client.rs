use std::net::SocketAddr;
use std::time::Duration;

use super::control;
use super::conversation::{Conversation, ConversationParts, Role};
use super::server::{exporter, MAX_CHANNELS_HEADER};
use super::tls::{client_config, TransportOptions, Trust};
use super::SessionError;
use crate::auth::{
    build_authorization_header, derive_conversation_id, parse_www_authenticate, Clock, Credential,
};
use crate::h3::{self, percent_encode, RequestHead, ResponseHead};

pub const DEFAULT_PORT: u16 = 443;
pub const DEFAULT_PATH: &str = "/ssh3";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DestinationError {
    #[error("invalid destination {0:?}: {1}")]
    Invalid(String, String),
    #[error("destination scheme must be https, not {0:?}")]
    Scheme(String),
}

/// Where a conversation goes: `https://[user@]host[:port]/secret-path`.
/// The scheme may be omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Destination {
    pub username: Option<String>,
    pub host: String,
    pub port: u16,
    pub path: String,
}

impl Destination {
    pub fn parse(s: &str) -> Result<Self, DestinationError> {
        let with_scheme = if s.contains("://") {
            s.to_string()
        } else {
            format!("https://{s}")
        };
        // the url crate would read "https:///p" as host "p"
        if with_scheme.split_once("://").is_some_and(|(_, rest)| rest.starts_with('/')) {
            return Err(DestinationError::Invalid(s.into(), "missing host".into()));
        }
        let url = url::Url::parse(&with_scheme)
            .map_err(|e| DestinationError::Invalid(s.into(), e.to_string()))?;
        if url.scheme() != "https" {
            return Err(DestinationError::Scheme(url.scheme().into()));
        }
        if url.query().is_some() || url.fragment().is_some() {
            return Err(DestinationError::Invalid(
                s.into(),
                "query strings and fragments are not allowed".into(),
            ));
        }
        let host = url
            .host_str()
            .ok_or_else(|| DestinationError::Invalid(s.into(), "missing host".into()))?
            .trim_start_matches('[')
            .trim_end_matches(']')
            .to_string();
        let username = match url.username() {
            "" => None,
            u => Some(h3_percent_decode(u)),
        };
        let path = match url.path() {
            "" | "/" => DEFAULT_PATH.to_string(),
            p => p.to_string(),
        };
        Ok(Destination {
            username,
            host,
            port: url.port().unwrap_or(DEFAULT_PORT),
            path,
        })
    }

    /// `host:port` as used in `:authority`, bracketing IPv6 literals.
    pub fn authority(&self) -> String {
        if self.host.contains(':') {
            format!("[{}]:{}", self.host, self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }
}

impl std::fmt::Display for Destination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("https://")?;
        if let Some(u) = &self.username {
            write!(f, "{}@", percent_encode(u))?;
        }
        write!(f, "{}{}", self.authority(), self.path)
    }
}

impl std::str::FromStr for Destination {
    type Err = DestinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Destination::parse(s)
    }
}

fn h3_percent_decode(s: &str) -> String {
    url::form_urlencoded::parse(format!("u={s}").as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub trust: Trust,
    pub transport: TransportOptions,
    /// Bound on handshake plus CONNECT exchange.
    pub timeout: Duration,
    /// Applied to the `Authorization` value just before it is sent.
    /// Lets test harnesses present altered credentials.
    pub rewrite_authorization: Option<fn(&str) -> String>,
}

impl ClientOptions {
    pub fn new(trust: Trust) -> Self {
        ClientOptions {
            trust,
            transport: TransportOptions::default(),
            timeout: Duration::from_secs(10),
            rewrite_authorization: None,
        }
    }
}

/// Opens a conversation: QUIC handshake, then one Extended CONNECT
/// carrying the credential. A public-key credential signs over the
/// conversation id derived from this connection.
pub async fn connect(
    dest: &Destination,
    username: &str,
    credential: &Credential,
    clock: &dyn Clock,
    options: &ClientOptions,
) -> Result<Conversation, SessionError> {
    tokio::time::timeout(options.timeout, connect_inner(dest, username, credential, clock, options))
        .await
        .map_err(|_| SessionError::Timeout("establishing the conversation"))?
}

async fn resolve(dest: &Destination) -> Result<SocketAddr, SessionError> {
    tokio::net::lookup_host((dest.host.as_str(), dest.port))
        .await
        .map_err(|_| SessionError::Resolve(dest.host.clone()))?
        .next()
        .ok_or_else(|| SessionError::Resolve(dest.host.clone()))
}

async fn connect_inner(
    dest: &Destination,
    username: &str,
    credential: &Credential,
    clock: &dyn Clock,
    options: &ClientOptions,
) -> Result<Conversation, SessionError> {
    let addr = resolve(dest).await?;
    let bind: SocketAddr = if addr.is_ipv4() {
        "0.0.0.0:0".parse().expect("addr")
    } else {
        "[::]:0".parse().expect("addr")
    };
    let endpoint = quinn::Endpoint::client(bind)?;
    let cfg = client_config(&options.trust, &options.transport)?;
    let conn = endpoint.connect_with(cfg, addr, &dest.host)?.await?;
    let control_stream = control::open_control(&conn).await?;
    let (settings_rx, peer_task) = control::spawn_peer_streams(conn.clone());
    let result = async {
        let sid = derive_conversation_id(exporter(&conn))?;
        let mut authorization = build_authorization_header(credential, Some(&sid), clock.now_unix())?;
        if let Some(rewrite) = options.rewrite_authorization {
            authorization = rewrite(&authorization);
        }
        let path = format!("{}?user={}", dest.path, percent_encode(username));
        let mut request = RequestHead::connect(&dest.authority(), &path);
        request
            .headers
            .push(("authorization".into(), authorization));
        // Extended CONNECT may only be sent once the server enabled it;
        // its SETTINGS ride the server's handshake flight.
        control::await_settings(settings_rx).await?;
        let (mut send, mut recv) = conn.open_bi().await?;
        send.write_all(&request.encode()).await?;
        let response = ResponseHead::from_fields(h3::read_headers(&mut recv).await?)?;
        Ok::<_, SessionError>((sid, response, send, recv))
    }
    .await;
    let (sid, response, send, recv) = match result {
        Ok(v) => v,
        Err(e) => {
            peer_task.abort();
            conn.close(h3::H3_GENERAL_PROTOCOL_ERROR.into(), b"");
            return Err(e);
        }
    };
    match response.status {
        200 => {}
        status => {
            peer_task.abort();
            conn.close(h3::H3_NO_ERROR.into(), b"");
            return Err(match status {
                401 => SessionError::Unauthorized {
                    schemes: response
                        .header("www-authenticate")
                        .map(parse_www_authenticate)
                        .unwrap_or_default(),
                },
                404 => SessionError::NotFound,
                s => SessionError::UnexpectedStatus(s),
            });
        }
    }
    let max_channels = response
        .header(MAX_CHANNELS_HEADER)
        .and_then(|v| v.parse().ok())
        .unwrap_or(u32::MAX);
    let drain = tokio::spawn(async move {
        let mut recv = recv;
        let _ = tokio::io::copy(&mut recv, &mut tokio::io::sink()).await;
    });
    Ok(Conversation::start(ConversationParts {
        conn,
        role: Role::Client,
        id: sid,
        username: username.to_string(),
        connect_stream_id: send.id().into(),
        max_channels,
        events: None,
        streams: vec![control_stream, send],
        tasks: vec![peer_task, drain.abort_handle()],
        endpoint: Some(endpoint),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_url() {
        let d = Destination::parse("https://alice@example.org:4433/s3cret").unwrap();
        assert_eq!(d.username.as_deref(), Some("alice"));
        assert_eq!(d.host, "example.org");
        assert_eq!(d.port, 4433);
        assert_eq!(d.path, "/s3cret");
        assert_eq!(d.to_string(), "https://alice@example.org:4433/s3cret");
    }

    #[test]
    fn scheme_and_path_are_optional() {
        let d = Destination::parse("bob@127.0.0.1").unwrap();
        assert_eq!(d.port, DEFAULT_PORT);
        assert_eq!(d.path, DEFAULT_PATH);
        assert_eq!(d.username.as_deref(), Some("bob"));
    }

    #[test]
    fn ipv6_literal() {
        let d = Destination::parse("https://[::1]:4433/p").unwrap();
        assert_eq!(d.host, "::1");
        assert_eq!(d.authority(), "[::1]:4433");
        assert_eq!(Destination::parse(&d.to_string()).unwrap(), d);
    }

    #[test]
    fn rejects_other_schemes_and_queries() {
        assert!(matches!(
            Destination::parse("http://h/p"),
            Err(DestinationError::Scheme(_))
        ));
        assert!(Destination::parse("https://h/p?user=x").is_err());
        assert!(Destination::parse("https:///p").is_err());
    }
}

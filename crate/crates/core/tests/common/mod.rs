#![allow(dead_code)]

pub mod oidc;

use std::net::SocketAddr;
use std::sync::Arc;

use async_trait::async_trait;
use quicshell::auth::{
    AuthPolicy, Authenticator, ClientKey, Clock, IdentityEntry, IdentityStore, PasswordHash,
    SystemClock,
};
use quicshell::session::{
    Channel, ChannelHandler, ClientOptions, Conversation, Destination, Server, ServerOptions,
    TlsIdentity, TransportOptions, Trust,
};

pub const PATH: &str = "/s3cret-path";
pub const PASSWORD: &str = "correct horse";

pub struct TestServer {
    pub server: Arc<Server>,
    /// Present when the tweak turned on `record_events`.
    pub events: std::sync::Mutex<Option<tokio::sync::mpsc::UnboundedReceiver<quicshell::session::ServerEvent>>>,
    pub addr: SocketAddr,
    pub auth: Arc<Authenticator>,
    pub fingerprint: String,
}

impl TestServer {
    /// Events recorded so far.
    pub fn drain_events(&self) -> Vec<quicshell::session::ServerEvent> {
        let mut out = Vec::new();
        if let Some(rx) = self.events.lock().unwrap().as_mut() {
            while let Ok(e) = rx.try_recv() {
                out.push(e);
            }
        }
        out
    }

    pub fn destination(&self, path: &str) -> Destination {
        Destination::parse(&format!("https://{}{}", self.addr, path)).unwrap()
    }

    pub fn client_options(&self) -> ClientOptions {
        let mut o = ClientOptions::new(Trust::pin(&self.fingerprint).unwrap());
        o.transport = TransportOptions::lan();
        o
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.endpoint().close(0u32.into(), b"");
    }
}

/// A store with `alice` holding a password and `key`.
pub fn store_with(key: &ClientKey) -> IdentityStore {
    let mut store = IdentityStore::new();
    store.add("alice", IdentityEntry::PasswordHash(PasswordHash::create(PASSWORD)));
    store.add("alice", IdentityEntry::AuthorizedKey(key.public_key().clone()));
    store
}

pub async fn start(
    store: IdentityStore,
    handler: Arc<dyn ChannelHandler>,
    tweak: impl FnOnce(&mut ServerOptions),
) -> TestServer {
    start_with_clock(store, handler, Arc::new(SystemClock), tweak).await
}

pub async fn start_with_clock(
    store: IdentityStore,
    handler: Arc<dyn ChannelHandler>,
    clock: Arc<dyn Clock>,
    tweak: impl FnOnce(&mut ServerOptions),
) -> TestServer {
    let identity = TlsIdentity::self_signed(&["localhost"]).unwrap();
    let fingerprint = identity.fingerprint();
    let mut options = ServerOptions::new("127.0.0.1:0".parse().unwrap(), identity, PATH);
    options.transport = TransportOptions::lan();
    tweak(&mut options);
    let auth = Arc::new(Authenticator::new(
        Arc::new(store),
        AuthPolicy {
            oidc_audience: Some("quicshell-test".into()),
            ..AuthPolicy::default()
        },
        clock,
    ));
    let mut server = Server::bind(options, auth.clone(), handler).unwrap();
    let events = std::sync::Mutex::new(server.take_events());
    let server = Arc::new(server);
    let addr = server.local_addr().unwrap();
    let s = server.clone();
    tokio::spawn(async move { s.run().await });
    TestServer {
        server,
        events,
        addr,
        auth,
        fingerprint,
    }
}

/// Sends every received message straight back, then finishes.
pub struct Echo;

#[async_trait]
impl ChannelHandler for Echo {
    async fn handle(&self, _conv: Conversation, mut ch: Channel) {
        while let Ok(Some(m)) = ch.next_message().await {
            if ch.send(&m).await.is_err() {
                return;
            }
        }
        let _ = ch.finish().await;
    }
}

pub fn password_credential() -> quicshell::auth::Credential {
    quicshell::auth::Credential::Password {
        username: "alice".into(),
        password: PASSWORD.into(),
    }
}

/// Server running the standard service, plus an open conversation to it.
pub async fn service_conversation() -> (TestServer, Conversation) {
    let key = ClientKey::generate_ed25519();
    let srv = start(store_with(&key), Arc::new(quicshell::service::Service::default()), |_| {}).await;
    let conv = quicshell::session::connect(
        &srv.destination(PATH),
        "alice",
        &password_credential(),
        &SystemClock,
        &srv.client_options(),
    )
    .await
    .unwrap();
    (srv, conv)
}

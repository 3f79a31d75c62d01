//! Python bindings: wire codec helpers, identity helpers, and blocking
//! client and server handles backed by a shared tokio runtime.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use quicshell::auth::{AuthPolicy, Authenticator, ClientKey, Credential, IdentityStore, PasswordHash, SystemClock};
use quicshell::exec::exec_command;
use quicshell::forward::ForwardingSpec;
use quicshell::service::Service;
use quicshell::session::{
    connect, ClientOptions, Conversation, Destination, Server as CoreServer, ServerOptions, SessionError,
    TlsIdentity, Trust,
};
use quicshell::wire::{self, DataKind, Frame, Message};

create_exception!(quicshell, QuicshellError, PyException);
create_exception!(quicshell, AuthenticationError, QuicshellError);
create_exception!(quicshell, NotFoundError, QuicshellError);

fn runtime() -> &'static tokio::runtime::Runtime {
    static RT: OnceLock<tokio::runtime::Runtime> = OnceLock::new();
    RT.get_or_init(|| {
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .expect("tokio runtime")
    })
}

fn err(e: impl std::fmt::Display) -> PyErr {
    QuicshellError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::Unauthorized { .. } => AuthenticationError::new_err(e.to_string()),
        SessionError::NotFound => NotFoundError::new_err(e.to_string()),
        other => err(other),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn encode_varint(py: Python<'_>, value: u64) -> PyResult<Py<PyBytes>> {
    let b = wire::encode_varint(value).map_err(value_err)?;
    Ok(PyBytes::new(py, &b).unbind())
}

/// Returns `(value, bytes_consumed)`.
#[pyfunction]
fn decode_varint(data: &[u8]) -> PyResult<(u64, usize)> {
    wire::decode_varint(data).map_err(value_err)
}

fn kind_name(k: DataKind) -> &'static str {
    match k {
        DataKind::Stdin => "stdin",
        DataKind::Stdout => "stdout",
        DataKind::Stderr => "stderr",
    }
}

fn message_to_dict<'py>(py: Python<'py>, m: &Message) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match m {
        Message::PtyRequest { term, cols, rows } => {
            d.set_item("type", "pty_request")?;
            d.set_item("term", term)?;
            d.set_item("cols", cols)?;
            d.set_item("rows", rows)?;
        }
        Message::ShellRequest => d.set_item("type", "shell_request")?,
        Message::ExecRequest { command } => {
            d.set_item("type", "exec_request")?;
            d.set_item("command", command)?;
        }
        Message::WindowChange { cols, rows } => {
            d.set_item("type", "window_change")?;
            d.set_item("cols", cols)?;
            d.set_item("rows", rows)?;
        }
        Message::Data { kind, payload } => {
            d.set_item("type", "data")?;
            d.set_item("kind", kind_name(*kind))?;
            d.set_item("payload", PyBytes::new(py, payload))?;
        }
        Message::ExitStatus { code } => {
            d.set_item("type", "exit_status")?;
            d.set_item("code", code)?;
        }
        Message::ExitSignal {
            signal_name,
            core_dumped,
            error_message,
        } => {
            d.set_item("type", "exit_signal")?;
            d.set_item("signal_name", signal_name)?;
            d.set_item("core_dumped", core_dumped)?;
            d.set_item("error_message", error_message)?;
        }
    }
    Ok(d)
}

fn field<'py, T: FromPyObjectOwned<'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T> {
    d.get_item(key)?
        .ok_or_else(|| PyValueError::new_err(format!("message lacks {key:?}")))?
        .extract()
        .map_err(Into::into)
}

fn dict_to_message(d: &Bound<'_, PyDict>) -> PyResult<Message> {
    let ty: String = field(d, "type")?;
    Ok(match ty.as_str() {
        "pty_request" => Message::PtyRequest {
            term: field(d, "term")?,
            cols: field(d, "cols")?,
            rows: field(d, "rows")?,
        },
        "shell_request" => Message::ShellRequest,
        "exec_request" => Message::ExecRequest {
            command: field(d, "command")?,
        },
        "window_change" => Message::WindowChange {
            cols: field(d, "cols")?,
            rows: field(d, "rows")?,
        },
        "data" => {
            let kind = match field::<String>(d, "kind")?.as_str() {
                "stdin" => DataKind::Stdin,
                "stdout" => DataKind::Stdout,
                "stderr" => DataKind::Stderr,
                other => return Err(PyValueError::new_err(format!("unknown data kind {other:?}"))),
            };
            Message::data(kind, field::<Vec<u8>>(d, "payload")?)
        }
        "exit_status" => Message::ExitStatus {
            code: field(d, "code")?,
        },
        "exit_signal" => Message::ExitSignal {
            signal_name: field(d, "signal_name")?,
            core_dumped: field(d, "core_dumped")?,
            error_message: field(d, "error_message")?,
        },
        other => return Err(PyValueError::new_err(format!("unknown message type {other:?}"))),
    })
}

/// Encodes a message dict as a length-prefixed frame.
#[pyfunction]
fn encode_frame(py: Python<'_>, message: &Bound<'_, PyDict>) -> PyResult<Py<PyBytes>> {
    let b = wire::encode_frame(&dict_to_message(message)?).map_err(value_err)?;
    Ok(PyBytes::new(py, &b).unbind())
}

/// Returns `(message_or_None, bytes_consumed)`; unknown message types
/// decode to `None` so callers can skip them.
#[pyfunction]
fn decode_frame<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(Option<Bound<'py, PyDict>>, usize)> {
    let (frame, used) = wire::decode_frame(data).map_err(value_err)?;
    Ok(match frame {
        Frame::Message(m) => (Some(message_to_dict(py, &m)?), used),
        Frame::Unknown { .. } => (None, used),
    })
}

/// Argon2id hash in identity-file form.
#[pyfunction]
fn hash_password(py: Python<'_>, password: &str) -> String {
    py.detach(|| PasswordHash::create(password).to_string())
}

#[pyfunction]
fn verify_password(py: Python<'_>, hash: &str, password: &str) -> PyResult<bool> {
    let h = PasswordHash::parse(hash).map_err(value_err)?;
    Ok(py.detach(|| h.verify(password)))
}

/// Returns `(openssh_private_key, authorized_key_line)`.
#[pyfunction]
fn generate_ed25519_key() -> PyResult<(String, String)> {
    let k = ClientKey::generate_ed25519();
    Ok((k.to_openssh().map_err(err)?, k.authorized_key_line()))
}

/// `proto/bind_host:bind_port/host:port`, split into a dict.
#[pyfunction]
fn parse_forwarding_spec<'py>(py: Python<'py>, spec: &str) -> PyResult<Bound<'py, PyDict>> {
    let s = ForwardingSpec::parse(spec).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("protocol", s.protocol.as_str())?;
    d.set_item("bind_host", s.bind_host)?;
    d.set_item("bind_port", s.bind_port)?;
    d.set_item("host", s.host)?;
    d.set_item("port", s.port)?;
    Ok(d)
}

#[pyfunction]
fn parse_destination<'py>(py: Python<'py>, url: &str) -> PyResult<Bound<'py, PyDict>> {
    let dest = Destination::parse(url).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("username", dest.username)?;
    d.set_item("host", dest.host)?;
    d.set_item("port", dest.port)?;
    d.set_item("path", dest.path)?;
    Ok(d)
}

/// An in-process server with a self-signed certificate running the
/// standard service (shell, exec, forwarding).
#[pyclass(module = "quicshell")]
struct Server {
    inner: Arc<CoreServer>,
    fingerprint: String,
    address: SocketAddr,
}

#[pymethods]
impl Server {
    /// `identities` uses the identity-file format (`[user name]` sections).
    #[new]
    #[pyo3(signature = (identities, path = "/ssh3", listen = "127.0.0.1:0"))]
    fn new(identities: &str, path: &str, listen: &str) -> PyResult<Self> {
        let store = IdentityStore::parse(identities).map_err(value_err)?;
        let listen: SocketAddr = listen.parse().map_err(value_err)?;
        let identity = TlsIdentity::self_signed(&["localhost"]).map_err(err)?;
        let fingerprint = identity.fingerprint();
        let options = ServerOptions::new(listen, identity, path);
        let auth = Arc::new(Authenticator::new(Arc::new(store), AuthPolicy::default(), Arc::new(SystemClock)));
        let _guard = runtime().enter();
        let server = Arc::new(CoreServer::bind(options, auth, Arc::new(Service::default())).map_err(err)?);
        let address = server.local_addr().map_err(err)?;
        let s = server.clone();
        runtime().spawn(async move { s.run().await });
        Ok(Server {
            inner: server,
            fingerprint,
            address,
        })
    }

    /// `host:port` the server listens on.
    #[getter]
    fn address(&self) -> String {
        self.address.to_string()
    }

    /// SHA-256 of the certificate, for `Client.connect(pin=...)`.
    #[getter]
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn stop(&self) {
        self.inner.endpoint().close(0u32.into(), b"server stopping");
    }
}

/// Result of `Client.exec`.
#[pyclass(module = "quicshell", get_all, frozen)]
struct CommandResult {
    stdout: Py<PyBytes>,
    stderr: Py<PyBytes>,
    /// What a local shell would report: the status, or 128 + signal.
    exit_code: i32,
}

#[pymethods]
impl CommandResult {
    fn __repr__(&self) -> String {
        format!("CommandResult(exit_code={})", self.exit_code)
    }
}

/// An open conversation.
#[pyclass(module = "quicshell")]
struct Client {
    conv: Conversation,
}

#[pymethods]
impl Client {
    /// Opens a conversation to `url` (`https://user@host:port/path`).
    /// Exactly one of `password`, `key` (OpenSSH private key text),
    /// `key_file` or `token` selects the credential. `pin` trusts one
    /// certificate fingerprint; otherwise `ca_file` or the system roots.
    #[staticmethod]
    #[pyo3(signature = (url, *, username = None, password = None, key = None, key_file = None, token = None, pin = None, ca_file = None, timeout = 10.0))]
    #[allow(clippy::too_many_arguments)]
    fn connect(
        py: Python<'_>,
        url: &str,
        username: Option<String>,
        password: Option<String>,
        key: Option<String>,
        key_file: Option<PathBuf>,
        token: Option<String>,
        pin: Option<&str>,
        ca_file: Option<PathBuf>,
        timeout: f64,
    ) -> PyResult<Client> {
        let dest = Destination::parse(url).map_err(value_err)?;
        let username = username
            .or_else(|| dest.username.clone())
            .ok_or_else(|| PyValueError::new_err("no username in the URL or arguments"))?;
        let credential = match (password, key, key_file, token) {
            (Some(password), None, None, None) => Credential::Password {
                username: username.clone(),
                password,
            },
            (None, Some(text), None, None) => Credential::PrivateKey {
                username: username.clone(),
                key: ClientKey::from_openssh(&text).map_err(value_err)?,
            },
            (None, None, Some(path), None) => Credential::PrivateKey {
                username: username.clone(),
                key: ClientKey::load(&path).map_err(value_err)?,
            },
            (None, None, None, Some(raw_jwt)) => Credential::OidcToken { raw_jwt },
            _ => return Err(PyValueError::new_err("give exactly one of password, key, key_file, token")),
        };
        let trust = match (pin, ca_file) {
            (Some(p), _) => Trust::pin(p).map_err(value_err)?,
            (None, Some(f)) => Trust::ca_file(&f).map_err(value_err)?,
            (None, None) => Trust::system().map_err(err)?,
        };
        let mut options = ClientOptions::new(trust);
        options.timeout = std::time::Duration::try_from_secs_f64(timeout).map_err(value_err)?;
        let conv = py
            .detach(|| runtime().block_on(connect(&dest, &username, &credential, &SystemClock, &options)))
            .map_err(session_err)?;
        Ok(Client { conv })
    }

    /// Base64 conversation id shared with the server.
    #[getter]
    fn conversation_id(&self) -> String {
        self.conv.id().to_base64()
    }

    #[getter]
    fn username(&self) -> &str {
        self.conv.username()
    }

    /// Runs `command` with empty stdin and collects its output.
    fn exec(&self, py: Python<'_>, command: &str) -> PyResult<CommandResult> {
        let out = py
            .detach(|| runtime().block_on(exec_command(&self.conv, command)))
            .map_err(err)?;
        Ok(CommandResult {
            stdout: PyBytes::new(py, &out.stdout).unbind(),
            stderr: PyBytes::new(py, &out.stderr).unbind(),
            exit_code: out.outcome.local_exit_code(),
        })
    }

    fn close(&self, py: Python<'_>) {
        py.detach(|| runtime().block_on(self.conv.close_gracefully("client closed")));
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(
        &self,
        py: Python<'_>,
        _t: Option<&Bound<'_, PyAny>>,
        _v: Option<&Bound<'_, PyAny>>,
        _tb: Option<&Bound<'_, PyAny>>,
    ) -> bool {
        self.close(py);
        false
    }
}

#[pymodule]
#[pyo3(name = "quicshell")]
fn quicshell_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("QuicshellError", py.get_type::<QuicshellError>())?;
    m.add("AuthenticationError", py.get_type::<AuthenticationError>())?;
    m.add("NotFoundError", py.get_type::<NotFoundError>())?;
    m.add_function(wrap_pyfunction!(encode_varint, m)?)?;
    m.add_function(wrap_pyfunction!(decode_varint, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(hash_password, m)?)?;
    m.add_function(wrap_pyfunction!(verify_password, m)?)?;
    m.add_function(wrap_pyfunction!(generate_ed25519_key, m)?)?;
    m.add_function(wrap_pyfunction!(parse_forwarding_spec, m)?)?;
    m.add_function(wrap_pyfunction!(parse_destination, m)?)?;
    m.add_class::<Server>()?;
    m.add_class::<Client>()?;
    m.add_class::<CommandResult>()?;
    Ok(())
}

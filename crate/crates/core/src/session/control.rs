//! HTTP/3 connection setup: our control stream and the peer's SETTINGS.

use tokio::sync::oneshot;

use crate::h3::{self, H3Error, Settings, STREAM_CONTROL};
use crate::wire::io::read_varint;

/// Opens our control stream and writes SETTINGS. The stream must stay
/// open for the life of the connection.
pub(crate) async fn open_control(conn: &quinn::Connection) -> Result<quinn::SendStream, H3Error> {
    let mut s = conn
        .open_uni()
        .await
        .map_err(|e| H3Error::Io(std::io::Error::other(e)))?;
    s.write_all(&h3::control_stream_preface())
        .await
        .map_err(|e| H3Error::Io(e.into()))?;
    Ok(s)
}

/// Accepts the peer's unidirectional streams. The control stream's
/// SETTINGS are delivered on the returned receiver; every other stream
/// is drained and ignored.
pub(crate) fn spawn_peer_streams(
    conn: quinn::Connection,
) -> (oneshot::Receiver<Result<Settings, H3Error>>, tokio::task::AbortHandle) {
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        let mut tx = Some(tx);
        while let Ok(mut recv) = conn.accept_uni().await {
            let ty = match read_varint(&mut recv).await {
                Ok(Some(t)) => t,
                _ => continue,
            };
            if ty == STREAM_CONTROL {
                let Some(tx) = tx.take() else {
                    conn.close(h3::H3_GENERAL_PROTOCOL_ERROR.into(), b"second control stream");
                    return;
                };
                let settings = h3::read_settings(&mut recv).await;
                let ok = settings.is_ok();
                let _ = tx.send(settings);
                if !ok {
                    return;
                }
            }
            // GOAWAY and QPACK instructions carry nothing we act on.
            tokio::spawn(async move {
                let mut sink = tokio::io::sink();
                let _ = tokio::io::copy(&mut recv, &mut sink).await;
            });
        }
    });
    (rx, task.abort_handle())
}

/// Waits for the peer's SETTINGS and checks the required extensions.
pub(crate) async fn await_settings(
    rx: oneshot::Receiver<Result<Settings, H3Error>>,
) -> Result<Settings, H3Error> {
    let settings = rx.await.map_err(|_| H3Error::UnexpectedEnd)??;
    settings.require_extensions()?;
    Ok(settings)
}

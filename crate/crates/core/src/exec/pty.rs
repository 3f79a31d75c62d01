use std::os::fd::{AsRawFd, OwnedFd};

use nix::pty::{openpty, Winsize};
use tokio::io::unix::AsyncFd;

use super::ExecError;

/// A pseudo-terminal pair. The slave end is handed to the child at spawn.
#[derive(Debug)]
pub struct Pty {
    master: OwnedFd,
    slave: Option<OwnedFd>,
    term: String,
}

fn winsize(cols: u32, rows: u32) -> Result<Winsize, ExecError> {
    if cols == 0 || rows == 0 {
        return Err(ExecError::InvalidWindow { cols, rows });
    }
    let c = u16::try_from(cols).map_err(|_| ExecError::InvalidWindow { cols, rows })?;
    let r = u16::try_from(rows).map_err(|_| ExecError::InvalidWindow { cols, rows })?;
    Ok(Winsize {
        ws_row: r,
        ws_col: c,
        ws_xpixel: 0,
        ws_ypixel: 0,
    })
}

/// Allocates a pty pair sized `cols`×`rows`.
pub fn allocate_pty(term: &str, cols: u32, rows: u32) -> Result<Pty, ExecError> {
    let ws = winsize(cols, rows)?;
    let pair = openpty(&ws, None).map_err(|e| ExecError::Pty(e.to_string()))?;
    Ok(Pty {
        master: pair.master,
        slave: Some(pair.slave),
        term: if term.is_empty() { "xterm".into() } else { term.into() },
    })
}

impl Pty {
    pub fn term(&self) -> &str {
        &self.term
    }

    /// Current (cols, rows) as the kernel reports them.
    pub fn window_size(&self) -> Result<(u32, u32), ExecError> {
        let mut ws: libc::winsize = unsafe { std::mem::zeroed() };
        // SAFETY: TIOCGWINSZ writes one winsize into the pointed-to value.
        let rc = unsafe { libc::ioctl(self.master.as_raw_fd(), libc::TIOCGWINSZ, &mut ws) };
        if rc != 0 {
            return Err(ExecError::Pty(std::io::Error::last_os_error().to_string()));
        }
        Ok((ws.ws_col as u32, ws.ws_row as u32))
    }

    pub fn resize(&self, cols: u32, rows: u32) -> Result<(), ExecError> {
        resize_fd(&self.master, cols, rows)
    }

    pub(crate) fn take_slave(&mut self) -> Option<OwnedFd> {
        self.slave.take()
    }

    /// Turns the master into a non-blocking async handle.
    pub(crate) fn into_master(self) -> Result<PtyMaster, ExecError> {
        PtyMaster::new(self.master)
    }
}

fn resize_fd(fd: &OwnedFd, cols: u32, rows: u32) -> Result<(), ExecError> {
    let ws = winsize(cols, rows)?;
    // SAFETY: TIOCSWINSZ reads one winsize from the pointer.
    let rc = unsafe { libc::ioctl(fd.as_raw_fd(), libc::TIOCSWINSZ, &ws) };
    if rc != 0 {
        return Err(ExecError::Pty(std::io::Error::last_os_error().to_string()));
    }
    Ok(())
}

/// Async access to a pty master.
pub(crate) struct PtyMaster {
    fd: AsyncFd<OwnedFd>,
}

impl PtyMaster {
    fn new(fd: OwnedFd) -> Result<Self, ExecError> {
        let raw = fd.as_raw_fd();
        // SAFETY: plain fcntl flag manipulation on an fd we own.
        unsafe {
            let flags = libc::fcntl(raw, libc::F_GETFL);
            libc::fcntl(raw, libc::F_SETFL, flags | libc::O_NONBLOCK);
        }
        // SAFETY: the OwnedFd is moved into the AsyncFd and stays open for
        // its whole lifetime.
        let fd = unsafe { AsyncFd::register(fd) }.map_err(|e| ExecError::Pty(e.to_string()))?;
        Ok(PtyMaster { fd })
    }

    /// Reads output; `Ok(0)` once every slave handle is closed.
    pub(crate) async fn read(&self, buf: &mut [u8]) -> std::io::Result<usize> {
        loop {
            let mut guard = self.fd.readable().await?;
            match guard.try_io(|fd| {
                nix::unistd::read(fd.as_raw_fd(), buf).map_err(std::io::Error::from)
            }) {
                Ok(Ok(n)) => return Ok(n),
                // Linux reports EIO on the master after the last slave closes.
                Ok(Err(e)) if e.raw_os_error() == Some(libc::EIO) => return Ok(0),
                Ok(Err(e)) => return Err(e),
                Err(_would_block) => continue,
            }
        }
    }

    pub(crate) async fn write_all(&self, mut buf: &[u8]) -> std::io::Result<()> {
        while !buf.is_empty() {
            let mut guard = self.fd.writable().await?;
            match guard.try_io(|fd| nix::unistd::write(fd.get_ref(), buf).map_err(std::io::Error::from)) {
                Ok(Ok(n)) => buf = &buf[n..],
                Ok(Err(e)) => return Err(e),
                Err(_would_block) => continue,
            }
        }
        Ok(())
    }

    pub(crate) fn resize(&self, cols: u32, rows: u32) -> Result<(), ExecError> {
        resize_fd(self.fd.get_ref(), cols, rows)
    }
}

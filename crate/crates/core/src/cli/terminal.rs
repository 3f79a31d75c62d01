//! Local terminal handling for the interactive client.

use std::os::fd::{AsRawFd, BorrowedFd, RawFd};
use std::sync::{Mutex, Once};

use nix::sys::termios::{cfmakeraw, tcgetattr, tcsetattr, SetArg, Termios};

// Saved attributes, shared with the panic hook.
static SAVED: Mutex<Option<(RawFd, libc::termios)>> = Mutex::new(None);
static HOOK: Once = Once::new();

pub fn is_tty(fd: RawFd) -> bool {
    // SAFETY: isatty only inspects the descriptor.
    unsafe { libc::isatty(fd) == 1 }
}

/// (cols, rows) of the terminal on `fd`.
pub fn window_size(fd: RawFd) -> Option<(u32, u32)> {
    let mut ws: libc::winsize = unsafe { std::mem::zeroed() };
    // SAFETY: TIOCGWINSZ writes one winsize into the pointed-to value.
    let rc = unsafe { libc::ioctl(fd, libc::TIOCGWINSZ, &mut ws) };
    (rc == 0 && ws.ws_col > 0 && ws.ws_row > 0).then_some((ws.ws_col as u32, ws.ws_row as u32))
}

/// Puts back whatever [`RawMode::enable`] changed. Idempotent.
pub fn restore_terminal() {
    let saved = SAVED.lock().unwrap_or_else(|e| e.into_inner()).take();
    if let Some((fd, attrs)) = saved {
        // SAFETY: fd was a valid terminal when saved; it is one of the
        // standard descriptors, which stay open for the process lifetime.
        let fd = unsafe { BorrowedFd::borrow_raw(fd) };
        let _ = tcsetattr(fd, SetArg::TCSADRAIN, &Termios::from(attrs));
    }
}

/// Raw mode on a terminal; the previous attributes come back on drop,
/// on panic, and on any call to [`restore_terminal`].
pub struct RawMode {
    _private: (),
}

impl RawMode {
    /// Returns `None` when `fd` is not a terminal.
    pub fn enable(fd: &impl AsRawFd) -> std::io::Result<Option<RawMode>> {
        let raw = fd.as_raw_fd();
        if !is_tty(raw) {
            return Ok(None);
        }
        // SAFETY: checked above that raw is an open terminal descriptor.
        let borrowed = unsafe { BorrowedFd::borrow_raw(raw) };
        let original = tcgetattr(borrowed)?;
        HOOK.call_once(|| {
            let previous = std::panic::take_hook();
            std::panic::set_hook(Box::new(move |info| {
                restore_terminal();
                previous(info);
            }));
        });
        *SAVED.lock().unwrap_or_else(|e| e.into_inner()) = Some((raw, original.clone().into()));
        let mut attrs = original;
        cfmakeraw(&mut attrs);
        tcsetattr(borrowed, SetArg::TCSADRAIN, &attrs)?;
        Ok(Some(RawMode { _private: () }))
    }
}

impl Drop for RawMode {
    fn drop(&mut self) {
        restore_terminal();
    }
}

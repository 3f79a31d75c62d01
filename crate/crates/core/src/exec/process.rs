use std::ffi::CString;
use std::os::unix::process::ExitStatusExt;
use std::path::PathBuf;
use std::process::Stdio;

use nix::sys::signal::{killpg, Signal};
use nix::unistd::{Gid, Pid, Uid, User};
use tokio::process::{Child, ChildStderr, ChildStdin, ChildStdout, Command};

use super::pty::{Pty, PtyMaster};
use super::ExecError;

pub const DEFAULT_PATH_ENV: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

/// Whose account runs remote processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Privilege {
    /// Everything runs as the server's own account.
    #[default]
    SingleUser,
    /// Switch to the authenticated user's account (requires root).
    Privileged,
}

impl std::str::FromStr for Privilege {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single-user" => Ok(Privilege::SingleUser),
            "privileged" => Ok(Privilege::Privileged),
            other => Err(format!("unknown mode {other:?} (single-user|privileged)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub privilege: Privilege,
    /// Overrides the account's login shell.
    pub shell: Option<PathBuf>,
}

/// What to start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launch {
    Shell,
    Command(String),
}

#[derive(Debug, Clone)]
pub struct Account {
    pub name: String,
    pub uid: Uid,
    pub gid: Gid,
    pub home: PathBuf,
    pub shell: PathBuf,
}

/// Looks up the account a process for `username` runs under.
pub fn resolve_account(username: &str, opts: &ExecOptions) -> Result<Account, ExecError> {
    let user = match opts.privilege {
        Privilege::SingleUser => User::from_uid(Uid::current()).ok().flatten(),
        Privilege::Privileged => Some(
            User::from_name(username)
                .ok()
                .flatten()
                .ok_or_else(|| ExecError::UnknownUser(username.to_string()))?,
        ),
    };
    let mut account = match user {
        Some(u) => Account {
            name: u.name,
            uid: u.uid,
            gid: u.gid,
            home: u.dir,
            shell: u.shell,
        },
        None => Account {
            name: std::env::var("USER").unwrap_or_else(|_| "nobody".into()),
            uid: Uid::current(),
            gid: Gid::current(),
            home: std::env::var_os("HOME").map_or_else(|| "/".into(), PathBuf::from),
            shell: "/bin/sh".into(),
        },
    };
    if let Some(s) = &opts.shell {
        account.shell = s.clone();
    }
    if account.shell.as_os_str().is_empty() || !account.shell.exists() {
        account.shell = "/bin/sh".into();
    }
    Ok(account)
}

/// Minimal environment for spawned processes.
pub fn base_env(account: &Account, term: Option<&str>) -> Vec<(String, String)> {
    let mut env = vec![
        ("PATH".to_string(), DEFAULT_PATH_ENV.to_string()),
        ("HOME".into(), account.home.display().to_string()),
        ("USER".into(), account.name.clone()),
        ("LOGNAME".into(), account.name.clone()),
        ("SHELL".into(), account.shell.display().to_string()),
    ];
    if let Some(t) = term {
        env.push(("TERM".into(), t.to_string()));
    }
    env
}

/// How a process ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitOutcome {
    Exited(u32),
    Signaled { name: String, core_dumped: bool },
}

impl ExitOutcome {
    /// Exit code a local shell would report: the status itself, or
    /// 128 + signal number.
    pub fn local_exit_code(&self) -> i32 {
        match self {
            ExitOutcome::Exited(c) => (*c & 0xff) as i32,
            ExitOutcome::Signaled { name, .. } => format!("SIG{name}")
                .parse::<Signal>()
                .map_or(255, |s| 128 + s as i32),
        }
    }

    pub fn from_status(status: std::process::ExitStatus) -> Self {
        if let Some(code) = status.code() {
            return ExitOutcome::Exited(code as u32);
        }
        let sig = status.signal().unwrap_or(0);
        let name = Signal::try_from(sig)
            .map(|s| s.as_str().trim_start_matches("SIG").to_string())
            .unwrap_or_else(|_| sig.to_string());
        ExitOutcome::Signaled {
            name,
            core_dumped: status.core_dumped(),
        }
    }
}

/// A spawned process and its I/O handles.
pub struct RemoteProcess {
    pub(crate) child: Child,
    pub(crate) pid: i32,
    pub(crate) stdin: Option<ChildStdin>,
    pub(crate) stdout: Option<ChildStdout>,
    pub(crate) stderr: Option<ChildStderr>,
    pub(crate) pty: Option<PtyMaster>,
}

impl std::fmt::Debug for RemoteProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProcess")
            .field("pid", &self.pid)
            .field("pty", &self.pty.is_some())
            .finish()
    }
}

impl RemoteProcess {
    pub fn pid(&self) -> i32 {
        self.pid
    }

    pub fn has_pty(&self) -> bool {
        self.pty.is_some()
    }

    /// Sends `sig` to the process group (each process leads its own).
    pub fn signal(&self, sig: Signal) {
        let _ = killpg(Pid::from_raw(self.pid), sig);
    }

    pub async fn wait(&mut self) -> Result<ExitOutcome, ExecError> {
        let status = self.child.wait().await.map_err(ExecError::Spawn)?;
        Ok(ExitOutcome::from_status(status))
    }
}

/// Starts `launch` for `username`. With a pty the process gets it as
/// controlling terminal; without one it gets three pipes.
pub fn run_for_user(
    username: &str,
    launch: &Launch,
    extra_env: &[(String, String)],
    pty: Option<Pty>,
    opts: &ExecOptions,
) -> Result<RemoteProcess, ExecError> {
    let account = resolve_account(username, opts)?;
    let mut env = base_env(&account, pty.as_ref().map(|p| p.term()));
    env.extend(extra_env.iter().cloned());

    let mut cmd = Command::new(&account.shell);
    match launch {
        Launch::Command(c) => {
            cmd.arg("-c").arg(c);
        }
        Launch::Shell => {
            let base = account
                .shell
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sh".into());
            cmd.arg0(format!("-{base}"));
        }
    }
    cmd.env_clear()
        .envs(env)
        .current_dir(if account.home.is_dir() {
            account.home.clone()
        } else {
            PathBuf::from("/")
        })
        .kill_on_drop(false);

    let switch_to = match opts.privilege {
        Privilege::Privileged if account.uid != Uid::current() => Some((
            CString::new(account.name.clone()).map_err(|_| ExecError::UnknownUser(account.name.clone()))?,
            account.uid,
            account.gid,
        )),
        _ => None,
    };
    let with_pty = pty.is_some();
    let mut pty = pty;
    if let Some(p) = pty.as_mut() {
        let slave = p.take_slave().ok_or_else(|| ExecError::Pty("pty already used".into()))?;
        let clone = |fd: &std::os::fd::OwnedFd| fd.try_clone().map_err(ExecError::Spawn);
        cmd.stdin(Stdio::from(clone(&slave)?))
            .stdout(Stdio::from(clone(&slave)?))
            .stderr(Stdio::from(slave));
    } else {
        cmd.stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
    }
    // SAFETY: only async-signal-safe libc calls plus initgroups, which is
    // the customary way to drop privileges before exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setsid() < 0 {
                return Err(std::io::Error::last_os_error());
            }
            if with_pty && libc::ioctl(0, libc::TIOCSCTTY as _, 0) < 0 {
                return Err(std::io::Error::last_os_error());
            }
            if let Some((name, uid, gid)) = &switch_to {
                if libc::initgroups(name.as_ptr(), gid.as_raw() as _) < 0
                    || libc::setgid(gid.as_raw()) < 0
                    || libc::setuid(uid.as_raw()) < 0
                {
                    return Err(std::io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }
    let mut child = cmd.spawn().map_err(ExecError::Spawn)?;
    let pid = child.id().map(|p| p as i32).unwrap_or(-1);
    let master = match pty {
        Some(p) => Some(p.into_master()?),
        None => None,
    };
    Ok(RemoteProcess {
        pid,
        stdin: child.stdin.take(),
        stdout: child.stdout.take(),
        stderr: child.stderr.take(),
        child,
        pty: master,
    })
}

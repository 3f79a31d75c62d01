use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use quicshell::bench::{
    measure_echo_latency, measure_forward_throughput, measure_proxy_rtt, measure_session_completion, BenchError,
    RunReport, ThroughputConfig,
};
use quicshell::forward::Protocol;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scenario {
    /// UDP probe through the latency proxy alone
    ProxyRtt,
    /// connect, run `true`, close
    SessionTrivial,
    /// same, with 582 bytes of output
    #[value(name = "session-582b")]
    Session582b,
    /// same, with 131072 bytes of output
    #[value(name = "session-131kb")]
    Session131kb,
    TcpThroughput,
    UdpThroughput,
    /// keystroke echo from `cat` under a pty
    Echo,
    /// connect/run/close with the system ssh client, if a target is set
    SshBaseline,
}

#[derive(Debug, Parser)]
#[command(name = "quicshell-bench", about = "Measure quicshell session, forwarding and echo performance")]
struct Args {
    #[arg(long, value_enum)]
    scenario: Scenario,
    /// Round-trip time added by the latency proxy, in milliseconds
    #[arg(long, default_value_t = 0)]
    rtt: u64,
    /// Samples (sessions, keystrokes or throughput runs)
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG plot of the samples
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Seconds per throughput run
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    /// Sending rate for udp-throughput, in Mbps
    #[arg(long, default_value_t = 100.0)]
    udp_rate: f64,
    /// user@host for ssh-baseline
    #[arg(long, env = "QUICSHELL_BENCH_SSH_TARGET")]
    ssh_target: Option<String>,
}

fn size_command(bytes: usize) -> String {
    format!("head -c {bytes} /dev/zero | tr '\\000' x")
}

fn ssh_baseline(target: &str, n: usize) -> Result<RunReport, BenchError> {
    let mut samples = Vec::with_capacity(n);
    for sample in 0..n {
        let t0 = Instant::now();
        let status = std::process::Command::new("ssh")
            .args(["-o", "BatchMode=yes", "-o", "ControlMaster=no", target, "true"])
            .stdin(std::process::Stdio::null())
            .status()?;
        if !status.success() {
            return Err(BenchError::Session {
                sample,
                error: format!("ssh exited with {status}"),
            });
        }
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    RunReport::new("ssh-baseline", samples, vec![None; n])
}

fn has_ssh_client() -> bool {
    std::process::Command::new("ssh")
        .arg("-V")
        .stderr(std::process::Stdio::null())
        .status()
        .is_ok()
}

async fn run(args: &Args) -> Result<Option<RunReport>, BenchError> {
    let rtt = Duration::from_millis(args.rtt);
    let throughput = |protocol| {
        let mut c = ThroughputConfig::new(protocol, Duration::from_secs_f64(args.duration));
        c.runs = args.n;
        c.udp_rate_mbps = args.udp_rate;
        c
    };
    let session = |name: &str, r: RunReport| RunReport {
        scenario: name.into(),
        ..r
    };
    Ok(Some(match args.scenario {
        Scenario::ProxyRtt => measure_proxy_rtt(args.n, rtt).await?,
        Scenario::SessionTrivial => session("session-trivial", measure_session_completion("true", args.n, rtt).await?),
        Scenario::Session582b => session("session-582b", measure_session_completion(&size_command(582), args.n, rtt).await?),
        Scenario::Session131kb => {
            session("session-131kb", measure_session_completion(&size_command(131_072), args.n, rtt).await?)
        }
        Scenario::TcpThroughput => measure_forward_throughput(&throughput(Protocol::Tcp)).await?,
        Scenario::UdpThroughput => measure_forward_throughput(&throughput(Protocol::Udp)).await?,
        Scenario::Echo => measure_echo_latency(args.n, rtt).await?,
        Scenario::SshBaseline => match &args.ssh_target {
            Some(t) if has_ssh_client() => {
                if args.rtt != 0 {
                    eprintln!("quicshell-bench: the latency proxy only relays UDP; ssh runs without added delay");
                }
                ssh_baseline(t, args.n)?
            }
            _ => {
                eprintln!("quicshell-bench: ssh-baseline skipped (no ssh client or no --ssh-target)");
                return Ok(None);
            }
        },
    }))
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("QUICSHELL_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("quicshell-bench: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = rt.block_on(run(&args));
    rt.shutdown_background();
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(report)) => {
            if let Err(e) = std::fs::write(&args.out, report.to_csv()) {
                eprintln!("quicshell-bench: cannot write {}: {e}", args.out.display());
                return ExitCode::FAILURE;
            }
            if let Some(path) = &args.plot {
                if let Err(e) = report.to_svg().and_then(|svg| Ok(std::fs::write(path, svg)?)) {
                    eprintln!("quicshell-bench: cannot write {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            println!("{}", report.summary());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("quicshell-bench: {e}");
            ExitCode::FAILURE
        }
    }
}

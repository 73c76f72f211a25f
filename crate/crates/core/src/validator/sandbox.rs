//! Subprocess sandbox: one fresh temp dir per run, wall-clock kill, output
//! caps, a minimal environment, and a network namespace where the platform
//! allows unprivileged `unshare`.
//!
//! This is isolation against accidents, not against hostile code: the child
//! runs with the invoking user's file permissions outside its temp dir.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How to run one language. Command templates substitute `{file}` with the
/// source file name (relative to the working dir) and `{dir}` with the
/// working dir.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    pub file_name: String,
    pub run: Vec<String>,
    #[serde(default)]
    pub syntax_check: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Keyed by canonical language name (`python`, `cpp`, `java`).
    pub toolchains: BTreeMap<String, Toolchain>,
    pub wall_timeout: Duration,
    pub max_output_bytes: usize,
    /// Environment variables passed through from the parent.
    pub env_allowlist: Vec<String>,
}

pub const DEFAULT_WALL_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_MAX_OUTPUT: usize = 64 * 1024;

fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

pub fn python_toolchain() -> Toolchain {
    Toolchain {
        file_name: "main.py".into(),
        run: argv(&["python3", "{file}"]),
        syntax_check: Some(argv(&[
            "python3",
            "-c",
            "import ast, sys; ast.parse(open(sys.argv[1]).read(), sys.argv[1])",
            "{file}",
        ])),
    }
}

pub fn cpp_toolchain() -> Toolchain {
    Toolchain {
        file_name: "main.cpp".into(),
        run: argv(&["sh", "-c", "g++ -std=c++17 -O0 -o main {file} && ./main"]),
        syntax_check: Some(argv(&["g++", "-std=c++17", "-fsyntax-only", "{file}"])),
    }
}

pub fn java_toolchain() -> Toolchain {
    Toolchain {
        file_name: "Main.java".into(),
        run: argv(&["java", "{file}"]),
        syntax_check: Some(argv(&["javac", "-d", ".", "{file}"])),
    }
}

/// True when `program` resolves on `PATH`.
pub fn on_path(program: &str) -> bool {
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}

impl SandboxConfig {
    /// No toolchains; add them with [`SandboxConfig::with_toolchain`].
    pub fn empty() -> Self {
        SandboxConfig {
            toolchains: BTreeMap::new(),
            wall_timeout: DEFAULT_WALL_TIMEOUT,
            max_output_bytes: DEFAULT_MAX_OUTPUT,
            env_allowlist: vec!["PATH".into()],
        }
    }

    /// Python always, plus C++ and Java when their toolchains are installed.
    pub fn detect() -> Self {
        let mut cfg = Self::empty().with_toolchain("python", python_toolchain());
        if on_path("g++") {
            cfg = cfg.with_toolchain("cpp", cpp_toolchain());
        }
        if on_path("java") && on_path("javac") {
            cfg = cfg.with_toolchain("java", java_toolchain());
        }
        cfg
    }

    pub fn with_toolchain(mut self, language: &str, toolchain: Toolchain) -> Self {
        self.toolchains.insert(language.to_string(), toolchain);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.wall_timeout = timeout;
        self
    }

    pub fn toolchain(&self, language: &str) -> Option<&Toolchain> {
        canonical_language(language).and_then(|l| self.toolchains.get(l))
    }
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self::detect()
    }
}

/// Maps fence hints and language names onto toolchain keys.
pub fn canonical_language(name: &str) -> Option<&'static str> {
    match name.trim().to_ascii_lowercase().as_str() {
        "python" | "python3" | "py" => Some("python"),
        "cpp" | "c++" | "cxx" | "cc" => Some("cpp"),
        "java" => Some("java"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SandboxError {
    #[error("wall timeout of {0:?} must be positive")]
    InvalidTimeout(Duration),
    #[error("command template is empty")]
    EmptyCommand,
    #[error("sandbox I/O failed: {0}")]
    Io(String),
    #[error("process exceeded the {0:?} wall-clock limit")]
    Timeout(Duration),
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub stdout: String,
    pub stderr: String,
    /// `None` when killed by a signal.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub truncated: bool,
    pub network_isolated: bool,
    pub elapsed: Duration,
}

impl RunOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

/// Whether `unshare -rn` works here; probed once per process.
pub fn network_namespace_available() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        Command::new("unshare")
            .args(["-r", "-n", "true"])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    })
}

fn read_capped<R: Read + Send + 'static>(mut reader: R, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

fn substitute(template: &[String], file: &str, dir: &Path) -> Vec<String> {
    template
        .iter()
        .map(|part| {
            part.replace("{file}", file)
                .replace("{dir}", &dir.to_string_lossy())
        })
        .collect()
}

/// Runs `command` in a fresh temp dir containing `source` as `file_name`.
pub fn run_in_sandbox(
    cfg: &SandboxConfig,
    command: &[String],
    file_name: &str,
    source: &str,
) -> Result<RunOutput, SandboxError> {
    if cfg.wall_timeout.is_zero() {
        return Err(SandboxError::InvalidTimeout(cfg.wall_timeout));
    }
    if command.is_empty() {
        return Err(SandboxError::EmptyCommand);
    }
    let workdir = tempfile::Builder::new().prefix("examgen-run-").tempdir()?;
    std::fs::write(workdir.path().join(file_name), source)?;
    let args = substitute(command, file_name, workdir.path());

    let isolated = network_namespace_available();
    let mut cmd = if isolated {
        let mut c = Command::new("unshare");
        c.args(["-r", "-n", "--"]).args(&args);
        c
    } else {
        let mut c = Command::new(&args[0]);
        c.args(&args[1..]);
        c
    };
    cmd.current_dir(workdir.path())
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in &cfg.env_allowlist {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    cmd.env("HOME", workdir.path())
        .env("TMPDIR", workdir.path())
        .env("LANG", "C.UTF-8")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0");

    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let out = read_capped(child.stdout.take().expect("piped"), cfg.max_output_bytes);
    let err = read_capped(child.stderr.take().expect("piped"), cfg.max_output_bytes);

    let deadline = started + cfg.wall_timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            // SAFETY: signalling the process group we created for the child.
            unsafe {
                libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
            }
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let elapsed = started.elapsed();
    let (stdout, t1) = out.join().unwrap_or_default();
    let (stderr, t2) = err.join().unwrap_or_default();

    Ok(RunOutput {
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        exit_code: status.code(),
        timed_out,
        truncated: t1 || t2,
        network_isolated: isolated,
        elapsed,
    })
}

/// Runs `source` with the toolchain's run command.
pub fn run_source(
    cfg: &SandboxConfig,
    toolchain: &Toolchain,
    file_name: Option<&str>,
    source: &str,
) -> Result<RunOutput, SandboxError> {
    run_in_sandbox(
        cfg,
        &toolchain.run,
        file_name.unwrap_or(&toolchain.file_name),
        source,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn py() -> SandboxConfig {
        SandboxConfig::empty().with_toolchain("python", python_toolchain())
    }

    #[test]
    fn captures_stdout_and_exit_code() {
        let cfg = py();
        let tc = cfg.toolchain("python").unwrap();
        let out = run_source(&cfg, tc, None, "import sys\nprint('hi')\nsys.exit(3)\n").unwrap();
        assert_eq!(out.stdout, "hi\n");
        assert_eq!(out.exit_code, Some(3));
        assert!(!out.success());
    }

    #[test]
    fn wall_clock_kill() {
        let cfg = py().with_timeout(Duration::from_millis(300));
        let tc = cfg.toolchain("python").unwrap();
        let out = run_source(&cfg, tc, None, "import time\ntime.sleep(30)\n").unwrap();
        assert!(out.timed_out);
        assert!(out.elapsed < Duration::from_secs(5));
    }

    #[test]
    fn output_is_capped() {
        let mut cfg = py();
        cfg.max_output_bytes = 100;
        let tc = cfg.toolchain("python").unwrap().clone();
        let out = run_source(&cfg, &tc, None, "print('x' * 10000)\n").unwrap();
        assert_eq!(out.stdout.len(), 100);
        assert!(out.truncated);
    }

    #[test]
    fn environment_is_minimal() {
        std::env::set_var("EXAMGEN_SECRET_FOR_TEST", "leak");
        let cfg = py();
        let tc = cfg.toolchain("python").unwrap();
        let out = run_source(
            &cfg,
            tc,
            None,
            "import os\nprint(os.environ.get('EXAMGEN_SECRET_FOR_TEST', 'absent'))\n",
        )
        .unwrap();
        assert_eq!(out.stdout.trim(), "absent");
    }

    #[test]
    fn network_is_unreachable_when_namespaced() {
        if !network_namespace_available() {
            return;
        }
        let cfg = py();
        let tc = cfg.toolchain("python").unwrap();
        let script = "import socket\ns = socket.socket()\ns.settimeout(1)\n\
                      try:\n    s.connect(('1.1.1.1', 80))\n    print('connected')\n\
                      except OSError:\n    print('blocked')\n";
        let out = run_source(&cfg, tc, None, script).unwrap();
        assert!(out.network_isolated);
        assert_eq!(out.stdout.trim(), "blocked");
    }

    #[test]
    fn zero_timeout_rejected() {
        let cfg = py().with_timeout(Duration::ZERO);
        let tc = python_toolchain();
        assert!(matches!(
            run_source(&cfg, &tc, None, "pass"),
            Err(SandboxError::InvalidTimeout(_))
        ));
    }

    #[test]
    fn language_aliases() {
        assert_eq!(canonical_language("Python"), Some("python"));
        assert_eq!(canonical_language("c++"), Some("cpp"));
        assert_eq!(canonical_language("cobol"), None);
    }
}

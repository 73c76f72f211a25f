#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use examgen_core::render_prompt;
use examgen_core::taxonomy::ExamSpec;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn read(rel: &str) -> String {
    let path = root().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_examgen"));
    cmd.env_remove("RUST_LOG");
    cmd
}

/// Runs the binary inside a fresh network namespace (loopback only) when the
/// platform allows it. Returns None when namespaces are unavailable.
///
/// Inside the namespace root loses its override on files it does not own,
/// so the binary is copied into `dir` and every input should live there too.
pub fn bin_offline(dir: &Path) -> Option<Command> {
    let probe = Command::new("unshare").args(["-r", "-n", "--", "true"]).output().ok()?;
    if !probe.status.success() {
        return None;
    }
    let exe = dir.join("examgen");
    std::fs::copy(env!("CARGO_BIN_EXE_examgen"), &exe).ok()?;
    let mut cmd = Command::new("unshare");
    cmd.args(["-r", "-n", "--"]).arg(exe).current_dir(dir);
    cmd.env_remove("RUST_LOG");
    Some(cmd)
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `response` under the prompt digest of `spec`, the layout the
/// fixture provider reads.
pub fn write_fixture(dir: &Path, spec: &ExamSpec, response: &str) {
    std::fs::create_dir_all(dir).unwrap();
    let digest = render_prompt(spec).unwrap().digest;
    std::fs::write(dir.join(format!("{digest}.md")), response).unwrap();
}

pub fn spec_file(rel: &str) -> (PathBuf, ExamSpec) {
    let path = root().join(rel);
    let spec = ExamSpec::from_json(&read(rel)).unwrap();
    (path, spec)
}

/// Writes a spec to `dir/name` and returns its path.
pub fn write_spec(dir: &Path, name: &str, spec: &ExamSpec) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, spec.to_json_pretty()).unwrap();
    path
}

pub fn survey_header() -> String {
    let items: Vec<String> = (1..=14).map(|i| format!("q{i}")).collect();
    format!("participant_id,group,{}", items.join(","))
}

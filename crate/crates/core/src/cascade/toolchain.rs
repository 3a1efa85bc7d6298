//! Harness that shells out to a real compiler and launcher.
//!
//! Command templates are argv lists. Placeholders: `{source}`, `{binary}`,
//! `{ranks}`, `{hosts}` (comma-joined), `{mode}` (`verify` or `bench`)
//! and `{flags}`, which expands to the configured flags as separate
//! arguments when it is a whole argument.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Artifact, BenchOutcome, CompileOutcome, EvalHarness, HarnessError, RunOutcome};
use crate::program::{Program, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    pub compile: Vec<String>,
    pub launch: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
    pub work_dir: PathBuf,
    /// Environment variables forwarded to child processes; everything else
    /// is cleared.
    #[serde(default = "default_env")]
    pub env_passthrough: Vec<String>,
    #[serde(default = "default_compile_timeout")]
    pub compile_timeout_secs: u64,
    #[serde(default = "default_run_timeout")]
    pub run_timeout_secs: u64,
    /// Regex whose first capture group is a latency in milliseconds.
    #[serde(default = "default_latency_pattern")]
    pub latency_pattern: String,
    #[serde(default = "default_extension")]
    pub source_extension: String,
}

fn default_env() -> Vec<String> {
    ["PATH", "HOME", "LD_LIBRARY_PATH", "CUDA_HOME", "CUDA_VISIBLE_DEVICES"]
        .map(String::from)
        .to_vec()
}

fn default_compile_timeout() -> u64 {
    600
}

fn default_run_timeout() -> u64 {
    300
}

fn default_latency_pattern() -> String {
    r"(?mi)^\s*latency_ms\s*[:=]\s*([0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)".into()
}

fn default_extension() -> String {
    "cu".into()
}

/// Exclusive device leases keyed by rank set.
#[derive(Debug, Default)]
pub struct LeaseMap {
    held: Mutex<HashSet<String>>,
    freed: Condvar,
}

pub struct Lease<'a> {
    map: &'a LeaseMap,
    key: String,
}

impl LeaseMap {
    pub fn acquire(&self, key: &str) -> Lease<'_> {
        let mut held = self.held.lock().unwrap();
        while held.contains(key) {
            held = self.freed.wait(held).unwrap();
        }
        held.insert(key.to_string());
        Lease {
            map: self,
            key: key.to_string(),
        }
    }

    pub fn is_held(&self, key: &str) -> bool {
        self.held.lock().unwrap().contains(key)
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        self.map.held.lock().unwrap().remove(&self.key);
        self.map.freed.notify_all();
    }
}

pub struct ToolchainHarness {
    config: ToolchainConfig,
    latency: Regex,
    leases: LeaseMap,
    counter: AtomicU64,
}

#[derive(Debug)]
enum Exec {
    Exited { ok: bool, stdout: String, stderr: String },
    TimedOut { stdout: String, stderr: String },
}

impl ToolchainHarness {
    pub fn new(config: ToolchainConfig) -> Result<Self, HarnessError> {
        if config.compile.is_empty() || config.launch.is_empty() {
            return Err(HarnessError::Unavailable(
                "compile and launch templates must be nonempty".into(),
            ));
        }
        let latency = Regex::new(&config.latency_pattern)
            .map_err(|e| HarnessError::Unavailable(format!("latency pattern: {e}")))?;
        std::fs::create_dir_all(&config.work_dir)
            .map_err(|e| HarnessError::Unavailable(format!("{}: {e}", config.work_dir.display())))?;
        Ok(Self {
            config,
            latency,
            leases: LeaseMap::default(),
            counter: AtomicU64::new(0),
        })
    }

    pub fn leases(&self) -> &LeaseMap {
        &self.leases
    }

    fn expand(&self, template: &[String], vars: &HashMap<&str, String>) -> Vec<String> {
        let mut out = Vec::new();
        for arg in template {
            if arg == "{flags}" {
                out.extend(self.config.flags.iter().cloned());
                continue;
            }
            let mut a = arg.clone();
            for (k, v) in vars {
                a = a.replace(&format!("{{{k}}}"), v);
            }
            a = a.replace("{flags}", &self.config.flags.join(" "));
            out.push(a);
        }
        out
    }

    fn exec(&self, argv: &[String], timeout: Duration) -> Result<Exec, HarnessError> {
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(&self.config.work_dir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        for k in &self.config.env_passthrough {
            if let Ok(v) = std::env::var(k) {
                cmd.env(k, v);
            }
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| HarnessError::Unavailable(format!("cannot run `{}`: {e}", argv[0])))?;
        let mut out_pipe = child.stdout.take().expect("piped stdout");
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let out_t = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = out_pipe.read_to_string(&mut s);
            s
        });
        let err_t = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = err_pipe.read_to_string(&mut s);
            s
        });
        let deadline = Instant::now() + timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    kill_group(child.id());
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(HarnessError::Unavailable(format!("waiting on `{}`: {e}", argv[0]))),
            }
        };
        let stdout = out_t.join().unwrap_or_default();
        let stderr = err_t.join().unwrap_or_default();
        Ok(match status {
            Some(s) => {
                // 126/127: the shell could not find or execute the tool.
                if matches!(s.code(), Some(126 | 127)) {
                    return Err(HarnessError::Unavailable(format!(
                        "`{}` failed to start: {}",
                        argv[0],
                        stderr.trim()
                    )));
                }
                Exec::Exited {
                    ok: s.success(),
                    stdout,
                    stderr,
                }
            }
            None => Exec::TimedOut { stdout, stderr },
        })
    }

    fn vars(&self, artifact: Option<&Artifact>, topology: &Topology, mode: &str) -> HashMap<&'static str, String> {
        let mut v = HashMap::new();
        if let Some(a) = artifact {
            if let Some(b) = &a.binary {
                v.insert("binary", b.display().to_string());
            }
        }
        v.insert("ranks", topology.ranks.to_string());
        v.insert("hosts", topology.hosts.join(","));
        v.insert("mode", mode.to_string());
        v
    }

    fn run(&self, artifact: &Artifact, topology: &Topology, mode: &str) -> Result<Exec, HarnessError> {
        if artifact.binary.is_none() {
            return Err(HarnessError::Unavailable(
                "artifact was not produced by this harness".into(),
            ));
        }
        let argv = self.expand(&self.config.launch, &self.vars(Some(artifact), topology, mode));
        let _lease = self.leases.acquire(&topology.lease_key());
        self.exec(&argv, Duration::from_secs(self.config.run_timeout_secs))
    }

    pub fn parse_latencies(&self, stdout: &str) -> Vec<f64> {
        self.latency
            .captures_iter(stdout)
            .filter_map(|c| c[1].parse().ok())
            .collect()
    }
}

fn tail(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

fn combined(stdout: &str, stderr: &str) -> String {
    let joined = format!("{}{}", stderr, stdout);
    tail(joined.trim(), 16_000).to_string()
}

impl EvalHarness for ToolchainHarness {
    fn name(&self) -> &str {
        "toolchain"
    }

    fn compile(&self, program: &Program) -> Result<CompileOutcome, HarnessError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let stem = format!("cand{n:06}");
        let source: PathBuf = self
            .config
            .work_dir
            .join(format!("{stem}.{}", self.config.source_extension));
        let binary: PathBuf = self.config.work_dir.join(&stem);
        std::fs::write(&source, &program.source)
            .map_err(|e| HarnessError::Unavailable(format!("{}: {e}", source.display())))?;
        let mut vars = self.vars(None, &Topology::default(), "compile");
        vars.insert("source", path_str(&source));
        vars.insert("binary", path_str(&binary));
        let argv = self.expand(&self.config.compile, &vars);
        Ok(
            match self.exec(&argv, Duration::from_secs(self.config.compile_timeout_secs))? {
                Exec::Exited { ok: true, .. } if binary.exists() => CompileOutcome::Ok(Artifact {
                    source: program.source.clone(),
                    directive: program.directive.clone(),
                    binary: Some(binary),
                }),
                Exec::Exited {
                    ok: true,
                    stdout,
                    stderr,
                } => CompileOutcome::Failed(format!(
                    "compiler reported success but produced no binary\n{}",
                    combined(&stdout, &stderr)
                )),
                Exec::Exited { stdout, stderr, .. } => CompileOutcome::Failed(combined(&stdout, &stderr)),
                Exec::TimedOut { stdout, stderr } => CompileOutcome::Failed(format!(
                    "compile timed out after {} s\n{}",
                    self.config.compile_timeout_secs,
                    combined(&stdout, &stderr)
                )),
            },
        )
    }

    fn run_verify(&self, artifact: &Artifact, topology: &Topology) -> Result<RunOutcome, HarnessError> {
        Ok(match self.run(artifact, topology, "verify")? {
            Exec::Exited { ok: true, .. } => RunOutcome::Passed,
            Exec::Exited { stdout, stderr, .. } => RunOutcome::Failed(combined(&stdout, &stderr)),
            Exec::TimedOut { stdout, stderr } => RunOutcome::Timeout(format!(
                "no completion within {} s (possible deadlock)\n{}",
                self.config.run_timeout_secs,
                combined(&stdout, &stderr)
            )),
        })
    }

    fn run_benchmark(&self, artifact: &Artifact, topology: &Topology, reps: u32) -> Result<BenchOutcome, HarnessError> {
        let mut latencies = Vec::new();
        for _ in 0..reps {
            match self.run(artifact, topology, "bench")? {
                Exec::Exited {
                    ok: true,
                    stdout,
                    stderr,
                } => match self.parse_latencies(&stdout).into_iter().reduce(f64::min) {
                    Some(l) => latencies.push(l),
                    None => {
                        return Ok(BenchOutcome::Failed(format!(
                            "no latency line in benchmark output\n{}",
                            combined(&stdout, &stderr)
                        )))
                    }
                },
                Exec::Exited { stdout, stderr, .. } => return Ok(BenchOutcome::Failed(combined(&stdout, &stderr))),
                Exec::TimedOut { stdout, stderr } => {
                    return Ok(BenchOutcome::Timeout(format!(
                        "benchmark exceeded {} s\n{}",
                        self.config.run_timeout_secs,
                        combined(&stdout, &stderr)
                    )))
                }
            }
        }
        Ok(BenchOutcome::Latencies(latencies))
    }
}

/// Kill the whole process group so launcher children do not keep the
/// output pipes open.
fn kill_group(pid: u32) {
    #[cfg(unix)]
    let _ = Command::new("kill")
        .args(["-KILL", "--", &format!("-{pid}")])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status();
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{cascade_eval, CascadeError, Level};
    use crate::directive::{conservative_directive, Backend};
    use std::os::unix::fs::PermissionsExt;
    use std::sync::Arc;

    fn script(dir: &Path, name: &str, body: &str) -> String {
        let p = dir.join(name);
        std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        p.display().to_string()
    }

    fn harness(dir: &Path, run_body: &str, timeout: u64) -> ToolchainHarness {
        // Fake compiler: fails on `#error`, else copies the source to the binary path.
        let cc = script(
            dir,
            "cc.sh",
            "if grep -q '#error' \"$1\"; then echo \"$1: error: bad\" >&2; exit 1; fi\ncp \"$1\" \"$2\"",
        );
        let run = script(dir, "run.sh", run_body);
        ToolchainHarness::new(ToolchainConfig {
            compile: vec![cc, "{source}".into(), "{binary}".into()],
            launch: vec![run, "{binary}".into(), "{mode}".into(), "{ranks}".into()],
            flags: vec!["-arch=sm_80".into()],
            work_dir: dir.join("work"),
            env_passthrough: default_env(),
            compile_timeout_secs: 10,
            run_timeout_secs: timeout,
            latency_pattern: default_latency_pattern(),
            source_extension: "cu".into(),
        })
        .unwrap()
    }

    fn program(src: &str) -> Program {
        Program::new(src, conservative_directive(Backend::Gin))
    }

    #[test]
    fn full_cascade_through_scripts() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(
            dir.path(),
            "if [ \"$2\" = bench ]; then echo 'latency_ms: 41.5'; fi",
            10,
        );
        let r = cascade_eval(&program("int main(){}\n"), &h, &Topology::default(), 3, None, "c").unwrap();
        assert_eq!(r.level_reached, Level::L3Complete);
        assert_eq!(r.best_ms, Some(41.5));
        assert_eq!(r.latencies_ms.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn compile_failure_carries_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(dir.path(), "exit 0", 10);
        let r = cascade_eval(&program("#error nope\n"), &h, &Topology::default(), 1, None, "c").unwrap();
        assert_eq!(r.level_reached, Level::L1Failed);
        assert!(r.diagnostics.contains("error: bad"));
    }

    #[test]
    fn verify_failure_and_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(
            dir.path(),
            "if [ \"$2\" = verify ]; then echo 'rank 1: mismatch at 17'; exit 3; fi",
            10,
        );
        let r = cascade_eval(&program("x\n"), &h, &Topology::default(), 1, None, "c").unwrap();
        assert_eq!(r.level_reached, Level::L2Failed);
        assert!(r.diagnostics.contains("mismatch at 17"));

        let dir2 = tempfile::tempdir().unwrap();
        let slow = harness(dir2.path(), "if [ \"$2\" = bench ]; then sleep 5; fi", 1);
        let r = cascade_eval(&program("x\n"), &slow, &Topology::default(), 1, None, "c").unwrap();
        assert_eq!(r.level_reached, Level::L2Failed);
        assert!(r.diagnostics.contains("timeout"));
    }

    #[test]
    fn missing_toolchain_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let h = ToolchainHarness::new(ToolchainConfig {
            compile: vec!["/nonexistent/nvcc".into(), "{source}".into()],
            launch: vec!["/nonexistent/mpirun".into()],
            flags: vec![],
            work_dir: dir.path().join("w"),
            env_passthrough: vec![],
            compile_timeout_secs: 5,
            run_timeout_secs: 5,
            latency_pattern: default_latency_pattern(),
            source_extension: "cu".into(),
        })
        .unwrap();
        assert!(matches!(
            cascade_eval(&program("x"), &h, &Topology::default(), 1, None, "c"),
            Err(CascadeError::HarnessUnavailable(_))
        ));
    }

    #[test]
    fn flags_expand_as_separate_args() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(dir.path(), "exit 0", 10);
        let argv = h.expand(
            &["cc".into(), "{flags}".into(), "-o{ranks}".into()],
            &h.vars(None, &Topology::default(), "x"),
        );
        assert_eq!(argv, vec!["cc", "-arch=sm_80", "-o2"]);
    }

    #[test]
    fn leases_are_exclusive() {
        let map = Arc::new(LeaseMap::default());
        let inside = Arc::new(Mutex::new((0u32, 0u32)));
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let (map, inside) = (map.clone(), inside.clone());
                std::thread::spawn(move || {
                    let _l = map.acquire("2@localhost");
                    {
                        let mut g = inside.lock().unwrap();
                        g.0 += 1;
                        g.1 = g.1.max(g.0);
                    }
                    std::thread::sleep(Duration::from_millis(20));
                    inside.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        assert_eq!(inside.lock().unwrap().1, 1);
        assert!(!map.is_held("2@localhost"));
    }

    #[test]
    fn latency_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness(dir.path(), "exit 0", 10);
        assert_eq!(
            h.parse_latencies("warmup\nlatency_ms: 12.5\nLATENCY_MS=1e2\n"),
            vec![12.5, 100.0]
        );
    }
}

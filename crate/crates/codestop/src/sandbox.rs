//! Child-process execution with a wall-clock deadline and per-attempt
//! scratch directories.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

/// Interval between liveness polls of a running child.
const POLL: Duration = Duration::from_millis(2);

/// Largest amount of captured output read back into memory per stream.
const CAPTURE_LIMIT: u64 = 1 << 20;

#[derive(Debug)]
pub struct Finished {
    /// `None` when the child was killed at the deadline.
    pub status: Option<ExitStatus>,
    pub timed_out: bool,
    pub duration: Duration,
    pub stdout: String,
    pub stderr: String,
}

impl Finished {
    pub fn success(&self) -> bool {
        self.status.is_some_and(|s| s.success())
    }

    pub fn exit_code(&self) -> Option<i32> {
        self.status.and_then(|s| s.code())
    }
}

/// One invocation: program, arguments, working directory and environment.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub program: String,
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub env: BTreeMap<String, String>,
}

impl Invocation {
    /// `template` is a program followed by leading arguments.
    pub fn new(template: &[String], cwd: &Path, env: &BTreeMap<String, String>) -> io::Result<Self> {
        let (program, args) = template
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "empty command template"))?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
            cwd: cwd.to_path_buf(),
            env: env.clone(),
        })
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I: IntoIterator<Item = S>, S: Into<String>>(mut self, args: I) -> Self {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    /// Runs to completion or until `deadline`, capturing output into
    /// `<cwd>/<label>.stdout.txt` and `<cwd>/<label>.stderr.txt`. Spawn
    /// failures are returned as-is so callers can tell a missing toolchain
    /// apart from a failing program.
    pub fn run(&self, label: &str, deadline: Instant) -> io::Result<Finished> {
        let out_path = self.cwd.join(format!("{label}.stdout.txt"));
        let err_path = self.cwd.join(format!("{label}.stderr.txt"));
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .current_dir(&self.cwd)
            .env_clear()
            .envs(&self.env)
            .stdin(Stdio::null())
            .stdout(File::create(&out_path)?)
            .stderr(File::create(&err_path)?);
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let started = Instant::now();
        let mut child = cmd.spawn()?;
        let (status, timed_out) = wait_until(&mut child, deadline)?;
        Ok(Finished {
            status,
            timed_out,
            duration: started.elapsed(),
            stdout: read_capped(&out_path),
            stderr: read_capped(&err_path),
        })
    }
}

fn wait_until(child: &mut Child, deadline: Instant) -> io::Result<(Option<ExitStatus>, bool)> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((Some(status), false));
        }
        let now = Instant::now();
        if now >= deadline {
            kill_tree(child);
            child.wait()?;
            return Ok((None, true));
        }
        thread::sleep(POLL.min(deadline - now));
    }
}

/// Kills the child's whole process group, so grandchildren (a JVM forked by
/// a wrapper script, say) do not outlive the deadline.
fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // SAFETY: killpg only sends a signal; the group id is the child's pid
        // because it was spawned with process_group(0).
        unsafe {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn read_capped(path: &Path) -> String {
    use std::io::Read;
    let mut buf = Vec::new();
    if let Ok(f) = File::open(path) {
        let _ = f.take(CAPTURE_LIMIT).read_to_end(&mut buf);
    }
    String::from_utf8_lossy(&buf).into_owned()
}

/// `<work>/<session-id>/` with numbered attempt directories below it.
#[derive(Debug)]
pub struct Scratch {
    root: PathBuf,
    attempts: AtomicU64,
    keep: bool,
}

impl Scratch {
    pub fn new(work_dir: &Path, keep: bool) -> io::Result<Self> {
        let root = work_dir.join(uuid::Uuid::new_v4().simple().to_string());
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            attempts: AtomicU64::new(0),
            keep,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Fresh, empty directory for one check or test run.
    pub fn attempt(&self) -> io::Result<Attempt> {
        let n = self.attempts.fetch_add(1, Ordering::Relaxed) + 1;
        let dir = self.root.join(format!("attempt-{n}"));
        fs::create_dir_all(&dir)?;
        Ok(Attempt { dir, keep: self.keep })
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.root);
        }
    }
}

#[derive(Debug)]
pub struct Attempt {
    dir: PathBuf,
    keep: bool,
}

impl Attempt {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, name: &str, contents: &str) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

impl Drop for Attempt {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Inherited-but-filtered environment: only the named variables survive,
/// then explicit overrides are applied.
pub fn filtered_env(passthrough: &[String], overrides: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut env: BTreeMap<String, String> = passthrough
        .iter()
        .filter_map(|k| std::env::var(k).ok().map(|v| (k.clone(), v)))
        .collect();
    env.insert("PYTHONDONTWRITEBYTECODE".into(), "1".into());
    env.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
    env
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn sh(dir: &Path, script: &str) -> Invocation {
        let env = filtered_env(&["PATH".to_string()], &BTreeMap::new());
        Invocation::new(&["sh".to_string(), "-c".to_string()], dir, &env)
            .unwrap()
            .arg(script)
    }

    #[test]
    fn captures_output_and_status() {
        let scratch = Scratch::new(&std::env::temp_dir().join("codestop-sandbox-test"), false).unwrap();
        let attempt = scratch.attempt().unwrap();
        let done = sh(attempt.dir(), "echo out; echo err >&2; exit 3")
            .run("probe", Instant::now() + Duration::from_secs(5))
            .unwrap();
        assert_eq!(done.stdout, "out\n");
        assert_eq!(done.stderr, "err\n");
        assert_eq!(done.exit_code(), Some(3));
        assert!(!done.timed_out && !done.success());
        assert!(attempt.dir().join("probe.stdout.txt").exists());
    }

    #[test]
    fn deadline_kills_the_process_group() {
        let scratch = Scratch::new(&std::env::temp_dir().join("codestop-sandbox-test"), false).unwrap();
        let attempt = scratch.attempt().unwrap();
        let started = Instant::now();
        // The grandchild keeps the stdout file open; it must die too.
        let done = sh(attempt.dir(), "sleep 30 & sleep 30")
            .run("slow", Instant::now() + Duration::from_millis(200))
            .unwrap();
        assert!(done.timed_out);
        assert!(done.status.is_none());
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn environment_is_filtered() {
        std::env::set_var("CODESTOP_SECRET_PROBE", "x");
        let scratch = Scratch::new(&std::env::temp_dir().join("codestop-sandbox-test"), false).unwrap();
        let attempt = scratch.attempt().unwrap();
        let done = sh(attempt.dir(), "echo \"[$CODESTOP_SECRET_PROBE][$PYTHONDONTWRITEBYTECODE]\"")
            .run("env", Instant::now() + Duration::from_secs(5))
            .unwrap();
        assert_eq!(done.stdout, "[][1]\n");
    }

    #[test]
    fn attempts_are_disjoint_and_cleaned() {
        let scratch = Scratch::new(&std::env::temp_dir().join("codestop-sandbox-test"), false).unwrap();
        let a = scratch.attempt().unwrap();
        let b = scratch.attempt().unwrap();
        assert_ne!(a.dir(), b.dir());
        let root = scratch.root().to_path_buf();
        drop((a, b));
        drop(scratch);
        assert!(!root.exists());
    }

    #[test]
    fn missing_program_is_not_found() {
        let dir = tempfile_dir();
        let err = Invocation::new(&["codestop-no-such-binary".to_string()], &dir, &BTreeMap::new())
            .unwrap()
            .run("x", Instant::now() + Duration::from_secs(1))
            .unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::NotFound);
    }

    fn tempfile_dir() -> PathBuf {
        let d = std::env::temp_dir().join(format!("codestop-nf-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }
}

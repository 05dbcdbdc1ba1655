#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Child, ChildStderr, Command, ExitStatus, Output, Stdio};
use std::thread;
use std::time::Duration;

use condmon_core::bus::BROKER_ENV;

pub fn condmon() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_condmon"));
    c.env_remove(BROKER_ENV).env("RUST_LOG", "info");
    c
}

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    condmon().args(args).output().expect("spawn condmon")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Reads stderr until a line satisfies `pick`, then keeps draining it in the
/// background so the child never blocks on a full pipe.
fn wait_for_line<T>(stderr: ChildStderr, mut pick: impl FnMut(&str) -> Option<T>) -> T {
    let mut reader = BufReader::new(stderr);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).expect("read child stderr") == 0 {
            panic!("child exited before announcing itself");
        }
        if let Some(v) = pick(line.trim_end()) {
            thread::spawn(move || {
                let mut sink = Vec::new();
                let _ = reader.read_to_end(&mut sink);
            });
            return v;
        }
    }
}

/// `condmon broker` on an ephemeral port, killed on drop.
pub struct BrokerProcess {
    child: Child,
    pub addr: String,
}

impl BrokerProcess {
    pub fn start() -> Self {
        let mut child = condmon()
            .args(["broker", "--listen", "127.0.0.1:0"])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn broker");
        let addr = wait_for_line(child.stderr.take().unwrap(), |l| {
            l.strip_prefix("listening on ").map(str::to_string)
        });
        BrokerProcess { child, addr }
    }

    pub fn child(&mut self) -> &mut Child {
        &mut self.child
    }
}

impl Drop for BrokerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A running `condmon record`, killed on drop if it has not finished.
pub struct Recorder(Child);

impl Recorder {
    pub fn wait(&mut self) -> std::io::Result<ExitStatus> {
        self.0.wait()
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        if let Ok(None) = self.0.try_wait() {
            let _ = self.0.kill();
            let _ = self.0.wait();
        }
    }
}

/// `condmon record` into `out`, returning once it has subscribed. It exits
/// by itself after `idle_s` seconds without traffic.
pub fn start_recorder(addr: &str, out: &Path, idle_s: f64) -> Recorder {
    let mut child = condmon()
        .args(["record", "--broker", addr, "--idle", &idle_s.to_string(), "-o"])
        .arg(out)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn recorder");
    wait_for_line(child.stderr.take().unwrap(), |l| l.contains("recording").then_some(()));
    // the subscription frame is on its way; give the broker a moment
    thread::sleep(Duration::from_millis(300));
    Recorder(child)
}

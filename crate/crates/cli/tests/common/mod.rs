#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use segtune_core::maskdata::LabelMask;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segtune"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("run segtune")
}

/// Minimal HTTP/1.1 client; one request per connection.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).expect("connect");
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let text = String::from_utf8(raw).expect("utf-8 response");
    let (head, body) = text.split_once("\r\n\r\n").expect("header terminator");
    let code: u16 = head.split_whitespace().nth(1).expect("status code").parse().unwrap();
    let body = if body.is_empty() { Value::Null } else { serde_json::from_str(body).expect("json body") };
    (code, body)
}

pub struct Server {
    pub child: Child,
    pub addr: SocketAddr,
}

impl Server {
    /// Starts `segtune serve` on an ephemeral port.
    pub fn start(state_dir: &Path) -> Self {
        let mut child = bin()
            .args(["serve", "--port", "0", "--state-dir"])
            .arg(state_dir)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn server");
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let addr = loop {
            let line = lines.next().expect("server exited before listening").unwrap();
            if let Some(rest) = line.strip_prefix("listening on http://") {
                break rest.trim().parse().unwrap();
            }
        };
        // keep draining stderr so the server never blocks on a full pipe
        std::thread::spawn(move || for _ in lines {});
        Self { child, addr }
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn write_pair(dir: &Path) -> (String, String) {
    let m = LabelMask::new(4, 3, vec![0, 1, 1, 0, 0, 1, 0, 0, 2, 2, 0, 0]).unwrap();
    let (img, truth) = (dir.join("img.pgm"), dir.join("truth.pgm"));
    m.save(&img).unwrap();
    m.save(&truth).unwrap();
    (img.display().to_string(), truth.display().to_string())
}

/// A request whose evaluations each take a few tens of milliseconds.
pub fn slow_request(dir: &Path, budget: usize) -> Value {
    let (img, truth) = write_pair(dir);
    json!({
        "space": {"dims": [{"name": "a", "type": "range", "lo": 0, "hi": 9, "step": 1}]},
        "workflow": {"kind": "external-command", "command": "sh -c 'sleep 0.03; cp \"$2\" \"$3\"' x {a} {input} {output}"},
        "inputs": [img],
        "truths": [truth],
        "weights": "1,0",
        "algorithm": "ga",
        "budget": budget,
        "seed": 11
    })
}

/// Polls a task until it finishes, returning the distinct statuses seen.
pub fn poll_until_finished(addr: SocketAddr, id: &str) -> Vec<String> {
    let deadline = Instant::now() + Duration::from_secs(120);
    let mut seen: Vec<String> = Vec::new();
    loop {
        let (code, body) = http(addr, "GET", &format!("/tasks/{id}"), None);
        assert_eq!(code, 200, "status of {id}: {body}");
        let s = body["status"].as_str().unwrap().to_string();
        if seen.last() != Some(&s) {
            seen.push(s.clone());
        }
        if s == "done" || s == "failed" {
            return seen;
        }
        assert!(Instant::now() < deadline, "task {id} stuck: {seen:?}");
        std::thread::sleep(Duration::from_millis(5));
    }
}

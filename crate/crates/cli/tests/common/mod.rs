#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rulemine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rulemine"))
        .args(args)
        .env("RULEMINE_API_KEY", "test-key")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = rulemine(args);
    assert!(
        out.status.success(),
        "rulemine {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub const PLANTED_A: [&str; 2] = ["f0", "f1"];
pub const PLANTED_B: [&str; 3] = ["f2", "f3", "f4"];

/// 8 fair boolean features; label = (f0 and f1) or (f2 and f3 and f4), then
/// each label flipped with probability `noise`.
pub fn planted_rows(n: usize, noise: f64, seed: u64) -> Vec<([bool; 8], bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut x = [false; 8];
            for v in &mut x {
                *v = rng.gen_bool(0.5);
            }
            let clean = (x[0] && x[1]) || (x[2] && x[3] && x[4]);
            let label = if rng.gen_bool(noise) { !clean } else { clean };
            (x, label)
        })
        .collect()
}

pub fn write_planted_csv(path: &Path, rows: &[([bool; 8], bool)]) {
    let mut s = String::from("f0,f1,f2,f3,f4,f5,f6,f7,label\n");
    for (x, y) in rows {
        let cells: Vec<&str> = x.iter().map(|&b| if b { "1" } else { "0" }).collect();
        s.push_str(&cells.join(","));
        s.push_str(if *y { ",1\n" } else { ",0\n" });
    }
    std::fs::write(path, s).unwrap();
}

/// Minimal chat-completions endpoint answering every request with `reply`.
pub struct FakeEndpoint {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

impl FakeEndpoint {
    pub fn start(reply: &str) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let body = serde_json::json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}]
        })
        .to_string();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut req = vec![0u8; len];
                let _ = reader.read_exact(&mut req);
                counter.fetch_add(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        FakeEndpoint { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

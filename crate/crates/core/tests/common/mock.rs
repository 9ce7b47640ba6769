//! A tiny HTTP/1.1 server standing in for a remote completion endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

pub const TOKEN: &str = "sekrit";

#[derive(Default)]
pub struct Stats {
    pub in_flight: AtomicUsize,
    pub peak: AtomicUsize,
    pub served: AtomicUsize,
}

/// Minimal HTTP/1.1 server; `reply` maps (request number, body) to
/// (status, body, delay).
pub fn serve<F>(reply: F) -> (String, Arc<Stats>)
where
    F: Fn(usize, &str) -> (u16, String, u64) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/generate", listener.local_addr().unwrap());
    let stats = Arc::new(Stats::default());
    let reply = Arc::new(reply);
    let st = stats.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (st, reply) = (st.clone(), reply.clone());
            thread::spawn(move || handle(stream, &st, &*reply));
        }
    });
    (url, stats)
}

fn handle(
    stream: TcpStream,
    st: &Stats,
    reply: &(dyn Fn(usize, &str) -> (u16, String, u64) + Send + Sync),
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut auth = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end().to_string();
        if l.is_empty() {
            break;
        }
        let lower = l.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = l["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let body = String::from_utf8(body).unwrap();

    let now = st.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.peak.fetch_max(now, Ordering::SeqCst);
    let n = st.served.fetch_add(1, Ordering::SeqCst);
    let (status, text, delay) = if auth != format!("Bearer {TOKEN}") {
        (401, "{}".to_string(), 0)
    } else {
        reply(n, &body)
    };
    thread::sleep(Duration::from_millis(delay));
    st.in_flight.fetch_sub(1, Ordering::SeqCst);
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

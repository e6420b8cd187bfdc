//! Minimal HTTP/1.1 endpoint for exercising the HTTP teacher offline.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

pub type Handler = dyn Fn(&str) -> (u16, String) + Send + Sync;
pub type HeaderLog = Arc<Mutex<Vec<Vec<(String, String)>>>>;

pub struct Stub {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub peak_in_flight: Arc<AtomicUsize>,
    /// Lower-cased request headers, one list per request.
    pub headers: HeaderLog,
}

/// Wraps assistant text the way a chat-completion endpoint would.
pub fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

/// Serves every request with `handler(body)` after `delay`.
pub fn serve(delay: Duration, handler: impl Fn(&str) -> (u16, String) + Send + Sync + 'static) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let headers = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    {
        let (requests, peak, headers) = (requests.clone(), peak.clone(), headers.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (handler, requests, in_flight, peak, headers) = (
                    handler.clone(),
                    requests.clone(),
                    in_flight.clone(),
                    peak.clone(),
                    headers.clone(),
                );
                thread::spawn(move || {
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    requests.fetch_add(1, Ordering::SeqCst);
                    handle(stream, delay, &*handler, &headers);
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
    }
    Stub {
        url,
        requests,
        peak_in_flight: peak,
        headers,
    }
}

fn handle(stream: TcpStream, delay: Duration, handler: &Handler, log: &HeaderLog) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut seen = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            seen.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    log.lock().unwrap().push(seen);
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    thread::sleep(delay);
    let (status, reply) = handler(&String::from_utf8_lossy(&body));
    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        if status == 200 { "OK" } else { "Error" },
        reply.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.as_bytes());
    let _ = stream.flush();
}

/// The user prompt text inside a chat-completion request body.
pub fn prompt_of(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).unwrap_or_default();
    v.pointer("/messages/0/content/0/text")
        .and_then(|t| t.as_str())
        .unwrap_or_default()
        .to_string()
}

//! A minimal in-process HTTP server standing in for a chat-completion
//! endpoint in tests and local dry runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

/// A request as seen by the stub.
#[derive(Debug, Clone)]
pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: Value,
    /// Zero-based arrival index across the server's lifetime.
    pub index: usize,
}

impl StubRequest {
    /// Content of the first chat message, if the body has one.
    pub fn prompt(&self) -> &str {
        self.body
            .pointer("/messages/0/content")
            .and_then(Value::as_str)
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    /// A success response in the common `choices[0].message.content` layout.
    pub fn chat(text: &str) -> Self {
        StubResponse {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
                .to_string(),
        }
    }

    pub fn error(status: u16) -> Self {
        StubResponse {
            status,
            body: json!({"error": "scripted failure"}).to_string(),
        }
    }
}

type Handler = dyn Fn(&StubRequest) -> StubResponse + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral local port and answers every request with
    /// `handler`.
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&StubRequest) -> StubResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let (hits, stop) = (hits.clone(), stop.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let (hits, handler) = (hits.clone(), handler.clone());
                    std::thread::spawn(move || {
                        let _ = serve(stream, &hits, handler.as_ref());
                    });
                }
            })
        };
        Ok(StubServer {
            addr,
            hits,
            stop,
            worker: Some(worker),
        })
    }

    /// Replies with `script` in order, repeating the last entry once the
    /// script runs out.
    pub fn scripted(script: Vec<StubResponse>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "empty stub script");
        StubServer::start(move |req| script[req.index.min(script.len() - 1)].clone())
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(stream: TcpStream, hits: &AtomicUsize, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut raw = vec![0; content_length];
    reader.read_exact(&mut raw)?;
    let body = serde_json::from_slice(&raw).unwrap_or(Value::Null);

    let index = hits.fetch_add(1, Ordering::SeqCst);
    let resp = handler(&StubRequest {
        method,
        path,
        body,
        index,
    });
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        resp.status,
        resp.body.len(),
        resp.body
    )?;
    stream.flush()
}

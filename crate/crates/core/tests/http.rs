use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use graphif::backend::{HttpBackend, HttpConfig, RetryPolicy};
use graphif::backend::{BackendError, CallSite, ChatBackend, ChatMessage, ChatRequest, SamplingConfig};
use serde_json::Value;

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Serves the canned `(status, body)` replies in order, one per connection.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured { headers, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(url: String, send_top_k: bool) -> HttpConfig {
    HttpConfig {
        base_url: url,
        model: "m".into(),
        send_top_k,
        timeout_secs: 5,
        retry: RetryPolicy { max_retries: 2, base_delay_ms: 1, max_delay_ms: 2 },
    }
}

fn request() -> ChatRequest {
    ChatRequest {
        site: CallSite::InitialGeneration,
        probe: "s/initial:turn1".into(),
        messages: vec![ChatMessage::user("hello")],
        sampling: SamplingConfig::default(),
    }
}

#[test]
fn retries_transient_statuses_then_succeeds() {
    let (url, seen, h) = stub(vec![(429, "{}".into()), (503, "{}".into()), (200, ok_body("hi"))]);
    let backend = HttpBackend::with_api_key(config(url, false), Some("sekrit".into()));
    assert_eq!(backend.complete(&request()).unwrap(), "hi");
    h.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    for c in seen.iter() {
        assert!(c.headers.iter().any(|l| l.eq_ignore_ascii_case("authorization: Bearer sekrit")));
        assert!(c.body.get("top_k").is_none());
        assert_eq!(c.body["model"], "m");
        assert_eq!(c.body["messages"][0]["content"], "hello");
    }
}

#[test]
fn exhausting_retries_is_unavailable() {
    let (url, _, h) = stub(vec![(500, "{}".into()); 3]);
    let backend = HttpBackend::with_api_key(config(url, false), None);
    match backend.complete(&request()) {
        Err(BackendError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected BackendUnavailable, got {other:?}"),
    }
    h.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, h) = stub(vec![(400, "{\"error\":\"bad\"}".into())]);
    let backend = HttpBackend::with_api_key(config(url, true), None);
    match backend.complete(&request()) {
        Err(BackendError::Rejected { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("expected Rejected, got {other:?}"),
    }
    h.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].body["top_k"], 20);
    assert!(!seen[0].headers.iter().any(|l| l.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn malformed_body_is_reported() {
    let (url, _, h) = stub(vec![(200, "{\"choices\": []}".into())]);
    let backend = HttpBackend::with_api_key(config(url, false), None);
    assert!(matches!(backend.complete(&request()), Err(BackendError::MalformedResponse(_))));
    h.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::with_api_key(config(format!("http://127.0.0.1:{port}/v1"), false), None);
    assert!(matches!(backend.complete(&request()), Err(BackendError::BackendUnavailable { .. })));
}

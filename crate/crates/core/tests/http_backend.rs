//! HTTP client against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;
use t2vscore::backends::{
    BackendError, BackendProfile, Capabilities, ChatBackend, ChatMessage, ChatRequest, ContentPart, HttpChatClient,
    RateLimits, RetryPolicy, Role,
};

/// Serves `replies` in order, one per connection, and records request bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&buf).unwrap());
            let reason = if status == 200 { "OK" } else { "Too Many Requests" };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn profile(url: String, attempts: u32) -> BackendProfile {
    BackendProfile {
        endpoint: url,
        model_id: "local-test".into(),
        capabilities: Capabilities::ALL,
        limits: RateLimits::default(),
        retry: RetryPolicy {
            max_attempts: attempts,
            backoff_base_ms: 5,
        },
        timeout_secs: 10,
    }
}

fn request() -> ChatRequest {
    ChatRequest::new(
        "local-test",
        vec![
            ChatMessage::text(Role::System, "sys"),
            ChatMessage {
                role: Role::User,
                parts: vec![ContentPart::png(vec![1, 2, 3]), ContentPart::Text("which?".into())],
            },
        ],
    )
}

const OK: &str =
    r#"{"choices":[{"message":{"role":"assistant","content":"C"}}],"usage":{"prompt_tokens":9,"completion_tokens":1}}"#;

#[test]
fn retries_after_429() {
    let (url, seen, server) = serve(vec![(429, "{}".into()), (200, OK.into())]);
    let client = HttpChatClient::with_key(profile(url, 3), Some("k".into())).unwrap();
    let done = client.send(&request()).unwrap();
    server.join().unwrap();
    assert_eq!(done.text, "C");
    assert_eq!(done.attempts, 2);
    assert_eq!(done.usage.unwrap().prompt_tokens, 9);

    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 2);
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0]["model"], "local-test");
    let parts = &bodies[0]["messages"][1]["content"];
    assert!(parts[0]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
}

#[test]
fn gives_up_after_budget() {
    let (url, _, server) = serve(vec![(429, "{}".into()), (429, "{}".into())]);
    let client = HttpChatClient::with_key(profile(url, 2), None).unwrap();
    let err = client.send(&request()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, BackendError::RateLimited { attempts: 2 }), "{err}");
}

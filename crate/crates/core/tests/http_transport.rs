use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use lexlab_core::gateway::{Capability, ChatRequest, Gateway, GatewayError, HttpTransport, RetryPolicy, ScoreRequest};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Serves one scripted `(status, body)` per connection and records what it got.
fn stub(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, reply) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut r = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut headers = Vec::new();
            loop {
                let mut h = String::new();
                r.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut body = vec![0; len];
            r.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen { path, headers, body: serde_json::from_slice(&body).unwrap_or(Value::Null) });
            let mut w = stream;
            write!(
                w,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (base, seen)
}

fn gateway(base: &str, cap: Capability, attempts: u32) -> Gateway {
    let t = HttpTransport::new(base, "m-1", Some("sk-test".into()), cap, Duration::from_secs(5)).unwrap();
    Gateway::new(Arc::new(t), RetryPolicy::no_backoff(attempts), 2)
}

#[test]
fn chat_wire_format() {
    let (base, seen) = stub(vec![(200, r#"{"completion":"答复"}"#.into())]);
    let gw = gateway(&base, Capability::Chat, 1);
    let req = ChatRequest::user("结婚年龄是多少？");
    assert_eq!(gw.chat(&req).unwrap(), "答复");

    let seen = seen.lock().unwrap();
    let s = &seen[0];
    assert_eq!(s.path, "/chat");
    assert_eq!(
        s.body,
        json!({"model": "m-1", "messages": [{"role": "user", "content": "结婚年龄是多少？"}], "temperature": 0.0, "max_tokens": 1024})
    );
    assert_eq!(s.header("authorization"), Some("Bearer sk-test"));
    assert_eq!(s.header("idempotency-key"), Some(req.digest().as_str()));
}

#[test]
fn score_wire_format() {
    let (base, seen) = stub(vec![(200, r#"{"logprob_sum":-2.5,"token_count":3}"#.into())]);
    let gw = gateway(&base, Capability::Score, 1);
    let r = gw.score_continuation("问题：", "正确").unwrap();
    assert_eq!((r.logprob_sum, r.token_count), (-2.5, 3));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/score");
    assert_eq!(seen[0].body, json!({"model": "m-1", "prompt": "问题：", "continuation": "正确"}));
    assert_eq!(seen[0].header("idempotency-key"), Some(ScoreRequest::new("问题：", "正确").digest().as_str()));
    assert!(matches!(gw.chat(&ChatRequest::user("x")), Err(GatewayError::CapabilityError { .. })));
}

#[test]
fn transient_status_is_retried_with_same_key() {
    let (base, seen) = stub(vec![(503, "{}".into()), (429, "{}".into()), (200, r#"{"completion":"ok"}"#.into())]);
    let gw = gateway(&base, Capability::Chat, 3);
    assert_eq!(gw.chat(&ChatRequest::user("q")).unwrap(), "ok");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.windows(2).all(|w| w[0].header("idempotency-key") == w[1].header("idempotency-key")));
}

#[test]
fn auth_and_malformed_are_not_retried() {
    let (base, seen) = stub(vec![(401, "{}".into())]);
    let gw = gateway(&base, Capability::Chat, 3);
    assert!(matches!(gw.chat(&ChatRequest::user("q")), Err(GatewayError::AuthError(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);

    let (base, seen) = stub(vec![(200, r#"{"text":"wrong field"}"#.into())]);
    let gw = gateway(&base, Capability::Chat, 3);
    assert!(matches!(gw.chat(&ChatRequest::user("q")), Err(GatewayError::Fatal(m)) if m.contains("malformed")));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries() {
    let (base, _) = stub(vec![(500, "{}".into()), (502, "{}".into())]);
    let gw = gateway(&base, Capability::Chat, 2);
    assert!(matches!(gw.chat(&ChatRequest::user("q")), Err(GatewayError::BackendUnavailable { attempts: 2, .. })));
}

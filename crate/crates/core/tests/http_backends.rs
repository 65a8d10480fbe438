//! HTTP backends against a scripted server on the loopback interface.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use requiz_core::embedsim::{EmbeddingBackend, HttpBackend};
use requiz_core::provider::{Backend, Provider, ProviderConfig, ProviderError, RetryPolicy};
use requiz_core::quizgen::{GenerationParams, Prompt};

const KEY_ENV: &str = "REQUIZ_TEST_HTTP_KEY";

#[derive(Debug, Clone)]
struct Request {
    auth: Option<String>,
    body: serde_json::Value,
}

type Responder = Box<dyn Fn(usize, &serde_json::Value) -> (u16, Vec<(String, String)>, String) + Send>;

/// Serves `count` connections, answering each with `respond(index, body)`.
fn serve(count: usize, respond: Responder) -> (String, Arc<Mutex<Vec<Request>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for i in 0..count {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body: serde_json::Value = serde_json::from_slice(&buf).unwrap();
            let (status, headers, payload) = respond(i, &body);
            log.lock().unwrap().push(Request { auth, body });
            let mut out = stream;
            let mut head = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nConnection: close\r\nContent-Length: {}\r\n", payload.len());
            for (k, v) in headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            out.write_all(head.as_bytes()).unwrap();
            out.write_all(payload.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn prompt() -> Prompt {
    Prompt {
        text: "//c\nint main(void) { return 0; }\n\"\"\"\n Q. Is this C?\n A.".into(),
        stop_sequences: vec!["Q.".into()],
        params: GenerationParams { temperature: 0.4, top_p: 1.0, ..GenerationParams::default() },
    }
}

fn provider(url: &str, max_retries: u32) -> Provider {
    std::env::set_var(KEY_ENV, "secret");
    let mut cfg = ProviderConfig::new(Backend::HttpCompletionApi { endpoint: url.into(), api_key_env: KEY_ENV.into() });
    cfg.retry = RetryPolicy { max_retries, initial_backoff_ms: 1, max_backoff_ms: 5 };
    cfg.request_timeout_secs = 5;
    Provider::new(cfg).unwrap()
}

#[test]
fn completion_retries_then_truncates_at_stop() {
    let (url, seen) = serve(
        3,
        Box::new(|i, _| match i {
            0 => (500, vec![], "{}".into()),
            1 => (429, vec![("Retry-After".into(), "0".into())], "{}".into()),
            _ => (200, vec![], r#"{"choices":[{"text":" True.\n Q. And more?"}]}"#.into()),
        }),
    );
    let p = provider(&url, 3);
    let c = p.complete(&prompt(), "q1", 0).unwrap();
    assert_eq!(c.raw_text, " True.\n ");
    assert!(!c.cache_hit);
    assert_eq!(c.provider_id, "http_completion_api");

    let reqs = seen.lock().unwrap().clone();
    assert_eq!(reqs.len(), 3);
    let body = &reqs[2].body;
    assert_eq!(reqs[2].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(body["temperature"], 0.4);
    assert_eq!(body["top_p"], 1.0);
    assert_eq!(body["stop"], serde_json::json!(["Q."]));
    assert_eq!(body["prompt"], prompt().text);

    // Served from the in-memory cache; the server would refuse a fourth call.
    let again = p.complete(&prompt(), "q1", 0).unwrap();
    assert!(again.cache_hit);
    assert_eq!(again.raw_text, c.raw_text);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(1, Box::new(|_, _| (401, vec![], "{}".into())));
    let err = provider(&url, 5).complete(&prompt(), "q1", 0).unwrap_err();
    assert!(matches!(err, ProviderError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let (url, _) = serve(2, Box::new(|_, _| (503, vec![], "{}".into())));
    let err = provider(&url, 1).complete(&prompt(), "q1", 0).unwrap_err();
    assert!(matches!(err, ProviderError::Network(_)), "{err:?}");
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (url, _) = serve(1, Box::new(|_, _| (200, vec![], r#"{"choices":[]}"#.into())));
    let err = provider(&url, 0).complete(&prompt(), "q1", 0).unwrap_err();
    assert!(matches!(err, ProviderError::Protocol(_)), "{err:?}");
}

#[test]
fn embeddings_are_batched_in_order() {
    let (url, seen) = serve(
        2,
        Box::new(|_, body| {
            let data: Vec<serde_json::Value> = body["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| serde_json::json!({ "embedding": [t.as_str().unwrap().len() as f64, 1.0] }))
                .collect();
            (200, vec![], serde_json::json!({ "data": data }).to_string())
        }),
    );
    std::env::set_var(KEY_ENV, "secret");
    let backend = HttpBackend::new(&url, "embed-small", KEY_ENV, 5);
    let texts: Vec<String> = (0..20).map(|i| "x".repeat(i + 1)).collect();
    let vectors = backend.embed(&texts).unwrap();
    assert_eq!(vectors.len(), 20);
    for (i, v) in vectors.iter().enumerate() {
        assert_eq!(v, &vec![(i + 1) as f64, 1.0]);
    }
    let reqs = seen.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[0].body["model"], "embed-small");
    assert_eq!(reqs[0].body["input"].as_array().unwrap().len(), 16);
}

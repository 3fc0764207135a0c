//! HTTP backend protocol tests against a minimal in-process server.

use invrisk_core::vlm::http::HttpBackend;
use invrisk_core::vlm::{
    caption, zero_shot_text_classify, CaptionBackend, ImageRef, ImageTextSimilarityBackend,
};
use ndarray::Array3;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Serves the backend wire protocol; `fail_first` requests per endpoint get
/// a 500 before the server starts answering.
fn spawn_server(fail_first: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let addr = listener.local_addr().unwrap();
    let failures = Arc::new(AtomicUsize::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let failures = failures.clone();
            std::thread::spawn(move || handle(stream, fail_first, failures));
        }
    });
    format!("http://{addr}")
}

fn handle(mut stream: TcpStream, fail_first: usize, failures: Arc<AtomicUsize>) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let (head, body_start) = loop {
        let n = stream.read(&mut chunk).unwrap_or(0);
        if n == 0 {
            return;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break (String::from_utf8_lossy(&buf[..pos]).into_owned(), pos + 4);
        }
    };
    let content_length: usize = head
        .lines()
        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().ok()))
        .flatten()
        .unwrap_or(0);
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).unwrap_or(0);
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body = &buf[body_start..];
    let request_line = head.lines().next().unwrap_or_default().to_string();
    let path = request_line.split_whitespace().nth(1).unwrap_or("");

    let respond = |stream: &mut TcpStream, status: &str, json: &str| {
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}",
            json.len()
        );
        let _ = stream.write_all(response.as_bytes());
    };

    if path != "/v1/identity" && failures.fetch_add(1, Ordering::SeqCst) < fail_first {
        respond(&mut stream, "500 Internal Server Error", "{\"error\":\"flaky\"}");
        return;
    }

    match path {
        "/v1/identity" => respond(
            &mut stream,
            "200 OK",
            r#"{"name":"test-vlm","digest":"deadbeefdeadbeef","max_concurrency":1}"#,
        ),
        "/v1/caption" => {
            let parsed: serde_json::Value = serde_json::from_slice(body).unwrap();
            let prompt = parsed.get("prompt").and_then(|p| p.as_str()).unwrap_or("");
            let caption = if prompt.is_empty() {
                "a photo of a cat".to_string()
            } else {
                format!("prompted: {prompt}")
            };
            respond(
                &mut stream,
                "200 OK",
                &serde_json::json!({ "caption": caption }).to_string(),
            );
        }
        "/v1/zeroshot-text" => {
            let parsed: serde_json::Value = serde_json::from_slice(body).unwrap();
            let text = parsed["text"].as_str().unwrap_or("");
            let labels = parsed["labels"].as_array().cloned().unwrap_or_default();
            let scores: Vec<f64> = labels
                .iter()
                .map(|l| {
                    if text.contains(l.as_str().unwrap_or("")) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            respond(
                &mut stream,
                "200 OK",
                &serde_json::json!({ "scores": scores }).to_string(),
            );
        }
        "/v1/similarity" => {
            let parsed: serde_json::Value = serde_json::from_slice(body).unwrap();
            let n = parsed["texts"].as_array().map(|t| t.len()).unwrap_or(0);
            let scores: Vec<f64> = (0..n).map(|i| 1.0 / (i + 1) as f64).collect();
            respond(
                &mut stream,
                "200 OK",
                &serde_json::json!({ "scores": scores }).to_string(),
            );
        }
        _ => respond(&mut stream, "404 Not Found", "{}"),
    }
}

fn test_image() -> Array3<f32> {
    Array3::from_shape_fn((4, 4, 3), |(y, x, c)| ((y + x + c) as f32 * 0.1) % 1.0)
}

#[test]
fn identity_is_fetched_from_endpoint() {
    let url = spawn_server(0);
    let backend = HttpBackend::connect(&url).unwrap();
    let identity = CaptionBackend::identity(&backend);
    assert_eq!(identity.name, "test-vlm");
    assert_eq!(identity.model_digest, "deadbeefdeadbeef");
    assert_eq!(identity.max_concurrency, Some(1));
}

#[test]
fn unreachable_endpoint_is_backend_unavailable() {
    let err = HttpBackend::connect("http://127.0.0.1:1").unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn caption_round_trip_with_prompt() {
    let url = spawn_server(0);
    let backend = HttpBackend::connect(&url).unwrap();
    let record = caption(
        &backend,
        &test_image(),
        ImageRef { class_id: 0, index: 0 },
        Some("look closely"),
    )
    .unwrap();
    assert_eq!(record.caption, "prompted: look closely");
    assert_eq!(record.prompt.as_deref(), Some("look closely"));

    let plain = caption(&backend, &test_image(), ImageRef { class_id: 0, index: 1 }, None).unwrap();
    assert_eq!(plain.caption, "a photo of a cat");
}

#[test]
fn zero_shot_text_over_http() {
    let url = spawn_server(0);
    let backend = HttpBackend::connect(&url).unwrap();
    let labels = vec!["cat".to_string(), "dog".to_string()];
    let ranked = zero_shot_text_classify(&backend, "a photo of a cat", &labels).unwrap();
    assert_eq!(ranked[0].0, "cat");
    assert_eq!(ranked[0].1, 1.0);
}

#[test]
fn similarity_scores_over_http() {
    let url = spawn_server(0);
    let backend = HttpBackend::connect(&url).unwrap();
    let texts = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let scores = ImageTextSimilarityBackend::scores(&backend, &test_image(), &texts).unwrap();
    assert_eq!(scores.len(), 3);
    assert!(scores[0] > scores[1] && scores[1] > scores[2]);
}

#[test]
fn transient_failures_are_retried() {
    // two 500s, then success: within the 3-attempt retry budget
    let url = spawn_server(2);
    let backend = HttpBackend::connect(&url).unwrap();
    let record = caption(&backend, &test_image(), ImageRef { class_id: 0, index: 0 }, None).unwrap();
    assert_eq!(record.caption, "a photo of a cat");
}

#[test]
fn persistent_failures_become_item_errors() {
    let url = spawn_server(1000);
    let backend = HttpBackend::connect(&url).unwrap();
    let err = caption(&backend, &test_image(), ImageRef { class_id: 0, index: 0 }, None).unwrap_err();
    // stage-level (item) error, not a config or backend-unavailable error
    assert_eq!(err.exit_code(), 3);
}
//! The HTTP provider against a local server replaying recorded exchanges.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use glosslink::transfer::{HttpProvider, TranslationProvider};
use glosslink::Error;

const REQUEST: &str = include_str!("fixtures/http/request.json");
const RESPONSE: &str = include_str!("fixtures/http/response.json");

struct Captured {
    authorization: Option<String>,
    body: String,
}

/// Serves one request with `status` and `body`, returning what it received.
fn serve_once(status: &'static str, body: &'static str) -> (String, thread::JoinHandle<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/translate", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        let mut authorization = None;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let lower = line.to_ascii_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            if lower.starts_with("authorization:") {
                authorization = Some(line["authorization:".len()..].trim().to_string());
            }
        }
        let mut buf = vec![0; length];
        reader.read_exact(&mut buf).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        Captured {
            authorization,
            body: String::from_utf8(buf).unwrap(),
        }
    });
    (url, handle)
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn replays_recorded_translation() {
    let (url, server) = serve_once("200 OK", RESPONSE.trim());
    let provider = HttpProvider::new(url, Some("secret".into()));
    let out = provider.translate(&toks("the bank closed"), "en", "de").unwrap();
    assert_eq!(out, toks("die Bank schloss"));
    let seen = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    let recorded: serde_json::Value = serde_json::from_str(REQUEST).unwrap();
    assert_eq!(sent, recorded);
    assert_eq!(seen.authorization.as_deref(), Some("Bearer secret"));
}

#[test]
fn server_error_is_a_provider_error() {
    let (url, server) = serve_once("503 Service Unavailable", "{}");
    let err = HttpProvider::new(url, None).translate(&toks("x"), "en", "de");
    assert!(matches!(err, Err(Error::Provider(_))));
    assert!(server.join().unwrap().authorization.is_none());
}

#[test]
fn malformed_body_is_a_provider_error() {
    let (url, server) = serve_once("200 OK", "{\"text\": \"nope\"}");
    let err = HttpProvider::new(url, None).translate(&toks("x"), "en", "de");
    assert!(matches!(err, Err(Error::Provider(_))));
    server.join().unwrap();
}

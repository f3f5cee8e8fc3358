//! Minimal HTTP front end for the type recommender.
//!
//! `GET /recommend?q=<text>&k=<int>` returns a JSON array of suggestions;
//! `GET /healthz` returns `ok`. One request per connection, thread per
//! connection; the index is immutable so request handling is stateless.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::recommend::TypeIndex;

const DEFAULT_K: usize = 10;

/// Decodes %XX escapes and `+` as space.
fn percent_decode(input: &str) -> String {
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                    }
                    None => {
                        out.push(bytes[i]);
                        i += 1;
                    }
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn query_params(target: &str) -> Vec<(String, String)> {
    let query = match target.split_once('?') {
        Some((_, q)) => q,
        None => return Vec::new(),
    };
    query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => (percent_decode(k), percent_decode(v)),
            None => (percent_decode(kv), String::new()),
        })
        .collect()
}

fn write_response(stream: &mut TcpStream, status: &str, content_type: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

fn handle_connection(mut stream: TcpStream, index: &TypeIndex) {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    // Drain headers; the protocol here is GET-only, no bodies.
    let mut header = String::new();
    while reader.read_line(&mut header).is_ok() {
        if header == "\r\n" || header == "\n" || header.is_empty() {
            break;
        }
        header.clear();
    }

    let mut parts = request_line.split_whitespace();
    let (method, target) = match (parts.next(), parts.next()) {
        (Some(m), Some(t)) => (m, t),
        _ => {
            write_response(
                &mut stream,
                "400 Bad Request",
                "application/json",
                "{\"error\": \"malformed request line\"}",
            );
            return;
        }
    };
    if method != "GET" {
        write_response(
            &mut stream,
            "405 Method Not Allowed",
            "application/json",
            "{\"error\": \"only GET is supported\"}",
        );
        return;
    }
    let path = target.split('?').next().unwrap_or(target);
    match path {
        "/healthz" => write_response(&mut stream, "200 OK", "text/plain", "ok"),
        "/recommend" => {
            let params = query_params(target);
            let q = params
                .iter()
                .find(|(k, _)| k == "q")
                .map(|(_, v)| v.clone());
            let Some(q) = q else {
                write_response(
                    &mut stream,
                    "400 Bad Request",
                    "application/json",
                    "{\"error\": \"missing query parameter q\"}",
                );
                return;
            };
            let k = match params.iter().find(|(key, _)| key == "k") {
                Some((_, v)) => match v.parse::<usize>() {
                    Ok(k) => k,
                    Err(_) => {
                        write_response(
                            &mut stream,
                            "400 Bad Request",
                            "application/json",
                            "{\"error\": \"parameter k must be a non-negative integer\"}",
                        );
                        return;
                    }
                },
                None => DEFAULT_K,
            };
            let recommendations = index.recommend(&q, k);
            match serde_json::to_string(&recommendations) {
                Ok(body) => write_response(&mut stream, "200 OK", "application/json", &body),
                Err(e) => write_response(
                    &mut stream,
                    "500 Internal Server Error",
                    "application/json",
                    &format!("{{\"error\": {:?}}}", e.to_string()),
                ),
            }
        }
        _ => write_response(
            &mut stream,
            "404 Not Found",
            "application/json",
            "{\"error\": \"not found\"}",
        ),
    }
}

/// Binds `addr` (port 0 picks an ephemeral port) and serves the index on a
/// detached accept loop. Returns the actual bound address.
pub fn spawn(index: Arc<TypeIndex>, addr: &str) -> Result<SocketAddr> {
    let listener =
        TcpListener::bind(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = listener
        .local_addr()
        .map_err(|e| Error::Config(format!("cannot resolve bound address: {e}")))?;
    std::thread::spawn(move || serve_on(listener, index));
    Ok(bound)
}

/// Accept loop; runs until the process exits.
pub fn serve_on(listener: TcpListener, index: Arc<TypeIndex>) {
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let index = Arc::clone(&index);
                std::thread::spawn(move || handle_connection(stream, &index));
            }
            Err(_) => continue,
        }
    }
}

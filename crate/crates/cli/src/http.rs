//! Completion backend for an HTTP endpoint speaking the common
//! `{"prompt", "temperature", "max_tokens"}` → `{"choices": [{"text"}]}` shape.

use std::time::Duration;

use anyhow::{bail, Context};
use langlab::icl::{CompletionBackend, CompletionRequest};
use langlab::{Error, Result};
use serde_json::{json, Value};

pub const URL_VAR: &str = "LANGLAB_COMPLETION_URL";
pub const KEY_VAR: &str = "LANGLAB_COMPLETION_KEY";
pub const MODEL_VAR: &str = "LANGLAB_COMPLETION_MODEL";

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
    model: Option<String>,
}

impl HttpBackend {
    pub fn from_env() -> anyhow::Result<Self> {
        let url = std::env::var(URL_VAR).with_context(|| format!("{URL_VAR} is not set"))?;
        Self::new(url, std::env::var(KEY_VAR).ok(), std::env::var(MODEL_VAR).ok())
    }

    pub fn new(url: String, key: Option<String>, model: Option<String>) -> anyhow::Result<Self> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            bail!("{URL_VAR} must be an http(s) URL, got {url:?}");
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Ok(HttpBackend {
            agent: config.into(),
            url,
            key,
            model,
        })
    }
}

/// Text of the first choice, or the `completion` field some servers use.
pub fn completion_text(body: &Value) -> Option<&str> {
    body.pointer("/choices/0/text")
        .or_else(|| body.get("completion"))
        .and_then(Value::as_str)
}

impl CompletionBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let mut body = json!({
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let reply: Value = req
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("{}: {e}", self.url)))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("{}: {e}", self.url)))?;
        completion_text(&reply)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend(format!("{}: response has no completion text", self.url)))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serves one request and returns its body.
    fn serve_once(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            format!("{auth}\n{}", String::from_utf8(body).unwrap())
        });
        (url, handle)
    }

    #[test]
    fn posts_prompt_at_zero_temperature() {
        let (url, server) = serve_once(r#"{"choices":[{"text":" tup-oo\n"}]}"#);
        let backend = HttpBackend::new(url, Some("k1".into()), Some("m".into())).unwrap();
        let text = backend
            .complete(&CompletionRequest {
                prompt: "shape 1, angle 360:",
                temperature: 0.0,
                max_tokens: 16,
            })
            .unwrap();
        assert_eq!(text, " tup-oo\n");
        let seen = server.join().unwrap();
        let (auth, body) = seen.split_once('\n').unwrap();
        assert_eq!(auth.split_once(": ").unwrap().1, "Bearer k1");
        let body: Value = serde_json::from_str(body).unwrap();
        assert_eq!(body["prompt"], "shape 1, angle 360:");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "m");
    }

    #[test]
    fn missing_text_is_a_backend_error() {
        let (url, server) = serve_once(r#"{"choices":[]}"#);
        let backend = HttpBackend::new(url, None, None).unwrap();
        let req = CompletionRequest {
            prompt: "x",
            temperature: 0.0,
            max_tokens: 16,
        };
        assert!(matches!(backend.complete(&req), Err(Error::Backend(_))));
        server.join().unwrap();
        assert!(HttpBackend::new("ftp://x".into(), None, None).is_err());
    }
}

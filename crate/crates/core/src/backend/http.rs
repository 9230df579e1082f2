//! OpenAI-compatible `/chat/completions` client.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, FinishReason, Part, Role};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`. `/chat/completions` is appended.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout: Duration::from_secs(600),
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Self {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn message_json(msg: &ChatMessage) -> Result<Value, BackendError> {
    if msg.role() != Role::User {
        return Ok(json!({ "role": msg.role().as_str(), "content": msg.text() }));
    }
    let mut content = Vec::with_capacity(msg.parts().len());
    for part in msg.parts() {
        match part {
            Part::Text(text) => content.push(json!({ "type": "text", "text": text })),
            Part::Image(img) => {
                let bytes = img
                    .read_bytes()
                    .map_err(|e| BackendError::Io(format!("{}: {e}", img.image_path.display())))?;
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                content.push(json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{};base64,{data}", img.mime_type()) }
                }));
            }
        }
    }
    Ok(json!({ "role": "user", "content": content }))
}

/// Request body in the OpenAI chat schema, with images inlined as base64 data URLs.
pub fn request_body(request: &ChatRequest) -> Result<Value, BackendError> {
    let messages = request.messages().iter().map(message_json).collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "model": request.model_id(),
        "messages": messages,
        "max_tokens": request.max_tokens(),
        "temperature": request.temperature(),
        "stream": false,
    }))
}

/// Parses a chat-completion response body.
pub fn parse_response(body: &str, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("invalid JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | Some("eos") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let completion_tokens = match finish_reason {
        FinishReason::Length => request.max_tokens(),
        _ => v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .map(|n| n.min(u32::MAX as u64) as u32)
            .unwrap_or(0),
    };
    Ok(ChatResponse { text, completion_tokens, finish_reason })
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = serde_json::to_string(&request_body(request)?)
            .map_err(|e| BackendError::Io(e.to_string()))?;
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        parse_response(&text, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::PageImage;

    #[test]
    fn body_inlines_images_as_data_urls() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("page_0001.png");
        std::fs::write(&path, b"\x89PNG").unwrap();
        let img = PageImage { index: 1, image_path: path, byte_len: 4 };
        let req = ChatRequest::new(
            "model-x",
            vec![
                ChatMessage::system("sys"),
                ChatMessage::user(vec![Part::Text("Page 1:".into()), Part::Image(img)]),
            ],
            64,
            0.0,
        )
        .unwrap();
        let body = request_body(&req).unwrap();
        assert_eq!(body["model"], "model-x");
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(body["messages"][1]["content"][0]["text"], "Page 1:");
        assert_eq!(body["messages"][1]["content"][1]["type"], "image_url");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
        assert_eq!(body["max_tokens"], 64);
    }

    #[test]
    fn parses_finish_reasons() {
        let req = ChatRequest::new("m", vec![ChatMessage::system("s")], 32, 0.0).unwrap();
        let ok = parse_response(
            r#"{"choices":[{"message":{"content":"hi"},"finish_reason":"stop"}],"usage":{"completion_tokens":3}}"#,
            &req,
        )
        .unwrap();
        assert_eq!(ok, ChatResponse { text: "hi".into(), completion_tokens: 3, finish_reason: FinishReason::Stop });
        let cut = parse_response(r#"{"choices":[{"message":{"content":"h"},"finish_reason":"length"}]}"#, &req)
            .unwrap();
        assert_eq!(cut.finish_reason, FinishReason::Length);
        assert_eq!(cut.completion_tokens, 32);
        assert!(matches!(parse_response("{}", &req), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_response("not json", &req), Err(BackendError::Malformed(_))));
    }
}

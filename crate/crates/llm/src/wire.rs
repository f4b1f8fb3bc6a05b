//! Conversation state and the chat-completions wire format.

use serde::{Deserialize, Serialize};
use serde_json::json;

pub const TOOL_NAME: &str = "execute_python_code";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// JSON-encoded arguments, verbatim from the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    /// Set on assistant messages that call the tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    /// Set on tool messages: the call being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn text(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn tool_result(call_id: &str, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_call: None,
            tool_call_id: Some(call_id.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript must open with a system message")]
    MissingSystem,
    #[error("message {index}: tool result does not answer the preceding tool call")]
    OrphanToolResult { index: usize },
}

impl ChatTranscript {
    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    /// First message is the system message, and every tool message answers
    /// the tool call right before it.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return Err(TranscriptError::MissingSystem),
        }
        for (index, pair) in self.messages.windows(2).enumerate() {
            if pair[1].role != Role::Tool {
                continue;
            }
            let answered = pair[0].tool_call.as_ref().map(|c| c.id.as_str());
            if answered.is_none() || answered != pair[1].tool_call_id.as_deref() {
                return Err(TranscriptError::OrphanToolResult { index: index + 1 });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunction {
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCall {
    pub id: String,
    #[serde(rename = "type", default = "function_kind")]
    pub kind: String,
    pub function: WireFunction,
}

fn function_kind() -> String {
    "function".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<WireToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl From<&Message> for WireMessage {
    fn from(m: &Message) -> Self {
        Self {
            role: m.role,
            content: Some(m.content.clone()),
            tool_calls: m.tool_call.as_ref().map(|c| {
                vec![WireToolCall {
                    id: c.id.clone(),
                    kind: function_kind(),
                    function: WireFunction {
                        name: c.name.clone(),
                        arguments: c.arguments.clone(),
                    },
                }]
            }),
            tool_call_id: m.tool_call_id.clone(),
        }
    }
}

impl WireMessage {
    /// Back to a transcript message, keeping only the first tool call.
    pub fn to_message(&self) -> Message {
        Message {
            role: self.role,
            content: self.content.clone().unwrap_or_default(),
            tool_call: self
                .tool_calls
                .as_ref()
                .and_then(|calls| calls.first())
                .map(|c| ToolCall {
                    id: c.id.clone(),
                    name: c.function.name.clone(),
                    arguments: c.function.arguments.clone(),
                }),
            tool_call_id: self.tool_call_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub tools: Vec<serde_json::Value>,
}

/// The single tool offered to the model.
pub fn tool_schema() -> serde_json::Value {
    json!({
        "type": "function",
        "function": {
            "name": TOOL_NAME,
            "description": "Execute Python code in the environment.",
            "parameters": {
                "type": "object",
                "properties": {"code": {"type": "string", "description": "The code to run."}},
                "required": ["code"]
            }
        }
    })
}

impl ChatRequest {
    pub fn new(model: &str, transcript: &ChatTranscript) -> Self {
        Self {
            model: model.to_string(),
            messages: transcript.messages.iter().map(WireMessage::from).collect(),
            tools: vec![tool_schema()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub index: usize,
    pub message: WireMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

impl ChatResponse {
    /// A reply that calls the tool with `code`.
    pub fn tool_call(id: &str, code: &str) -> Self {
        Self::from_message(WireMessage {
            role: Role::Assistant,
            content: None,
            tool_calls: Some(vec![WireToolCall {
                id: id.to_string(),
                kind: function_kind(),
                function: WireFunction {
                    name: TOOL_NAME.into(),
                    arguments: json!({ "code": code }).to_string(),
                },
            }]),
            tool_call_id: None,
        })
    }

    /// A plain-text reply without a tool call.
    pub fn text(content: &str) -> Self {
        Self::from_message(WireMessage {
            role: Role::Assistant,
            content: Some(content.to_string()),
            tool_calls: None,
            tool_call_id: None,
        })
    }

    fn from_message(message: WireMessage) -> Self {
        let finish_reason = if message.tool_calls.is_some() { "tool_calls" } else { "stop" };
        Self {
            choices: vec![Choice {
                index: 0,
                message,
                finish_reason: Some(finish_reason.into()),
            }],
        }
    }

    pub fn first_message(&self) -> Option<&WireMessage> {
        self.choices.first().map(|c| &c.message)
    }
}

//! Chat-model bridge for temporal alignment experiments.
//!
//! A model sees the command it just issued and a digest of earlier episodes,
//! and acts by calling a single `execute_python_code` tool. Tool-call code is
//! matched against a tiny grammar (`check()` or `time.sleep(n)`), never run.
//! A loopback fixture server replays recorded or scripted exchanges so whole
//! experiments can be re-run without a live model.

pub mod endpoint;
pub mod episode;
pub mod fixture;
pub mod grammar;
pub mod prompt;
pub mod wire;

pub use endpoint::{ChatEndpoint, EndpointConfig, EndpointError, HttpEndpoint, RecordingEndpoint};
pub use episode::{drive_episode, run_llm_episode, BridgeError, LlmDriver, LlmEpisode};
pub use fixture::{load_fixture, wait_then_check, write_fixture, Exchange, FixtureError, FixtureServer, FixtureWriter};
pub use grammar::{format_move, parse_action, ParsedAction};
pub use prompt::render_prompt;
pub use wire::{ChatRequest, ChatResponse, ChatTranscript};

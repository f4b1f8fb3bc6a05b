//! One episode played by a chat model through the tool protocol.

use std::sync::Arc;

use tempalign_core::env::EnvError;
use tempalign_core::runner::{EpisodeDriver, EpisodeOutcome, EpisodeRequest, RunError};
use tempalign_core::{ClockConfig, EpisodeState, HistorySummary, Observation};

use crate::endpoint::{ChatEndpoint, EndpointConfig, EndpointError};
use crate::grammar::parse_action_capped;
use crate::prompt::render_prompt;
use crate::wire::{ChatRequest, ChatTranscript, Message, Role, TOOL_NAME};

pub const SLEEP_RESULT: &str = "Execution successful. Time has passed.";
pub const PENDING_RESULT: &str = "Status: PENDING...";
pub const DONE_RESULT: &str = "Status: DONE...";

pub fn tool_result_text(observation: Observation) -> &'static str {
    match observation {
        Observation::Slept => SLEEP_RESULT,
        Observation::Pending => PENDING_RESULT,
        Observation::Done => DONE_RESULT,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("endpoint response has no choices")]
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmEpisode {
    pub outcome: EpisodeOutcome,
    pub transcript: ChatTranscript,
    pub invalid_actions: u32,
}

/// Clock settings with the endpoint's move limit applied.
pub fn effective_clock(clock: &ClockConfig, cfg: &EndpointConfig) -> ClockConfig {
    let mut clock = clock.clone();
    if let Some(n) = cfg.max_moves {
        clock.move_budget = n;
    }
    clock
}

fn code_argument(arguments: &str) -> Result<String, String> {
    let value: serde_json::Value =
        serde_json::from_str(arguments).map_err(|_| "tool arguments are not a JSON object".to_string())?;
    value
        .get("code")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| "tool arguments lack a string `code` parameter".to_string())
}

/// Plays `state` to the end against `endpoint`.
pub fn drive_episode(
    endpoint: &dyn ChatEndpoint,
    cfg: &EndpointConfig,
    state: &mut EpisodeState,
    history: &[HistorySummary],
) -> Result<LlmEpisode, BridgeError> {
    let mut transcript = render_prompt(&state.action().command, history);
    let mut invalid_actions = 0;
    let mut consecutive_invalid = 0;
    loop {
        let response = endpoint.complete(&ChatRequest::new(&cfg.model, &transcript))?;
        let reply = response.first_message().ok_or(BridgeError::EmptyResponse)?.to_message();
        let call = reply.tool_call.clone();
        transcript.push(Message { role: Role::Assistant, ..reply });

        let parsed = match &call {
            None => Err("missing execute_python_code tool call".to_string()),
            Some(c) if c.name != TOOL_NAME => Err(format!("unknown tool `{}`", c.name)),
            Some(c) => code_argument(&c.arguments).and_then(|code| parse_action_capped(&code, cfg.sleep_cap_s).into_move()),
        };
        let mv = match parsed {
            Ok(mv) => mv,
            Err(reason) => {
                invalid_actions += 1;
                consecutive_invalid += 1;
                let text = format!("Invalid action: {reason}");
                log::debug!("episode {}: {text}", state.k());
                match &call {
                    Some(c) => transcript.push(Message::tool_result(&c.id, text)),
                    None => transcript.push(Message::text(Role::User, text)),
                }
                if consecutive_invalid > cfg.max_invalid_actions {
                    state.abort();
                    let aborted = state.aborted().expect("aborted state");
                    return Ok(LlmEpisode {
                        outcome: EpisodeOutcome::Aborted(aborted),
                        transcript,
                        invalid_actions,
                    });
                }
                continue;
            }
        };
        consecutive_invalid = 0;
        let call_id = call.expect("valid actions come from a tool call").id;
        match state.step(mv) {
            Ok(observation) => {
                transcript.push(Message::tool_result(&call_id, tool_result_text(observation)));
                if observation == Observation::Done {
                    return Ok(LlmEpisode {
                        outcome: EpisodeOutcome::Completed(state.finish()?),
                        transcript,
                        invalid_actions,
                    });
                }
            }
            Err(EnvError::BudgetExceeded { .. }) => {
                return Ok(LlmEpisode {
                    outcome: EpisodeOutcome::Aborted(state.aborted().expect("aborted state")),
                    transcript,
                    invalid_actions,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Starts the environment for `req` and plays it through `endpoint`.
pub fn run_llm_episode(
    endpoint: &dyn ChatEndpoint,
    cfg: &EndpointConfig,
    req: EpisodeRequest<'_>,
) -> Result<LlmEpisode, BridgeError> {
    let clock = effective_clock(req.clock, cfg);
    let mut state = EpisodeState::start(req.k, req.action, req.seed, &clock)?;
    drive_episode(endpoint, cfg, &mut state, req.history)
}

/// Runs experiment episodes through a chat endpoint.
pub struct LlmDriver {
    endpoint: Arc<dyn ChatEndpoint>,
    cfg: EndpointConfig,
}

impl LlmDriver {
    pub fn new(endpoint: Arc<dyn ChatEndpoint>, cfg: EndpointConfig) -> Self {
        Self { endpoint, cfg }
    }
}

impl EpisodeDriver for LlmDriver {
    fn run_episode(&self, req: EpisodeRequest<'_>) -> Result<EpisodeOutcome, RunError> {
        match run_llm_episode(self.endpoint.as_ref(), &self.cfg, req) {
            Ok(episode) => Ok(episode.outcome),
            Err(BridgeError::Env(e)) => Err(RunError::Env(e)),
            Err(e) => Err(RunError::Driver(e.to_string())),
        }
    }
}

//! The agent prompt: one fixed system message and a user message built from
//! a template with the command and the history digest substituted in.

use tempalign_core::HistorySummary;

use crate::wire::{ChatTranscript, Message, Role};

pub const SYSTEM_PROMPT: &str =
    "You are a helpful AI agent. To solve the task, you must use the execute_python_code tool. Do not write code in your response directly.";

pub const USER_TEMPLATE: &str = include_str!("user_prompt.txt");

pub const NO_HISTORY: &str = "(no prior episodes)";

/// Seconds without trailing zeros, rounded to the millisecond.
pub fn format_seconds(t: f64) -> String {
    let s = format!("{t:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

pub fn history_line(h: &HistorySummary) -> String {
    format!(
        "Episode {}: Command = '{}', Your Executed Sleep Time = {}s, Check Count = {}",
        h.episode,
        h.command,
        format_seconds(h.executed_sleep_s),
        h.check_count
    )
}

pub fn render_history(history: &[HistorySummary], empty_marker: &str) -> String {
    if history.is_empty() {
        return empty_marker.to_string();
    }
    history.iter().map(history_line).collect::<Vec<_>>().join("\n")
}

pub fn render_user_prompt(command: &str, history: &[HistorySummary], empty_marker: &str) -> String {
    USER_TEMPLATE
        .replace("{kubectl command}", command)
        .replace("{history}", &render_history(history, empty_marker))
}

/// Opening transcript for one episode.
pub fn render_prompt(command: &str, history: &[HistorySummary]) -> ChatTranscript {
    render_prompt_with_marker(command, history, NO_HISTORY)
}

pub fn render_prompt_with_marker(command: &str, history: &[HistorySummary], empty_marker: &str) -> ChatTranscript {
    ChatTranscript {
        messages: vec![
            Message::text(Role::System, SYSTEM_PROMPT),
            Message::text(Role::User, render_user_prompt(command, history, empty_marker)),
        ],
    }
}

//! The restricted action grammar for tool-call code.
//!
//! Accepted, after whitespace normalization:
//!
//! ```text
//! check()
//! time.sleep(<number>)
//! import time; time.sleep(<number>)     (or the same on two lines)
//! ```
//!
//! `<number>` is an unsigned integer or decimal. The input is only ever
//! pattern-matched, never evaluated.

use tempalign_core::Move;

pub const DEFAULT_SLEEP_CAP_S: f64 = 600.0;

/// Longest code string considered at all.
const MAX_CODE_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedAction {
    Check,
    Sleep(f64),
    Invalid(String),
}

impl ParsedAction {
    pub fn into_move(self) -> Result<Move, String> {
        match self {
            ParsedAction::Check => Ok(Move::Check),
            ParsedAction::Sleep(s) => Ok(Move::sleep(s)),
            ParsedAction::Invalid(reason) => Err(reason),
        }
    }
}

const UNRECOGNIZED: &str = "unrecognized action";

pub fn parse_action(code: &str) -> ParsedAction {
    parse_action_capped(code, DEFAULT_SLEEP_CAP_S)
}

pub fn parse_action_capped(code: &str, cap_s: f64) -> ParsedAction {
    if code.len() > MAX_CODE_LEN {
        return ParsedAction::Invalid("action too long".into());
    }
    let statements: Vec<&str> = code
        .split([';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    match statements.as_slice() {
        [single] => parse_statement(single, cap_s),
        [import, sleep] if is_import_time(import) => match parse_statement(sleep, cap_s) {
            ParsedAction::Check => ParsedAction::Invalid(UNRECOGNIZED.into()),
            other => other,
        },
        _ => ParsedAction::Invalid(UNRECOGNIZED.into()),
    }
}

fn is_import_time(stmt: &str) -> bool {
    let words: Vec<&str> = stmt.split_whitespace().collect();
    words == ["import", "time"]
}

/// `name(` ... `)` with optional whitespace around the parentheses.
fn call_argument<'a>(stmt: &'a str, name: &str) -> Option<&'a str> {
    let rest = stmt.strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.trim())
}

fn parse_statement(stmt: &str, cap_s: f64) -> ParsedAction {
    if call_argument(stmt, "check") == Some("") {
        return ParsedAction::Check;
    }
    match call_argument(stmt, "time.sleep") {
        Some(arg) => parse_duration(arg, cap_s),
        None => ParsedAction::Invalid(UNRECOGNIZED.into()),
    }
}

fn is_number(text: &str) -> bool {
    let (int, frac) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => digits(int) && digits(f) && !(int.is_empty() && f.is_empty()),
    }
}

fn parse_duration(arg: &str, cap_s: f64) -> ParsedAction {
    if !is_number(arg) {
        return ParsedAction::Invalid(format!("sleep argument `{arg}` is not a number"));
    }
    let value: f64 = match arg.parse() {
        Ok(v) => v,
        Err(_) => return ParsedAction::Invalid(format!("sleep argument `{arg}` is not a number")),
    };
    if !value.is_finite() || value > cap_s {
        return ParsedAction::Invalid(format!("sleep duration exceeds the {cap_s}s cap"));
    }
    if value <= 0.0 {
        return ParsedAction::Invalid("sleep duration must be positive".into());
    }
    ParsedAction::Sleep(value)
}

/// Canonical code for a move. `f64`'s `Display` is exact and never uses an
/// exponent, so the parse of the output is the same move.
pub fn format_move(mv: &Move) -> String {
    match mv {
        Move::Check => "check()".into(),
        Move::Sleep { duration_s } => format!("import time; time.sleep({duration_s})"),
    }
}

//! Append-only JSON-lines session log.
//!
//! The first line creates the session and records the shuffled item list
//! with its ground truth; every further line is one accepted response, in
//! cursor order. Reports are recomputed from this log alone.
//!
//! A final line without its terminating newline is the remnant of an
//! interrupted write and is ignored on replay (and cut off before the log is
//! appended to again). Any other malformed line is an error.

use agf_core::dataset::LesionClass;
use serde::{Deserialize, Serialize};

use crate::error::{RaterError, Result};

/// Ground truth of one item; never sent to raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub item_id: String,
    pub class: LesionClass,
    pub real: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub rater_id: String,
    pub seed: u64,
    /// Whether the real/fake question is asked (false when no synthetic
    /// item is in the session).
    pub ask_real: bool,
    pub created_ms: u64,
    pub items: Vec<ItemTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub position: usize,
    pub item_id: String,
    pub token: String,
    pub class: LesionClass,
    pub is_real: Option<bool>,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Created(Created),
    Response(Response),
}

impl LogEvent {
    /// One log line including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log events serialize");
        s.push('\n');
        s
    }
}

/// Bytes of `buf` up to and including the last newline.
pub fn complete_prefix(buf: &[u8]) -> &[u8] {
    match buf.iter().rposition(|&b| b == b'\n') {
        Some(i) => &buf[..=i],
        None => &[],
    }
}

/// Parses a log into its creation record and responses, checking that
/// responses follow the cursor and carry the right tokens.
pub fn replay(buf: &[u8]) -> Result<(Created, Vec<Response>)> {
    let text = std::str::from_utf8(complete_prefix(buf))
        .map_err(|e| RaterError::CorruptLog { line: 0, detail: format!("not UTF-8: {e}") })?;
    let mut lines = text.lines().enumerate();
    let corrupt = |line: usize, detail: String| RaterError::CorruptLog { line: line + 1, detail };
    let created = match lines.next() {
        Some((i, l)) => match serde_json::from_str::<LogEvent>(l) {
            Ok(LogEvent::Created(c)) => c,
            Ok(_) => return Err(corrupt(i, "first event must create the session".into())),
            Err(e) => return Err(corrupt(i, e.to_string())),
        },
        None => return Err(corrupt(0, "empty log".into())),
    };
    crate::session::check_created(&created).map_err(|e| corrupt(0, e.to_string()))?;
    let mut responses: Vec<Response> = Vec::new();
    for (i, l) in lines {
        let r = match serde_json::from_str::<LogEvent>(l) {
            Ok(LogEvent::Response(r)) => r,
            Ok(_) => return Err(corrupt(i, "duplicate creation event".into())),
            Err(e) => return Err(corrupt(i, e.to_string())),
        };
        let pos = responses.len();
        let Some(item) = created.items.get(pos) else {
            return Err(corrupt(i, "more responses than items".into()));
        };
        if r.position != pos || r.item_id != item.item_id {
            return Err(corrupt(i, format!("response for position {} / {} but the cursor is at {pos} / {}", r.position, r.item_id, item.item_id)));
        }
        if r.token != crate::session::token_for(&created, pos) {
            return Err(corrupt(i, "token does not match the item".into()));
        }
        if r.is_real.is_some() != created.ask_real {
            return Err(corrupt(i, "real/fake answer present iff the question is asked".into()));
        }
        responses.push(r);
    }
    Ok((created, responses))
}

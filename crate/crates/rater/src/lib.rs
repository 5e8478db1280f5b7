//! Blinded rating study backend.
//!
//! Raters are shown real and synthetic lesion ROIs in a seeded random order
//! and answer two questions per item: the lesion class, and (when synthetic
//! items are present) whether the ROI is real. Every accepted answer is
//! appended to the session's JSON-lines log, from which reports and the
//! inter-rater agreement are recomputed.

pub mod api;
pub mod error;
pub mod log;
pub mod report;
pub mod session;
pub mod store;

pub use api::{router, serve};
pub use error::{RaterError, Result};
pub use log::{replay, Created, ItemTruth, LogEvent, Response};
pub use report::{agreement, session_report, AgreementReport, Classification, ClassScore, RaterReport, Score};
pub use session::{draw_items, token_for, ItemPool, ServedItem, Session, SessionSpec};
pub use store::{SessionStatus, Store};

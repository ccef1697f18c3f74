//! Node memory, cached mails, COMB and the serializing memory daemon.

pub mod buffers;
pub mod daemon;
pub mod mail;
pub mod oplog;
pub mod state;

pub use buffers::{BufferShape, SharedBufferSet};
pub use daemon::{daemon_run, DaemonPlan, DaemonReport, MemorySnapshot, WriteBracket};
pub use mail::{comb, generate_mails, staleness_report, BatchMails, MailCandidate, StalenessMetrics};
pub use oplog::{bracket_pattern, load_oplog, parse_oplog, validate_oplog, write_oplog, OpKind, OpRecord, Violation};
pub use state::{MemoryRows, NodeMemoryState, NO_MAIL};

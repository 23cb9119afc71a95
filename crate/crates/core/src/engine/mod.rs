//! The round-based session state machine shared by the live server and the
//! simulator. It never reads a clock: every operation takes `now` in
//! milliseconds, and every state change is reported as an [`Event`].

mod config;
mod event;
mod session;

pub use config::{Mode, Quorum, SessionConfig, TieBreak};
pub use event::{EndReason, Event, SessionSummary, Stamped, TileCounts, UnsolvedPuzzle};
pub(crate) use event::tile_counts;
pub use session::{resolve_round, tally, Outcome, Phase, PlayerId, PuzzleRun, Session, Status, VoteRound};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("bad session config: {0}")]
    BadConfig(String),
    #[error("tile {0} cannot move on the current board")]
    IllegalMove(u8),
    #[error("player {0:?} is not a participant")]
    NotParticipant(String),
    #[error("the round is closed")]
    RoundClosed,
    #[error("the session has ended")]
    SessionEnded,
    #[error("player {0:?} is already in the session")]
    DuplicatePlayer(String),
    #[error("operation not available in solo mode")]
    WrongMode,
}

impl EngineError {
    /// Short machine-readable code, as used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::BadConfig(_) => "bad_config",
            EngineError::IllegalMove(_) => "illegal_move",
            EngineError::NotParticipant(_) => "not_participant",
            EngineError::RoundClosed => "round_closed",
            EngineError::SessionEnded => "session_ended",
            EngineError::DuplicatePlayer(_) => "duplicate_player",
            EngineError::WrongMode => "wrong_mode",
        }
    }
}

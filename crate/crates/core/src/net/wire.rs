//! Wire messages: one JSON object per line or per WebSocket text frame.

use serde::{Deserialize, Serialize};

use crate::board::Board;
use crate::engine::{Event, Mode, SessionConfig, SessionSummary, Stamped, TileCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Join {
        #[serde(default)]
        mode: Option<Mode>,
        /// A session id, or "new" (the default) for a fresh one.
        #[serde(default)]
        session: Option<String>,
        #[serde(default)]
        name: Option<String>,
        /// Player id to reclaim after a disconnect, within the grace period.
        #[serde(default)]
        player: Option<String>,
    },
    Vote {
        #[serde(default)]
        round: Option<u64>,
        tile: u8,
    },
    Move {
        tile: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Joined {
        player: String,
        session: String,
        config: SessionConfig,
    },
    State {
        puzzle: u64,
        board: Board,
        difficulty: u32,
        move_count: u32,
        round: u64,
        deadline_ms: u64,
    },
    Votes {
        round: u64,
        #[serde(with = "crate::engine::tile_counts")]
        counts: TileCounts,
    },
    /// `tile` is null for a pass. `deadline_ms` is the deadline of the next
    /// round (`round + 1`) when the puzzle continues.
    Moved {
        round: u64,
        tile: Option<u8>,
        board: Board,
        move_count: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline_ms: Option<u64>,
    },
    Solved {
        puzzle: u64,
        moves: u32,
        optimal: u32,
        elapsed_s: f64,
    },
    SessionEnd {
        summary: SessionSummary,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.into(), detail: detail.into() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Translates engine output into the messages every session client receives.
/// A round opened right after a puzzle is issued becomes a `state` message;
/// one opened after a move or pass is folded into that `moved` message.
pub fn translate(events: &[Stamped], feedback: bool) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    let mut issued: Option<(u64, Board, u32)> = None;
    for s in events {
        match &s.event {
            Event::PuzzleIssued { puzzle, difficulty, board } => issued = Some((*puzzle, *board, *difficulty)),
            Event::RoundOpened { round, deadline_ms, .. } => {
                if let Some((puzzle, board, difficulty)) = issued.take() {
                    out.push(ServerMessage::State {
                        puzzle,
                        board,
                        difficulty,
                        move_count: 0,
                        round: *round,
                        deadline_ms: *deadline_ms,
                    });
                } else if let Some(ServerMessage::Moved { deadline_ms: d, .. }) = out.last_mut() {
                    *d = Some(*deadline_ms);
                }
            }
            Event::VoteTally { round, counts } if feedback => {
                out.push(ServerMessage::Votes { round: *round, counts: counts.clone() })
            }
            Event::MoveExecuted { round, tile, board, move_count } => out.push(ServerMessage::Moved {
                round: *round,
                tile: Some(tile.get()),
                board: *board,
                move_count: *move_count,
                deadline_ms: None,
            }),
            Event::Pass { round, board, move_count } => out.push(ServerMessage::Moved {
                round: *round,
                tile: None,
                board: *board,
                move_count: *move_count,
                deadline_ms: None,
            }),
            Event::PuzzleSolved { puzzle, moves, optimal, elapsed_s, .. } => out.push(ServerMessage::Solved {
                puzzle: *puzzle,
                moves: *moves,
                optimal: *optimal,
                elapsed_s: *elapsed_s,
            }),
            Event::SessionEnded { summary } => out.push(ServerMessage::SessionEnd { summary: summary.clone() }),
            _ => {}
        }
    }
    out
}

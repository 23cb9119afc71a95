use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::board::{Board, Tile};

/// Votes per tile in the open round. Serialized with string keys (`{"4":2}`).
pub type TileCounts = BTreeMap<Tile, u32>;

/// Something the engine did. Every state change is visible as an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    PlayerJoined {
        player: String,
    },
    PlayerLeft {
        player: String,
    },
    PuzzleIssued {
        puzzle: u64,
        difficulty: u32,
        board: Board,
    },
    RoundOpened {
        round: u64,
        puzzle: u64,
        deadline_ms: u64,
    },
    VoteCast {
        round: u64,
        player: String,
        tile: Tile,
    },
    VoteTally {
        round: u64,
        #[serde(with = "tile_counts")]
        counts: TileCounts,
    },
    MoveExecuted {
        round: u64,
        tile: Tile,
        board: Board,
        move_count: u32,
    },
    Pass {
        round: u64,
        board: Board,
        move_count: u32,
    },
    PuzzleSolved {
        puzzle: u64,
        difficulty: u32,
        moves: u32,
        optimal: u32,
        elapsed_s: f64,
    },
    #[serde(rename = "session_end")]
    SessionEnded {
        summary: SessionSummary,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::PlayerJoined { .. } => "player_joined",
            Event::PlayerLeft { .. } => "player_left",
            Event::PuzzleIssued { .. } => "puzzle_issued",
            Event::RoundOpened { .. } => "round_opened",
            Event::VoteCast { .. } => "vote_cast",
            Event::VoteTally { .. } => "vote_tally",
            Event::MoveExecuted { .. } => "move_executed",
            Event::Pass { .. } => "pass",
            Event::PuzzleSolved { .. } => "puzzle_solved",
            Event::SessionEnded { .. } => "session_end",
        }
    }
}

/// An event with the engine timestamp at which it took effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped {
    pub ts_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    TimeUp,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsolvedPuzzle {
    pub puzzle: u64,
    pub difficulty: u32,
    pub move_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub reason: EndReason,
    pub puzzles_solved: u32,
    pub total_moves: u64,
    /// Difficulty of the last puzzle issued.
    pub last_difficulty: u32,
    pub unsolved: Option<UnsolvedPuzzle>,
}

/// Map keys travel as JSON strings; serde's flattening buffers them as
/// strings, so the tile is parsed back explicitly.
pub(crate) mod tile_counts {
    use super::*;
    use serde::de::Error;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(counts: &TileCounts, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<String, u32> = counts.iter().map(|(t, n)| (t.to_string(), *n)).collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TileCounts, D::Error> {
        let m = BTreeMap::<String, u32>::deserialize(d)?;
        m.into_iter()
            .map(|(k, n)| {
                let t: u8 = k.parse().map_err(D::Error::custom)?;
                Ok((Tile::new(t).map_err(D::Error::custom)?, n))
            })
            .collect()
    }
}

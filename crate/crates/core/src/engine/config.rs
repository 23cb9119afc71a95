use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solo,
    Group,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solo => "solo",
            Mode::Group => "group",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solo" => Ok(Mode::Solo),
            "group" => Ok(Mode::Group),
            _ => Err(format!("unknown mode {s:?} (expected solo or group)")),
        }
    }
}

/// When a group round may close before its deadline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quorum {
    /// Every participant has voted.
    All,
    /// Strictly more than half of the participants have voted.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    #[serde(rename = "lowest")]
    LowestTile,
    #[serde(rename = "random")]
    SeededRandom,
}

/// Session parameters. Durations are in seconds (fractions allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: Mode,
    pub round_seconds: f64,
    pub session_minutes: f64,
    pub inter_puzzle_delay: f64,
    pub start_difficulty: u32,
    pub difficulty_step: u32,
    pub feedback_enabled: bool,
    pub quorum: Quorum,
    pub tie_break: TieBreak,
    pub rng_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Group,
            round_seconds: 30.0,
            session_minutes: 30.0,
            inter_puzzle_delay: 5.0,
            start_difficulty: 1,
            difficulty_step: 1,
            feedback_enabled: true,
            quorum: Quorum::All,
            tie_break: TieBreak::LowestTile,
            rng_seed: 0,
        }
    }
}

fn to_ms(seconds: f64) -> u64 {
    (seconds * 1000.0).round() as u64
}

impl SessionConfig {
    pub fn with_mode(&self, mode: Mode) -> Self {
        SessionConfig { mode, ..self.clone() }
    }

    pub fn round_ms(&self) -> u64 {
        to_ms(self.round_seconds)
    }

    pub fn session_ms(&self) -> u64 {
        to_ms(self.session_minutes * 60.0)
    }

    pub fn delay_ms(&self) -> u64 {
        to_ms(self.inter_puzzle_delay)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::BadConfig(msg.to_string()));
        if !(self.round_seconds.is_finite() && self.round_ms() > 0) {
            return bad("round_seconds must be positive");
        }
        if !(self.session_minutes.is_finite() && self.session_ms() > 0) {
            return bad("session_minutes must be positive");
        }
        if !(self.inter_puzzle_delay.is_finite() && self.delay_ms() > 0) {
            return bad("inter_puzzle_delay must be positive");
        }
        if self.start_difficulty == 0 {
            return bad("start_difficulty must be at least 1");
        }
        if self.difficulty_step == 0 {
            return bad("difficulty_step must be positive");
        }
        Ok(())
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, Quorum, SessionConfig, TieBreak};
use super::event::{EndReason, Event, SessionSummary, Stamped, TileCounts, UnsolvedPuzzle};
use super::EngineError;
use crate::board::{Board, Tile};
use crate::oracle::DistanceTable;
use crate::seed::{self, streams};

pub type PlayerId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Move(Tile),
    Pass,
}

/// Plurality winner of a round. No votes is a pass.
pub fn resolve_round(votes: &BTreeMap<PlayerId, Tile>, tie_break: TieBreak, rng: &mut ChaCha8Rng) -> Outcome {
    let counts = tally(votes);
    let Some(&top) = counts.values().max() else {
        return Outcome::Pass;
    };
    let tied: Vec<Tile> = counts.iter().filter(|(_, &n)| n == top).map(|(&t, _)| t).collect();
    let winner = match tie_break {
        TieBreak::LowestTile => tied[0],
        TieBreak::SeededRandom => *tied.choose(rng).expect("nonempty"),
    };
    Outcome::Move(winner)
}

pub fn tally(votes: &BTreeMap<PlayerId, Tile>) -> TileCounts {
    let mut counts = TileCounts::new();
    for &t in votes.values() {
        *counts.entry(t).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Ended,
}

#[derive(Debug, Clone)]
pub struct VoteRound {
    pub id: u64,
    pub votes: BTreeMap<PlayerId, Tile>,
    pub opened_at: u64,
    pub deadline: u64,
}

#[derive(Debug, Clone)]
pub struct PuzzleRun {
    pub id: u64,
    pub initial_board: Board,
    pub current_board: Board,
    pub difficulty: u32,
    pub move_count: u32,
    pub appeared_at: u64,
    pub round: VoteRound,
}

#[derive(Debug, Clone)]
pub enum Phase {
    Playing(PuzzleRun),
    Idle { resume_at: u64 },
    Over,
}

/// One solo or group session.
///
/// Time enters only through the `now` arguments (milliseconds). Transitions
/// that fall due between calls are applied at their scheduled instant, so the
/// emitted events do not depend on how often [`Session::tick`] is called.
/// Callers must tick to `now` before submitting votes or membership changes.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    table: Arc<DistanceTable>,
    participants: BTreeSet<PlayerId>,
    pending: BTreeSet<PlayerId>,
    phase: Phase,
    started_at: u64,
    deadline: u64,
    next_puzzle_id: u64,
    next_round_id: u64,
    next_difficulty: u32,
    last_difficulty: u32,
    solved: u32,
    total_moves: u64,
}

impl Session {
    pub fn start(
        id: impl Into<String>,
        config: SessionConfig,
        players: impl IntoIterator<Item = PlayerId>,
        now: u64,
        table: Arc<DistanceTable>,
    ) -> Result<(Session, Vec<Stamped>), EngineError> {
        config.validate()?;
        let participants: BTreeSet<PlayerId> = players.into_iter().collect();
        if participants.is_empty() {
            return Err(EngineError::BadConfig("at least one player is required".into()));
        }
        if config.mode == Mode::Solo && participants.len() != 1 {
            return Err(EngineError::BadConfig(format!(
                "solo sessions take exactly one player, got {}",
                participants.len()
            )));
        }
        if config.start_difficulty > table.max_distance() {
            return Err(EngineError::BadConfig(format!(
                "start_difficulty {} exceeds the maximum distance {}",
                config.start_difficulty,
                table.max_distance()
            )));
        }
        let mut session = Session {
            id: id.into(),
            deadline: now + config.session_ms(),
            next_difficulty: config.start_difficulty,
            config,
            table,
            participants,
            pending: BTreeSet::new(),
            phase: Phase::Over,
            started_at: now,
            next_puzzle_id: 1,
            next_round_id: 1,
            last_difficulty: 0,
            solved: 0,
            total_moves: 0,
        };
        let mut out: Vec<Stamped> = session
            .participants
            .iter()
            .map(|p| Stamped { ts_ms: now, event: Event::PlayerJoined { player: p.clone() } })
            .collect();
        session.issue_puzzle(now, &mut out);
        Ok((session, out))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> Status {
        match self.phase {
            Phase::Over => Status::Ended,
            _ => Status::Running,
        }
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn puzzle(&self) -> Option<&PuzzleRun> {
        match &self.phase {
            Phase::Playing(run) => Some(run),
            _ => None,
        }
    }

    pub fn participants(&self) -> &BTreeSet<PlayerId> {
        &self.participants
    }

    pub fn pending(&self) -> &BTreeSet<PlayerId> {
        &self.pending
    }

    pub fn is_member(&self, player: &str) -> bool {
        self.participants.contains(player) || self.pending.contains(player)
    }

    pub fn started_at(&self) -> u64 {
        self.started_at
    }

    pub fn session_deadline(&self) -> u64 {
        self.deadline
    }

    /// The next instant at which [`Session::tick`] would change state.
    pub fn next_due(&self) -> Option<u64> {
        match &self.phase {
            Phase::Over => None,
            Phase::Playing(run) => Some(run.round.deadline.min(self.deadline)),
            Phase::Idle { resume_at } => Some((*resume_at).min(self.deadline)),
        }
    }

    /// Applies every time-based transition due at or before `now`.
    pub fn tick(&mut self, now: u64) -> Vec<Stamped> {
        let mut out = Vec::new();
        while let Some(due) = self.next_due() {
            if due > now {
                break;
            }
            if due >= self.deadline {
                self.end(self.deadline, EndReason::TimeUp, &mut out);
                break;
            }
            match &self.phase {
                Phase::Playing(run) => {
                    let outcome = self.resolve(&run.round);
                    self.close_round(due, outcome, &mut out);
                }
                Phase::Idle { .. } => self.issue_puzzle(due, &mut out),
                Phase::Over => unreachable!(),
            }
        }
        out
    }

    /// Records `player`'s vote for `tile`, replacing any earlier vote in the round.
    /// `round` pins the vote to a specific round; `None` means the open one.
    pub fn submit_vote(
        &mut self,
        player: &str,
        round: Option<u64>,
        tile: u8,
        now: u64,
    ) -> Result<Vec<Stamped>, EngineError> {
        if self.status() == Status::Ended {
            return Err(EngineError::SessionEnded);
        }
        if !self.participants.contains(player) {
            return Err(EngineError::NotParticipant(player.to_string()));
        }
        let Phase::Playing(run) = &mut self.phase else {
            return Err(EngineError::RoundClosed);
        };
        if now >= run.round.deadline || now >= self.deadline || round.is_some_and(|r| r != run.round.id) {
            return Err(EngineError::RoundClosed);
        }
        let tile = Tile::new(tile).map_err(|_| EngineError::IllegalMove(tile))?;
        if !run.current_board.is_legal(tile) {
            return Err(EngineError::IllegalMove(tile.get()));
        }
        let round_id = run.round.id;
        run.round.votes.insert(player.to_string(), tile);
        let mut out = vec![Stamped {
            ts_ms: now,
            event: Event::VoteCast { round: round_id, player: player.to_string(), tile },
        }];
        match self.config.mode {
            Mode::Solo => self.close_round(now, Outcome::Move(tile), &mut out),
            Mode::Group => {
                self.emit_tally(now, &mut out);
                self.close_if_quorum(now, &mut out);
            }
        }
        Ok(out)
    }

    /// Adds a group member. Players who join mid-puzzle vote from the next round on.
    pub fn add_player(&mut self, player: &str, now: u64) -> Result<Vec<Stamped>, EngineError> {
        if self.status() == Status::Ended {
            return Err(EngineError::SessionEnded);
        }
        if self.config.mode == Mode::Solo {
            return Err(EngineError::WrongMode);
        }
        if self.is_member(player) {
            return Err(EngineError::DuplicatePlayer(player.to_string()));
        }
        let out = vec![Stamped { ts_ms: now, event: Event::PlayerJoined { player: player.to_string() } }];
        match self.phase {
            Phase::Playing(_) => {
                self.pending.insert(player.to_string());
            }
            _ => {
                self.participants.insert(player.to_string());
            }
        }
        Ok(out)
    }

    /// Removes a player, discarding any vote in flight. Quorum is re-evaluated
    /// against the smaller membership.
    pub fn remove_player(&mut self, player: &str, now: u64) -> Result<Vec<Stamped>, EngineError> {
        if self.status() == Status::Ended {
            return Err(EngineError::SessionEnded);
        }
        let was_active = self.participants.remove(player);
        if !was_active && !self.pending.remove(player) {
            return Err(EngineError::NotParticipant(player.to_string()));
        }
        let mut out = vec![Stamped { ts_ms: now, event: Event::PlayerLeft { player: player.to_string() } }];
        if self.participants.is_empty() && (self.pending.is_empty() || self.config.mode == Mode::Solo) {
            self.end(now, EndReason::Abandoned, &mut out);
            return Ok(out);
        }
        if was_active {
            if let Phase::Playing(run) = &mut self.phase {
                if run.round.votes.remove(player).is_some() {
                    self.emit_tally(now, &mut out);
                }
            }
            self.close_if_quorum(now, &mut out);
        }
        Ok(out)
    }

    fn quorum_met(&self, round: &VoteRound) -> bool {
        let members = self.participants.len();
        let voted = round.votes.keys().filter(|p| self.participants.contains(*p)).count();
        if members == 0 {
            return false;
        }
        match self.config.quorum {
            Quorum::All => voted == members,
            Quorum::Majority => 2 * voted > members,
        }
    }

    fn close_if_quorum(&mut self, now: u64, out: &mut Vec<Stamped>) {
        if let Phase::Playing(run) = &self.phase {
            if self.quorum_met(&run.round) {
                let outcome = self.resolve(&run.round);
                self.close_round(now, outcome, out);
            }
        }
    }

    fn emit_tally(&self, now: u64, out: &mut Vec<Stamped>) {
        if self.config.mode != Mode::Group || !self.config.feedback_enabled {
            return;
        }
        if let Phase::Playing(run) = &self.phase {
            out.push(Stamped {
                ts_ms: now,
                event: Event::VoteTally { round: run.round.id, counts: tally(&run.round.votes) },
            });
        }
    }

    fn resolve(&self, round: &VoteRound) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.config.rng_seed, streams::TIE_BREAK, round.id));
        resolve_round(&round.votes, self.config.tie_break, &mut rng)
    }

    fn close_round(&mut self, now: u64, outcome: Outcome, out: &mut Vec<Stamped>) {
        let Phase::Playing(run) = &mut self.phase else {
            return;
        };
        let round = run.round.id;
        run.move_count += 1;
        self.total_moves += 1;
        match outcome {
            Outcome::Move(tile) => {
                run.current_board = run
                    .current_board
                    .apply_move(tile)
                    .expect("votes are legality-checked on the current board");
                out.push(Stamped {
                    ts_ms: now,
                    event: Event::MoveExecuted { round, tile, board: run.current_board, move_count: run.move_count },
                });
            }
            Outcome::Pass => out.push(Stamped {
                ts_ms: now,
                event: Event::Pass { round, board: run.current_board, move_count: run.move_count },
            }),
        }
        self.check_solved(now, out);
        if matches!(self.phase, Phase::Playing(_)) {
            self.open_round(now, out);
        }
    }

    fn check_solved(&mut self, now: u64, out: &mut Vec<Stamped>) {
        let Phase::Playing(run) = &self.phase else {
            return;
        };
        if !run.current_board.is_goal() {
            return;
        }
        out.push(Stamped {
            ts_ms: now,
            event: Event::PuzzleSolved {
                puzzle: run.id,
                difficulty: run.difficulty,
                moves: run.move_count,
                optimal: run.difficulty,
                elapsed_s: (now - run.appeared_at) as f64 / 1000.0,
            },
        });
        self.solved += 1;
        self.next_difficulty =
            (run.difficulty + self.config.difficulty_step).min(self.table.max_distance());
        self.phase = Phase::Idle { resume_at: now + self.config.delay_ms() };
    }

    fn issue_puzzle(&mut self, now: u64, out: &mut Vec<Stamped>) {
        let id = self.next_puzzle_id;
        self.next_puzzle_id += 1;
        let difficulty = self.next_difficulty;
        let board = self
            .table
            .generate(difficulty, seed::derive(self.config.rng_seed, streams::PUZZLE, id))
            .expect("difficulty is clamped to the table range");
        self.last_difficulty = difficulty;
        out.push(Stamped { ts_ms: now, event: Event::PuzzleIssued { puzzle: id, difficulty, board } });
        self.phase = Phase::Playing(PuzzleRun {
            id,
            initial_board: board,
            current_board: board,
            difficulty,
            move_count: 0,
            appeared_at: now,
            round: VoteRound { id: 0, votes: BTreeMap::new(), opened_at: now, deadline: now },
        });
        self.open_round(now, out);
    }

    fn open_round(&mut self, now: u64, out: &mut Vec<Stamped>) {
        self.participants.append(&mut self.pending);
        let id = self.next_round_id;
        self.next_round_id += 1;
        let deadline = now + self.config.round_ms();
        let Phase::Playing(run) = &mut self.phase else {
            return;
        };
        run.round = VoteRound { id, votes: BTreeMap::new(), opened_at: now, deadline };
        out.push(Stamped { ts_ms: now, event: Event::RoundOpened { round: id, puzzle: run.id, deadline_ms: deadline } });
    }

    fn end(&mut self, now: u64, reason: EndReason, out: &mut Vec<Stamped>) {
        let unsolved = self.puzzle().map(|run| UnsolvedPuzzle {
            puzzle: run.id,
            difficulty: run.difficulty,
            move_count: run.move_count,
        });
        let summary = SessionSummary {
            reason,
            puzzles_solved: self.solved,
            total_moves: self.total_moves,
            last_difficulty: self.last_difficulty,
            unsolved,
        };
        self.phase = Phase::Over;
        out.push(Stamped { ts_ms: now, event: Event::SessionEnded { summary } });
    }
}

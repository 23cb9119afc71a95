//! Append-only JSON Lines event logs.
//!
//! A log file `<session_id>.jsonl` starts with one header line carrying the
//! schema version, the goal encoding and the full session config, followed by
//! one [`EventRecord`] per line with a per-session sequence number starting
//! at 1. Timestamps are the engine's (virtual in simulation), so simulated and
//! live logs have the same format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Board, Tile};
use crate::engine::{
    tally, Event, Mode, SessionConfig, SessionSummary, Session, Stamped, TieBreak,
};
use crate::oracle::DistanceTable;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sequence gap: expected seq {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("record belongs to session {got:?}, log is for {expected:?}")]
    SessionMismatch { expected: String, got: String },
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
}

fn corrupt(seq: u64, reason: impl Into<String>) -> LogError {
    LogError::CorruptLog { seq, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub schema: u32,
    pub goal: Board,
    pub session_id: String,
    pub mode: Mode,
    pub config: SessionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<u32>,
}

impl LogHeader {
    pub fn new(session_id: impl Into<String>, config: &SessionConfig) -> Self {
        LogHeader {
            kind: "header".into(),
            schema: SCHEMA_VERSION,
            goal: Board::goal(),
            session_id: session_id.into(),
            mode: config.mode,
            config: config.clone(),
            trial: None,
        }
    }

    pub fn with_trial(mut self, trial: u32) -> Self {
        self.trial = Some(trial);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts_ms: u64,
    pub session_id: String,
    pub mode: Mode,
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// A whole log held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: LogHeader,
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new(header: LogHeader) -> Self {
        EventLog { header, records: Vec::new() }
    }

    /// Appends engine output, assigning the next sequence numbers.
    pub fn extend_stamped(&mut self, events: impl IntoIterator<Item = Stamped>) {
        for s in events {
            let seq = self.records.len() as u64 + 1;
            self.records.push(EventRecord {
                ts_ms: s.ts_ms,
                session_id: self.header.session_id.clone(),
                mode: self.header.mode,
                seq,
                event: s.event,
            });
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.jsonl", self.header.session_id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        Self::from_reader(text.as_bytes())
    }

    /// Parses a log. A final line without a trailing newline that does not
    /// parse is a torn write from a crash and is dropped.
    pub fn from_reader(mut reader: impl io::Read) -> Result<Self, LogError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let torn_tail = !text.is_empty() && !text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut numbered = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = numbered.next().ok_or(LogError::Parse { line: 1, message: "empty log".into() })?;
        let header: LogHeader =
            serde_json::from_str(first).map_err(|e| LogError::Parse { line: 1, message: e.to_string() })?;
        if header.kind != "header" {
            return Err(LogError::Parse { line: 1, message: "first line is not a header".into() });
        }
        let mut log = EventLog::new(header);
        for (i, line) in numbered {
            match serde_json::from_str::<EventRecord>(line) {
                Ok(record) => log.records.push(record),
                Err(_) if torn_tail && i + 1 == lines.len() => break,
                Err(e) => return Err(LogError::Parse { line: i + 1, message: e.to_string() }),
            }
        }
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        Self::from_reader(fs::File::open(path)?)
    }

    /// Writes `<dir>/<session_id>.jsonl`, returning the path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, LogError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_jsonl())?;
        Ok(path)
    }

    /// Every `*.jsonl` log under `path` (a file or a directory), sorted by file name.
    pub fn read_all(path: &Path) -> Result<Vec<EventLog>, LogError> {
        if path.is_file() {
            return Ok(vec![Self::read(path)?]);
        }
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files.iter().map(|p| Self::read(p)).collect()
    }
}

/// Single-writer append handle. The live server flushes every record; the
/// simulator buffers.
pub struct LogWriter<W: Write> {
    out: W,
    session_id: String,
    mode: Mode,
    last_seq: u64,
    flush_each: bool,
}

impl LogWriter<io::BufWriter<fs::File>> {
    pub fn create_in_dir(dir: &Path, header: &LogHeader, flush_each: bool) -> Result<Self, LogError> {
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join(format!("{}.jsonl", header.session_id)))?;
        Self::new(io::BufWriter::new(file), header, flush_each)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader, flush_each: bool) -> Result<Self, LogError> {
        serde_json::to_writer(&mut out, header).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
        if flush_each {
            out.flush()?;
        }
        Ok(LogWriter { out, session_id: header.session_id.clone(), mode: header.mode, last_seq: 0, flush_each })
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<(), LogError> {
        if record.session_id != self.session_id {
            return Err(LogError::SessionMismatch { expected: self.session_id.clone(), got: record.session_id.clone() });
        }
        if record.seq != self.last_seq + 1 {
            return Err(LogError::SequenceGap { expected: self.last_seq + 1, got: record.seq });
        }
        let mut line = serde_json::to_vec(record).map_err(io::Error::from)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        if self.flush_each {
            self.out.flush()?;
        }
        self.last_seq = record.seq;
        Ok(())
    }

    /// Wraps engine output in records with the next sequence numbers and appends them.
    pub fn append_stamped(&mut self, events: &[Stamped]) -> Result<Vec<EventRecord>, LogError> {
        let mut records = Vec::with_capacity(events.len());
        for s in events {
            let record = EventRecord {
                ts_ms: s.ts_ms,
                session_id: self.session_id.clone(),
                mode: self.mode,
                seq: self.last_seq + 1,
                event: s.event.clone(),
            };
            self.append(&record)?;
            records.push(record);
        }
        Ok(records)
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// One puzzle as reconstructed from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedPuzzle {
    pub puzzle: u64,
    pub difficulty: u32,
    pub initial_board: Board,
    pub final_board: Board,
    pub move_count: u32,
    pub tiles: Vec<Option<Tile>>,
    pub issued_ms: u64,
    pub solved: Option<SolvedPuzzle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedPuzzle {
    pub moves: u32,
    pub optimal: u32,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedSession {
    pub session_id: String,
    pub mode: Mode,
    pub trial: Option<u32>,
    /// Everyone who was ever a member, in join order.
    pub players: Vec<String>,
    pub puzzles: Vec<ReplayedPuzzle>,
    pub ended: Option<SessionSummary>,
}

impl ReplayedSession {
    pub fn final_board(&self) -> Option<Board> {
        self.puzzles.last().map(|p| p.final_board)
    }
}

/// Rebuilds every board and counter from the logged moves under the session
/// rules, checking each logged outcome against the reconstruction. With a
/// table, optimal distances are checked too.
pub fn replay(log: &EventLog, table: Option<&DistanceTable>) -> Result<ReplayedSession, LogError> {
    let header = &log.header;
    if header.schema != SCHEMA_VERSION {
        return Err(corrupt(0, format!("unsupported schema {}", header.schema)));
    }
    if header.goal != Board::goal() {
        return Err(corrupt(0, format!("goal {:?} does not match this build", header.goal.cells())));
    }
    let mut state = ReplayState::default();
    let mut out = ReplayedSession {
        session_id: header.session_id.clone(),
        mode: header.mode,
        trial: header.trial,
        players: Vec::new(),
        puzzles: Vec::new(),
        ended: None,
    };
    let mut last_ts = 0;
    for (i, r) in log.records.iter().enumerate() {
        let seq = r.seq;
        if seq != i as u64 + 1 {
            return Err(LogError::SequenceGap { expected: i as u64 + 1, got: seq });
        }
        if r.session_id != header.session_id {
            return Err(LogError::SessionMismatch { expected: header.session_id.clone(), got: r.session_id.clone() });
        }
        if r.mode != header.mode {
            return Err(corrupt(seq, "mode differs from header"));
        }
        if r.ts_ms < last_ts {
            return Err(corrupt(seq, "timestamp went backwards"));
        }
        last_ts = r.ts_ms;
        if out.ended.is_some() {
            return Err(corrupt(seq, "record after session end"));
        }
        state.apply(seq, r, header, table, &mut out)?;
    }
    Ok(out)
}

#[derive(Default)]
struct ReplayState {
    members: BTreeSet<String>,
    open_round: Option<u64>,
    last_round: u64,
    votes: BTreeMap<String, Tile>,
}

impl ReplayState {
    fn apply(
        &mut self,
        seq: u64,
        r: &EventRecord,
        header: &LogHeader,
        table: Option<&DistanceTable>,
        out: &mut ReplayedSession,
    ) -> Result<(), LogError> {
        let current = |out: &mut ReplayedSession| -> Option<usize> {
            match out.puzzles.last() {
                Some(p) if p.solved.is_none() => Some(out.puzzles.len() - 1),
                _ => None,
            }
        };
        match &r.event {
            Event::PlayerJoined { player } => {
                if !self.members.insert(player.clone()) {
                    return Err(corrupt(seq, format!("{player} joined twice")));
                }
                out.players.push(player.clone());
            }
            Event::PlayerLeft { player } => {
                if !self.members.remove(player) {
                    return Err(corrupt(seq, format!("{player} left without joining")));
                }
                self.votes.remove(player);
            }
            Event::PuzzleIssued { puzzle, difficulty, board } => {
                if current(out).is_some() {
                    return Err(corrupt(seq, "new puzzle while another is unsolved"));
                }
                if !board.is_solvable() {
                    return Err(corrupt(seq, "issued board is unsolvable"));
                }
                if let Some(t) = table {
                    if t.distance(board) != Some(*difficulty) {
                        return Err(corrupt(seq, format!("board is not at difficulty {difficulty}")));
                    }
                }
                out.puzzles.push(ReplayedPuzzle {
                    puzzle: *puzzle,
                    difficulty: *difficulty,
                    initial_board: *board,
                    final_board: *board,
                    move_count: 0,
                    tiles: Vec::new(),
                    issued_ms: r.ts_ms,
                    solved: None,
                });
            }
            Event::RoundOpened { round, puzzle, deadline_ms } => {
                let Some(idx) = current(out) else {
                    return Err(corrupt(seq, "round opened with no puzzle"));
                };
                if out.puzzles[idx].puzzle != *puzzle {
                    return Err(corrupt(seq, "round opened for another puzzle"));
                }
                if self.open_round.is_some() || *round <= self.last_round {
                    return Err(corrupt(seq, format!("unexpected round {round}")));
                }
                if *deadline_ms != r.ts_ms + header.config.round_ms() {
                    return Err(corrupt(seq, "round deadline does not match config"));
                }
                self.open_round = Some(*round);
                self.last_round = *round;
                self.votes.clear();
            }
            Event::VoteCast { round, player, tile } => {
                self.expect_round(seq, *round)?;
                let idx = current(out).ok_or_else(|| corrupt(seq, "vote with no puzzle"))?;
                if !self.members.contains(player) {
                    return Err(corrupt(seq, format!("vote from non-member {player}")));
                }
                if !out.puzzles[idx].final_board.is_legal(*tile) {
                    return Err(corrupt(seq, format!("illegal vote for tile {tile}")));
                }
                self.votes.insert(player.clone(), *tile);
            }
            Event::VoteTally { round, counts } => {
                self.expect_round(seq, *round)?;
                if *counts != tally(&self.votes) {
                    return Err(corrupt(seq, "tally does not match recorded votes"));
                }
            }
            Event::MoveExecuted { round, tile, board, move_count } => {
                self.expect_round(seq, *round)?;
                let idx = current(out).ok_or_else(|| corrupt(seq, "move with no puzzle"))?;
                self.check_winner(seq, *tile, header)?;
                let p = &mut out.puzzles[idx];
                let next = p
                    .final_board
                    .apply_move(*tile)
                    .map_err(|e| corrupt(seq, e.to_string()))?;
                if next != *board {
                    return Err(corrupt(seq, "logged board does not follow from the move"));
                }
                if *move_count != p.move_count + 1 {
                    return Err(corrupt(seq, "move counter skipped"));
                }
                p.final_board = next;
                p.move_count += 1;
                p.tiles.push(Some(*tile));
                self.open_round = None;
            }
            Event::Pass { round, board, move_count } => {
                self.expect_round(seq, *round)?;
                let idx = current(out).ok_or_else(|| corrupt(seq, "pass with no puzzle"))?;
                if !self.votes.is_empty() {
                    return Err(corrupt(seq, "pass despite recorded votes"));
                }
                let p = &mut out.puzzles[idx];
                if *board != p.final_board {
                    return Err(corrupt(seq, "board changed on a pass"));
                }
                if *move_count != p.move_count + 1 {
                    return Err(corrupt(seq, "move counter skipped"));
                }
                p.move_count += 1;
                p.tiles.push(None);
                self.open_round = None;
            }
            Event::PuzzleSolved { puzzle, difficulty, moves, optimal, elapsed_s } => {
                let idx = current(out).ok_or_else(|| corrupt(seq, "solve with no puzzle"))?;
                let p = &mut out.puzzles[idx];
                if p.puzzle != *puzzle || p.difficulty != *difficulty {
                    return Err(corrupt(seq, "solve for another puzzle"));
                }
                if !p.final_board.is_goal() {
                    return Err(corrupt(seq, "solve logged but board is not the goal"));
                }
                if *moves != p.move_count {
                    return Err(corrupt(seq, "solve move count differs from replay"));
                }
                if *optimal != p.difficulty {
                    return Err(corrupt(seq, "optimal distance differs from puzzle difficulty"));
                }
                if *moves < *optimal {
                    return Err(corrupt(seq, "fewer moves than the optimum"));
                }
                let elapsed = (r.ts_ms - p.issued_ms) as f64 / 1000.0;
                if (elapsed - elapsed_s).abs() > 1e-9 {
                    return Err(corrupt(seq, "elapsed time differs from timestamps"));
                }
                if self.open_round.is_some() {
                    return Err(corrupt(seq, "solve with a round still open"));
                }
                p.solved = Some(SolvedPuzzle { moves: *moves, optimal: *optimal, elapsed_s: *elapsed_s });
            }
            Event::SessionEnded { summary } => {
                let solved = out.puzzles.iter().filter(|p| p.solved.is_some()).count() as u32;
                if summary.puzzles_solved != solved {
                    return Err(corrupt(seq, "summary solve count differs from replay"));
                }
                out.ended = Some(summary.clone());
            }
        }
        Ok(())
    }

    fn expect_round(&self, seq: u64, round: u64) -> Result<(), LogError> {
        if self.open_round != Some(round) {
            return Err(corrupt(seq, format!("round {round} is not open")));
        }
        Ok(())
    }

    fn check_winner(&self, seq: u64, tile: Tile, header: &LogHeader) -> Result<(), LogError> {
        let counts = tally(&self.votes);
        let top = counts.values().copied().max().unwrap_or(0);
        let tied: Vec<Tile> = counts.iter().filter(|(_, &n)| n == top).map(|(&t, _)| t).collect();
        let ok = match (header.mode, header.config.tie_break) {
            (Mode::Solo, _) => tied == [tile],
            (Mode::Group, TieBreak::LowestTile) => tied.first() == Some(&tile),
            (Mode::Group, TieBreak::SeededRandom) => tied.contains(&tile),
        };
        if !ok {
            return Err(corrupt(seq, format!("tile {tile} is not the plurality winner")));
        }
        Ok(())
    }
}

/// Re-drives the session engine with the commands recorded in `log`
/// (joins, leaves, votes) at their logged times and returns the log the
/// engine produces. For an untampered log the result is identical.
pub fn reenact(log: &EventLog, table: Arc<DistanceTable>) -> Result<EventLog, LogError> {
    let header = &log.header;
    let first_puzzle = log
        .records
        .iter()
        .position(|r| matches!(r.event, Event::PuzzleIssued { .. }))
        .ok_or_else(|| corrupt(0, "log has no puzzle"))?;
    let initial: Vec<String> = log.records[..first_puzzle]
        .iter()
        .filter_map(|r| match &r.event {
            Event::PlayerJoined { player } => Some(player.clone()),
            _ => None,
        })
        .collect();
    let start_ms = log.records[first_puzzle].ts_ms;
    let (mut session, events) = Session::start(header.session_id.clone(), header.config.clone(), initial, start_ms, table)
        .map_err(|e| corrupt(1, e.to_string()))?;
    let mut rebuilt = EventLog::new(header.clone());
    rebuilt.extend_stamped(events);
    for r in &log.records[first_puzzle..] {
        let now = r.ts_ms;
        if !matches!(r.event, Event::PlayerJoined { .. } | Event::PlayerLeft { .. } | Event::VoteCast { .. }) {
            continue;
        }
        rebuilt.extend_stamped(session.tick(now));
        let result = match &r.event {
            Event::PlayerJoined { player } => session.add_player(player, now),
            Event::PlayerLeft { player } => session.remove_player(player, now),
            Event::VoteCast { round, player, tile } => session.submit_vote(player, Some(*round), tile.get(), now),
            _ => unreachable!(),
        };
        rebuilt.extend_stamped(result.map_err(|e| corrupt(r.seq, e.to_string()))?);
    }
    if let Some(last) = log.records.last() {
        rebuilt.extend_stamped(session.tick(last.ts_ms));
    }
    Ok(rebuilt)
}

/// Checks that re-enacting `log` reproduces it byte for byte.
pub fn verify_reenactment(log: &EventLog, table: Arc<DistanceTable>) -> Result<(), LogError> {
    let rebuilt = reenact(log, table)?;
    for (a, b) in log.records.iter().zip(&rebuilt.records) {
        if a != b {
            return Err(corrupt(a.seq, format!("re-enactment diverged: logged {:?}, engine produced {:?}", a.event, b.event)));
        }
    }
    if log.records.len() != rebuilt.records.len() {
        let seq = log.records.len().min(rebuilt.records.len()) as u64 + 1;
        return Err(corrupt(seq, format!(
            "re-enactment produced {} records, log has {}",
            rebuilt.records.len(),
            log.records.len()
        )));
    }
    if rebuilt.to_jsonl() != log.to_jsonl() {
        return Err(corrupt(0, "re-enacted log differs in serialization"));
    }
    Ok(())
}

#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use sliders::board::{Board, Tile};
use sliders::engine::{Mode, Phase, Session, SessionConfig};
use sliders::oracle::DistanceTable;
use sliders::persistence::{EventLog, LogHeader};

pub fn table() -> Arc<DistanceTable> {
    static T: OnceLock<Arc<DistanceTable>> = OnceLock::new();
    T.get_or_init(|| Arc::new(DistanceTable::build())).clone()
}

fn step(table: &DistanceTable, board: &Board, closer: bool) -> Tile {
    let d = table.distance(board).unwrap();
    let dist = |m: &Tile| table.distance(&board.apply_move(*m).unwrap()).unwrap();
    let moves = board.legal_moves();
    if closer {
        return moves.into_iter().find(|m| dist(m) < d).unwrap();
    }
    // Some states have no farther neighbor; any move that does not solve
    // still returns to the same board on the way back.
    moves.iter().copied().find(|m| dist(m) > d).or_else(|| moves.into_iter().find(|m| dist(m) > 0)).unwrap()
}

/// One planned solve: total moves and milliseconds from issue to solve.
#[derive(Debug, Clone, Copy)]
pub struct Solve {
    pub moves: u32,
    pub time_ms: u64,
}

/// Drives a real session through the planned solves, one puzzle each, with
/// the single player `player`. Surplus moves (which must have the parity of
/// moves minus difficulty) are spent as away-and-back pairs. Moves are spread
/// evenly so the solving move lands exactly `time_ms` after the issue. The
/// player leaves after the last solve.
pub fn scripted_session(id: &str, mode: Mode, player: &str, start_difficulty: u32, plan: &[Solve]) -> EventLog {
    let tb = table();
    let cfg = SessionConfig {
        mode,
        start_difficulty,
        round_seconds: 3600.0,
        session_minutes: 10_000.0,
        ..SessionConfig::default()
    };
    let (mut s, events) = Session::start(id, cfg.clone(), vec![player.to_string()], 0, tb.clone()).unwrap();
    let mut log = EventLog::new(LogHeader::new(id, &cfg));
    log.extend_stamped(events);
    let mut now = 0;
    for solve in plan {
        if let Phase::Idle { resume_at } = *s.phase() {
            now = resume_at;
            log.extend_stamped(s.tick(now));
        }
        let run = s.puzzle().unwrap();
        let (issued, d) = (run.appeared_at, run.difficulty);
        assert!(solve.moves >= d && (solve.moves - d) % 2 == 0, "{solve:?} at difficulty {d}");
        assert!(solve.time_ms >= solve.moves as u64);
        let mut detour = (solve.moves - d) / 2;
        let mut back: Option<Tile> = None;
        for k in 1..=solve.moves as u64 {
            let board = s.puzzle().unwrap().current_board;
            let tile = if let Some(t) = back.take() {
                t
            } else if detour > 0 {
                detour -= 1;
                let t = step(&tb, &board, false);
                back = Some(t);
                t
            } else {
                step(&tb, &board, true)
            };
            now = issued + solve.time_ms * k / solve.moves as u64;
            log.extend_stamped(s.tick(now));
            log.extend_stamped(s.submit_vote(player, None, tile.get(), now).unwrap());
        }
        assert!(matches!(s.phase(), Phase::Idle { .. }));
    }
    log.extend_stamped(s.remove_player(player, now).unwrap());
    log
}

/// Difficulty to pair with `moves` in a band so that the surplus is even.
pub fn difficulty_for(moves: u32, lo: u32, hi: u32) -> u32 {
    assert!(moves >= lo);
    if moves <= hi {
        moves
    } else {
        hi - (moves - hi) % 2
    }
}

/// Splits `total` into `n` near-equal non-negative parts.
pub fn spread(total: u64, n: usize) -> Vec<u64> {
    let base = total / n as u64;
    let extra = (total % n as u64) as usize;
    (0..n).map(|i| base + u64::from(i < extra)).collect()
}

/// One log per solve, all for the same player, with the given per-record
/// moves and times. Easy records use difficulties 1..=8, hard ones 9..=16.
pub fn records_for(
    prefix: &str,
    mode: Mode,
    player: &str,
    easy: &[(u32, u64)],
    hard: &[(u32, u64)],
) -> Vec<EventLog> {
    let mut logs = Vec::new();
    for (i, &(moves, time_ms)) in easy.iter().chain(hard).enumerate() {
        let d = if i < easy.len() { difficulty_for(moves, 1, 8) } else { difficulty_for(moves, 9, 16) };
        logs.push(scripted_session(&format!("{prefix}-{i:04}"), mode, player, d, &[Solve { moves, time_ms }]));
    }
    logs
}

/// `n` records whose moves sum to `moves_sum` and times to `time_sum_ms`.
pub fn band(n: usize, moves_sum: u64, time_sum_ms: u64) -> Vec<(u32, u64)> {
    spread(moves_sum, n).into_iter().zip(spread(time_sum_ms, n)).map(|(m, t)| (m as u32, t)).collect()
}

/// Integer sums (in thousandths) for an easy and a hard set of the given
/// sizes whose easy, hard and pooled means all round to the targets.
pub fn fit_sums(n_easy: u64, n_hard: u64, easy: u64, hard: u64, overall: u64) -> (u64, u64) {
    let ok = |sum: u64, n: u64, target: u64| (2 * sum).abs_diff(2 * target * n) < n;
    let e0 = easy * n_easy;
    let h0 = hard * n_hard;
    for de in -(n_easy as i64)..=(n_easy as i64) {
        for dh in -(n_hard as i64)..=(n_hard as i64) {
            let se = (e0 as i64 + de) as u64;
            let sh = (h0 as i64 + dh) as u64;
            if ok(se, n_easy, easy) && ok(sh, n_hard, hard) && ok(se + sh, n_easy + n_hard, overall) {
                return (se, sh);
            }
        }
    }
    panic!("no sums fit {easy}/{hard}/{overall} with {n_easy}+{n_hard} records");
}

//! C ABI over the sliders engine.
//!
//! Tables and sessions are opaque handles created and freed through this
//! API. Every fallible function returns a [`SlidersStatus`]; on failure the
//! message is available from [`sliders_last_error`] on the same thread.
//! Boards cross the boundary as 9 bytes in row-major order with 0 for the
//! blank. Session events are returned as JSON arrays in strings that the
//! caller releases with [`sliders_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use sliders::board::{Board, Tile};
use sliders::engine::{EngineError, Session, SessionConfig, Stamped};
use sliders::oracle::{DistanceTable, OracleError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlidersStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IllegalMove = 3,
    Unsolvable = 4,
    NotParticipant = 5,
    RoundClosed = 6,
    SessionEnded = 7,
    DuplicatePlayer = 8,
    WrongMode = 9,
    Io = 10,
    Panic = 11,
}

/// Opaque distance table handle.
pub struct SlidersTable(Arc<DistanceTable>);

/// Opaque session handle.
pub struct SlidersSession(Session);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: SlidersStatus, msg: impl Into<String>) -> SlidersStatus {
    set_error(msg);
    status
}

fn engine_status(e: &EngineError) -> SlidersStatus {
    match e {
        EngineError::BadConfig(_) => SlidersStatus::InvalidArgument,
        EngineError::IllegalMove(_) => SlidersStatus::IllegalMove,
        EngineError::NotParticipant(_) => SlidersStatus::NotParticipant,
        EngineError::RoundClosed => SlidersStatus::RoundClosed,
        EngineError::SessionEnded => SlidersStatus::SessionEnded,
        EngineError::DuplicatePlayer(_) => SlidersStatus::DuplicatePlayer,
        EngineError::WrongMode => SlidersStatus::WrongMode,
    }
}

fn oracle_status(e: &OracleError) -> SlidersStatus {
    match e {
        OracleError::Unsolvable(_) => SlidersStatus::Unsolvable,
        OracleError::NoSuchDifficulty { .. } => SlidersStatus::InvalidArgument,
        OracleError::BadCache(_) | OracleError::Io(_) => SlidersStatus::Io,
    }
}

/// Runs `f`, converting panics into [`SlidersStatus::Panic`].
fn guard(f: impl FnOnce() -> SlidersStatus) -> SlidersStatus {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SlidersStatus::Panic, "internal panic"))
}

unsafe fn read_board(cells: *const u8) -> Result<Board, SlidersStatus> {
    if cells.is_null() {
        return Err(fail(SlidersStatus::NullPointer, "board pointer is null"));
    }
    let mut arr = [0u8; 9];
    arr.copy_from_slice(std::slice::from_raw_parts(cells, 9));
    Board::new(arr).map_err(|e| fail(SlidersStatus::InvalidArgument, e.to_string()))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, SlidersStatus> {
    if s.is_null() {
        return Err(fail(SlidersStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(SlidersStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_events(events: &[Stamped], out: *mut *mut c_char) -> SlidersStatus {
    if out.is_null() {
        return SlidersStatus::Ok;
    }
    let json = serde_json::to_string(events).expect("events serialize");
    *out = CString::new(json).expect("JSON has no nul bytes").into_raw();
    SlidersStatus::Ok
}

/// Message for the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn sliders_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sliders_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the full distance table in memory.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sliders_table_build(out: *mut *mut SlidersTable) -> SlidersStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlidersStatus::NullPointer, "out is null");
        }
        *out = Box::into_raw(Box::new(SlidersTable(Arc::new(DistanceTable::build()))));
        SlidersStatus::Ok
    })
}

/// Loads the table from a cache file, building and writing it if missing.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sliders_table_load_or_build(path: *const c_char, out: *mut *mut SlidersTable) -> SlidersStatus {
    guard(|| {
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(SlidersStatus::NullPointer, "out is null");
        }
        match DistanceTable::load_or_build(Path::new(path)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(SlidersTable(Arc::new(t))));
                SlidersStatus::Ok
            }
            Err(e) => fail(oracle_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `table` must come from this library and not be freed twice. Sessions
/// created from it stay valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_table_free(table: *mut SlidersTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Optimal number of moves from `cells` to the goal.
///
/// # Safety
/// `table` must be a live handle, `cells` must point to 9 bytes, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_table_distance(table: *const SlidersTable, cells: *const u8, out: *mut u32) -> SlidersStatus {
    guard(|| {
        if table.is_null() || out.is_null() {
            return fail(SlidersStatus::NullPointer, "table or out is null");
        }
        let board = match read_board(cells) {
            Ok(b) => b,
            Err(s) => return s,
        };
        match (*table).0.optimal_distance(&board) {
            Ok(d) => {
                *out = d;
                SlidersStatus::Ok
            }
            Err(e) => fail(oracle_status(&e), e.to_string()),
        }
    })
}

/// Writes a board at exactly `difficulty` moves from the goal into `out_cells`.
///
/// # Safety
/// `table` must be a live handle and `out_cells` must point to 9 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sliders_table_generate(
    table: *const SlidersTable,
    difficulty: u32,
    seed: u64,
    out_cells: *mut u8,
) -> SlidersStatus {
    guard(|| {
        if table.is_null() || out_cells.is_null() {
            return fail(SlidersStatus::NullPointer, "table or out_cells is null");
        }
        match (*table).0.generate(difficulty, seed) {
            Ok(b) => {
                std::slice::from_raw_parts_mut(out_cells, 9).copy_from_slice(b.cells());
                SlidersStatus::Ok
            }
            Err(e) => fail(oracle_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `cells` must point to 9 bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_board_is_solvable(cells: *const u8, out: *mut bool) -> SlidersStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlidersStatus::NullPointer, "out is null");
        }
        match read_board(cells) {
            Ok(b) => {
                *out = b.is_solvable();
                SlidersStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Writes the movable tiles, ascending, into `out_tiles` (room for 4) and
/// their count into `out_len`.
///
/// # Safety
/// `cells` must point to 9 bytes, `out_tiles` to 4 writable bytes, `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_board_legal_moves(cells: *const u8, out_tiles: *mut u8, out_len: *mut usize) -> SlidersStatus {
    guard(|| {
        if out_tiles.is_null() || out_len.is_null() {
            return fail(SlidersStatus::NullPointer, "output pointer is null");
        }
        let board = match read_board(cells) {
            Ok(b) => b,
            Err(s) => return s,
        };
        let moves = board.legal_moves();
        for (i, m) in moves.iter().enumerate() {
            *out_tiles.add(i) = m.get();
        }
        *out_len = moves.len();
        SlidersStatus::Ok
    })
}

/// Slides `tile` into the blank, writing the result into `out_cells`.
///
/// # Safety
/// `cells` must point to 9 bytes and `out_cells` to 9 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sliders_board_apply_move(cells: *const u8, tile: u8, out_cells: *mut u8) -> SlidersStatus {
    guard(|| {
        if out_cells.is_null() {
            return fail(SlidersStatus::NullPointer, "out_cells is null");
        }
        let board = match read_board(cells) {
            Ok(b) => b,
            Err(s) => return s,
        };
        let next = Tile::new(tile).and_then(|t| board.apply_move(t));
        match next {
            Ok(b) => {
                std::slice::from_raw_parts_mut(out_cells, 9).copy_from_slice(b.cells());
                SlidersStatus::Ok
            }
            Err(e) => fail(SlidersStatus::IllegalMove, e.to_string()),
        }
    })
}

/// Starts a session at time `now_ms`. `config_json` holds session config
/// fields (null for defaults); `players_json` is a JSON array of player ids.
/// The opening events are written to `out_events` if it is not null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_new(
    table: *const SlidersTable,
    id: *const c_char,
    config_json: *const c_char,
    players_json: *const c_char,
    now_ms: u64,
    out_session: *mut *mut SlidersSession,
    out_events: *mut *mut c_char,
) -> SlidersStatus {
    guard(|| {
        if table.is_null() || out_session.is_null() {
            return fail(SlidersStatus::NullPointer, "table or out_session is null");
        }
        let parsed = (|| {
            let id = read_str(id, "id")?;
            let config: SessionConfig = if config_json.is_null() {
                SessionConfig::default()
            } else {
                serde_json::from_str(read_str(config_json, "config_json")?)
                    .map_err(|e| fail(SlidersStatus::InvalidArgument, format!("config_json: {e}")))?
            };
            let players: Vec<String> = serde_json::from_str(read_str(players_json, "players_json")?)
                .map_err(|e| fail(SlidersStatus::InvalidArgument, format!("players_json: {e}")))?;
            Ok::<_, SlidersStatus>((id, config, players))
        })();
        let (id, config, players) = match parsed {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Session::start(id, config, players, now_ms, (*table).0.clone()) {
            Ok((session, events)) => {
                *out_session = Box::into_raw(Box::new(SlidersSession(session)));
                write_events(&events, out_events)
            }
            Err(e) => fail(engine_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `session` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_free(session: *mut SlidersSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

unsafe fn with_session(
    session: *mut SlidersSession,
    out_events: *mut *mut c_char,
    f: impl FnOnce(&mut Session) -> Result<Vec<Stamped>, SlidersStatus>,
) -> SlidersStatus {
    guard(|| {
        if session.is_null() {
            return fail(SlidersStatus::NullPointer, "session is null");
        }
        match f(&mut (*session).0) {
            Ok(events) => write_events(&events, out_events),
            Err(s) => s,
        }
    })
}

/// Applies every deadline due at or before `now_ms`.
///
/// # Safety
/// `session` must be a live handle; `out_events` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_tick(session: *mut SlidersSession, now_ms: u64, out_events: *mut *mut c_char) -> SlidersStatus {
    with_session(session, out_events, |s| Ok(s.tick(now_ms)))
}

/// Casts or replaces a vote (a move in solo sessions). `round` 0 means the
/// open round. Call [`sliders_session_tick`] with the same time first.
///
/// # Safety
/// `session` must be a live handle, `player` NUL-terminated, `out_events` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_vote(
    session: *mut SlidersSession,
    player: *const c_char,
    round: u64,
    tile: u8,
    now_ms: u64,
    out_events: *mut *mut c_char,
) -> SlidersStatus {
    with_session(session, out_events, |s| {
        let player = read_str(player, "player")?;
        let round = (round != 0).then_some(round);
        s.submit_vote(player, round, tile, now_ms).map_err(|e| fail(engine_status(&e), e.to_string()))
    })
}

/// # Safety
/// As for [`sliders_session_vote`].
#[no_mangle]
pub unsafe extern "C" fn sliders_session_add_player(
    session: *mut SlidersSession,
    player: *const c_char,
    now_ms: u64,
    out_events: *mut *mut c_char,
) -> SlidersStatus {
    with_session(session, out_events, |s| {
        let player = read_str(player, "player")?;
        s.add_player(player, now_ms).map_err(|e| fail(engine_status(&e), e.to_string()))
    })
}

/// # Safety
/// As for [`sliders_session_vote`].
#[no_mangle]
pub unsafe extern "C" fn sliders_session_remove_player(
    session: *mut SlidersSession,
    player: *const c_char,
    now_ms: u64,
    out_events: *mut *mut c_char,
) -> SlidersStatus {
    with_session(session, out_events, |s| {
        let player = read_str(player, "player")?;
        s.remove_player(player, now_ms).map_err(|e| fail(engine_status(&e), e.to_string()))
    })
}

/// Next time at which a tick would change state. Writes false to `out_has`
/// once the session is over.
///
/// # Safety
/// `session` must be a live handle; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_next_due(session: *const SlidersSession, out_due: *mut u64, out_has: *mut bool) -> SlidersStatus {
    guard(|| {
        if session.is_null() || out_due.is_null() || out_has.is_null() {
            return fail(SlidersStatus::NullPointer, "null argument");
        }
        match (*session).0.next_due() {
            Some(d) => {
                *out_due = d;
                *out_has = true;
            }
            None => *out_has = false,
        }
        SlidersStatus::Ok
    })
}

/// Current board of the open puzzle. Writes false to `out_has` between puzzles.
///
/// # Safety
/// `session` must be a live handle, `out_cells` 9 writable bytes, `out_has` valid.
#[no_mangle]
pub unsafe extern "C" fn sliders_session_board(session: *const SlidersSession, out_cells: *mut u8, out_has: *mut bool) -> SlidersStatus {
    guard(|| {
        if session.is_null() || out_cells.is_null() || out_has.is_null() {
            return fail(SlidersStatus::NullPointer, "null argument");
        }
        match (*session).0.puzzle() {
            Some(run) => {
                std::slice::from_raw_parts_mut(out_cells, 9).copy_from_slice(run.current_board.cells());
                *out_has = true;
            }
            None => *out_has = false,
        }
        SlidersStatus::Ok
    })
}

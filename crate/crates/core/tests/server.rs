mod common;

use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use sliders::board::Board;
use sliders::engine::{Mode, SessionConfig};
use sliders::net::{Server, ServerConfig};
use sliders::persistence::{replay, verify_reenactment, EventLog};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
}

impl Client {
    async fn connect(addr: &str) -> Client {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Client { lines: BufReader::new(r).lines(), write: w }
    }

    async fn send_raw(&mut self, line: &str) {
        self.write.write_all(format!("{line}\n").as_bytes()).await.unwrap();
    }

    async fn send(&mut self, v: Value) {
        self.send_raw(&v.to_string()).await;
    }

    async fn recv(&mut self) -> Option<Value> {
        let line = tokio::time::timeout(Duration::from_secs(10), self.lines.next_line()).await.expect("timed out");
        line.unwrap().map(|l| serde_json::from_str(&l).unwrap())
    }

    /// Next message of the given type, skipping others.
    async fn expect(&mut self, kind: &str) -> Value {
        loop {
            let m = self.recv().await.unwrap_or_else(|| panic!("closed while waiting for {kind}"));
            if m["type"] == kind {
                return m;
            }
        }
    }

    async fn join(&mut self, mode: &str, session: &str) -> Value {
        self.send(json!({"type": "join", "mode": mode, "session": session, "name": "t"})).await;
        self.expect("joined").await
    }
}

async fn start(config: SessionConfig, dir: &Path, tweak: impl FnOnce(&mut ServerConfig)) -> String {
    let mut cfg = ServerConfig::new(config, dir);
    tweak(&mut cfg);
    let server = Server::bind("127.0.0.1:0", cfg, common::table()).await.unwrap();
    let addr = server.local_addr().unwrap().to_string();
    tokio::spawn(server.run());
    addr
}

fn board_of(v: &Value) -> Board {
    serde_json::from_value(v["board"].clone()).unwrap()
}

fn best_tile(board: &Board) -> u8 {
    let t = common::table();
    let d = t.distance(board).unwrap();
    board
        .legal_moves()
        .into_iter()
        .find(|&m| t.distance(&board.apply_move(m).unwrap()).unwrap() < d)
        .unwrap()
        .get()
}

fn read_log(dir: &Path, session: &str) -> EventLog {
    EventLog::read(&dir.join(format!("{session}.jsonl"))).unwrap()
}

fn quick() -> SessionConfig {
    SessionConfig { round_seconds: 5.0, session_minutes: 1.0, inter_puzzle_delay: 0.2, ..SessionConfig::default() }
}

#[tokio::test]
async fn solo_join_gets_first_puzzle() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick().with_mode(Mode::Solo), dir.path(), |_| {}).await;
    let mut c = Client::connect(&addr).await;
    let joined = c.join("solo", "new").await;
    assert_eq!(joined["config"]["mode"], "solo");
    let state = c.expect("state").await;
    assert_eq!(state["difficulty"], 1);
    assert_eq!(state["move_count"], 0);
    assert!(state["deadline_ms"].as_u64().unwrap() > sliders::net::now_ms());
    assert_eq!(common::table().distance(&board_of(&state)), Some(1));
}

#[tokio::test]
async fn solo_solve_then_next_puzzle_after_delay() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick().with_mode(Mode::Solo), dir.path(), |_| {}).await;
    let mut c = Client::connect(&addr).await;
    let session = c.join("solo", "new").await["session"].as_str().unwrap().to_string();
    let state = c.expect("state").await;
    c.send(json!({"type": "move", "tile": best_tile(&board_of(&state))})).await;
    let moved = c.expect("moved").await;
    assert!(board_of(&moved).is_goal());
    assert_eq!(moved["move_count"], 1);
    let solved = c.expect("solved").await;
    assert_eq!((solved["moves"].as_u64(), solved["optimal"].as_u64()), (Some(1), Some(1)));
    let t0 = std::time::Instant::now();
    let next = c.expect("state").await;
    let waited = t0.elapsed();
    assert!(waited >= Duration::from_millis(100), "{waited:?}");
    assert_eq!(next["difficulty"], 2);
    assert_eq!(next["puzzle"], 2);
    drop(c);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let log = read_log(dir.path(), &session);
    let replayed = replay(&log, Some(&common::table())).unwrap();
    assert!(replayed.ended.is_some(), "solo disconnect ends the session");
    verify_reenactment(&log, common::table()).unwrap();
}

#[tokio::test]
async fn wrong_message_kind_for_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick().with_mode(Mode::Solo), dir.path(), |_| {}).await;
    let mut c = Client::connect(&addr).await;
    c.join("solo", "new").await;
    let state = c.expect("state").await;
    c.send(json!({"type": "vote", "round": state["round"], "tile": best_tile(&board_of(&state))})).await;
    assert_eq!(c.expect("error").await["code"], "wrong_mode");
    c.send(json!({"type": "move", "tile": 9})).await;
    assert_eq!(c.expect("error").await["code"], "illegal_move");
}

#[tokio::test]
async fn group_votes_are_broadcast_with_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick(), dir.path(), |c| c.group_size = 2).await;
    let mut a = Client::connect(&addr).await;
    let mut b = Client::connect(&addr).await;
    let sid = a.join("group", "new").await["session"].clone();
    assert_eq!(b.join("group", "new").await["session"], sid);
    let state = a.expect("state").await;
    b.expect("state").await;
    let tile = best_tile(&board_of(&state));
    a.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    for c in [&mut a, &mut b] {
        let v = c.expect("votes").await;
        assert_eq!(v["counts"], json!({ tile.to_string(): 1 }));
    }
    b.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    let moved = b.expect("moved").await;
    assert_eq!(moved["tile"], tile);
    assert_eq!(moved["round"], state["round"]);
}

#[tokio::test]
async fn feedback_off_sends_no_tallies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SessionConfig { feedback_enabled: false, ..quick() };
    let addr = start(cfg, dir.path(), |c| c.group_size = 2).await;
    let mut a = Client::connect(&addr).await;
    let mut b = Client::connect(&addr).await;
    a.join("group", "new").await;
    b.join("group", "new").await;
    let state = a.expect("state").await;
    let tile = best_tile(&board_of(&state));
    a.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    b.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    loop {
        let m = a.recv().await.unwrap();
        assert_ne!(m["type"], "votes");
        if m["type"] == "moved" {
            break;
        }
    }
}

#[tokio::test]
async fn malformed_lines_get_errors_then_disconnect() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick().with_mode(Mode::Solo), dir.path(), |_| {}).await;
    let mut c = Client::connect(&addr).await;
    c.send_raw("{not json").await;
    assert_eq!(c.recv().await.unwrap()["code"], "bad_message");
    c.join("solo", "new").await;
    c.expect("state").await;
    for _ in 0..3 {
        c.send_raw("[]").await;
    }
    let mut errors = 0;
    while let Some(m) = c.recv().await {
        if m["code"] == "bad_message" {
            errors += 1;
        }
    }
    assert_eq!(errors, 3);
}

#[tokio::test]
async fn votes_before_joining_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick(), dir.path(), |_| {}).await;
    let mut c = Client::connect(&addr).await;
    c.send(json!({"type": "vote", "round": 1, "tile": 2})).await;
    assert_eq!(c.recv().await.unwrap()["code"], "not_joined");
}

#[tokio::test]
async fn disconnect_shrinks_the_quorum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SessionConfig { round_seconds: 20.0, ..quick() };
    let addr = start(cfg, dir.path(), |c| c.group_size = 3).await;
    let mut a = Client::connect(&addr).await;
    let mut b = Client::connect(&addr).await;
    let mut c = Client::connect(&addr).await;
    let sid = a.join("group", "new").await["session"].as_str().unwrap().to_string();
    b.join("group", "new").await;
    c.join("group", "new").await;
    let state = a.expect("state").await;
    let tile = best_tile(&board_of(&state));
    a.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    b.send(json!({"type": "vote", "round": state["round"], "tile": tile})).await;
    a.expect("votes").await;
    a.expect("votes").await;
    let t0 = std::time::Instant::now();
    drop(c);
    let moved = a.expect("moved").await;
    assert!(t0.elapsed() < Duration::from_secs(5), "round closed on quorum, not on timeout");
    assert_eq!(moved["tile"], tile);
    drop((a, b));
    tokio::time::sleep(Duration::from_millis(300)).await;
    let log = read_log(dir.path(), &sid);
    replay(&log, Some(&common::table())).unwrap();
    verify_reenactment(&log, common::table()).unwrap();
}

#[tokio::test]
async fn reconnect_within_grace_keeps_the_seat() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick(), dir.path(), |c| c.grace_ms = 5_000).await;
    let mut a = Client::connect(&addr).await;
    let joined = a.join("group", "g1").await;
    let player = joined["player"].clone();
    a.expect("state").await;
    drop(a);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let mut again = Client::connect(&addr).await;
    again.send(json!({"type": "join", "mode": "group", "session": "g1", "player": player})).await;
    let rejoined = again.expect("joined").await;
    assert_eq!(rejoined["player"], player);
    let state = again.expect("state").await;
    again.send(json!({"type": "vote", "round": state["round"], "tile": best_tile(&board_of(&state))})).await;
    again.expect("moved").await;
}

#[tokio::test]
async fn round_times_out_without_votes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SessionConfig { round_seconds: 0.5, ..quick() };
    let addr = start(cfg, dir.path(), |_| {}).await;
    let mut a = Client::connect(&addr).await;
    a.join("group", "new").await;
    let state = a.expect("state").await;
    let moved = a.expect("moved").await;
    let late = sliders::net::now_ms().saturating_sub(state["deadline_ms"].as_u64().unwrap());
    assert!(late <= 100, "resolved {late} ms after the deadline");
    assert_eq!(moved["tile"], Value::Null);
    assert_eq!(moved["move_count"], 1);
    assert_eq!(moved["board"], state["board"]);
    assert_eq!(moved["deadline_ms"].as_u64().unwrap(), state["deadline_ms"].as_u64().unwrap() + 500);
}

#[tokio::test]
async fn websocket_clients_share_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick(), dir.path(), |c| c.group_size = 2).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws?session=room&name=web&mode=group"))
        .await
        .unwrap();
    let mut tcp = Client::connect(&addr).await;
    tcp.join("group", "room").await;
    let mut next = async || loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str::<Value>(t.as_str()).unwrap(),
            _ => continue,
        }
    };
    assert_eq!(next().await["type"], "joined");
    let state = next().await;
    assert_eq!(state["type"], "state");
    let tile = best_tile(&board_of(&state));
    let vote = json!({"type": "vote", "round": state["round"], "tile": tile}).to_string();
    ws.send(Message::text(vote)).await.unwrap();
    let v = tcp.expect("votes").await;
    assert_eq!(v["counts"][tile.to_string()], 1);
}

#[tokio::test]
async fn many_clients_hammering_one_session_leave_a_valid_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SessionConfig { round_seconds: 1.0, session_minutes: 0.1, ..quick() };
    let addr = start(cfg, dir.path(), |c| c.group_size = 12).await;
    let mut tasks = Vec::new();
    for i in 0..12u8 {
        let addr = addr.clone();
        tasks.push(tokio::spawn(async move {
            let mut c = Client::connect(&addr).await;
            let sid = c.join("group", "new").await["session"].as_str().unwrap().to_string();
            while let Some(m) = c.recv().await {
                match m["type"].as_str().unwrap() {
                    "state" | "moved" if m.get("deadline_ms").is_some_and(|d| !d.is_null()) => {
                        let round = m["round"].as_u64().unwrap() + u64::from(m["type"] == "moved");
                        for t in 1..=8u8 {
                            c.send(json!({"type": "vote", "round": round, "tile": (t + i) % 8 + 1})).await;
                        }
                    }
                    "session_end" => break,
                    _ => {}
                }
            }
            sid
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.dedup();
    assert_eq!(ids.len(), 1);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let log = read_log(dir.path(), &ids[0]);
    let r = replay(&log, Some(&common::table())).unwrap();
    assert_eq!(r.players.len(), 12);
    verify_reenactment(&log, common::table()).unwrap();
}

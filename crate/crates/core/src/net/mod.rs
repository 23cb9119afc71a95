//! Live game server: newline-delimited JSON over TCP and the same messages
//! over WebSocket (`GET /ws`) on one port.
//!
//! Each session is owned by a single actor task that receives commands over an
//! ordered queue, drives the engine from the wall clock and appends every
//! event to `<log dir>/<session id>.jsonl`, flushing per record.

pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::engine::{Mode, Phase, Session, SessionConfig, Stamped};
use crate::oracle::DistanceTable;
use crate::persistence::{LogError, LogHeader, LogWriter};
use wire::{translate, ClientMessage, ServerMessage};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Template for new sessions; the mode is the default for joins that omit it.
    pub session: SessionConfig,
    pub log_dir: PathBuf,
    /// Group sessions wait for this many players before the first puzzle.
    pub group_size: usize,
    /// How long a disconnected player's seat is held for a reconnect.
    pub grace_ms: u64,
    pub tick_ms: u64,
    pub send_timeout_ms: u64,
    /// Consecutive unparseable messages tolerated before disconnecting.
    pub max_bad_messages: u32,
    /// Per-client outbound queue length; a client that falls this far behind is dropped.
    pub client_queue: usize,
}

impl ServerConfig {
    pub fn new(session: SessionConfig, log_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            session,
            log_dir: log_dir.into(),
            group_size: 1,
            grace_ms: 0,
            tick_ms: 100,
            send_timeout_ms: 5_000,
            max_bad_messages: 3,
            client_queue: 256,
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

enum Command {
    Join {
        name: String,
        reclaim: Option<String>,
        conn: u64,
        out: mpsc::Sender<String>,
        reply: oneshot::Sender<Result<String, ServerMessage>>,
    },
    Vote {
        player: String,
        round: Option<u64>,
        tile: u8,
        as_move: bool,
    },
    Leave {
        player: String,
        conn: u64,
    },
}

struct SessionEntry {
    mode: Mode,
    tx: mpsc::Sender<Command>,
}

#[derive(Default)]
struct HubState {
    sessions: HashMap<String, SessionEntry>,
    /// Group session filling up for `new` joins, with its join count.
    lobby: Option<(String, usize)>,
    counter: u64,
}

#[derive(Clone)]
struct Hub {
    state: Arc<Mutex<HubState>>,
    config: Arc<ServerConfig>,
    table: Arc<DistanceTable>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Hub {
    /// Finds or creates the session a join is aimed at.
    fn route(&self, mode: Option<Mode>, session: Option<&str>) -> Result<(String, mpsc::Sender<Command>), ServerMessage> {
        let mode = mode.unwrap_or(self.config.session.mode);
        let mut st = self.state.lock().expect("hub lock");
        let requested = session.filter(|s| *s != "new");
        if let Some(id) = requested {
            if !valid_id(id) {
                return Err(ServerMessage::error("bad_message", "session ids use letters, digits, '-' and '_'"));
            }
            if let Some(e) = st.sessions.get(id) {
                return match (e.mode, mode) {
                    (Mode::Group, Mode::Group) => Ok((id.to_string(), e.tx.clone())),
                    _ => Err(ServerMessage::error("session_unavailable", format!("session {id} cannot take this join"))),
                };
            }
        } else if mode == Mode::Group {
            if let Some((id, n)) = st.lobby.take() {
                if let Some(e) = st.sessions.get(&id) {
                    let tx = e.tx.clone();
                    if n + 1 < self.config.group_size {
                        st.lobby = Some((id.clone(), n + 1));
                    }
                    return Ok((id, tx));
                }
            }
        }
        st.counter += 1;
        let id = match requested {
            Some(id) => id.to_string(),
            None => format!("{}-{}-{}", mode.as_str(), now_ms(), st.counter),
        };
        let (tx, rx) = mpsc::channel(1024);
        st.sessions.insert(id.clone(), SessionEntry { mode, tx: tx.clone() });
        if mode == Mode::Group && requested.is_none() && self.config.group_size > 1 {
            st.lobby = Some((id.clone(), 1));
        }
        let actor = Actor {
            id: id.clone(),
            hub: self.clone(),
            cfg: self.config.session.clone().with_mode(mode),
            rx,
            session: None,
            lobby: Vec::new(),
            clients: BTreeMap::new(),
            grace: BTreeMap::new(),
            writer: None,
            next_player: 0,
            last_now: 0,
            done: false,
        };
        tokio::spawn(actor.run());
        info!(session = %id, mode = mode.as_str(), "session created");
        Ok((id, tx))
    }

    fn remove(&self, id: &str) {
        let mut st = self.state.lock().expect("hub lock");
        st.sessions.remove(id);
        if st.lobby.as_ref().is_some_and(|(l, _)| l == id) {
            st.lobby = None;
        }
    }
}

struct Client {
    out: mpsc::Sender<String>,
    conn: u64,
}

struct Actor {
    id: String,
    hub: Hub,
    cfg: SessionConfig,
    rx: mpsc::Receiver<Command>,
    session: Option<Session>,
    lobby: Vec<String>,
    clients: BTreeMap<String, Client>,
    /// Disconnected players whose seat is held until the given time.
    grace: BTreeMap<String, u64>,
    writer: Option<LogWriter<BufWriter<File>>>,
    next_player: u64,
    last_now: u64,
    done: bool,
}

impl Actor {
    fn now(&mut self) -> u64 {
        self.last_now = self.last_now.max(now_ms());
        self.last_now
    }

    async fn run(mut self) {
        let tick = self.hub.config.tick_ms;
        while !self.done {
            let now = self.now();
            let mut wake = now + tick;
            if let Some(due) = self.session.as_ref().and_then(Session::next_due) {
                wake = wake.min(due);
            }
            if let Some(&g) = self.grace.values().min() {
                wake = wake.min(g);
            }
            tokio::select! {
                cmd = self.rx.recv() => match cmd {
                    Some(cmd) => {
                        self.advance();
                        self.handle(cmd);
                    }
                    None => break,
                },
                _ = tokio::time::sleep(Duration::from_millis(wake.saturating_sub(now))) => self.advance(),
            }
        }
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.flush() {
                warn!(session = %self.id, "log flush failed: {e}");
            }
        }
        self.hub.remove(&self.id);
        info!(session = %self.id, "session closed");
    }

    /// Applies every deadline and grace expiry that is due.
    fn advance(&mut self) {
        let now = self.now();
        if let Some(s) = self.session.as_mut() {
            let events = s.tick(now);
            self.emit(events);
        }
        let expired: Vec<String> = self.grace.iter().filter(|(_, &t)| t <= now).map(|(p, _)| p.clone()).collect();
        for p in expired {
            self.grace.remove(&p);
            self.drop_player(&p);
        }
    }

    fn send_to(&mut self, player: &str, msg: &ServerMessage) {
        if let Some(c) = self.clients.get(player) {
            if c.out.try_send(msg.to_line()).is_err() {
                warn!(session = %self.id, player, "client too slow or gone, dropping");
                self.clients.remove(player);
                self.drop_player(player);
            }
        }
    }

    /// Logs engine output and fans it out to every connected client.
    fn emit(&mut self, events: Vec<Stamped>) {
        if events.is_empty() {
            return;
        }
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.append_stamped(&events) {
                warn!(session = %self.id, "log append failed: {e}");
            }
        }
        let msgs = translate(&events, self.cfg.feedback_enabled);
        let mut lagging = Vec::new();
        for msg in &msgs {
            let line = msg.to_line();
            for (p, c) in &self.clients {
                if c.out.try_send(line.clone()).is_err() && !lagging.contains(p) {
                    lagging.push(p.clone());
                }
            }
        }
        if events.iter().any(|s| matches!(s.event, crate::engine::Event::SessionEnded { .. })) {
            self.done = true;
            self.clients.clear();
            return;
        }
        for p in lagging {
            warn!(session = %self.id, player = %p, "client too slow or gone, dropping");
            self.clients.remove(&p);
            self.drop_player(&p);
        }
    }

    fn drop_player(&mut self, player: &str) {
        self.grace.remove(player);
        if let Some(s) = self.session.as_mut() {
            let now = self.last_now;
            if let Ok(events) = s.remove_player(player, now) {
                self.emit(events);
            }
        } else {
            self.lobby.retain(|p| p != player);
            if self.lobby.is_empty() {
                self.done = true;
            }
        }
    }

    fn current_state(&self) -> Option<ServerMessage> {
        let s = self.session.as_ref()?;
        let Phase::Playing(run) = s.phase() else { return None };
        Some(ServerMessage::State {
            puzzle: run.id,
            board: run.current_board,
            difficulty: run.difficulty,
            move_count: run.move_count,
            round: run.round.id,
            deadline_ms: run.round.deadline,
        })
    }

    fn start(&mut self) {
        let now = self.now();
        let players = std::mem::take(&mut self.lobby);
        match Session::start(self.id.clone(), self.cfg.clone(), players, now, self.hub.table.clone()) {
            Ok((session, events)) => {
                let header = LogHeader::new(self.id.clone(), &self.cfg);
                match LogWriter::create_in_dir(&self.hub.config.log_dir, &header, true) {
                    Ok(w) => self.writer = Some(w),
                    Err(e) => warn!(session = %self.id, "cannot open log: {e}"),
                }
                self.session = Some(session);
                info!(session = %self.id, "session started");
                self.emit(events);
            }
            Err(e) => {
                warn!(session = %self.id, "cannot start: {e}");
                let msg = ServerMessage::error(e.code(), e.to_string());
                for c in self.clients.values() {
                    let _ = c.out.try_send(msg.to_line());
                }
                self.done = true;
            }
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join { name, reclaim, conn, out, reply } => {
                if let Some(p) = reclaim.filter(|p| self.grace.contains_key(p)) {
                    self.grace.remove(&p);
                    self.clients.insert(p.clone(), Client { out, conn });
                    let _ = reply.send(Ok(p.clone()));
                    self.welcome(&p);
                    return;
                }
                let solo = self.cfg.mode == Mode::Solo;
                if solo && (self.session.is_some() || !self.lobby.is_empty()) {
                    let _ = reply.send(Err(ServerMessage::error("session_unavailable", "solo sessions take one player")));
                    return;
                }
                self.next_player += 1;
                let player = format!("p{}", self.next_player);
                debug!(session = %self.id, %player, %name, "join");
                if let Some(s) = self.session.as_mut() {
                    let now = self.last_now;
                    match s.add_player(&player, now) {
                        Ok(events) => {
                            self.clients.insert(player.clone(), Client { out, conn });
                            let _ = reply.send(Ok(player.clone()));
                            self.welcome(&player);
                            self.emit(events);
                        }
                        Err(e) => {
                            let _ = reply.send(Err(ServerMessage::error(e.code(), e.to_string())));
                        }
                    }
                } else {
                    self.clients.insert(player.clone(), Client { out, conn });
                    self.lobby.push(player.clone());
                    let _ = reply.send(Ok(player.clone()));
                    self.welcome(&player);
                    if solo || self.lobby.len() >= self.hub.config.group_size {
                        self.start();
                    }
                }
            }
            Command::Vote { player, round, tile, as_move } => {
                let Some(s) = self.session.as_mut() else {
                    self.send_to(&player, &ServerMessage::error("not_started", "waiting for players"));
                    return;
                };
                if as_move != (self.cfg.mode == Mode::Solo) {
                    let detail = if as_move { "use vote in group sessions" } else { "use move in solo sessions" };
                    self.send_to(&player, &ServerMessage::error("wrong_mode", detail));
                    return;
                }
                let now = self.last_now;
                match s.submit_vote(&player, round, tile, now) {
                    Ok(events) => self.emit(events),
                    Err(e) => self.send_to(&player, &ServerMessage::error(e.code(), e.to_string())),
                }
            }
            Command::Leave { player, conn } => {
                if self.clients.get(&player).is_none_or(|c| c.conn != conn) {
                    return;
                }
                self.clients.remove(&player);
                if self.session.is_some() && self.hub.config.grace_ms > 0 {
                    let until = self.last_now + self.hub.config.grace_ms;
                    self.grace.insert(player, until);
                } else {
                    self.drop_player(&player);
                }
            }
        }
    }

    /// Greets a newly attached client with its id and the current puzzle.
    fn welcome(&mut self, player: &str) {
        let joined = ServerMessage::Joined { player: player.to_string(), session: self.id.clone(), config: self.cfg.clone() };
        self.send_to(player, &joined);
        if let Some(state) = self.current_state() {
            self.send_to(player, &state);
        }
    }
}

/// A bound server. Call [`Server::run`] to accept connections.
pub struct Server {
    listener: TcpListener,
    hub: Hub,
    conns: AtomicU64,
}

impl Server {
    pub async fn bind(addr: &str, config: ServerConfig, table: Arc<DistanceTable>) -> Result<Server, ServerError> {
        std::fs::create_dir_all(&config.log_dir)?;
        let listener =
            TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr: addr.to_string(), source })?;
        let hub = Hub { state: Arc::default(), config: Arc::new(config), table };
        Ok(Server { listener, hub, conns: AtomicU64::new(0) })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> Result<(), ServerError> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let conn = self.conns.fetch_add(1, Ordering::Relaxed) + 1;
            let hub = self.hub.clone();
            tokio::spawn(async move {
                if let Err(e) = serve_connection(stream, hub, conn).await {
                    debug!(%peer, "connection ended: {e}");
                }
            });
        }
    }
}

async fn serve_connection(stream: TcpStream, hub: Hub, conn: u64) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut buf = [0u8; 4];
    let mut n = 0;
    for _ in 0..200 {
        n = stream.peek(&mut buf).await?;
        if n == 0 || n >= 4 || buf[..n].contains(&b'\n') {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    if n == 0 {
        return Ok(());
    }
    if &buf[..n] == b"GET " {
        serve_websocket(stream, hub, conn).await
    } else {
        serve_lines(stream, hub, conn).await
    }
}

async fn serve_lines(stream: TcpStream, hub: Hub, conn: u64) -> std::io::Result<()> {
    let (read, mut write) = stream.into_split();
    let (in_tx, in_rx) = mpsc::channel::<String>(64);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(hub.config.client_queue);
    let send_timeout = Duration::from_millis(hub.config.send_timeout_ms);
    let reader = tokio::spawn(async move {
        let mut lines = BufReader::new(read).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            if in_tx.send(line).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(mut line) = out_rx.recv().await {
            line.push('\n');
            match tokio::time::timeout(send_timeout, write.write_all(line.as_bytes())).await {
                Ok(Ok(())) => {}
                _ => break,
            }
        }
        let _ = write.shutdown().await;
    });
    client_loop(&hub, conn, in_rx, out_tx, None).await;
    reader.abort();
    let _ = writer.await;
    Ok(())
}

#[allow(clippy::result_large_err)]
async fn serve_websocket(stream: TcpStream, hub: Hub, conn: u64) -> std::io::Result<()> {
    let mut query = None;
    let callback = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() != "/ws" {
            let mut err = ErrorResponse::new(Some("not found".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            return Err(err);
        }
        query = Some(req.uri().query().unwrap_or("").to_string());
        Ok(resp)
    };
    let ws = tokio_tungstenite::accept_hdr_async(stream, callback).await.map_err(std::io::Error::other)?;
    let query = query.unwrap_or_default();
    let params: HashMap<String, String> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
    let initial = (params.contains_key("name") || params.contains_key("mode") || params.contains_key("session")).then(|| {
        ClientMessage::Join {
            mode: params.get("mode").and_then(|m| m.parse().ok()),
            session: params.get("session").cloned(),
            name: params.get("name").cloned(),
            player: params.get("player").cloned(),
        }
    });
    let (mut sink, mut source) = ws.split();
    let (in_tx, in_rx) = mpsc::channel::<String>(64);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(hub.config.client_queue);
    let send_timeout = Duration::from_millis(hub.config.send_timeout_ms);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = source.next().await {
            match msg {
                Message::Text(t) => {
                    if in_tx.send(t.as_str().to_string()).await.is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            match tokio::time::timeout(send_timeout, sink.send(Message::text(line))).await {
                Ok(Ok(())) => {}
                _ => break,
            }
        }
        let _ = sink.close().await;
    });
    client_loop(&hub, conn, in_rx, out_tx, initial).await;
    reader.abort();
    let _ = writer.await;
    Ok(())
}

struct Membership {
    tx: mpsc::Sender<Command>,
    player: String,
}

/// Reads client messages until the client leaves, its outbound queue dies or
/// it sends too many bad messages in a row.
async fn client_loop(
    hub: &Hub,
    conn: u64,
    mut incoming: mpsc::Receiver<String>,
    out: mpsc::Sender<String>,
    initial: Option<ClientMessage>,
) {
    let mut member: Option<Membership> = None;
    let mut bad = 0;
    if let Some(join) = initial {
        handle_message(hub, conn, join, &out, &mut member).await;
    }
    loop {
        let line = tokio::select! {
            line = incoming.recv() => line,
            _ = out.closed() => None,
        };
        let Some(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ClientMessage>(&line) {
            Ok(msg) => {
                bad = 0;
                handle_message(hub, conn, msg, &out, &mut member).await;
            }
            Err(e) => {
                bad += 1;
                let _ = out.try_send(ServerMessage::error("bad_message", e.to_string()).to_line());
                if bad >= hub.config.max_bad_messages {
                    break;
                }
            }
        }
    }
    if let Some(m) = member {
        let _ = m.tx.send(Command::Leave { player: m.player, conn }).await;
    }
}

async fn handle_message(
    hub: &Hub,
    conn: u64,
    msg: ClientMessage,
    out: &mpsc::Sender<String>,
    member: &mut Option<Membership>,
) {
    let reply_err = |m: ServerMessage| {
        let _ = out.try_send(m.to_line());
    };
    match msg {
        ClientMessage::Join { mode, session, name, player } => {
            if member.is_some() {
                return reply_err(ServerMessage::error("already_joined", "this connection is already in a session"));
            }
            let (_, tx) = match hub.route(mode, session.as_deref()) {
                Ok(r) => r,
                Err(e) => return reply_err(e),
            };
            let (reply, wait) = oneshot::channel();
            let cmd = Command::Join { name: name.unwrap_or_default(), reclaim: player, conn, out: out.clone(), reply };
            if tx.send(cmd).await.is_err() {
                return reply_err(ServerMessage::error("session_ended", "the session has ended"));
            }
            match wait.await {
                Ok(Ok(player)) => *member = Some(Membership { tx, player }),
                Ok(Err(e)) => reply_err(e),
                Err(_) => reply_err(ServerMessage::error("session_ended", "the session has ended")),
            }
        }
        ClientMessage::Vote { round, tile } => forward(member, round, tile, false, out).await,
        ClientMessage::Move { tile } => forward(member, None, tile, true, out).await,
    }
}

async fn forward(member: &Option<Membership>, round: Option<u64>, tile: u8, as_move: bool, out: &mpsc::Sender<String>) {
    let Some(m) = member else {
        let _ = out.try_send(ServerMessage::error("not_joined", "send join first").to_line());
        return;
    };
    let cmd = Command::Vote { player: m.player.clone(), round, tile, as_move };
    if m.tx.send(cmd).await.is_err() {
        let _ = out.try_send(ServerMessage::error("session_ended", "the session has ended").to_line());
    }
}

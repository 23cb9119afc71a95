//! Discrete-event simulation of the experiment with synthetic voters.
//!
//! Agents drive the same [`Session`] engine as the live server under a
//! virtual clock: the loop jumps from one scheduled vote or engine deadline
//! to the next, so a 30 minute session runs in milliseconds.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{build_report, AnalyticsError, MetricsReport, ReportOptions};
use crate::board::{Board, Tile};
use crate::engine::{EngineError, Event, Mode, Session, SessionConfig, Stamped, TileCounts};
use crate::oracle::DistanceTable;
use crate::persistence::{EventLog, LogError, LogHeader};
use crate::seed::{self, streams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad agent profile: {0}")]
    BadProfile(String),
    #[error("bad plan: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// Delay before an agent reacts to a tally that shows a different leader.
const REACTION_MS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    /// Probability of voting for a distance-decreasing move.
    pub skill: f64,
    /// Seconds from round open until the vote is cast, sampled uniformly.
    pub latency: (f64, f64),
    /// Probability of switching to the tally leader when it differs.
    pub persistence: f64,
    pub seed: u64,
}

impl AgentProfile {
    pub fn new(name: impl Into<String>, skill: f64, latency: (f64, f64), seed: u64) -> Self {
        AgentProfile { name: name.into(), skill, latency, persistence: 0.0, seed }
    }

    pub fn validate(&self, round_seconds: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadProfile(format!("{}: {m}", self.name)));
        if !(0.0..=1.0).contains(&self.skill) {
            return bad(format!("skill {} outside [0, 1]", self.skill));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad(format!("persistence {} outside [0, 1]", self.persistence));
        }
        let (lo, hi) = self.latency;
        if !(0.0 <= lo && lo <= hi && hi <= round_seconds) {
            return bad(format!("latency {lo}..{hi} must satisfy 0 <= min <= max <= {round_seconds}"));
        }
        Ok(())
    }

    fn latency_ms(&self, rng: &mut ChaCha8Rng) -> u64 {
        let lo = (self.latency.0 * 1000.0).round() as u64;
        let hi = (self.latency.1 * 1000.0).round() as u64;
        rng.gen_range(lo..=hi)
    }
}

/// Most-voted tile, lowest tile on ties.
fn leader(tally: &TileCounts) -> Option<Tile> {
    tally.iter().fold(None, |acc: Option<(Tile, u32)>, (&t, &c)| match acc {
        Some((_, best)) if best >= c => acc,
        _ if c > 0 => Some((t, c)),
        _ => acc,
    })
    .map(|(t, _)| t)
}

/// Picks a move: with probability `skill` a uniformly chosen move that brings
/// the board closer to the goal, otherwise any legal move. When a tally with a
/// leader is shown, the agent adopts the leader with probability
/// `persistence`.
pub fn agent_decide(
    profile: &AgentProfile,
    board: &Board,
    tally: Option<&TileCounts>,
    table: &DistanceTable,
    rng: &mut ChaCha8Rng,
) -> Tile {
    let legal = board.legal_moves();
    let d = table.distance(board).expect("solvable board");
    let closer: Vec<Tile> = legal
        .iter()
        .copied()
        .filter(|&m| table.distance(&board.apply_move(m).expect("legal")).expect("solvable") < d)
        .collect();
    let pool = if !closer.is_empty() && rng.gen_bool(profile.skill) { &closer } else { &legal };
    let pick = *pool.choose(rng).expect("every board has a legal move");
    match tally.and_then(leader) {
        Some(top) if top != pick && profile.persistence > 0.0 && rng.gen_bool(profile.persistence) => top,
        _ => pick,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub agents: Vec<AgentProfile>,
    /// Shared by both conditions; the mode field is overridden.
    pub config: SessionConfig,
    pub trials: u32,
    pub seed: u64,
}

impl ExperimentPlan {
    /// Agents named `agent-1..` with the given skills and a shared latency range.
    pub fn with_skills(skills: &[f64], latency: (f64, f64), config: SessionConfig, trials: u32, seed: u64) -> Self {
        let agents = skills
            .iter()
            .enumerate()
            .map(|(i, &p)| AgentProfile::new(format!("agent-{}", i + 1), p, latency, i as u64 + 1))
            .collect();
        ExperimentPlan { agents, config, trials, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.agents.is_empty() {
            return Err(SimError::BadPlan("no agents".into()));
        }
        let mut names: Vec<&str> = self.agents.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::BadPlan("agent names must be unique".into()));
        }
        self.config.validate()?;
        for a in &self.agents {
            a.validate(self.config.round_seconds)?;
        }
        Ok(())
    }

    /// Session config for one trial: the puzzle seed depends on the trial only,
    /// so both conditions see the same puzzle sequence.
    pub fn trial_config(&self, mode: Mode, trial: u32) -> SessionConfig {
        SessionConfig { rng_seed: seed::derive(self.seed, streams::TRIAL, trial as u64), ..self.config.clone() }
            .with_mode(mode)
    }

    fn agent_rng(&self, agent: &AgentProfile, trial: u32) -> ChaCha8Rng {
        let trial_seed = seed::derive(self.seed, streams::TRIAL, trial as u64);
        ChaCha8Rng::seed_from_u64(seed::derive(trial_seed, streams::AGENT, agent.seed))
    }
}

pub fn session_id(mode: Mode, trial: u32, agent: Option<&str>) -> String {
    match agent {
        Some(name) => format!("t{trial:03}-{}-{name}", mode.as_str()),
        None => format!("t{trial:03}-{}", mode.as_str()),
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    at: u64,
    order: u64,
    agent: usize,
    round: u64,
    /// Set for re-votes that adopt the tally leader.
    tile: Option<Tile>,
}

struct Runner<'a> {
    agents: Vec<&'a AgentProfile>,
    rngs: Vec<ChaCha8Rng>,
    table: &'a DistanceTable,
    session: Session,
    log: EventLog,
    queue: BinaryHeap<Reverse<Pending>>,
    order: u64,
    votes: BTreeMap<usize, Tile>,
    reacted: Vec<bool>,
    tally: Option<TileCounts>,
}

impl Runner<'_> {
    fn schedule(&mut self, at: u64, agent: usize, round: u64, tile: Option<Tile>) {
        self.order += 1;
        self.queue.push(Reverse(Pending { at, order: self.order, agent, round, tile }));
    }

    fn absorb(&mut self, events: Vec<Stamped>) {
        for s in &events {
            match &s.event {
                Event::RoundOpened { round, .. } => {
                    self.votes.clear();
                    self.tally = None;
                    self.reacted = vec![false; self.agents.len()];
                    for i in 0..self.agents.len() {
                        if self.session.participants().contains(&self.agents[i].name) {
                            let lat = self.agents[i].latency_ms(&mut self.rngs[i]);
                            self.schedule(s.ts_ms + lat, i, *round, None);
                        }
                    }
                }
                Event::VoteTally { round, counts } => {
                    self.tally = Some(counts.clone());
                    if let Some(top) = leader(counts) {
                        for i in 0..self.agents.len() {
                            let a = self.agents[i];
                            let differs = self.votes.get(&i).is_some_and(|&v| v != top);
                            if differs && !self.reacted[i] && a.persistence > 0.0 {
                                self.reacted[i] = true;
                                if self.rngs[i].gen_bool(a.persistence) {
                                    self.schedule(s.ts_ms + REACTION_MS, i, *round, Some(top));
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        self.log.extend_stamped(events);
    }

    fn run(mut self) -> Result<EventLog, SimError> {
        loop {
            let due = self.session.next_due();
            let next_vote = self.queue.peek().map(|Reverse(p)| p.at);
            match (due, next_vote) {
                (None, _) => break,
                (Some(d), Some(v)) if v < d => {
                    let Reverse(p) = self.queue.pop().expect("peeked");
                    let Some(run) = self.session.puzzle() else { continue };
                    if run.round.id != p.round {
                        continue;
                    }
                    let board = run.current_board;
                    let tile = match p.tile {
                        Some(t) => t,
                        None => {
                            let shown = if self.session.config().feedback_enabled && self.session.config().mode == Mode::Group {
                                Some(self.tally.clone().unwrap_or_default())
                            } else {
                                None
                            };
                            agent_decide(self.agents[p.agent], &board, shown.as_ref(), self.table, &mut self.rngs[p.agent])
                        }
                    };
                    self.votes.insert(p.agent, tile);
                    let events = self.session.submit_vote(&self.agents[p.agent].name, Some(p.round), tile.get(), p.at)?;
                    self.absorb(events);
                }
                (Some(d), _) => {
                    let events = self.session.tick(d);
                    self.absorb(events);
                }
            }
        }
        Ok(self.log)
    }
}

fn run_session(
    plan: &ExperimentPlan,
    mode: Mode,
    trial: u32,
    agents: Vec<&AgentProfile>,
    table: &Arc<DistanceTable>,
) -> Result<EventLog, SimError> {
    let id = session_id(mode, trial, (mode == Mode::Solo).then(|| agents[0].name.as_str()));
    let cfg = plan.trial_config(mode, trial);
    let names: Vec<String> = agents.iter().map(|a| a.name.clone()).collect();
    let (session, events) = Session::start(id.clone(), cfg.clone(), names, 0, table.clone())?;
    let rngs = agents.iter().map(|a| plan.agent_rng(a, trial)).collect();
    let mut runner = Runner {
        reacted: vec![false; agents.len()],
        agents,
        rngs,
        table,
        session,
        log: EventLog::new(LogHeader::new(id, &cfg).with_trial(trial)),
        queue: BinaryHeap::new(),
        order: 0,
        votes: BTreeMap::new(),
        tally: None,
    };
    runner.absorb(events);
    runner.run()
}

/// Runs one trial of one condition: a single group session with every agent,
/// or one solo session per agent.
pub fn run_condition(
    plan: &ExperimentPlan,
    condition: Mode,
    trial: u32,
    table: &Arc<DistanceTable>,
) -> Result<Vec<EventLog>, SimError> {
    plan.validate()?;
    match condition {
        Mode::Group => Ok(vec![run_session(plan, Mode::Group, trial, plan.agents.iter().collect(), table)?]),
        Mode::Solo => plan.agents.iter().map(|a| run_session(plan, Mode::Solo, trial, vec![a], table)).collect(),
    }
}

pub struct Experiment {
    /// Every session log, sorted by session id.
    pub logs: Vec<EventLog>,
    pub report: MetricsReport,
}

impl Experiment {
    /// Writes one `<session_id>.jsonl` per session plus `report.txt` and
    /// `report.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(LogError::from)?;
        for log in &self.logs {
            log.write_to_dir(dir)?;
        }
        std::fs::write(dir.join("report.txt"), self.report.to_text()).map_err(LogError::from)?;
        std::fs::write(dir.join("report.csv"), self.report.to_csv()).map_err(LogError::from)?;
        Ok(())
    }
}

/// Runs every trial of both conditions and builds the report. Trials run on
/// separate threads; results are merged in session id order.
pub fn run_experiment(
    plan: &ExperimentPlan,
    table: &Arc<DistanceTable>,
    options: ReportOptions,
) -> Result<Experiment, SimError> {
    plan.validate()?;
    let per_trial: Vec<Result<Vec<EventLog>, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (1..=plan.trials)
            .map(|trial| {
                scope.spawn(move || {
                    let mut logs = run_condition(plan, Mode::Group, trial, table)?;
                    logs.extend(run_condition(plan, Mode::Solo, trial, table)?);
                    Ok(logs)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut logs = Vec::new();
    for r in per_trial {
        logs.extend(r?);
    }
    logs.sort_by(|a, b| a.header.session_id.cmp(&b.header.session_id));
    let report = build_report(&logs, Some(table), options)?;
    Ok(Experiment { logs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{extract_records, Bucket};
    use crate::persistence::{replay, verify_reenactment};
    use crate::testutil::table;

    fn plan(skills: &[f64], trials: u32, seed: u64) -> ExperimentPlan {
        ExperimentPlan::with_skills(skills, (2.0, 20.0), SessionConfig::default(), trials, seed)
    }

    fn moves_of(log: &EventLog) -> Vec<(u64, Option<u8>)> {
        log.records
            .iter()
            .filter_map(|r| match &r.event {
                Event::MoveExecuted { tile, .. } => Some((r.ts_ms, Some(tile.get()))),
                Event::Pass { .. } => Some((r.ts_ms, None)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn perfect_agent_always_descends() {
        let tb = table();
        let a = AgentProfile::new("a", 1.0, (1.0, 1.0), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in 0..200 {
            let board = tb.generate(1 + s % 20, s as u64).unwrap();
            let m = agent_decide(&a, &board, None, &tb, &mut rng);
            assert_eq!(tb.distance(&board.apply_move(m).unwrap()).unwrap() + 1, tb.distance(&board).unwrap());
        }
    }

    #[test]
    fn zero_skill_is_uniform_over_legal_moves() {
        let tb = table();
        let a = AgentProfile::new("a", 0.0, (1.0, 1.0), 1);
        let board = Board::goal().apply_move(Tile::new(8).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = BTreeMap::new();
        let n = 8000;
        for _ in 0..n {
            *counts.entry(agent_decide(&a, &board, None, &tb, &mut rng)).or_insert(0) += 1;
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), board.legal_moves());
        let expect = n as f64 / counts.len() as f64;
        for &c in counts.values() {
            assert!((c as f64 - expect).abs() < 0.1 * expect, "{counts:?}");
        }
    }

    #[test]
    fn persistent_agent_follows_the_leader() {
        let tb = table();
        let mut a = AgentProfile::new("a", 1.0, (1.0, 1.0), 1);
        a.persistence = 1.0;
        let board = Board::goal().apply_move(Tile::new(8).unwrap()).unwrap();
        let tally: TileCounts = [(Tile::new(7).unwrap(), 3)].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(agent_decide(&a, &board, Some(&tally), &tb, &mut rng).get(), 7);
    }

    #[test]
    fn perfect_agents_play_optimally_in_both_conditions() {
        let tb = table();
        let p = plan(&[1.0, 1.0, 1.0], 1, 3);
        for mode in [Mode::Solo, Mode::Group] {
            for log in run_condition(&p, mode, 1, &tb).unwrap() {
                let (records, _) = extract_records(&log, Some(&tb)).unwrap();
                assert!(records.len() > 5);
                assert!(records.iter().all(|r| r.quality == 0 && r.moves == r.difficulty));
            }
        }
    }

    #[test]
    fn group_round_lasts_until_the_slowest_vote() {
        let tb = table();
        let p = plan(&[0.55, 0.65, 0.75, 0.85, 0.95], 1, 11);
        let log = &run_condition(&p, Mode::Group, 1, &tb).unwrap()[0];
        let mut open = BTreeMap::new();
        let mut last_vote: BTreeMap<u64, (u64, usize)> = BTreeMap::new();
        let mut checked = 0;
        for r in &log.records {
            match &r.event {
                Event::RoundOpened { round, .. } => {
                    open.insert(*round, r.ts_ms);
                }
                Event::VoteCast { round, .. } => {
                    let e = last_vote.entry(*round).or_default();
                    *e = (r.ts_ms, e.1 + 1);
                }
                Event::MoveExecuted { round, .. } => {
                    let (ts, n) = last_vote[round];
                    assert_eq!(n, 5);
                    assert_eq!(r.ts_ms, ts);
                    let lat = ts - open[round];
                    assert!((2_000..=20_000).contains(&lat));
                    checked += 1;
                }
                Event::Pass { .. } => panic!("no round can time out with latencies under 30 s"),
                _ => {}
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn runs_are_deterministic_and_reenact() {
        let tb = table();
        let p = plan(&[0.6, 0.9], 2, 7);
        for mode in [Mode::Group, Mode::Solo] {
            let a = run_condition(&p, mode, 2, &tb).unwrap();
            let b = run_condition(&p, mode, 2, &tb).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_jsonl(), y.to_jsonl());
                replay(x, Some(&tb)).unwrap();
                verify_reenactment(x, tb.clone()).unwrap();
            }
        }
        let other = run_condition(&plan(&[0.6, 0.9], 2, 8), Mode::Group, 2, &tb).unwrap();
        assert_ne!(other[0].to_jsonl(), run_condition(&p, Mode::Group, 2, &tb).unwrap()[0].to_jsonl());
    }

    #[test]
    fn single_agent_moves_identically_alone_and_in_a_group() {
        let tb = table();
        let p = plan(&[0.7], 1, 21);
        let group = run_condition(&p, Mode::Group, 1, &tb).unwrap();
        let solo = run_condition(&p, Mode::Solo, 1, &tb).unwrap();
        let g = moves_of(&group[0]);
        assert!(g.len() > 20);
        assert_eq!(g, moves_of(&solo[0]));
    }

    #[test]
    fn conditions_share_the_puzzle_sequence() {
        let tb = table();
        let p = plan(&[0.8, 0.9], 1, 4);
        let first_board = |log: &EventLog| {
            log.records.iter().find_map(|r| match &r.event {
                Event::PuzzleIssued { board, .. } => Some(*board),
                _ => None,
            })
        };
        let g = run_condition(&p, Mode::Group, 1, &tb).unwrap();
        for s in run_condition(&p, Mode::Solo, 1, &tb).unwrap() {
            assert_eq!(first_board(&s), first_board(&g[0]));
        }
    }

    #[test]
    fn solo_quality_does_not_rise_with_skill() {
        let tb = table();
        let grid = [0.2, 0.4, 0.6, 0.8, 1.0];
        let mut means = Vec::new();
        for &skill in &grid {
            let p = plan(&[skill], 8, 99);
            let mut q = Vec::new();
            for trial in 1..=8 {
                for log in run_condition(&p, Mode::Solo, trial, &tb).unwrap() {
                    let (records, _) = extract_records(&log, None).unwrap();
                    q.extend(records.iter().filter(|r| Bucket::Easy.contains(r.difficulty)).map(|r| r.quality as f64));
                }
            }
            means.push(q.iter().sum::<f64>() / q.len() as f64);
        }
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 0.25, "{means:?}");
        }
        assert_eq!(*means.last().unwrap(), 0.0);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let cfg = SessionConfig::default();
        assert!(AgentProfile::new("a", 1.5, (1.0, 2.0), 0).validate(30.0).is_err());
        assert!(AgentProfile::new("a", 0.5, (3.0, 2.0), 0).validate(30.0).is_err());
        assert!(AgentProfile::new("a", 0.5, (1.0, 31.0), 0).validate(30.0).is_err());
        let mut p = ExperimentPlan::with_skills(&[0.5, 0.5], (1.0, 2.0), cfg, 1, 0);
        p.agents[1].name = "agent-1".into();
        assert!(matches!(p.validate(), Err(SimError::BadPlan(_))));
    }
}

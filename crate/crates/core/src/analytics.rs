//! Solve records, group vs. member aggregates and t-tests over event logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::Mode;
use crate::oracle::{Band, DistanceTable};
use crate::persistence::{replay, EventLog, LogError};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid record: {moves} moves is below the optimum {optimal}")]
    InvalidRecord { moves: u32, optimal: u32 },
    #[error("no solo records in band {0}")]
    EmptyBand(String),
    #[error("need at least two samples per side, got {left} and {right}")]
    InsufficientData { left: usize, right: usize },
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Moves beyond the optimum. Zero is an optimal solution.
pub fn solution_quality(moves: u32, optimal: u32) -> Result<u32, AnalyticsError> {
    moves.checked_sub(optimal).ok_or(AnalyticsError::InvalidRecord { moves, optimal })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveRecord {
    pub session_id: String,
    pub condition: Mode,
    /// Player id for solo records, session id for group records.
    pub subject: String,
    pub trial: Option<u32>,
    pub puzzle: u64,
    pub difficulty: u32,
    pub moves: u32,
    pub optimal: u32,
    pub quality: u32,
    pub time_s: f64,
}

impl SolveRecord {
    pub fn band(&self) -> Band {
        Band::of(self.difficulty)
    }
}

/// A difficulty band or all records together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Bucket {
    Easy,
    Hard,
    Beyond,
    Overall,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Hard => "hard",
            Bucket::Beyond => "beyond",
            Bucket::Overall => "overall",
        }
    }

    pub fn contains(self, difficulty: u32) -> bool {
        match self {
            Bucket::Overall => true,
            Bucket::Easy => Band::of(difficulty) == Band::Easy,
            Bucket::Hard => Band::of(difficulty) == Band::Hard,
            Bucket::Beyond => Band::of(difficulty) == Band::Beyond,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    Moves,
    Quality,
    Time,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Moves => "mean_moves",
            Metric::Quality => "mean_quality",
            Metric::Time => "mean_time_s",
        }
    }

    pub fn of(self, r: &SolveRecord) -> f64 {
        match self {
            Metric::Moves => r.moves as f64,
            Metric::Quality => r.quality as f64,
            Metric::Time => r.time_s,
        }
    }
}

/// How per-player solo values are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum Aggregation {
    /// Each player's mean per puzzle, then the mean (or minimum) over players.
    #[default]
    PerPuzzleMean,
    /// Each player's total over the band, summed and divided by the number of
    /// players (or the minimum total).
    Summed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberAggregate {
    pub average_member: f64,
    pub best_member: f64,
    pub best_subject: String,
    pub players: usize,
    /// Players with records elsewhere but none in this bucket.
    pub excluded: Vec<String>,
}

/// Average and best solo member for one bucket and metric.
pub fn aggregate_solo(
    records: &[SolveRecord],
    bucket: Bucket,
    metric: Metric,
    aggregation: Aggregation,
) -> Result<MemberAggregate, AnalyticsError> {
    let mut per_player: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut everyone = BTreeSet::new();
    for r in records.iter().filter(|r| r.condition == Mode::Solo) {
        everyone.insert(r.subject.as_str());
        if bucket.contains(r.difficulty) {
            let e = per_player.entry(&r.subject).or_default();
            e.0 += metric.of(r);
            e.1 += 1;
        }
    }
    if per_player.is_empty() {
        return Err(AnalyticsError::EmptyBand(bucket.as_str().into()));
    }
    let values: Vec<(&str, f64)> = per_player
        .iter()
        .map(|(&p, &(sum, n))| match aggregation {
            Aggregation::PerPuzzleMean => (p, sum / n as f64),
            Aggregation::Summed => (p, sum),
        })
        .collect();
    let average = values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64;
    let (best_subject, best) = values
        .iter()
        .fold(None::<(&str, f64)>, |acc, &(p, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((p, v)),
        })
        .expect("non-empty");
    let excluded = everyone.into_iter().filter(|p| !per_player.contains_key(p)).map(String::from).collect();
    Ok(MemberAggregate {
        average_member: average,
        best_member: best,
        best_subject: best_subject.to_string(),
        players: values.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum TTest {
    #[default]
    Welch,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub significant_at_05: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample t-test of `left` against `right`. Positive t means the left
/// mean is larger.
pub fn compare(left: &[f64], right: &[f64], test: TTest) -> Result<Comparison, AnalyticsError> {
    if left.len() < 2 || right.len() < 2 {
        return Err(AnalyticsError::InsufficientData { left: left.len(), right: right.len() });
    }
    let (n1, n2) = (left.len() as f64, right.len() as f64);
    let (m1, v1) = mean_var(left);
    let (m2, v2) = mean_var(right);
    let (se, df) = match test {
        TTest::Student => {
            let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
            ((pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), n1 + n2 - 2.0)
        }
        TTest::Welch => {
            let (a, b) = (v1 / n1, v2 / n2);
            let df = if a + b > 0.0 {
                (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0))
            } else {
                n1 + n2 - 2.0
            };
            ((a + b).sqrt(), df)
        }
    };
    let diff = m1 - m2;
    let (t, p) = if se > 0.0 {
        let t = diff / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(diff), 0.0)
    };
    Ok(Comparison { t, df, p, significant_at_05: p < 0.05 })
}

/// Replays a log and pulls one record per solved puzzle, plus the number of
/// puzzles left unsolved.
pub fn extract_records(
    log: &EventLog,
    table: Option<&DistanceTable>,
) -> Result<(Vec<SolveRecord>, usize), AnalyticsError> {
    let session = replay(log, table)?;
    let subject = match session.mode {
        Mode::Solo => session.players.first().cloned().unwrap_or_default(),
        Mode::Group => session.session_id.clone(),
    };
    let mut out = Vec::new();
    let mut unsolved = 0;
    for p in &session.puzzles {
        let Some(s) = &p.solved else {
            unsolved += 1;
            continue;
        };
        out.push(SolveRecord {
            session_id: session.session_id.clone(),
            condition: session.mode,
            subject: subject.clone(),
            trial: session.trial,
            puzzle: p.puzzle,
            difficulty: p.difficulty,
            moves: s.moves,
            optimal: s.optimal,
            quality: solution_quality(s.moves, s.optimal)?,
            time_s: s.elapsed_s,
        });
    }
    Ok((out, unsolved))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReportOptions {
    pub ttest: TTest,
    pub aggregation: Aggregation,
}

/// What one t-test sample point stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SampleUnit {
    /// One value per solved puzzle.
    Record,
    /// One value per trial: the trial's group mean or member aggregate.
    Trial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Means {
    pub n: usize,
    pub moves: f64,
    pub quality: f64,
    pub time_s: f64,
}

fn means<'a>(records: impl Iterator<Item = &'a SolveRecord>) -> Option<Means> {
    let (mut n, mut m, mut q, mut t) = (0usize, 0.0, 0.0, 0.0);
    for r in records {
        n += 1;
        m += r.moves as f64;
        q += r.quality as f64;
        t += r.time_s;
    }
    (n > 0).then(|| Means { n, moves: m / n as f64, quality: q / n as f64, time_s: t / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Members {
    pub players: usize,
    pub excluded: Vec<String>,
    pub average: Means,
    /// The member with the lowest mean quality, and their values.
    pub best_subject: String,
    pub best: Means,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub bucket: Bucket,
    pub group: Option<Means>,
    pub solo: Option<Means>,
    pub members: Option<Members>,
    pub group_vs_average_quality: Option<Comparison>,
    pub group_vs_best_quality: Option<Comparison>,
    pub group_vs_average_time: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub options: ReportOptions,
    pub sample_unit: SampleUnit,
    pub sessions: usize,
    pub group_unsolved: usize,
    pub solo_unsolved: usize,
    pub buckets: Vec<BucketReport>,
}

fn members(records: &[SolveRecord], bucket: Bucket, aggregation: Aggregation) -> Option<Members> {
    let agg = |metric| aggregate_solo(records, bucket, metric, aggregation).ok();
    let quality = agg(Metric::Quality)?;
    let moves = agg(Metric::Moves)?;
    let time = agg(Metric::Time)?;
    let best = quality.best_subject.clone();
    let best_means = means(records.iter().filter(|r| {
        r.condition == Mode::Solo && r.subject == best && bucket.contains(r.difficulty)
    }))?;
    let best_means = match aggregation {
        Aggregation::PerPuzzleMean => best_means,
        Aggregation::Summed => {
            let k = best_means.n as f64;
            Means { n: best_means.n, moves: best_means.moves * k, quality: best_means.quality * k, time_s: best_means.time_s * k }
        }
    };
    Some(Members {
        players: quality.players,
        excluded: quality.excluded,
        average: Means {
            n: records.iter().filter(|r| r.condition == Mode::Solo && bucket.contains(r.difficulty)).count(),
            moves: moves.average_member,
            quality: quality.average_member,
            time_s: time.average_member,
        },
        best_subject: best,
        best: best_means,
    })
}

/// Sample vectors for the group side, the average member and the best member.
fn samples(
    records: &[SolveRecord],
    bucket: Bucket,
    metric: Metric,
    unit: SampleUnit,
    aggregation: Aggregation,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_bucket = |r: &&SolveRecord| bucket.contains(r.difficulty);
    match unit {
        SampleUnit::Record => {
            let group = records.iter().filter(in_bucket).filter(|r| r.condition == Mode::Group).map(|r| metric.of(r)).collect();
            let solo: Vec<&SolveRecord> = records.iter().filter(in_bucket).filter(|r| r.condition == Mode::Solo).collect();
            let avg = solo.iter().map(|r| metric.of(r)).collect();
            let best = aggregate_solo(records, bucket, Metric::Quality, aggregation)
                .map(|a| solo.iter().filter(|r| r.subject == a.best_subject).map(|r| metric.of(r)).collect())
                .unwrap_or_default();
            (group, avg, best)
        }
        SampleUnit::Trial => {
            let mut by_trial: BTreeMap<u32, Vec<SolveRecord>> = BTreeMap::new();
            for r in records {
                by_trial.entry(r.trial.unwrap_or(0)).or_default().push(r.clone());
            }
            let (mut group, mut avg, mut best) = (Vec::new(), Vec::new(), Vec::new());
            for trial in by_trial.values() {
                let g: Vec<f64> = trial.iter().filter(in_bucket).filter(|r| r.condition == Mode::Group).map(|r| metric.of(r)).collect();
                if !g.is_empty() {
                    group.push(g.iter().sum::<f64>() / g.len() as f64);
                }
                if let Ok(a) = aggregate_solo(trial, bucket, metric, aggregation) {
                    avg.push(a.average_member);
                }
                if let Ok(q) = aggregate_solo(trial, bucket, Metric::Quality, aggregation) {
                    let mine: Vec<f64> = trial
                        .iter()
                        .filter(in_bucket)
                        .filter(|r| r.condition == Mode::Solo && r.subject == q.best_subject)
                        .map(|r| metric.of(r))
                        .collect();
                    best.push(match aggregation {
                        Aggregation::PerPuzzleMean => mine.iter().sum::<f64>() / mine.len() as f64,
                        Aggregation::Summed => mine.iter().sum::<f64>(),
                    });
                }
            }
            (group, avg, best)
        }
    }
}

/// Replays every log (in session id order) and computes the full report.
pub fn build_report(
    logs: &[EventLog],
    table: Option<&DistanceTable>,
    options: ReportOptions,
) -> Result<MetricsReport, AnalyticsError> {
    let mut sorted: Vec<&EventLog> = logs.iter().collect();
    sorted.sort_by(|a, b| a.header.session_id.cmp(&b.header.session_id));
    let mut records = Vec::new();
    let (mut group_unsolved, mut solo_unsolved) = (0, 0);
    for log in &sorted {
        let (mut recs, unsolved) = extract_records(log, table)?;
        match log.header.mode {
            Mode::Group => group_unsolved += unsolved,
            Mode::Solo => solo_unsolved += unsolved,
        }
        records.append(&mut recs);
    }
    Ok(report_from_records(&records, sorted.len(), group_unsolved, solo_unsolved, options))
}

pub fn report_from_records(
    records: &[SolveRecord],
    sessions: usize,
    group_unsolved: usize,
    solo_unsolved: usize,
    options: ReportOptions,
) -> MetricsReport {
    let trials: BTreeSet<u32> = records.iter().filter_map(|r| r.trial).collect();
    let sample_unit = if trials.len() >= 2 { SampleUnit::Trial } else { SampleUnit::Record };
    let mut buckets = vec![Bucket::Easy, Bucket::Hard];
    if records.iter().any(|r| r.band() == Band::Beyond) {
        buckets.push(Bucket::Beyond);
    }
    buckets.push(Bucket::Overall);
    let buckets = buckets
        .into_iter()
        .map(|bucket| {
            let cmp = |metric, best: bool| {
                let (g, avg, b) = samples(records, bucket, metric, sample_unit, options.aggregation);
                compare(&g, if best { &b } else { &avg }, options.ttest).ok()
            };
            BucketReport {
                bucket,
                group: means(records.iter().filter(|r| r.condition == Mode::Group && bucket.contains(r.difficulty))),
                solo: means(records.iter().filter(|r| r.condition == Mode::Solo && bucket.contains(r.difficulty))),
                members: members(records, bucket, options.aggregation),
                group_vs_average_quality: cmp(Metric::Quality, false),
                group_vs_best_quality: cmp(Metric::Quality, true),
                group_vs_average_time: cmp(Metric::Time, false),
            }
        })
        .collect();
    MetricsReport { options, sample_unit, sessions, group_unsolved, solo_unsolved, buckets }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn comparison_line(label: &str, c: Option<&Comparison>) -> String {
    match c {
        Some(c) => format!(
            "  {label:<28} t = {:>8.3}  df = {:>7.2}  p = {:.4}  {}\n",
            c.t,
            c.df,
            c.p,
            if c.significant_at_05 { "significant" } else { "not significant" }
        ),
        None => format!("  {label:<28} insufficient data\n"),
    }
}

impl MetricsReport {
    pub fn bucket(&self, bucket: Bucket) -> Option<&BucketReport> {
        self.buckets.iter().find(|b| b.bucket == bucket)
    }

    /// True when the best-member quality comparison exists and is not
    /// significant in every bucket.
    pub fn best_member_not_significant(&self) -> Option<bool> {
        let all: Option<Vec<bool>> =
            self.buckets.iter().map(|b| b.group_vs_best_quality.map(|c| !c.significant_at_05)).collect();
        all.map(|v| v.into_iter().all(|x| x))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let head: String = self.buckets.iter().map(|b| format!("{:>10}", b.bucket.as_str())).collect();
        let row = |out: &mut String, label: &str, f: &dyn Fn(&BucketReport) -> Option<f64>| {
            let cells: String = self.buckets.iter().map(|b| format!("{:>10}", cell(f(b)))).collect();
            let _ = writeln!(out, "{label:<18}{cells}");
        };
        let moves_label = match self.options.aggregation {
            Aggregation::PerPuzzleMean => "moves per puzzle",
            Aggregation::Summed => "summed moves",
        };
        for (title, metric) in [
            ("Mean moves", Metric::Moves),
            ("Mean solution quality (moves - optimal)", Metric::Quality),
            ("Mean solution time in seconds", Metric::Time),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(out, "{:<18}{head}", "");
            let pick = move |m: &Means| match metric {
                Metric::Moves => m.moves,
                Metric::Quality => m.quality,
                Metric::Time => m.time_s,
            };
            row(&mut out, "group", &|b| b.group.as_ref().map(pick));
            row(&mut out, "average member", &|b| b.members.as_ref().map(|m| pick(&m.average)));
            if metric != Metric::Time {
                row(&mut out, "best member", &|b| b.members.as_ref().map(|m| pick(&m.best)));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "member aggregation: {moves_label}");
        let _ = writeln!(
            out,
            "sessions: {}  unsolved puzzles: group {}, solo {}",
            self.sessions, self.group_unsolved, self.solo_unsolved
        );
        let unit = match self.sample_unit {
            SampleUnit::Record => "per solved puzzle",
            SampleUnit::Trial => "per trial",
        };
        let test = match self.options.ttest {
            TTest::Welch => "Welch",
            TTest::Student => "Student (pooled)",
        };
        let _ = writeln!(out, "\nComparisons ({test} t-test, samples {unit})");
        for b in &self.buckets {
            let _ = writeln!(out, "{}", b.bucket.as_str());
            out.push_str(&comparison_line("group vs average quality", b.group_vs_average_quality.as_ref()));
            out.push_str(&comparison_line("group vs best quality", b.group_vs_best_quality.as_ref()));
            out.push_str(&comparison_line("group vs average time", b.group_vs_average_time.as_ref()));
        }
        if let Some(flag) = self.best_member_not_significant() {
            let _ = writeln!(
                out,
                "\ngroup vs best member: {}",
                if flag { "no significant difference in any band" } else { "significant difference found" }
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,condition,metric,value\n");
        let mut put = |band: &str, cond: &str, metric: &str, value: String| {
            let _ = writeln!(out, "{band},{cond},{metric},{value}");
        };
        for b in &self.buckets {
            let band = b.bucket.as_str();
            let mut means_rows = |cond: &str, m: &Means| {
                put(band, cond, "n", m.n.to_string());
                put(band, cond, "mean_moves", m.moves.to_string());
                put(band, cond, "mean_quality", m.quality.to_string());
                put(band, cond, "mean_time_s", m.time_s.to_string());
            };
            if let Some(g) = &b.group {
                means_rows("group", g);
            }
            if let Some(s) = &b.solo {
                means_rows("solo_all", s);
            }
            if let Some(m) = &b.members {
                means_rows("solo_average", &m.average);
                means_rows("solo_best", &m.best);
            }
            for (name, c) in [
                ("group_vs_average_quality", &b.group_vs_average_quality),
                ("group_vs_best_quality", &b.group_vs_best_quality),
                ("group_vs_average_time", &b.group_vs_average_time),
            ] {
                if let Some(c) = c {
                    put(band, name, "t", c.t.to_string());
                    put(band, name, "df", c.df.to_string());
                    put(band, name, "p", c.p.to_string());
                    put(band, name, "significant_at_05", c.significant_at_05.to_string());
                }
            }
        }
        out
    }
}

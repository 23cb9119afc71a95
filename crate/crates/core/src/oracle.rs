//! Exact optimal distances for every reachable board, and a generator that
//! samples puzzles of an exact difficulty.
//!
//! The table is built by breadth-first search backward from the goal and is
//! indexed by the board's permutation rank (Lehmer code), so lookups are O(1).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{neighbors, Board, CELLS};

const PERMUTATIONS: usize = 362_880;
const UNREACHABLE: u8 = u8::MAX;
const CACHE_MAGIC: &[u8; 4] = b"SLDT";
const CACHE_VERSION: u16 = 1;

/// Upper bound of the Easy band (inclusive).
pub const EASY_MAX: u32 = 8;
/// Upper bound of the Hard band (inclusive).
pub const HARD_MAX: u32 = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("board {0:?} is not reachable from the goal")]
    Unsolvable(Vec<u8>),
    #[error("no board at difficulty {requested} (valid range 1..={max})")]
    NoSuchDifficulty { requested: u32, max: u32 },
    #[error("distance table cache is invalid: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Easy,
    Hard,
    Beyond,
}

impl Band {
    pub fn of(difficulty: u32) -> Band {
        match difficulty {
            0..=EASY_MAX => Band::Easy,
            9..=HARD_MAX => Band::Hard,
            _ => Band::Beyond,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Easy => "easy",
            Band::Hard => "hard",
            Band::Beyond => "beyond",
        }
    }
}

/// Optimal distance-to-goal for all 181,440 reachable boards.
#[derive(Clone)]
pub struct DistanceTable {
    distance: Vec<u8>,
    by_distance: Vec<Vec<u32>>,
}

impl std::fmt::Debug for DistanceTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistanceTable")
            .field("states", &self.len())
            .field("max_distance", &self.max_distance())
            .finish()
    }
}

impl DistanceTable {
    pub fn build() -> Self {
        let mut distance = vec![UNREACHABLE; PERMUTATIONS];
        let goal = Board::goal();
        distance[rank(goal.cells()) as usize] = 0;
        let mut frontier = vec![*goal.cells()];
        let mut depth = 0u8;
        while !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for cells in &frontier {
                let blank = cells.iter().position(|&c| c == 0).unwrap();
                for n in neighbors(blank) {
                    let mut child = *cells;
                    child.swap(blank, n);
                    let r = rank(&child) as usize;
                    if distance[r] == UNREACHABLE {
                        distance[r] = depth;
                        next.push(child);
                    }
                }
            }
            frontier = next;
        }
        Self::from_distances(distance)
    }

    fn from_distances(distance: Vec<u8>) -> Self {
        let max = distance.iter().copied().filter(|&d| d != UNREACHABLE).max().unwrap_or(0);
        let mut by_distance = vec![Vec::new(); max as usize + 1];
        for (r, &d) in distance.iter().enumerate() {
            if d != UNREACHABLE {
                by_distance[d as usize].push(r as u32);
            }
        }
        DistanceTable { distance, by_distance }
    }

    /// Loads a cached table if `path` holds a valid one, otherwise builds and writes it.
    pub fn load_or_build(path: &Path) -> Result<Self, OracleError> {
        match Self::load(path) {
            Ok(t) => Ok(t),
            Err(_) => {
                let t = Self::build();
                t.save(path)?;
                Ok(t)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(Board::goal().cells())?;
        f.write_all(&self.distance)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let header = 4 + 2 + CELLS;
        if bytes.len() != header + PERMUTATIONS {
            return Err(OracleError::BadCache(format!("unexpected length {}", bytes.len())));
        }
        if &bytes[..4] != CACHE_MAGIC {
            return Err(OracleError::BadCache("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CACHE_VERSION {
            return Err(OracleError::BadCache(format!("version {version}")));
        }
        if &bytes[6..header] != Board::goal().cells() {
            return Err(OracleError::BadCache(format!(
                "goal {:?} does not match {:?}",
                &bytes[6..header],
                Board::goal().cells()
            )));
        }
        let table = Self::from_distances(bytes[header..].to_vec());
        if table.len() != PERMUTATIONS / 2 || table.distance(&Board::goal()) != Some(0) {
            return Err(OracleError::BadCache("table contents inconsistent".into()));
        }
        Ok(table)
    }

    /// Number of reachable states.
    pub fn len(&self) -> usize {
        self.by_distance.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_distance(&self) -> u32 {
        self.by_distance.len().saturating_sub(1) as u32
    }

    pub fn distance(&self, board: &Board) -> Option<u32> {
        match self.distance[rank(board.cells()) as usize] {
            UNREACHABLE => None,
            d => Some(d as u32),
        }
    }

    pub fn optimal_distance(&self, board: &Board) -> Result<u32, OracleError> {
        self.distance(board).ok_or_else(|| OracleError::Unsolvable(board.cells().to_vec()))
    }

    /// Number of boards at exactly `difficulty`.
    pub fn count_at(&self, difficulty: u32) -> usize {
        self.by_distance.get(difficulty as usize).map_or(0, Vec::len)
    }

    /// Uniform sample among boards at exactly `difficulty`; deterministic in `(difficulty, seed)`.
    pub fn generate(&self, difficulty: u32, seed: u64) -> Result<Board, OracleError> {
        let max = self.max_distance();
        let bucket = self
            .by_distance
            .get(difficulty as usize)
            .filter(|_| difficulty >= 1)
            .ok_or(OracleError::NoSuchDifficulty { requested: difficulty, max })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = rng.gen_range(0..bucket.len() as u32) as usize;
        Ok(Board::from_cells_unchecked(unrank(bucket[pick])))
    }

    /// Iterator over every reachable board with its distance.
    pub fn iter(&self) -> impl Iterator<Item = (Board, u32)> + '_ {
        self.by_distance.iter().enumerate().flat_map(|(d, ranks)| {
            ranks.iter().map(move |&r| (Board::from_cells_unchecked(unrank(r)), d as u32))
        })
    }
}

const FACTORIALS: [u32; CELLS] = [40320, 5040, 720, 120, 24, 6, 2, 1, 1];

fn rank(cells: &[u8; CELLS]) -> u32 {
    let mut r = 0;
    for i in 0..CELLS {
        let smaller_after = cells[i + 1..].iter().filter(|&&c| c < cells[i]).count() as u32;
        r += smaller_after * FACTORIALS[i];
    }
    r
}

fn unrank(mut r: u32) -> [u8; CELLS] {
    let mut pool: Vec<u8> = (0..CELLS as u8).collect();
    let mut cells = [0u8; CELLS];
    for i in 0..CELLS {
        let idx = (r / FACTORIALS[i]) as usize;
        r %= FACTORIALS[i];
        cells[i] = pool.remove(idx);
    }
    cells
}

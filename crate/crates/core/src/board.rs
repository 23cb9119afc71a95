//! The 8-puzzle domain model.
//!
//! A [`Board`] is nine cells in row-major order; `0` marks the blank. Moves
//! are named by the tile that slides into the blank, which is how players
//! vote. Boards are plain values: every operation returns a new board.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CELLS: usize = 9;
pub const SIDE: usize = 3;
const BLANK: u8 = 0;

/// Tiles clockwise around the perimeter starting top-left, blank in the center.
const GOAL: [u8; CELLS] = [1, 2, 3, 8, 0, 4, 7, 6, 5];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoardError {
    #[error("board must be a permutation of 0..=8, got {0:?}")]
    NotAPermutation(Vec<u8>),
    #[error("tile {0} is not a tile number (1-8)")]
    BadTile(u8),
    #[error("tile {0} is not adjacent to the blank")]
    IllegalMove(u8),
    #[error("cannot parse board: {0}")]
    Parse(String),
}

/// A tile number 1-8. A move is identified by the tile that slides into the blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Tile(u8);

impl Tile {
    pub fn new(n: u8) -> Result<Self, BoardError> {
        if (1..=8).contains(&n) {
            Ok(Tile(n))
        } else {
            Err(BoardError::BadTile(n))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Tile {
    type Error = BoardError;
    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Tile::new(n)
    }
}

impl From<Tile> for u8 {
    fn from(t: Tile) -> u8 {
        t.0
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A 3x3 configuration. Always a permutation of `0..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Board([u8; CELLS]);

impl Board {
    pub fn new(cells: [u8; CELLS]) -> Result<Self, BoardError> {
        let mut seen = [false; CELLS];
        for &c in &cells {
            let i = c as usize;
            if i >= CELLS || seen[i] {
                return Err(BoardError::NotAPermutation(cells.to_vec()));
            }
            seen[i] = true;
        }
        Ok(Board(cells))
    }

    /// Caller guarantees `cells` is a permutation.
    pub(crate) fn from_cells_unchecked(cells: [u8; CELLS]) -> Self {
        debug_assert!(Board::new(cells).is_ok());
        Board(cells)
    }

    pub fn goal() -> Self {
        Board(GOAL)
    }

    pub fn cells(&self) -> &[u8; CELLS] {
        &self.0
    }

    pub fn blank_index(&self) -> usize {
        self.0.iter().position(|&c| c == BLANK).expect("board invariant: one blank")
    }

    pub fn position_of(&self, tile: Tile) -> usize {
        self.0.iter().position(|&c| c == tile.0).expect("board invariant: every tile present")
    }

    pub fn is_goal(&self) -> bool {
        self.0 == GOAL
    }

    /// Tiles orthogonally adjacent to the blank, in ascending tile order.
    pub fn legal_moves(&self) -> Vec<Tile> {
        let mut tiles: Vec<Tile> = neighbors(self.blank_index()).map(|i| Tile(self.0[i])).collect();
        tiles.sort_unstable();
        tiles
    }

    pub fn is_legal(&self, tile: Tile) -> bool {
        adjacent(self.blank_index(), self.position_of(tile))
    }

    /// Slides `tile` into the blank.
    pub fn apply_move(&self, tile: Tile) -> Result<Board, BoardError> {
        let blank = self.blank_index();
        let pos = self.position_of(tile);
        if !adjacent(blank, pos) {
            return Err(BoardError::IllegalMove(tile.0));
        }
        let mut cells = self.0;
        cells.swap(blank, pos);
        Ok(Board(cells))
    }

    /// Same reachability class as the goal.
    ///
    /// On a 3-wide grid a horizontal move leaves the tile order unchanged and a
    /// vertical one moves a tile past two others, so the inversion parity of
    /// the tiles (blank ignored) is invariant under moves.
    pub fn is_solvable(&self) -> bool {
        inversion_parity(&self.0) == inversion_parity(&GOAL)
    }
}

fn inversion_parity(cells: &[u8; CELLS]) -> usize {
    let tiles: Vec<u8> = cells.iter().copied().filter(|&c| c != BLANK).collect();
    let mut inversions = 0;
    for i in 0..tiles.len() {
        for j in i + 1..tiles.len() {
            if tiles[i] > tiles[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2
}

fn adjacent(a: usize, b: usize) -> bool {
    let (ar, ac) = (a / SIDE, a % SIDE);
    let (br, bc) = (b / SIDE, b % SIDE);
    ar.abs_diff(br) + ac.abs_diff(bc) == 1
}

pub(crate) fn neighbors(index: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (index / SIDE, index % SIDE);
    let up = (r > 0).then(|| index - SIDE);
    let down = (r + 1 < SIDE).then(|| index + SIDE);
    let left = (c > 0).then(|| index - 1);
    let right = (c + 1 < SIDE).then(|| index + 1);
    [up, left, right, down].into_iter().flatten()
}

impl TryFrom<Vec<u8>> for Board {
    type Error = BoardError;
    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        let cells: [u8; CELLS] = v
            .as_slice()
            .try_into()
            .map_err(|_| BoardError::NotAPermutation(v.clone()))?;
        Board::new(cells)
    }
}

impl From<Board> for Vec<u8> {
    fn from(b: Board) -> Vec<u8> {
        b.0.to_vec()
    }
}

/// Comma-separated cells, e.g. `1,2,3,8,0,4,7,6,5`.
impl FromStr for Board {
    type Err = BoardError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cells = s
            .split(',')
            .map(|p| p.trim().parse::<u8>().map_err(|e| BoardError::Parse(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Board::try_from(cells)
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..SIDE {
            for col in 0..SIDE {
                let c = self.0[row * SIDE + col];
                if c == BLANK {
                    f.write_str(" .")?;
                } else {
                    write!(f, " {c}")?;
                }
            }
            if row + 1 < SIDE {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

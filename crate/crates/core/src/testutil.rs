use std::sync::{Arc, OnceLock};

use crate::board::{Board, Tile};
use crate::oracle::DistanceTable;

pub fn table() -> Arc<DistanceTable> {
    static T: OnceLock<Arc<DistanceTable>> = OnceLock::new();
    T.get_or_init(|| Arc::new(DistanceTable::build())).clone()
}

/// Lowest-numbered tile that brings `board` one step closer to the goal.
pub fn best_move(table: &DistanceTable, board: &Board) -> Tile {
    let d = table.distance(board).unwrap();
    board
        .legal_moves()
        .into_iter()
        .find(|&m| table.distance(&board.apply_move(m).unwrap()).unwrap() < d)
        .expect("a descending move exists off-goal")
}

/// Lowest-numbered tile that moves away from the goal.
pub fn worst_move(table: &DistanceTable, board: &Board) -> Tile {
    let d = table.distance(board).unwrap();
    board
        .legal_moves()
        .into_iter()
        .find(|&m| table.distance(&board.apply_move(m).unwrap()).unwrap() > d)
        .expect("an ascending move exists")
}

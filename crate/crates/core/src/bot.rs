//! Scripted one-ply greedy player and the per-level playthrough statistics
//! used as the difficulty label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{game_status, BoardState, GameStatus, SwapMove, TileColor, VALID_MOVES};
use crate::error::{Error, Result};
use crate::grid::LevelGrid;

pub const DEFAULT_RUNS: usize = 30;
/// Twice the designer budget, minus one.
pub const DEFAULT_MOVE_CAP: u32 = 2 * VALID_MOVES - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotConfig {
    pub run_count: usize,
    pub move_cap: u32,
    pub base_seed: u64,
}

impl Default for BotConfig {
    fn default() -> Self {
        Self {
            run_count: DEFAULT_RUNS,
            move_cap: DEFAULT_MOVE_CAP,
            base_seed: 0,
        }
    }
}

impl BotConfig {
    /// Cap derived from a validity threshold.
    pub fn with_valid_moves(valid_moves: u32) -> Self {
        Self {
            move_cap: 2 * valid_moves - 1,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaythroughStats {
    pub median_moves: f64,
    pub std_moves: f64,
    pub runs: Vec<u32>,
    pub success_rate: f64,
}

impl PlaythroughStats {
    /// Median (mean of the middle pair for even counts), population standard
    /// deviation, and the fraction of runs at or under `cap`.
    pub fn from_runs(runs: Vec<u32>, cap: u32) -> Self {
        let n = runs.len();
        if n == 0 {
            return Self {
                median_moves: f64::NAN,
                std_moves: f64::NAN,
                runs,
                success_rate: 0.0,
            };
        }
        let mut sorted = runs.clone();
        sorted.sort_unstable();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let wins = runs.iter().filter(|&&v| v <= cap).count();
        Self {
            median_moves: median,
            std_moves: var.sqrt(),
            runs,
            success_rate: wins as f64 / n as f64,
        }
    }
}

/// Score of a move's immediate match set: reds weigh ten, every tile one.
pub fn move_score(state: &BoardState, mv: SwapMove) -> u32 {
    let cells = state.swap_matches(mv);
    // colors are read after the swap, so look up through the move
    let color_after = |p| {
        if p == mv.a {
            state.tile(mv.b)
        } else if p == mv.b {
            state.tile(mv.a)
        } else {
            state.tile(p)
        }
    };
    let red = cells.iter().filter(|&&p| color_after(p) == Some(TileColor::Red)).count() as u32;
    10 * red + cells.len() as u32
}

/// Highest-scoring legal move; ties go to the smallest `(a, b)` in
/// row-major order.
pub fn select_move(state: &BoardState) -> Result<SwapMove> {
    let mut best: Option<(u32, SwapMove)> = None;
    for mv in state.legal_moves() {
        let s = move_score(state, mv);
        match best {
            Some((bs, bm)) if bs > s || (bs == s && bm.key() <= mv.key()) => {}
            _ => best = Some((s, mv)),
        }
    }
    best.map(|(_, m)| m).ok_or(Error::Deadlock)
}

fn play_with(layout: &LevelGrid, seed: u64, cap: u32, mut choose: impl FnMut(&BoardState) -> Result<SwapMove>) -> u32 {
    let Ok(mut state) = BoardState::new(layout.clone(), seed) else {
        return cap + 1;
    };
    loop {
        match game_status(&state, cap) {
            GameStatus::Won => return state.moves_used(),
            GameStatus::Lost => return cap + 1,
            GameStatus::Ongoing => {}
        }
        let Ok(mv) = choose(&state) else { return cap + 1 };
        if state.apply_move(mv).is_err() {
            return cap + 1;
        }
    }
}

/// Moves used on a win, `cap + 1` otherwise.
pub fn play_once(layout: &LevelGrid, seed: u64, cap: u32) -> u32 {
    play_with(layout, seed, cap, select_move)
}

/// Baseline that picks uniformly among legal moves.
pub fn play_random(layout: &LevelGrid, seed: u64, cap: u32) -> u32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    play_with(layout, seed, cap, |s| {
        let moves = s.legal_moves();
        if moves.is_empty() {
            return Err(Error::Deadlock);
        }
        Ok(moves[rng.random_range(0..moves.len())])
    })
}

pub fn evaluate_level(layout: &LevelGrid, config: &BotConfig) -> PlaythroughStats {
    let runs: Vec<u32> = (0..config.run_count as u64)
        .into_par_iter()
        .map(|i| play_once(layout, config.base_seed.wrapping_add(i), config.move_cap))
        .collect();
    PlaythroughStats::from_runs(runs, config.move_cap)
}

pub fn evaluate_level_random(layout: &LevelGrid, config: &BotConfig) -> PlaythroughStats {
    let runs: Vec<u32> = (0..config.run_count as u64)
        .into_par_iter()
        .map(|i| play_random(layout, config.base_seed.wrapping_add(i), config.move_cap))
        .collect();
    PlaythroughStats::from_runs(runs, config.move_cap)
}

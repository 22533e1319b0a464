//! Hand-traced cascade fixtures. Each file lists the board before the move,
//! the refill colors the seed produces, and the board after the cascade.

use std::fs;
use std::path::Path;

use match3gen::engine::{BoardState, SwapMove, TileColor};
use match3gen::{CellKind, LevelGrid, Pos};

pub struct Fixture {
    pub name: String,
    pub seed: u64,
    pub draws: String,
    pub moves: Vec<SwapMove>,
    pub red_cleared: u32,
    pub cascade_steps: u32,
    pub before: Vec<String>,
    pub after: Vec<String>,
}

fn parse_pos(s: &str) -> Pos {
    let (x, y) = s.split_once(',').unwrap();
    Pos::new(x.parse().unwrap(), y.parse().unwrap())
}

pub fn parse(name: &str, text: &str) -> Fixture {
    let mut fx = Fixture {
        name: name.to_string(),
        seed: 0,
        draws: String::new(),
        moves: Vec::new(),
        red_cleared: 0,
        cascade_steps: 0,
        before: Vec::new(),
        after: Vec::new(),
    };
    let mut section: Option<&str> = None;
    for line in text.lines().filter(|l| !l.starts_with("# ")) {
        match line.split_once(": ") {
            Some(("seed", v)) => fx.seed = v.parse().unwrap(),
            Some(("draws", v)) => fx.draws = v.to_string(),
            Some(("move", v)) => {
                let (a, b) = v.split_once(' ').unwrap();
                fx.moves.push(SwapMove::new(parse_pos(a), parse_pos(b)));
            }
            Some(("red_cleared", v)) => fx.red_cleared = v.parse().unwrap(),
            Some(("cascade_steps", v)) => fx.cascade_steps = v.parse().unwrap(),
            _ if line == "before:" => section = Some("before"),
            _ if line == "after:" => section = Some("after"),
            _ => match section {
                Some("before") => fx.before.push(line.to_string()),
                Some("after") => fx.after.push(line.to_string()),
                _ => panic!("{name}: unexpected line {line:?}"),
            },
        }
    }
    fx
}

pub fn board(rows: &[String], seed: u64) -> BoardState {
    let mut layout = LevelGrid::filled(CellKind::Block);
    let mut tiles = Vec::new();
    for (y, row) in rows.iter().enumerate() {
        for (x, c) in row.chars().enumerate() {
            let p = Pos::new(x, y);
            match TileColor::from_char(c) {
                Some(color) => {
                    layout.set(p, CellKind::Playfield);
                    tiles.push((p, color));
                }
                None => layout.set(p, CellKind::from_char(c).unwrap()),
            }
        }
    }
    BoardState::with_tiles(layout, tiles, seed).unwrap()
}

pub fn fixtures() -> Vec<Fixture> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cascades");
    let mut paths: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse(&p.file_name().unwrap().to_string_lossy(), &fs::read_to_string(p).unwrap()))
        .collect()
}

/// Replays every fixture, returning the first disagreement.
pub fn check_all() -> Result<usize, String> {
    let all = fixtures();
    for fx in &all {
        let mut src = match3gen::engine::TileSource::new(fx.seed);
        let drawn: String = fx.draws.chars().map(|_| src.next_color().to_char()).collect();
        if drawn != fx.draws {
            return Err(format!("{}: seed draws {drawn}, fixture says {}", fx.name, fx.draws));
        }
        let mut state = board(&fx.before, fx.seed);
        if !state.find_matches().is_empty() {
            return Err(format!("{}: starting board is not stable", fx.name));
        }
        let mut steps = 0;
        for &mv in &fx.moves {
            steps += state.apply_move(mv).map_err(|e| format!("{}: {e}", fx.name))?.cascade_steps;
        }
        let expected: String = fx.after.iter().map(|l| format!("{l}\n")).collect();
        if state.to_ascii() != expected {
            return Err(format!("{}: board after cascade differs:\n{}", fx.name, state.to_ascii()));
        }
        if (state.red_cleared(), steps) != (fx.red_cleared, fx.cascade_steps) {
            return Err(format!(
                "{}: red {} steps {}, expected red {} steps {}",
                fx.name,
                state.red_cleared(),
                steps,
                fx.red_cleared,
                fx.cascade_steps
            ));
        }
    }
    Ok(all.len())
}

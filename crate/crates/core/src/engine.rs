//! Simplified match-3 rules: swaps that must create a match, simultaneous
//! clearing of every ≥3 run, straight-down gravity through GAP cells,
//! refill from per-segment spawn spots, and cascades to a fixpoint.
//!
//! Tile colors are drawn uniformly from a ChaCha8 stream seeded per game, so
//! a `(layout, seed, moves)` triple always replays to the same board.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CellKind, LevelGrid, Pos, BOARD_HEIGHT, BOARD_WIDTH};

/// Red tiles that must be cleared to win.
pub const RED_TARGET: u32 = 60;
/// Designer move budget defining a valid level.
pub const VALID_MOVES: u32 = 20;
/// Re-roll budget per cell while building an initial board without matches.
const INITIAL_REROLLS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TileColor {
    Red,
    Green,
    Blue,
    Orange,
}

impl TileColor {
    pub const ALL: [TileColor; 4] = [TileColor::Red, TileColor::Green, TileColor::Blue, TileColor::Orange];

    pub fn to_char(self) -> char {
        match self {
            TileColor::Red => 'R',
            TileColor::Green => 'G',
            TileColor::Blue => 'B',
            TileColor::Orange => 'O',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'R' => Some(TileColor::Red),
            'G' => Some(TileColor::Green),
            'B' => Some(TileColor::Blue),
            'O' => Some(TileColor::Orange),
            _ => None,
        }
    }
}

/// Seeded uniform color stream.
#[derive(Clone, Debug)]
pub struct TileSource {
    rng: ChaCha8Rng,
}

impl TileSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_color(&mut self) -> TileColor {
        TileColor::ALL[self.rng.random_range(0..TileColor::ALL.len())]
    }
}

/// Orthogonal swap of two PLAYFIELD cells, stored with `a` before `b` in
/// row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwapMove {
    pub a: Pos,
    pub b: Pos,
}

impl SwapMove {
    pub fn new(p: Pos, q: Pos) -> Self {
        if p.key() <= q.key() {
            Self { a: p, b: q }
        } else {
            Self { a: q, b: p }
        }
    }

    /// Ordering key used for deterministic tie-breaks.
    pub fn key(&self) -> ((usize, usize), (usize, usize)) {
        (self.a.key(), self.b.key())
    }
}

impl fmt::Display for SwapMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

/// A maximal vertical run of non-BLOCK cells in one column that contains at
/// least one PLAYFIELD cell.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Segment {
    x: usize,
    /// Rows of the PLAYFIELD cells, top to bottom. The first one is the
    /// spawn spot.
    slots: Vec<usize>,
}

fn segments(layout: &LevelGrid) -> Vec<Segment> {
    let mut out = Vec::new();
    for x in 0..BOARD_WIDTH {
        let mut slots = Vec::new();
        for y in 0..=BOARD_HEIGHT {
            let kind = (y < BOARD_HEIGHT).then(|| layout.get(Pos::new(x, y)));
            match kind {
                Some(CellKind::Playfield) => slots.push(y),
                Some(CellKind::Gap) => {}
                Some(CellKind::Block) | None => {
                    if !slots.is_empty() {
                        out.push(Segment {
                            x,
                            slots: std::mem::take(&mut slots),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Spawn spots in column-major order (columns left to right, then top to
/// bottom within a column).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpawnSpots(pub Vec<Pos>);

impl SpawnSpots {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, pos: Pos) -> bool {
        self.0.contains(&pos)
    }
}

/// One spot at the first PLAYFIELD cell of every column segment. GAP cells
/// pass tiles through; BLOCK cells seal a segment from the one above.
pub fn derive_spawn_spots(layout: &LevelGrid) -> SpawnSpots {
    SpawnSpots(
        segments(layout)
            .into_iter()
            .map(|s| Pos::new(s.x, s.slots[0]))
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GameStatus {
    Won,
    Lost,
    Ongoing,
}

type Tiles = [[Option<TileColor>; BOARD_WIDTH]; BOARD_HEIGHT];
type CellMask = [[bool; BOARD_WIDTH]; BOARD_HEIGHT];

/// What one resolved move did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MoveReport {
    pub cascade_steps: u32,
    pub tiles_cleared: u32,
    pub red_cleared: u32,
}

#[derive(Clone, Debug)]
pub struct BoardState {
    layout: LevelGrid,
    segments: Vec<Segment>,
    tiles: Tiles,
    red_cleared: u32,
    moves_used: u32,
    source: TileSource,
}

impl PartialEq for BoardState {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.tiles == other.tiles
            && self.red_cleared == other.red_cleared
            && self.moves_used == other.moves_used
    }
}

impl BoardState {
    /// Fresh game: every PLAYFIELD cell is filled in row-major order, and a
    /// color that would complete a run of three with the two cells to its
    /// left or above is re-drawn (up to 100 draws per cell).
    pub fn new(layout: LevelGrid, seed: u64) -> Result<Self> {
        if layout.count(CellKind::Playfield) == 0 {
            return Err(Error::EmptyLevel);
        }
        let mut state = Self {
            segments: segments(&layout),
            layout,
            tiles: [[None; BOARD_WIDTH]; BOARD_HEIGHT],
            red_cleared: 0,
            moves_used: 0,
            source: TileSource::new(seed),
        };
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                if state.layout.get(Pos::new(x, y)) != CellKind::Playfield {
                    continue;
                }
                let mut color = state.source.next_color();
                for _ in 1..INITIAL_REROLLS {
                    if !state.completes_prefix_run(x, y, color) {
                        break;
                    }
                    color = state.source.next_color();
                }
                state.tiles[y][x] = Some(color);
            }
        }
        Ok(state)
    }

    /// Board with explicit tiles (one per PLAYFIELD cell) whose refills come
    /// from the stream for `seed`.
    pub fn with_tiles(layout: LevelGrid, tiles: Vec<(Pos, TileColor)>, seed: u64) -> Result<Self> {
        let mut grid: Tiles = [[None; BOARD_WIDTH]; BOARD_HEIGHT];
        for (p, c) in tiles {
            if layout.get(p) != CellKind::Playfield {
                return Err(Error::MalformedLevel(format!("tile at non-PLAYFIELD cell {p}")));
            }
            grid[p.y][p.x] = Some(c);
        }
        if let Some((p, _)) = layout
            .iter()
            .find(|&(p, k)| k == CellKind::Playfield && grid[p.y][p.x].is_none())
        {
            return Err(Error::MalformedLevel(format!("PLAYFIELD cell {p} has no tile")));
        }
        Ok(Self {
            segments: segments(&layout),
            layout,
            tiles: grid,
            red_cleared: 0,
            moves_used: 0,
            source: TileSource::new(seed),
        })
    }

    fn completes_prefix_run(&self, x: usize, y: usize, c: TileColor) -> bool {
        let t = &self.tiles;
        (x >= 2 && t[y][x - 1] == Some(c) && t[y][x - 2] == Some(c))
            || (y >= 2 && t[y - 1][x] == Some(c) && t[y - 2][x] == Some(c))
    }

    pub fn layout(&self) -> &LevelGrid {
        &self.layout
    }

    pub fn tile(&self, pos: Pos) -> Option<TileColor> {
        self.tiles[pos.y][pos.x]
    }

    pub fn red_cleared(&self) -> u32 {
        self.red_cleared
    }

    pub fn moves_used(&self) -> u32 {
        self.moves_used
    }

    pub fn spawn_spots(&self) -> SpawnSpots {
        SpawnSpots(self.segments.iter().map(|s| Pos::new(s.x, s.slots[0])).collect())
    }

    /// Cells of every maximal horizontal or vertical run of at least three
    /// same-colored tiles, row-major.
    pub fn find_matches(&self) -> Vec<Pos> {
        let mask = match_mask(&self.tiles);
        let mut out = Vec::new();
        for (y, row) in mask.iter().enumerate() {
            for (x, &m) in row.iter().enumerate() {
                if m {
                    out.push(Pos::new(x, y));
                }
            }
        }
        out
    }

    fn is_playfield(&self, p: Pos) -> bool {
        p.x < BOARD_WIDTH && p.y < BOARD_HEIGHT && self.layout.get(p) == CellKind::Playfield
    }

    /// Cells that would clear immediately if `mv` were played, before any
    /// gravity or refill. Empty if the swap creates no match.
    pub fn swap_matches(&self, mv: SwapMove) -> Vec<Pos> {
        let mut tiles = self.tiles;
        let (a, b) = (mv.a, mv.b);
        let ta = tiles[a.y][a.x];
        tiles[a.y][a.x] = tiles[b.y][b.x];
        tiles[b.y][b.x] = ta;
        let mut cells = Vec::new();
        run_through(&tiles, a, &mut cells);
        run_through(&tiles, b, &mut cells);
        cells.sort_by_key(|p| p.key());
        cells.dedup();
        cells
    }

    /// Every adjacent PLAYFIELD pair whose swap creates a match, in row-major
    /// order of `a` (right neighbour before down neighbour).
    pub fn legal_moves(&self) -> Vec<SwapMove> {
        let mut moves = Vec::new();
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let a = Pos::new(x, y);
                if !self.is_playfield(a) {
                    continue;
                }
                for b in [Pos::new(x + 1, y), Pos::new(x, y + 1)] {
                    if self.is_playfield(b) && self.swap_creates_match(a, b) {
                        moves.push(SwapMove { a, b });
                    }
                }
            }
        }
        moves
    }

    fn swap_creates_match(&self, a: Pos, b: Pos) -> bool {
        let (ta, tb) = (self.tiles[a.y][a.x], self.tiles[b.y][b.x]);
        if ta == tb {
            return false;
        }
        let mut tiles = self.tiles;
        tiles[a.y][a.x] = tb;
        tiles[b.y][b.x] = ta;
        has_run_through(&tiles, a) || has_run_through(&tiles, b)
    }

    /// Play `mv` and resolve the cascade: clear all matches at once, apply
    /// gravity, refill, and repeat until the board is stable.
    pub fn apply_move(&mut self, mv: SwapMove) -> Result<MoveReport> {
        let (a, b) = (mv.a, mv.b);
        if !self.is_playfield(a) || !self.is_playfield(b) || !a.is_adjacent(b) {
            return Err(Error::IllegalSwap(format!("{mv} is not an adjacent PLAYFIELD pair")));
        }
        if !self.swap_creates_match(a, b) {
            return Err(Error::NoMatchProduced);
        }
        let ta = self.tiles[a.y][a.x];
        self.tiles[a.y][a.x] = self.tiles[b.y][b.x];
        self.tiles[b.y][b.x] = ta;

        let mut report = MoveReport::default();
        loop {
            let mask = match_mask(&self.tiles);
            let mut cleared = 0;
            for y in 0..BOARD_HEIGHT {
                for x in 0..BOARD_WIDTH {
                    if mask[y][x] {
                        if self.tiles[y][x] == Some(TileColor::Red) {
                            report.red_cleared += 1;
                        }
                        self.tiles[y][x] = None;
                        cleared += 1;
                    }
                }
            }
            if cleared == 0 {
                break;
            }
            report.tiles_cleared += cleared;
            report.cascade_steps += 1;
            self.apply_gravity();
            self.refill();
        }
        self.red_cleared += report.red_cleared;
        self.moves_used += 1;
        Ok(report)
    }

    /// Tiles in each segment drop to its lowest PLAYFIELD cells, keeping
    /// their order.
    fn apply_gravity(&mut self) {
        for seg in &self.segments {
            let x = seg.x;
            let stack: Vec<TileColor> = seg.slots.iter().filter_map(|&y| self.tiles[y][x]).collect();
            let empty = seg.slots.len() - stack.len();
            for (i, &y) in seg.slots.iter().enumerate() {
                self.tiles[y][x] = if i < empty { None } else { Some(stack[i - empty]) };
            }
        }
    }

    /// New tiles enter at each segment's spot and fall, so the first drawn
    /// tile settles lowest. Segments are served column by column, top to
    /// bottom.
    fn refill(&mut self) {
        for seg in &self.segments {
            let x = seg.x;
            let empty = seg.slots.iter().take_while(|&&y| self.tiles[y][x].is_none()).count();
            for &y in seg.slots[..empty].iter().rev() {
                self.tiles[y][x] = Some(self.source.next_color());
            }
        }
    }

    /// Tiles rendered one character per cell: colors as `R G B O`, GAP as
    /// `.`, BLOCK as `#`.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let p = Pos::new(x, y);
                out.push(match self.tiles[y][x] {
                    Some(c) => c.to_char(),
                    None => self.layout.get(p).to_char(),
                });
            }
            out.push('\n');
        }
        out
    }
}

fn run_len(tiles: &Tiles, p: Pos, dx: isize, dy: isize) -> usize {
    let Some(c) = tiles[p.y][p.x] else { return 0 };
    let mut n = 0;
    let (mut x, mut y) = (p.x as isize + dx, p.y as isize + dy);
    while x >= 0 && y >= 0 && (x as usize) < BOARD_WIDTH && (y as usize) < BOARD_HEIGHT {
        if tiles[y as usize][x as usize] != Some(c) {
            break;
        }
        n += 1;
        x += dx;
        y += dy;
    }
    n
}

fn has_run_through(tiles: &Tiles, p: Pos) -> bool {
    tiles[p.y][p.x].is_some()
        && (run_len(tiles, p, -1, 0) + run_len(tiles, p, 1, 0) >= 2
            || run_len(tiles, p, 0, -1) + run_len(tiles, p, 0, 1) >= 2)
}

/// Append the cells of any ≥3 run passing through `p`.
fn run_through(tiles: &Tiles, p: Pos, out: &mut Vec<Pos>) {
    if tiles[p.y][p.x].is_none() {
        return;
    }
    let (l, r) = (run_len(tiles, p, -1, 0), run_len(tiles, p, 1, 0));
    if l + r >= 2 {
        out.extend((p.x - l..=p.x + r).map(|x| Pos::new(x, p.y)));
    }
    let (u, d) = (run_len(tiles, p, 0, -1), run_len(tiles, p, 0, 1));
    if u + d >= 2 {
        out.extend((p.y - u..=p.y + d).map(|y| Pos::new(p.x, y)));
    }
}

fn match_mask(tiles: &Tiles) -> CellMask {
    let mut mask = [[false; BOARD_WIDTH]; BOARD_HEIGHT];
    for y in 0..BOARD_HEIGHT {
        let mut start = 0;
        for x in 1..=BOARD_WIDTH {
            if x == BOARD_WIDTH || tiles[y][x].is_none() || tiles[y][x] != tiles[y][start] {
                if tiles[y][start].is_some() && x - start >= 3 {
                    (start..x).for_each(|i| mask[y][i] = true);
                }
                start = x;
            }
        }
    }
    for x in 0..BOARD_WIDTH {
        let mut start = 0;
        for y in 1..=BOARD_HEIGHT {
            if y == BOARD_HEIGHT || tiles[y][x].is_none() || tiles[y][x] != tiles[start][x] {
                if tiles[start][x].is_some() && y - start >= 3 {
                    (start..y).for_each(|j| mask[j][x] = true);
                }
                start = y;
            }
        }
    }
    mask
}

/// WON once 60 reds are cleared within the cap; LOST when the cap is reached
/// without that or no legal move remains.
pub fn game_status(state: &BoardState, move_cap: u32) -> GameStatus {
    if state.red_cleared >= RED_TARGET && state.moves_used <= move_cap {
        GameStatus::Won
    } else if state.moves_used >= move_cap || state.legal_moves().is_empty() {
        GameStatus::Lost
    } else {
        GameStatus::Ongoing
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LevelSize;
    use std::collections::BTreeSet;

    fn board_from(layout_rows: &[&str], tile_rows: &[&str], seed: u64) -> BoardState {
        // rows given for the top of the canvas; the rest is BLOCK
        let mut layout = LevelGrid::filled(CellKind::Block);
        let mut tiles = Vec::new();
        for (y, (lr, tr)) in layout_rows.iter().zip(tile_rows).enumerate() {
            for (x, (lc, tc)) in lr.chars().zip(tr.chars()).enumerate() {
                let p = Pos::new(x, y);
                layout.set(p, CellKind::from_char(lc).unwrap());
                if let Some(c) = TileColor::from_char(tc) {
                    tiles.push((p, c));
                }
            }
        }
        BoardState::with_tiles(layout, tiles, seed).unwrap()
    }

    /// Enumerate every maximal run by walking from each run start.
    fn brute_force_matches(state: &BoardState) -> BTreeSet<Pos> {
        let mut set = BTreeSet::new();
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let Some(c) = state.tile(Pos::new(x, y)) else { continue };
                for (dx, dy) in [(1usize, 0usize), (0, 1)] {
                    let mut cells = vec![Pos::new(x, y)];
                    let (mut cx, mut cy) = (x + dx, y + dy);
                    while cx < BOARD_WIDTH && cy < BOARD_HEIGHT && state.tile(Pos::new(cx, cy)) == Some(c) {
                        cells.push(Pos::new(cx, cy));
                        cx += dx;
                        cy += dy;
                    }
                    if cells.len() >= 3 {
                        set.extend(cells);
                    }
                }
            }
        }
        set
    }

    fn random_board(rng: &mut ChaCha8Rng) -> BoardState {
        let mut layout = LevelGrid::filled(CellKind::Block);
        let mut tiles = Vec::new();
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let kind = CellKind::ALL[rng.random_range(0..3)];
                let p = Pos::new(x, y);
                layout.set(p, kind);
                if kind == CellKind::Playfield {
                    tiles.push((p, TileColor::ALL[rng.random_range(0..2)]));
                }
            }
        }
        layout.set(Pos::new(0, 0), CellKind::Playfield);
        if !tiles.iter().any(|(p, _)| *p == Pos::new(0, 0)) {
            tiles.push((Pos::new(0, 0), TileColor::Red));
        }
        BoardState::with_tiles(layout, tiles, 0).unwrap()
    }

    #[test]
    fn full_board_has_one_spot_per_column() {
        let spots = derive_spawn_spots(&LevelGrid::filled(CellKind::Playfield));
        assert_eq!(spots.len(), 9);
        assert!(spots.0.iter().all(|p| p.y == 0));
    }

    #[test]
    fn spots_for_column_patterns() {
        let mut g = LevelGrid::filled(CellKind::Block);
        g.set(Pos::new(0, 0), CellKind::Playfield);
        g.set(Pos::new(0, 2), CellKind::Playfield);
        g.set(Pos::new(3, 0), CellKind::Gap);
        g.set(Pos::new(3, 1), CellKind::Playfield);
        g.set(Pos::new(3, 2), CellKind::Playfield);
        let spots = derive_spawn_spots(&g);
        assert_eq!(spots.0, vec![Pos::new(0, 0), Pos::new(0, 2), Pos::new(3, 1)]);
    }

    #[test]
    fn find_matches_cases() {
        let b = board_from(&["ooo", "ooo", "ooo"], &["RGB", "GBR", "BRG"], 0);
        assert!(b.find_matches().is_empty());

        let b = board_from(&["oooo", "oooo"], &["RRRG", "GBGB"], 0);
        assert_eq!(b.find_matches(), vec![Pos::new(0, 0), Pos::new(1, 0), Pos::new(2, 0)]);

        // L shape: row 0 cols 0..3 and column 0 rows 0..3
        let b = board_from(&["ooo", "ooo", "ooo"], &["GGG", "GBR", "GRB"], 0);
        let found: BTreeSet<Pos> = b.find_matches().into_iter().collect();
        assert_eq!(found.len(), 5);
        assert_eq!(found, brute_force_matches(&b));
    }

    #[test]
    fn find_matches_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let b = random_board(&mut rng);
            let found: BTreeSet<Pos> = b.find_matches().into_iter().collect();
            assert_eq!(found, brute_force_matches(&b));
        }
    }

    #[test]
    fn gap_breaks_runs() {
        let b = board_from(&["oo.o"], &["RR.R"], 0);
        assert!(b.find_matches().is_empty());
    }

    #[test]
    fn legal_move_brings_red_into_row() {
        let b = board_from(&["ooo", "ooo", "ooo"], &["RRG", "GBR", "BGB"], 0);
        let moves = b.legal_moves();
        let vertical = SwapMove::new(Pos::new(2, 0), Pos::new(2, 1));
        assert!(moves.contains(&vertical));
        // oracle: enumerate all adjacent swaps and test with find_matches
        let mut expected = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx >= 3 || ny >= 3 {
                        continue;
                    }
                    let (a, c) = (Pos::new(x, y), Pos::new(nx, ny));
                    let mut probe = b.clone();
                    let t = probe.tiles[a.y][a.x];
                    probe.tiles[a.y][a.x] = probe.tiles[c.y][c.x];
                    probe.tiles[c.y][c.x] = t;
                    if !probe.find_matches().is_empty() {
                        expected.push(SwapMove::new(a, c));
                    }
                }
            }
        }
        assert_eq!(moves, expected);
    }

    #[test]
    fn legal_moves_agree_with_full_scan_on_random_boards() {
        for seed in 0..200 {
            let size = LevelSize::new(4 + (seed as usize % 6), 4 + (seed as usize % 8)).unwrap();
            let b = BoardState::new(LevelGrid::with_play_area(size, CellKind::Playfield), seed).unwrap();
            assert!(b.find_matches().is_empty(), "initial board has a match");
            for mv in b.legal_moves() {
                assert_eq!(b.layout.get(mv.a), CellKind::Playfield);
                assert_eq!(b.layout.get(mv.b), CellKind::Playfield);
                let mut probe = b.clone();
                let t = probe.tiles[mv.a.y][mv.a.x];
                probe.tiles[mv.a.y][mv.a.x] = probe.tiles[mv.b.y][mv.b.x];
                probe.tiles[mv.b.y][mv.b.x] = t;
                let full: Vec<Pos> = probe.find_matches();
                let mut local = b.swap_matches(mv);
                local.sort_by_key(|p| p.key());
                assert_eq!(local, full);
            }
        }
    }

    #[test]
    fn no_legal_move_on_checkerboard() {
        let b = board_from(&["oooo", "oooo", "oooo"], &["RGBO", "BORG", "RGBO"], 0);
        assert!(b.legal_moves().is_empty());
        assert_eq!(game_status(&b, 20), GameStatus::Lost);
    }

    #[test]
    fn illegal_moves_are_rejected() {
        let mut b = board_from(&["ooo", "ooo", "ooo"], &["RGB", "GBR", "BRG"], 0);
        let r = b.apply_move(SwapMove::new(Pos::new(0, 0), Pos::new(1, 0)));
        assert!(matches!(r, Err(Error::NoMatchProduced)));
        let r = b.apply_move(SwapMove::new(Pos::new(0, 0), Pos::new(1, 1)));
        assert!(matches!(r, Err(Error::IllegalSwap(_))));
        assert_eq!(b.moves_used(), 0);
    }

    #[test]
    fn non_red_match_refills_three_cells() {
        // swapping (2,0)<->(2,1) completes GGG in row 0
        let mut b = board_from(&["ooo", "ooo", "ooo"], &["GGB", "BRG", "RBO"], 5);
        let report = b.apply_move(SwapMove::new(Pos::new(2, 0), Pos::new(2, 1))).unwrap();
        assert_eq!(b.red_cleared(), 0);
        assert_eq!(b.moves_used(), 1);
        assert!(report.tiles_cleared >= 3);
        assert!(b.layout.iter().all(|(p, k)| (k == CellKind::Playfield) == b.tile(p).is_some()));
    }

    #[test]
    fn red_match_counts_three() {
        let mut b = board_from(&["ooo", "ooo", "ooo"], &["RRB", "BGR", "GBO"], 5);
        let report = b.apply_move(SwapMove::new(Pos::new(2, 0), Pos::new(2, 1))).unwrap();
        assert!(report.red_cleared >= 3);
        assert_eq!(b.red_cleared(), report.red_cleared);
    }

    #[test]
    fn game_status_rules() {
        let mut b = BoardState::new(LevelGrid::filled(CellKind::Playfield), 1).unwrap();
        b.red_cleared = 60;
        b.moves_used = 12;
        assert_eq!(game_status(&b, 20), GameStatus::Won);
        b.red_cleared = 59;
        b.moves_used = 20;
        assert_eq!(game_status(&b, 20), GameStatus::Lost);
        b.moves_used = 3;
        assert_eq!(game_status(&b, 20), GameStatus::Ongoing);
    }

    #[test]
    fn replay_is_deterministic() {
        let layout = LevelGrid::with_play_area(LevelSize::new(7, 9).unwrap(), CellKind::Playfield);
        let play = || {
            let mut b = BoardState::new(layout.clone(), 77).unwrap();
            for _ in 0..15 {
                let Some(&mv) = b.legal_moves().first() else { break };
                b.apply_move(mv).unwrap();
            }
            b
        };
        let (x, y) = (play(), play());
        assert_eq!(x, y);
        assert_eq!(x.to_ascii(), y.to_ascii());
    }

    #[test]
    fn moves_keep_tiles_on_playfield_only() {
        let mut layout = LevelGrid::with_play_area(LevelSize::new(8, 10).unwrap(), CellKind::Playfield);
        for p in [Pos::new(3, 2), Pos::new(3, 3), Pos::new(5, 6)] {
            layout.set(p, CellKind::Gap);
        }
        layout.set(Pos::new(6, 4), CellKind::Block);
        let mut b = BoardState::new(layout, 3).unwrap();
        for _ in 0..30 {
            let Some(&mv) = b.legal_moves().first() else { break };
            let before = b.red_cleared();
            b.apply_move(mv).unwrap();
            assert!(b.red_cleared() >= before);
            assert!(b.find_matches().is_empty());
            for (p, k) in b.layout.iter() {
                assert_eq!(k == CellKind::Playfield, b.tile(p).is_some(), "{p}");
            }
        }
    }

    #[test]
    fn gravity_preserves_column_order() {
        let mut b = board_from(&["o", "o", ".", "o", "o"], &["R", "G", ".", "B", "O"], 0);
        b.tiles[3][0] = None;
        b.tiles[4][0] = None;
        let before: Vec<TileColor> = (0..5).filter_map(|y| b.tiles[y][0]).collect();
        b.apply_gravity();
        let after: Vec<TileColor> = (0..5).filter_map(|y| b.tiles[y][0]).collect();
        assert_eq!(before, after);
        assert_eq!(b.tiles[3][0], Some(TileColor::Red));
        assert_eq!(b.tiles[4][0], Some(TileColor::Green));
        assert_eq!(b.tiles[2][0], None);
    }
}

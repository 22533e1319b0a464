//! Level layouts on the fixed 9×11 canvas.
//!
//! A level is a grid of [`CellKind`] with the play area centered on the
//! canvas; everything outside the play area is `BLOCK`. Rows are indexed
//! top to bottom (`y ∈ [0, 11)`), columns left to right (`x ∈ [0, 9)`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Scalar, Tensor};

pub const BOARD_WIDTH: usize = 9;
pub const BOARD_HEIGHT: usize = 11;
pub const CELL_COUNT: usize = BOARD_WIDTH * BOARD_HEIGHT;
pub const MIN_WIDTH: usize = 4;
pub const MIN_HEIGHT: usize = 4;
/// Number of categorical cell classes.
pub const CELL_CLASSES: usize = 3;

/// Categorical cell type. The discriminants are the stable serialized codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CellKind {
    Gap = 0,
    Block = 1,
    Playfield = 2,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Gap, CellKind::Block, CellKind::Playfield];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CellKind::Gap),
            1 => Some(CellKind::Block),
            2 => Some(CellKind::Playfield),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            CellKind::Gap => '.',
            CellKind::Block => '#',
            CellKind::Playfield => 'o',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellKind::Gap),
            '#' => Some(CellKind::Block),
            'o' => Some(CellKind::Playfield),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gap => "gap",
            CellKind::Block => "block",
            CellKind::Playfield => "playfield",
        }
    }
}

/// Cell coordinate on the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Row-major ordering key, `(y, x)`.
    pub fn key(self) -> (usize, usize) {
        (self.y, self.x)
    }

    pub fn is_adjacent(self, other: Pos) -> bool {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y) == 1
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Play-area dimensions in cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelSize {
    pub width: usize,
    pub height: usize,
}

impl LevelSize {
    pub const MAX: LevelSize = LevelSize {
        width: BOARD_WIDTH,
        height: BOARD_HEIGHT,
    };

    /// Admissible size: width in `[4, 9]`, height in `[4, 11]`.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let size = Self { width, height };
        if size.is_admissible() {
            Ok(size)
        } else {
            Err(Error::InvalidSize { width, height })
        }
    }

    pub fn is_admissible(&self) -> bool {
        (MIN_WIDTH..=BOARD_WIDTH).contains(&self.width)
            && (MIN_HEIGHT..=BOARD_HEIGHT).contains(&self.height)
    }

    /// All 48 admissible sizes, width-major.
    pub fn all() -> impl Iterator<Item = LevelSize> {
        (MIN_WIDTH..=BOARD_WIDTH).flat_map(|width| {
            (MIN_HEIGHT..=BOARD_HEIGHT).map(move |height| LevelSize { width, height })
        })
    }

    /// Top-left canvas coordinate of the centered play area.
    pub fn origin(&self) -> Pos {
        Pos::new(
            (BOARD_WIDTH - self.width.min(BOARD_WIDTH)) / 2,
            (BOARD_HEIGHT - self.height.min(BOARD_HEIGHT)) / 2,
        )
    }

    pub fn contains(&self, pos: Pos) -> bool {
        let o = self.origin();
        pos.x >= o.x && pos.x < o.x + self.width && pos.y >= o.y && pos.y < o.y + self.height
    }

    /// Canvas positions inside the play area, row-major.
    pub fn positions(&self) -> impl Iterator<Item = Pos> {
        let o = self.origin();
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |j| (0..w).map(move |i| Pos::new(o.x + i, o.y + j)))
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Index of the width in the `[4, 9]` one-hot encoding.
    pub fn width_index(&self) -> usize {
        self.width - MIN_WIDTH
    }

    /// Index of the height in the `[4, 11]` one-hot encoding.
    pub fn height_index(&self) -> usize {
        self.height - MIN_HEIGHT
    }
}

impl fmt::Display for LevelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

pub const WIDTH_CLASSES: usize = BOARD_WIDTH - MIN_WIDTH + 1;
pub const HEIGHT_CLASSES: usize = BOARD_HEIGHT - MIN_HEIGHT + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryKind {
    Vertical,
    Horizontal,
    Quadrant,
    Unknown,
}

impl SymmetryKind {
    pub const ALL: [SymmetryKind; 4] = [
        SymmetryKind::Vertical,
        SymmetryKind::Horizontal,
        SymmetryKind::Quadrant,
        SymmetryKind::Unknown,
    ];

    /// Mirrors left-right (columns are paired).
    pub fn mirrors_columns(self) -> bool {
        matches!(self, SymmetryKind::Vertical | SymmetryKind::Quadrant)
    }

    /// Mirrors top-bottom (rows are paired).
    pub fn mirrors_rows(self) -> bool {
        matches!(self, SymmetryKind::Horizontal | SymmetryKind::Quadrant)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SymmetryKind::Vertical => "vertical",
            SymmetryKind::Horizontal => "horizontal",
            SymmetryKind::Quadrant => "quadrant",
            SymmetryKind::Unknown => "unknown",
        }
    }

    /// Whether a level detected as `self` satisfies a request for `requested`.
    pub fn satisfies(self, requested: SymmetryKind) -> bool {
        match requested {
            SymmetryKind::Unknown => true,
            SymmetryKind::Vertical => self.mirrors_columns(),
            SymmetryKind::Horizontal => self.mirrors_rows(),
            SymmetryKind::Quadrant => self == SymmetryKind::Quadrant,
        }
    }
}

impl fmt::Display for SymmetryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SymmetryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(SymmetryKind::Vertical),
            "horizontal" => Ok(SymmetryKind::Horizontal),
            "quadrant" => Ok(SymmetryKind::Quadrant),
            "unknown" => Ok(SymmetryKind::Unknown),
            other => Err(Error::Parse(format!("unknown symmetry {other:?}"))),
        }
    }
}

/// Conditioning request for generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub size: LevelSize,
    pub symmetry: SymmetryKind,
    /// Target median moves; absent for models without a difficulty input.
    pub target_moves: Option<f64>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    bits: [[bool; BOARD_WIDTH]; BOARD_HEIGHT],
}

impl BinaryMask {
    pub fn ones() -> Self {
        Self {
            bits: [[true; BOARD_WIDTH]; BOARD_HEIGHT],
        }
    }

    pub fn zeros() -> Self {
        Self {
            bits: [[false; BOARD_WIDTH]; BOARD_HEIGHT],
        }
    }

    pub fn get(&self, pos: Pos) -> bool {
        self.bits[pos.y][pos.x]
    }

    pub fn set(&mut self, pos: Pos, bit: bool) {
        self.bits[pos.y][pos.x] = bit;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().flatten().filter(|&&b| b).count()
    }

    /// Bits in row-major canvas order.
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().flatten().copied()
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.bits {
            let line: String = row.iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelGrid {
    cells: [[CellKind; BOARD_WIDTH]; BOARD_HEIGHT],
}

impl LevelGrid {
    pub fn filled(kind: CellKind) -> Self {
        Self {
            cells: [[kind; BOARD_WIDTH]; BOARD_HEIGHT],
        }
    }

    /// BLOCK canvas with the centered play area of `size` set to `kind`.
    pub fn with_play_area(size: LevelSize, kind: CellKind) -> Self {
        let mut grid = Self::filled(CellKind::Block);
        for pos in size.positions() {
            grid.set(pos, kind);
        }
        grid
    }

    pub fn get(&self, pos: Pos) -> CellKind {
        self.cells[pos.y][pos.x]
    }

    pub fn set(&mut self, pos: Pos, kind: CellKind) {
        self.cells[pos.y][pos.x] = kind;
    }

    pub fn rows(&self) -> &[[CellKind; BOARD_WIDTH]; BOARD_HEIGHT] {
        &self.cells
    }

    /// Cells in row-major canvas order.
    pub fn iter(&self) -> impl Iterator<Item = (Pos, CellKind)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(y, row)| row.iter().enumerate().map(move |(x, &k)| (Pos::new(x, y), k)))
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.cells.iter().flatten().filter(|&&k| k == kind).count()
    }

    pub fn count_in_area(&self, kind: CellKind, size: LevelSize) -> usize {
        size.positions().filter(|&p| self.get(p) == kind).count()
    }

    /// Number of cells where the two grids differ.
    pub fn hamming(&self, other: &LevelGrid) -> usize {
        self.cells
            .iter()
            .flatten()
            .zip(other.cells.iter().flatten())
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Build from integer codes, rows top to bottom.
    pub fn from_codes(rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != BOARD_HEIGHT {
            return Err(Error::MalformedLevel(format!(
                "expected {BOARD_HEIGHT} rows, got {}",
                rows.len()
            )));
        }
        let mut grid = Self::filled(CellKind::Block);
        for (y, row) in rows.iter().enumerate() {
            if row.len() != BOARD_WIDTH {
                return Err(Error::MalformedLevel(format!(
                    "row {y} has {} cells, expected {BOARD_WIDTH}",
                    row.len()
                )));
            }
            for (x, &code) in row.iter().enumerate() {
                let kind = CellKind::from_code(code).ok_or_else(|| {
                    Error::MalformedLevel(format!("invalid cell code {code} at ({x}, {y})"))
                })?;
                grid.cells[y][x] = kind;
            }
        }
        Ok(grid)
    }

    pub fn to_codes(&self) -> Vec<Vec<u8>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|k| k.code()).collect())
            .collect()
    }

    /// 11 lines of 9 characters, top row first.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(BOARD_HEIGHT * (BOARD_WIDTH + 1));
        for row in &self.cells {
            out.extend(row.iter().map(|k| k.to_char()));
            out.push('\n');
        }
        out
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.len() != BOARD_HEIGHT {
            return Err(Error::MalformedLevel(format!(
                "expected {BOARD_HEIGHT} lines, got {}",
                lines.len()
            )));
        }
        let mut grid = Self::filled(CellKind::Block);
        for (y, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != BOARD_WIDTH {
                return Err(Error::MalformedLevel(format!(
                    "line {y} has {} characters, expected {BOARD_WIDTH}",
                    chars.len()
                )));
            }
            for (x, &c) in chars.iter().enumerate() {
                grid.cells[y][x] = CellKind::from_char(c).ok_or_else(|| {
                    Error::MalformedLevel(format!("invalid character {c:?} at ({x}, {y})"))
                })?;
            }
        }
        Ok(grid)
    }

    /// Check the layout invariants and return the measured size.
    pub fn validate(&self) -> Result<LevelSize> {
        let size = measure_size(self)?;
        if !size.is_admissible() {
            return Err(Error::InvalidSize {
                width: size.width,
                height: size.height,
            });
        }
        if let Some((pos, _)) = self
            .iter()
            .find(|&(p, k)| !size.contains(p) && k != CellKind::Block)
        {
            return Err(Error::MalformedLevel(format!(
                "cell {pos} outside the {size} play area is not BLOCK"
            )));
        }
        Ok(size)
    }

    /// Copy with every cell outside the play area set to BLOCK.
    pub fn with_outside_blocked(&self, size: LevelSize) -> Self {
        let mut out = self.clone();
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let p = Pos::new(x, y);
                if !size.contains(p) {
                    out.set(p, CellKind::Block);
                }
            }
        }
        out
    }

    /// Copy with masked-out cells replaced by `fill`.
    pub fn masked(&self, mask: &BinaryMask, fill: CellKind) -> Self {
        let mut out = self.clone();
        for (p, _) in self.iter() {
            if !mask.get(p) {
                out.set(p, fill);
            }
        }
        out
    }
}

impl fmt::Debug for LevelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f)?;
        f.write_str(&self.to_ascii())
    }
}

impl fmt::Display for LevelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_ascii())
    }
}

fn longest_run(cells: impl Iterator<Item = CellKind>) -> usize {
    let mut best = 0;
    let mut run = 0;
    for kind in cells {
        if kind == CellKind::Playfield {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Width is the longest consecutive PLAYFIELD run over all rows, height the
/// longest over all columns.
///
/// The result is not range-checked; malformed levels (e.g. generated ones)
/// may measure below the admissible minimum.
pub fn measure_size(level: &LevelGrid) -> Result<LevelSize> {
    let width = (0..BOARD_HEIGHT)
        .map(|y| longest_run((0..BOARD_WIDTH).map(|x| level.cells[y][x])))
        .max()
        .unwrap_or(0);
    let height = (0..BOARD_WIDTH)
        .map(|x| longest_run((0..BOARD_HEIGHT).map(|y| level.cells[y][x])))
        .max()
        .unwrap_or(0);
    if width == 0 {
        return Err(Error::EmptyLevel);
    }
    Ok(LevelSize { width, height })
}

fn mirrored_in(level: &LevelGrid, size: LevelSize, columns: bool) -> bool {
    let o = size.origin();
    for j in 0..size.height {
        for i in 0..size.width {
            let (mi, mj) = if columns {
                (size.width - 1 - i, j)
            } else {
                (i, size.height - 1 - j)
            };
            if level.get(Pos::new(o.x + i, o.y + j)) != level.get(Pos::new(o.x + mi, o.y + mj)) {
                return false;
            }
        }
    }
    true
}

/// Classify the play area's mirror symmetry, preferring QUADRANT over
/// VERTICAL over HORIZONTAL.
pub fn detect_symmetry(level: &LevelGrid) -> SymmetryKind {
    let Ok(size) = measure_size(level) else {
        return SymmetryKind::Unknown;
    };
    let lr = mirrored_in(level, size, true);
    let tb = mirrored_in(level, size, false);
    match (lr, tb) {
        (true, true) => SymmetryKind::Quadrant,
        (true, false) => SymmetryKind::Vertical,
        (false, true) => SymmetryKind::Horizontal,
        (false, false) => SymmetryKind::Unknown,
    }
}

/// Whether the play area of `size` is invariant under the mirrors of
/// `symmetry`. Always true for UNKNOWN.
pub fn symmetric_within(level: &LevelGrid, size: LevelSize, symmetry: SymmetryKind) -> bool {
    (!symmetry.mirrors_columns() || mirrored_in(level, size, true))
        && (!symmetry.mirrors_rows() || mirrored_in(level, size, false))
}

/// Kept columns/rows are the first `ceil(n/2)` of the play area.
fn kept(n: usize) -> usize {
    n.div_ceil(2)
}

/// Mask selecting the non-redundant part of the play area. Cells outside
/// the play area stay 1.
pub fn build_symmetry_mask(size: LevelSize, symmetry: SymmetryKind) -> BinaryMask {
    let mut mask = BinaryMask::ones();
    let o = size.origin();
    for j in 0..size.height {
        for i in 0..size.width {
            let drop = (symmetry.mirrors_columns() && i >= kept(size.width))
                || (symmetry.mirrors_rows() && j >= kept(size.height));
            if drop {
                mask.set(Pos::new(o.x + i, o.y + j), false);
            }
        }
    }
    mask
}

/// 1 on the centered play area, 0 elsewhere.
pub fn build_size_mask(size: LevelSize) -> BinaryMask {
    let mut mask = BinaryMask::zeros();
    for p in size.positions() {
        mask.set(p, true);
    }
    mask
}

/// Mirror the kept part of the play area onto the redundant part and force
/// everything outside the play area to BLOCK.
pub fn complete_symmetry(partial: &LevelGrid, size: LevelSize, symmetry: SymmetryKind) -> LevelGrid {
    let mut out = partial.with_outside_blocked(size);
    let o = size.origin();
    if symmetry.mirrors_columns() {
        for j in 0..size.height {
            for i in kept(size.width)..size.width {
                let src = out.get(Pos::new(o.x + size.width - 1 - i, o.y + j));
                out.set(Pos::new(o.x + i, o.y + j), src);
            }
        }
    }
    if symmetry.mirrors_rows() {
        for j in kept(size.height)..size.height {
            for i in 0..size.width {
                let src = out.get(Pos::new(o.x + i, o.y + size.height - 1 - j));
                out.set(Pos::new(o.x + i, o.y + j), src);
            }
        }
    }
    out
}

/// Channel `k` is 1 where the cell code equals `k`. Shape `3×11×9`
/// (channel, row, column).
pub fn one_hot_encode<T: Scalar>(level: &LevelGrid) -> Tensor<T> {
    let mut t = Tensor::zeros(&[CELL_CLASSES, BOARD_HEIGHT, BOARD_WIDTH]);
    let data = t.data_mut();
    for (p, kind) in level.iter() {
        data[kind.code() as usize * CELL_COUNT + p.y * BOARD_WIDTH + p.x] = T::one();
    }
    t
}

/// Per-cell argmax over the class axis of a `3×11×9` tensor. Ties resolve to
/// the lowest class code.
pub fn argmax_decode<T: Scalar>(scores: &Tensor<T>) -> Result<LevelGrid> {
    scores.expect_shape(&[CELL_CLASSES, BOARD_HEIGHT, BOARD_WIDTH], "argmax_decode")?;
    let data = scores.data();
    let mut grid = LevelGrid::filled(CellKind::Block);
    for y in 0..BOARD_HEIGHT {
        for x in 0..BOARD_WIDTH {
            let cell = y * BOARD_WIDTH + x;
            let mut best = CellKind::Gap;
            let mut best_score = data[cell];
            for kind in [CellKind::Block, CellKind::Playfield] {
                let s = data[kind.code() as usize * CELL_COUNT + cell];
                if s > best_score {
                    best = kind;
                    best_score = s;
                }
            }
            grid.set(Pos::new(x, y), best);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn size(w: usize, h: usize) -> LevelSize {
        LevelSize::new(w, h).unwrap()
    }

    fn random_grid(rng: &mut impl Rng) -> LevelGrid {
        let mut g = LevelGrid::filled(CellKind::Block);
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                g.set(Pos::new(x, y), CellKind::ALL[rng.random_range(0..3)]);
            }
        }
        g
    }

    /// Random play-area content for `size`, BLOCK outside.
    fn random_level(size: LevelSize, rng: &mut impl Rng) -> LevelGrid {
        let mut g = LevelGrid::filled(CellKind::Block);
        for p in size.positions() {
            g.set(p, CellKind::ALL[rng.random_range(0..3)]);
        }
        g
    }

    // Independent run-length scanner: for every start cell, extend while
    // PLAYFIELD.
    fn brute_force_size(level: &LevelGrid) -> (usize, usize) {
        let mut w = 0;
        let mut h = 0;
        for y in 0..BOARD_HEIGHT {
            for x in 0..BOARD_WIDTH {
                let mut n = 0;
                while x + n < BOARD_WIDTH && level.get(Pos::new(x + n, y)) == CellKind::Playfield {
                    n += 1;
                }
                w = w.max(n);
                let mut m = 0;
                while y + m < BOARD_HEIGHT && level.get(Pos::new(x, y + m)) == CellKind::Playfield {
                    m += 1;
                }
                h = h.max(m);
            }
        }
        (w, h)
    }

    fn mirror_lr(level: &LevelGrid, s: LevelSize) -> bool {
        s.positions().all(|p| {
            let o = s.origin();
            let q = Pos::new(o.x + (s.width - 1 - (p.x - o.x)), p.y);
            level.get(p) == level.get(q)
        })
    }

    fn mirror_tb(level: &LevelGrid, s: LevelSize) -> bool {
        s.positions().all(|p| {
            let o = s.origin();
            let q = Pos::new(p.x, o.y + (s.height - 1 - (p.y - o.y)));
            level.get(p) == level.get(q)
        })
    }

    #[test]
    fn full_board_measures_max_size() {
        let g = LevelGrid::filled(CellKind::Playfield);
        assert_eq!(measure_size(&g).unwrap(), size(9, 11));
    }

    #[test]
    fn measure_uses_longest_runs() {
        let mut g = LevelGrid::filled(CellKind::Block);
        for x in 1..6 {
            g.set(Pos::new(x, 2), CellKind::Playfield);
        }
        for y in 3..9 {
            g.set(Pos::new(7, y), CellKind::Playfield);
        }
        let s = measure_size(&g).unwrap();
        assert_eq!((s.width, s.height), (5, 6));
    }

    #[test]
    fn measure_4x4_with_interior_block() {
        let s = size(4, 4);
        let mut g = LevelGrid::with_play_area(s, CellKind::Playfield);
        let o = s.origin();
        // corner-adjacent interior cell of the 4x4 area
        g.set(Pos::new(o.x + 1, o.y + 1), CellKind::Block);
        let m = measure_size(&g).unwrap();
        assert_eq!((m.width, m.height), brute_force_size(&g));
        assert_eq!(m, s);
    }

    #[test]
    fn measure_agrees_with_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_grid(&mut rng);
            match measure_size(&g) {
                Ok(s) => assert_eq!((s.width, s.height), brute_force_size(&g)),
                Err(Error::EmptyLevel) => assert_eq!(g.count(CellKind::Playfield), 0),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn empty_level_is_an_error() {
        let g = LevelGrid::filled(CellKind::Block);
        assert!(matches!(measure_size(&g), Err(Error::EmptyLevel)));
        assert_eq!(detect_symmetry(&g), SymmetryKind::Unknown);
    }

    #[test]
    fn detect_symmetry_cases() {
        let s = size(7, 9);
        let o = s.origin();
        let mut g = LevelGrid::with_play_area(s, CellKind::Playfield);
        assert_eq!(detect_symmetry(&g), SymmetryKind::Quadrant);

        // symmetric left-right only
        g.set(Pos::new(o.x, o.y + 1), CellKind::Block);
        g.set(Pos::new(o.x + 6, o.y + 1), CellKind::Block);
        assert_eq!(detect_symmetry(&g), SymmetryKind::Vertical);

        let mut h = LevelGrid::with_play_area(s, CellKind::Playfield);
        h.set(Pos::new(o.x + 1, o.y + 1), CellKind::Gap);
        h.set(Pos::new(o.x + 1, o.y + 7), CellKind::Gap);
        assert_eq!(detect_symmetry(&h), SymmetryKind::Horizontal);

        // flip one cell of a quadrant-symmetric level
        let mut u = LevelGrid::with_play_area(s, CellKind::Playfield);
        u.set(Pos::new(o.x + 2, o.y + 3), CellKind::Block);
        assert!(!mirror_lr(&u, s) && !mirror_tb(&u, s));
        assert_eq!(detect_symmetry(&u), SymmetryKind::Unknown);
    }

    #[test]
    fn detect_symmetry_agrees_with_mirror_predicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in LevelSize::all() {
            for sym in SymmetryKind::ALL {
                let g = complete_symmetry(&random_level(s, &mut rng), s, sym);
                // Keep the measured size equal to s so the predicates apply.
                let mut g = g;
                for p in s.positions().filter(|p| p.y == s.origin().y || p.x == s.origin().x) {
                    g.set(p, CellKind::Playfield);
                }
                let g = complete_symmetry(&g, s, sym);
                if measure_size(&g).unwrap() != s {
                    continue;
                }
                let expected = match (mirror_lr(&g, s), mirror_tb(&g, s)) {
                    (true, true) => SymmetryKind::Quadrant,
                    (true, false) => SymmetryKind::Vertical,
                    (false, true) => SymmetryKind::Horizontal,
                    (false, false) => SymmetryKind::Unknown,
                };
                assert_eq!(detect_symmetry(&g), expected);
            }
        }
    }

    #[test]
    fn vertical_mask_width_5() {
        let s = size(5, 6);
        let m = build_symmetry_mask(s, SymmetryKind::Vertical);
        let o = s.origin();
        for j in 0..6 {
            for i in 0..5 {
                assert_eq!(m.get(Pos::new(o.x + i, o.y + j)), i < 3, "col {i}");
            }
        }
        assert_eq!(m.count_ones(), CELL_COUNT - 2 * 6);
    }

    #[test]
    fn unknown_mask_is_all_ones() {
        for s in LevelSize::all() {
            assert_eq!(build_symmetry_mask(s, SymmetryKind::Unknown), BinaryMask::ones());
        }
    }

    #[test]
    fn quadrant_mask_4x4_keeps_top_left_2x2() {
        let s = size(4, 4);
        let m = build_symmetry_mask(s, SymmetryKind::Quadrant);
        let o = s.origin();
        let kept: Vec<(usize, usize)> = s
            .positions()
            .filter(|&p| m.get(p))
            .map(|p| (p.x - o.x, p.y - o.y))
            .collect();
        assert_eq!(kept, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn every_zero_bit_has_a_kept_mirror() {
        for s in LevelSize::all() {
            for sym in [SymmetryKind::Vertical, SymmetryKind::Horizontal, SymmetryKind::Quadrant] {
                let m = build_symmetry_mask(s, sym);
                let o = s.origin();
                for p in s.positions().filter(|&p| !m.get(p)) {
                    let (i, j) = (p.x - o.x, p.y - o.y);
                    let mi = if sym.mirrors_columns() { s.width - 1 - i } else { i };
                    let mj = if sym.mirrors_rows() { s.height - 1 - j } else { j };
                    // the fully mirrored cell is always in the kept quadrant
                    let mut q = Pos::new(o.x + i, o.y + j);
                    if sym.mirrors_columns() && i >= s.width.div_ceil(2) {
                        q.x = o.x + mi;
                    }
                    if sym.mirrors_rows() && j >= s.height.div_ceil(2) {
                        q.y = o.y + mj;
                    }
                    assert!(m.get(q), "{s} {sym}: {p} mirrors to zero cell {q}");
                }
            }
        }
    }

    #[test]
    fn size_masks() {
        assert_eq!(build_size_mask(LevelSize::MAX), BinaryMask::ones());
        let m = build_size_mask(size(4, 4));
        assert_eq!(size(4, 4).origin(), Pos::new(2, 3));
        assert_eq!(m.count_ones(), 16);
        assert!(m.get(Pos::new(2, 3)) && m.get(Pos::new(5, 6)));
        assert!(!m.get(Pos::new(1, 3)) && !m.get(Pos::new(6, 6)));
        let m = build_size_mask(size(5, 6));
        assert_eq!(size(5, 6).origin(), Pos::new(2, 2));
        assert_eq!(m.count_ones(), 30);
        for s in LevelSize::all() {
            assert_eq!(build_size_mask(s).count_ones(), s.area());
        }
    }

    #[test]
    fn forty_eight_sizes() {
        assert_eq!(LevelSize::all().count(), 48);
        assert!(LevelSize::new(10, 5).is_err());
        assert!(LevelSize::new(4, 3).is_err());
    }

    #[test]
    fn unknown_completion_is_identity_inside_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = size(6, 8);
        let g = random_level(s, &mut rng);
        assert_eq!(complete_symmetry(&g, s, SymmetryKind::Unknown), g);
    }

    #[test]
    fn completed_noise_is_vertically_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = size(5, 7);
        for _ in 0..50 {
            let mut g = random_level(s, &mut rng);
            // guarantee the measured size
            for p in s.positions().filter(|p| p.y == s.origin().y || p.x == s.origin().x) {
                g.set(p, CellKind::Playfield);
            }
            let c = complete_symmetry(&g, s, SymmetryKind::Vertical);
            assert!(mirror_lr(&c, s));
            assert!(matches!(
                detect_symmetry(&c),
                SymmetryKind::Vertical | SymmetryKind::Quadrant
            ));
        }
    }

    #[test]
    fn ascii_round_trip() {
        let s = size(5, 6);
        let mut g = LevelGrid::with_play_area(s, CellKind::Playfield);
        g.set(Pos::new(3, 4), CellKind::Gap);
        let text = g.to_ascii();
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().all(|l| l.len() == 9));
        assert_eq!(LevelGrid::from_ascii(&text).unwrap(), g);
        assert!(LevelGrid::from_ascii("ooo\n").is_err());
    }

    #[test]
    fn codes_reject_bad_dimensions() {
        let mut rows = LevelGrid::filled(CellKind::Block).to_codes();
        rows[0].push(1);
        assert!(LevelGrid::from_codes(&rows).is_err());
        let mut rows = LevelGrid::filled(CellKind::Block).to_codes();
        rows[3][3] = 7;
        assert!(LevelGrid::from_codes(&rows).is_err());
    }

    #[test]
    fn one_hot_all_block() {
        let t = one_hot_encode::<f32>(&LevelGrid::filled(CellKind::Block));
        let d = t.data();
        assert!(d[..CELL_COUNT].iter().all(|&v| v == 0.0));
        assert!(d[CELL_COUNT..2 * CELL_COUNT].iter().all(|&v| v == 1.0));
        assert!(d[2 * CELL_COUNT..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_single_playfield() {
        let mut g = LevelGrid::filled(CellKind::Block);
        g.set(Pos::new(0, 0), CellKind::Playfield);
        let t = one_hot_encode::<f32>(&g);
        let ch2 = &t.data()[2 * CELL_COUNT..];
        assert_eq!(ch2.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(ch2[0], 1.0);
    }

    #[test]
    fn one_hot_round_trip_over_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let g = random_grid(&mut rng);
            let t = one_hot_encode::<f64>(&g);
            for c in 0..CELL_COUNT {
                let s: f64 = (0..3).map(|k| t.data()[k * CELL_COUNT + c]).sum();
                assert_eq!(s, 1.0);
            }
            assert_eq!(argmax_decode(&t).unwrap(), g);
        }
    }

    proptest! {
        #[test]
        fn mask_then_complete_round_trips(w in 4usize..=9, h in 4usize..=11, sym_idx in 0usize..4, seed in any::<u64>()) {
            let s = size(w, h);
            let sym = SymmetryKind::ALL[sym_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let symmetric = complete_symmetry(&random_level(s, &mut rng), s, sym);
            let masked = symmetric.masked(&build_symmetry_mask(s, sym), CellKind::Gap);
            prop_assert_eq!(complete_symmetry(&masked, s, sym), symmetric);
        }

        #[test]
        fn completion_blocks_outside_and_mirrors(w in 4usize..=9, h in 4usize..=11, sym_idx in 0usize..4, seed in any::<u64>()) {
            let s = size(w, h);
            let sym = SymmetryKind::ALL[sym_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = complete_symmetry(&random_grid(&mut rng), s, sym);
            prop_assert!(c.iter().all(|(p, k)| s.contains(p) || k == CellKind::Block));
            if sym.mirrors_columns() { prop_assert!(mirror_lr(&c, s)); }
            if sym.mirrors_rows() { prop_assert!(mirror_tb(&c, s)); }
        }
    }
}

//! Procedural level corpora, bot annotation, splits, difficulty
//! normalization, and the JSON dataset file.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bot::{evaluate_level, BotConfig};
use crate::error::{Error, Result};
use crate::grid::{
    build_symmetry_mask, complete_symmetry, detect_symmetry, measure_size, CellKind, LevelGrid, LevelSize, Pos,
    SymmetryKind,
};

/// Reference split sizes; other dataset sizes are scaled proportionally.
pub const SPLIT_SIZES: [usize; 3] = [170, 15, 13];
pub const MAX_ATTEMPTS: usize = 1000;
pub const MIN_PLAYFIELD: usize = 12;

const SYMMETRY_WEIGHTS: [(SymmetryKind, f64); 4] = [
    (SymmetryKind::Vertical, 0.3),
    (SymmetryKind::Horizontal, 0.2),
    (SymmetryKind::Quadrant, 0.2),
    (SymmetryKind::Unknown, 0.3),
];
const BLOCK_DENSITY: (f64, f64) = (0.05, 0.25);
const GAP_DENSITY: (f64, f64) = (0.0, 0.08);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Main,
    Stylized,
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Style::Main),
            "stylized" => Ok(Style::Stylized),
            other => Err(Error::Parse(format!("unknown style {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedLevel {
    pub grid: LevelGrid,
    pub symmetry: SymmetryKind,
    pub size: LevelSize,
    pub median_moves: f64,
    pub std_moves: f64,
    pub split: Split,
}

/// Min-max range of TRAIN medians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBounds {
    pub m_min: f64,
    pub m_max: f64,
}

impl DifficultyBounds {
    pub fn normalize(&self, median_moves: f64) -> Result<f64> {
        normalize_difficulty(median_moves, *self)
    }
}

pub fn normalize_difficulty(median_moves: f64, bounds: DifficultyBounds) -> Result<f64> {
    let span = bounds.m_max - bounds.m_min;
    if span.is_nan() || span <= 0.0 {
        return Err(Error::DegenerateDifficultyRange);
    }
    Ok(((median_moves - bounds.m_min) / span).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub levels: Vec<AnnotatedLevel>,
    pub m_min: f64,
    pub m_max: f64,
    pub style: Style,
    pub generator_seed: u64,
}

impl DatasetManifest {
    pub fn bounds(&self) -> DifficultyBounds {
        DifficultyBounds {
            m_min: self.m_min,
            m_max: self.m_max,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &AnnotatedLevel> + '_ {
        self.levels.iter().filter(move |l| l.split == split)
    }

    pub fn train(&self) -> Vec<&AnnotatedLevel> {
        self.split(Split::Train).collect()
    }

    /// Share of TRAIN levels whose median is within the designer budget.
    pub fn valid_pct(&self, threshold: f64) -> f64 {
        let train = self.train();
        if train.is_empty() {
            return 0.0;
        }
        100.0 * train.iter().filter(|l| l.median_moves <= threshold).count() as f64 / train.len() as f64
    }

    /// Recompute `m_min`/`m_max` from the current TRAIN medians.
    pub fn refresh_bounds(&mut self) {
        let (lo, hi) = self
            .split(Split::Train)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| {
                (lo.min(l.median_moves), hi.max(l.median_moves))
            });
        if lo.is_finite() {
            self.m_min = lo;
            self.m_max = hi;
        }
    }
}

fn sample_symmetry<R: Rng>(rng: &mut R) -> SymmetryKind {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (kind, w) in SYMMETRY_WEIGHTS {
        acc += w;
        if r < acc {
            return kind;
        }
    }
    SymmetryKind::Unknown
}

fn sample_size<R: Rng>(rng: &mut R) -> LevelSize {
    let sizes: Vec<LevelSize> = LevelSize::all().collect();
    sizes[rng.random_range(0..sizes.len())]
}

fn well_formed(level: &LevelGrid, size: LevelSize) -> bool {
    let o = size.origin();
    let playfield = level.count(CellKind::Playfield);
    let columns_ok = (0..size.width)
        .all(|i| (0..size.height).any(|j| level.get(Pos::new(o.x + i, o.y + j)) == CellKind::Playfield));
    playfield >= MIN_PLAYFIELD && columns_ok && measure_size(level).ok() == Some(size)
}

/// One main-style level of the given size and intended symmetry.
pub fn generate_main_level<R: Rng>(size: LevelSize, symmetry: SymmetryKind, rng: &mut R) -> Result<LevelGrid> {
    let mask = build_symmetry_mask(size, symmetry);
    for _ in 0..MAX_ATTEMPTS {
        let block = rng.random_range(BLOCK_DENSITY.0..=BLOCK_DENSITY.1);
        let gap = rng.random_range(GAP_DENSITY.0..=GAP_DENSITY.1);
        let mut partial = LevelGrid::with_play_area(size, CellKind::Playfield);
        for p in size.positions() {
            if !mask.get(p) {
                continue;
            }
            let r: f64 = rng.random();
            let kind = if r < block {
                CellKind::Block
            } else if r < block + gap {
                CellKind::Gap
            } else {
                CellKind::Playfield
            };
            partial.set(p, kind);
        }
        let level = complete_symmetry(&partial, size, symmetry);
        if well_formed(&level, size) {
            return Ok(level);
        }
    }
    Err(Error::GeneratorStarved(MAX_ATTEMPTS))
}

/// Rule-based main-style corpus: uniform size, weighted symmetry, scattered
/// BLOCK and (fewer) GAP cells on the kept part, mirrored to full size.
pub fn generate_main_style(count: usize, seed: u64) -> Result<Vec<LevelGrid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let size = sample_size(&mut rng);
            let symmetry = sample_symmetry(&mut rng);
            generate_main_level(size, symmetry, &mut rng)
        })
        .collect()
}

/// All-PLAYFIELD play area with one 2×2 BLOCK square fully inside it.
pub fn generate_stylized_level<R: Rng>(size: LevelSize, rng: &mut R) -> LevelGrid {
    let mut level = LevelGrid::with_play_area(size, CellKind::Playfield);
    let o = size.origin();
    let x = o.x + rng.random_range(0..size.width - 1);
    let y = o.y + rng.random_range(0..size.height - 1);
    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        level.set(Pos::new(x + dx, y + dy), CellKind::Block);
    }
    level
}

pub fn generate_stylized(count: usize, seed: u64) -> Vec<LevelGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let size = sample_size(&mut rng);
            generate_stylized_level(size, &mut rng)
        })
        .collect()
}

/// Split sizes for `count` levels, scaled from [`SPLIT_SIZES`]; TEST takes
/// the remainder.
pub fn split_counts(count: usize) -> [usize; 3] {
    let total: usize = SPLIT_SIZES.iter().sum();
    let train = ((count * SPLIT_SIZES[0]) as f64 / total as f64).round() as usize;
    let val = ((count * SPLIT_SIZES[1]) as f64 / total as f64).round() as usize;
    let train = train.min(count);
    let val = val.min(count - train);
    [train, val, count - train - val]
}

/// Deterministic shuffle-based split assignment, indexed like the input.
pub fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [train, val, _] = split_counts(count);
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Bot-annotate every level and assemble a manifest.
pub fn annotate(levels: &[LevelGrid], style: Style, generator_seed: u64, config: &BotConfig) -> Result<DatasetManifest> {
    if levels.is_empty() {
        return Err(Error::EmptySplit("input"));
    }
    let sizes = levels.iter().map(|l| l.validate()).collect::<Result<Vec<_>>>()?;
    let stats: Vec<_> = levels.par_iter().map(|l| evaluate_level(l, config)).collect();
    let splits = assign_splits(levels.len(), generator_seed);
    let mut manifest = DatasetManifest {
        levels: levels
            .iter()
            .zip(sizes)
            .zip(stats)
            .zip(splits)
            .map(|(((grid, size), s), split)| AnnotatedLevel {
                grid: grid.clone(),
                symmetry: detect_symmetry(grid),
                size,
                median_moves: s.median_moves,
                std_moves: s.std_moves,
                split,
            })
            .collect(),
        m_min: 0.0,
        m_max: 0.0,
        style,
        generator_seed,
    };
    manifest.refresh_bounds();
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct LevelRecord {
    grid: Vec<Vec<u8>>,
    symmetry: SymmetryKind,
    width: usize,
    height: usize,
    median_moves: f64,
    std_moves: f64,
    split: Split,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    style: Style,
    generator_seed: u64,
    m_min: f64,
    m_max: f64,
    levels: &'a [LevelRecord],
}

#[derive(Deserialize)]
struct ManifestHeader {
    style: Style,
    generator_seed: u64,
    m_min: f64,
    m_max: f64,
    levels: Vec<Value>,
}

impl From<&AnnotatedLevel> for LevelRecord {
    fn from(l: &AnnotatedLevel) -> Self {
        Self {
            grid: l.grid.to_codes(),
            symmetry: l.symmetry,
            width: l.size.width,
            height: l.size.height,
            median_moves: l.median_moves,
            std_moves: l.std_moves,
            split: l.split,
        }
    }
}

/// JSON encoding of a single level record.
pub fn level_to_json(level: &AnnotatedLevel) -> Value {
    serde_json::to_value(LevelRecord::from(level)).expect("level record serializes")
}

fn parse_record(value: Value) -> Result<AnnotatedLevel> {
    let rec: LevelRecord = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    let grid = LevelGrid::from_codes(&rec.grid)?;
    let size = grid.validate()?;
    if (size.width, size.height) != (rec.width, rec.height) {
        return Err(Error::MalformedLevel(format!(
            "declared size {}x{} but grid measures {size}",
            rec.width, rec.height
        )));
    }
    let detected = detect_symmetry(&grid);
    if detected != rec.symmetry {
        return Err(Error::MalformedLevel(format!(
            "declared symmetry {} but grid is {detected}",
            rec.symmetry
        )));
    }
    Ok(AnnotatedLevel {
        grid,
        symmetry: rec.symmetry,
        size,
        median_moves: rec.median_moves,
        std_moves: rec.std_moves,
        split: rec.split,
    })
}

pub fn manifest_to_json(manifest: &DatasetManifest) -> Result<String> {
    let records: Vec<LevelRecord> = manifest.levels.iter().map(LevelRecord::from).collect();
    Ok(serde_json::to_string_pretty(&ManifestFile {
        style: manifest.style,
        generator_seed: manifest.generator_seed,
        m_min: manifest.m_min,
        m_max: manifest.m_max,
        levels: &records,
    })?)
}

pub fn manifest_from_json(text: &str) -> Result<DatasetManifest> {
    let header: ManifestHeader = serde_json::from_str(text)?;
    let levels = header
        .levels
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            parse_record(v).map_err(|e| Error::Record {
                index,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        levels,
        m_min: header.m_min,
        m_max: header.m_max,
        style: header.style,
        generator_seed: header.generator_seed,
    })
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, manifest_to_json(manifest)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    manifest_from_json(&fs::read_to_string(path)?)
}

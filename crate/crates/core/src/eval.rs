//! Inference sweep over every size and symmetry, the metric suite, checkpoint
//! selection, and the difficulty-vs-no-difficulty ablation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bot::{evaluate_level, BotConfig, PlaythroughStats};
use crate::dataset::{DatasetManifest, Split};
use crate::engine::VALID_MOVES;
use crate::error::{Error, Result};
use crate::grid::{measure_size, symmetric_within, CellKind, ConditionSpec, LevelGrid, LevelSize, SymmetryKind};
use crate::model::{list_checkpoints, train, Checkpoint, ModelConfig, Variant};

/// Symmetries requested by the sweep.
pub const SWEEP_SYMMETRIES: [SymmetryKind; 3] = [SymmetryKind::Vertical, SymmetryKind::Horizontal, SymmetryKind::Quadrant];
/// Minimum TRAIN levels of one size for a tile-distribution bucket.
pub const MIN_BUCKET_TRAIN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub seed: u64,
    /// Upper end of the sampled target difficulty.
    pub max_target: f64,
}

impl SweepSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            max_target: VALID_MOVES as f64,
        }
    }

    /// Every admissible size crossed with every sweep symmetry.
    pub fn conditions() -> Vec<(LevelSize, SymmetryKind)> {
        LevelSize::all()
            .flat_map(|size| SWEEP_SYMMETRIES.iter().map(move |&s| (size, s)))
            .collect()
    }

    /// `[m_min, max_target]`, collapsed to `max_target` if the dataset's
    /// easiest level is already above it.
    pub fn target_range(&self, m_min: f64) -> (f64, f64) {
        (m_min.min(self.max_target), self.max_target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub spec: ConditionSpec,
    pub level: LevelGrid,
}

/// One generated level per (size, symmetry); Avalon targets are drawn
/// uniformly from the sweep range.
pub fn inference_sweep(checkpoint: &Checkpoint, spec: &SweepSpec) -> Result<Vec<SweepResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.target_range(checkpoint.bounds.m_min);
    SweepSpec::conditions()
        .into_iter()
        .map(|(size, symmetry)| {
            let target_moves = checkpoint
                .variant()
                .has_difficulty()
                .then(|| if hi > lo { rng.random_range(lo..=hi) } else { hi });
            let cond = ConditionSpec {
                size,
                symmetry,
                target_moves,
            };
            let level = checkpoint.generate(&cond, &mut rng)?;
            Ok(SweepResult { spec: cond, level })
        })
        .collect()
}

fn pct(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

pub fn size_accuracy(results: &[SweepResult]) -> f64 {
    let hits = results
        .iter()
        .filter(|r| measure_size(&r.level).ok() == Some(r.spec.size))
        .count();
    pct(hits, results.len())
}

/// Share of levels mirror-invariant over the requested play area.
pub fn symmetry_accuracy(results: &[SweepResult]) -> f64 {
    let hits = results
        .iter()
        .filter(|r| symmetric_within(&r.level, r.spec.size, r.spec.symmetry))
        .count();
    pct(hits, results.len())
}

/// Share of unordered pairs that differ in at least one cell.
pub fn diversity_accuracy(levels: &[&LevelGrid]) -> f64 {
    let n = levels.len();
    let mut distinct = 0;
    for i in 0..n {
        for j in i + 1..n {
            distinct += usize::from(levels[i] != levels[j]);
        }
    }
    pct(distinct, n * n.saturating_sub(1) / 2)
}

pub fn sweep_diversity(results: &[SweepResult]) -> f64 {
    diversity_accuracy(&results.iter().map(|r| &r.level).collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyOutcome {
    pub accuracy: f64,
    pub distance_mean: f64,
    pub distance_std: f64,
}

/// `target` is accurate when within one validated standard deviation of the
/// validated median (inclusive). Distances use the population std.
pub fn difficulty_accuracy(pairs: &[(f64, &PlaythroughStats)]) -> DifficultyOutcome {
    let n = pairs.len();
    let hits = pairs
        .iter()
        .filter(|(t, s)| (t - s.median_moves).abs() <= s.std_moves)
        .count();
    let dist: Vec<f64> = pairs.iter().map(|(t, s)| (t - s.median_moves).abs()).collect();
    let mean = dist.iter().sum::<f64>() / n.max(1) as f64;
    let var = dist.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    DifficultyOutcome {
        accuracy: pct(hits, n),
        distance_mean: mean,
        distance_std: var.sqrt(),
    }
}

/// Share of levels identical (all 99 cells) to some TRAIN level.
pub fn plagiarism_score(levels: &[&LevelGrid], manifest: &DatasetManifest) -> f64 {
    let train: HashSet<&LevelGrid> = manifest.split(Split::Train).map(|l| &l.grid).collect();
    pct(levels.iter().filter(|l| train.contains(*l)).count(), levels.len())
}

/// Share of medians at or under `threshold`.
pub fn valid_level_pct(medians: &[f64], threshold: f64) -> f64 {
    pct(medians.iter().filter(|&&m| m <= threshold).count(), medians.len())
}

/// Linear-interpolation quantile of sorted data (`h = (n-1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite counts"));
    v
}

/// Whether the median of `inference` falls in `[Q1, Q3]` of `train`.
pub fn bucket_accurate(train: &[f64], inference: &[f64]) -> bool {
    let t = sorted(train.to_vec());
    let m = quantile(&sorted(inference.to_vec()), 0.5);
    quantile(&t, 0.25) <= m && m <= quantile(&t, 0.75)
}

/// Buckets are (cell kind × size) for sizes with at least three TRAIN
/// levels and at least one generated level; counts are taken inside the
/// play area.
pub fn tile_distribution_accuracy(results: &[SweepResult], manifest: &DatasetManifest) -> Result<f64> {
    let mut train_by_size: HashMap<LevelSize, Vec<&LevelGrid>> = HashMap::new();
    for l in manifest.split(Split::Train) {
        train_by_size.entry(l.size).or_default().push(&l.grid);
    }
    let mut gen_by_size: HashMap<LevelSize, Vec<&LevelGrid>> = HashMap::new();
    for r in results {
        gen_by_size.entry(r.spec.size).or_default().push(&r.level);
    }
    let (mut hits, mut total) = (0, 0);
    for size in LevelSize::all() {
        let (Some(train), Some(gen)) = (train_by_size.get(&size), gen_by_size.get(&size)) else {
            continue;
        };
        if train.len() < MIN_BUCKET_TRAIN {
            continue;
        }
        for kind in CellKind::ALL {
            let count = |ls: &[&LevelGrid]| -> Vec<f64> { ls.iter().map(|l| l.count_in_area(kind, size) as f64).collect() };
            total += 1;
            hits += usize::from(bucket_accurate(&count(train), &count(gen)));
        }
    }
    if total == 0 {
        return Err(Error::InsufficientCoverage);
    }
    Ok(pct(hits, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDetail {
    pub width: usize,
    pub height: usize,
    pub symmetry: SymmetryKind,
    pub target_moves: Option<f64>,
    pub measured_width: Option<usize>,
    pub measured_height: Option<usize>,
    pub median_moves: f64,
    pub std_moves: f64,
    pub success_rate: f64,
    pub valid: bool,
    pub plagiarized: bool,
    pub grid: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub checkpoint_epoch: usize,
    pub size_accuracy: f64,
    pub symmetry_accuracy: f64,
    pub diversity_accuracy: f64,
    pub difficulty_accuracy: Option<f64>,
    pub difficulty_distance_mean: Option<f64>,
    pub difficulty_distance_std: Option<f64>,
    pub plagiarism_score: f64,
    pub valid_level_pct: f64,
    pub tile_distribution_accuracy: f64,
    pub dataset_valid_pct: f64,
    pub levels: Vec<LevelDetail>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "width,height,symmetry,target_moves,measured_width,measured_height,median_moves,std_moves,success_rate,valid,plagiarized\n",
        );
        let opt = |v: Option<String>| v.unwrap_or_default();
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                l.width,
                l.height,
                l.symmetry,
                opt(l.target_moves.map(|v| v.to_string())),
                opt(l.measured_width.map(|v| v.to_string())),
                opt(l.measured_height.map(|v| v.to_string())),
                l.median_moves,
                l.std_moves,
                l.success_rate,
                l.valid,
                l.plagiarized
            );
        }
        out
    }

    /// Headline table without per-level detail.
    pub fn summary(&self) -> String {
        let na = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.2}"));
        format!(
            "{:<8} epoch {:>6} | size {:6.2} | symmetry {:6.2} | diversity {:6.2} | difficulty {} (dist {} ± {}) | plagiarism {:5.2} | valid {:6.2} | tiles {:6.2} | dataset valid {:6.2}",
            self.variant.as_str(),
            self.checkpoint_epoch,
            self.size_accuracy,
            self.symmetry_accuracy,
            self.diversity_accuracy,
            na(self.difficulty_accuracy),
            na(self.difficulty_distance_mean),
            na(self.difficulty_distance_std),
            self.plagiarism_score,
            self.valid_level_pct,
            self.tile_distribution_accuracy,
            self.dataset_valid_pct
        )
    }
}

/// Bot statistics for every sweep level.
pub fn validate_results(results: &[SweepResult], bot: &BotConfig) -> Vec<PlaythroughStats> {
    results.par_iter().map(|r| evaluate_level(&r.level, bot)).collect()
}

/// Full metric suite for one checkpoint.
pub fn evaluate(checkpoint: &Checkpoint, manifest: &DatasetManifest, sweep: &SweepSpec, bot: &BotConfig) -> Result<MetricsReport> {
    let results = inference_sweep(checkpoint, sweep)?;
    let stats = validate_results(&results, bot);
    report_from(checkpoint, manifest, &results, &stats)
}

pub fn report_from(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    results: &[SweepResult],
    stats: &[PlaythroughStats],
) -> Result<MetricsReport> {
    let levels: Vec<&LevelGrid> = results.iter().map(|r| &r.level).collect();
    let medians: Vec<f64> = stats.iter().map(|s| s.median_moves).collect();
    let difficulty = checkpoint.variant().has_difficulty().then(|| {
        let pairs: Vec<(f64, &PlaythroughStats)> = results
            .iter()
            .zip(stats)
            .map(|(r, s)| (r.spec.target_moves.expect("avalon sweep has targets"), s))
            .collect();
        difficulty_accuracy(&pairs)
    });
    let train: HashSet<&LevelGrid> = manifest.split(Split::Train).map(|l| &l.grid).collect();
    let threshold = VALID_MOVES as f64;
    Ok(MetricsReport {
        variant: checkpoint.variant(),
        checkpoint_epoch: checkpoint.epoch,
        size_accuracy: size_accuracy(results),
        symmetry_accuracy: symmetry_accuracy(results),
        diversity_accuracy: diversity_accuracy(&levels),
        difficulty_accuracy: difficulty.map(|d| d.accuracy),
        difficulty_distance_mean: difficulty.map(|d| d.distance_mean),
        difficulty_distance_std: difficulty.map(|d| d.distance_std),
        plagiarism_score: plagiarism_score(&levels, manifest),
        valid_level_pct: valid_level_pct(&medians, threshold),
        tile_distribution_accuracy: tile_distribution_accuracy(results, manifest)?,
        dataset_valid_pct: manifest.valid_pct(threshold),
        levels: results
            .iter()
            .zip(stats)
            .map(|(r, s)| {
                let measured = measure_size(&r.level).ok();
                LevelDetail {
                    width: r.spec.size.width,
                    height: r.spec.size.height,
                    symmetry: r.spec.symmetry,
                    target_moves: r.spec.target_moves,
                    measured_width: measured.map(|m| m.width),
                    measured_height: measured.map(|m| m.height),
                    median_moves: s.median_moves,
                    std_moves: s.std_moves,
                    success_rate: s.success_rate,
                    valid: s.median_moves <= threshold,
                    plagiarized: train.contains(&r.level),
                    grid: r.level.to_codes(),
                }
            })
            .collect(),
    })
}

/// Mean of diversity, size, and tile-distribution accuracy on one sweep.
pub fn selection_score(checkpoint: &Checkpoint, manifest: &DatasetManifest, sweep: &SweepSpec) -> Result<f64> {
    let results = inference_sweep(checkpoint, sweep)?;
    let tiles = tile_distribution_accuracy(&results, manifest)?;
    Ok((sweep_diversity(&results) + size_accuracy(&results) + tiles) / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub path: PathBuf,
    pub epoch: usize,
    pub score: f64,
    /// `(epoch, score)` for every candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Best checkpoint by [`selection_score`]; ties go to the later epoch.
pub fn select_checkpoint(paths: &[PathBuf], manifest: &DatasetManifest, sweep: &SweepSpec) -> Result<Selection> {
    let scored = paths
        .par_iter()
        .map(|p| {
            let ck = Checkpoint::load(p)?;
            Ok((ck.epoch, selection_score(&ck, manifest, sweep)?, p.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    pick_best(scored).ok_or_else(|| Error::Checkpoint("no checkpoints to select from".into()))
}

fn pick_best(mut scored: Vec<(usize, f64, PathBuf)>) -> Option<Selection> {
    scored.sort_by_key(|(e, _, _)| *e);
    let scores = scored.iter().map(|(e, s, _)| (*e, *s)).collect();
    let (epoch, score, path) = scored
        .into_iter()
        .reduce(|best, c| if c.1 >= best.1 { c } else { best })?;
    Some(Selection {
        path,
        epoch,
        score,
        scores,
    })
}

pub fn select_in_dir(dir: &Path, manifest: &DatasetManifest, sweep: &SweepSpec) -> Result<Selection> {
    select_checkpoint(&list_checkpoints(dir)?, manifest, sweep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub avalon: MetricsReport,
    pub vanilla: MetricsReport,
    pub avalon_selection: Selection,
    pub vanilla_selection: Selection,
    pub dataset_valid_pct: f64,
}

impl AblationReport {
    pub fn avalon_at_least_as_valid(&self) -> bool {
        self.avalon.valid_level_pct >= self.vanilla.valid_level_pct
    }
}

/// Select and evaluate already-trained checkpoint directories of both
/// variants.
pub fn ablation_from_dirs(
    manifest: &DatasetManifest,
    avalon_dir: &Path,
    vanilla_dir: &Path,
    sweep: &SweepSpec,
    bot: &BotConfig,
) -> Result<AblationReport> {
    let avalon_selection = select_in_dir(avalon_dir, manifest, sweep)?;
    let vanilla_selection = select_in_dir(vanilla_dir, manifest, sweep)?;
    let avalon = evaluate(&Checkpoint::load(&avalon_selection.path)?, manifest, sweep, bot)?;
    let vanilla = evaluate(&Checkpoint::load(&vanilla_selection.path)?, manifest, sweep, bot)?;
    Ok(AblationReport {
        dataset_valid_pct: manifest.valid_pct(VALID_MOVES as f64),
        avalon,
        vanilla,
        avalon_selection,
        vanilla_selection,
    })
}

/// Train both variants with the same seed and data, then select and
/// evaluate each.
pub fn run_ablation(
    manifest: &DatasetManifest,
    config_avalon: &ModelConfig,
    config_vanilla: &ModelConfig,
    seed: u64,
    out_dir: &Path,
    bot: &BotConfig,
) -> Result<AblationReport> {
    let (a_dir, v_dir) = (out_dir.join("avalon"), out_dir.join("vanilla"));
    let a_cfg = ModelConfig { seed, ..config_avalon.clone() };
    let v_cfg = ModelConfig { seed, ..config_vanilla.clone() };
    train(manifest, &a_cfg, Some(&a_dir))?;
    train(manifest, &v_cfg, Some(&v_dir))?;
    ablation_from_dirs(manifest, &a_dir, &v_dir, &SweepSpec::new(seed), bot)
}

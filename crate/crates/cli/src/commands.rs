//! Pipeline stages. Each stage reads and writes file artifacts so any step
//! can be rerun on its own.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use match3gen::bot::{BotConfig, DEFAULT_MOVE_CAP, DEFAULT_RUNS};
use match3gen::dataset::{annotate, generate_main_style, generate_stylized, load_manifest, save_manifest, DatasetManifest, Style};
use match3gen::eval::{ablation_from_dirs, evaluate, select_in_dir, AblationReport, MetricsReport, Selection, SweepSpec};
use match3gen::grid::{BOARD_HEIGHT, BOARD_WIDTH, MIN_HEIGHT, MIN_WIDTH};
use match3gen::model::{continue_training, list_checkpoints, train, Checkpoint, ModelConfig, TrainReport, Variant};
use match3gen::{ConditionSpec, LevelGrid, LevelSize, SymmetryKind};

/// Unannotated layouts as written by `gen-dataset`. Annotated manifests
/// parse as this too, since extra record fields are ignored.
#[derive(Debug, Serialize, Deserialize)]
pub struct LayoutFile {
    pub style: Style,
    pub generator_seed: u64,
    pub levels: Vec<LayoutRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub grid: Vec<Vec<u8>>,
}

/// A generated level in the dataset record shape, minus the bot fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLevel {
    pub grid: Vec<Vec<u8>>,
    pub symmetry: SymmetryKind,
    pub width: usize,
    pub height: usize,
    pub target_moves: Option<f64>,
}

impl GeneratedLevel {
    pub fn new(level: &LevelGrid, spec: &ConditionSpec) -> Self {
        Self {
            grid: level.to_codes(),
            symmetry: spec.symmetry,
            width: spec.size.width,
            height: spec.size.height,
            target_moves: spec.target_moves,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Args, Debug, Clone)]
pub struct GenDatasetArgs {
    #[arg(long, default_value = "main")]
    pub style: Style,
    #[arg(long, default_value_t = 198)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_dataset(args: &GenDatasetArgs) -> Result<usize> {
    let levels = match args.style {
        Style::Main => generate_main_style(args.count, args.seed)?,
        Style::Stylized => generate_stylized(args.count, args.seed),
    };
    let file = LayoutFile {
        style: args.style,
        generator_seed: args.seed,
        levels: levels.iter().map(|l| LayoutRecord { grid: l.to_codes() }).collect(),
    };
    write_json(&args.out, &file)?;
    Ok(levels.len())
}

#[derive(Args, Debug, Clone)]
pub struct BotArgs {
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = DEFAULT_MOVE_CAP)]
    pub move_cap: u32,
    #[arg(long, default_value_t = 0)]
    pub bot_seed: u64,
}

impl BotArgs {
    pub fn config(&self) -> BotConfig {
        BotConfig {
            run_count: self.runs,
            move_cap: self.move_cap,
            base_seed: self.bot_seed,
        }
    }
}

impl Default for BotArgs {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            move_cap: DEFAULT_MOVE_CAP,
            bot_seed: 0,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct AnnotateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub bot: BotArgs,
}

pub fn annotate_cmd(args: &AnnotateArgs) -> Result<DatasetManifest> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let file: LayoutFile = serde_json::from_str(&text).context("parsing layout file")?;
    let grids = file
        .levels
        .iter()
        .enumerate()
        .map(|(i, r)| LevelGrid::from_codes(&r.grid).with_context(|| format!("level {i}")))
        .collect::<Result<Vec<_>>>()?;
    let manifest = annotate(&grids, file.style, file.generator_seed, &args.bot.config())?;
    save_manifest(&manifest, &args.out)?;
    Ok(manifest)
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "avalon")]
    pub variant: Variant,
    #[arg(long, default_value_t = 24000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Defaults to 1e-5 for avalon and 5e-6 for vanilla.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub checkpoint_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the latest checkpoint in `--out` if there is one.
    #[arg(long)]
    pub resume: bool,
}

impl TrainArgs {
    pub fn model_config(&self) -> ModelConfig {
        let base = ModelConfig::for_variant(self.variant);
        ModelConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            checkpoint_interval: self.checkpoint_interval,
            seed: self.seed,
            ..base
        }
    }
}

pub fn train_cmd(args: &TrainArgs) -> Result<TrainReport> {
    let manifest = load_manifest(&args.dataset)?;
    let config = args.model_config();
    config.validate()?;
    let existing = if args.out.exists() { list_checkpoints(&args.out)? } else { vec![] };
    let report = match existing.last() {
        Some(latest) if args.resume => {
            let mut ck = Checkpoint::load(latest)?;
            if ck.variant() != args.variant {
                bail!("checkpoint {} is {}, not {}", latest.display(), ck.variant().as_str(), args.variant.as_str());
            }
            ck.set_total_epochs(args.epochs);
            continue_training(&manifest, ck, Some(&args.out))?
        }
        _ => train(&manifest, &config, Some(&args.out))?,
    };
    Ok(report)
}

#[derive(Args, Debug, Clone)]
pub struct SelectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn select_cmd(args: &SelectArgs) -> Result<Selection> {
    let manifest = load_manifest(&args.dataset)?;
    let selection = select_in_dir(&args.checkpoints, &manifest, &SweepSpec::new(args.seed))?;
    if let Some(out) = &args.out {
        write_json(out, &selection)?;
    }
    Ok(selection)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Ascii,
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value = "vertical")]
    pub symmetry: SymmetryKind,
    #[arg(long)]
    pub moves: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn check_size(width: usize, height: usize) -> Result<LevelSize> {
    if !(MIN_WIDTH..=BOARD_WIDTH).contains(&width) {
        bail!("width must be in [{MIN_WIDTH},{BOARD_WIDTH}]");
    }
    if !(MIN_HEIGHT..=BOARD_HEIGHT).contains(&height) {
        bail!("height must be in [{MIN_HEIGHT},{BOARD_HEIGHT}]");
    }
    Ok(LevelSize::new(width, height)?)
}

/// Levels for one request, drawn from a single seeded stream.
pub fn generate_levels(ck: &Checkpoint, spec: &ConditionSpec, seed: u64, count: usize) -> Result<Vec<LevelGrid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Ok(ck.generate(spec, &mut rng)?)).collect()
}

/// Rendered output of `generate`.
pub fn generate_cmd(args: &GenerateArgs) -> Result<String> {
    let size = check_size(args.width, args.height)?;
    let ck = Checkpoint::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let spec = ConditionSpec {
        size,
        symmetry: args.symmetry,
        target_moves: args.moves,
    };
    let levels = generate_levels(&ck, &spec, args.seed, args.count).map_err(|e| anyhow!("{e:#}"))?;
    let text = match args.format {
        OutputFormat::Json => {
            let records: Vec<GeneratedLevel> = levels.iter().map(|l| GeneratedLevel::new(l, &spec)).collect();
            serde_json::to_string_pretty(&records)? + "\n"
        }
        OutputFormat::Ascii => levels.iter().map(|l| l.to_ascii()).collect::<Vec<_>>().join("\n"),
    };
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    Ok(text)
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub bot: BotArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-level detail as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<MetricsReport> {
    let manifest = load_manifest(&args.dataset)?;
    let ck = Checkpoint::load(&args.model)?;
    let report = evaluate(&ck, &manifest, &SweepSpec::new(args.seed), &args.bot.config())?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if let Some(csv) = &args.csv {
        fs::write(csv, report.to_csv())?;
    }
    Ok(report)
}

#[derive(Args, Debug, Clone)]
pub struct AblationArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub checkpoint_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub bot: BotArgs,
    /// Skip avalon training and select from this directory instead.
    #[arg(long)]
    pub avalon_dir: Option<PathBuf>,
    /// Skip vanilla training and select from this directory instead.
    #[arg(long)]
    pub vanilla_dir: Option<PathBuf>,
}

pub fn ablation_cmd(args: &AblationArgs) -> Result<AblationReport> {
    let trained_dir = |given: &Option<PathBuf>, variant: Variant| -> Result<PathBuf> {
        if let Some(dir) = given {
            return Ok(dir.clone());
        }
        let dir = args.out.join(variant.as_str());
        train_cmd(&TrainArgs {
            dataset: args.dataset.clone(),
            variant,
            epochs: args.epochs,
            batch: 100,
            lr: None,
            checkpoint_interval: args.checkpoint_interval,
            seed: args.seed,
            out: dir.clone(),
            resume: true,
        })
        .with_context(|| format!("training {}", variant.as_str()))?;
        Ok(dir)
    };
    let avalon_dir = trained_dir(&args.avalon_dir, Variant::Avalon)?;
    let vanilla_dir = trained_dir(&args.vanilla_dir, Variant::Vanilla)?;
    let manifest = load_manifest(&args.dataset)?;
    let report = ablation_from_dirs(&manifest, &avalon_dir, &vanilla_dir, &SweepSpec::new(args.seed), &args.bot.config())?;
    write_json(&args.out.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "main")]
    pub style: Style,
    #[arg(long, default_value_t = 198)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    #[arg(long, default_value = "avalon")]
    pub variant: Variant,
    #[arg(long, default_value_t = 24000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub checkpoint_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub bot: BotArgs,
}

/// Artifacts written by [`pipeline_cmd`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub layouts: PathBuf,
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub selection: PathBuf,
    pub report: PathBuf,
}

/// gen-dataset, annotate, train, select, evaluate. Stages whose artifact
/// already exists are skipped; training resumes from its last checkpoint.
pub fn pipeline_cmd(args: &PipelineArgs) -> Result<PipelineOutput> {
    let out = PipelineOutput {
        layouts: args.out.join("layouts.json"),
        dataset: args.out.join("dataset.json"),
        checkpoints: args.out.join("checkpoints"),
        selection: args.out.join("selection.json"),
        report: args.out.join("report.json"),
    };
    fs::create_dir_all(&args.out)?;
    if !out.layouts.exists() {
        gen_dataset(&GenDatasetArgs {
            style: args.style,
            count: args.count,
            seed: args.data_seed,
            out: out.layouts.clone(),
        })
        .context("stage gen-dataset")?;
    }
    if !out.dataset.exists() {
        annotate_cmd(&AnnotateArgs {
            input: out.layouts.clone(),
            out: out.dataset.clone(),
            bot: args.bot.clone(),
        })
        .context("stage annotate")?;
    }
    train_cmd(&TrainArgs {
        dataset: out.dataset.clone(),
        variant: args.variant,
        epochs: args.epochs,
        batch: 100,
        lr: None,
        checkpoint_interval: args.checkpoint_interval,
        seed: args.seed,
        out: out.checkpoints.clone(),
        resume: true,
    })
    .context("stage train")?;
    let selection = select_cmd(&SelectArgs {
        dataset: out.dataset.clone(),
        checkpoints: out.checkpoints.clone(),
        seed: args.seed,
        out: Some(out.selection.clone()),
    })
    .context("stage select")?;
    evaluate_cmd(&EvaluateArgs {
        dataset: out.dataset.clone(),
        model: selection.path,
        seed: args.seed,
        bot: args.bot.clone(),
        out: Some(out.report.clone()),
        csv: Some(args.out.join("report.csv")),
    })
    .context("stage evaluate")?;
    Ok(out)
}
